#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mirrorseg/tensor.hpp"

namespace mseg {

// A scalar-valued function of a flat input vector together with its analytic
// gradient; the harness compares the gradient against central finite
// differences component by component.
struct GradCheckFn {
  std::function<Real(const std::vector<Real>&)> value;
  std::function<std::vector<Real>(const std::vector<Real>&)> gradient;
};

struct GradCheckOptions {
  Real step = Real(1e-5);
  Real tolerance = Real(1e-4);
  // Optional distance from the evaluation point to the nearest
  // non-differentiable point (relu/max/sort ties). Points closer than the
  // step are rejected instead of silently producing a bogus comparison.
  std::function<Real(const std::vector<Real>&)> kink_distance;
};

struct GradCheckReport {
  bool pass = false;
  bool rejected = false;  // non-differentiable point detected
  Real max_rel_error = 0;
  Real max_abs_error = 0;
  std::size_t worst_index = 0;
  std::string detail;
};

GradCheckReport grad_check(const GradCheckFn& fn, const std::vector<Real>& point,
                           const GradCheckOptions& opts = {});

}  // namespace mseg
