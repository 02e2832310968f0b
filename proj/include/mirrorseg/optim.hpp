#pragma once

#include <cstdint>

#include "mirrorseg/params.hpp"

namespace mseg {

struct OptimConfig {
  Real base_lr = Real(0.001);
  Real momentum = Real(0.9);
  Real weight_decay = Real(5e-4);
  Real power = Real(0.9);  // poly decay exponent
  int epochs = 300;
  int batch_size = 10;
  bool exempt_bn_decay = false;  // skip weight decay on batch-norm gamma/beta

  void validate() const;
};

// lr = base * (1 - iter/max_iter)^power; monotone non-increasing in iter.
Real poly_lr(Real base, std::int64_t iter, std::int64_t max_iter, Real power);

// Classic SGD with momentum and coupled weight decay:
//   g' = grad + weight_decay * param; v = momentum*v + g'; param -= lr*v.
// Gradients must be populated for every learnable parameter and are cleared
// after the step.
void sgd_step(ParamStore& params, const OptimConfig& cfg, Real lr);

}  // namespace mseg
