#include "mirrorseg/grad_check.hpp"

#include <cmath>
#include <sstream>

namespace mseg {

GradCheckReport grad_check(const GradCheckFn& fn, const std::vector<Real>& point,
                           const GradCheckOptions& opts) {
  GradCheckReport rep;
  if (opts.kink_distance) {
    const Real dist = opts.kink_distance(point);
    if (dist < opts.step) {
      rep.rejected = true;
      std::ostringstream os;
      os << "test point rejected: within " << opts.step << " of a non-differentiable point (distance "
         << dist << ")";
      rep.detail = os.str();
      return rep;
    }
  }

  const std::vector<Real> analytic = fn.gradient(point);
  std::vector<Real> x = point;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real keep = x[i];
    const Real h = opts.step * std::max(Real(1), std::abs(keep));
    x[i] = keep + h;
    const Real fp = fn.value(x);
    x[i] = keep - h;
    const Real fm = fn.value(x);
    x[i] = keep;
    const Real numeric = (fp - fm) / (2 * h);
    const Real abs_err = std::abs(analytic[i] - numeric);
    const Real denom = std::max(Real(1), std::abs(analytic[i]) + std::abs(numeric));
    const Real rel_err = abs_err / denom;
    if (rel_err > rep.max_rel_error) {
      rep.max_rel_error = rel_err;
      rep.worst_index = i;
    }
    rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
  }
  rep.pass = rep.max_rel_error < opts.tolerance;
  if (!rep.pass) {
    std::ostringstream os;
    os << "max relative error " << rep.max_rel_error << " at component " << rep.worst_index
       << " exceeds tolerance " << opts.tolerance;
    rep.detail = os.str();
  }
  return rep;
}

}  // namespace mseg
