#include "mirrorseg/optim.hpp"

#include <cmath>

#include "mirrorseg/errors.hpp"

namespace mseg {

void OptimConfig::validate() const {
  if (base_lr <= 0) throw ConfigError("optim: base_lr must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("optim: momentum must be in [0, 1)");
  if (power <= 0) throw ConfigError("optim: poly power must be positive");
  if (weight_decay < 0) throw ConfigError("optim: weight_decay must be non-negative");
  if (epochs < 1) throw ConfigError("optim: epochs must be positive");
  if (batch_size < 1) throw ConfigError("optim: batch_size must be positive");
}

Real poly_lr(Real base, std::int64_t iter, std::int64_t max_iter, Real power) {
  if (max_iter < 1) throw StateError("poly_lr: max_iter must be positive");
  if (iter < 0 || iter > max_iter) {
    throw StateError("poly_lr: iter " + std::to_string(iter) + " outside [0, " +
                     std::to_string(max_iter) + "]");
  }
  const Real frac = Real(1) - static_cast<Real>(iter) / static_cast<Real>(max_iter);
  return base * std::pow(frac, power);
}

void sgd_step(ParamStore& params, const OptimConfig& cfg, Real lr) {
  for (ParamSlot& s : params.slots()) {
    if (!s.learnable) continue;
    if (s.grad.empty()) throw StateError("sgd: missing gradient for parameter " + s.name);
    std::vector<Real>& value = *s.value;
    if (s.velocity.size() != value.size()) s.velocity.assign(value.size(), Real(0));
    const bool decay = cfg.weight_decay > 0 && !(cfg.exempt_bn_decay && s.bn_scale_bias);
    for (std::size_t i = 0; i < value.size(); ++i) {
      Real g = s.grad[i];
      if (decay) g += cfg.weight_decay * value[i];
      s.velocity[i] = cfg.momentum * s.velocity[i] + g;
      value[i] -= lr * s.velocity[i];
    }
    s.grad.clear();
  }
}

}  // namespace mseg
