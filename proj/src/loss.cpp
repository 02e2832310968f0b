#include "mirrorseg/loss.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "mirrorseg/errors.hpp"
#include "mirrorseg/ops.hpp"

namespace mseg {

namespace {

std::atomic<std::uint64_t> g_lovasz_calls{0};
std::atomic<std::uint64_t> g_bce_calls{0};

void check_loss_inputs(const Tensor& logits, const Tensor& mask) {
  if (!logits.same_shape(mask)) {
    throw ShapeError("loss: logits " + logits.shape_str() + " vs mask " + mask.shape_str());
  }
  if (logits.n() == 0 || logits.size() == 0) {
    throw ShapeError("loss: empty image rejected");
  }
  for (Real v : mask.data()) {
    if (v != Real(0) && v != Real(1)) throw DataError("loss: mask must be strictly binary");
  }
}

}  // namespace

std::vector<Real> lovasz_grad(const std::vector<Real>& gt_sorted) {
  const std::size_t n = gt_sorted.size();
  std::vector<Real> g(n);
  const Real p = std::accumulate(gt_sorted.begin(), gt_sorted.end(), Real(0));
  Real cum_gt = 0, cum_neg = 0, prev_jaccard = 0;
  for (std::size_t k = 0; k < n; ++k) {
    cum_gt += gt_sorted[k];
    cum_neg += 1 - gt_sorted[k];
    const Real intersection = p - cum_gt;
    const Real uni = p + cum_neg;
    const Real jaccard = 1 - intersection / uni;
    g[k] = jaccard - prev_jaccard;
    prev_jaccard = jaccard;
  }
  return g;
}

namespace {

// Shared per-image computation; dx is optional.
Real lovasz_image(const Real* x, const Real* m, std::size_t count, Real* dx) {
  std::vector<Real> errors(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Real sign = 2 * m[i] - 1;
    errors[i] = 1 - sign * x[i];
  }
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
  std::vector<Real> gt_sorted(count);
  for (std::size_t k = 0; k < count; ++k) gt_sorted[k] = m[order[k]];
  const std::vector<Real> g = lovasz_grad(gt_sorted);
  Real loss = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const Real e = errors[order[k]];
    if (e > 0) {
      loss += e * g[k];
      if (dx) {
        const std::size_t i = order[k];
        dx[i] = -(2 * m[i] - 1) * g[k];
      }
    }
  }
  return loss;
}

}  // namespace

Real lovasz_hinge(const Tensor& logits, const Tensor& mask) {
  check_loss_inputs(logits, mask);
  g_lovasz_calls.fetch_add(1, std::memory_order_relaxed);
  const std::size_t per_image = logits.data().size() / logits.n();
  Real total = 0;
  for (int n = 0; n < logits.n(); ++n) {
    total += lovasz_image(logits.raw() + n * per_image, mask.raw() + n * per_image, per_image,
                          nullptr);
  }
  return total / logits.n();
}

LossGrad lovasz_hinge_grad(const Tensor& logits, const Tensor& mask) {
  check_loss_inputs(logits, mask);
  g_lovasz_calls.fetch_add(1, std::memory_order_relaxed);
  const std::size_t per_image = logits.data().size() / logits.n();
  LossGrad out;
  out.grad = Tensor(logits.n(), logits.c(), logits.h(), logits.w());
  Real total = 0;
  for (int n = 0; n < logits.n(); ++n) {
    total += lovasz_image(logits.raw() + n * per_image, mask.raw() + n * per_image, per_image,
                          out.grad.raw() + n * per_image);
  }
  out.value = total / logits.n();
  const Real inv = Real(1) / logits.n();
  for (Real& v : out.grad.data()) v *= inv;
  return out;
}

namespace {

inline Real bce_pixel(Real x, Real m) {
  // max(x,0) - x*m + log(1 + exp(-|x|))
  return std::max(x, Real(0)) - x * m + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

Real bce(const Tensor& logits, const Tensor& mask) {
  check_loss_inputs(logits, mask);
  g_bce_calls.fetch_add(1, std::memory_order_relaxed);
  Real total = 0;
  const auto& x = logits.data();
  const auto& m = mask.data();
  for (std::size_t i = 0; i < x.size(); ++i) total += bce_pixel(x[i], m[i]);
  return total / static_cast<Real>(x.size());
}

LossGrad bce_grad(const Tensor& logits, const Tensor& mask) {
  check_loss_inputs(logits, mask);
  g_bce_calls.fetch_add(1, std::memory_order_relaxed);
  LossGrad out;
  out.grad = Tensor(logits.n(), logits.c(), logits.h(), logits.w());
  Real total = 0;
  const auto& x = logits.data();
  const auto& m = mask.data();
  const Real inv = Real(1) / static_cast<Real>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    total += bce_pixel(x[i], m[i]);
    out.grad.data()[i] = (sigmoid(x[i]) - m[i]) * inv;
  }
  out.value = total * inv;
  return out;
}

namespace {

void check_bundle(const SupervisionBundle& bundle) {
  if (!bundle.maps || !bundle.mask) throw StateError("supervision bundle: missing maps or mask");
  if (bundle.maps->size() != bundle.weights.size()) {
    throw ShapeError("supervision bundle: " + std::to_string(bundle.maps->size()) +
                     " maps vs " + std::to_string(bundle.weights.size()) + " weights");
  }
  for (const Tensor& m : *bundle.maps) {
    if (!m.same_shape(*bundle.mask)) {
      throw ShapeError("supervision bundle: map " + m.shape_str() + " vs mask " +
                       bundle.mask->shape_str());
    }
  }
}

}  // namespace

Real total_loss(const SupervisionBundle& bundle, LossKind kind) {
  check_bundle(bundle);
  Real total = 0;
  for (std::size_t s = 0; s < bundle.maps->size(); ++s) {
    const Tensor& map = (*bundle.maps)[s];
    const Real level = kind == LossKind::kLovasz ? lovasz_hinge(map, *bundle.mask)
                                                 : bce(map, *bundle.mask);
    total += bundle.weights[s] * level;
  }
  return total;
}

TotalLossGrad total_loss_grad(const SupervisionBundle& bundle, LossKind kind) {
  check_bundle(bundle);
  TotalLossGrad out;
  for (std::size_t s = 0; s < bundle.maps->size(); ++s) {
    const Tensor& map = (*bundle.maps)[s];
    LossGrad lg = kind == LossKind::kLovasz ? lovasz_hinge_grad(map, *bundle.mask)
                                            : bce_grad(map, *bundle.mask);
    out.value += bundle.weights[s] * lg.value;
    for (Real& v : lg.grad.data()) v *= bundle.weights[s];
    out.map_grads.push_back(std::move(lg.grad));
  }
  return out;
}

LossCallCounts loss_call_counts() {
  return {g_lovasz_calls.load(), g_bce_calls.load()};
}

void reset_loss_call_counts() {
  g_lovasz_calls.store(0);
  g_bce_calls.store(0);
}

}  // namespace mseg
