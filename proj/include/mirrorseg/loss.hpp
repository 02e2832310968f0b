#pragma once

#include <cstdint>
#include <vector>

#include "mirrorseg/tensor.hpp"

namespace mseg {

// Gradient of the Lovász extension of the Jaccard loss for a ground-truth
// vector already sorted by descending hinge error. Entries are non-negative
// and sum to the final Jaccard value; an all-zero input yields [1, 0, ...].
std::vector<Real> lovasz_grad(const std::vector<Real>& gt_sorted);

struct LossGrad {
  Real value = 0;
  Tensor grad;
};

// Lovász hinge surrogate for 1 - IoU. Per image: signs y = 2*mask - 1,
// errors e = 1 - y*logit sorted descending (stable, ties by pixel index),
// loss = sum relu(e_sorted) * lovasz_grad(mask sorted by e). Batch mean.
Real lovasz_hinge(const Tensor& logits, const Tensor& mask);
LossGrad lovasz_hinge_grad(const Tensor& logits, const Tensor& mask);

// Binary cross entropy on logits, numerically stable form, mean over pixels.
Real bce(const Tensor& logits, const Tensor& mask);
LossGrad bce_grad(const Tensor& logits, const Tensor& mask);

enum class LossKind { kLovasz, kBce };

// Deeply-supervised total: maps are the S upsampled logit maps, all at the
// ground-truth resolution.
struct SupervisionBundle {
  const std::vector<Tensor>* maps = nullptr;
  const Tensor* mask = nullptr;
  std::vector<Real> weights;
};

Real total_loss(const SupervisionBundle& bundle, LossKind kind);

struct TotalLossGrad {
  Real value = 0;
  std::vector<Tensor> map_grads;
};
TotalLossGrad total_loss_grad(const SupervisionBundle& bundle, LossKind kind);

// Invocation counters so ablation runs can assert which loss kernels were
// exercised.
struct LossCallCounts {
  std::uint64_t lovasz = 0;
  std::uint64_t bce = 0;
};
LossCallCounts loss_call_counts();
void reset_loss_call_counts();

}  // namespace mseg
