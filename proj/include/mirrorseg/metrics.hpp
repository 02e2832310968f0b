#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mirrorseg/tensor.hpp"

namespace mseg {

struct ConfusionCounts {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::int64_t np() const { return tp + fn; }  // mirror pixels
  std::int64_t nn() const { return tn + fp; }  // non-mirror pixels
  std::int64_t total() const { return tp + tn + fp + fn; }
  void add(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
  }
};

// Exact pixel counts; both masks must be strictly binary and equal shape.
ConfusionCounts confusion(const Tensor& pred_mask, const Tensor& gt_mask);

// IoU of the mirror class and pixel accuracy. An empty union (no mirror in
// either mask) makes IoU 1 by convention.
std::pair<Real, Real> iou_accuracy(const ConfusionCounts& counts);

// Weighted harmonic mean of precision and recall; 0 whenever TP = 0.
Real f_beta(const ConfusionCounts& counts, Real beta_sq = Real(0.3));

// Mean absolute error between a probability map in [0,1] and a binary mask.
Real mae(const Tensor& pred_prob, const Tensor& gt_mask);

// Balance error rate: 100 * (1 - (TP/N_p + TN/N_n)/2). Undefined (rejected)
// when either class is absent from the accumulation.
Real ber(const ConfusionCounts& counts);

struct MetricsReport {
  Real iou = 0, accuracy = 0, f_beta = 0, mae = 0, ber = 0;
  ConfusionCounts counts;
  std::vector<Real> per_image_f_beta;
  std::vector<Real> per_image_mae;
  std::size_t n_images = 0;

  std::string table() const;    // human-readable
  std::string records() const;  // key=value lines
};

// IoU, accuracy and BER accumulate confusion counts over the whole set;
// F_beta and MAE average per-image values.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(Real threshold = Real(0.5), Real beta_sq = Real(0.3))
      : threshold_(threshold), beta_sq_(beta_sq) {}

  void add(const Tensor& pred_prob, const Tensor& gt_mask);
  MetricsReport report() const;

 private:
  Real threshold_, beta_sq_;
  ConfusionCounts totals_;
  std::vector<Real> f_betas_, maes_;
};

}  // namespace mseg
