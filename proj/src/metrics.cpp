#include "mirrorseg/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "mirrorseg/errors.hpp"

namespace mseg {

namespace {

void check_binary(const Tensor& t, const char* what) {
  for (Real v : t.data()) {
    if (v != Real(0) && v != Real(1)) {
      throw DataError(std::string("metrics: ") + what + " must be strictly binary");
    }
  }
}

}  // namespace

ConfusionCounts confusion(const Tensor& pred_mask, const Tensor& gt_mask) {
  if (!pred_mask.same_shape(gt_mask)) {
    throw ShapeError("confusion: shapes " + pred_mask.shape_str() + " vs " + gt_mask.shape_str());
  }
  check_binary(pred_mask, "prediction");
  check_binary(gt_mask, "ground truth");
  ConfusionCounts c;
  const auto& p = pred_mask.data();
  const auto& g = gt_mask.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i] == 1) {
      if (p[i] == 1) ++c.tp;
      else ++c.fn;
    } else {
      if (p[i] == 1) ++c.fp;
      else ++c.tn;
    }
  }
  return c;
}

std::pair<Real, Real> iou_accuracy(const ConfusionCounts& c) {
  const std::int64_t uni = c.tp + c.fp + c.fn;
  const Real iou = uni == 0 ? Real(1) : static_cast<Real>(c.tp) / static_cast<Real>(uni);
  if (c.total() == 0) throw StateError("iou_accuracy: empty accumulation");
  const Real acc = static_cast<Real>(c.tp + c.tn) / static_cast<Real>(c.total());
  return {iou, acc};
}

Real f_beta(const ConfusionCounts& c, Real beta_sq) {
  if (beta_sq <= 0) throw StateError("f_beta: beta_sq must be positive");
  if (c.tp == 0) return 0;
  const Real precision = static_cast<Real>(c.tp) / static_cast<Real>(c.tp + c.fp);
  const Real recall = static_cast<Real>(c.tp) / static_cast<Real>(c.tp + c.fn);
  return (1 + beta_sq) * precision * recall / (beta_sq * precision + recall);
}

Real mae(const Tensor& pred_prob, const Tensor& gt_mask) {
  if (!pred_prob.same_shape(gt_mask)) {
    throw ShapeError("mae: shapes " + pred_prob.shape_str() + " vs " + gt_mask.shape_str());
  }
  if (pred_prob.size() == 0) throw StateError("mae: empty input");
  Real total = 0;
  const auto& p = pred_prob.data();
  const auto& g = gt_mask.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0 || p[i] > 1) throw DataError("mae: prediction outside [0, 1]");
    total += std::abs(p[i] - g[i]);
  }
  return total / static_cast<Real>(p.size());
}

Real ber(const ConfusionCounts& c) {
  if (c.np() == 0 || c.nn() == 0) {
    throw StateError("ber: undefined when a class is absent (N_p or N_n is zero)");
  }
  const Real tpr = static_cast<Real>(c.tp) / static_cast<Real>(c.np());
  const Real tnr = static_cast<Real>(c.tn) / static_cast<Real>(c.nn());
  return 100 * (1 - (tpr + tnr) / 2);
}

void MetricsAccumulator::add(const Tensor& pred_prob, const Tensor& gt_mask) {
  Tensor pred_mask(pred_prob.n(), pred_prob.c(), pred_prob.h(), pred_prob.w());
  for (std::size_t i = 0; i < pred_prob.data().size(); ++i) {
    pred_mask.data()[i] = pred_prob.data()[i] >= threshold_ ? Real(1) : Real(0);
  }
  const ConfusionCounts c = confusion(pred_mask, gt_mask);
  totals_.add(c);
  f_betas_.push_back(f_beta(c, beta_sq_));
  maes_.push_back(mae(pred_prob, gt_mask));
}

MetricsReport MetricsAccumulator::report() const {
  if (f_betas_.empty()) throw StateError("metrics: no images accumulated");
  MetricsReport r;
  r.counts = totals_;
  auto [iou, acc] = iou_accuracy(totals_);
  r.iou = iou;
  r.accuracy = acc;
  r.ber = ber(totals_);
  Real fb = 0, me = 0;
  for (Real v : f_betas_) fb += v;
  for (Real v : maes_) me += v;
  r.f_beta = fb / static_cast<Real>(f_betas_.size());
  r.mae = me / static_cast<Real>(maes_.size());
  r.per_image_f_beta = f_betas_;
  r.per_image_mae = maes_;
  r.n_images = f_betas_.size();
  return r;
}

std::string MetricsReport::table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "  metric     value\n"
     << "  ---------  -------\n"
     << "  IoU        " << iou << "\n"
     << "  Acc        " << accuracy << "\n"
     << "  F_beta     " << f_beta << "\n"
     << "  MAE        " << mae << "\n"
     << "  BER        " << std::setprecision(2) << ber << "\n"
     << "  images     " << n_images << "\n";
  return os.str();
}

std::string MetricsReport::records() const {
  std::ostringstream os;
  os << std::setprecision(12);
  os << "iou=" << iou << "\n"
     << "acc=" << accuracy << "\n"
     << "f_beta=" << f_beta << "\n"
     << "mae=" << mae << "\n"
     << "ber=" << ber << "\n"
     << "n_images=" << n_images << "\n";
  return os.str();
}

}  // namespace mseg
