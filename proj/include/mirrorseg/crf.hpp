#pragma once

#include "mirrorseg/tensor.hpp"

namespace mseg {

// Dense-CRF mean field with Gaussian edge potentials over two labels
// (mirror / non-mirror), exact O(N^2) message passing. Bandwidths are in
// pixel units (spatial) and 0..255 intensity units (appearance).
struct CrfParams {
  Real w_appearance = 4;
  Real w_smoothness = 3;
  Real theta_alpha = 30;
  Real theta_beta = 13;
  Real theta_gamma = 3;
  int iterations = 10;

  void validate() const;
};

// image: (N, 3, H, W) in [0,1]; prob: (N, 1, H, W) mirror probability.
// Returns the refined mirror marginal after the configured iterations.
// Zero iterations returns the unary softmax (the clamped input) exactly.
Tensor crf_refine(const Tensor& image, const Tensor& prob, const CrfParams& params);

}  // namespace mseg
