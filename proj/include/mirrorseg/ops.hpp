#pragma once

#include <cmath>
#include <vector>

#include "mirrorseg/tensor.hpp"

namespace mseg {

// Convolution parameters. Cross-correlation convention (no kernel flip).
// "Same" output for a k x k kernel at stride 1 means padding = dilation*(k-1)/2;
// for the 3x3 kernels used throughout that is padding = dilation.
struct ConvParams {
  Tensor weight;           // (C_out, C_in, kH, kW)
  std::vector<Real> bias;  // length C_out
  int stride = 1;
  int dilation = 1;
  int padding = 0;

  int c_out() const { return weight.n(); }
  int c_in() const { return weight.c(); }
  int kh() const { return weight.h(); }
  int kw() const { return weight.w(); }
};

ConvParams make_conv(int c_out, int c_in, int k, int stride, int dilation, int padding);

// Output spatial size for the standard dilated-conv formula; throws on a
// zero or negative result.
int conv_out_extent(int in, int k, int stride, int dilation, int padding);

Tensor conv2d(const Tensor& input, const ConvParams& p);

struct ConvGrads {
  Tensor input;
  Tensor weight;
  std::vector<Real> bias;
};
ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out);

// Batch normalization over (N, H, W) per channel.
struct BatchNormState {
  std::vector<Real> gamma, beta;
  std::vector<Real> running_mean, running_var;
  Real momentum = Real(0.9);   // running = momentum*running + (1-momentum)*batch
  Real epsilon = Real(1e-5);
};

BatchNormState make_batch_norm(int channels);

struct BnCache {
  std::vector<Real> mean, inv_std;  // per channel, batch statistics
};

// training=true normalizes with batch statistics and updates the running
// averages; training=false uses the running statistics.
Tensor batch_norm(const Tensor& input, BatchNormState& state, bool training,
                  BnCache* cache = nullptr);

struct BnGrads {
  Tensor input;
  std::vector<Real> gamma, beta;
};
// Backward through the training-mode normalization (batch statistics).
BnGrads batch_norm_backward(const Tensor& input, const BatchNormState& state,
                            const BnCache& cache, const Tensor& grad_out);

enum class Activation { kRelu, kSigmoid };

Tensor activate(const Tensor& input, Activation kind);
Tensor activate_backward(const Tensor& input, Activation kind, const Tensor& grad_out);

inline Real sigmoid(Real x) {
  if (x >= 0) {
    const Real e = std::exp(-x);
    return 1 / (1 + e);
  }
  const Real e = std::exp(x);
  return e / (1 + e);
}

enum class PoolKind { kGlobalAvg, kGlobalMax, kChannelAvg, kChannelMax };

// global_* reduce H,W to 1x1 per channel; channel_* reduce C to 1 per site.
Tensor pool(const Tensor& input, PoolKind kind);
// Max pools route the gradient to the first maximum in scan order.
Tensor pool_backward(const Tensor& input, PoolKind kind, const Tensor& grad_out);

// Bilinear interpolation with align-corners disabled.
Tensor upsample_bilinear(const Tensor& input, int out_h, int out_w);
Tensor upsample_bilinear_backward(int in_h, int in_w, const Tensor& grad_out);

// Channel concatenation and its gradient split.
Tensor concat_channels(const std::vector<const Tensor*>& parts);
std::vector<Tensor> split_channels(const Tensor& grad, const std::vector<int>& widths);

// Broadcast multiplies used by attention gates, plus the matching reductions
// for their product-rule backward passes.
Tensor mul_channel_gate(const Tensor& f, const Tensor& gate);  // gate (N, C, 1, 1)
Tensor mul_spatial_gate(const Tensor& f, const Tensor& gate);  // gate (N, 1, H, W)
Tensor sum_over_spatial(const Tensor& t);                      // -> (N, C, 1, 1)
Tensor sum_over_channels(const Tensor& t);                     // -> (N, 1, H, W)

Tensor elementwise_mul(const Tensor& a, const Tensor& b);
void add_into(std::vector<Real>& dst, const std::vector<Real>& src);
void add_into(Tensor& dst, const Tensor& src);

}  // namespace mseg
