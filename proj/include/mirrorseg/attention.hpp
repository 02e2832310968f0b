#pragma once

#include <vector>

#include "mirrorseg/ops.hpp"
#include "mirrorseg/tensor.hpp"

namespace mseg {

// Channel-then-spatial attention: channel gates from avg+max pooled features
// through a shared two-layer MLP (reduction r, relu hidden, no bias), spatial
// gate from a 7x7 convolution over the 2-channel pooled map.
struct AttentionParams {
  Tensor mlp_w1;       // (C/r, C, 1, 1)
  Tensor mlp_w2;       // (C, C/r, 1, 1)
  ConvParams spatial;  // 7x7, 2 -> 1, same padding
  int reduction = 4;

  int channels() const { return mlp_w2.n(); }
};

// Throws when r does not divide the channel count.
AttentionParams make_attention(int channels, int reduction);

struct ChannelAttCache {
  Tensor avg, max;      // (N, C, 1, 1) pooled
  Tensor u_avg, u_max;  // (N, C/r, 1, 1) pre-relu hidden
  Tensor logits;        // (N, C, 1, 1) pre-sigmoid
  Tensor gate;          // sigmoid(logits)
};

struct SpatialAttCache {
  Tensor pooled;  // (N, 2, H, W) concat of channel avg/max
  Tensor pre;     // (N, 1, H, W) conv output
  Tensor gate;    // sigmoid(pre)
};

struct CbamCache {
  ChannelAttCache channel;
  Tensor f1;  // input after the channel gate
  SpatialAttCache spatial;
};

Tensor channel_attention(const Tensor& f, const AttentionParams& p,
                         ChannelAttCache* cache = nullptr);
Tensor spatial_attention(const Tensor& f, const AttentionParams& p,
                         SpatialAttCache* cache = nullptr);
Tensor cbam(const Tensor& f, const AttentionParams& p, CbamCache* cache = nullptr);

struct AttentionGrads {
  Tensor mlp_w1, mlp_w2, spatial_w;
  std::vector<Real> spatial_b;
  Tensor input;
};

// grad_gate is dL/d(gate). Parameter gradients are accumulated into `grads`.
void channel_attention_backward(const Tensor& f, const AttentionParams& p,
                                const ChannelAttCache& cache, const Tensor& grad_gate,
                                AttentionGrads& grads);
void spatial_attention_backward(const Tensor& f, const AttentionParams& p,
                                const SpatialAttCache& cache, const Tensor& grad_gate,
                                AttentionGrads& grads);
AttentionGrads cbam_backward(const Tensor& f, const AttentionParams& p, const CbamCache& cache,
                             const Tensor& grad_out);

}  // namespace mseg
