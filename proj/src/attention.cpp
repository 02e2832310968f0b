#include "mirrorseg/attention.hpp"

#include "mirrorseg/errors.hpp"

namespace mseg {

AttentionParams make_attention(int channels, int reduction) {
  if (reduction < 1 || channels % reduction != 0) {
    throw ShapeError("attention: reduction " + std::to_string(reduction) +
                     " must divide channel count " + std::to_string(channels));
  }
  AttentionParams p;
  const int hidden = channels / reduction;
  p.mlp_w1 = Tensor(hidden, channels, 1, 1);
  p.mlp_w2 = Tensor(channels, hidden, 1, 1);
  p.spatial = make_conv(1, 2, 7, 1, 1, 3);
  p.reduction = reduction;
  return p;
}

namespace {

// y[n] = W x[n] for (N, C_in, 1, 1) vectors; W is (C_out, C_in).
Tensor dense(const Tensor& x, const Tensor& w) {
  const int c_in = w.c(), c_out = w.n();
  Tensor y(x.n(), c_out, 1, 1);
  for (int n = 0; n < x.n(); ++n) {
    const Real* xv = x.raw() + x.offset(n, 0, 0, 0);
    Real* yv = y.raw() + y.offset(n, 0, 0, 0);
    for (int o = 0; o < c_out; ++o) {
      const Real* row = w.raw() + w.offset(o, 0, 0, 0);
      Real s = 0;
      for (int i = 0; i < c_in; ++i) s += row[i] * xv[i];
      yv[o] = s;
    }
  }
  return y;
}

// x gradient of dense: dx[n] = W^T dy[n].
Tensor dense_backward_input(const Tensor& dy, const Tensor& w) {
  const int c_in = w.c(), c_out = w.n();
  Tensor dx(dy.n(), c_in, 1, 1);
  for (int n = 0; n < dy.n(); ++n) {
    const Real* dyv = dy.raw() + dy.offset(n, 0, 0, 0);
    Real* dxv = dx.raw() + dx.offset(n, 0, 0, 0);
    for (int o = 0; o < c_out; ++o) {
      const Real* row = w.raw() + w.offset(o, 0, 0, 0);
      for (int i = 0; i < c_in; ++i) dxv[i] += row[i] * dyv[o];
    }
  }
  return dx;
}

// dW += sum_n dy[n] x[n]^T
void dense_backward_weight(const Tensor& dy, const Tensor& x, Tensor& dw) {
  const int c_in = x.c(), c_out = dy.c();
  if (dw.empty()) dw = Tensor(c_out, c_in, 1, 1);
  for (int n = 0; n < dy.n(); ++n) {
    const Real* dyv = dy.raw() + dy.offset(n, 0, 0, 0);
    const Real* xv = x.raw() + x.offset(n, 0, 0, 0);
    for (int o = 0; o < c_out; ++o) {
      Real* row = dw.raw() + dw.offset(o, 0, 0, 0);
      for (int i = 0; i < c_in; ++i) row[i] += dyv[o] * xv[i];
    }
  }
}

}  // namespace

Tensor channel_attention(const Tensor& f, const AttentionParams& p, ChannelAttCache* cache) {
  if (f.c() != p.channels()) {
    throw ShapeError("channel attention: input channels " + std::to_string(f.c()) +
                     " do not match parameters for " + std::to_string(p.channels()));
  }
  Tensor avg = pool(f, PoolKind::kGlobalAvg);
  Tensor mx = pool(f, PoolKind::kGlobalMax);
  Tensor u_avg = dense(avg, p.mlp_w1);
  Tensor u_max = dense(mx, p.mlp_w1);
  Tensor h_avg = activate(u_avg, Activation::kRelu);
  Tensor h_max = activate(u_max, Activation::kRelu);
  Tensor logits = dense(h_avg, p.mlp_w2);
  add_into(logits, dense(h_max, p.mlp_w2));
  Tensor gate = activate(logits, Activation::kSigmoid);
  if (cache) {
    cache->avg = std::move(avg);
    cache->max = std::move(mx);
    cache->u_avg = std::move(u_avg);
    cache->u_max = std::move(u_max);
    cache->logits = std::move(logits);
    cache->gate = gate;
  }
  return gate;
}

void channel_attention_backward(const Tensor& f, const AttentionParams& p,
                                const ChannelAttCache& cache, const Tensor& grad_gate,
                                AttentionGrads& grads) {
  Tensor dlogits = activate_backward(cache.logits, Activation::kSigmoid, grad_gate);
  Tensor h_avg = activate(cache.u_avg, Activation::kRelu);
  Tensor h_max = activate(cache.u_max, Activation::kRelu);
  dense_backward_weight(dlogits, h_avg, grads.mlp_w2);
  dense_backward_weight(dlogits, h_max, grads.mlp_w2);
  Tensor dh = dense_backward_input(dlogits, p.mlp_w2);
  Tensor du_avg = activate_backward(cache.u_avg, Activation::kRelu, dh);
  Tensor du_max = activate_backward(cache.u_max, Activation::kRelu, dh);
  dense_backward_weight(du_avg, cache.avg, grads.mlp_w1);
  dense_backward_weight(du_max, cache.max, grads.mlp_w1);
  Tensor davg = dense_backward_input(du_avg, p.mlp_w1);
  Tensor dmax = dense_backward_input(du_max, p.mlp_w1);
  add_into(grads.input, pool_backward(f, PoolKind::kGlobalAvg, davg));
  add_into(grads.input, pool_backward(f, PoolKind::kGlobalMax, dmax));
}

Tensor spatial_attention(const Tensor& f, const AttentionParams& p, SpatialAttCache* cache) {
  Tensor ca = pool(f, PoolKind::kChannelAvg);
  Tensor cm = pool(f, PoolKind::kChannelMax);
  Tensor pooled = concat_channels({&ca, &cm});
  Tensor pre = conv2d(pooled, p.spatial);
  Tensor gate = activate(pre, Activation::kSigmoid);
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->pre = std::move(pre);
    cache->gate = gate;
  }
  return gate;
}

void spatial_attention_backward(const Tensor& f, const AttentionParams& p,
                                const SpatialAttCache& cache, const Tensor& grad_gate,
                                AttentionGrads& grads) {
  Tensor dpre = activate_backward(cache.pre, Activation::kSigmoid, grad_gate);
  ConvGrads cg = conv2d_backward(cache.pooled, p.spatial, dpre);
  add_into(grads.spatial_w, cg.weight);
  add_into(grads.spatial_b, cg.bias);
  std::vector<Tensor> parts = split_channels(cg.input, {1, 1});
  add_into(grads.input, pool_backward(f, PoolKind::kChannelAvg, parts[0]));
  add_into(grads.input, pool_backward(f, PoolKind::kChannelMax, parts[1]));
}

Tensor cbam(const Tensor& f, const AttentionParams& p, CbamCache* cache) {
  ChannelAttCache ca_cache;
  Tensor ca = channel_attention(f, p, cache ? &cache->channel : &ca_cache);
  Tensor f1 = mul_channel_gate(f, ca);
  SpatialAttCache sa_cache;
  Tensor sa = spatial_attention(f1, p, cache ? &cache->spatial : &sa_cache);
  Tensor out = mul_spatial_gate(f1, sa);
  if (cache) cache->f1 = std::move(f1);
  return out;
}

AttentionGrads cbam_backward(const Tensor& f, const AttentionParams& p, const CbamCache& cache,
                             const Tensor& grad_out) {
  AttentionGrads g;

  // out = f1 * spatial_gate
  Tensor df1 = mul_spatial_gate(grad_out, cache.spatial.gate);
  Tensor dsa = sum_over_channels(elementwise_mul(grad_out, cache.f1));

  AttentionGrads spatial_part;
  spatial_attention_backward(cache.f1, p, cache.spatial, dsa, spatial_part);
  add_into(g.spatial_w, spatial_part.spatial_w);
  add_into(g.spatial_b, spatial_part.spatial_b);
  add_into(df1, spatial_part.input);

  // f1 = f * channel_gate
  Tensor df = mul_channel_gate(df1, cache.channel.gate);
  Tensor dca = sum_over_spatial(elementwise_mul(df1, f));

  AttentionGrads channel_part;
  channel_attention_backward(f, p, cache.channel, dca, channel_part);
  add_into(g.mlp_w1, channel_part.mlp_w1);
  add_into(g.mlp_w2, channel_part.mlp_w2);
  add_into(df, channel_part.input);

  g.input = std::move(df);
  return g;
}

}  // namespace mseg
