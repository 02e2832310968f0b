#include "mirrorseg/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mirrorseg/errors.hpp"
#include "mirrorseg/threading.hpp"

namespace mseg {

ConvParams make_conv(int c_out, int c_in, int k, int stride, int dilation, int padding) {
  if (c_out < 1 || c_in < 1 || k < 1) throw ShapeError("conv: channel and kernel sizes must be positive");
  if (stride < 1) throw ShapeError("conv: stride must be positive");
  if (dilation < 1) throw ShapeError("conv: dilation must be positive");
  if (padding < 0) throw ShapeError("conv: padding must be non-negative");
  ConvParams p;
  p.weight = Tensor(c_out, c_in, k, k);
  p.bias.assign(c_out, Real(0));
  p.stride = stride;
  p.dilation = dilation;
  p.padding = padding;
  return p;
}

int conv_out_extent(int in, int k, int stride, int dilation, int padding) {
  const int span = dilation * (k - 1) + 1;
  const int out = (in + 2 * padding - span) / stride + 1;
  if (out < 1) {
    std::ostringstream os;
    os << "conv: zero-size spatial output (input " << in << ", kernel " << k
       << ", dilation " << dilation << ", stride " << stride << ", padding " << padding << ")";
    throw ShapeError(os.str());
  }
  return out;
}

namespace {

void check_conv_shapes(const Tensor& input, const ConvParams& p) {
  if (input.c() != p.c_in()) {
    std::ostringstream os;
    os << "conv: input channels " << input.c() << " do not match weight C_in " << p.c_in();
    throw ShapeError(os.str());
  }
  if (static_cast<int>(p.bias.size()) != p.c_out()) {
    throw ShapeError("conv: bias length does not match C_out");
  }
}

// Gather input patches into a (C_in*kH*kW) x (H_out*W_out) column matrix.
void im2col(const Tensor& input, int n, const ConvParams& p, int out_h, int out_w, Real* col) {
  const int kh = p.kh(), kw = p.kw();
  const int in_h = input.h(), in_w = input.w();
  const int L = out_h * out_w;
  const Real* base = input.raw() + input.offset(n, 0, 0, 0);
  const std::int64_t chw = static_cast<std::int64_t>(in_h) * in_w;
  std::int64_t row = 0;
  for (int c = 0; c < p.c_in(); ++c) {
    const Real* plane = base + c * chw;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        Real* dst = col + row * L;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * p.stride - p.padding + ky * p.dilation;
          if (iy < 0 || iy >= in_h) {
            std::fill(dst, dst + out_w, Real(0));
            dst += out_w;
            continue;
          }
          const Real* src_row = plane + static_cast<std::int64_t>(iy) * in_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * p.stride - p.padding + kx * p.dilation;
            *dst++ = (ix >= 0 && ix < in_w) ? src_row[ix] : Real(0);
          }
        }
      }
    }
  }
}

// Scatter-add a column matrix back onto the input plane (adjoint of im2col).
void col2im_add(const Real* col, const ConvParams& p, int out_h, int out_w,
                int in_h, int in_w, int n, Tensor& out) {
  const int kh = p.kh(), kw = p.kw();
  const int L = out_h * out_w;
  Real* base = out.raw() + out.offset(n, 0, 0, 0);
  const std::int64_t chw = static_cast<std::int64_t>(in_h) * in_w;
  std::int64_t row = 0;
  for (int c = 0; c < p.c_in(); ++c) {
    Real* plane = base + c * chw;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        const Real* src = col + row * L;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * p.stride - p.padding + ky * p.dilation;
          if (iy < 0 || iy >= in_h) {
            src += out_w;
            continue;
          }
          Real* dst_row = plane + static_cast<std::int64_t>(iy) * in_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * p.stride - p.padding + kx * p.dilation;
            if (ix >= 0 && ix < in_w) dst_row[ix] += src[ox];
            // dropped taps fell on padding
          }
          src += out_w;
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const ConvParams& p) {
  check_conv_shapes(input, p);
  const int out_h = conv_out_extent(input.h(), p.kh(), p.stride, p.dilation, p.padding);
  const int out_w = conv_out_extent(input.w(), p.kw(), p.stride, p.dilation, p.padding);
  const int K = p.c_in() * p.kh() * p.kw();
  const int L = out_h * out_w;
  Tensor out(input.n(), p.c_out(), out_h, out_w);

  parallel_for(input.n(), [&](std::int64_t lo, std::int64_t hi) {
    std::vector<Real> col(static_cast<std::size_t>(K) * L);
    for (std::int64_t n = lo; n < hi; ++n) {
      im2col(input, static_cast<int>(n), p, out_h, out_w, col.data());
      Real* y = out.raw() + out.offset(static_cast<int>(n), 0, 0, 0);
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, p.c_out(), L, K,
                  1.0, p.weight.raw(), K, col.data(), L, 0.0, y, L);
      for (int co = 0; co < p.c_out(); ++co) {
        const Real b = p.bias[co];
        Real* row = y + static_cast<std::int64_t>(co) * L;
        for (int l = 0; l < L; ++l) row[l] += b;
      }
    }
  });
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out) {
  check_conv_shapes(input, p);
  const int out_h = conv_out_extent(input.h(), p.kh(), p.stride, p.dilation, p.padding);
  const int out_w = conv_out_extent(input.w(), p.kw(), p.stride, p.dilation, p.padding);
  if (grad_out.n() != input.n() || grad_out.c() != p.c_out() ||
      grad_out.h() != out_h || grad_out.w() != out_w) {
    std::ostringstream os;
    os << "conv backward: grad_out shape " << grad_out.shape_str() << " does not match output ("
       << input.n() << ", " << p.c_out() << ", " << out_h << ", " << out_w << ")";
    throw ShapeError(os.str());
  }
  const int K = p.c_in() * p.kh() * p.kw();
  const int L = out_h * out_w;

  ConvGrads g;
  g.input = Tensor(input.n(), input.c(), input.h(), input.w());
  g.weight = Tensor(p.c_out(), p.c_in(), p.kh(), p.kw());
  g.bias.assign(p.c_out(), Real(0));

  // Input gradient: independent per image.
  parallel_for(input.n(), [&](std::int64_t lo, std::int64_t hi) {
    std::vector<Real> col(static_cast<std::size_t>(K) * L);
    for (std::int64_t n = lo; n < hi; ++n) {
      const Real* gy = grad_out.raw() + grad_out.offset(static_cast<int>(n), 0, 0, 0);
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, L, p.c_out(),
                  1.0, p.weight.raw(), K, gy, L, 0.0, col.data(), L);
      col2im_add(col.data(), p, out_h, out_w, input.h(), input.w(), static_cast<int>(n), g.input);
    }
  });

  // Weight and bias gradients accumulate over images in index order so the
  // reduction is deterministic for any thread count.
  {
    std::vector<Real> col(static_cast<std::size_t>(K) * L);
    for (int n = 0; n < input.n(); ++n) {
      im2col(input, n, p, out_h, out_w, col.data());
      const Real* gy = grad_out.raw() + grad_out.offset(n, 0, 0, 0);
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, p.c_out(), K, L,
                  1.0, gy, L, col.data(), L, 1.0, g.weight.raw(), K);
      for (int co = 0; co < p.c_out(); ++co) {
        const Real* row = gy + static_cast<std::int64_t>(co) * L;
        Real s = 0;
        for (int l = 0; l < L; ++l) s += row[l];
        g.bias[co] += s;
      }
    }
  }
  return g;
}

BatchNormState make_batch_norm(int channels) {
  BatchNormState s;
  s.gamma.assign(channels, Real(1));
  s.beta.assign(channels, Real(0));
  s.running_mean.assign(channels, Real(0));
  s.running_var.assign(channels, Real(1));
  return s;
}

namespace {

void check_bn_shapes(const Tensor& input, const BatchNormState& state) {
  const auto c = static_cast<std::size_t>(input.c());
  if (state.gamma.size() != c || state.beta.size() != c ||
      state.running_mean.size() != c || state.running_var.size() != c) {
    throw ShapeError("batch_norm: state vectors do not match input channels");
  }
  if (input.n() == 0 || input.h() * input.w() == 0) {
    throw ShapeError("batch_norm: empty batch rejected");
  }
}

}  // namespace

Tensor batch_norm(const Tensor& input, BatchNormState& state, bool training, BnCache* cache) {
  check_bn_shapes(input, state);
  const int C = input.c();
  const std::int64_t plane = static_cast<std::int64_t>(input.h()) * input.w();
  const std::int64_t m = static_cast<std::int64_t>(input.n()) * plane;

  std::vector<Real> mean(C), inv_std(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      Real sum = 0;
      for (int n = 0; n < input.n(); ++n) {
        const Real* src = input.raw() + input.offset(n, c, 0, 0);
        for (std::int64_t i = 0; i < plane; ++i) sum += src[i];
      }
      const Real mu = sum / static_cast<Real>(m);
      Real sq = 0;
      for (int n = 0; n < input.n(); ++n) {
        const Real* src = input.raw() + input.offset(n, c, 0, 0);
        for (std::int64_t i = 0; i < plane; ++i) {
          const Real d = src[i] - mu;
          sq += d * d;
        }
      }
      const Real var = sq / static_cast<Real>(m);  // biased
      mean[c] = mu;
      inv_std[c] = Real(1) / std::sqrt(var + state.epsilon);
      state.running_mean[c] = state.momentum * state.running_mean[c] + (1 - state.momentum) * mu;
      state.running_var[c] = state.momentum * state.running_var[c] + (1 - state.momentum) * var;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = Real(1) / std::sqrt(state.running_var[c] + state.epsilon);
    }
  }

  Tensor out(input.n(), C, input.h(), input.w());
  for (int n = 0; n < input.n(); ++n) {
    for (int c = 0; c < C; ++c) {
      const Real* src = input.raw() + input.offset(n, c, 0, 0);
      Real* dst = out.raw() + out.offset(n, c, 0, 0);
      const Real mu = mean[c], is = inv_std[c], ga = state.gamma[c], be = state.beta[c];
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = ga * (src[i] - mu) * is + be;
    }
  }
  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

BnGrads batch_norm_backward(const Tensor& input, const BatchNormState& state,
                            const BnCache& cache, const Tensor& grad_out) {
  check_bn_shapes(input, state);
  if (!grad_out.same_shape(input)) {
    throw ShapeError("batch_norm backward: grad_out shape " + grad_out.shape_str() +
                     " does not match input " + input.shape_str());
  }
  const int C = input.c();
  const std::int64_t plane = static_cast<std::int64_t>(input.h()) * input.w();
  const Real m = static_cast<Real>(static_cast<std::int64_t>(input.n()) * plane);

  BnGrads g;
  g.input = Tensor(input.n(), C, input.h(), input.w());
  g.gamma.assign(C, Real(0));
  g.beta.assign(C, Real(0));

  for (int c = 0; c < C; ++c) {
    const Real mu = cache.mean[c], is = cache.inv_std[c];
    Real sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < input.n(); ++n) {
      const Real* x = input.raw() + input.offset(n, c, 0, 0);
      const Real* dy = grad_out.raw() + grad_out.offset(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * (x[i] - mu) * is;
      }
    }
    g.beta[c] = sum_dy;
    g.gamma[c] = sum_dy_xhat;
    const Real ga = state.gamma[c];
    const Real mean_dy = sum_dy / m;
    const Real mean_dy_xhat = sum_dy_xhat / m;
    for (int n = 0; n < input.n(); ++n) {
      const Real* x = input.raw() + input.offset(n, c, 0, 0);
      const Real* dy = grad_out.raw() + grad_out.offset(n, c, 0, 0);
      Real* dx = g.input.raw() + g.input.offset(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) {
        const Real xhat = (x[i] - mu) * is;
        dx[i] = ga * is * (dy[i] - mean_dy - xhat * mean_dy_xhat);
      }
    }
  }
  return g;
}

Tensor activate(const Tensor& input, Activation kind) {
  Tensor out = input;
  if (kind == Activation::kRelu) {
    for (Real& v : out.data()) v = v > 0 ? v : Real(0);
  } else {
    for (Real& v : out.data()) v = sigmoid(v);
  }
  return out;
}

Tensor activate_backward(const Tensor& input, Activation kind, const Tensor& grad_out) {
  if (!grad_out.same_shape(input)) {
    throw ShapeError("activation backward: shape mismatch");
  }
  Tensor g(input.n(), input.c(), input.h(), input.w());
  const auto& x = input.data();
  const auto& dy = grad_out.data();
  auto& dx = g.data();
  if (kind == Activation::kRelu) {
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0 ? dy[i] : Real(0);
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Real s = sigmoid(x[i]);
      dx[i] = dy[i] * s * (1 - s);
    }
  }
  return g;
}

Tensor pool(const Tensor& input, PoolKind kind) {
  const std::int64_t plane = static_cast<std::int64_t>(input.h()) * input.w();
  switch (kind) {
    case PoolKind::kGlobalAvg: {
      Tensor out(input.n(), input.c(), 1, 1);
      for (int n = 0; n < input.n(); ++n)
        for (int c = 0; c < input.c(); ++c) {
          const Real* src = input.raw() + input.offset(n, c, 0, 0);
          Real s = 0;
          for (std::int64_t i = 0; i < plane; ++i) s += src[i];
          out.at(n, c, 0, 0) = s / static_cast<Real>(plane);
        }
      return out;
    }
    case PoolKind::kGlobalMax: {
      Tensor out(input.n(), input.c(), 1, 1);
      for (int n = 0; n < input.n(); ++n)
        for (int c = 0; c < input.c(); ++c) {
          const Real* src = input.raw() + input.offset(n, c, 0, 0);
          Real best = src[0];
          for (std::int64_t i = 1; i < plane; ++i) best = std::max(best, src[i]);
          out.at(n, c, 0, 0) = best;
        }
      return out;
    }
    case PoolKind::kChannelAvg: {
      Tensor out(input.n(), 1, input.h(), input.w());
      for (int n = 0; n < input.n(); ++n)
        for (int h = 0; h < input.h(); ++h)
          for (int w = 0; w < input.w(); ++w) {
            Real s = 0;
            for (int c = 0; c < input.c(); ++c) s += input.at(n, c, h, w);
            out.at(n, 0, h, w) = s / static_cast<Real>(input.c());
          }
      return out;
    }
    case PoolKind::kChannelMax: {
      Tensor out(input.n(), 1, input.h(), input.w());
      for (int n = 0; n < input.n(); ++n)
        for (int h = 0; h < input.h(); ++h)
          for (int w = 0; w < input.w(); ++w) {
            Real best = input.at(n, 0, h, w);
            for (int c = 1; c < input.c(); ++c) best = std::max(best, input.at(n, c, h, w));
            out.at(n, 0, h, w) = best;
          }
      return out;
    }
  }
  throw StateError("pool: unknown kind");
}

Tensor pool_backward(const Tensor& input, PoolKind kind, const Tensor& grad_out) {
  const std::int64_t plane = static_cast<std::int64_t>(input.h()) * input.w();
  Tensor g(input.n(), input.c(), input.h(), input.w());
  switch (kind) {
    case PoolKind::kGlobalAvg: {
      for (int n = 0; n < input.n(); ++n)
        for (int c = 0; c < input.c(); ++c) {
          const Real v = grad_out.at(n, c, 0, 0) / static_cast<Real>(plane);
          Real* dst = g.raw() + g.offset(n, c, 0, 0);
          for (std::int64_t i = 0; i < plane; ++i) dst[i] = v;
        }
      return g;
    }
    case PoolKind::kGlobalMax: {
      for (int n = 0; n < input.n(); ++n)
        for (int c = 0; c < input.c(); ++c) {
          const Real* src = input.raw() + input.offset(n, c, 0, 0);
          std::int64_t arg = 0;
          for (std::int64_t i = 1; i < plane; ++i)
            if (src[i] > src[arg]) arg = i;
          (g.raw() + g.offset(n, c, 0, 0))[arg] = grad_out.at(n, c, 0, 0);
        }
      return g;
    }
    case PoolKind::kChannelAvg: {
      for (int n = 0; n < input.n(); ++n)
        for (int h = 0; h < input.h(); ++h)
          for (int w = 0; w < input.w(); ++w) {
            const Real v = grad_out.at(n, 0, h, w) / static_cast<Real>(input.c());
            for (int c = 0; c < input.c(); ++c) g.at(n, c, h, w) = v;
          }
      return g;
    }
    case PoolKind::kChannelMax: {
      for (int n = 0; n < input.n(); ++n)
        for (int h = 0; h < input.h(); ++h)
          for (int w = 0; w < input.w(); ++w) {
            int arg = 0;
            for (int c = 1; c < input.c(); ++c)
              if (input.at(n, c, h, w) > input.at(n, arg, h, w)) arg = c;
            g.at(n, arg, h, w) = grad_out.at(n, 0, h, w);
          }
      return g;
    }
  }
  throw StateError("pool backward: unknown kind");
}

namespace {

// Source coordinates and blend weights for one output axis, align-corners
// disabled: src = (dst + 0.5) * in/out - 0.5, clamped.
struct AxisMap {
  std::vector<int> lo, hi;
  std::vector<Real> frac;  // weight of hi
};

AxisMap axis_map(int in, int out) {
  AxisMap m;
  m.lo.resize(out);
  m.hi.resize(out);
  m.frac.resize(out);
  const Real scale = static_cast<Real>(in) / static_cast<Real>(out);
  for (int o = 0; o < out; ++o) {
    Real src = (o + Real(0.5)) * scale - Real(0.5);
    if (src < 0) src = 0;
    if (src > in - 1) src = static_cast<Real>(in - 1);
    const int lo = static_cast<int>(std::floor(src));
    m.lo[o] = lo;
    m.hi[o] = std::min(lo + 1, in - 1);
    m.frac[o] = src - static_cast<Real>(lo);
  }
  return m;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& input, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("upsample: output size must be positive");
  const AxisMap ym = axis_map(input.h(), out_h);
  const AxisMap xm = axis_map(input.w(), out_w);
  Tensor out(input.n(), input.c(), out_h, out_w);
  for (int n = 0; n < input.n(); ++n)
    for (int c = 0; c < input.c(); ++c) {
      const Real* src = input.raw() + input.offset(n, c, 0, 0);
      Real* dst = out.raw() + out.offset(n, c, 0, 0);
      for (int oy = 0; oy < out_h; ++oy) {
        const Real fy = ym.frac[oy];
        const Real* r0 = src + static_cast<std::int64_t>(ym.lo[oy]) * input.w();
        const Real* r1 = src + static_cast<std::int64_t>(ym.hi[oy]) * input.w();
        for (int ox = 0; ox < out_w; ++ox) {
          const Real fx = xm.frac[ox];
          const Real top = r0[xm.lo[ox]] * (1 - fx) + r0[xm.hi[ox]] * fx;
          const Real bot = r1[xm.lo[ox]] * (1 - fx) + r1[xm.hi[ox]] * fx;
          *dst++ = top * (1 - fy) + bot * fy;
        }
      }
    }
  return out;
}

Tensor upsample_bilinear_backward(int in_h, int in_w, const Tensor& grad_out) {
  const AxisMap ym = axis_map(in_h, grad_out.h());
  const AxisMap xm = axis_map(in_w, grad_out.w());
  Tensor g(grad_out.n(), grad_out.c(), in_h, in_w);
  for (int n = 0; n < grad_out.n(); ++n)
    for (int c = 0; c < grad_out.c(); ++c) {
      const Real* dy = grad_out.raw() + grad_out.offset(n, c, 0, 0);
      Real* dx = g.raw() + g.offset(n, c, 0, 0);
      for (int oy = 0; oy < grad_out.h(); ++oy) {
        const Real fy = ym.frac[oy];
        Real* r0 = dx + static_cast<std::int64_t>(ym.lo[oy]) * in_w;
        Real* r1 = dx + static_cast<std::int64_t>(ym.hi[oy]) * in_w;
        for (int ox = 0; ox < grad_out.w(); ++ox) {
          const Real fx = xm.frac[ox];
          const Real v = *dy++;
          r0[xm.lo[ox]] += v * (1 - fy) * (1 - fx);
          r0[xm.hi[ox]] += v * (1 - fy) * fx;
          r1[xm.lo[ox]] += v * fy * (1 - fx);
          r1[xm.hi[ox]] += v * fy * fx;
        }
      }
    }
  return g;
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = *parts.front();
  int total_c = 0;
  for (const Tensor* t : parts) {
    if (t->n() != first.n() || t->h() != first.h() || t->w() != first.w()) {
      throw ShapeError("concat: mismatched shapes " + first.shape_str() + " vs " + t->shape_str());
    }
    total_c += t->c();
  }
  Tensor out(first.n(), total_c, first.h(), first.w());
  const std::int64_t plane = static_cast<std::int64_t>(first.h()) * first.w();
  for (int n = 0; n < first.n(); ++n) {
    int c_off = 0;
    for (const Tensor* t : parts) {
      for (int c = 0; c < t->c(); ++c) {
        const Real* src = t->raw() + t->offset(n, c, 0, 0);
        Real* dst = out.raw() + out.offset(n, c_off + c, 0, 0);
        std::copy(src, src + plane, dst);
      }
      c_off += t->c();
    }
  }
  return out;
}

Tensor mul_channel_gate(const Tensor& f, const Tensor& gate) {
  if (gate.n() != f.n() || gate.c() != f.c() || gate.h() != 1 || gate.w() != 1) {
    throw ShapeError("channel gate shape " + gate.shape_str() + " does not match " + f.shape_str());
  }
  Tensor out(f.n(), f.c(), f.h(), f.w());
  const std::int64_t plane = static_cast<std::int64_t>(f.h()) * f.w();
  for (int n = 0; n < f.n(); ++n)
    for (int c = 0; c < f.c(); ++c) {
      const Real g = gate.at(n, c, 0, 0);
      const Real* src = f.raw() + f.offset(n, c, 0, 0);
      Real* dst = out.raw() + out.offset(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * g;
    }
  return out;
}

Tensor mul_spatial_gate(const Tensor& f, const Tensor& gate) {
  if (gate.n() != f.n() || gate.c() != 1 || gate.h() != f.h() || gate.w() != f.w()) {
    throw ShapeError("spatial gate shape " + gate.shape_str() + " does not match " + f.shape_str());
  }
  Tensor out(f.n(), f.c(), f.h(), f.w());
  const std::int64_t plane = static_cast<std::int64_t>(f.h()) * f.w();
  for (int n = 0; n < f.n(); ++n) {
    const Real* g = gate.raw() + gate.offset(n, 0, 0, 0);
    for (int c = 0; c < f.c(); ++c) {
      const Real* src = f.raw() + f.offset(n, c, 0, 0);
      Real* dst = out.raw() + out.offset(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * g[i];
    }
  }
  return out;
}

Tensor sum_over_spatial(const Tensor& t) {
  Tensor out(t.n(), t.c(), 1, 1);
  const std::int64_t plane = static_cast<std::int64_t>(t.h()) * t.w();
  for (int n = 0; n < t.n(); ++n)
    for (int c = 0; c < t.c(); ++c) {
      const Real* src = t.raw() + t.offset(n, c, 0, 0);
      Real s = 0;
      for (std::int64_t i = 0; i < plane; ++i) s += src[i];
      out.at(n, c, 0, 0) = s;
    }
  return out;
}

Tensor sum_over_channels(const Tensor& t) {
  Tensor out(t.n(), 1, t.h(), t.w());
  const std::int64_t plane = static_cast<std::int64_t>(t.h()) * t.w();
  for (int n = 0; n < t.n(); ++n) {
    Real* dst = out.raw() + out.offset(n, 0, 0, 0);
    for (int c = 0; c < t.c(); ++c) {
      const Real* src = t.raw() + t.offset(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i];
    }
  }
  return out;
}

Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("elementwise mul: shapes " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] *= b.data()[i];
  return out;
}

void add_into(std::vector<Real>& dst, const std::vector<Real>& src) {
  if (dst.empty()) dst.assign(src.size(), Real(0));
  if (dst.size() != src.size()) throw ShapeError("add_into: size mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

void add_into(Tensor& dst, const Tensor& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  if (!dst.same_shape(src)) {
    throw ShapeError("add_into: shapes " + dst.shape_str() + " vs " + src.shape_str());
  }
  for (std::size_t i = 0; i < src.data().size(); ++i) dst.data()[i] += src.data()[i];
}

std::vector<Tensor> split_channels(const Tensor& grad, const std::vector<int>& widths) {
  int total = 0;
  for (int w : widths) total += w;
  if (total != grad.c()) throw ShapeError("split: widths do not sum to channel count");
  std::vector<Tensor> out;
  out.reserve(widths.size());
  const std::int64_t plane = static_cast<std::int64_t>(grad.h()) * grad.w();
  int c_off = 0;
  for (int w : widths) {
    Tensor part(grad.n(), w, grad.h(), grad.w());
    for (int n = 0; n < grad.n(); ++n)
      for (int c = 0; c < w; ++c) {
        const Real* src = grad.raw() + grad.offset(n, c_off + c, 0, 0);
        Real* dst = part.raw() + part.offset(n, c, 0, 0);
        std::copy(src, src + plane, dst);
      }
    out.push_back(std::move(part));
    c_off += w;
  }
  return out;
}

}  // namespace mseg
