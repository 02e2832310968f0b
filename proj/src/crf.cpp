#include "mirrorseg/crf.hpp"

#include <cblas.h>

#include <cmath>
#include <vector>

#include "mirrorseg/errors.hpp"
#include "mirrorseg/threading.hpp"

namespace mseg {

void CrfParams::validate() const {
  if (theta_alpha <= 0 || theta_beta <= 0 || theta_gamma <= 0) {
    throw ConfigError("crf: bandwidths must be positive");
  }
  if (w_appearance < 0 || w_smoothness < 0) {
    throw ConfigError("crf: kernel weights must be non-negative");
  }
  if (iterations < 0) throw ConfigError("crf: iterations must be non-negative");
}

namespace {

constexpr Real kProbClamp = Real(1e-5);

// Pairwise kernel between pixels i and j of one image.
struct KernelContext {
  const Real* r;
  const Real* g;
  const Real* b;
  int width = 0;
  Real inv_2a2, inv_2b2, inv_2g2;
  Real w_app, w_smooth;

  Real operator()(int i, int j) const {
    const Real dy = static_cast<Real>(i / width - j / width);
    const Real dx = static_cast<Real>(i % width - j % width);
    const Real sp = dx * dx + dy * dy;
    const Real dr = (r[i] - r[j]) * 255;
    const Real dg = (g[i] - g[j]) * 255;
    const Real db = (b[i] - b[j]) * 255;
    const Real col = dr * dr + dg * dg + db * db;
    return w_app * std::exp(-sp * inv_2a2 - col * inv_2b2) +
           w_smooth * std::exp(-sp * inv_2g2);
  }
};

// Full-matrix memory cap; beyond this the kernel is recomputed per iteration.
constexpr std::int64_t kMaxPrecomputedPixels = 64 * 66;

void refine_one(const KernelContext& kc, const Real* prob, int npix, const CrfParams& params,
                Real* out) {
  // Unaries from clamped probabilities; q1 + q0 = 1 per pixel.
  std::vector<Real> u1(npix), u0(npix), q1(npix), q0(npix);
  for (int i = 0; i < npix; ++i) {
    Real p = prob[i];
    if (p < kProbClamp) p = kProbClamp;
    if (p > 1 - kProbClamp) p = 1 - kProbClamp;
    u1[i] = -std::log(p);
    u0[i] = -std::log(1 - p);
    const Real z = p + (1 - p);
    q1[i] = p / z;
    q0[i] = (1 - p) / z;
  }

  const bool precompute = static_cast<std::int64_t>(npix) * npix <= kMaxPrecomputedPixels * kMaxPrecomputedPixels;
  std::vector<Real> kernel;
  if (precompute && params.iterations > 0) {
    kernel.resize(static_cast<std::size_t>(npix) * npix);
    parallel_for(npix, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t i = lo; i < hi; ++i) {
        Real* row = kernel.data() + i * npix;
        for (int j = 0; j < npix; ++j) row[j] = kc(static_cast<int>(i), j);
        row[i] = 0;  // no self message
      }
    });
  }

  std::vector<Real> m1(npix), m0(npix), next1(npix), next0(npix);
  for (int it = 0; it < params.iterations; ++it) {
    if (precompute) {
      cblas_dgemv(CblasRowMajor, CblasNoTrans, npix, npix, 1.0, kernel.data(), npix, q1.data(), 1,
                  0.0, m1.data(), 1);
      cblas_dgemv(CblasRowMajor, CblasNoTrans, npix, npix, 1.0, kernel.data(), npix, q0.data(), 1,
                  0.0, m0.data(), 1);
    } else {
      parallel_for(npix, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) {
          Real s1 = 0, s0 = 0;
          for (int j = 0; j < npix; ++j) {
            if (j == static_cast<int>(i)) continue;
            const Real k = kc(static_cast<int>(i), j);
            s1 += k * q1[j];
            s0 += k * q0[j];
          }
          m1[i] = s1;
          m0[i] = s0;
        }
      });
    }
    // Potts compatibility: label l is penalized by mass on the other label.
    for (int i = 0; i < npix; ++i) {
      const Real e1 = u1[i] + m0[i];
      const Real e0 = u0[i] + m1[i];
      // softmax over {-e1, -e0}
      const Real mx = std::max(-e1, -e0);
      const Real z1 = std::exp(-e1 - mx);
      const Real z0 = std::exp(-e0 - mx);
      next1[i] = z1 / (z1 + z0);
      next0[i] = z0 / (z1 + z0);
    }
    q1.swap(next1);
    q0.swap(next0);
  }
  for (int i = 0; i < npix; ++i) out[i] = q1[i];
}

}  // namespace

Tensor crf_refine(const Tensor& image, const Tensor& prob, const CrfParams& params) {
  params.validate();
  if (image.c() != 3) throw ShapeError("crf: image must have 3 channels");
  if (prob.c() != 1 || prob.n() != image.n() || prob.h() != image.h() || prob.w() != image.w()) {
    throw ShapeError("crf: probability map " + prob.shape_str() + " does not match image " +
                     image.shape_str());
  }
  for (Real v : prob.data()) {
    if (v < 0 || v > 1) throw DataError("crf: probabilities must lie in [0, 1]");
  }

  const int npix = image.h() * image.w();
  Tensor out(prob.n(), 1, prob.h(), prob.w());
  for (int n = 0; n < image.n(); ++n) {
    KernelContext kc;
    kc.r = image.raw() + image.offset(n, 0, 0, 0);
    kc.g = image.raw() + image.offset(n, 1, 0, 0);
    kc.b = image.raw() + image.offset(n, 2, 0, 0);
    kc.width = image.w();
    kc.inv_2a2 = Real(0.5) / (params.theta_alpha * params.theta_alpha);
    kc.inv_2b2 = Real(0.5) / (params.theta_beta * params.theta_beta);
    kc.inv_2g2 = Real(0.5) / (params.theta_gamma * params.theta_gamma);
    kc.w_app = params.w_appearance;
    kc.w_smooth = params.w_smoothness;
    refine_one(kc, prob.raw() + prob.offset(n, 0, 0, 0), npix, params,
               out.raw() + out.offset(n, 0, 0, 0));
  }
  return out;
}

}  // namespace mseg
