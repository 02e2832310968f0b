#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mirrorseg/crf.hpp"
#include "mirrorseg/errors.hpp"
#include "mirrorseg/metrics.hpp"
#include "test_support.hpp"

using namespace mseg;
using test::random_tensor;

namespace {

Tensor flat_image(int h, int w, Real r, Real g, Real b) {
  Tensor img(1, 3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(0, 0, y, x) = r;
      img.at(0, 1, y, x) = g;
      img.at(0, 2, y, x) = b;
    }
  return img;
}

// Pairwise kernel recomputed directly from the definition.
Real kernel_ref(const Tensor& img, const CrfParams& p, int i, int j) {
  const int w = img.w();
  const Real dy = i / w - j / w, dx = i % w - j % w;
  const Real sp = dx * dx + dy * dy;
  Real col = 0;
  for (int c = 0; c < 3; ++c) {
    const Real d = (img.data()[c * img.h() * img.w() + i] - img.data()[c * img.h() * img.w() + j]) * 255;
    col += d * d;
  }
  return p.w_appearance *
             std::exp(-sp / (2 * p.theta_alpha * p.theta_alpha) -
                      col / (2 * p.theta_beta * p.theta_beta)) +
         p.w_smoothness * std::exp(-sp / (2 * p.theta_gamma * p.theta_gamma));
}

}  // namespace

TEST_CASE("no pairwise coupling returns the clamped input probabilities") {
  CrfParams p;
  p.w_appearance = 0;
  p.w_smoothness = 0;
  Rng rng = make_rng(1);
  Tensor img = random_tensor(1, 3, 4, 4, rng, 0, 1);
  Tensor prob = random_tensor(1, 1, 4, 4, rng, 0.05, 0.95);
  Tensor out = crf_refine(img, prob, p);
  for (std::size_t i = 0; i < prob.data().size(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(prob.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("zero iterations return the unary softmax exactly") {
  CrfParams p;
  p.iterations = 0;
  Rng rng = make_rng(2);
  Tensor img = random_tensor(1, 3, 3, 5, rng, 0, 1);
  Tensor prob = random_tensor(1, 1, 3, 5, rng, 0.2, 0.8);
  Tensor out = crf_refine(img, prob, p);
  for (std::size_t i = 0; i < prob.data().size(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(prob.data()[i]).epsilon(1e-14));
  }
  // extreme probabilities are clamped before the log
  Tensor hard(1, 1, 3, 5, 1.0);
  Tensor clamped = crf_refine(img, hard, p);
  for (Real v : clamped.data()) CHECK(v == doctest::Approx(1.0 - 1e-5).epsilon(1e-8));
}

TEST_CASE("uniform agreement reinforces itself") {
  // 2x2 uniform image, prob 0.9 everywhere: by symmetry all pixels share one
  // marginal, and the scalar fixed-point recursion is an independent oracle.
  CrfParams p;
  p.iterations = 5;
  Tensor img = flat_image(2, 2, 0.5, 0.5, 0.5);
  Tensor prob(1, 1, 2, 2, 0.9);
  Tensor out = crf_refine(img, prob, p);

  // oracle: q' = softmax(-u1 - ksum*(1-q), -u0 - ksum*q), identical per pixel
  const Real u1 = -std::log(0.9), u0 = -std::log(0.1);
  Real ksum = 0;
  for (int j = 1; j < 4; ++j) ksum += kernel_ref(img, p, 0, j);
  Real q = 0.9;
  for (int it = 0; it < p.iterations; ++it) {
    const Real e1 = u1 + ksum * (1 - q), e0 = u0 + ksum * q;
    q = std::exp(-e1) / (std::exp(-e1) + std::exp(-e0));
  }
  for (Real v : out.data()) {
    CHECK(v >= 0.9);
    CHECK(v == doctest::Approx(q).epsilon(1e-10));
  }
}

TEST_CASE("marginals stay in (0,1) and the two labels sum to one") {
  // binary marginals: q0 = 1 - q1 by construction, so check range and
  // determinism across repeated runs
  CrfParams p;
  Rng rng = make_rng(3);
  Tensor img = random_tensor(1, 3, 6, 6, rng, 0, 1);
  Tensor prob = random_tensor(1, 1, 6, 6, rng, 0.0, 1.0);
  Tensor a = crf_refine(img, prob, p);
  Tensor b = crf_refine(img, prob, p);
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    CHECK(a.data()[i] > 0);
    CHECK(a.data()[i] < 1);
    REQUIRE(a.data()[i] == b.data()[i]);
  }
}

TEST_CASE("pairwise kernel is symmetric on a 4x4 instance") {
  CrfParams p;
  Rng rng = make_rng(4);
  Tensor img = random_tensor(1, 3, 4, 4, rng, 0, 1);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      CHECK(kernel_ref(img, p, i, j) == doctest::Approx(kernel_ref(img, p, j, i)).epsilon(1e-15));
    }
}

TEST_CASE("refinement raises IoU on a noisy crisp-edge fixture") {
  // bright square on dark background; the probability map is the true mask
  // with scattered flips
  const int res = 24;
  Tensor img = flat_image(res, res, 0.1, 0.12, 0.1);
  Tensor gt(1, 1, res, res);
  for (int y = 6; y < 18; ++y)
    for (int x = 6; x < 18; ++x) {
      gt.at(0, 0, y, x) = 1;
      img.at(0, 0, y, x) = 0.85;
      img.at(0, 1, y, x) = 0.8;
      img.at(0, 2, y, x) = 0.9;
    }
  Rng rng = make_rng(5);
  std::uniform_real_distribution<Real> coin(0, 1);
  Tensor noisy(1, 1, res, res);
  for (std::size_t i = 0; i < noisy.data().size(); ++i) {
    const Real truth = gt.data()[i];
    noisy.data()[i] = coin(rng) < 0.08 ? 1 - truth : truth;
    noisy.data()[i] = noisy.data()[i] == 1 ? 0.95 : 0.05;
  }
  CrfParams p;
  Tensor refined = crf_refine(img, noisy, p);

  auto iou_at = [&](const Tensor& prob) {
    Tensor mask(1, 1, res, res);
    for (std::size_t i = 0; i < prob.data().size(); ++i) {
      mask.data()[i] = prob.data()[i] >= 0.5 ? 1 : 0;
    }
    return iou_accuracy(confusion(mask, gt)).first;
  };
  const Real before = iou_at(noisy);
  const Real after = iou_at(refined);
  CHECK(before < 1.0);
  CHECK(after > before);
}

TEST_CASE("dimension mismatches and bad probabilities are rejected") {
  CrfParams p;
  Tensor img(1, 3, 4, 4, 0.5);
  Tensor wrong(1, 1, 3, 4, 0.5);
  CHECK_THROWS_AS(crf_refine(img, wrong, p), ShapeError);
  Tensor gray(1, 1, 4, 4, 0.5);
  CHECK_THROWS_AS(crf_refine(gray, gray, p), ShapeError);
  Tensor bad(1, 1, 4, 4, 1.5);
  CHECK_THROWS_AS(crf_refine(img, bad, p), DataError);
  CrfParams neg;
  neg.theta_alpha = 0;
  CHECK_THROWS_AS(crf_refine(img, gray, neg), ConfigError);
}
