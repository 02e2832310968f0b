#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mirrorseg/errors.hpp"
#include "mirrorseg/ops.hpp"
#include "test_support.hpp"

using namespace mseg;
using test::dot;
using test::flatten;
using test::random_tensor;
using test::unflatten;

namespace {

ConvParams identity_kernel3(int channels, int dilation) {
  ConvParams p = make_conv(channels, channels, 3, 1, dilation, dilation);
  for (int c = 0; c < channels; ++c) p.weight.at(c, c, 1, 1) = 1;
  return p;
}

// Direct summation reference, no shared code with the library path.
Real conv_ref_at(const Tensor& x, const ConvParams& p, int n, int co, int oy, int ox) {
  Real s = p.bias[co];
  for (int ci = 0; ci < p.c_in(); ++ci)
    for (int ky = 0; ky < p.kh(); ++ky)
      for (int kx = 0; kx < p.kw(); ++kx) {
        const int iy = oy * p.stride - p.padding + ky * p.dilation;
        const int ix = ox * p.stride - p.padding + kx * p.dilation;
        if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
        s += p.weight.at(co, ci, ky, kx) * x.at(n, ci, iy, ix);
      }
  return s;
}

}  // namespace

TEST_CASE("tensor shape and data invariants") {
  Tensor t(2, 3, 4, 5);
  CHECK(t.size() == 2 * 3 * 4 * 5);
  CHECK(t.shape_str() == "(2, 3, 4, 5)");
  CHECK_FALSE(t.has_grad());
  t.ensure_grad();
  CHECK(t.grad().size() == t.data().size());
  CHECK_THROWS_AS(Tensor::from(1, 1, 2, 2, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("tensor serialization round-trips through the flat binary format") {
  Rng rng = make_rng(11);
  Tensor t = random_tensor(2, 3, 5, 4, rng);
  std::stringstream buf;
  save_tensor(t, buf);

  const std::string bytes = buf.str();
  REQUIRE(bytes.size() == 4 + 16 + t.data().size() * 4);
  CHECK(bytes.substr(0, 4) == "MNT1");
  // little-endian shape fields
  CHECK(static_cast<unsigned char>(bytes[4]) == 2);
  CHECK(static_cast<unsigned char>(bytes[8]) == 3);
  CHECK(static_cast<unsigned char>(bytes[12]) == 5);
  CHECK(static_cast<unsigned char>(bytes[16]) == 4);

  Tensor back = load_tensor(buf);
  REQUIRE(back.same_shape(t));
  for (std::size_t i = 0; i < t.data().size(); ++i) {
    CHECK(back.data()[i] == doctest::Approx(t.data()[i]).epsilon(1e-7));
  }
}

TEST_CASE("conv2d identity kernel is exact at every dilation") {
  Rng rng = make_rng(1);
  Tensor x = random_tensor(1, 2, 33, 33, rng);
  for (int d : {1, 2, 4, 8, 16}) {
    ConvParams p = identity_kernel3(2, d);
    Tensor y = conv2d(x, p);
    REQUIRE(y.same_shape(x));
    for (std::size_t i = 0; i < x.data().size(); ++i) {
      REQUIRE(y.data()[i] == x.data()[i]);  // exact, not approximate
    }
  }
}

TEST_CASE("conv2d all-ones kernel sums the 3x3 neighborhood") {
  ConvParams p = make_conv(1, 1, 3, 1, 1, 1);
  p.weight.fill(1);
  Tensor x(1, 1, 5, 5, 3.0);
  Tensor y = conv2d(x, p);
  CHECK(y.at(0, 0, 2, 2) == doctest::Approx(27.0));  // 9c at an interior pixel
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(12.0));  // corner sees 4 taps
}

TEST_CASE("conv2d matches direct summation on random cases") {
  Rng rng = make_rng(2);
  for (int trial = 0; trial < 4; ++trial) {
    const int stride = trial % 2 ? 2 : 1;
    const int dil = trial % 2 ? 2 : 4;
    ConvParams p = make_conv(3, 2, 3, stride, dil, dil);
    for (Real& v : p.weight.data()) v = std::uniform_real_distribution<Real>(-1, 1)(rng);
    for (Real& v : p.bias) v = std::uniform_real_distribution<Real>(-1, 1)(rng);
    Tensor x = random_tensor(2, 2, 13, 11, rng);
    Tensor y = conv2d(x, p);
    for (int n = 0; n < y.n(); ++n)
      for (int co = 0; co < y.c(); ++co)
        for (int oy = 0; oy < y.h(); ++oy)
          for (int ox = 0; ox < y.w(); ++ox) {
            REQUIRE(y.at(n, co, oy, ox) ==
                    doctest::Approx(conv_ref_at(x, p, n, co, oy, ox)).epsilon(1e-10));
          }
  }
}

TEST_CASE("conv2d is linear in its input") {
  Rng rng = make_rng(3);
  ConvParams p = make_conv(2, 2, 3, 1, 2, 2);
  for (Real& v : p.weight.data()) v = std::uniform_real_distribution<Real>(-1, 1)(rng);
  Tensor x = random_tensor(1, 2, 9, 9, rng);
  Tensor y = random_tensor(1, 2, 9, 9, rng);
  const Real a = 1.7, b = -0.4;
  Tensor combo(1, 2, 9, 9);
  for (std::size_t i = 0; i < combo.data().size(); ++i) {
    combo.data()[i] = a * x.data()[i] + b * y.data()[i];
  }
  Tensor lhs = conv2d(combo, p);
  Tensor cx = conv2d(x, p), cy = conv2d(y, p);
  for (std::size_t i = 0; i < lhs.data().size(); ++i) {
    CHECK(lhs.data()[i] == doctest::Approx(a * cx.data()[i] + b * cy.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d impulse response has dilation-spaced support") {
  for (int d : {1, 2, 4, 8}) {
    ConvParams p = make_conv(1, 1, 3, 1, d, d);
    p.weight.fill(1);
    p.bias[0] = 0;
    const int res = 35, mid = res / 2;
    Tensor x(1, 1, res, res);
    x.at(0, 0, mid, mid) = 1;
    Tensor y = conv2d(x, p);
    int nonzero = 0;
    for (int oy = 0; oy < res; ++oy)
      for (int ox = 0; ox < res; ++ox) {
        if (y.at(0, 0, oy, ox) != 0) {
          ++nonzero;
          CHECK(std::abs(oy - mid) % d == 0);
          CHECK(std::abs(ox - mid) % d == 0);
          CHECK(std::abs(oy - mid) <= d);
          CHECK(std::abs(ox - mid) <= d);
        }
      }
    CHECK(nonzero == 9);
  }
}

TEST_CASE("conv2d rejects bad shapes") {
  ConvParams p = make_conv(2, 3, 3, 1, 1, 1);
  Tensor wrong_c(1, 2, 8, 8);
  CHECK_THROWS_AS(conv2d(wrong_c, p), ShapeError);
  Tensor tiny(1, 3, 1, 1);
  ConvParams nopad = make_conv(2, 3, 3, 1, 1, 0);
  CHECK_THROWS_AS(conv2d(tiny, nopad), ShapeError);
  Tensor x(1, 3, 8, 8);
  Tensor bad_grad(1, 2, 7, 7);
  CHECK_THROWS_AS(conv2d_backward(x, p, bad_grad), ShapeError);
}

TEST_CASE("conv2d_backward hand cases") {
  SUBCASE("zero grad_out gives zero gradients") {
    Rng rng = make_rng(4);
    ConvParams p = make_conv(2, 2, 3, 1, 2, 2);
    for (Real& v : p.weight.data()) v = std::uniform_real_distribution<Real>(-1, 1)(rng);
    Tensor x = random_tensor(1, 2, 6, 6, rng);
    Tensor zeros(1, 2, 6, 6);
    ConvGrads g = conv2d_backward(x, p, zeros);
    for (Real v : g.input.data()) CHECK(v == 0);
    for (Real v : g.weight.data()) CHECK(v == 0);
    for (Real v : g.bias) CHECK(v == 0);
  }
  SUBCASE("1x1 input, identity kernel, unit grad") {
    ConvParams p = identity_kernel3(1, 1);
    Tensor x(1, 1, 1, 1, 0.37);
    Tensor gy(1, 1, 1, 1, 1.0);
    ConvGrads g = conv2d_backward(x, p, gy);
    CHECK(g.input.at(0, 0, 0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("bias gradient is the per-channel sum of grad_out") {
    Rng rng = make_rng(5);
    ConvParams p = make_conv(3, 1, 3, 1, 1, 1);
    Tensor x = random_tensor(2, 1, 4, 4, rng);
    Tensor gy = random_tensor(2, 3, 4, 4, rng);
    ConvGrads g = conv2d_backward(x, p, gy);
    for (int c = 0; c < 3; ++c) {
      Real expect = 0;
      for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 16; ++i) expect += gy.data()[gy.offset(n, c, 0, 0) + i];
      CHECK(g.bias[c] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d gradient passes finite differences for input, weight and bias") {
  Rng rng = make_rng(6);
  for (int dil : {1, 2}) {
    ConvParams p = make_conv(2, 2, 3, 1, dil, dil);
    for (Real& v : p.weight.data()) v = std::uniform_real_distribution<Real>(-1, 1)(rng);
    for (Real& v : p.bias) v = std::uniform_real_distribution<Real>(-0.5, 0.5)(rng);
    Tensor x = random_tensor(2, 2, 6, 5, rng);
    Tensor w = random_tensor(2, 2, 6, 5, rng);  // fixed output weights

    GradCheckFn fn;
    fn.value = [&](const std::vector<Real>& v) {
      Tensor xi = x;
      ConvParams pi = p;
      unflatten(v, {&xi.data(), &pi.weight.data(), &pi.bias});
      return dot(conv2d(xi, pi).data(), w.data());
    };
    fn.gradient = [&](const std::vector<Real>& v) {
      Tensor xi = x;
      ConvParams pi = p;
      unflatten(v, {&xi.data(), &pi.weight.data(), &pi.bias});
      ConvGrads g = conv2d_backward(xi, pi, w);
      return flatten({&g.input.data(), &g.weight.data(), &g.bias});
    };
    const auto point = flatten({&x.data(), &p.weight.data(), &p.bias});
    GradCheckReport rep = grad_check(fn, point, {.step = 1e-6, .tolerance = 1e-7});
    CHECK_MESSAGE(rep.pass, rep.detail);  // linear map: round-off level
  }
}

TEST_CASE("batch_norm basics") {
  SUBCASE("constant channel normalizes to zero in training mode") {
    BatchNormState s = make_batch_norm(2);
    Tensor x(2, 2, 3, 3, 5.0);
    Tensor y = batch_norm(x, s, true);
    for (Real v : y.data()) CHECK(v == doctest::Approx(0.0));
  }
  SUBCASE("gamma 0 broadcasts beta") {
    BatchNormState s = make_batch_norm(1);
    s.gamma[0] = 0;
    s.beta[0] = 2.5;
    Rng rng = make_rng(7);
    Tensor x = random_tensor(1, 1, 4, 4, rng);
    Tensor y = batch_norm(x, s, true);
    for (Real v : y.data()) CHECK(v == doctest::Approx(2.5));
  }
  SUBCASE("two-value channel gives plus and minus one as epsilon vanishes") {
    BatchNormState s = make_batch_norm(1);
    s.epsilon = 1e-12;
    Tensor x = Tensor::from(1, 1, 1, 2, {0.0, 2.0});
    Tensor y = batch_norm(x, s, true);
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(y.at(0, 0, 0, 1) == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("running statistics update and drive inference mode") {
    BatchNormState s = make_batch_norm(1);
    Tensor x = Tensor::from(1, 1, 1, 2, {0.0, 2.0});
    batch_norm(x, s, true);
    CHECK(s.running_mean[0] == doctest::Approx(0.9 * 0 + 0.1 * 1.0));
    CHECK(s.running_var[0] == doctest::Approx(0.9 * 1 + 0.1 * 1.0));
    Tensor z(1, 1, 1, 2, 0.1);
    Tensor y = batch_norm(z, s, false);
    const Real expect = (0.1 - s.running_mean[0]) / std::sqrt(s.running_var[0] + s.epsilon);
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(expect));
  }
  SUBCASE("empty batch rejected") {
    BatchNormState s = make_batch_norm(1);
    Tensor x(0, 1, 2, 2);
    CHECK_THROWS_AS(batch_norm(x, s, true), ShapeError);
  }
}

TEST_CASE("batch_norm backward passes finite differences") {
  Rng rng = make_rng(8);
  BatchNormState s = make_batch_norm(2);
  std::uniform_real_distribution<Real> d(-1, 1);
  for (Real& v : s.gamma) v = 1 + 0.3 * d(rng);
  for (Real& v : s.beta) v = 0.3 * d(rng);
  Tensor x = random_tensor(2, 2, 3, 4, rng);
  Tensor w = random_tensor(2, 2, 3, 4, rng);

  GradCheckFn fn;
  fn.value = [&](const std::vector<Real>& v) {
    Tensor xi = x;
    BatchNormState si = s;
    unflatten(v, {&xi.data(), &si.gamma, &si.beta});
    return dot(batch_norm(xi, si, true).data(), w.data());
  };
  fn.gradient = [&](const std::vector<Real>& v) {
    Tensor xi = x;
    BatchNormState si = s;
    unflatten(v, {&xi.data(), &si.gamma, &si.beta});
    BnCache cache;
    batch_norm(xi, si, true, &cache);
    BnGrads g = batch_norm_backward(xi, si, cache, w);
    return flatten({&g.input.data(), &g.gamma, &g.beta});
  };
  const auto point = flatten({&x.data(), &s.gamma, &s.beta});
  GradCheckReport rep = grad_check(fn, point, {.step = 1e-5, .tolerance = 1e-8});
  CHECK_MESSAGE(rep.pass, rep.detail);
}

TEST_CASE("activations") {
  Tensor x = Tensor::from(1, 1, 1, 4, {-3.0, 0.0, 2.0, 5.0});
  Tensor r = activate(x, Activation::kRelu);
  CHECK(r.at(0, 0, 0, 0) == 0);
  CHECK(r.at(0, 0, 0, 2) == 2);
  Tensor s = activate(x, Activation::kSigmoid);
  CHECK(s.at(0, 0, 0, 1) == doctest::Approx(0.5));
  CHECK(s.at(0, 0, 0, 2) == doctest::Approx(0.8808).epsilon(1e-4));

  // analytic sigmoid' at 0 is 0.25
  Tensor zero(1, 1, 1, 1, 0.0);
  Tensor one(1, 1, 1, 1, 1.0);
  Tensor g = activate_backward(zero, Activation::kSigmoid, one);
  CHECK(g.at(0, 0, 0, 0) == doctest::Approx(0.25));
}

TEST_CASE("activation gradients pass finite differences away from kinks") {
  Rng rng = make_rng(9);
  Tensor x = random_tensor(1, 2, 4, 4, rng);
  for (Real& v : x.data()) {
    if (std::abs(v) < 0.05) v += 0.1;  // keep relu inputs off the kink
  }
  Tensor w = random_tensor(1, 2, 4, 4, rng);
  for (Activation kind : {Activation::kRelu, Activation::kSigmoid}) {
    GradCheckFn fn;
    fn.value = [&](const std::vector<Real>& v) {
      Tensor xi = x;
      xi.data() = v;
      return dot(activate(xi, kind).data(), w.data());
    };
    fn.gradient = [&](const std::vector<Real>& v) {
      Tensor xi = x;
      xi.data() = v;
      return activate_backward(xi, kind, w).data();
    };
    GradCheckOptions opts;
    opts.tolerance = 1e-8;
    if (kind == Activation::kRelu) {
      opts.kink_distance = [](const std::vector<Real>& v) {
        Real dist = 1e9;
        for (Real u : v) dist = std::min(dist, std::abs(u));
        return dist;
      };
    }
    GradCheckReport rep = grad_check(fn, x.data(), opts);
    CHECK_MESSAGE(rep.pass, rep.detail);
    CHECK_FALSE(rep.rejected);
  }
}

TEST_CASE("grad_check rejects points at a relu kink") {
  GradCheckFn fn;
  fn.value = [](const std::vector<Real>& v) { return v[0] > 0 ? v[0] : 0; };
  fn.gradient = [](const std::vector<Real>& v) {
    return std::vector<Real>{v[0] > 0 ? Real(1) : Real(0)};
  };
  GradCheckOptions opts;
  opts.kink_distance = [](const std::vector<Real>& v) { return std::abs(v[0]); };
  GradCheckReport rep = grad_check(fn, {1e-9}, opts);
  CHECK(rep.rejected);
  CHECK_FALSE(rep.pass);
}

TEST_CASE("pooling forward") {
  Tensor x = Tensor::from(1, 2, 2, 2, {1, 2, 3, 4, 0, 1, 0, 1});
  Tensor ga = pool(x, PoolKind::kGlobalAvg);
  CHECK(ga.at(0, 0, 0, 0) == doctest::Approx(2.5));
  Tensor gm = pool(x, PoolKind::kGlobalMax);
  CHECK(gm.at(0, 0, 0, 0) == 4);
  Tensor ca = pool(x, PoolKind::kChannelAvg);
  CHECK(ca.at(0, 0, 0, 0) == doctest::Approx(0.5));
  Tensor cm = pool(x, PoolKind::kChannelMax);
  CHECK(cm.at(0, 0, 1, 1) == 4);

  Tensor constant(2, 3, 4, 4, 7.0);
  Tensor avg = pool(constant, PoolKind::kGlobalAvg);
  for (Real v : avg.data()) CHECK(v == doctest::Approx(7.0));
}

TEST_CASE("pooling gradients pass finite differences away from ties") {
  Rng rng = make_rng(10);
  Tensor x = random_tensor(2, 3, 3, 3, rng);
  for (PoolKind kind : {PoolKind::kGlobalAvg, PoolKind::kGlobalMax, PoolKind::kChannelAvg,
                        PoolKind::kChannelMax}) {
    Tensor out = pool(x, kind);
    Tensor w = random_tensor(out.n(), out.c(), out.h(), out.w(), rng);
    GradCheckFn fn;
    fn.value = [&](const std::vector<Real>& v) {
      Tensor xi = x;
      xi.data() = v;
      return dot(pool(xi, kind).data(), w.data());
    };
    fn.gradient = [&](const std::vector<Real>& v) {
      Tensor xi = x;
      xi.data() = v;
      return pool_backward(xi, kind, w).data();
    };
    GradCheckReport rep = grad_check(fn, x.data(), {.step = 1e-6, .tolerance = 1e-8});
    CHECK_MESSAGE(rep.pass, rep.detail);
  }
}

TEST_CASE("bilinear upsample") {
  SUBCASE("constant stays constant at any size") {
    Tensor x(1, 2, 3, 3, 1.25);
    Tensor y = upsample_bilinear(x, 7, 5);
    for (Real v : y.data()) CHECK(v == doctest::Approx(1.25));
  }
  SUBCASE("1x1 replicates") {
    Tensor x(1, 1, 1, 1, 0.6);
    Tensor y = upsample_bilinear(x, 2, 2);
    for (Real v : y.data()) CHECK(v == doctest::Approx(0.6));
  }
  SUBCASE("1x2 to 1x4 with align-corners off") {
    Tensor x = Tensor::from(1, 1, 1, 2, {0.0, 1.0});
    Tensor y = upsample_bilinear(x, 1, 4);
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(0.0));
    CHECK(y.at(0, 0, 0, 1) == doctest::Approx(0.25));
    CHECK(y.at(0, 0, 0, 2) == doctest::Approx(0.75));
    CHECK(y.at(0, 0, 0, 3) == doctest::Approx(1.0));
  }
}

TEST_CASE("bilinear upsample gradient passes finite differences") {
  Rng rng = make_rng(12);
  Tensor x = random_tensor(1, 2, 3, 4, rng);
  Tensor w = random_tensor(1, 2, 7, 9, rng);
  GradCheckFn fn;
  fn.value = [&](const std::vector<Real>& v) {
    Tensor xi = x;
    xi.data() = v;
    return dot(upsample_bilinear(xi, 7, 9).data(), w.data());
  };
  fn.gradient = [&](const std::vector<Real>& v) {
    Tensor xi = x;
    xi.data() = v;
    (void)xi;
    return upsample_bilinear_backward(x.h(), x.w(), w).data();
  };
  GradCheckReport rep = grad_check(fn, x.data(), {.step = 1e-6, .tolerance = 1e-8});
  CHECK_MESSAGE(rep.pass, rep.detail);  // linear map
}

TEST_CASE("concat and split are adjoint") {
  Rng rng = make_rng(13);
  Tensor a = random_tensor(1, 2, 3, 3, rng);
  Tensor b = random_tensor(1, 3, 3, 3, rng);
  Tensor cat = concat_channels({&a, &b});
  REQUIRE(cat.c() == 5);
  CHECK(cat.at(0, 0, 1, 1) == a.at(0, 0, 1, 1));
  CHECK(cat.at(0, 2, 1, 1) == b.at(0, 0, 1, 1));
  auto parts = split_channels(cat, {2, 3});
  for (std::size_t i = 0; i < a.data().size(); ++i) CHECK(parts[0].data()[i] == a.data()[i]);
  for (std::size_t i = 0; i < b.data().size(); ++i) CHECK(parts[1].data()[i] == b.data()[i]);
}

TEST_CASE("finite outputs on finite inputs across ops") {
  Rng rng = make_rng(14);
  Tensor x = random_tensor(2, 4, 8, 8, rng, -50, 50);
  ConvParams p = make_conv(4, 4, 3, 1, 2, 2);
  for (Real& v : p.weight.data()) v = std::uniform_real_distribution<Real>(-2, 2)(rng);
  CHECK(conv2d(x, p).all_finite());
  BatchNormState s = make_batch_norm(4);
  CHECK(batch_norm(x, s, true).all_finite());
  CHECK(activate(x, Activation::kSigmoid).all_finite());
  CHECK(pool(x, PoolKind::kGlobalMax).all_finite());
  CHECK(upsample_bilinear(x, 11, 3).all_finite());
}
