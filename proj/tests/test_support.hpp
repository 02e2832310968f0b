#pragma once

#include <initializer_list>
#include <random>
#include <vector>

#include "mirrorseg/grad_check.hpp"
#include "mirrorseg/rng.hpp"
#include "mirrorseg/tensor.hpp"

namespace mseg::test {

inline Tensor random_tensor(int n, int c, int h, int w, Rng& rng, Real lo = -1, Real hi = 1) {
  Tensor t(n, c, h, w);
  std::uniform_real_distribution<Real> dist(lo, hi);
  for (Real& v : t.data()) v = dist(rng);
  return t;
}

inline std::vector<Real> flatten(std::initializer_list<const std::vector<Real>*> parts) {
  std::vector<Real> out;
  for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
  return out;
}

inline void unflatten(const std::vector<Real>& x, std::initializer_list<std::vector<Real>*> parts) {
  std::size_t off = 0;
  for (auto* p : parts) {
    std::copy(x.begin() + off, x.begin() + off + p->size(), p->begin());
    off += p->size();
  }
}

inline Real dot(const std::vector<Real>& a, const std::vector<Real>& b) {
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace mseg::test
