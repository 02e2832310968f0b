#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace mseg {

// Computation precision for the whole library. Tight-tolerance tests assume
// double; the code compiles unchanged with float at relaxed tolerances.
using Real = double;

// Dense 4-D array in (N, C, H, W) layout, row-major, with an optional
// gradient buffer of the same shape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, Real fill = Real(0));

  static Tensor from(int n, int c, int h, int w, std::vector<Real> values);

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  bool same_shape(const Tensor& other) const {
    return n_ == other.n_ && c_ == other.c_ && h_ == other.h_ && w_ == other.w_;
  }
  std::string shape_str() const;

  Real& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  Real at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }
  std::int64_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::int64_t>(n) * c_ + c) * h_ + h) * w_ + w;
  }

  std::vector<Real>& data() { return data_; }
  const std::vector<Real>& data() const { return data_; }
  Real* raw() { return data_.data(); }
  const Real* raw() const { return data_.data(); }

  // Gradient buffer. Absent until ensure_grad(); shape always matches data.
  bool has_grad() const { return !grad_.empty(); }
  std::vector<Real>& ensure_grad();
  std::vector<Real>& grad() { return grad_; }
  const std::vector<Real>& grad() const { return grad_; }
  void clear_grad() { grad_.clear(); }

  void fill(Real v);
  bool all_finite() const;

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<Real> data_;
  std::vector<Real> grad_;
};

// Flat binary tensor format: magic "MNT1", four little-endian uint32 shape
// fields (N, C, H, W), then N*C*H*W little-endian IEEE-754 32-bit floats.
void save_tensor(const Tensor& t, std::ostream& out);
Tensor load_tensor(std::istream& in);
void save_tensor_file(const Tensor& t, const std::string& path);
Tensor load_tensor_file(const std::string& path);

}  // namespace mseg
