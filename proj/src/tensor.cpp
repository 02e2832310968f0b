#include "mirrorseg/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mirrorseg/errors.hpp"

namespace mseg {

Tensor::Tensor(int n, int c, int h, int w, Real fill)
    : n_(n), c_(c), h_(h), w_(w) {
  if (n < 0 || c < 0 || h < 0 || w < 0) {
    throw ShapeError("tensor dimensions must be non-negative");
  }
  data_.assign(static_cast<std::size_t>(n) * c * h * w, fill);
}

Tensor Tensor::from(int n, int c, int h, int w, std::vector<Real> values) {
  Tensor t;
  t.n_ = n;
  t.c_ = c;
  t.h_ = h;
  t.w_ = w;
  const auto expect = static_cast<std::size_t>(n) * c * h * w;
  if (values.size() != expect) {
    std::ostringstream os;
    os << "tensor data length " << values.size() << " does not match shape ("
       << n << ", " << c << ", " << h << ", " << w << ")";
    throw ShapeError(os.str());
  }
  t.data_ = std::move(values);
  return t;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(" << n_ << ", " << c_ << ", " << h_ << ", " << w_ << ")";
  return os.str();
}

std::vector<Real>& Tensor::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), Real(0));
  return grad_;
}

void Tensor::fill(Real v) {
  std::fill(data_.begin(), data_.end(), v);
}

bool Tensor::all_finite() const {
  for (Real v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {

constexpr char kMagic[4] = {'M', 'N', 'T', '1'};

void put_u32le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated tensor stream");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_tensor(const Tensor& t, std::ostream& out) {
  out.write(kMagic, 4);
  put_u32le(out, static_cast<std::uint32_t>(t.n()));
  put_u32le(out, static_cast<std::uint32_t>(t.c()));
  put_u32le(out, static_cast<std::uint32_t>(t.h()));
  put_u32le(out, static_cast<std::uint32_t>(t.w()));
  for (Real v : t.data()) {
    const float f = static_cast<float>(v);
    put_u32le(out, std::bit_cast<std::uint32_t>(f));
  }
  if (!out) throw IoError("failed to write tensor stream");
}

Tensor load_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("bad tensor magic, expected MNT1");
  }
  const int n = static_cast<int>(get_u32le(in));
  const int c = static_cast<int>(get_u32le(in));
  const int h = static_cast<int>(get_u32le(in));
  const int w = static_cast<int>(get_u32le(in));
  const std::size_t count = static_cast<std::size_t>(n) * c * h * w;
  std::vector<Real> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    values[i] = static_cast<Real>(std::bit_cast<float>(get_u32le(in)));
  }
  return Tensor::from(n, c, h, w, std::move(values));
}

void save_tensor_file(const Tensor& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  save_tensor(t, out);
}

Tensor load_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  return load_tensor(in);
}

}  // namespace mseg
