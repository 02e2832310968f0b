#include "mirrorseg/params.hpp"

#include <cstring>
#include <istream>
#include <ostream>

#include "mirrorseg/errors.hpp"

namespace mseg {

int ParamStore::add(std::string name, std::vector<Real>* value, std::array<int, 4> shape,
                    bool learnable, bool bn_scale_bias) {
  if (index_.count(name)) throw StateError("duplicate parameter name: " + name);
  const std::size_t expect = static_cast<std::size_t>(shape[0]) * shape[1] * shape[2] * shape[3];
  if (!value || value->size() != expect) {
    throw ShapeError("parameter " + name + ": value size does not match declared shape");
  }
  ParamSlot s;
  s.name = std::move(name);
  s.value = value;
  s.shape = shape;
  s.learnable = learnable;
  s.bn_scale_bias = bn_scale_bias;
  slots_.push_back(std::move(s));
  const int id = static_cast<int>(slots_.size()) - 1;
  index_[slots_.back().name] = id;
  return id;
}

int ParamStore::id_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("unknown parameter: " + name);
  return it->second;
}

void ParamStore::accumulate_grad(int id, const std::vector<Real>& g) {
  ParamSlot& s = slots_[id];
  if (g.size() != s.value->size()) {
    throw ShapeError("gradient size mismatch for parameter " + s.name);
  }
  if (s.grad.empty()) s.grad.assign(g.size(), Real(0));
  for (std::size_t i = 0; i < g.size(); ++i) s.grad[i] += g[i];
}

void ParamStore::scale_grads(Real factor) {
  for (ParamSlot& s : slots_) {
    for (Real& v : s.grad) v *= factor;
  }
}

void ParamStore::clear_grads() {
  for (ParamSlot& s : slots_) s.grad.clear();
}

std::int64_t ParamStore::learnable_count() const {
  std::int64_t n = 0;
  for (const ParamSlot& s : slots_)
    if (s.learnable) n += static_cast<std::int64_t>(s.value->size());
  return n;
}

std::int64_t ParamStore::total_count() const {
  std::int64_t n = 0;
  for (const ParamSlot& s : slots_) n += static_cast<std::int64_t>(s.value->size());
  return n;
}

namespace {

constexpr char kMagic[4] = {'M', 'N', 'P', 'S'};

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
  if (!in) throw IoError("truncated parameter stream");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void ParamStore::save(std::ostream& out) const {
  out.write(kMagic, 4);
  put_u32le(out, static_cast<std::uint32_t>(slots_.size()));
  for (const ParamSlot& s : slots_) {
    put_u32le(out, static_cast<std::uint32_t>(s.name.size()));
    out.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
    Tensor t = Tensor::from(s.shape[0], s.shape[1], s.shape[2], s.shape[3], *s.value);
    save_tensor(t, out);
  }
  if (!out) throw IoError("failed to write parameter stream");
}

void ParamStore::load(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("bad parameter-store magic, expected MNPS");
  }
  const std::uint32_t n = get_u32le(in);
  if (n != slots_.size()) {
    throw IoError("checkpoint holds " + std::to_string(n) + " parameters, network has " +
                  std::to_string(slots_.size()));
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t len = get_u32le(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw IoError("truncated parameter stream");
    const int id = index_.count(name) ? index_.at(name) : -1;
    if (id < 0) throw IoError("checkpoint parameter not in network: " + name);
    Tensor t = load_tensor(in);
    ParamSlot& s = slots_[id];
    if (t.data().size() != s.value->size()) {
      throw IoError("checkpoint parameter " + name + " has shape " + t.shape_str());
    }
    *s.value = t.data();
  }
}

}  // namespace mseg
