#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mirrorseg/tensor.hpp"

namespace mseg {

// One named parameter. The value storage lives inside a layer object; the
// store holds the gradient and momentum slots plus bookkeeping flags.
struct ParamSlot {
  std::string name;
  std::vector<Real>* value = nullptr;
  std::array<int, 4> shape{1, 1, 1, 1};  // (N, C, H, W) for serialization
  std::vector<Real> grad;      // empty until accumulated
  std::vector<Real> velocity;  // momentum buffer, lazily sized
  bool learnable = true;
  bool bn_scale_bias = false;  // gamma/beta, for the weight-decay exemption flag
};

// Named collection of learnable tensors with gradient and momentum slots.
// Registration order is the canonical iteration order.
class ParamStore {
 public:
  int add(std::string name, std::vector<Real>* value, std::array<int, 4> shape,
          bool learnable = true, bool bn_scale_bias = false);

  ParamSlot& slot(int id) { return slots_[id]; }
  const ParamSlot& slot(int id) const { return slots_[id]; }
  std::size_t count() const { return slots_.size(); }
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  int id_of(const std::string& name) const;

  // Adds `g` into the gradient slot, allocating it on first use.
  void accumulate_grad(int id, const std::vector<Real>& g);
  void scale_grads(Real factor);
  void clear_grads();

  std::int64_t learnable_count() const;
  std::int64_t total_count() const;

  // Checkpoint payload: "MNPS", uint32 entry count, then per entry a
  // length-prefixed name followed by the flat tensor record of the values.
  void save(std::ostream& out) const;
  void load(std::istream& in);  // into already-registered slots, by name

  std::vector<ParamSlot>& slots() { return slots_; }
  const std::vector<ParamSlot>& slots() const { return slots_; }

 private:
  std::vector<ParamSlot> slots_;
  std::map<std::string, int> index_;
};

}  // namespace mseg
