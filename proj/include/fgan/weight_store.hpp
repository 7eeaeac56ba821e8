#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "fgan/tensor.hpp"

namespace fgan {

/// Ordered collection of named tensors. Iteration follows insertion order so
/// that serialization, parameter lists and velocity slots line up
/// deterministically across runs.
///
/// On disk ("FGW1" container, little-endian throughout):
///   magic "FGW1", then one record per tensor until EOF:
///     u32 name length | name bytes | u32 rank | u32 dims[rank] | f64 values
/// Round-trips are bit-exact.
class WeightStore {
 public:
  TensorXd& add(const std::string& name, TensorXd t);
  bool contains(const std::string& name) const { return map_.count(name) != 0; }
  TensorXd& at(const std::string& name);
  const TensorXd& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  /// Deep copy with fresh tensors (values preserved, gradients dropped).
  WeightStore clone() const;

  void set_requires_grad(bool rg);
  void zero_grad();

  std::vector<std::uint8_t> serialize() const;
  static WeightStore deserialize(const std::vector<std::uint8_t>& bytes);
  void save(const std::string& path) const;
  static WeightStore load(const std::string& path);
  std::uint64_t checksum() const;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, TensorXd> map_;
};

/// New store holding clones of every tensor whose name starts with `prefix`.
WeightStore extract_prefix(const WeightStore& store, const std::string& prefix);

/// Clones every tensor of `src` into `dst`; duplicate names are an error.
void merge_into(WeightStore& dst, const WeightStore& src);

}  // namespace fgan
