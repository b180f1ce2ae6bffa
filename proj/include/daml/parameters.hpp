#pragma once

#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "daml/tensor.hpp"

namespace daml {

/// Ordered, named collection of tensors. Insertion order is the canonical
/// order for flattening, serialization and optimizer state.
class ParameterVector {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  void set(std::string_view name, Tensor value);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t total_len() const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::vector<std::string> names() const;

  /// True when names (in order) and shapes agree.
  bool same_layout(const ParameterVector& other) const;

  std::vector<double> flatten() const;
  static ParameterVector unflatten(const ParameterVector& layout, std::span<const double> flat,
                                   bool requires_grad = false);

  /// this + c * other, recorded in the graph when either side is tracked.
  ParameterVector axpy(double c, const ParameterVector& other) const;

  /// Copies of every entry cut from the graph; leaves when `requires_grad`.
  ParameterVector detached(bool requires_grad = false) const;

  /// Same entries with `tensors` substituted in order.
  ParameterVector with_values(const std::vector<Tensor>& tensors) const;

  /// Union of two vectors with disjoint names; `this` first.
  ParameterVector merged(const ParameterVector& other) const;
  /// Entries of `this` whose names also appear in `layout`, in `layout` order.
  ParameterVector subset(const ParameterVector& layout) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradient of scalar `output` with respect to every entry of `inputs`.
ParameterVector grad(const Tensor& output, const ParameterVector& inputs,
                     bool retain_higher_order = false);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.
Tensor fan_in_uniform(Shape shape, std::int64_t fan_in, std::mt19937_64& rng);

}  // namespace daml
