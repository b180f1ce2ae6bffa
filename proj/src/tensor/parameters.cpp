#include "daml/parameters.hpp"

#include <cmath>
#include <stdexcept>

namespace daml {

void ParameterVector::add(std::string name, Tensor value) {
  if (!value.defined()) throw std::invalid_argument("parameter '" + name + "' is undefined");
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value)});
}

bool ParameterVector::contains(std::string_view name) const {
  return index_.count(std::string(name)) > 0;
}

const Tensor& ParameterVector::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return entries_[it->second].value;
}

void ParameterVector::set(std::string_view name, Tensor value) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  auto& slot = entries_[it->second].value;
  if (slot.shape() != value.shape()) {
    throw std::invalid_argument("shape mismatch setting '" + std::string(name) + "'");
  }
  slot = std::move(value);
}

std::size_t ParameterVector::total_len() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

std::vector<Tensor> ParameterVector::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.value);
  return out;
}

std::vector<std::string> ParameterVector::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

bool ParameterVector::same_layout(const ParameterVector& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (entries_[i].value.shape() != other.entries_[i].value.shape()) return false;
  }
  return true;
}

std::vector<double> ParameterVector::flatten() const {
  std::vector<double> out;
  out.reserve(total_len());
  for (const auto& e : entries_) out.insert(out.end(), e.value.data().begin(), e.value.data().end());
  return out;
}

ParameterVector ParameterVector::unflatten(const ParameterVector& layout,
                                           std::span<const double> flat, bool requires_grad) {
  if (flat.size() != layout.total_len()) {
    throw std::invalid_argument("unflatten: expected " + std::to_string(layout.total_len()) +
                                " values, got " + std::to_string(flat.size()));
  }
  ParameterVector out;
  std::size_t off = 0;
  for (const auto& e : layout.entries_) {
    const auto n = e.value.numel();
    out.add(e.name, Tensor::from_data(e.value.shape(),
                                      {flat.begin() + off, flat.begin() + off + n}, requires_grad));
    off += n;
  }
  return out;
}

ParameterVector ParameterVector::axpy(double c, const ParameterVector& other) const {
  if (!same_layout(other)) throw std::invalid_argument("axpy: parameter layouts differ");
  ParameterVector out;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    out.add(entries_[i].name, daml::add(entries_[i].value, daml::scale(other.entries_[i].value, c)));
  }
  return out;
}

ParameterVector ParameterVector::detached(bool requires_grad) const {
  ParameterVector out;
  for (const auto& e : entries_) out.add(e.name, e.value.detach(requires_grad));
  return out;
}

ParameterVector ParameterVector::with_values(const std::vector<Tensor>& tensors) const {
  if (tensors.size() != entries_.size()) throw std::invalid_argument("with_values: count mismatch");
  ParameterVector out;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (tensors[i].shape() != entries_[i].value.shape()) {
      throw std::invalid_argument("with_values: shape mismatch for '" + entries_[i].name + "'");
    }
    out.add(entries_[i].name, tensors[i]);
  }
  return out;
}

ParameterVector ParameterVector::merged(const ParameterVector& other) const {
  ParameterVector out = *this;
  for (const auto& e : other.entries_) out.add(e.name, e.value);
  return out;
}

ParameterVector ParameterVector::subset(const ParameterVector& layout) const {
  ParameterVector out;
  for (const auto& e : layout.entries_) out.add(e.name, at(e.name));
  return out;
}

ParameterVector grad(const Tensor& output, const ParameterVector& inputs,
                     bool retain_higher_order) {
  const auto ts = inputs.tensors();
  return inputs.with_values(grad(output, std::span<const Tensor>(ts), retain_higher_order));
}

Tensor fan_in_uniform(Shape shape, std::int64_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v));
}

}  // namespace daml
