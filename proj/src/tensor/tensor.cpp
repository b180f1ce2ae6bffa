#include "daml/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace daml {

namespace {
thread_local bool g_grad_mode = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw std::invalid_argument("non-positive dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->shape;
}

std::int64_t Tensor::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size()) throw std::out_of_range("dimension index out of range");
  return s[i];
}

std::size_t Tensor::numel() const { return data().size(); }

std::span<const double> Tensor::data() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor Tensor::detach(bool requires_grad) const {
  return from_data(shape(), node_->value, requires_grad);
}

bool grad_mode_enabled() { return g_grad_mode; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_mode) { g_grad_mode = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_mode = previous_; }

Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<Tensor> inputs, detail::BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_mode) {
    const bool tracked = std::any_of(inputs.begin(), inputs.end(),
                                     [](const Tensor& t) { return t.requires_grad(); });
    if (tracked) {
      node->requires_grad = true;
      node->inputs = std::move(inputs);
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> inputs,
                         bool retain_higher_order) {
  if (output.numel() != 1) {
    throw std::invalid_argument("grad() requires a scalar output, got shape " +
                                shape_str(output.shape()));
  }
  using NodePtr = detail::Node*;
  std::unordered_set<NodePtr> targets;
  for (const auto& t : inputs) targets.insert(const_cast<NodePtr>(t.id()));

  // Post-order over tracked nodes: every node appears after all its inputs.
  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_map<NodePtr, bool> needed;
  if (output.requires_grad()) {
    struct Frame {
      std::shared_ptr<detail::Node> node;
      std::size_t next;
    };
    std::unordered_set<NodePtr> visited;
    std::vector<Frame> stack;
    stack.push_back({output.node_, 0});
    visited.insert(output.node_.get());
    while (!stack.empty()) {
      auto& top = stack.back();
      if (top.next < top.node->inputs.size()) {
        const auto& child = top.node->inputs[top.next++].node_;
        if (child && child->requires_grad && !visited.count(child.get())) {
          visited.insert(child.get());
          stack.push_back({child, 0});
        }
        continue;
      }
      auto node = top.node;
      stack.pop_back();
      bool need = targets.count(node.get()) > 0;
      for (const auto& in : node->inputs) {
        if (in.requires_grad() && needed[in.node_.get()]) need = true;
      }
      needed[node.get()] = need;
      order.push_back(std::move(node));
    }
  }

  GradModeGuard mode(retain_higher_order);
  std::unordered_map<NodePtr, Tensor> grads;
  if (output.requires_grad() && needed[output.node_.get()]) {
    grads[output.node_.get()] = Tensor::full(output.shape(), 1.0);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& node = *it;
    auto g = grads.find(node.get());
    if (g == grads.end() || !node->backward) continue;
    bool any_needed = false;
    for (const auto& in : node->inputs) {
      if (in.requires_grad() && needed[in.node_.get()]) any_needed = true;
    }
    if (!any_needed) continue;
    const Tensor self(node);
    auto in_grads = node->backward(node->inputs, self, g->second);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const auto& in = node->inputs[i];
      if (!in.requires_grad() || !needed[in.node_.get()] || !in_grads[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(in.node_.get(), in_grads[i]);
      if (!inserted) slot->second = add(slot->second, in_grads[i]);
    }
    // Free intermediate gradients that are no longer reachable by targets.
    if (!targets.count(node.get())) grads.erase(node.get());
  }

  std::vector<Tensor> result;
  result.reserve(inputs.size());
  for (const auto& t : inputs) {
    auto g = grads.find(const_cast<NodePtr>(t.id()));
    result.push_back(g != grads.end() ? g->second : Tensor::zeros(t.shape()));
  }
  return result;
}

}  // namespace daml
