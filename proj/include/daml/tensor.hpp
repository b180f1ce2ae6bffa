#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// Every backward rule is written in terms of the same differentiable
// primitives it differentiates, so when `grad()` is asked to build a graph
// for its result, the returned gradients can be differentiated again. This
// is what lets the meta-objective see through an inner gradient step.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace daml {

using Shape = std::vector<std::int64_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when an input sequence is shorter than a temporal kernel stack needs.
class DemoTooShortError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor;

namespace detail {

using BackwardFn = std::function<std::vector<Tensor>(
    const std::vector<Tensor>& inputs, const Tensor& out, const Tensor& grad)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

}  // namespace detail

/// Immutable n-dimensional array of doubles, optionally part of a graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::int64_t dim(std::size_t i) const;
  std::size_t numel() const;
  std::span<const double> data() const;
  double operator[](std::size_t i) const { return data()[i]; }
  double item() const;
  bool requires_grad() const;
  const char* op_name() const;

  /// Same values, cut from the graph.
  Tensor detach(bool requires_grad = false) const;

  /// Identity of the underlying graph node.
  const detail::Node* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(const char* op, Shape shape, std::vector<double> value,
                        std::vector<Tensor> inputs, detail::BackwardFn backward);
  friend std::vector<Tensor> grad(const Tensor& output,
                                  std::span<const Tensor> inputs,
                                  bool retain_higher_order);
};

/// Whether newly created ops record graph edges on this thread.
bool grad_mode_enabled();

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

/// Builds a result tensor; records `inputs` and `backward` only when grad mode
/// is on and some input requires grad.
Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<Tensor> inputs, detail::BackwardFn backward);

/// d(output)/d(inputs[i]) for scalar `output`. Inputs that `output` does not
/// depend on get zero gradients. With `retain_higher_order` the results are
/// themselves graph nodes and can be passed to another `grad` call.
std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> inputs,
                         bool retain_higher_order = false);

using IndexMap = std::shared_ptr<const std::vector<std::int32_t>>;

// Elementwise (identical shapes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor pow_scalar(const Tensor& a, double p);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor abs(const Tensor& a);
/// 1/a, with 0 where a == 0.
Tensor safe_recip(const Tensor& a);
/// Elementwise clamp whose backward passes the gradient inside [lo, hi] and
/// blocks it outside.
Tensor clip(const Tensor& a, double lo, double hi);
/// Identity forward, gradient multiplied by `factor` on the way back.
Tensor grad_scale(const Tensor& a, double factor);

// Layout and indexing.
Tensor reshape(const Tensor& a, Shape shape);
/// out[i] = a[idx[i]] (0 where idx[i] < 0).
Tensor gather(const Tensor& a, IndexMap idx, Shape out_shape);
/// out[idx[i]] += a[i] (entries with idx[i] < 0 dropped).
Tensor scatter_add(const Tensor& a, IndexMap idx, Shape out_shape);
Tensor transpose(const Tensor& a);
/// Concatenates 2-D tensors with equal row counts along columns.
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Concatenates tensors along the first axis (trailing dims must agree).
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::int64_t start, std::int64_t count);
Tensor slice_rows(const Tensor& a, std::int64_t start, std::int64_t count);
/// [C] -> [rows x C]
Tensor broadcast_rows(const Tensor& v, std::int64_t rows);
/// [N] -> [N x cols]
Tensor broadcast_cols(const Tensor& v, std::int64_t cols);
/// scalar -> shape
Tensor broadcast_scalar(const Tensor& s, Shape shape);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// [N x C] -> [C]
Tensor sum_rows(const Tensor& a);
/// [N x C] -> [N]
Tensor sum_cols(const Tensor& a);
/// [N x C] -> [N], sums consecutive column groups of width `group`: [N x C/group].
Tensor sum_col_groups(const Tensor& a, std::int64_t group);
/// [N x M] -> [N]
Tensor logsumexp_rows(const Tensor& a);
/// Euclidean norm of all entries; gradient defined as 0 at the origin.
Tensor l2_norm(const Tensor& a);

// Linear algebra and network primitives.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);
/// [N x C] + bias[C]
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
/// Row-wise layer normalization with gain/offset over the last axis.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& offset,
                  double eps = 1e-6);

/// Valid temporal cross-correlation.
/// input [T x Cin], kernels [K x Cin x Cout], bias [Cout] -> [T-K+1 x Cout].
Tensor conv1d_valid(const Tensor& input, const Tensor& kernels,
                    const Tensor& bias);

/// Valid strided 2-D cross-correlation on NHWC batches.
/// input [N x H x W x Cin], kernels [KH x KW x Cin x Cout], bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
              std::int64_t stride);

namespace testing {
/// Gradient multiplier applied inside the convolution primitives. 1.0 in
/// normal operation; gradient-check fixtures set it to inject a fault.
void set_conv_backward_fault(double factor);
double conv_backward_fault();
}  // namespace testing

}  // namespace daml
