#include <cblas.h>

#include <cmath>
#include <map>
#include <numeric>
#include <mutex>
#include <tuple>

#include "daml/tensor.hpp"

namespace daml {

namespace {

using detail::BackwardFn;

std::vector<Tensor> grads(std::initializer_list<Tensor> g) { return {g}; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.ndim() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_str(a.shape()));
  }
}

template <typename F>
std::vector<double> map_values(const Tensor& a, F f) {
  auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return out;
}

template <typename F>
std::vector<double> zip_values(const Tensor& a, const Tensor& b, F f) {
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
  return out;
}

Tensor constant_like(const Tensor& a, std::vector<double> values) {
  return Tensor::from_data(a.shape(), std::move(values));
}

IndexMap make_index(std::vector<std::int32_t> idx) {
  return std::make_shared<const std::vector<std::int32_t>>(std::move(idx));
}

double g_conv_fault = 1.0;

}  // namespace

namespace testing {
void set_conv_backward_fault(double factor) { g_conv_fault = factor; }
double conv_backward_fault() { return g_conv_fault; }
}  // namespace testing

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return make_op("add", a.shape(), zip_values(a, b, std::plus<>{}), {a, b},
                 [](const auto&, const auto&, const Tensor& g) { return grads({g, g}); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return make_op("sub", a.shape(), zip_values(a, b, std::minus<>{}), {a, b},
                 [](const auto&, const auto&, const Tensor& g) { return grads({g, neg(g)}); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return make_op("mul", a.shape(), zip_values(a, b, std::multiplies<>{}), {a, b},
                 [](const std::vector<Tensor>& in, const auto&, const Tensor& g) {
                   return grads({mul(g, in[1]), mul(g, in[0])});
                 });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double c) {
  return make_op("scale", a.shape(), map_values(a, [c](double x) { return c * x; }), {a},
                 [c](const auto&, const auto&, const Tensor& g) { return grads({scale(g, c)}); });
}

Tensor add_scalar(const Tensor& a, double c) {
  return make_op("add_scalar", a.shape(), map_values(a, [c](double x) { return x + c; }), {a},
                 [](const auto&, const auto&, const Tensor& g) { return grads({g}); });
}

Tensor pow_scalar(const Tensor& a, double p) {
  std::vector<double> v;
  if (p == 1.0) {
    v.assign(a.data().begin(), a.data().end());
  } else if (p == 2.0) {
    v = map_values(a, [](double x) { return x * x; });
  } else if (p == 0.0) {
    v.assign(a.numel(), 1.0);
  } else {
    v = map_values(a, [p](double x) { return std::pow(x, p); });
  }
  return make_op("pow", a.shape(), std::move(v), {a},
                 [p](const std::vector<Tensor>& in, const auto&, const Tensor& g) {
                   if (p == 0.0) return grads({Tensor::zeros(in[0].shape())});
                   return grads({mul(g, scale(pow_scalar(in[0], p - 1.0), p))});
                 });
}

Tensor exp(const Tensor& a) {
  return make_op("exp", a.shape(), map_values(a, [](double x) { return std::exp(x); }), {a},
                 [](const auto&, const Tensor& out, const Tensor& g) { return grads({mul(g, out)}); });
}

Tensor log(const Tensor& a) {
  return make_op("log", a.shape(), map_values(a, [](double x) { return std::log(x); }), {a},
                 [](const std::vector<Tensor>& in, const auto&, const Tensor& g) {
                   return grads({mul(g, pow_scalar(in[0], -1.0))});
                 });
}

Tensor relu(const Tensor& a) {
  return make_op("relu", a.shape(), map_values(a, [](double x) { return x > 0.0 ? x : 0.0; }),
                 {a}, [](const std::vector<Tensor>& in, const auto&, const Tensor& g) {
                   auto mask = constant_like(in[0], map_values(in[0], [](double x) {
                                               return x > 0.0 ? 1.0 : 0.0;
                                             }));
                   return grads({mul(g, mask)});
                 });
}

Tensor sigmoid(const Tensor& a) {
  auto v = map_values(a, [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return make_op("sigmoid", a.shape(), std::move(v), {a},
                 [](const auto&, const Tensor& out, const Tensor& g) {
                   return grads({mul(g, mul(out, add_scalar(neg(out), 1.0)))});
                 });
}

Tensor tanh(const Tensor& a) {
  return make_op("tanh", a.shape(), map_values(a, [](double x) { return std::tanh(x); }), {a},
                 [](const auto&, const Tensor& out, const Tensor& g) {
                   return grads({mul(g, add_scalar(neg(mul(out, out)), 1.0))});
                 });
}

Tensor softplus(const Tensor& a) {
  auto v = map_values(a, [](double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
  });
  return make_op("softplus", a.shape(), std::move(v), {a},
                 [](const std::vector<Tensor>& in, const auto&, const Tensor& g) {
                   return grads({mul(g, sigmoid(in[0]))});
                 });
}

Tensor abs(const Tensor& a) {
  return make_op("abs", a.shape(), map_values(a, [](double x) { return std::fabs(x); }), {a},
                 [](const std::vector<Tensor>& in, const auto&, const Tensor& g) {
                   auto sign = constant_like(in[0], map_values(in[0], [](double x) {
                                               return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                                             }));
                   return grads({mul(g, sign)});
                 });
}

Tensor safe_recip(const Tensor& a) {
  return make_op("safe_recip", a.shape(),
                 map_values(a, [](double x) { return x == 0.0 ? 0.0 : 1.0 / x; }), {a},
                 [](const auto&, const Tensor& out, const Tensor& g) {
                   return grads({neg(mul(g, mul(out, out)))});
                 });
}

Tensor clip(const Tensor& a, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("clip: lo must be < hi");
  return make_op("clip", a.shape(), map_values(a, [lo, hi](double x) { return std::clamp(x, lo, hi); }),
                 {a}, [lo, hi](const std::vector<Tensor>& in, const auto&, const Tensor& g) {
                   auto mask = constant_like(in[0], map_values(in[0], [lo, hi](double x) {
                                               return (x >= lo && x <= hi) ? 1.0 : 0.0;
                                             }));
                   return grads({mul(g, mask)});
                 });
}

Tensor grad_scale(const Tensor& a, double factor) {
  return make_op("grad_scale", a.shape(), {a.data().begin(), a.data().end()}, {a},
                 [factor](const auto&, const auto&, const Tensor& g) {
                   return grads({scale(g, factor)});
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return make_op("reshape", std::move(shape), {a.data().begin(), a.data().end()}, {a},
                 [](const std::vector<Tensor>& in, const auto&, const Tensor& g) {
                   return grads({reshape(g, in[0].shape())});
                 });
}

Tensor gather(const Tensor& a, IndexMap idx, Shape out_shape) {
  if (shape_numel(out_shape) != idx->size()) {
    throw std::invalid_argument("gather: index map size does not match output shape");
  }
  auto in = a.data();
  std::vector<double> out(idx->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto j = (*idx)[i];
    out[i] = j >= 0 ? in[static_cast<std::size_t>(j)] : 0.0;
  }
  return make_op("gather", std::move(out_shape), std::move(out), {a},
                 [idx](const std::vector<Tensor>& in, const auto&, const Tensor& g) {
                   return grads({scatter_add(g, idx, in[0].shape())});
                 });
}

Tensor scatter_add(const Tensor& a, IndexMap idx, Shape out_shape) {
  if (a.numel() != idx->size()) {
    throw std::invalid_argument("scatter_add: index map size does not match input");
  }
  auto in = a.data();
  std::vector<double> out(shape_numel(out_shape), 0.0);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const auto j = (*idx)[i];
    if (j >= 0) out[static_cast<std::size_t>(j)] += in[i];
  }
  return make_op("scatter_add", std::move(out_shape), std::move(out), {a},
                 [idx](const std::vector<Tensor>& in, const auto&, const Tensor& g) {
                   return grads({gather(g, idx, in[0].shape())});
                 });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const auto rows = a.dim(0), cols = a.dim(1);
  std::vector<std::int32_t> idx(a.numel());
  for (std::int64_t c = 0; c < cols; ++c)
    for (std::int64_t r = 0; r < rows; ++r) idx[c * rows + r] = static_cast<std::int32_t>(r * cols + c);
  return gather(a, make_index(std::move(idx)), {cols, rows});
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const auto rows = parts[0].dim(0);
  std::int64_t cols = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    cols += p.dim(1);
  }
  std::vector<double> out(static_cast<std::size_t>(rows * cols));
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const auto w = p.dim(1);
    auto d = p.data();
    for (std::int64_t r = 0; r < rows; ++r)
      std::copy_n(d.begin() + r * w, w, out.begin() + r * cols + off);
    offsets.push_back(off);
    off += w;
  }
  return make_op("concat_cols", {rows, cols}, std::move(out), parts,
                 [offsets](const std::vector<Tensor>& in, const auto&, const Tensor& g) {
                   std::vector<Tensor> out;
                   for (std::size_t i = 0; i < in.size(); ++i) {
                     out.push_back(in[i].requires_grad() ? slice_cols(g, offsets[i], in[i].dim(1))
                                                         : Tensor());
                   }
                   return out;
                 });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::int64_t rows = 0;
  std::vector<double> out;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    if (p.ndim() < 1 || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      throw std::invalid_argument("concat_rows: trailing shape mismatch");
    }
    offsets.push_back(rows);
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return make_op("concat_rows", std::move(shape), std::move(out), parts,
                 [offsets](const std::vector<Tensor>& in, const auto&, const Tensor& g) {
                   std::vector<Tensor> out;
                   for (std::size_t i = 0; i < in.size(); ++i) {
                     out.push_back(in[i].requires_grad() ? slice_rows(g, offsets[i], in[i].dim(0))
                                                         : Tensor());
                   }
                   return out;
                 });
}

Tensor slice_cols(const Tensor& a, std::int64_t start, std::int64_t count) {
  require_rank(a, 2, "slice_cols");
  const auto rows = a.dim(0), cols = a.dim(1);
  if (start < 0 || count <= 0 || start + count > cols) throw std::out_of_range("slice_cols");
  std::vector<std::int32_t> idx(static_cast<std::size_t>(rows * count));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < count; ++c)
      idx[r * count + c] = static_cast<std::int32_t>(r * cols + start + c);
  return gather(a, make_index(std::move(idx)), {rows, count});
}

Tensor slice_rows(const Tensor& a, std::int64_t start, std::int64_t count) {
  if (a.ndim() < 1) throw std::invalid_argument("slice_rows: scalar input");
  const auto rows = a.dim(0);
  if (start < 0 || count <= 0 || start + count > rows) throw std::out_of_range("slice_rows");
  const auto inner = static_cast<std::int64_t>(a.numel()) / rows;
  std::vector<std::int32_t> idx(static_cast<std::size_t>(count * inner));
  std::iota(idx.begin(), idx.end(), static_cast<std::int32_t>(start * inner));
  Shape shape = a.shape();
  shape[0] = count;
  return gather(a, make_index(std::move(idx)), std::move(shape));
}

Tensor broadcast_rows(const Tensor& v, std::int64_t rows) {
  require_rank(v, 1, "broadcast_rows");
  const auto cols = v.dim(0);
  std::vector<std::int32_t> idx(static_cast<std::size_t>(rows * cols));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) idx[r * cols + c] = static_cast<std::int32_t>(c);
  return gather(v, make_index(std::move(idx)), {rows, cols});
}

Tensor broadcast_cols(const Tensor& v, std::int64_t cols) {
  require_rank(v, 1, "broadcast_cols");
  const auto rows = v.dim(0);
  std::vector<std::int32_t> idx(static_cast<std::size_t>(rows * cols));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) idx[r * cols + c] = static_cast<std::int32_t>(r);
  return gather(v, make_index(std::move(idx)), {rows, cols});
}

Tensor broadcast_scalar(const Tensor& s, Shape shape) {
  if (s.numel() != 1) throw std::invalid_argument("broadcast_scalar: input is not a scalar");
  const auto n = shape_numel(shape);
  return gather(s, make_index(std::vector<std::int32_t>(n, 0)), std::move(shape));
}

Tensor sum(const Tensor& a) {
  return scatter_add(a, make_index(std::vector<std::int32_t>(a.numel(), 0)), {});
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_rows(const Tensor& a) {
  require_rank(a, 2, "sum_rows");
  const auto rows = a.dim(0), cols = a.dim(1);
  std::vector<std::int32_t> idx(a.numel());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) idx[r * cols + c] = static_cast<std::int32_t>(c);
  return scatter_add(a, make_index(std::move(idx)), {cols});
}

Tensor sum_cols(const Tensor& a) {
  require_rank(a, 2, "sum_cols");
  return reshape(sum_col_groups(a, a.dim(1)), {a.dim(0)});
}

Tensor sum_col_groups(const Tensor& a, std::int64_t group) {
  require_rank(a, 2, "sum_col_groups");
  const auto rows = a.dim(0), cols = a.dim(1);
  if (group <= 0 || cols % group != 0) throw std::invalid_argument("sum_col_groups: bad group");
  std::vector<std::int32_t> idx(a.numel());
  for (std::int64_t i = 0; i < rows * cols; ++i) idx[i] = static_cast<std::int32_t>(i / group);
  return scatter_add(a, make_index(std::move(idx)), {rows, cols / group});
}

Tensor logsumexp_rows(const Tensor& a) {
  require_rank(a, 2, "logsumexp_rows");
  const auto rows = a.dim(0), cols = a.dim(1);
  auto d = a.data();
  std::vector<double> out(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto* row = d.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double s = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
    out[r] = mx + std::log(s);
  }
  return make_op("logsumexp_rows", {rows}, std::move(out), {a},
                 [cols](const std::vector<Tensor>& in, const Tensor& out, const Tensor& g) {
                   auto p = exp(sub(in[0], broadcast_cols(out, cols)));
                   return grads({mul(p, broadcast_cols(g, cols))});
                 });
}

Tensor l2_norm(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x * x;
  return make_op("l2_norm", {}, {std::sqrt(s)}, {a},
                 [](const std::vector<Tensor>& in, const Tensor& out, const Tensor& g) {
                   auto coef = mul(g, safe_recip(out));
                   return grads({mul(in[0], broadcast_scalar(coef, in[0].shape()))});
                 });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = ta ? a.dim(1) : a.dim(0);
  const auto k = ta ? a.dim(0) : a.dim(1);
  const auto kb = tb ? b.dim(1) : b.dim(0);
  const auto n = tb ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw std::invalid_argument("matmul: inner dimension mismatch " + shape_str(a.shape()) +
                                (ta ? "^T" : "") + " * " + shape_str(b.shape()) + (tb ? "^T" : ""));
  }
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a.data().data(),
              static_cast<int>(a.dim(1)), b.data().data(), static_cast<int>(b.dim(1)), 0.0,
              out.data(), static_cast<int>(n));
  return make_op("matmul", {m, n}, std::move(out), {a, b},
                 [ta, tb](const std::vector<Tensor>& in, const auto&, const Tensor& g) {
                   const auto& A = in[0];
                   const auto& B = in[1];
                   Tensor ga, gb;
                   if (!ta && !tb) {
                     if (A.requires_grad()) ga = matmul(g, B, false, true);
                     if (B.requires_grad()) gb = matmul(A, g, true, false);
                   } else if (!ta && tb) {
                     if (A.requires_grad()) ga = matmul(g, B, false, false);
                     if (B.requires_grad()) gb = matmul(g, A, true, false);
                   } else if (ta && !tb) {
                     if (A.requires_grad()) ga = matmul(B, g, false, true);
                     if (B.requires_grad()) gb = matmul(A, g, false, false);
                   } else {
                     if (A.requires_grad()) ga = matmul(B, g, true, true);
                     if (B.requires_grad()) gb = matmul(g, A, true, true);
                   }
                   return grads({ga, gb});
                 });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  require_rank(a, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  if (a.dim(1) != bias.dim(0)) throw std::invalid_argument("add_bias: width mismatch");
  return add(a, broadcast_rows(bias, a.dim(0)));
}

Tensor softmax_rows(const Tensor& a) {
  return exp(log_softmax_rows(a));
}

Tensor log_softmax_rows(const Tensor& a) {
  return sub(a, broadcast_cols(logsumexp_rows(a), a.dim(1)));
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& offset, double eps) {
  require_rank(a, 2, "layer_norm");
  const auto rows = a.dim(0), cols = a.dim(1);
  const double inv_c = 1.0 / static_cast<double>(cols);
  auto mu = scale(sum_cols(a), inv_c);
  auto centered = sub(a, broadcast_cols(mu, cols));
  auto var = scale(sum_cols(mul(centered, centered)), inv_c);
  auto inv_std = pow_scalar(add_scalar(var, eps), -0.5);
  auto normed = mul(centered, broadcast_cols(inv_std, cols));
  return add(mul(normed, broadcast_rows(gain, rows)), broadcast_rows(offset, rows));
}

namespace {

// im2col index maps are pure functions of the geometry; cache them.
struct Conv2dKey {
  std::int64_t n, h, w, c, kh, kw, stride;
  auto operator<=>(const Conv2dKey&) const = default;
};

IndexMap conv2d_index(const Conv2dKey& key, std::int64_t ho, std::int64_t wo) {
  static std::mutex mu;
  static std::map<Conv2dKey, IndexMap> cache;
  std::lock_guard lock(mu);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const auto cols = key.kh * key.kw * key.c;
  std::vector<std::int32_t> idx(static_cast<std::size_t>(key.n * ho * wo * cols));
  std::size_t p = 0;
  for (std::int64_t n = 0; n < key.n; ++n)
    for (std::int64_t y = 0; y < ho; ++y)
      for (std::int64_t x = 0; x < wo; ++x)
        for (std::int64_t ky = 0; ky < key.kh; ++ky)
          for (std::int64_t kx = 0; kx < key.kw; ++kx)
            for (std::int64_t c = 0; c < key.c; ++c) {
              const auto iy = y * key.stride + ky;
              const auto ix = x * key.stride + kx;
              idx[p++] = static_cast<std::int32_t>(((n * key.h + iy) * key.w + ix) * key.c + c);
            }
  auto map = make_index(std::move(idx));
  cache.emplace(key, map);
  return map;
}

Tensor with_conv_fault(const Tensor& t) {
  const double f = testing::conv_backward_fault();
  return f == 1.0 ? t : grad_scale(t, f);
}

}  // namespace

Tensor conv1d_valid(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  require_rank(input, 2, "conv1d_valid");
  require_rank(kernels, 3, "conv1d_valid");
  require_rank(bias, 1, "conv1d_valid");
  const auto t = input.dim(0), cin = input.dim(1);
  const auto k = kernels.dim(0), cout = kernels.dim(2);
  if (kernels.dim(1) != cin || bias.dim(0) != cout) {
    throw std::invalid_argument("conv1d_valid: kernel " + shape_str(kernels.shape()) +
                                " incompatible with input " + shape_str(input.shape()));
  }
  if (t < k) {
    throw DemoTooShortError("conv1d_valid: sequence length " + std::to_string(t) +
                            " shorter than kernel " + std::to_string(k));
  }
  // A [T x Cin] sequence is a 1 x T x 1 x Cin image.
  auto img = reshape(input, {1, t, 1, cin});
  auto w = reshape(kernels, {k, 1, cin, cout});
  auto out = conv2d(img, w, bias, 1);
  return reshape(out, {t - k + 1, cout});
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, std::int64_t stride) {
  require_rank(input, 4, "conv2d");
  require_rank(kernels, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  const auto n = input.dim(0), h = input.dim(1), w = input.dim(2), cin = input.dim(3);
  const auto kh = kernels.dim(0), kw = kernels.dim(1), cout = kernels.dim(3);
  if (stride < 1 || kernels.dim(2) != cin || bias.dim(0) != cout || h < kh || w < kw) {
    throw std::invalid_argument("conv2d: kernel " + shape_str(kernels.shape()) + " stride " +
                                std::to_string(stride) + " incompatible with input " +
                                shape_str(input.shape()));
  }
  const auto ho = (h - kh) / stride + 1;
  const auto wo = (w - kw) / stride + 1;
  const auto cols = kh * kw * cin;
  auto idx = conv2d_index({n, h, w, cin, kh, kw, stride}, ho, wo);
  auto patches = gather(with_conv_fault(input), idx, {n * ho * wo, cols});
  auto flat_w = reshape(with_conv_fault(kernels), {cols, cout});
  auto out = add_bias(matmul(patches, flat_w), with_conv_fault(bias));
  return reshape(out, {n, ho, wo, cout});
}

}  // namespace daml
