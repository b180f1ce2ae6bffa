#include <cmath>
#include <numbers>

#include "doctest.h"

#include "daml/parameters.hpp"
#include "daml/tensor.hpp"
#include "helpers.hpp"

using namespace daml;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

// Direct valid cross-correlation, [T x Cin] * [K x Cin x Cout].
std::vector<double> naive_conv1d(const Tensor& x, const Tensor& k, const Tensor& b) {
  const auto T = x.dim(0), cin = x.dim(1), K = k.dim(0), cout = k.dim(2);
  std::vector<double> out;
  for (std::int64_t t = 0; t + K <= T; ++t) {
    for (std::int64_t o = 0; o < cout; ++o) {
      double acc = b[o];
      for (std::int64_t j = 0; j < K; ++j) {
        for (std::int64_t c = 0; c < cin; ++c) acc += x[(t + j) * cin + c] * k[(j * cin + c) * cout + o];
      }
      out.push_back(acc);
    }
  }
  return out;
}

std::vector<double> naive_conv2d(const Tensor& x, const Tensor& k, const Tensor& b, std::int64_t stride) {
  const auto N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const auto KH = k.dim(0), KW = k.dim(1), O = k.dim(3);
  const auto OH = (H - KH) / stride + 1, OW = (W - KW) / stride + 1;
  std::vector<double> out;
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < OH; ++i) {
      for (std::int64_t j = 0; j < OW; ++j) {
        for (std::int64_t o = 0; o < O; ++o) {
          double acc = b[o];
          for (std::int64_t di = 0; di < KH; ++di) {
            for (std::int64_t dj = 0; dj < KW; ++dj) {
              for (std::int64_t c = 0; c < C; ++c) {
                const auto xi = ((n * H + i * stride + di) * W + j * stride + dj) * C + c;
                acc += x[xi] * k[((di * KW + dj) * C + c) * O + o];
              }
            }
          }
          out.push_back(acc);
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("first and second derivatives of polynomials") {
  auto x = Tensor::scalar(3.0, true);
  auto y = mul(x, x);
  CHECK(grad(y, std::vector<Tensor>{x})[0].item() == doctest::Approx(6.0));

  auto x2 = Tensor::scalar(2.0, true);
  auto cube = mul(mul(x2, x2), x2);
  auto dx = grad(cube, std::vector<Tensor>{x2}, true)[0];
  CHECK(dx.item() == doctest::Approx(12.0));
  auto ddx = grad(dx, std::vector<Tensor>{x2})[0];
  CHECK(ddx.item() == doctest::Approx(12.0));
}

TEST_CASE("two-layer network gradient matches central differences") {
  std::mt19937_64 rng(5);
  auto x = random_tensor({4, 5}, rng);
  auto w1 = random_tensor({5, 6}, rng, -1, 1, true);
  auto b1 = random_tensor({6}, rng, -1, 1, true);
  auto w2 = random_tensor({6, 3}, rng, -1, 1, true);
  // L = Σ tanh(tanh(x W1 + b1) W2)²
  auto loss = [&](const Tensor& a, const Tensor& b, const Tensor& c) {
    auto h = tanh(add_bias(matmul(x, a), b));
    auto o = tanh(matmul(h, c));
    return sum(mul(o, o));
  };
  const std::vector<Tensor> params{w1, b1, w2};
  const auto g = grad(loss(w1, b1, w2), params);
  std::vector<double> analytic, numeric;
  const double h = 1e-5;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].numel(); ++i) {
      auto bump = [&](double d) {
        std::vector<Tensor> ps;
        for (std::size_t q = 0; q < params.size(); ++q) {
          std::vector<double> v(params[q].data().begin(), params[q].data().end());
          if (q == p) v[i] += d;
          ps.push_back(Tensor::from_data(params[q].shape(), v));
        }
        return loss(ps[0], ps[1], ps[2]).item();
      };
      numeric.push_back((bump(h) - bump(-h)) / (2 * h));
      analytic.push_back(g[p][i]);
    }
  }
  double num = 0, den = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    num += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    den = std::max({den, analytic[i] * analytic[i], numeric[i] * numeric[i]});
  }
  CHECK(analytic.size() < 200);
  CHECK(std::sqrt(num) / std::max(std::sqrt(den), 1e-6) <= 1e-4);
}

TEST_CASE("gradient is linear in the objective") {
  std::mt19937_64 rng(9);
  auto x = random_tensor({3, 4}, rng, -1, 1, true);
  auto f = sum(mul(tanh(x), x));
  auto g = sum(exp(scale(x, 0.5)));
  const double a = 0.7, b = -2.3;
  const std::vector<Tensor> in{x};
  auto combined = grad(add(scale(f, a), scale(g, b)), in)[0];
  auto gf = grad(f, in)[0], gg = grad(g, in)[0];
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::fabs(combined[i] - (a * gf[i] + b * gg[i])) <= 1e-12);
}

TEST_CASE("inputs the output does not depend on get zero gradients") {
  auto x = Tensor::scalar(1.5, true);
  auto unused = Tensor::from_data({2}, {1.0, 2.0}, true);
  auto g = grad(mul(x, x), std::vector<Tensor>{x, unused});
  CHECK(g[1].numel() == 2);
  CHECK(g[1][0] == 0.0);
  CHECK(g[1][1] == 0.0);
}

TEST_CASE("conv1d_valid") {
  SUBCASE("differences kernel") {
    auto x = Tensor::from_data({5, 1}, {1, 2, 4, 7, 11});
    auto k = Tensor::from_data({2, 1, 1}, {1, -1});
    auto y = conv1d_valid(x, k, Tensor::zeros({1}));
    REQUIRE(y.shape() == Shape{4, 1});
    const std::vector<double> expect{-1, -2, -3, -4};
    for (int i = 0; i < 4; ++i) CHECK(y[i] == expect[i]);
  }
  SUBCASE("identity kernel") {
    auto x = Tensor::from_data({5, 1}, {1, 2, 4, 7, 11});
    auto y = conv1d_valid(x, Tensor::from_data({1, 1, 1}, {1.0}), Tensor::zeros({1}));
    for (int i = 0; i < 5; ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("random case matches the nested-loop oracle") {
    std::mt19937_64 rng(11);
    auto x = random_tensor({17, 3}, rng);
    auto k = random_tensor({4, 3, 5}, rng);
    auto b = random_tensor({5}, rng);
    auto y = conv1d_valid(x, k, b);
    const auto ref = naive_conv1d(x, k, b);
    REQUIRE(y.numel() == ref.size());
    CHECK(max_abs_diff(y.data(), ref) <= 1e-12);
  }
}

TEST_CASE("conv2d") {
  SUBCASE("1x1 identity kernel") {
    std::mt19937_64 rng(2);
    auto x = random_tensor({1, 4, 4, 2}, rng);
    auto k = Tensor::from_data({1, 1, 2, 2}, {1, 0, 0, 1});
    auto y = conv2d(x, k, Tensor::zeros({2}), 1);
    CHECK(max_abs_diff(y.data(), x.data()) == 0.0);
  }
  SUBCASE("3x3 ones on 3x3 ones") {
    auto y = conv2d(Tensor::full({1, 3, 3, 1}, 1.0), Tensor::full({3, 3, 1, 1}, 1.0), Tensor::zeros({1}), 1);
    REQUIRE(y.numel() == 1);
    CHECK(y[0] == 9.0);
  }
  SUBCASE("random strided case matches the nested-loop oracle") {
    std::mt19937_64 rng(3);
    for (std::int64_t stride : {1, 2}) {
      auto x = random_tensor({2, 9, 7, 3}, rng);
      auto k = random_tensor({3, 3, 3, 4}, rng);
      auto b = random_tensor({4}, rng);
      auto y = conv2d(x, k, b, stride);
      const auto ref = naive_conv2d(x, k, b, stride);
      REQUIRE(y.numel() == ref.size());
      CHECK(max_abs_diff(y.data(), ref) <= 1e-12);
    }
  }
}

TEST_CASE("small closed forms") {
  std::mt19937_64 rng(4);
  auto a = random_tensor({2, 2}, rng);
  auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  CHECK(max_abs_diff(matmul(eye, a).data(), a.data()) == 0.0);

  auto ln = layer_norm(Tensor::full({1, 5}, 3.0), Tensor::full({5}, 1.0), Tensor::zeros({5}));
  for (std::size_t i = 0; i < 5; ++i) CHECK(ln[i] == 0.0);

  auto sm = softmax_rows(Tensor::from_data({1, 2}, {0.0, std::numbers::ln2}));
  CHECK(sm[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(sm[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("flatten then unflatten is the identity") {
  std::mt19937_64 rng(6);
  ParameterVector p;
  p.add("a", random_tensor({3, 2}, rng));
  p.add("b", random_tensor({4}, rng));
  const auto flat = p.flatten();
  const auto q = ParameterVector::unflatten(p, flat);
  REQUIRE(q.same_layout(p));
  CHECK(q.flatten() == flat);
}

TEST_CASE("conv backward fault injection scales only convolution gradients") {
  std::mt19937_64 rng(8);
  auto x = random_tensor({1, 4, 4, 1}, rng);
  auto k = random_tensor({3, 3, 1, 1}, rng, -1, 1, true);
  auto w = random_tensor({2}, rng, -1, 1, true);
  auto clean_conv = grad(sum(conv2d(x, k, Tensor::zeros({1}), 1)), std::vector<Tensor>{k})[0];
  auto clean_dense = grad(sum(mul(w, w)), std::vector<Tensor>{w})[0];
  testing::set_conv_backward_fault(1.5);
  auto bad_conv = grad(sum(conv2d(x, k, Tensor::zeros({1}), 1)), std::vector<Tensor>{k})[0];
  auto bad_dense = grad(sum(mul(w, w)), std::vector<Tensor>{w})[0];
  testing::set_conv_backward_fault(1.0);
  CHECK(bad_conv[0] == doctest::Approx(1.5 * clean_conv[0]));
  CHECK(max_abs_diff(bad_dense.data(), clean_dense.data()) == 0.0);
}
