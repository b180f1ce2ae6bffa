#include <cmath>
#include <numbers>

#include "doctest.h"

#include "daml/nn.hpp"
#include "helpers.hpp"

using namespace daml;
using testutil::random_tensor;

namespace {

nn::MdnParams mixture(std::vector<double> logits, std::vector<double> means, std::vector<double> log_sigmas,
                      std::int64_t a) {
  const auto m = static_cast<std::int64_t>(logits.size());
  return {Tensor::from_data({1, m}, std::move(logits)), Tensor::from_data({1, m * a}, std::move(means)),
          Tensor::from_data({1, m}, std::move(log_sigmas)), a};
}

// -log Σ_m w_m Π_j N(a_j; μ_mj, σ_m²), evaluated directly from the densities.
double brute_force_nll(const std::vector<double>& logits, const std::vector<double>& means,
                       const std::vector<double>& log_sigmas, const std::vector<double>& action) {
  const std::size_t m = logits.size(), a = action.size();
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  double p = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const double s = std::exp(log_sigmas[k]);
    double dens = 1.0;
    for (std::size_t j = 0; j < a; ++j) {
      const double d = (action[j] - means[k * a + j]) / s;
      dens *= std::exp(-0.5 * d * d) / (s * std::sqrt(2.0 * std::numbers::pi));
    }
    p += std::exp(logits[k]) / z * dens;
  }
  return -std::log(p);
}

// Softmax expectation over the pixel grid, coordinates -1..1.
std::pair<double, double> brute_force_soft_argmax(const std::vector<double>& v, int h, int w) {
  double z = 0, x = 0, y = 0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double e = std::exp(v[i * w + j]);
      z += e;
      x += e * (w == 1 ? 0.0 : -1.0 + 2.0 * j / (w - 1));
      y += e * (h == 1 ? 0.0 : -1.0 + 2.0 * i / (h - 1));
    }
  }
  return {x / z, y / z};
}

}  // namespace

TEST_CASE("spatial soft-argmax examples") {
  auto zero = nn::spatial_soft_argmax(Tensor::zeros({1, 3, 3, 1}));
  CHECK(std::fabs(zero[0]) <= 1e-15);
  CHECK(std::fabs(zero[1]) <= 1e-15);

  std::vector<double> v(9, 0.0);
  v[0] = 1000.0;
  auto corner = nn::spatial_soft_argmax(Tensor::from_data({1, 3, 3, 1}, v));
  CHECK(corner[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(corner[1] == doctest::Approx(-1.0).epsilon(1e-6));

  const std::vector<double> two{0.0, std::numbers::ln2, 0.0, 0.0};
  auto f = nn::spatial_soft_argmax(Tensor::from_data({1, 2, 2, 1}, two));
  const auto [ex, ey] = brute_force_soft_argmax(two, 2, 2);
  CHECK(std::fabs(f[0] - ex) <= 1e-12);
  CHECK(std::fabs(f[1] - ey) <= 1e-12);
  CHECK(f[0] == doctest::Approx(0.2));
  CHECK(f[1] == doctest::Approx(-0.2));
}

TEST_CASE("soft-argmax is shift invariant per channel and stays in [-1, 1]") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_tensor({2, 5, 4, 3}, rng, -50.0, 50.0);
    std::vector<double> shifted(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 7.0 * static_cast<double>(i % 3) - 3.0;
    auto f1 = nn::spatial_soft_argmax(a);
    auto f2 = nn::spatial_soft_argmax(Tensor::from_data(a.shape(), shifted));
    CHECK(testutil::max_abs_diff(f1.data(), f2.data()) <= 1e-10);
    for (double x : f1.data()) {
      CHECK(x >= -1.0);
      CHECK(x <= 1.0);
    }
  }
}

TEST_CASE("mdn_nll examples") {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  auto a0 = Tensor::from_data({1, 1}, {0.0});
  CHECK(nn::mdn_nll(mixture({0.0}, {0.0}, {0.0}, 1), a0).item() == doctest::Approx(half_log_2pi).epsilon(1e-12));
  CHECK(nn::mdn_nll(mixture({0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}, 1), a0).item() ==
        doctest::Approx(0.918939).epsilon(1e-6));
  const double phi1 = std::exp(-0.5) / std::sqrt(2.0 * std::numbers::pi);
  const double got = nn::mdn_nll(mixture({0.0, 0.0}, {-1.0, 1.0}, {0.0, 0.0}, 1), a0).item();
  CHECK(std::fabs(got - (-std::log(phi1))) <= 1e-12);
  CHECK(got == doctest::Approx(1.418939).epsilon(1e-6));
}

TEST_CASE("mdn_nll matches brute-force density evaluation") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> modes(1, 20), dims(1, 4);
  std::uniform_real_distribution<double> u(-1.0, 1.0), ls(std::log(0.3), std::log(2.0));
  for (int trial = 0; trial < 100; ++trial) {
    const int m = modes(rng), a = dims(rng);
    std::vector<double> logits(m), means(m * a), log_sigmas(m), action(a);
    for (auto& x : logits) x = 2.0 * u(rng);
    for (auto& x : means) x = u(rng);
    for (auto& x : log_sigmas) x = ls(rng);
    for (auto& x : action) x = u(rng);
    const double ref = brute_force_nll(logits, means, log_sigmas, action);
    const double got = nn::mdn_nll(mixture(logits, means, log_sigmas, a), Tensor::from_data({1, a}, action)).item();
    CHECK(std::fabs(got - ref) <= 1e-10);
  }
}

TEST_CASE("single-mode nll is minimized at the mean") {
  const auto p = mixture({0.0}, {0.3, -0.2}, {-0.5}, 2);
  const double at_mean = nn::mdn_nll(p, Tensor::from_data({1, 2}, {0.3, -0.2})).item();
  for (double d : {-0.1, -1e-3, 1e-3, 0.1}) {
    CHECK(nn::mdn_nll(p, Tensor::from_data({1, 2}, {0.3 + d, -0.2})).item() > at_mean);
    CHECK(nn::mdn_nll(p, Tensor::from_data({1, 2}, {0.3, -0.2 + d})).item() > at_mean);
  }
}

TEST_CASE("mdn action selection") {
  SUBCASE("concentrated mode returns its mean") {
    std::mt19937_64 rng(1);
    const auto a = nn::mdn_select_action(mixture({0.0}, {0.4, -0.7}, {std::log(1e-6)}, 2), rng);
    CHECK(std::fabs(a[0] - 0.4) <= 1e-4);
    CHECK(std::fabs(a[1] + 0.7) <= 1e-4);
  }
  SUBCASE("dominant mode wins") {
    const auto p = mixture({std::log(0.99), std::log(0.01)}, {-1.0, 1.0}, {std::log(0.1), std::log(0.1)}, 1);
    int near = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      std::mt19937_64 rng(1000 + s);
      near += std::fabs(nn::mdn_select_action(p, rng)[0] + 1.0) <= 0.3;
    }
    CHECK(near >= 95);
  }
  SUBCASE("fixed seed gives the same action") {
    const auto p = mixture({0.1, -0.3}, {0.2, 0.5, -0.4, 0.1}, {-1.0, -0.5}, 2);
    std::mt19937_64 r1(77), r2(77);
    CHECK(nn::mdn_select_action(p, r1) == nn::mdn_select_action(p, r2));
  }
}

TEST_CASE("gripper cross-entropy") {
  auto ce = [](double logit, double label) {
    return nn::gripper_ce(Tensor::from_data({1}, {logit}), Tensor::from_data({1}, {label})).item();
  };
  CHECK(ce(0.0, 1.0) == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
  CHECK(ce(0.0, 0.0) == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
  const double sig2 = 1.0 / (1.0 + std::exp(-2.0));
  CHECK(std::fabs(ce(2.0, 1.0) + std::log(sig2)) <= 1e-12);
  CHECK(ce(2.0, 1.0) == doctest::Approx(0.126928).epsilon(1e-5));
}
