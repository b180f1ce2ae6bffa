#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "daml/tensor.hpp"

namespace daml::gradcheck {

struct Settings {
  int trials = 100;
  int second_order_trials = 20;
  std::uint64_t seed = 1;
  double primitive_tolerance = 1e-4;
  double meta_tolerance = 1e-3;
  double reduction_tolerance = 1e-10;
  /// Minimum relative gap between full and first-order meta-gradients.
  double second_order_gap = 1e-4;
  bool include_meta = true;
};

struct CheckResult {
  std::string name;
  std::string group;  // "primitive", "second_order", "network", "meta"
  bool passed = false;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  int trials = 0;
  /// Comparison direction: errors must stay at or below tolerance, except
  /// "min_gap" checks, whose value must exceed it.
  std::string kind = "max_error";
  std::string detail;
  /// Whether the check exercises conv2d / conv1d (directly or inside a network).
  bool uses_conv = false;
};

/// ‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, 1e-6).
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Central differences of f w.r.t. every entry of every input.
std::vector<double> numeric_gradient(const std::function<double(const std::vector<Tensor>&)>& f,
                                     const std::vector<Tensor>& inputs, double h);

/// A differentiable operation with a generator of random valid inputs.
struct Case {
  std::string name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> make_inputs;
  std::function<Tensor(const std::vector<Tensor>&)> fn;
  bool uses_conv = false;
};

/// One case per primitive op (matmul once per transpose combination).
std::vector<Case> primitive_cases();

/// First-order check of `c`: L = Σ W ⊙ fn(x) with random W, over `trials`.
CheckResult check_first_order(const Case& c, int trials, double tolerance, std::mt19937_64& rng);
/// Second-order check: gradient of ⟨v, ∇_x Σ W ⊙ fn(x)²⟩ against differences of
/// the first-order gradient.
CheckResult check_second_order(const Case& c, int trials, double tolerance, std::mt19937_64& rng);

/// Full suite in a fixed order.
std::vector<CheckResult> run_all(const Settings& settings);

/// Only the meta-gradient family (tiny network): 1 and 5 inner steps for both
/// adaptation objectives, α = 0 reduction, second-order gap.
std::vector<CheckResult> run_meta(const Settings& settings);

nlohmann::ordered_json to_json(const std::vector<CheckResult>& results);

}  // namespace daml::gradcheck
