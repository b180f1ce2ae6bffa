#pragma once

#include <random>
#include <string>
#include <vector>

#include "daml/parameters.hpp"
#include "daml/policy.hpp"

namespace daml::adaptloss {

enum class AdaptKind { kTemporal, kLinear };

/// Shape of each temporal stack: K1 x 1 conv (channels), K2 x 1 conv
/// (channels), then a 1 x 1 conv to a single output channel.
struct TemporalLossConfig {
  int kernel1 = 10;
  int kernel2 = 10;
  int channels = 10;

  /// Shortest sequence the stack accepts (valid convolutions).
  int min_length() const { return kernel1 + kernel2 - 1; }
};

/// ψ for the temporal objective: "adapt.f.*" over feature points and
/// "adapt.h.*" over the last hidden layer, same shapes, independent weights.
ParameterVector init_temporal_loss(std::int64_t feature_dim, std::int64_t hidden_dim,
                                   const TemporalLossConfig& cfg, std::uint64_t seed);

/// Weights of a per-timestep linear map on (f_t ‖ h_t): "adapt.linear.w" / ".b".
ParameterVector init_linear_loss(std::int64_t feature_dim, std::int64_t hidden_dim,
                                 std::uint64_t seed);

/// One temporal stack over a [T x C] sequence -> [T - K1 - K2 + 2 x 1].
Tensor temporal_stack(const ParameterVector& psi, const std::string& prefix, const Tensor& seq);

/// ‖stack_f(f)‖₂ + ‖stack_h(h)‖₂. Throws DemoTooShortError when T is below
/// the stack's minimum length.
Tensor adapt_loss_temporal(const ParameterVector& psi, const Tensor& features,
                           const Tensor& hidden);

/// mean_t (w · [f_t ‖ h_t] + b)²
Tensor adapt_loss_linear(const ParameterVector& weights, const Tensor& features,
                         const Tensor& hidden);

struct AdaptObjective {
  AdaptKind kind = AdaptKind::kTemporal;
  ParameterVector psi;

  Tensor operator()(const policy::PolicyOutputs& acts) const;
};

struct InnerConfig {
  double step_size = 0.005;
  int steps = 5;
  double clip_lo = -30.0;
  double clip_hi = 30.0;
};

/// How much of the inner update the outer loop can see.
///   kNone: φ is a plain value (meta-test, evaluation).
///   kFirstOrder: φ = θ - α·clip(g) with g held constant.
///   kFull: g stays a graph node, so outer gradients include the
///          second-order path through it.
enum class Differentiation { kNone, kFirstOrder, kFull };

struct InnerResult {
  ParameterVector phi;
  /// Adaptation loss evaluated before each step.
  std::vector<double> losses;
};

/// Gradient descent on the adaptation objective over one observation-only
/// demo ([T x H x W x 3] frames, robot state input held at zero). Gradients are
/// clipped elementwise to [clip_lo, clip_hi] before each step. For kFull and
/// kFirstOrder, `theta` (and ψ for kFull) should be graph leaves.
InnerResult inner_adapt(const ParameterVector& theta, const AdaptObjective& objective,
                        const Tensor& demo_frames, const InnerConfig& inner,
                        const policy::PolicyConfig& policy_cfg, Differentiation mode);

/// Adaptation loss of `theta` on `demo_frames`, no graph.
double evaluate_adapt_loss(const ParameterVector& theta, const AdaptObjective& objective,
                           const Tensor& demo_frames, const policy::PolicyConfig& policy_cfg);

}  // namespace daml::adaptloss
