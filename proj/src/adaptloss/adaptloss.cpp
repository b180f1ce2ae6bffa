#include "daml/adaptloss.hpp"

#include <cmath>
#include <stdexcept>

namespace daml::adaptloss {

namespace {

void add_stack(ParameterVector& psi, const std::string& prefix, std::int64_t in,
               const TemporalLossConfig& cfg, std::mt19937_64& rng) {
  const std::int64_t c = cfg.channels;
  psi.add(prefix + "conv0.k", fan_in_uniform({cfg.kernel1, in, c}, cfg.kernel1 * in, rng));
  psi.add(prefix + "conv0.b", Tensor::zeros({c}));
  psi.add(prefix + "conv1.k", fan_in_uniform({cfg.kernel2, c, c}, cfg.kernel2 * c, rng));
  psi.add(prefix + "conv1.b", Tensor::zeros({c}));
  psi.add(prefix + "conv2.k", fan_in_uniform({1, c, 1}, c, rng));
  psi.add(prefix + "conv2.b", Tensor::zeros({1}));
}

Tensor zero_states(std::int64_t n, const policy::PolicyConfig& cfg) {
  return Tensor::zeros({n, cfg.state_dim});
}

}  // namespace

ParameterVector init_temporal_loss(std::int64_t feature_dim, std::int64_t hidden_dim,
                                   const TemporalLossConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterVector psi;
  add_stack(psi, "adapt.f.", feature_dim, cfg, rng);
  add_stack(psi, "adapt.h.", hidden_dim, cfg, rng);
  return psi;
}

ParameterVector init_linear_loss(std::int64_t feature_dim, std::int64_t hidden_dim,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterVector w;
  const auto in = feature_dim + hidden_dim;
  w.add("adapt.linear.w", fan_in_uniform({in, 1}, in, rng));
  w.add("adapt.linear.b", Tensor::zeros({1}));
  return w;
}

Tensor temporal_stack(const ParameterVector& psi, const std::string& prefix, const Tensor& seq) {
  auto x = relu(conv1d_valid(seq, psi.at(prefix + "conv0.k"), psi.at(prefix + "conv0.b")));
  x = relu(conv1d_valid(x, psi.at(prefix + "conv1.k"), psi.at(prefix + "conv1.b")));
  return conv1d_valid(x, psi.at(prefix + "conv2.k"), psi.at(prefix + "conv2.b"));
}

Tensor adapt_loss_temporal(const ParameterVector& psi, const Tensor& features,
                           const Tensor& hidden) {
  if (features.dim(0) != hidden.dim(0)) {
    throw std::invalid_argument("adapt_loss_temporal: f and h lengths differ");
  }
  const auto k1 = psi.at("adapt.f.conv0.k").dim(0);
  const auto k2 = psi.at("adapt.f.conv1.k").dim(0);
  if (features.dim(0) < k1 + k2 - 1) {
    throw DemoTooShortError("demonstration of " + std::to_string(features.dim(0)) +
                            " frames is shorter than the " + std::to_string(k1 + k2 - 1) +
                            " the temporal loss needs");
  }
  return add(l2_norm(temporal_stack(psi, "adapt.f.", features)),
             l2_norm(temporal_stack(psi, "adapt.h.", hidden)));
}

Tensor adapt_loss_linear(const ParameterVector& weights, const Tensor& features,
                         const Tensor& hidden) {
  auto per_step = nn::linear(concat_cols({features, hidden}), weights.at("adapt.linear.w"),
                             weights.at("adapt.linear.b"));
  return mean(mul(per_step, per_step));
}

Tensor AdaptObjective::operator()(const policy::PolicyOutputs& acts) const {
  return kind == AdaptKind::kTemporal ? adapt_loss_temporal(psi, acts.features, acts.hidden)
                                      : adapt_loss_linear(psi, acts.features, acts.hidden);
}

InnerResult inner_adapt(const ParameterVector& theta, const AdaptObjective& objective,
                        const Tensor& demo_frames, const InnerConfig& inner,
                        const policy::PolicyConfig& policy_cfg, Differentiation mode) {
  if (inner.steps < 1) throw std::invalid_argument("inner_adapt: steps must be >= 1");
  if (inner.step_size < 0.0) throw std::invalid_argument("inner_adapt: negative step size");
  const auto states = zero_states(demo_frames.dim(0), policy_cfg);
  const bool keep_graph = mode == Differentiation::kFull;
  InnerResult result;
  ParameterVector phi = mode == Differentiation::kNone ? theta.detached(true) : theta;
  for (int s = 0; s < inner.steps; ++s) {
    GradModeGuard tracking(true);
    auto acts = policy::policy_forward(phi, demo_frames, states, policy_cfg);
    auto loss = objective(acts);
    result.losses.push_back(loss.item());
    auto g = grad(loss, phi, keep_graph);
    std::vector<Tensor> clipped;
    for (const auto& e : g.entries()) {
      for (double v : e.value.data()) {
        if (!std::isfinite(v)) {
          throw std::runtime_error("inner_adapt: non-finite gradient for '" + e.name + "'");
        }
      }
      clipped.push_back(clip(e.value, inner.clip_lo, inner.clip_hi));
    }
    phi = phi.axpy(-inner.step_size, g.with_values(clipped));
    if (mode == Differentiation::kNone) phi = phi.detached(s + 1 < inner.steps);
  }
  result.phi = std::move(phi);
  return result;
}

double evaluate_adapt_loss(const ParameterVector& theta, const AdaptObjective& objective,
                           const Tensor& demo_frames, const policy::PolicyConfig& policy_cfg) {
  NoGradGuard no_grad;
  auto acts = policy::policy_forward(theta, demo_frames, zero_states(demo_frames.dim(0), policy_cfg),
                                     policy_cfg);
  return objective(acts).item();
}

}  // namespace daml::adaptloss
