#include "daml/policy.hpp"

#include <algorithm>
#include <stdexcept>

namespace daml::policy {

int PolicyConfig::conv_output_size() const {
  int s = image_size;
  for (std::size_t i = 0; i < conv_filters.size(); ++i) {
    if (s < conv_kernel) throw std::invalid_argument("conv stack too deep for image size");
    s = (s - conv_kernel) / conv_strides.at(i) + 1;
  }
  return s;
}

void init_conv_stack(ParameterVector& params, const std::string& prefix, const PolicyConfig& cfg,
                     std::mt19937_64& rng) {
  if (cfg.conv_filters.empty() || cfg.conv_filters.size() != cfg.conv_strides.size()) {
    throw std::invalid_argument("conv_filters and conv_strides must be non-empty and equal length");
  }
  (void)cfg.conv_output_size();
  std::int64_t in = 3;
  const std::int64_t k = cfg.conv_kernel;
  for (std::size_t i = 0; i < cfg.conv_filters.size(); ++i) {
    const std::int64_t out = cfg.conv_filters[i];
    const auto name = prefix + "conv" + std::to_string(i);
    params.add(name + ".k", fan_in_uniform({k, k, in, out}, k * k * in, rng));
    params.add(name + ".b", Tensor::zeros({out}));
    in = out;
  }
}

Tensor conv_features(const ParameterVector& params, const std::string& prefix,
                     const Tensor& images, const PolicyConfig& cfg) {
  if (images.ndim() != 4 || images.dim(1) != cfg.image_size || images.dim(2) != cfg.image_size ||
      images.dim(3) != 3) {
    throw std::invalid_argument("policy: expected [N x " + std::to_string(cfg.image_size) + " x " +
                                std::to_string(cfg.image_size) + " x 3] images, got " +
                                shape_str(images.shape()));
  }
  Tensor x = images;
  for (std::size_t i = 0; i < cfg.conv_filters.size(); ++i) {
    const auto name = prefix + "conv" + std::to_string(i);
    x = conv2d(x, params.at(name + ".k"), params.at(name + ".b"), cfg.conv_strides[i]);
    // The last layer feeds the soft-argmax directly.
    if (i + 1 < cfg.conv_filters.size()) x = relu(x);
  }
  return nn::spatial_soft_argmax(x);
}

void init_fc_stack(ParameterVector& params, const std::string& prefix, std::int64_t in,
                   const PolicyConfig& cfg, std::mt19937_64& rng) {
  for (int i = 0; i < cfg.fc_layers; ++i) {
    const auto name = prefix + "fc" + std::to_string(i);
    nn::add_linear(params, name, i == 0 ? in : cfg.fc_width, cfg.fc_width, rng);
    if (cfg.layer_norm) {
      params.add(name + ".ln_gain", Tensor::full({cfg.fc_width}, 1.0));
      params.add(name + ".ln_offset", Tensor::zeros({cfg.fc_width}));
    }
  }
}

Tensor fc_stack(const ParameterVector& params, const std::string& prefix, const Tensor& x,
                const PolicyConfig& cfg) {
  Tensor h = x;
  for (int i = 0; i < cfg.fc_layers; ++i) {
    const auto name = prefix + "fc" + std::to_string(i);
    h = nn::linear(h, params.at(name + ".w"), params.at(name + ".b"));
    if (cfg.layer_norm) h = layer_norm(h, params.at(name + ".ln_gain"), params.at(name + ".ln_offset"));
    h = relu(h);
  }
  return h;
}

void init_action_heads(ParameterVector& params, const std::string& prefix, std::int64_t in,
                       const PolicyConfig& cfg, std::mt19937_64& rng) {
  const std::int64_t m = cfg.num_modes, a = cfg.action_dim;
  params.add(prefix + "mdn.w", Tensor::zeros({in, m * (a + 2)}));
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  std::vector<double> bias(static_cast<std::size_t>(m * (a + 2)), 0.0);
  for (std::int64_t k = 0; k < m; ++k) {
    bias[k] = jitter(rng);                  // mixture logit
    bias[m * (a + 1) + k] = jitter(rng);    // log sigma
  }
  params.add(prefix + "mdn.b", Tensor::from_data({m * (a + 2)}, std::move(bias)));
  nn::add_linear(params, prefix + "gripper", in, 1, rng, /*zero=*/true);
}

PolicyOutputs action_heads(const ParameterVector& params, const std::string& prefix,
                           const Tensor& hidden, const PolicyConfig& cfg) {
  PolicyOutputs out;
  out.hidden = hidden;
  auto raw = nn::linear(hidden, params.at(prefix + "mdn.w"), params.at(prefix + "mdn.b"));
  out.mdn = nn::split_mdn_head(raw, cfg.num_modes, cfg.action_dim);
  auto logit = nn::linear(hidden, params.at(prefix + "gripper.w"), params.at(prefix + "gripper.b"));
  out.gripper_logits = reshape(logit, {hidden.dim(0)});
  return out;
}

ParameterVector init_policy(const PolicyConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterVector p;
  init_conv_stack(p, "policy.", cfg, rng);
  nn::add_linear(p, "policy.pose", cfg.feature_dim(), 2, rng, /*zero=*/true);
  p.add("policy.bias_transform", Tensor::zeros({cfg.bias_transform_dim}));
  const std::int64_t fc_in = cfg.feature_dim() + cfg.state_dim + cfg.bias_transform_dim + 2;
  init_fc_stack(p, "policy.", fc_in, cfg, rng);
  init_action_heads(p, "policy.", cfg.fc_width, cfg, rng);
  return p;
}

PolicyOutputs policy_forward(const ParameterVector& theta, const Tensor& observations,
                             const Tensor& states, const PolicyConfig& cfg,
                             const std::optional<Tensor>& pose_override) {
  const auto n = observations.dim(0);
  if (states.ndim() != 2 || states.dim(0) != n || states.dim(1) != cfg.state_dim) {
    throw std::invalid_argument("policy: states " + shape_str(states.shape()) +
                                " do not match batch of " + std::to_string(n));
  }
  auto f = conv_features(theta, "policy.", observations, cfg);
  auto pose = nn::linear(f, theta.at("policy.pose.w"), theta.at("policy.pose.b"));
  Tensor fed_pose = pose;
  if (pose_override) {
    if (pose_override->shape() != Shape{n, 2}) throw std::invalid_argument("policy: pose override shape");
    fed_pose = *pose_override;
  }
  auto bias = broadcast_rows(theta.at("policy.bias_transform"), n);
  auto h = fc_stack(theta, "policy.", concat_cols({f, states, bias, fed_pose}), cfg);
  auto out = action_heads(theta, "policy.", h, cfg);
  out.features = f;
  out.pose = pose;
  return out;
}

Tensor frames_tensor(const std::vector<const sim::ImageU8*>& frames) {
  if (frames.empty()) throw std::invalid_argument("frames_tensor: no frames");
  const auto h = frames[0]->height, w = frames[0]->width;
  std::vector<double> v;
  v.reserve(frames.size() * static_cast<std::size_t>(h * w * 3));
  for (const auto* f : frames) {
    if (f->height != h || f->width != w) throw std::invalid_argument("frames_tensor: size mismatch");
    for (auto px : f->pixels) v.push_back(px / 255.0);
  }
  return Tensor::from_data({static_cast<std::int64_t>(frames.size()), h, w, 3}, std::move(v));
}

Tensor frames_tensor(const std::vector<sim::ImageU8>& frames) {
  std::vector<const sim::ImageU8*> ptrs;
  for (const auto& f : frames) ptrs.push_back(&f);
  return frames_tensor(ptrs);
}

sim::Action decide_action(const nn::MdnParams& mdn_row, double gripper_logit, std::mt19937_64& rng) {
  const auto a = nn::mdn_select_action(mdn_row, rng);
  sim::Action act;
  act.vx = std::clamp(a.at(0), -1.0, 1.0);
  act.vy = std::clamp(a.at(1), -1.0, 1.0);
  act.gripper_closed = gripper_logit > 0.0;
  return act;
}

Controller make_policy_controller(const ParameterVector& theta, const PolicyConfig& cfg) {
  auto params = theta.detached();
  return [params, cfg](const sim::ImageU8& obs, const std::array<double, 4>& state,
                       std::mt19937_64& rng) {
    NoGradGuard no_grad;
    auto o = frames_tensor(std::vector<const sim::ImageU8*>{&obs});
    auto s = Tensor::from_data({1, 4}, {state.begin(), state.end()});
    auto out = policy_forward(params, o, s, cfg);
    return decide_action(out.mdn, out.gripper_logits[0], rng);
  };
}

sim::Trajectory rollout(const Controller& controller, const sim::TaskSpec& task,
                        const sim::SimConfig& sim_cfg, std::mt19937_64& rng) {
  sim::Trajectory traj;
  traj.states.push_back(sim::initial_state(task, rng, sim_cfg));
  const auto style = sim::DomainStyle::robot();
  for (int t = 0; t < sim_cfg.horizon; ++t) {
    const auto& s = traj.states.back();
    const auto obs = sim::quantize(sim::render(s, task, style, sim_cfg));
    const std::array<double, 4> state{s.gripper.x, s.gripper.y, s.gripper_vel.x, s.gripper_vel.y};
    const auto a = controller(obs, state, rng);
    traj.actions.push_back(a);
    traj.states.push_back(sim::step(s, a, sim_cfg));
  }
  return traj;
}

sim::Trajectory rollout(const ParameterVector& theta, const sim::TaskSpec& task,
                        const PolicyConfig& cfg, const sim::SimConfig& sim_cfg,
                        std::mt19937_64& rng) {
  return rollout(make_policy_controller(theta, cfg), task, sim_cfg, rng);
}

}  // namespace daml::policy
