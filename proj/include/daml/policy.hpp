#pragma once

#include <array>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "daml/nn.hpp"
#include "daml/parameters.hpp"
#include "daml/sim.hpp"

namespace daml::policy {

/// Architecture sizes. State is (gripper x, y, vx, vy), the planar stand-in
/// for an end-effector pose; actions are a planar velocity plus a gripper bit.
struct PolicyConfig {
  int image_size = 24;
  std::vector<int> conv_filters{16, 16, 16};
  std::vector<int> conv_strides{2, 2, 1};
  int conv_kernel = 3;
  int fc_layers = 3;
  int fc_width = 64;
  int state_dim = 4;
  int action_dim = 2;
  int num_modes = 20;
  int bias_transform_dim = 20;
  bool layer_norm = true;

  /// Number of feature points (2 per channel of the last conv layer).
  int feature_dim() const { return 2 * conv_filters.back(); }
  /// Spatial size after the conv stack.
  int conv_output_size() const;
};

/// Conv stack + spatial soft-argmax, shared by the policy and the baselines.
/// Adds "<prefix>conv<i>.k" / "<prefix>conv<i>.b".
void init_conv_stack(ParameterVector& params, const std::string& prefix, const PolicyConfig& cfg,
                     std::mt19937_64& rng);
/// images [N x H x W x 3] -> feature points [N x 2C]
Tensor conv_features(const ParameterVector& params, const std::string& prefix,
                     const Tensor& images, const PolicyConfig& cfg);

/// Fully connected ReLU stack with optional layer norm: "<prefix>fc<i>.*".
void init_fc_stack(ParameterVector& params, const std::string& prefix, std::int64_t in,
                   const PolicyConfig& cfg, std::mt19937_64& rng);
Tensor fc_stack(const ParameterVector& params, const std::string& prefix, const Tensor& x,
                const PolicyConfig& cfg);

/// MDN + gripper heads on the last hidden layer: "<prefix>mdn.*", "<prefix>gripper.*".
/// Output weights start at zero; mixture logits and log-sigmas get a small
/// random bias so the modes are not interchangeable.
void init_action_heads(ParameterVector& params, const std::string& prefix, std::int64_t in,
                       const PolicyConfig& cfg, std::mt19937_64& rng);

struct PolicyOutputs {
  nn::MdnParams mdn;
  Tensor gripper_logits;  // [N]
  Tensor pose;            // [N x 2] predicted final gripper position
  Tensor features;        // f: [N x 2C]
  Tensor hidden;          // h: [N x fc_width]
};

PolicyOutputs action_heads(const ParameterVector& params, const std::string& prefix,
                           const Tensor& hidden, const PolicyConfig& cfg);

/// Fresh θ. Final output layers are zero-initialized.
ParameterVector init_policy(const PolicyConfig& cfg, std::uint64_t seed);

/// Batched forward over N frames. observations [N x H x W x 3], states [N x 4].
/// Without `pose_override` the network's own pose prediction (linear in the
/// feature points) is fed into the fully connected stack.
PolicyOutputs policy_forward(const ParameterVector& theta, const Tensor& observations,
                             const Tensor& states, const PolicyConfig& cfg,
                             const std::optional<Tensor>& pose_override = std::nullopt);

/// Frames -> [N x H x W x 3] in [0, 1].
Tensor frames_tensor(const std::vector<const sim::ImageU8*>& frames);
Tensor frames_tensor(const std::vector<sim::ImageU8>& frames);

/// Per-step controller used by rollouts: observation, robot state, rng -> action.
using Controller = std::function<sim::Action(const sim::ImageU8& observation,
                                             const std::array<double, 4>& state,
                                             std::mt19937_64& rng)>;

/// Turns one row of policy outputs into an executable action: best of 100
/// mixture samples, clamped to [-1, 1], gripper closed when sigmoid > 0.5.
sim::Action decide_action(const nn::MdnParams& mdn_row, double gripper_logit, std::mt19937_64& rng);

Controller make_policy_controller(const ParameterVector& theta, const PolicyConfig& cfg);

/// Resets the world to `task` (jittered by `rng`), then runs `controller` in
/// the robot domain for the full horizon.
sim::Trajectory rollout(const Controller& controller, const sim::TaskSpec& task,
                        const sim::SimConfig& sim_cfg, std::mt19937_64& rng);

sim::Trajectory rollout(const ParameterVector& theta, const sim::TaskSpec& task,
                        const PolicyConfig& cfg, const sim::SimConfig& sim_cfg,
                        std::mt19937_64& rng);

}  // namespace daml::policy
