#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "daml/adaptloss.hpp"
#include "daml/dataset.hpp"
#include "daml/parameters.hpp"
#include "daml/policy.hpp"

namespace daml::metalearn {

enum class BcMode { kMdnNll, kL1L2 };

std::string to_string(BcMode mode);
BcMode parse_bc_mode(const std::string& s);

struct MetaConfig {
  double inner_step_size = 0.005;
  double outer_step_size = 1e-3;
  int inner_steps = 5;
  double clip_lo = -30.0;
  double clip_hi = 30.0;
  int meta_batch_size = 10;
  int iterations = 0;
  BcMode bc_mode = BcMode::kMdnNll;
  double pose_loss_weight = 0.1;
  int demo_subsample_len = 40;
  /// Uniform per-demo brightness offset in [-b, b] added to training frames.
  double brightness_aug = 0.3;
  /// Keep the second-order path through the inner gradient.
  bool second_order = true;

  void validate() const;
  adaptloss::InnerConfig inner() const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam step. Moments are sized on first use; after that a
/// layout whose length differs throws.
ParameterVector adam_update(const ParameterVector& params, const ParameterVector& grads,
                            AdamState& state, double lr);

/// Robot demo frames prepared for the policy.
struct RobotBatch {
  Tensor frames;      // [T x H x W x 3]
  Tensor states;      // [T x 4]
  Tensor actions;     // [T x 2]
  Tensor gripper;     // [T] in {0, 1}
  Tensor final_pose;  // [T x 2], every row the demo's final gripper position
};

/// `brightness` is added to every pixel and clamped to [0, 1].
Tensor human_frames(const sim::HumanDemo& demo, const std::vector<std::size_t>& idx,
                    double brightness = 0.0);
RobotBatch robot_batch(const sim::RobotDemo& demo, const std::vector<std::size_t>& idx,
                       double brightness = 0.0);
/// Same, but rejects a demo without actions.
RobotBatch robot_batch(const sim::Demo& demo, const std::vector<std::size_t>& idx,
                       double brightness = 0.0);

/// Continuous-action and gripper terms plus λ_pose · ‖pose − final pose‖²,
/// summed over the T rows. Every method trains on this one function.
Tensor bc_loss_from_outputs(const nn::MdnParams& mdn, const Tensor& gripper_logits,
                            const Tensor& pose, const RobotBatch& batch, const MetaConfig& cfg);

Tensor bc_loss(const ParameterVector& phi, const RobotBatch& batch,
               const policy::PolicyConfig& policy_cfg, const MetaConfig& cfg);

/// One task's contribution to a meta-batch.
struct TaskSample {
  Tensor human;  // [T x H x W x 3], observation only
  RobotBatch robot;
};

/// One human and one robot demo from `record`, each subsampled to T frames
/// and brightness-augmented independently.
TaskSample sample_pair(const data::TaskRecord& record, const MetaConfig& cfg, std::mt19937_64& rng);

struct StepMetrics {
  double outer_loss = 0.0;
  double inner_loss_pre = 0.0;
  double inner_loss_post = 0.0;
};

struct MetaGradient {
  double outer_loss = 0.0;
  /// Layout of θ followed by ψ.
  ParameterVector grads;
  StepMetrics metrics;
};

/// Mean over the batch of bc_loss(inner_adapt(θ, ψ, human), robot) and its
/// gradient w.r.t. (θ, ψ). Tasks are reduced in batch order.
MetaGradient meta_gradient(const ParameterVector& theta, const ParameterVector& psi,
                           adaptloss::AdaptKind kind, const std::vector<TaskSample>& batch,
                           const MetaConfig& cfg, const policy::PolicyConfig& policy_cfg,
                           bool with_metrics = false);

/// Outer loss only, no graph.
double outer_loss(const ParameterVector& theta, const ParameterVector& psi,
                  adaptloss::AdaptKind kind, const std::vector<TaskSample>& batch,
                  const MetaConfig& cfg, const policy::PolicyConfig& policy_cfg);

/// One Adam step on (θ, ψ) jointly. Throws on a non-finite outer loss or
/// gradient, leaving θ, ψ and the optimizer state untouched.
StepMetrics meta_train_step(ParameterVector& theta, ParameterVector& psi,
                            adaptloss::AdaptKind kind, const std::vector<TaskSample>& batch,
                            const MetaConfig& cfg, const policy::PolicyConfig& policy_cfg,
                            AdamState& adam);

struct LogRow {
  int iteration = 0;
  double outer_loss = 0.0;
  double inner_loss_pre = 0.0;
  double inner_loss_post = 0.0;
  double wall_time_ms = 0.0;
};

void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const LogRow& row);

/// Called after every iteration (progress output, CSV appends).
using LogSink = std::function<void(const LogRow&)>;

/// Indices of `count` distinct tasks drawn from `pool`.
std::vector<std::size_t> sample_tasks(const std::vector<std::size_t>& pool, int count,
                                      std::mt19937_64& rng);

struct TrainResult {
  ParameterVector theta;
  ParameterVector psi;
  std::vector<LogRow> log;
};

/// Meta-training over the train split of `dataset`, starting from (θ0, ψ0).
TrainResult meta_train(const data::Dataset& dataset, const ParameterVector& theta0,
                       const ParameterVector& psi0, adaptloss::AdaptKind kind,
                       const MetaConfig& cfg, const policy::PolicyConfig& policy_cfg,
                       std::mt19937_64& rng, const LogSink& sink = {});

/// All of 0..len-1 when len <= count, else `count` evenly spaced indices
/// including the first and last frame.
std::vector<std::size_t> evenly_spaced_indices(std::size_t len, std::size_t count);

/// One-shot adaptation at test time: inner_adapt with no graph kept, on the
/// evenly spaced T-frame subset of the demo.
ParameterVector meta_test_adapt(const ParameterVector& theta, const ParameterVector& psi,
                                adaptloss::AdaptKind kind, const sim::HumanDemo& demo,
                                const MetaConfig& cfg, const policy::PolicyConfig& policy_cfg);

}  // namespace daml::metalearn
