#pragma once

#include <random>
#include <string>

#include "daml/metalearn.hpp"

namespace daml::baselines {

enum class Which { kContextual, kRecurrent };

std::string to_string(Which which);

/// Contextual policy: one conv stack ("ctx.conv*") applied to both the robot
/// observation and the final human frame; FC input is
/// (f_robot ‖ f_human ‖ state); pose head on f_robot.
ParameterVector init_contextual(const policy::PolicyConfig& cfg, std::uint64_t seed);

/// observations [N x H x W x 3], states [N x 4], human_final [1 x H x W x 3].
policy::PolicyOutputs contextual_forward(const ParameterVector& params, const Tensor& observations,
                                         const Tensor& states, const Tensor& human_final,
                                         const policy::PolicyConfig& cfg);

inline constexpr int kRecurrentHidden = 64;

/// Recurrent policy: conv stack ("rnn.conv*") and one gated recurrent cell
/// ("rnn.gru.*", hidden 64) that reads the demo frame by frame and then keeps
/// running over the robot's observations. FC input is (carried ‖ f_robot ‖ state).
ParameterVector init_recurrent(const policy::PolicyConfig& cfg, std::uint64_t seed);

/// h' = (1 - z) ⊙ n + z ⊙ h over a [1 x in] input row and [1 x hidden] state.
Tensor gru_cell(const ParameterVector& params, const Tensor& x, const Tensor& h);

/// Runs the cell over every demo frame from a zero state; returns [1 x hidden].
Tensor encode_demo(const ParameterVector& params, const Tensor& demo_frames,
                   const policy::PolicyConfig& cfg);

struct RecurrentStep {
  policy::PolicyOutputs out;
  Tensor carried;  // [1 x hidden]
};

/// One robot step: the cell consumes f(o_t) from `carried`, then the heads
/// read the new state. Start an episode with carried = encode_demo(...).
RecurrentStep recurrent_forward(const ParameterVector& params, const Tensor& observation,
                                const Tensor& state, const Tensor& carried,
                                const policy::PolicyConfig& cfg);

/// Whole robot sequence at once (training): rows are consecutive robot steps.
policy::PolicyOutputs recurrent_sequence(const ParameterVector& params, const Tensor& demo_frames,
                                         const Tensor& observations, const Tensor& states,
                                         const policy::PolicyConfig& cfg);

/// bc_loss for a baseline on one (human, robot) pair.
Tensor baseline_bc_loss(const ParameterVector& params, Which which,
                        const metalearn::TaskSample& sample, const metalearn::MetaConfig& cfg,
                        const policy::PolicyConfig& policy_cfg);

/// Plain supervised training with the same sampling, loss and optimizer as
/// meta_train; the log's inner-loss columns are 0. Result ψ is empty.
metalearn::TrainResult baseline_train(const data::Dataset& dataset, const ParameterVector& init,
                                      Which which, const metalearn::MetaConfig& cfg,
                                      const policy::PolicyConfig& policy_cfg, std::mt19937_64& rng,
                                      const metalearn::LogSink& sink = {});

/// Frames the baselines condition on at evaluation: the evenly spaced
/// T-frame subset used by meta_test_adapt.
Tensor conditioning_frames(const sim::HumanDemo& demo, int subsample_len);

/// Controller for one rollout conditioned on one human demo. The recurrent
/// controller carries state between calls, so build a fresh one per rollout.
policy::Controller make_controller(const ParameterVector& params, Which which,
                                   const sim::HumanDemo& demo, const metalearn::MetaConfig& cfg,
                                   const policy::PolicyConfig& policy_cfg);

}  // namespace daml::baselines
