#include "daml/baselines.hpp"

#include <chrono>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace daml::baselines {

namespace {

constexpr std::int64_t kH = kRecurrentHidden;

void add_pose_head(ParameterVector& p, const std::string& prefix, const policy::PolicyConfig& cfg,
                   std::mt19937_64& rng) {
  nn::add_linear(p, prefix + "pose", cfg.feature_dim(), 2, rng, /*zero=*/true);
}

Tensor pose_of(const ParameterVector& p, const std::string& prefix, const Tensor& f) {
  return nn::linear(f, p.at(prefix + "pose.w"), p.at(prefix + "pose.b"));
}

void check_frames(const Tensor& images, const char* what) {
  if (images.ndim() != 4 || images.dim(0) < 1) {
    throw std::invalid_argument(std::string(what) + ": expected [N x H x W x 3], got " +
                                shape_str(images.shape()));
  }
}

// Runs the cell over the rows of precomputed input projections gx [T x 3H].
std::vector<Tensor> run_cell(const ParameterVector& p, const Tensor& gx, Tensor h) {
  std::vector<Tensor> states;
  for (std::int64_t t = 0; t < gx.dim(0); ++t) {
    const auto row = slice_rows(gx, t, 1);
    const auto gh = matmul(h, p.at("rnn.gru.wh"));
    const auto z = sigmoid(add(slice_cols(row, 0, kH), slice_cols(gh, 0, kH)));
    const auto r = sigmoid(add(slice_cols(row, kH, kH), slice_cols(gh, kH, kH)));
    const auto n = tanh(add(slice_cols(row, 2 * kH, kH), mul(r, slice_cols(gh, 2 * kH, kH))));
    h = add(n, mul(z, sub(h, n)));
    states.push_back(h);
  }
  return states;
}

Tensor input_projection(const ParameterVector& p, const Tensor& features) {
  return nn::linear(features, p.at("rnn.gru.wx"), p.at("rnn.gru.b"));
}

policy::PolicyOutputs recurrent_heads(const ParameterVector& p, const Tensor& carried,
                                      const Tensor& f, const Tensor& states,
                                      const policy::PolicyConfig& cfg) {
  auto h = policy::fc_stack(p, "rnn.", concat_cols({carried, f, states}), cfg);
  auto out = policy::action_heads(p, "rnn.", h, cfg);
  out.features = f;
  out.pose = pose_of(p, "rnn.", f);
  return out;
}

}  // namespace

std::string to_string(Which which) {
  return which == Which::kContextual ? "contextual" : "recurrent";
}

ParameterVector init_contextual(const policy::PolicyConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterVector p;
  policy::init_conv_stack(p, "ctx.", cfg, rng);
  add_pose_head(p, "ctx.", cfg, rng);
  policy::init_fc_stack(p, "ctx.", 2 * cfg.feature_dim() + cfg.state_dim, cfg, rng);
  policy::init_action_heads(p, "ctx.", cfg.fc_width, cfg, rng);
  return p;
}

policy::PolicyOutputs contextual_forward(const ParameterVector& params, const Tensor& observations,
                                         const Tensor& states, const Tensor& human_final,
                                         const policy::PolicyConfig& cfg) {
  check_frames(observations, "contextual_forward");
  if (human_final.ndim() != 4 || human_final.dim(0) != 1) {
    throw std::invalid_argument("contextual_forward: human frame must be [1 x H x W x 3], got " +
                                shape_str(human_final.shape()));
  }
  const auto n = observations.dim(0);
  if (states.ndim() != 2 || states.dim(0) != n || states.dim(1) != cfg.state_dim) {
    throw std::invalid_argument("contextual_forward: states " + shape_str(states.shape()) +
                                " do not match batch of " + std::to_string(n));
  }
  auto f = policy::conv_features(params, "ctx.", observations, cfg);
  auto g = policy::conv_features(params, "ctx.", human_final, cfg);
  auto h = policy::fc_stack(params, "ctx.", concat_cols({f, broadcast_rows(reshape(g, {g.dim(1)}), n), states}), cfg);
  auto out = policy::action_heads(params, "ctx.", h, cfg);
  out.features = f;
  out.pose = pose_of(params, "ctx.", f);
  return out;
}

ParameterVector init_recurrent(const policy::PolicyConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterVector p;
  policy::init_conv_stack(p, "rnn.", cfg, rng);
  add_pose_head(p, "rnn.", cfg, rng);
  const std::int64_t in = cfg.feature_dim();
  p.add("rnn.gru.wx", fan_in_uniform({in, 3 * kH}, in, rng));
  p.add("rnn.gru.wh", fan_in_uniform({kH, 3 * kH}, kH, rng));
  p.add("rnn.gru.b", Tensor::zeros({3 * kH}));
  policy::init_fc_stack(p, "rnn.", kH + cfg.feature_dim() + cfg.state_dim, cfg, rng);
  policy::init_action_heads(p, "rnn.", cfg.fc_width, cfg, rng);
  return p;
}

Tensor gru_cell(const ParameterVector& params, const Tensor& x, const Tensor& h) {
  return run_cell(params, input_projection(params, x), h).back();
}

Tensor encode_demo(const ParameterVector& params, const Tensor& demo_frames,
                   const policy::PolicyConfig& cfg) {
  check_frames(demo_frames, "encode_demo");
  auto f = policy::conv_features(params, "rnn.", demo_frames, cfg);
  return run_cell(params, input_projection(params, f), Tensor::zeros({1, kH})).back();
}

RecurrentStep recurrent_forward(const ParameterVector& params, const Tensor& observation,
                                const Tensor& state, const Tensor& carried,
                                const policy::PolicyConfig& cfg) {
  check_frames(observation, "recurrent_forward");
  if (observation.dim(0) != 1 || state.shape() != Shape{1, cfg.state_dim} ||
      carried.shape() != Shape{1, kH}) {
    throw std::invalid_argument("recurrent_forward: expects one observation, a [1 x " +
                                std::to_string(cfg.state_dim) + "] state and a [1 x " +
                                std::to_string(kH) + "] carried state");
  }
  auto f = policy::conv_features(params, "rnn.", observation, cfg);
  auto next = run_cell(params, input_projection(params, f), carried).back();
  return {recurrent_heads(params, next, f, state, cfg), next};
}

policy::PolicyOutputs recurrent_sequence(const ParameterVector& params, const Tensor& demo_frames,
                                         const Tensor& observations, const Tensor& states,
                                         const policy::PolicyConfig& cfg) {
  check_frames(observations, "recurrent_sequence");
  auto f = policy::conv_features(params, "rnn.", observations, cfg);
  auto carried = run_cell(params, input_projection(params, f), encode_demo(params, demo_frames, cfg));
  return recurrent_heads(params, concat_rows(carried), f, states, cfg);
}

Tensor baseline_bc_loss(const ParameterVector& params, Which which,
                        const metalearn::TaskSample& sample, const metalearn::MetaConfig& cfg,
                        const policy::PolicyConfig& policy_cfg) {
  const auto& rb = sample.robot;
  policy::PolicyOutputs out;
  if (which == Which::kContextual) {
    const auto last = sample.human.dim(0) - 1;
    out = contextual_forward(params, rb.frames, rb.states, slice_rows(sample.human, last, 1),
                             policy_cfg);
  } else {
    out = recurrent_sequence(params, sample.human, rb.frames, rb.states, policy_cfg);
  }
  return metalearn::bc_loss_from_outputs(out.mdn, out.gripper_logits, out.pose, rb, cfg);
}

metalearn::TrainResult baseline_train(const data::Dataset& dataset, const ParameterVector& init,
                                      Which which, const metalearn::MetaConfig& cfg,
                                      const policy::PolicyConfig& policy_cfg, std::mt19937_64& rng,
                                      const metalearn::LogSink& sink) {
  cfg.validate();
  const auto pool = dataset.split_indices(sim::Split::kTrain);
  if (cfg.iterations > 0 && pool.size() < static_cast<std::size_t>(cfg.meta_batch_size)) {
    throw std::runtime_error("dataset has " + std::to_string(pool.size()) +
                             " train tasks, fewer than meta_batch_size " +
                             std::to_string(cfg.meta_batch_size));
  }
  metalearn::TrainResult r{init.detached(), {}, {}};
  metalearn::AdamState adam;
  const auto start = std::chrono::steady_clock::now();
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<metalearn::TaskSample> batch;
    for (auto i : metalearn::sample_tasks(pool, cfg.meta_batch_size, rng)) {
      batch.push_back(metalearn::sample_pair(dataset.tasks[i], cfg, rng));
    }
    const auto leaves = r.theta.detached(true);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    std::vector<double> acc(leaves.total_len(), 0.0);
    double loss_sum = 0.0;
    for (const auto& s : batch) {
      GradModeGuard tracking(true);
      auto loss = scale(baseline_bc_loss(leaves, which, s, cfg, policy_cfg), inv_b);
      loss_sum += loss.item();
      const auto g = grad(loss, leaves, false).flatten();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    }
    if (!std::isfinite(loss_sum)) {
      throw std::runtime_error(to_string(which) + " training: loss is not finite at iteration " +
                               std::to_string(it));
    }
    r.theta = metalearn::adam_update(r.theta, ParameterVector::unflatten(r.theta, acc), adam,
                                     cfg.outer_step_size);
    const std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
    r.log.push_back({it, loss_sum, 0.0, 0.0, elapsed.count()});
    if (sink) sink(r.log.back());
  }
  return r;
}

Tensor conditioning_frames(const sim::HumanDemo& demo, int subsample_len) {
  return metalearn::human_frames(
      demo, metalearn::evenly_spaced_indices(demo.frames.size(), static_cast<std::size_t>(subsample_len)));
}

policy::Controller make_controller(const ParameterVector& params, Which which,
                                   const sim::HumanDemo& demo, const metalearn::MetaConfig& cfg,
                                   const policy::PolicyConfig& policy_cfg) {
  NoGradGuard no_grad;
  auto p = params.detached();
  auto frames = conditioning_frames(demo, cfg.demo_subsample_len);
  auto to_inputs = [](const sim::ImageU8& obs, const std::array<double, 4>& state) {
    return std::pair{policy::frames_tensor(std::vector<const sim::ImageU8*>{&obs}),
                     Tensor::from_data({1, 4}, {state.begin(), state.end()})};
  };
  if (which == Which::kContextual) {
    auto last = slice_rows(frames, frames.dim(0) - 1, 1);
    return [p, last, policy_cfg, to_inputs](const sim::ImageU8& obs,
                                            const std::array<double, 4>& state,
                                            std::mt19937_64& rng) {
      NoGradGuard ng;
      auto [o, s] = to_inputs(obs, state);
      auto out = contextual_forward(p, o, s, last, policy_cfg);
      return policy::decide_action(out.mdn, out.gripper_logits[0], rng);
    };
  }
  // The carried state persists across the calls of one rollout.
  auto carried = std::make_shared<Tensor>(encode_demo(p, frames, policy_cfg));
  return [p, carried, policy_cfg, to_inputs](const sim::ImageU8& obs,
                                             const std::array<double, 4>& state,
                                             std::mt19937_64& rng) {
    NoGradGuard ng;
    auto [o, s] = to_inputs(obs, state);
    auto step = recurrent_forward(p, o, s, *carried, policy_cfg);
    *carried = step.carried;
    return policy::decide_action(step.out.mdn, step.out.gripper_logits[0], rng);
  };
}

}  // namespace daml::baselines
