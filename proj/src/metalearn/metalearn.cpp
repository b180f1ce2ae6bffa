#include "daml/metalearn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace daml::metalearn {

std::string to_string(BcMode mode) { return mode == BcMode::kMdnNll ? "mdn_nll" : "l1_l2"; }

BcMode parse_bc_mode(const std::string& s) {
  if (s == "mdn_nll") return BcMode::kMdnNll;
  if (s == "l1_l2") return BcMode::kL1L2;
  throw std::invalid_argument("unknown bc_mode '" + s + "' (expected mdn_nll or l1_l2)");
}

void MetaConfig::validate() const {
  if (!(inner_step_size >= 0.0)) throw std::invalid_argument("inner_step_size must be >= 0");
  if (!(outer_step_size > 0.0)) throw std::invalid_argument("outer_step_size must be > 0");
  if (inner_steps < 1) throw std::invalid_argument("inner_steps must be >= 1");
  if (!(clip_lo < clip_hi)) throw std::invalid_argument("clip range must satisfy lo < hi");
  if (meta_batch_size < 1) throw std::invalid_argument("meta_batch_size must be >= 1");
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (demo_subsample_len < 1) throw std::invalid_argument("demo_subsample_len must be >= 1");
  if (pose_loss_weight < 0.0) throw std::invalid_argument("pose_loss_weight must be >= 0");
  if (brightness_aug < 0.0) throw std::invalid_argument("brightness_aug must be >= 0");
}

adaptloss::InnerConfig MetaConfig::inner() const {
  return {inner_step_size, inner_steps, clip_lo, clip_hi};
}

ParameterVector adam_update(const ParameterVector& params, const ParameterVector& grads,
                            AdamState& state, double lr) {
  if (!params.same_layout(grads)) throw std::invalid_argument("adam_update: gradient layout differs");
  const auto n = params.total_len();
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (state.m.size() != n || state.v.size() != n) {
    throw std::invalid_argument("adam_update: optimizer state sized for " +
                                std::to_string(state.m.size()) + " values, parameters have " +
                                std::to_string(n));
  }
  auto p = params.flatten();
  const auto g = grads.flatten();
  const auto t = state.step + 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < n; ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g[i] * g[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
  state.step = t;
  return ParameterVector::unflatten(params, p);
}

namespace {

Tensor frames_with_offset(const std::vector<sim::ImageU8>& frames,
                          const std::vector<std::size_t>& idx, double brightness) {
  if (idx.empty()) throw std::invalid_argument("demo subsample is empty");
  std::vector<const sim::ImageU8*> picked;
  for (auto i : idx) picked.push_back(&frames.at(i));
  auto t = policy::frames_tensor(picked);
  if (brightness == 0.0) return t;
  auto v = t.data();
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x = std::clamp(x + brightness, 0.0, 1.0);
  return Tensor::from_data(t.shape(), std::move(out));
}

// Mixture mean Σ_m softmax(logits)_m μ_m, [N x A].
Tensor mixture_mean(const nn::MdnParams& mdn) {
  const auto n = mdn.rows(), m = mdn.num_modes();
  const auto a = mdn.means.dim(1) / m;
  auto w = softmax_rows(mdn.logits);
  auto spread = std::make_shared<std::vector<std::int32_t>>(n * m * a);
  auto regroup = std::make_shared<std::vector<std::int32_t>>(n * m * a);
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t k = 0; k < m; ++k) {
      for (std::int64_t d = 0; d < a; ++d) {
        (*spread)[r * m * a + k * a + d] = static_cast<std::int32_t>(r * m + k);
        (*regroup)[r * m * a + d * m + k] = static_cast<std::int32_t>(r * m * a + k * a + d);
      }
    }
  }
  auto weighted = mul(mdn.means, gather(w, spread, {n, m * a}));
  return sum_col_groups(gather(weighted, regroup, {n, a * m}), m);
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

Tensor human_frames(const sim::HumanDemo& demo, const std::vector<std::size_t>& idx,
                    double brightness) {
  return frames_with_offset(demo.frames, idx, brightness);
}

RobotBatch robot_batch(const sim::RobotDemo& demo, const std::vector<std::size_t>& idx,
                       double brightness) {
  RobotBatch b;
  b.frames = frames_with_offset(demo.frames, idx, brightness);
  const auto t = static_cast<std::int64_t>(idx.size());
  std::vector<double> states, actions, gripper, pose;
  for (auto i : idx) {
    const auto& s = demo.states.at(i);
    const auto& a = demo.actions.at(i);
    states.insert(states.end(), s.begin(), s.end());
    actions.push_back(a[0]);
    actions.push_back(a[1]);
    gripper.push_back(a[2] > 0.5 ? 1.0 : 0.0);
    pose.push_back(demo.final_pose[0]);
    pose.push_back(demo.final_pose[1]);
  }
  b.states = Tensor::from_data({t, 4}, std::move(states));
  b.actions = Tensor::from_data({t, 2}, std::move(actions));
  b.gripper = Tensor::from_data({t}, std::move(gripper));
  b.final_pose = Tensor::from_data({t, 2}, std::move(pose));
  return b;
}

RobotBatch robot_batch(const sim::Demo& demo, const std::vector<std::size_t>& idx,
                       double brightness) {
  const auto* robot = std::get_if<sim::RobotDemo>(&demo);
  if (robot == nullptr) {
    throw std::invalid_argument("bc_loss needs a demo with actions; got an observation-only demo");
  }
  return robot_batch(*robot, idx, brightness);
}

Tensor bc_loss_from_outputs(const nn::MdnParams& mdn, const Tensor& gripper_logits,
                            const Tensor& pose, const RobotBatch& batch, const MetaConfig& cfg) {
  Tensor continuous;
  if (cfg.bc_mode == BcMode::kMdnNll) {
    continuous = nn::mdn_nll(mdn, batch.actions);
  } else {
    auto diff = sub(mixture_mean(mdn), batch.actions);
    continuous = add(sum(abs(diff)), scale(sum(mul(diff, diff)), 0.01));
  }
  auto loss = add(continuous, nn::gripper_ce(gripper_logits, batch.gripper));
  if (cfg.pose_loss_weight != 0.0) {
    auto d = sub(pose, batch.final_pose);
    loss = add(loss, scale(sum(mul(d, d)), cfg.pose_loss_weight));
  }
  return loss;
}

Tensor bc_loss(const ParameterVector& phi, const RobotBatch& batch,
               const policy::PolicyConfig& policy_cfg, const MetaConfig& cfg) {
  auto out = policy::policy_forward(phi, batch.frames, batch.states, policy_cfg);
  return bc_loss_from_outputs(out.mdn, out.gripper_logits, out.pose, batch, cfg);
}

TaskSample sample_pair(const data::TaskRecord& record, const MetaConfig& cfg, std::mt19937_64& rng) {
  if (record.human.empty() || record.robot.empty()) {
    throw std::runtime_error("task record has no human or no robot demos");
  }
  std::uniform_real_distribution<double> offset(-cfg.brightness_aug, cfg.brightness_aug);
  const auto t = static_cast<std::size_t>(cfg.demo_subsample_len);
  const auto& h = record.human[std::uniform_int_distribution<std::size_t>(0, record.human.size() - 1)(rng)];
  const auto& r = record.robot[std::uniform_int_distribution<std::size_t>(0, record.robot.size() - 1)(rng)];
  TaskSample s;
  const auto hi = data::subsample_indices(h.frames.size(), t, rng);
  const double hb = cfg.brightness_aug > 0.0 ? offset(rng) : 0.0;
  s.human = human_frames(h, hi, hb);
  const auto ri = data::subsample_indices(r.frames.size(), t, rng);
  const double rb = cfg.brightness_aug > 0.0 ? offset(rng) : 0.0;
  s.robot = robot_batch(r, ri, rb);
  return s;
}

MetaGradient meta_gradient(const ParameterVector& theta, const ParameterVector& psi,
                           adaptloss::AdaptKind kind, const std::vector<TaskSample>& batch,
                           const MetaConfig& cfg, const policy::PolicyConfig& policy_cfg,
                           bool with_metrics) {
  if (batch.empty()) throw std::invalid_argument("meta_gradient: empty batch");
  const auto joint = theta.merged(psi).detached(true);
  const auto th = joint.subset(theta);
  const auto ps = joint.subset(psi);
  const auto mode = cfg.second_order ? adaptloss::Differentiation::kFull
                                     : adaptloss::Differentiation::kFirstOrder;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<double> acc(joint.total_len(), 0.0);
  MetaGradient out;
  GradModeGuard tracking(true);
  // Fixed reduction order: tasks are accumulated in batch order.
  for (const auto& task : batch) {
    const adaptloss::AdaptObjective objective{kind, ps};
    auto inner = adaptloss::inner_adapt(th, objective, task.human, cfg.inner(), policy_cfg, mode);
    auto loss = scale(bc_loss(inner.phi, task.robot, policy_cfg, cfg), inv_b);
    out.outer_loss += loss.item();
    const auto g = grad(loss, joint, false).flatten();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    if (with_metrics) {
      out.metrics.inner_loss_pre += inner.losses.front() * inv_b;
      out.metrics.inner_loss_post +=
          adaptloss::evaluate_adapt_loss(inner.phi, objective, task.human, policy_cfg) * inv_b;
    }
  }
  out.metrics.outer_loss = out.outer_loss;
  out.grads = ParameterVector::unflatten(joint, acc);
  return out;
}

double outer_loss(const ParameterVector& theta, const ParameterVector& psi,
                  adaptloss::AdaptKind kind, const std::vector<TaskSample>& batch,
                  const MetaConfig& cfg, const policy::PolicyConfig& policy_cfg) {
  double total = 0.0;
  for (const auto& task : batch) {
    const adaptloss::AdaptObjective objective{kind, psi};
    auto inner = adaptloss::inner_adapt(theta, objective, task.human, cfg.inner(), policy_cfg,
                                        adaptloss::Differentiation::kNone);
    NoGradGuard no_grad;
    total += bc_loss(inner.phi, task.robot, policy_cfg, cfg).item();
  }
  return total / static_cast<double>(batch.size());
}

StepMetrics meta_train_step(ParameterVector& theta, ParameterVector& psi,
                            adaptloss::AdaptKind kind, const std::vector<TaskSample>& batch,
                            const MetaConfig& cfg, const policy::PolicyConfig& policy_cfg,
                            AdamState& adam) {
  auto mg = meta_gradient(theta, psi, kind, batch, cfg, policy_cfg, /*with_metrics=*/true);
  if (!std::isfinite(mg.outer_loss)) {
    throw std::runtime_error("meta_train_step: outer loss is not finite (" +
                             std::to_string(mg.outer_loss) + ")");
  }
  if (!all_finite(mg.grads.flatten())) {
    throw std::runtime_error("meta_train_step: meta-gradient has non-finite entries");
  }
  AdamState next = adam;
  auto updated = adam_update(theta.merged(psi).detached(), mg.grads, next, cfg.outer_step_size);
  theta = updated.subset(theta);
  psi = updated.subset(psi);
  adam = std::move(next);
  return mg.metrics;
}

void write_log_header(std::ostream& out) {
  out << "iteration,outer_loss,inner_loss_pre,inner_loss_post,wall_time_ms\n";
}

void write_log_row(std::ostream& out, const LogRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.1f\n", row.iteration, row.outer_loss,
                row.inner_loss_pre, row.inner_loss_post, row.wall_time_ms);
  out << buf;
}

std::vector<std::size_t> sample_tasks(const std::vector<std::size_t>& pool, int count,
                                      std::mt19937_64& rng) {
  if (count < 1 || static_cast<std::size_t>(count) > pool.size()) {
    throw std::invalid_argument("cannot draw " + std::to_string(count) + " distinct tasks from " +
                                std::to_string(pool.size()));
  }
  auto idx = pool;
  for (int i = 0; i < count; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(i, idx.size() - 1)(rng);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

TrainResult meta_train(const data::Dataset& dataset, const ParameterVector& theta0,
                       const ParameterVector& psi0, adaptloss::AdaptKind kind,
                       const MetaConfig& cfg, const policy::PolicyConfig& policy_cfg,
                       std::mt19937_64& rng, const LogSink& sink) {
  cfg.validate();
  const auto pool = dataset.split_indices(sim::Split::kTrain);
  if (cfg.iterations > 0 && pool.size() < static_cast<std::size_t>(cfg.meta_batch_size)) {
    throw std::runtime_error("dataset has " + std::to_string(pool.size()) +
                             " train tasks, fewer than meta_batch_size " +
                             std::to_string(cfg.meta_batch_size));
  }
  TrainResult r{theta0.detached(), psi0.detached(), {}};
  AdamState adam;
  const auto start = std::chrono::steady_clock::now();
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<TaskSample> batch;
    for (auto i : sample_tasks(pool, cfg.meta_batch_size, rng)) {
      batch.push_back(sample_pair(dataset.tasks[i], cfg, rng));
    }
    const auto m = meta_train_step(r.theta, r.psi, kind, batch, cfg, policy_cfg, adam);
    const std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
    r.log.push_back({it, m.outer_loss, m.inner_loss_pre, m.inner_loss_post, elapsed.count()});
    if (sink) sink(r.log.back());
  }
  return r;
}

std::vector<std::size_t> evenly_spaced_indices(std::size_t len, std::size_t count) {
  std::vector<std::size_t> idx;
  if (len <= count) {
    for (std::size_t i = 0; i < len; ++i) idx.push_back(i);
  } else if (count == 1) {
    idx.push_back(len - 1);
  } else {
    for (std::size_t k = 0; k < count; ++k) idx.push_back(k * (len - 1) / (count - 1));
  }
  return idx;
}

ParameterVector meta_test_adapt(const ParameterVector& theta, const ParameterVector& psi,
                                adaptloss::AdaptKind kind, const sim::HumanDemo& demo,
                                const MetaConfig& cfg, const policy::PolicyConfig& policy_cfg) {
  const auto idx = evenly_spaced_indices(demo.frames.size(),
                                         static_cast<std::size_t>(cfg.demo_subsample_len));
  const adaptloss::AdaptObjective objective{kind, psi.detached()};
  return adaptloss::inner_adapt(theta, objective, human_frames(demo, idx), cfg.inner(), policy_cfg,
                                adaptloss::Differentiation::kNone)
      .phi;
}

}  // namespace daml::metalearn
