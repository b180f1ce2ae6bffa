#include "daml/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "daml/baselines.hpp"
#include "daml/metalearn.hpp"

namespace daml::gradcheck {

namespace {

CheckResult make_result(std::string name, std::string group, double tolerance, int trials) {
  CheckResult r;
  r.name = std::move(name);
  r.group = std::move(group);
  r.passed = true;
  r.tolerance = tolerance;
  r.trials = trials;
  return r;
}

Tensor uniform(const Shape& shape, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from_data(shape, std::move(v), true);
}

// Values bounded away from zero by `gap`, random sign.
Tensor away_from_zero(const Shape& shape, double gap, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(gap, hi);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return Tensor::from_data(shape, std::move(v), true);
}

std::int64_t dim(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

std::vector<double> concat_values(const std::vector<Tensor>& ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

std::vector<Tensor> as_leaves(const std::vector<Tensor>& xs) {
  std::vector<Tensor> out;
  for (const auto& x : xs) out.push_back(x.detach(true));
  return out;
}

Case unary(std::string name, Tensor (*op)(const Tensor&), double lo, double hi, bool avoid_zero = false) {
  return {std::move(name),
          [lo, hi, avoid_zero](std::mt19937_64& rng) {
            const Shape s{dim(rng, 1, 4), dim(rng, 1, 5)};
            return std::vector<Tensor>{avoid_zero ? away_from_zero(s, lo, hi, rng) : uniform(s, lo, hi, rng)};
          },
          [op](const std::vector<Tensor>& x) { return op(x[0]); }};
}

Case binary(std::string name, Tensor (*op)(const Tensor&, const Tensor&)) {
  return {std::move(name),
          [](std::mt19937_64& rng) {
            const Shape s{dim(rng, 1, 4), dim(rng, 1, 5)};
            return std::vector<Tensor>{uniform(s, -2, 2, rng), uniform(s, -2, 2, rng)};
          },
          [op](const std::vector<Tensor>& x) { return op(x[0], x[1]); }};
}

IndexMap random_index(std::size_t n, std::int32_t range, bool allow_negative, std::mt19937_64& rng) {
  auto idx = std::make_shared<std::vector<std::int32_t>>(n);
  std::uniform_int_distribution<std::int32_t> d(allow_negative ? -1 : 0, range - 1);
  for (auto& i : *idx) i = d(rng);
  return idx;
}

Case matmul_case(bool ta, bool tb) {
  std::string name = std::string("matmul") + (ta ? "_ta" : "") + (tb ? "_tb" : "");
  return {name,
          [ta, tb](std::mt19937_64& rng) {
            const auto m = dim(rng, 1, 4), k = dim(rng, 1, 4), n = dim(rng, 1, 4);
            return std::vector<Tensor>{uniform(ta ? Shape{k, m} : Shape{m, k}, -1, 1, rng),
                                       uniform(tb ? Shape{n, k} : Shape{k, n}, -1, 1, rng)};
          },
          [ta, tb](const std::vector<Tensor>& x) { return matmul(x[0], x[1], ta, tb); }};
}

}  // namespace

double relative_error(std::span<const double> a, std::span<const double> n) {
  if (a.size() != n.size()) return INFINITY;
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  if (!std::isfinite(diff)) return INFINITY;
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-6});
}

std::vector<double> numeric_gradient(const std::function<double(const std::vector<Tensor>&)>& f,
                                     const std::vector<Tensor>& inputs, double h) {
  std::vector<double> out;
  auto xs = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto base = inputs[i].data();
    std::vector<double> v(base.begin(), base.end());
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double x0 = v[j];
      v[j] = x0 + h;
      xs[i] = Tensor::from_data(inputs[i].shape(), v, true);
      const double fp = f(xs);
      v[j] = x0 - h;
      xs[i] = Tensor::from_data(inputs[i].shape(), v, true);
      const double fm = f(xs);
      v[j] = x0;
      out.push_back((fp - fm) / (2.0 * h));
    }
    xs[i] = inputs[i];
  }
  return out;
}

std::vector<Case> primitive_cases() {
  std::vector<Case> c;
  c.push_back(binary("add", add));
  c.push_back(binary("sub", sub));
  c.push_back(binary("mul", mul));
  c.push_back(unary("neg", neg, -2, 2));
  c.push_back({"scale", [](auto& rng) { return std::vector<Tensor>{uniform({3, 4}, -2, 2, rng)}; },
               [](const auto& x) { return scale(x[0], -1.7); }});
  c.push_back({"add_scalar", [](auto& rng) { return std::vector<Tensor>{uniform({3, 4}, -2, 2, rng)}; },
               [](const auto& x) { return add_scalar(x[0], 0.3); }});
  c.push_back({"pow_scalar", [](auto& rng) { return std::vector<Tensor>{uniform({3, 4}, 0.5, 2, rng)}; },
               [](const auto& x) { return pow_scalar(x[0], 2.5); }});
  c.push_back(unary("exp", exp, -2, 2));
  c.push_back(unary("log", log, 0.3, 3));
  c.push_back(unary("relu", relu, 0.05, 2, true));
  c.push_back(unary("sigmoid", sigmoid, -3, 3));
  c.push_back(unary("tanh", tanh, -2, 2));
  c.push_back(unary("softplus", softplus, -3, 3));
  c.push_back(unary("abs", abs, 0.05, 2, true));
  c.push_back(unary("safe_recip", safe_recip, 0.4, 2, true));
  c.push_back({"clip",
               [](auto& rng) {
                 // Values near the bounds are nudged away so differences do not straddle a kink.
                 auto x = away_from_zero({4, 5}, 0.05, 2, rng);
                 auto v = x.data();
                 std::vector<double> w(v.begin(), v.end());
                 for (auto& e : w) {
                   if (std::abs(std::abs(e) - 1.0) < 0.05) e *= 1.2;
                 }
                 return std::vector<Tensor>{Tensor::from_data({4, 5}, std::move(w), true)};
               },
               [](const auto& x) { return clip(x[0], -1.0, 1.0); }});
  c.push_back({"grad_scale", [](auto& rng) { return std::vector<Tensor>{uniform({2, 3}, -2, 2, rng)}; },
               [](const auto& x) {
                 // Identity forward with unit factor: the gradient must pass through unchanged.
                 return grad_scale(x[0], 1.0);
               }});
  c.push_back({"reshape", [](auto& rng) { return std::vector<Tensor>{uniform({3, 4}, -2, 2, rng)}; },
               [](const auto& x) { return reshape(x[0], {2, 6}); }});
  c.push_back({"gather",
               [](auto& rng) { return std::vector<Tensor>{uniform({3, 4}, -2, 2, rng)}; },
               [](const auto& x) {
                 std::mt19937_64 r(7);
                 return gather(x[0], random_index(10, 12, true, r), {2, 5});
               }});
  c.push_back({"scatter_add",
               [](auto& rng) { return std::vector<Tensor>{uniform({2, 5}, -2, 2, rng)}; },
               [](const auto& x) {
                 std::mt19937_64 r(9);
                 return scatter_add(x[0], random_index(10, 6, true, r), {6});
               }});
  c.push_back(unary("transpose", transpose, -2, 2));
  c.push_back({"concat_cols",
               [](auto& rng) {
                 const auto n = dim(rng, 1, 4);
                 return std::vector<Tensor>{uniform({n, 2}, -2, 2, rng), uniform({n, 3}, -2, 2, rng)};
               },
               [](const auto& x) { return concat_cols({x[0], x[1]}); }});
  c.push_back({"concat_rows",
               [](auto& rng) {
                 const auto n = dim(rng, 1, 4);
                 return std::vector<Tensor>{uniform({2, n}, -2, 2, rng), uniform({3, n}, -2, 2, rng)};
               },
               [](const auto& x) { return concat_rows({x[0], x[1]}); }});
  c.push_back({"slice_cols", [](auto& rng) { return std::vector<Tensor>{uniform({3, 6}, -2, 2, rng)}; },
               [](const auto& x) { return slice_cols(x[0], 1, 3); }});
  c.push_back({"slice_rows", [](auto& rng) { return std::vector<Tensor>{uniform({5, 3}, -2, 2, rng)}; },
               [](const auto& x) { return slice_rows(x[0], 2, 2); }});
  c.push_back({"broadcast_rows", [](auto& rng) { return std::vector<Tensor>{uniform({4}, -2, 2, rng)}; },
               [](const auto& x) { return broadcast_rows(x[0], 3); }});
  c.push_back({"broadcast_cols", [](auto& rng) { return std::vector<Tensor>{uniform({4}, -2, 2, rng)}; },
               [](const auto& x) { return broadcast_cols(x[0], 3); }});
  c.push_back({"broadcast_scalar", [](auto& rng) { return std::vector<Tensor>{uniform({}, -2, 2, rng)}; },
               [](const auto& x) { return broadcast_scalar(x[0], {2, 3}); }});
  c.push_back(unary("sum", sum, -2, 2));
  c.push_back(unary("mean", mean, -2, 2));
  c.push_back(unary("sum_rows", sum_rows, -2, 2));
  c.push_back(unary("sum_cols", sum_cols, -2, 2));
  c.push_back({"sum_col_groups", [](auto& rng) { return std::vector<Tensor>{uniform({3, 6}, -2, 2, rng)}; },
               [](const auto& x) { return sum_col_groups(x[0], 3); }});
  c.push_back(unary("logsumexp_rows", logsumexp_rows, -3, 3));
  c.push_back(unary("l2_norm", l2_norm, 0.1, 2, true));
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) c.push_back(matmul_case(ta, tb));
  }
  c.push_back({"add_bias",
               [](auto& rng) {
                 const auto n = dim(rng, 1, 4), k = dim(rng, 1, 4);
                 return std::vector<Tensor>{uniform({n, k}, -2, 2, rng), uniform({k}, -2, 2, rng)};
               },
               [](const auto& x) { return add_bias(x[0], x[1]); }});
  c.push_back(unary("softmax_rows", softmax_rows, -3, 3));
  c.push_back(unary("log_softmax_rows", log_softmax_rows, -3, 3));
  c.push_back({"layer_norm",
               [](auto& rng) {
                 const auto n = dim(rng, 1, 3), k = dim(rng, 2, 6);
                 return std::vector<Tensor>{uniform({n, k}, -2, 2, rng), uniform({k}, 0.5, 1.5, rng),
                                            uniform({k}, -1, 1, rng)};
               },
               [](const auto& x) { return layer_norm(x[0], x[1], x[2]); }});
  c.push_back({"conv1d_valid",
               [](auto& rng) {
                 const auto t = dim(rng, 4, 8), k = dim(rng, 1, 3), ci = dim(rng, 1, 3), co = dim(rng, 1, 3);
                 return std::vector<Tensor>{uniform({t, ci}, -1, 1, rng), uniform({k, ci, co}, -1, 1, rng),
                                            uniform({co}, -1, 1, rng)};
               },
               [](const auto& x) { return conv1d_valid(x[0], x[1], x[2]); }, true});
  c.push_back({"conv2d",
               [](auto& rng) {
                 const auto n = dim(rng, 1, 2), h = dim(rng, 4, 6), w = dim(rng, 4, 6);
                 const auto k = dim(rng, 1, 3), ci = dim(rng, 1, 3), co = dim(rng, 1, 3);
                 return std::vector<Tensor>{uniform({n, h, w, ci}, -1, 1, rng),
                                            uniform({k, k, ci, co}, -1, 1, rng), uniform({co}, -1, 1, rng)};
               },
               [](const auto& x) {
                 // Stride 2 when the kernel leaves room, exercising the strided index map.
                 const auto stride = x[1].dim(0) == 1 ? 2 : 1;
                 return conv2d(x[0], x[1], x[2], stride);
               },
               true});
  c.push_back({"spatial_soft_argmax",
               [](auto& rng) { return std::vector<Tensor>{uniform({2, 4, 5, 3}, -2, 2, rng)}; },
               [](const auto& x) { return nn::spatial_soft_argmax(x[0]); }});
  c.push_back({"mdn_nll",
               [](auto& rng) {
                 const auto n = dim(rng, 1, 3), m = dim(rng, 1, 4), a = dim(rng, 1, 3);
                 return std::vector<Tensor>{uniform({n, m * (a + 2)}, -1, 1, rng), uniform({n, a}, -1, 1, rng)};
               },
               [](const auto& x) {
                 const auto a = x[1].dim(1);
                 return nn::mdn_nll(nn::split_mdn_head(x[0], x[0].dim(1) / (a + 2), a), x[1]);
               }});
  c.push_back({"gripper_ce",
               [](auto& rng) {
                 const auto n = dim(rng, 1, 6);
                 return std::vector<Tensor>{uniform({n}, -3, 3, rng), uniform({n}, 0, 1, rng)};
               },
               [](const auto& x) { return nn::gripper_ce(x[0], x[1]); }});
  return c;
}

CheckResult check_first_order(const Case& c, int trials, double tolerance, std::mt19937_64& rng) {
  auto r = make_result(c.name, "primitive", tolerance, trials);
  r.uses_conv = c.uses_conv;
  for (int t = 0; t < trials; ++t) {
    const auto xs = as_leaves(c.make_inputs(rng));
    Tensor w;
    {
      NoGradGuard ng;
      const auto y = c.fn(xs);
      w = uniform(y.shape(), -1, 1, rng).detach();
    }
    auto loss = [&](const std::vector<Tensor>& in) { return sum(mul(c.fn(in), w)); };
    std::vector<double> analytic;
    {
      GradModeGuard on(true);
      analytic = concat_values(grad(loss(xs), xs, false));
    }
    const auto numeric = numeric_gradient(
        [&](const std::vector<Tensor>& in) {
          NoGradGuard ng;
          return loss(in).item();
        },
        xs, 1e-6);
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric));
  }
  r.passed = r.max_rel_error <= tolerance;
  return r;
}

CheckResult check_second_order(const Case& c, int trials, double tolerance, std::mt19937_64& rng) {
  auto r = make_result(c.name, "second_order", tolerance, trials);
  r.uses_conv = c.uses_conv;
  for (int t = 0; t < trials; ++t) {
    const auto xs = as_leaves(c.make_inputs(rng));
    Tensor w;
    std::vector<Tensor> vs;
    {
      NoGradGuard ng;
      const auto y = c.fn(xs);
      w = uniform(y.shape(), -1, 1, rng).detach();
      for (const auto& x : xs) vs.push_back(uniform(x.shape(), -1, 1, rng).detach());
    }
    // F(x) = Σ_i ⟨v_i, ∂L/∂x_i⟩ with L = Σ W ⊙ fn(x)².
    auto directional = [&](const std::vector<Tensor>& in, bool keep_graph) {
      GradModeGuard on(true);
      const auto y = c.fn(in);
      const auto g = grad(sum(mul(w, mul(y, y))), in, keep_graph);
      Tensor total = Tensor::scalar(0.0);
      for (std::size_t i = 0; i < g.size(); ++i) total = add(total, sum(mul(g[i], vs[i])));
      return total;
    };
    std::vector<double> analytic;
    {
      GradModeGuard on(true);
      analytic = concat_values(grad(directional(xs, true), xs, false));
    }
    const auto numeric = numeric_gradient(
        [&](const std::vector<Tensor>& in) { return directional(in, false).item(); }, xs, 1e-5);
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric));
  }
  r.passed = r.max_rel_error <= tolerance;
  return r;
}

namespace {

// Tiny setting for network-level and meta-gradient checks: 8x8 images, T = 20.
struct Tiny {
  policy::PolicyConfig policy;
  adaptloss::TemporalLossConfig temporal{10, 10, 2};
  metalearn::MetaConfig meta;
  std::vector<metalearn::TaskSample> batch;

  Tiny(std::uint64_t seed, int tasks) {
    policy.image_size = 8;
    policy.conv_filters = {2};
    policy.conv_strides = {1};
    policy.conv_kernel = 3;
    policy.fc_layers = 1;
    policy.fc_width = 5;
    policy.num_modes = 2;
    policy.bias_transform_dim = 2;
    meta.demo_subsample_len = 20;
    meta.brightness_aug = 0.0;
    std::mt19937_64 rng(seed);
    for (int k = 0; k < tasks; ++k) {
      metalearn::TaskSample s;
      s.human = uniform({20, 8, 8, 3}, 0, 1, rng).detach();
      s.robot.frames = uniform({20, 8, 8, 3}, 0, 1, rng).detach();
      s.robot.states = uniform({20, 4}, 0, 1, rng).detach();
      s.robot.actions = uniform({20, 2}, -1, 1, rng).detach();
      std::vector<double> labels(20);
      std::bernoulli_distribution b(0.5);
      for (auto& l : labels) l = b(rng) ? 1.0 : 0.0;
      s.robot.gripper = Tensor::from_data({20}, labels);
      s.robot.final_pose = broadcast_rows(uniform({2}, 0, 1, rng).detach(), 20);
      batch.push_back(s);
    }
  }

  // θ with the zero-initialized heads replaced by random values, so every
  // parameter carries gradient.
  ParameterVector theta(std::uint64_t seed) const {
    auto p = policy::init_policy(policy, seed);
    std::mt19937_64 rng(seed + 100);
    std::vector<Tensor> vals;
    for (const auto& e : p.entries()) {
      if (e.name.find("conv") != std::string::npos || e.name.find("ln_") != std::string::npos) {
        vals.push_back(e.value);
      } else {
        vals.push_back(uniform(e.value.shape(), -0.5, 0.5, rng).detach());
      }
    }
    return p.with_values(vals);
  }

  ParameterVector psi(adaptloss::AdaptKind kind, std::uint64_t seed) const {
    auto p = kind == adaptloss::AdaptKind::kTemporal
                 ? adaptloss::init_temporal_loss(policy.feature_dim(), policy.fc_width, temporal, seed)
                 : adaptloss::init_linear_loss(policy.feature_dim(), policy.fc_width, seed);
    std::mt19937_64 rng(seed + 200);
    std::vector<Tensor> vals;
    for (const auto& e : p.entries()) {
      // Biases start at zero; randomize them so their gradients are exercised.
      vals.push_back(e.name.ends_with(".b") ? uniform(e.value.shape(), -0.2, 0.2, rng).detach() : e.value);
    }
    return p.with_values(vals);
  }
};

std::vector<double> meta_numeric(const ParameterVector& theta, const ParameterVector& psi,
                                 adaptloss::AdaptKind kind, const Tiny& tiny,
                                 const metalearn::MetaConfig& cfg) {
  const auto joint = theta.merged(psi);
  return numeric_gradient(
      [&](const std::vector<Tensor>& xs) {
        const auto p = joint.with_values(xs).detached();
        return metalearn::outer_loss(p.subset(theta), p.subset(psi), kind, tiny.batch, cfg, tiny.policy);
      },
      joint.tensors(), 1e-5);
}

CheckResult meta_check(adaptloss::AdaptKind kind, int steps, const Settings& s) {
  const std::string kind_name = kind == adaptloss::AdaptKind::kTemporal ? "temporal" : "linear";
  auto r = make_result("meta_gradient_" + kind_name + "_" + std::to_string(steps) + "_step", "meta",
                       s.meta_tolerance, 0);
  r.uses_conv = true;
  for (std::uint64_t trial = 0; trial < 2; ++trial) {
    Tiny tiny(s.seed + 31 * trial + steps, 2);
    auto cfg = tiny.meta;
    cfg.inner_steps = steps;
    cfg.inner_step_size = 0.05;
    const auto theta = tiny.theta(s.seed + trial);
    const auto psi = tiny.psi(kind, s.seed + trial + 50);
    const auto mg = metalearn::meta_gradient(theta, psi, kind, tiny.batch, cfg, tiny.policy);
    const auto numeric = meta_numeric(theta, psi, kind, tiny, cfg);
    r.max_rel_error = std::max(r.max_rel_error, relative_error(mg.grads.flatten(), numeric));
    // Clipping must be inactive for the finite-difference comparison to apply.
    auto unclipped = cfg;
    unclipped.clip_lo = -1e300;
    unclipped.clip_hi = 1e300;
    const double a = metalearn::outer_loss(theta, psi, kind, tiny.batch, cfg, tiny.policy);
    const double b = metalearn::outer_loss(theta, psi, kind, tiny.batch, unclipped, tiny.policy);
    if (a != b) {
      r.detail = "inner gradient clipping was active";
      r.passed = false;
    }
    r.trials += 1;
    if (r.detail.empty()) {
      r.detail = std::to_string(theta.total_len() + psi.total_len()) + " parameters";
    }
  }
  r.passed = r.passed && r.max_rel_error <= s.meta_tolerance;
  return r;
}

CheckResult alpha_zero_check(adaptloss::AdaptKind kind, const Settings& s) {
  const std::string kind_name = kind == adaptloss::AdaptKind::kTemporal ? "temporal" : "linear";
  auto r = make_result("alpha_zero_reduction_" + kind_name, "meta", s.reduction_tolerance, 3);
  r.uses_conv = true;
  bool psi_zero = true;
  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    Tiny tiny(s.seed + 77 + trial, 3);
    auto cfg = tiny.meta;
    cfg.inner_step_size = 0.0;
    const auto theta = tiny.theta(s.seed + 5 + trial);
    const auto psi = tiny.psi(kind, s.seed + 9 + trial);
    const auto mg = metalearn::meta_gradient(theta, psi, kind, tiny.batch, cfg, tiny.policy);
    // Plain behavioural cloning: mean over tasks of bc_loss(θ).
    const auto leaves = theta.detached(true);
    std::vector<double> bc(leaves.total_len(), 0.0);
    for (const auto& task : tiny.batch) {
      GradModeGuard on(true);
      auto loss = scale(metalearn::bc_loss(leaves, task.robot, tiny.policy, cfg),
                        1.0 / static_cast<double>(tiny.batch.size()));
      const auto g = grad(loss, leaves).flatten();
      for (std::size_t i = 0; i < bc.size(); ++i) bc[i] += g[i];
    }
    r.max_rel_error = std::max(r.max_rel_error, relative_error(mg.grads.subset(theta).flatten(), bc));
    for (double v : mg.grads.subset(psi).flatten()) psi_zero = psi_zero && v == 0.0;
  }
  r.passed = r.max_rel_error <= s.reduction_tolerance && psi_zero;
  r.detail = psi_zero ? "psi gradient exactly zero" : "psi gradient nonzero";
  return r;
}

CheckResult second_order_gap_check(const Settings& s) {
  auto r = make_result("second_order_path_matters", "meta", s.second_order_gap, 1);
  r.kind = "min_gap";
  r.uses_conv = true;
  Tiny tiny(s.seed + 5, 2);
  auto cfg = tiny.meta;
  cfg.inner_step_size = 0.05;
  const auto theta = tiny.theta(s.seed + 3);
  const auto psi = tiny.psi(adaptloss::AdaptKind::kTemporal, s.seed + 4);
  const auto full = metalearn::meta_gradient(theta, psi, adaptloss::AdaptKind::kTemporal, tiny.batch, cfg, tiny.policy);
  cfg.second_order = false;
  const auto first = metalearn::meta_gradient(theta, psi, adaptloss::AdaptKind::kTemporal, tiny.batch, cfg, tiny.policy);
  // Largest per-component relative difference over θ.
  const auto a = full.grads.subset(theta).flatten();
  const auto b = first.grads.subset(theta).flatten();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-12});
    r.max_rel_error = std::max(r.max_rel_error, std::abs(a[i] - b[i]) / denom);
  }
  r.passed = r.max_rel_error > s.second_order_gap;
  r.detail = "largest componentwise relative difference between full and first-order meta-gradients";
  return r;
}

CheckResult network_check(const std::string& name, const Settings& s,
                          const std::function<Tensor(const ParameterVector&)>& loss_fn,
                          const ParameterVector& params) {
  auto r = make_result(name, "network", s.primitive_tolerance, 1);
  r.uses_conv = true;
  const auto leaves = params.detached(true);
  std::vector<double> analytic;
  {
    GradModeGuard on(true);
    analytic = grad(loss_fn(leaves), leaves).flatten();
  }
  const auto numeric = numeric_gradient(
      [&](const std::vector<Tensor>& xs) {
        NoGradGuard ng;
        return loss_fn(params.with_values(xs)).item();
      },
      leaves.tensors(), 1e-6);
  r.max_rel_error = relative_error(analytic, numeric);
  r.passed = r.max_rel_error <= s.primitive_tolerance;
  return r;
}

std::vector<CheckResult> network_checks(const Settings& s) {
  std::vector<CheckResult> out;
  Tiny tiny(s.seed + 400, 1);
  const auto& task = tiny.batch[0];
  out.push_back(network_check("policy_bc_loss", s,
                              [&](const ParameterVector& p) {
                                return metalearn::bc_loss(p, task.robot, tiny.policy, tiny.meta);
                              },
                              tiny.theta(s.seed + 401)));
  auto l1 = tiny.meta;
  l1.bc_mode = metalearn::BcMode::kL1L2;
  out.push_back(network_check("policy_bc_loss_l1_l2", s,
                              [&](const ParameterVector& p) {
                                return metalearn::bc_loss(p, task.robot, tiny.policy, l1);
                              },
                              tiny.theta(s.seed + 402)));
  const auto theta = tiny.theta(s.seed + 403);
  for (auto kind : {adaptloss::AdaptKind::kTemporal, adaptloss::AdaptKind::kLinear}) {
    const auto psi = tiny.psi(kind, s.seed + 404);
    const auto states = Tensor::zeros({20, 4});
    out.push_back(network_check(
        std::string("adapt_loss_") + (kind == adaptloss::AdaptKind::kTemporal ? "temporal" : "linear"), s,
        [&](const ParameterVector& joint) {
          const auto acts = policy::policy_forward(joint.subset(theta), task.human, states, tiny.policy);
          return adaptloss::AdaptObjective{kind, joint.subset(psi)}(acts);
        },
        theta.merged(psi)));
  }
  auto short_task = task;
  short_task.human = slice_rows(task.human, 0, 5);
  short_task.robot.frames = slice_rows(task.robot.frames, 0, 5);
  short_task.robot.states = slice_rows(task.robot.states, 0, 5);
  short_task.robot.actions = slice_rows(task.robot.actions, 0, 5);
  short_task.robot.gripper = Tensor::from_data({5}, {1, 0, 1, 1, 0});
  short_task.robot.final_pose = slice_rows(task.robot.final_pose, 0, 5);
  auto jitter = [&](ParameterVector p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Tensor> vals;
    for (const auto& e : p.entries()) {
      const bool head = e.name.find("mdn") != std::string::npos || e.name.find("gripper") != std::string::npos ||
                        e.name.find("pose") != std::string::npos;
      vals.push_back(head ? uniform(e.value.shape(), -0.5, 0.5, rng).detach() : e.value);
    }
    return p.with_values(vals);
  };
  out.push_back(network_check("contextual_bc_loss", s,
                              [&](const ParameterVector& p) {
                                return baselines::baseline_bc_loss(p, baselines::Which::kContextual, short_task,
                                                                   tiny.meta, tiny.policy);
                              },
                              jitter(baselines::init_contextual(tiny.policy, s.seed + 405), s.seed + 406)));
  out.push_back(network_check("recurrent_bc_loss", s,
                              [&](const ParameterVector& p) {
                                return baselines::baseline_bc_loss(p, baselines::Which::kRecurrent, short_task,
                                                                   tiny.meta, tiny.policy);
                              },
                              jitter(baselines::init_recurrent(tiny.policy, s.seed + 407), s.seed + 408)));
  return out;
}

}  // namespace

std::vector<CheckResult> run_meta(const Settings& s) {
  std::vector<CheckResult> out;
  for (auto kind : {adaptloss::AdaptKind::kTemporal, adaptloss::AdaptKind::kLinear}) {
    for (int steps : {1, 5}) out.push_back(meta_check(kind, steps, s));
  }
  for (auto kind : {adaptloss::AdaptKind::kTemporal, adaptloss::AdaptKind::kLinear}) {
    out.push_back(alpha_zero_check(kind, s));
  }
  out.push_back(second_order_gap_check(s));
  return out;
}

std::vector<CheckResult> run_all(const Settings& s) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(s.seed);
  const auto cases = primitive_cases();
  for (const auto& c : cases) out.push_back(check_first_order(c, s.trials, s.primitive_tolerance, rng));
  for (const auto& c : cases) {
    out.push_back(check_second_order(c, s.second_order_trials, s.primitive_tolerance, rng));
  }
  for (auto& r : network_checks(s)) out.push_back(std::move(r));
  if (s.include_meta) {
    for (auto& r : run_meta(s)) out.push_back(std::move(r));
  }
  return out;
}

nlohmann::ordered_json to_json(const std::vector<CheckResult>& results) {
  nlohmann::ordered_json j;
  bool all = true;
  j["checks"] = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    all = all && r.passed;
    nlohmann::ordered_json c;
    c["name"] = r.name;
    c["group"] = r.group;
    c["passed"] = r.passed;
    c["max_rel_error"] = r.max_rel_error;
    c["tolerance"] = r.tolerance;
    c["comparison"] = r.kind;
    c["trials"] = r.trials;
    if (!r.detail.empty()) c["detail"] = r.detail;
    j["checks"].push_back(c);
  }
  j["all_passed"] = all;
  return j;
}

}  // namespace daml::gradcheck
