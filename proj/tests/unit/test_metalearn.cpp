#include <cmath>

#include "doctest.h"

#include "daml/metalearn.hpp"
#include "helpers.hpp"

using namespace daml;
using namespace daml::metalearn;
using testutil::max_abs_diff;

namespace {

const adaptloss::TemporalLossConfig kSmall{3, 3, 4};

const data::Dataset& micro_dataset() {
  static const data::Dataset ds = [] {
    data::GenConfig gen;
    gen.train_tasks = 4;
    gen.heldout_tasks = 1;
    gen.human_demos = 2;
    gen.robot_demos = 2;
    sim::SimConfig cfg;
    cfg.image_size = 8;
    return data::generate_dataset(gen, cfg, 11);
  }();
  return ds;
}

MetaConfig micro_meta() {
  MetaConfig m;
  m.meta_batch_size = 2;
  m.demo_subsample_len = 8;
  m.inner_steps = 1;
  m.outer_step_size = 3e-3;
  return m;
}

ParameterVector micro_psi(std::uint64_t seed) {
  const auto p = testutil::tiny_policy();
  return adaptloss::init_temporal_loss(p.feature_dim(), p.fc_width, kSmall, seed);
}

std::vector<TaskSample> fixed_batch(const MetaConfig& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TaskSample> batch;
  for (std::size_t i = 0; i < 2; ++i) batch.push_back(sample_pair(micro_dataset().tasks[i], m, rng));
  return batch;
}

}  // namespace

TEST_CASE("adam matches the textbook recurrence") {
  ParameterVector p;
  p.add("w", Tensor::from_data({3}, {0.5, -1.0, 2.0}));
  std::vector<double> x{0.5, -1.0, 2.0}, m(3, 0.0), v(3, 0.0);
  AdamState st;
  const double lr = 0.01;
  for (int t = 1; t <= 10; ++t) {
    std::vector<double> g{std::sin(t) , 0.1 * t - 0.5, std::cos(3.0 * t) * 4.0};
    ParameterVector gp;
    gp.add("w", Tensor::from_data({3}, g));
    p = adam_update(p, gp, st, lr);
    for (int i = 0; i < 3; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1.0 - std::pow(0.9, t)), vh = v[i] / (1.0 - std::pow(0.999, t));
      x[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(max_abs_diff(p.at("w").data(), x) <= 1e-14);
  }
  CHECK(st.step == 10);
}

TEST_CASE("adam edge cases") {
  ParameterVector p;
  p.add("w", Tensor::from_data({2}, {1.0, -3.0}));
  ParameterVector zero;
  zero.add("w", Tensor::zeros({2}));
  AdamState a;
  CHECK(adam_update(p, zero, a, 0.1).flatten() == p.flatten());

  // First step has magnitude lr in every coordinate, against the gradient.
  ParameterVector g;
  g.add("w", Tensor::from_data({2}, {5.0, -0.02}));
  AdamState b;
  const auto q = adam_update(p, g, b, 0.1).flatten();
  CHECK(q[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-6));
  CHECK(q[1] == doctest::Approx(-3.0 + 0.1).epsilon(1e-5));

  ParameterVector other;
  other.add("w", Tensor::zeros({3}));
  CHECK_THROWS(adam_update(other, other, b, 0.1));
}

TEST_CASE("evenly spaced indices") {
  CHECK(evenly_spaced_indices(5, 8) == std::vector<std::size_t>{0, 1, 2, 3, 4});
  const auto idx = evenly_spaced_indices(50, 5);
  REQUIRE(idx.size() == 5);
  CHECK(idx.front() == 0);
  CHECK(idx.back() == 49);
  for (std::size_t i = 1; i < idx.size(); ++i) CHECK(idx[i] > idx[i - 1]);
}

TEST_CASE("zero inner step reduces to behavior cloning") {
  const auto pcfg = testutil::tiny_policy();
  auto m = micro_meta();
  m.inner_step_size = 0.0;
  const auto theta = policy::init_policy(pcfg, 3);
  const auto psi = micro_psi(4);
  const auto batch = fixed_batch(m, 5);
  const auto mg = meta_gradient(theta, psi, adaptloss::AdaptKind::kTemporal, batch, m, pcfg);

  auto leaf = theta.detached(true);
  GradModeGuard on(true);
  Tensor total = Tensor::scalar(0.0);
  for (const auto& s : batch) total = add(total, bc_loss(leaf, s.robot, pcfg, m));
  const auto bc = scale(total, 0.5);
  const auto g = grad(bc, leaf).flatten();

  const auto all = mg.grads.flatten();
  REQUIRE(all.size() == theta.total_len() + psi.total_len());
  CHECK(mg.outer_loss == doctest::Approx(bc.item()).epsilon(1e-12));
  double worst = 0, psi_norm = 0;
  for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::fabs(all[i] - g[i]));
  for (std::size_t i = g.size(); i < all.size(); ++i) psi_norm = std::max(psi_norm, std::fabs(all[i]));
  CHECK(worst <= 1e-10);
  CHECK(psi_norm == 0.0);
}

TEST_CASE("meta-training") {
  const auto pcfg = testutil::tiny_policy();
  const auto theta0 = policy::init_policy(pcfg, 1);
  const auto psi0 = micro_psi(2);

  SUBCASE("zero iterations return the initialization") {
    auto m = micro_meta();
    std::mt19937_64 rng(1);
    const auto r = meta_train(micro_dataset(), theta0, psi0, adaptloss::AdaptKind::kTemporal, m, pcfg, rng);
    CHECK(r.theta.flatten() == theta0.flatten());
    CHECK(r.psi.flatten() == psi0.flatten());
    CHECK(r.log.empty());
  }

  SUBCASE("deterministic, logged every iteration, and the loss goes down") {
    auto m = micro_meta();
    m.iterations = 40;
    std::mt19937_64 r1(7), r2(7);
    int sunk = 0;
    const auto a = meta_train(micro_dataset(), theta0, psi0, adaptloss::AdaptKind::kTemporal, m, pcfg, r1,
                              [&](const LogRow&) { ++sunk; });
    const auto b = meta_train(micro_dataset(), theta0, psi0, adaptloss::AdaptKind::kTemporal, m, pcfg, r2);
    CHECK(a.theta.flatten() == b.theta.flatten());
    CHECK(a.psi.flatten() == b.psi.flatten());
    REQUIRE(a.log.size() == 40);
    CHECK(sunk == 40);
    for (int i = 0; i < 40; ++i) CHECK(a.log[i].iteration == i);

    const auto batch = fixed_batch(m, 99);
    const double before = outer_loss(theta0, psi0, adaptloss::AdaptKind::kTemporal, batch, m, pcfg);
    const double after = outer_loss(a.theta, a.psi, adaptloss::AdaptKind::kTemporal, batch, m, pcfg);
    CHECK(after < before);
  }
}

TEST_CASE("a small outer step does not increase the outer loss") {
  const auto pcfg = testutil::tiny_policy();
  auto m = micro_meta();
  m.outer_step_size = 1e-5;
  int ok = 0;
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    auto theta = policy::init_policy(pcfg, 20 + trial);
    auto psi = micro_psi(40 + trial);
    const auto batch = fixed_batch(m, 60 + trial);
    const double before = outer_loss(theta, psi, adaptloss::AdaptKind::kTemporal, batch, m, pcfg);
    AdamState adam;
    const auto metrics = meta_train_step(theta, psi, adaptloss::AdaptKind::kTemporal, batch, m, pcfg, adam);
    CHECK(metrics.outer_loss == doctest::Approx(before).epsilon(1e-12));
    ok += outer_loss(theta, psi, adaptloss::AdaptKind::kTemporal, batch, m, pcfg) <= before;
  }
  CHECK(ok >= 9);
}

TEST_CASE("meta-test adaptation is the no-graph inner loop on evenly spaced frames") {
  const auto pcfg = testutil::tiny_policy();
  auto m = micro_meta();
  m.inner_steps = 2;
  const auto theta = policy::init_policy(pcfg, 8);
  const auto psi = micro_psi(9);
  const auto& demo = micro_dataset().tasks[4].human[0];
  const auto phi = meta_test_adapt(theta, psi, adaptloss::AdaptKind::kTemporal, demo, m, pcfg);
  const auto frames = human_frames(demo, evenly_spaced_indices(demo.frames.size(), 8));
  const auto ref = adaptloss::inner_adapt(theta, {adaptloss::AdaptKind::kTemporal, psi}, frames, m.inner(), pcfg,
                                          adaptloss::Differentiation::kNone);
  CHECK(phi.flatten() == ref.phi.flatten());
  CHECK(phi.flatten() != theta.flatten());
}
