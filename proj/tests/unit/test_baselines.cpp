#include <cmath>

#include "doctest.h"

#include "daml/baselines.hpp"
#include "helpers.hpp"

using namespace daml;
using namespace daml::baselines;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

ParameterVector randomized(const ParameterVector& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor> v;
  for (const auto& e : p.entries()) v.push_back(random_tensor(e.value.shape(), rng, -0.5, 0.5));
  return p.with_values(v);
}

sim::ImageU8 random_frame(std::mt19937_64& rng) {
  sim::ImageU8 f{8, 8, std::vector<std::uint8_t>(8 * 8 * 3)};
  std::uniform_int_distribution<int> u(0, 255);
  for (auto& p : f.pixels) p = static_cast<std::uint8_t>(u(rng));
  return f;
}

const data::Dataset& micro_dataset() {
  static const data::Dataset ds = [] {
    data::GenConfig gen;
    gen.train_tasks = 4;
    gen.heldout_tasks = 1;
    gen.human_demos = 2;
    gen.robot_demos = 2;
    sim::SimConfig cfg;
    cfg.image_size = 8;
    return data::generate_dataset(gen, cfg, 12);
  }();
  return ds;
}

metalearn::MetaConfig micro_meta() {
  metalearn::MetaConfig m;
  m.meta_batch_size = 2;
  m.demo_subsample_len = 8;
  m.outer_step_size = 3e-3;
  return m;
}

}  // namespace

TEST_CASE("fresh baselines start with zero action outputs") {
  const auto cfg = testutil::tiny_policy();
  std::mt19937_64 rng(1);
  auto obs = random_tensor({3, 8, 8, 3}, rng, 0.0, 1.0);
  auto st = random_tensor({3, 4}, rng);
  auto demo = random_tensor({6, 8, 8, 3}, rng, 0.0, 1.0);

  const auto ctx = contextual_forward(init_contextual(cfg, 2), obs, st, slice_rows(demo, 5, 1), cfg);
  for (double v : ctx.mdn.means.data()) CHECK(v == 0.0);
  for (double v : ctx.gripper_logits.data()) CHECK(v == 0.0);

  const auto rnn = recurrent_sequence(init_recurrent(cfg, 2), demo, obs, st, cfg);
  for (double v : rnn.mdn.means.data()) CHECK(v == 0.0);
  for (double v : rnn.gripper_logits.data()) CHECK(v == 0.0);

  CHECK(init_contextual(cfg, 5).flatten() == init_contextual(cfg, 5).flatten());
  CHECK(init_recurrent(cfg, 5).flatten() == init_recurrent(cfg, 5).flatten());
}

TEST_CASE("the contextual policy reads only the final demo frame") {
  const auto cfg = testutil::tiny_policy();
  const auto params = randomized(init_contextual(cfg, 3), 4);
  std::mt19937_64 rng(5);
  sim::HumanDemo a, b;
  for (int t = 0; t < 12; ++t) a.frames.push_back(random_frame(rng));
  b = a;
  for (int t = 0; t < 11; ++t) b.frames[t] = random_frame(rng);
  sim::HumanDemo c = a;
  c.frames.back() = random_frame(rng);

  const auto m = micro_meta();
  auto ca = make_controller(params, Which::kContextual, a, m, cfg);
  auto cb = make_controller(params, Which::kContextual, b, m, cfg);
  auto cc = make_controller(params, Which::kContextual, c, m, cfg);
  const auto obs = random_frame(rng);
  const std::array<double, 4> state{0.5, 0.9, 0.0, 0.0};
  std::mt19937_64 r1(9), r2(9), r3(9);
  const auto xa = ca(obs, state, r1), xb = cb(obs, state, r2), xc = cc(obs, state, r3);
  CHECK(xa.vx == xb.vx);
  CHECK(xa.vy == xb.vy);
  CHECK((xa.vx != xc.vx || xa.vy != xc.vy));
}

TEST_CASE("the recurrent encoder depends on frame order") {
  const auto cfg = testutil::tiny_policy();
  const auto params = randomized(init_recurrent(cfg, 6), 7);
  std::mt19937_64 rng(8);
  auto demo = random_tensor({6, 8, 8, 3}, rng, 0.0, 1.0);
  std::vector<Tensor> rows;
  for (std::int64_t t = 5; t >= 0; --t) rows.push_back(slice_rows(demo, t, 1));
  const auto fwd = encode_demo(params, demo, cfg);
  const auto back = encode_demo(params, concat_rows(rows), cfg);
  CHECK(fwd.shape() == Shape{1, kRecurrentHidden});
  CHECK(max_abs_diff(fwd.data(), back.data()) > 1e-6);
}

TEST_CASE("gru cell closed forms") {
  const auto cfg = testutil::tiny_policy();
  auto params = init_recurrent(cfg, 1);
  // Zero weights: z = 1/2 and n = tanh(0) = 0, so the state halves.
  std::vector<Tensor> zeros;
  for (const auto& e : params.entries()) zeros.push_back(Tensor::zeros(e.value.shape()));
  params = params.with_values(zeros);
  const auto in = params.at("rnn.gru.wx").dim(0);
  std::mt19937_64 rng(2);
  auto h = random_tensor({1, kRecurrentHidden}, rng);
  auto next = gru_cell(params, random_tensor({1, in}, rng), h);
  for (std::size_t i = 0; i < h.numel(); ++i) CHECK(next[i] == doctest::Approx(0.5 * h[i]).epsilon(1e-14));
}

TEST_CASE("sequence forward equals stepping one observation at a time") {
  const auto cfg = testutil::tiny_policy();
  const auto params = randomized(init_recurrent(cfg, 10), 11);
  std::mt19937_64 rng(3);
  auto demo = random_tensor({5, 8, 8, 3}, rng, 0.0, 1.0);
  auto obs = random_tensor({4, 8, 8, 3}, rng, 0.0, 1.0);
  auto st = random_tensor({4, 4}, rng);
  const auto seq = recurrent_sequence(params, demo, obs, st, cfg);
  auto carried = encode_demo(params, demo, cfg);
  for (std::int64_t t = 0; t < 4; ++t) {
    auto s = recurrent_forward(params, slice_rows(obs, t, 1), slice_rows(st, t, 1), carried, cfg);
    carried = s.carried;
    const auto m = s.out.mdn.means.numel();
    for (std::size_t i = 0; i < m; ++i) {
      CHECK(std::fabs(s.out.mdn.means[i] - seq.mdn.means[t * m + i]) <= 1e-12);
    }
  }
}

TEST_CASE("baseline training") {
  const auto cfg = testutil::tiny_policy();
  auto m = micro_meta();
  for (Which which : {Which::kContextual, Which::kRecurrent}) {
    CAPTURE(to_string(which));
    const auto init = which == Which::kContextual ? init_contextual(cfg, 1) : init_recurrent(cfg, 1);
    m.iterations = 0;
    std::mt19937_64 r0(1);
    const auto none = baseline_train(micro_dataset(), init, which, m, cfg, r0);
    CHECK(none.theta.flatten() == init.flatten());
    CHECK(none.psi.empty());

    m.iterations = 30;
    std::mt19937_64 r1(4), r2(4);
    const auto a = baseline_train(micro_dataset(), init, which, m, cfg, r1);
    const auto b = baseline_train(micro_dataset(), init, which, m, cfg, r2);
    CHECK(a.theta.flatten() == b.theta.flatten());
    REQUIRE(a.log.size() == 30);
    CHECK(a.log.back().inner_loss_pre == 0.0);
    CHECK(a.log.back().inner_loss_post == 0.0);

    std::mt19937_64 rs(77);
    const auto sample = metalearn::sample_pair(micro_dataset().tasks[0], m, rs);
    const double before = baseline_bc_loss(init, which, sample, m, cfg).item();
    const double after = baseline_bc_loss(a.theta, which, sample, m, cfg).item();
    CHECK(after < before);
  }
}
