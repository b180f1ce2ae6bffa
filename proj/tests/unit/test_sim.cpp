#include <cmath>
#include <set>

#include "doctest.h"

#include "daml/sim.hpp"

using namespace daml::sim;

namespace {

TaskSpec far_task() {
  TaskSpec t;
  t.target = {Shape::kDisc, {0.9, 0.1, 0.1}, {0.5, 0.5}};
  t.distractor = {Shape::kSquare, {0.1, 0.1, 0.9}, {0.15, 0.7}};
  t.goal = {0.5, 0.15};
  return t;
}

WorldState state_of(const TaskSpec& t, Vec2 gripper) {
  WorldState s;
  s.gripper = gripper;
  s.target = t.target.position;
  s.distractor = t.distractor.position;
  return s;
}

Trajectory target_track(const std::vector<Vec2>& targets) {
  Trajectory tr;
  for (const auto& p : targets) {
    WorldState s;
    s.target = p;
    tr.states.push_back(s);
  }
  return tr;
}

}  // namespace

TEST_CASE("task generation") {
  SimConfig cfg;
  std::mt19937_64 a(3), b(3);
  const auto t1 = generate_task(a, Split::kTrain, cfg), t2 = generate_task(b, Split::kTrain, cfg);
  CHECK(t1.target.color == t2.target.color);
  CHECK(t1.target.position.x == t2.target.position.x);
  CHECK(t1.distractor.position.y == t2.distractor.position.y);

  std::set<Color> train(cfg.train_colors.begin(), cfg.train_colors.end());
  std::mt19937_64 rng(4);
  int shared = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto t = generate_task(rng, Split::kHeldout, cfg);
    shared += train.count(t.target.color) + train.count(t.distractor.color);
  }
  CHECK(shared == 0);

  const auto pool = TaskPool::generate(9, 1, 1, cfg);
  std::mt19937_64 r(5);
  for (int i = 0; i < 10; ++i) {
    const auto t = sample_task(r, Split::kTrain, pool);
    CHECK(t.target.position.x == pool.train[0].target.position.x);
    CHECK(t.target.color == pool.train[0].target.color);
  }
}

TEST_CASE("step without contact") {
  SimConfig cfg;
  const auto task = far_task();
  const auto s0 = state_of(task, {0.8, 0.9});
  const auto s1 = step(s0, Action{0.0, 0.0, true}, cfg);
  CHECK(s1.t == 1);
  CHECK(s1.gripper.x == s0.gripper.x);
  CHECK(s1.gripper.y == s0.gripper.y);
  CHECK(s1.target.x == s0.target.x);
  CHECK(s1.distractor.y == s0.distractor.y);

  const auto s2 = step(s0, Action{0.1, 0.0, true}, cfg);
  CHECK(s2.gripper.x == doctest::Approx(0.8 + 0.1 * cfg.step_size).epsilon(1e-14));
  CHECK(s2.gripper.y == s0.gripper.y);
  CHECK(s2.target.x == s0.target.x);
  CHECK(s2.target.y == s0.target.y);

  const auto s3 = step(s0, Action{5.0, -7.0, true}, cfg);
  CHECK(s3.gripper.x == doctest::Approx(0.8 + cfg.step_size));
  CHECK(s3.gripper.y == doctest::Approx(0.9 - cfg.step_size));
}

TEST_CASE("pushing matches a hand-stepped trace") {
  SimConfig cfg;
  auto task = far_task();
  task.target.position = {0.52, 0.5};
  auto s = state_of(task, {0.5, 0.6});
  // Moving straight up, a contacted object is carried along the motion until it
  // sits exactly one contact radius ahead of the gripper.
  const double dx = 0.02;
  const double ahead = std::sqrt(cfg.contact_radius * cfg.contact_radius - dx * dx);
  double gy = 0.6, ty = 0.5;
  for (int k = 0; k < 5; ++k) {
    s = step(s, Action{0.0, -1.0, true}, cfg);
    gy -= cfg.step_size;
    if (std::hypot(dx, ty - gy) < cfg.contact_radius) ty = gy - ahead;
    CHECK(s.gripper.y == doctest::Approx(gy).epsilon(1e-12));
    CHECK(s.target.x == doctest::Approx(0.52).epsilon(1e-12));
    CHECK(s.target.y == doctest::Approx(ty).epsilon(1e-12));
  }
  CHECK(ty < 0.5 - 4 * cfg.step_size + 0.01);
}

TEST_CASE("physics is deterministic and never leaves overlaps") {
  SimConfig cfg;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int episode = 0; episode < 50; ++episode) {
    const auto task = generate_task(rng, Split::kTrain, cfg);
    auto s = initial_state(task, rng, cfg);
    for (int t = 0; t < 60; ++t) {
      // Head roughly at the target so contacts happen.
      const Action a{0.5 * (s.target.x - s.gripper.x) / cfg.step_size + 0.3 * u(rng),
                     0.5 * (s.target.y - s.gripper.y) / cfg.step_size + 0.3 * u(rng), true};
      const auto n1 = step(s, a, cfg), n2 = step(s, a, cfg);
      CHECK(n1.gripper.x == n2.gripper.x);
      CHECK(n1.target.y == n2.target.y);
      CHECK(n1.distractor.x == n2.distractor.x);
      CHECK(norm(n1.gripper - n1.target) >= cfg.contact_radius - 1e-9);
      CHECK(norm(n1.gripper - n1.distractor) >= cfg.contact_radius - 1e-9);
      s = n1;
    }
  }
}

TEST_CASE("rendering") {
  SimConfig cfg;
  const auto task = far_task();
  const auto s = state_of(task, {0.3, 0.85});
  const auto robot = render(s, task, DomainStyle::robot(), cfg);
  const auto again = render(s, task, DomainStyle::robot(), cfg);
  CHECK(robot.pixels == again.pixels);
  CHECK(render(s, task, DomainStyle::robot(), cfg, 0.0).pixels == robot.pixels);
  for (double v : robot.pixels) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  std::mt19937_64 rng(2);
  const auto human = render(s, task, sample_demonstrator_style(rng), cfg);
  std::size_t differ = 0;
  const std::size_t n = robot.pixels.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    bool d = false;
    for (int c = 0; c < 3; ++c) d = d || std::fabs(robot.pixels[i * 3 + c] - human.pixels[i * 3 + c]) > 1e-9;
    differ += d;
  }
  CHECK(differ > n / 20);
}

TEST_CASE("scripted expert") {
  SimConfig cfg;
  auto task = far_task();
  task.target.position = task.goal;
  const auto at_goal = scripted_expert(state_of(task, {0.7, 0.9}), task, cfg);
  CHECK(std::hypot(at_goal.vx, at_goal.vy) < 0.05);

  std::mt19937_64 rng(2024);
  int ok = 0;
  for (int i = 0; i < 200; ++i) {
    const auto t = generate_task(rng, Split::kTrain, cfg);
    const auto tr = expert_rollout(t, rng, cfg);
    ok += success(tr, t, cfg);
    for (const auto& a : tr.actions) {
      CHECK(std::fabs(a.vx) <= 1.0);
      CHECK(std::fabs(a.vy) <= 1.0);
    }
  }
  CHECK(ok >= 190);
}

TEST_CASE("demo generation") {
  SimConfig cfg;
  std::mt19937_64 rng(31);
  const auto task = generate_task(rng, Split::kTrain, cfg);
  std::mt19937_64 r1(8), r2(8);
  const auto human = gen_demo(task, DomainStyle::robot(), false, r1, cfg);
  CHECK(std::holds_alternative<HumanDemo>(human));

  std::mt19937_64 s1(12), s2(12), style_rng(3);
  const auto a = std::get<RobotDemo>(gen_demo(task, DomainStyle::robot(), true, s1, cfg));
  const auto b = std::get<RobotDemo>(gen_demo(task, sample_demonstrator_style(style_rng), true, s2, cfg));
  CHECK(a.states == b.states);
  CHECK(a.actions == b.actions);
  CHECK(a.frames != b.frames);
  CHECK(a.frames.size() >= static_cast<std::size_t>(cfg.min_demo_len));
  CHECK(a.frames.size() <= static_cast<std::size_t>(cfg.max_demo_len));
}

TEST_CASE("success rule") {
  SimConfig cfg;
  const auto task = far_task();
  const Vec2 in = task.goal, out{0.9, 0.9};

  std::vector<Vec2> still(cfg.horizon + 1, in);
  CHECK(success(target_track(still), task, cfg));
  std::vector<Vec2> never(cfg.horizon + 1, out);
  CHECK_FALSE(success(target_track(never), task, cfg));

  for (int k : {9, 10}) {
    std::vector<Vec2> track(cfg.horizon + 1, out);
    for (int t = 40; t < 40 + k; ++t) track[t] = in;
    CHECK(steps_in_goal(target_track(track), task, cfg) == k);
    CHECK(success(target_track(track), task, cfg) == (k >= 10));
  }

  // Brute-force count over random tracks.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vec2> track;
    for (int t = 0; t <= cfg.horizon; ++t) {
      track.push_back(u(rng) < 0.15 ? Vec2{task.goal.x + 0.05, task.goal.y} : Vec2{u(rng), u(rng)});
    }
    int count = 0;
    for (int t = 1; t <= cfg.horizon; ++t) count += norm(track[t] - task.goal) <= cfg.goal_radius;
    CHECK(steps_in_goal(target_track(track), task, cfg) == count);
    CHECK(success(target_track(track), task, cfg) == (count >= cfg.success_steps));
  }
}

TEST_CASE("failure classification") {
  SimConfig cfg;
  const auto task = far_task();
  Trajectory tr;
  WorldState s0 = state_of(task, {0.5, 0.9});
  WorldState s1 = s0;
  s1.distractor = s0.distractor + Vec2{0.1, 0.0};
  s1.target = s0.target + Vec2{0.02, 0.0};
  tr.states = {s0, s1};
  CHECK(classify(tr, task, cfg) == Outcome::kTaskIdentification);
  s1.target = s0.target + Vec2{0.0, -0.2};
  tr.states = {s0, s1};
  CHECK(classify(tr, task, cfg) == Outcome::kControl);
}
