#include <sstream>

#include "doctest.h"

#include "daml/dataset.hpp"

using namespace daml;

namespace {

data::Dataset small(std::uint64_t seed) {
  data::GenConfig gen;
  gen.train_tasks = 3;
  gen.heldout_tasks = 2;
  gen.human_demos = 2;
  gen.robot_demos = 1;
  sim::SimConfig cfg;
  cfg.image_size = 12;
  return data::generate_dataset(gen, cfg, seed);
}

std::string bytes(const data::Dataset& ds) {
  std::ostringstream out(std::ios::binary);
  data::write_dataset(out, ds);
  return out.str();
}

}  // namespace

TEST_CASE("dataset counts and splits") {
  const auto ds = small(4);
  CHECK(ds.height == 12);
  CHECK(ds.width == 12);
  REQUIRE(ds.tasks.size() == 5);
  CHECK(ds.split_indices(sim::Split::kTrain) == std::vector<std::size_t>{0, 1, 2});
  CHECK(ds.split_indices(sim::Split::kHeldout) == std::vector<std::size_t>{3, 4});
  for (const auto& t : ds.tasks) {
    CHECK(t.human.size() == 2);
    CHECK(t.robot.size() == 1);
    const auto& r = t.robot[0];
    CHECK(r.states.size() == r.frames.size());
    CHECK(r.actions.size() == r.frames.size());
    CHECK(r.frames[0].pixels.size() == 12u * 12u * 3u);
  }
}

TEST_CASE("write then read is bit-exact") {
  const auto ds = small(5);
  std::istringstream in(bytes(ds), std::ios::binary);
  const auto back = data::read_dataset(in);
  REQUIRE(back.tasks.size() == ds.tasks.size());
  CHECK(bytes(back) == bytes(ds));
  for (std::size_t i = 0; i < ds.tasks.size(); ++i) {
    const auto &a = ds.tasks[i], &b = back.tasks[i];
    CHECK(a.task.split == b.task.split);
    CHECK(a.task.target.color == b.task.target.color);
    CHECK(a.task.goal == b.task.goal);
    CHECK(a.human[0].frames == b.human[0].frames);
    CHECK(a.robot[0].frames == b.robot[0].frames);
  }
}

TEST_CASE("generation is a function of the seed") {
  CHECK(bytes(small(9)) == bytes(small(9)));
  CHECK(bytes(small(9)) != bytes(small(10)));
}

TEST_CASE("corrupt input is rejected") {
  std::istringstream bad(std::string("NOPE") + std::string(32, '\0'), std::ios::binary);
  CHECK_THROWS(data::read_dataset(bad));
  auto good = bytes(small(1));
  std::istringstream cut(good.substr(0, good.size() / 2), std::ios::binary);
  CHECK_THROWS(data::read_dataset(cut));
}

TEST_CASE("subsample indices") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto idx = data::subsample_indices(60, 40, rng);
    REQUIRE(idx.size() == 40);
    for (std::size_t i = 1; i < idx.size(); ++i) CHECK(idx[i] > idx[i - 1]);
    CHECK(idx.back() < 60);
  }
  const auto all = data::subsample_indices(25, 40, rng);
  REQUIRE(all.size() == 25);
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
}
