#pragma once

// Paired demonstration datasets and their little-endian binary file format:
//
//   "DAML" | version u32 | height u32 | width u32 | task count u32
//   per task:
//     split u8 | target (shape u8, rgb 3 x f64, position 2 x f64)
//     | distractor (same) | goal 2 x f64
//     | human demo count u32 | per demo: frame count u32, frames u8 RGB
//     | robot demo count u32 | per demo: frame count u32, frames u8 RGB,
//       states f32 [T x 4], actions f32 [T x 3], final pose f32 [2]

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "daml/sim.hpp"

namespace daml::data {

inline constexpr std::uint32_t kDatasetVersion = 1;

struct TaskRecord {
  sim::TaskSpec task;
  std::vector<sim::HumanDemo> human;
  std::vector<sim::RobotDemo> robot;
};

struct Dataset {
  int height = 0;
  int width = 0;
  std::vector<TaskRecord> tasks;

  std::vector<std::size_t> split_indices(sim::Split split) const;
};

struct GenConfig {
  int train_tasks = 60;
  int heldout_tasks = 20;
  int human_demos = 8;
  int robot_demos = 8;
};

/// Tasks are generated first (train then heldout), then each task's demos are
/// drawn from a per-task rng seeded from `seed` and the task index.
Dataset generate_dataset(const GenConfig& gen, const sim::SimConfig& sim_cfg, std::uint64_t seed);

void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

/// Sorted subset of min(len, count) distinct frame indices.
std::vector<std::size_t> subsample_indices(std::size_t len, std::size_t count, std::mt19937_64& rng);

/// Little-endian primitive I/O shared with the model file format.
namespace io {
void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f32(std::ostream& out, float v);
void write_f64(std::ostream& out, double v);
std::uint8_t read_u8(std::istream& in);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
float read_f32(std::istream& in);
double read_f64(std::istream& in);
void write_bytes(std::ostream& out, const void* data, std::size_t n);
void read_bytes(std::istream& in, void* data, std::size_t n);
}  // namespace io

}  // namespace daml::data
