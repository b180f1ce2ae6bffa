#include "daml/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace daml::data {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace io {

void write_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw std::runtime_error("write failed");
}

void read_bytes(std::istream& in, void* data, std::size_t n) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) throw std::runtime_error("unexpected end of file");
}

void write_u8(std::ostream& out, std::uint8_t v) { write_bytes(out, &v, 1); }
void write_u32(std::ostream& out, std::uint32_t v) { write_bytes(out, &v, 4); }
void write_u64(std::ostream& out, std::uint64_t v) { write_bytes(out, &v, 8); }
void write_f32(std::ostream& out, float v) { write_bytes(out, &v, 4); }
void write_f64(std::ostream& out, double v) { write_bytes(out, &v, 8); }

std::uint8_t read_u8(std::istream& in) { std::uint8_t v; read_bytes(in, &v, 1); return v; }
std::uint32_t read_u32(std::istream& in) { std::uint32_t v; read_bytes(in, &v, 4); return v; }
std::uint64_t read_u64(std::istream& in) { std::uint64_t v; read_bytes(in, &v, 8); return v; }
float read_f32(std::istream& in) { float v; read_bytes(in, &v, 4); return v; }
double read_f64(std::istream& in) { double v; read_bytes(in, &v, 8); return v; }

}  // namespace io

namespace {

using namespace io;

constexpr char kMagic[4] = {'D', 'A', 'M', 'L'};
constexpr std::uint32_t kMaxCount = 1u << 24;

std::uint32_t checked_count(std::istream& in, const char* what) {
  const auto n = read_u32(in);
  if (n > kMaxCount) throw std::runtime_error(std::string("corrupt dataset: implausible ") + what);
  return n;
}

void write_object(std::ostream& out, const sim::ObjectSpec& o) {
  write_u8(out, static_cast<std::uint8_t>(o.shape));
  for (double c : o.color) write_f64(out, c);
  write_f64(out, o.position.x);
  write_f64(out, o.position.y);
}

sim::ObjectSpec read_object(std::istream& in) {
  sim::ObjectSpec o;
  const auto shape = read_u8(in);
  if (shape > static_cast<std::uint8_t>(sim::Shape::kCross)) throw std::runtime_error("corrupt dataset: shape id");
  o.shape = static_cast<sim::Shape>(shape);
  for (double& c : o.color) c = read_f64(in);
  o.position.x = read_f64(in);
  o.position.y = read_f64(in);
  return o;
}

void write_frames(std::ostream& out, const std::vector<sim::ImageU8>& frames, int h, int w) {
  write_u32(out, static_cast<std::uint32_t>(frames.size()));
  for (const auto& f : frames) {
    if (f.height != h || f.width != w) throw std::invalid_argument("frame size differs from dataset header");
    write_bytes(out, f.pixels.data(), f.pixels.size());
  }
}

std::vector<sim::ImageU8> read_frames(std::istream& in, int h, int w, std::uint32_t count) {
  std::vector<sim::ImageU8> frames(count);
  for (auto& f : frames) {
    f.height = h;
    f.width = w;
    f.pixels.resize(static_cast<std::size_t>(h * w * 3));
    read_bytes(in, f.pixels.data(), f.pixels.size());
  }
  return frames;
}

}  // namespace

std::vector<std::size_t> Dataset::split_indices(sim::Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].task.split == split) out.push_back(i);
  }
  return out;
}

Dataset generate_dataset(const GenConfig& gen, const sim::SimConfig& sim_cfg, std::uint64_t seed) {
  const auto pool = sim::TaskPool::generate(seed, gen.train_tasks, gen.heldout_tasks, sim_cfg);
  Dataset ds;
  ds.height = ds.width = sim_cfg.image_size;
  std::vector<sim::TaskSpec> specs = pool.train;
  specs.insert(specs.end(), pool.heldout.begin(), pool.heldout.end());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (i + 1)));
    TaskRecord rec;
    rec.task = specs[i];
    for (int d = 0; d < gen.human_demos; ++d) {
      const auto style = sim::sample_demonstrator_style(rng);
      rec.human.push_back(std::get<sim::HumanDemo>(sim::gen_demo(rec.task, style, false, rng, sim_cfg)));
    }
    for (int d = 0; d < gen.robot_demos; ++d) {
      rec.robot.push_back(std::get<sim::RobotDemo>(
          sim::gen_demo(rec.task, sim::DomainStyle::robot(), true, rng, sim_cfg)));
    }
    ds.tasks.push_back(std::move(rec));
  }
  return ds;
}

void write_dataset(std::ostream& out, const Dataset& ds) {
  write_bytes(out, kMagic, 4);
  write_u32(out, kDatasetVersion);
  write_u32(out, static_cast<std::uint32_t>(ds.height));
  write_u32(out, static_cast<std::uint32_t>(ds.width));
  write_u32(out, static_cast<std::uint32_t>(ds.tasks.size()));
  for (const auto& rec : ds.tasks) {
    write_u8(out, static_cast<std::uint8_t>(rec.task.split));
    write_object(out, rec.task.target);
    write_object(out, rec.task.distractor);
    write_f64(out, rec.task.goal.x);
    write_f64(out, rec.task.goal.y);
    write_u32(out, static_cast<std::uint32_t>(rec.human.size()));
    for (const auto& d : rec.human) write_frames(out, d.frames, ds.height, ds.width);
    write_u32(out, static_cast<std::uint32_t>(rec.robot.size()));
    for (const auto& d : rec.robot) {
      const auto t = d.frames.size();
      if (d.states.size() != t || d.actions.size() != t) {
        throw std::invalid_argument("robot demo sequences differ in length");
      }
      write_frames(out, d.frames, ds.height, ds.width);
      for (const auto& s : d.states)
        for (double v : s) write_f32(out, static_cast<float>(v));
      for (const auto& a : d.actions)
        for (double v : a) write_f32(out, static_cast<float>(v));
      for (double v : d.final_pose) write_f32(out, static_cast<float>(v));
    }
  }
}

Dataset read_dataset(std::istream& in) {
  char magic[4];
  read_bytes(in, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not a dataset file (bad magic)");
  const auto version = read_u32(in);
  if (version != kDatasetVersion) {
    throw std::runtime_error("unsupported dataset version " + std::to_string(version));
  }
  Dataset ds;
  ds.height = static_cast<int>(read_u32(in));
  ds.width = static_cast<int>(read_u32(in));
  if (ds.height <= 0 || ds.width <= 0 || ds.height > 4096 || ds.width > 4096) {
    throw std::runtime_error("corrupt dataset: image size");
  }
  const auto n_tasks = checked_count(in, "task count");
  for (std::uint32_t i = 0; i < n_tasks; ++i) {
    TaskRecord rec;
    const auto split = read_u8(in);
    if (split > 1) throw std::runtime_error("corrupt dataset: split id");
    rec.task.split = static_cast<sim::Split>(split);
    rec.task.target = read_object(in);
    rec.task.distractor = read_object(in);
    rec.task.goal.x = read_f64(in);
    rec.task.goal.y = read_f64(in);
    const auto n_h = checked_count(in, "human demo count");
    for (std::uint32_t d = 0; d < n_h; ++d) {
      rec.human.push_back({read_frames(in, ds.height, ds.width, checked_count(in, "frame count"))});
    }
    const auto n_r = checked_count(in, "robot demo count");
    for (std::uint32_t d = 0; d < n_r; ++d) {
      sim::RobotDemo demo;
      const auto t = checked_count(in, "frame count");
      demo.frames = read_frames(in, ds.height, ds.width, t);
      demo.states.resize(t);
      demo.actions.resize(t);
      for (auto& s : demo.states)
        for (double& v : s) v = read_f32(in);
      for (auto& a : demo.actions)
        for (double& v : a) v = read_f32(in);
      for (double& v : demo.final_pose) v = read_f32(in);
      rec.robot.push_back(std::move(demo));
    }
    ds.tasks.push_back(std::move(rec));
  }
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_dataset(out, ds);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  return read_dataset(in);
}

std::vector<std::size_t> subsample_indices(std::size_t len, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(len);
  std::iota(idx.begin(), idx.end(), 0);
  if (len <= count) return idx;
  // Partial Fisher-Yates, then restore temporal order.
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(i, len - 1)(rng);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace daml::data
