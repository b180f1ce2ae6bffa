#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "daml/cli.hpp"

namespace daml::cli {

namespace {

using namespace data::io;

constexpr char kMagic[8] = {'D', 'A', 'M', 'L', 'M', 'D', 'L', '\0'};
constexpr std::uint32_t kMaxLen = 1u << 28;

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

std::string read_string(std::istream& in) {
  const auto n = read_u32(in);
  if (n > kMaxLen) throw std::runtime_error("corrupt model file: string length");
  std::string s(n, '\0');
  read_bytes(in, s.data(), n);
  return s;
}

void write_params(std::ostream& out, const ParameterVector& p) {
  write_u32(out, static_cast<std::uint32_t>(p.size()));
  for (const auto& e : p.entries()) {
    write_string(out, e.name);
    write_u32(out, static_cast<std::uint32_t>(e.value.ndim()));
    for (auto d : e.value.shape()) write_u64(out, static_cast<std::uint64_t>(d));
    for (double v : e.value.data()) write_f64(out, v);
  }
}

ParameterVector read_params(std::istream& in) {
  const auto n = read_u32(in);
  if (n > kMaxLen) throw std::runtime_error("corrupt model file: parameter count");
  ParameterVector p;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = read_string(in);
    const auto ndim = read_u32(in);
    if (ndim > 8) throw std::runtime_error("corrupt model file: tensor rank");
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = read_u64(in);
      if (dim > kMaxLen) throw std::runtime_error("corrupt model file: tensor dim");
      shape.push_back(static_cast<std::int64_t>(dim));
      numel *= dim;
      if (numel > kMaxLen) throw std::runtime_error("corrupt model file: tensor size");
    }
    std::vector<double> values(numel);
    for (auto& v : values) v = read_f64(in);
    p.add(std::move(name), Tensor::from_data(shape, std::move(values)));
  }
  return p;
}

}  // namespace

RunConfig ModelFile::config() const { return parse_run_config(nlohmann::json::parse(config_json)); }

void write_model(std::ostream& out, const ModelFile& m) {
  write_bytes(out, kMagic, sizeof kMagic);
  write_u32(out, kModelVersion);
  write_u8(out, static_cast<std::uint8_t>(m.method));
  write_u64(out, m.config_hash);
  write_string(out, m.config_json);
  write_params(out, m.theta);
  write_params(out, m.psi);
}

ModelFile read_model(std::istream& in) {
  char magic[sizeof kMagic];
  read_bytes(in, magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw std::runtime_error("not a model file (bad magic)");
  const auto version = read_u32(in);
  if (version != kModelVersion) throw std::runtime_error("unsupported model version " + std::to_string(version));
  ModelFile m;
  const auto method = read_u8(in);
  if (method > static_cast<std::uint8_t>(Method::kRecurrent)) throw std::runtime_error("corrupt model file: method id");
  m.method = static_cast<Method>(method);
  m.config_hash = read_u64(in);
  m.config_json = read_string(in);
  m.theta = read_params(in);
  m.psi = read_params(in);
  if (config_hash(m.config()) != m.config_hash) {
    throw std::runtime_error("model file config hash does not match its stored config");
  }
  return m;
}

void save_model(const std::string& path, const ModelFile& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_model(out, model);
}

ModelFile load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model '" + path + "'");
  return read_model(in);
}

ModelFile init_model(const RunConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelFile m;
  m.method = cfg.method;
  m.config_json = to_json(cfg).dump();
  m.config_hash = config_hash(cfg);
  const auto& pc = cfg.policy;
  switch (cfg.method) {
    case Method::kDamlTemporal:
      m.theta = policy::init_policy(pc, seed);
      m.psi = adaptloss::init_temporal_loss(pc.feature_dim(), pc.fc_width, cfg.temporal, seed + 1);
      break;
    case Method::kDamlLinear:
      m.theta = policy::init_policy(pc, seed);
      m.psi = adaptloss::init_linear_loss(pc.feature_dim(), pc.fc_width, seed + 1);
      break;
    case Method::kContextual:
      m.theta = baselines::init_contextual(pc, seed);
      break;
    case Method::kRecurrent:
      m.theta = baselines::init_recurrent(pc, seed);
      break;
  }
  return m;
}

ModelFile train_model(const data::Dataset& dataset, const ModelFile& init, const RunConfig& cfg,
                      std::uint64_t seed, const metalearn::LogSink& sink) {
  if (dataset.height != cfg.policy.image_size || dataset.width != cfg.policy.image_size) {
    throw std::runtime_error("dataset images are " + std::to_string(dataset.height) + "x" +
                             std::to_string(dataset.width) + " but the policy expects " +
                             std::to_string(cfg.policy.image_size));
  }
  std::mt19937_64 rng(seed);
  metalearn::TrainResult r;
  switch (cfg.method) {
    case Method::kDamlTemporal:
    case Method::kDamlLinear: {
      const auto kind = cfg.method == Method::kDamlTemporal ? adaptloss::AdaptKind::kTemporal
                                                            : adaptloss::AdaptKind::kLinear;
      r = metalearn::meta_train(dataset, init.theta, init.psi, kind, cfg.meta, cfg.policy, rng, sink);
      break;
    }
    case Method::kContextual:
    case Method::kRecurrent: {
      const auto which = cfg.method == Method::kContextual ? baselines::Which::kContextual
                                                           : baselines::Which::kRecurrent;
      r = baselines::baseline_train(dataset, init.theta, which, cfg.meta, cfg.policy, rng, sink);
      break;
    }
  }
  ModelFile out = init;
  out.config_json = to_json(cfg).dump();
  out.config_hash = config_hash(cfg);
  out.theta = std::move(r.theta);
  out.psi = std::move(r.psi);
  return out;
}

}  // namespace daml::cli
