#include <fstream>
#include <set>
#include <stdexcept>

#include "daml/cli.hpp"

namespace daml::cli {

using nlohmann::json;

std::string to_string(Method method) {
  switch (method) {
    case Method::kDamlTemporal: return "daml_temporal";
    case Method::kDamlLinear: return "daml_linear";
    case Method::kContextual: return "contextual";
    case Method::kRecurrent: return "recurrent";
  }
  throw std::invalid_argument("bad method id");
}

Method parse_method(const std::string& s) {
  for (auto m : {Method::kDamlTemporal, Method::kDamlLinear, Method::kContextual, Method::kRecurrent}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown method '" + s +
                              "' (expected daml_temporal, daml_linear, contextual or recurrent)");
}

bool is_daml(Method method) {
  return method == Method::kDamlTemporal || method == Method::kDamlLinear;
}

namespace {

// Reads the keys of one object section, rejecting anything not consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw std::invalid_argument("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      field = it->template get<T>();
    } catch (const json::exception&) {
      throw std::invalid_argument("config: '" + path_ + "." + key + "' has the wrong type");
    }
  }

  std::optional<Section> sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return Section(*it, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) {
        throw std::invalid_argument("config: unknown key '" + (path_.empty() ? k : path_ + "." + k) + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json meta_json(const metalearn::MetaConfig& m) {
  return {{"inner_step_size", m.inner_step_size},
          {"outer_step_size", m.outer_step_size},
          {"inner_steps", m.inner_steps},
          {"clip_lo", m.clip_lo},
          {"clip_hi", m.clip_hi},
          {"meta_batch_size", m.meta_batch_size},
          {"iterations", m.iterations},
          {"bc_mode", metalearn::to_string(m.bc_mode)},
          {"pose_loss_weight", m.pose_loss_weight},
          {"demo_subsample_len", m.demo_subsample_len},
          {"brightness_aug", m.brightness_aug},
          {"second_order", m.second_order}};
}

json policy_json(const policy::PolicyConfig& p) {
  return {{"image_size", p.image_size},   {"conv_filters", p.conv_filters},
          {"conv_strides", p.conv_strides}, {"conv_kernel", p.conv_kernel},
          {"fc_layers", p.fc_layers},     {"fc_width", p.fc_width},
          {"num_modes", p.num_modes},     {"bias_transform_dim", p.bias_transform_dim},
          {"layer_norm", p.layer_norm}};
}

json sim_json(const sim::SimConfig& s) {
  return {{"image_size", s.image_size},
          {"step_size", s.step_size},
          {"contact_radius", s.contact_radius},
          {"object_radius", s.object_radius},
          {"goal_radius", s.goal_radius},
          {"goal", {s.goal.x, s.goal.y}},
          {"horizon", s.horizon},
          {"success_steps", s.success_steps},
          {"min_demo_len", s.min_demo_len},
          {"max_demo_len", s.max_demo_len},
          {"placement_jitter", s.placement_jitter},
          {"expert_retries", s.expert_retries},
          {"demo_action_noise", s.demo_action_noise}};
}

}  // namespace

void RunConfig::validate() const {
  meta.validate();
  if (policy.image_size != sim.image_size) {
    throw std::invalid_argument("config: policy.image_size must equal sim.image_size");
  }
  (void)policy.conv_output_size();
  if (policy.fc_layers < 1 || policy.fc_width < 1 || policy.num_modes < 1) {
    throw std::invalid_argument("config: policy sizes must be positive");
  }
  if (temporal.kernel1 < 1 || temporal.kernel2 < 1 || temporal.channels < 1) {
    throw std::invalid_argument("config: temporal_loss sizes must be positive");
  }
  if (method == Method::kDamlTemporal && meta.demo_subsample_len < temporal.min_length()) {
    throw std::invalid_argument("config: demo_subsample_len is shorter than the temporal loss needs");
  }
  if (data.train_tasks < 0 || data.heldout_tasks < 0 || data.human_demos < 1 || data.robot_demos < 1) {
    throw std::invalid_argument("config: data counts must be non-negative with at least one demo each");
  }
  if (sim.min_demo_len < 1 || sim.max_demo_len < sim.min_demo_len || sim.horizon < 1) {
    throw std::invalid_argument("config: bad demo length or horizon");
  }
  if (sim.demo_action_noise < 0.0) throw std::invalid_argument("config: demo_action_noise must be >= 0");
  if (gradcheck.trials < 1 || gradcheck.second_order_trials < 1) {
    throw std::invalid_argument("config: gradcheck trial counts must be >= 1");
  }
  if (eval.trials < 1) throw std::invalid_argument("config: eval.trials must be >= 1");
  (void)sim::parse_split(eval.split);
}

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  Section root(j, "");
  std::string method = to_string(c.method);
  root.get("method", method);
  c.method = parse_method(method);
  if (auto s = root.sub("meta")) {
    auto& m = c.meta;
    std::string bc = metalearn::to_string(m.bc_mode);
    s->get("inner_step_size", m.inner_step_size);
    s->get("outer_step_size", m.outer_step_size);
    s->get("inner_steps", m.inner_steps);
    s->get("clip_lo", m.clip_lo);
    s->get("clip_hi", m.clip_hi);
    s->get("meta_batch_size", m.meta_batch_size);
    s->get("iterations", m.iterations);
    s->get("bc_mode", bc);
    s->get("pose_loss_weight", m.pose_loss_weight);
    s->get("demo_subsample_len", m.demo_subsample_len);
    s->get("brightness_aug", m.brightness_aug);
    s->get("second_order", m.second_order);
    s->finish();
    m.bc_mode = metalearn::parse_bc_mode(bc);
  }
  if (auto s = root.sub("policy")) {
    auto& p = c.policy;
    s->get("image_size", p.image_size);
    s->get("conv_filters", p.conv_filters);
    s->get("conv_strides", p.conv_strides);
    s->get("conv_kernel", p.conv_kernel);
    s->get("fc_layers", p.fc_layers);
    s->get("fc_width", p.fc_width);
    s->get("num_modes", p.num_modes);
    s->get("bias_transform_dim", p.bias_transform_dim);
    s->get("layer_norm", p.layer_norm);
    s->finish();
  }
  if (auto s = root.sub("temporal_loss")) {
    s->get("kernel1", c.temporal.kernel1);
    s->get("kernel2", c.temporal.kernel2);
    s->get("channels", c.temporal.channels);
    s->finish();
  }
  if (auto s = root.sub("sim")) {
    auto& m = c.sim;
    std::array<double, 2> goal{m.goal.x, m.goal.y};
    s->get("image_size", m.image_size);
    s->get("step_size", m.step_size);
    s->get("contact_radius", m.contact_radius);
    s->get("object_radius", m.object_radius);
    s->get("goal_radius", m.goal_radius);
    s->get("goal", goal);
    s->get("horizon", m.horizon);
    s->get("success_steps", m.success_steps);
    s->get("min_demo_len", m.min_demo_len);
    s->get("max_demo_len", m.max_demo_len);
    s->get("placement_jitter", m.placement_jitter);
    s->get("expert_retries", m.expert_retries);
    s->get("demo_action_noise", m.demo_action_noise);
    s->finish();
    m.goal = {goal[0], goal[1]};
  }
  if (auto s = root.sub("data")) {
    s->get("train_tasks", c.data.train_tasks);
    s->get("heldout_tasks", c.data.heldout_tasks);
    s->get("human_demos", c.data.human_demos);
    s->get("robot_demos", c.data.robot_demos);
    s->finish();
  }
  if (auto s = root.sub("eval")) {
    s->get("trials", c.eval.trials);
    s->get("split", c.eval.split);
    s->finish();
  }
  if (auto s = root.sub("gradcheck")) {
    auto& g = c.gradcheck;
    s->get("trials", g.trials);
    s->get("second_order_trials", g.second_order_trials);
    s->get("seed", g.seed);
    s->get("primitive_tolerance", g.primitive_tolerance);
    s->get("meta_tolerance", g.meta_tolerance);
    s->get("reduction_tolerance", g.reduction_tolerance);
    s->get("second_order_gap", g.second_order_gap);
    s->get("include_meta", g.include_meta);
    s->finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  return {{"method", to_string(c.method)},
          {"meta", meta_json(c.meta)},
          {"policy", policy_json(c.policy)},
          {"temporal_loss",
           {{"kernel1", c.temporal.kernel1}, {"kernel2", c.temporal.kernel2}, {"channels", c.temporal.channels}}},
          {"sim", sim_json(c.sim)},
          {"data",
           {{"train_tasks", c.data.train_tasks},
            {"heldout_tasks", c.data.heldout_tasks},
            {"human_demos", c.data.human_demos},
            {"robot_demos", c.data.robot_demos}}},
          {"eval", {{"trials", c.eval.trials}, {"split", c.eval.split}}},
          {"gradcheck",
           {{"trials", c.gradcheck.trials},
            {"second_order_trials", c.gradcheck.second_order_trials},
            {"seed", c.gradcheck.seed},
            {"primitive_tolerance", c.gradcheck.primitive_tolerance},
            {"meta_tolerance", c.gradcheck.meta_tolerance},
            {"reduction_tolerance", c.gradcheck.reduction_tolerance},
            {"second_order_gap", c.gradcheck.second_order_gap},
            {"include_meta", c.gradcheck.include_meta}}}};
}

std::uint64_t config_hash(const RunConfig& cfg) {
  auto j = to_json(cfg);
  j.erase("data");
  j.erase("eval");
  j.erase("gradcheck");
  const auto text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace daml::cli
