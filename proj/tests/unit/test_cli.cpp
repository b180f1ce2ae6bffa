#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "daml/cli.hpp"

using namespace daml;
using namespace daml::cli;
namespace fs = std::filesystem;

namespace {

// Small enough that every command runs in well under a second.
const char* kTinyConfig = R"({
  "method": "daml_temporal",
  "meta": {"iterations": 2, "meta_batch_size": 2, "demo_subsample_len": 8, "inner_steps": 1},
  "policy": {"image_size": 8, "conv_filters": [4], "conv_strides": [1], "fc_layers": 2,
             "fc_width": 8, "num_modes": 2, "bias_transform_dim": 2},
  "temporal_loss": {"kernel1": 3, "kernel2": 3, "channels": 4},
  "sim": {"image_size": 8},
  "data": {"train_tasks": 3, "heldout_tasks": 20, "human_demos": 1, "robot_demos": 1},
  "gradcheck": {"trials": 3, "second_order_trials": 2}
})";

struct Workdir {
  fs::path root;

  explicit Workdir(const std::string& name) : root(fs::temp_directory_path() / ("daml_test_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workdir() { fs::remove_all(root); }

  std::string path(const std::string& f) const { return (root / f).string(); }

  std::string write(const std::string& f, const std::string& text) const {
    std::ofstream(path(f), std::ios::binary) << text;
    return path(f);
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Shared dataset: 3 train and 20 heldout tasks.
struct Fixture {
  Workdir dir{"shared"};
  std::string config = dir.write("config.json", kTinyConfig);
  std::string data = dir.path("data.bin");

  Fixture() {
    std::ostringstream log;
    cmd_gen_data({config, data, 5}, log);
  }
};

Fixture& shared() {
  static Fixture f;
  return f;
}

std::string train(const std::string& out, std::uint64_t seed, std::optional<int> iters = std::nullopt,
                  std::optional<std::string> resume = std::nullopt) {
  MetaTrainArgs a;
  a.config_path = shared().config;
  a.data_path = shared().data;
  a.out_path = out;
  a.seed = seed;
  a.iterations = iters;
  a.resume_path = resume;
  std::ostringstream log;
  cmd_meta_train(a, log);
  return out;
}

}  // namespace

TEST_CASE("config parsing") {
  const auto base = nlohmann::json::parse(kTinyConfig);
  const auto cfg = parse_run_config(base);
  CHECK(cfg.policy.image_size == 8);
  CHECK(cfg.temporal.kernel1 == 3);
  CHECK(parse_run_config(to_json(cfg)).policy.fc_width == 8);

  auto unknown = base;
  unknown["meta"]["inner_stepsize"] = 0.1;
  CHECK_THROWS_AS(parse_run_config(unknown), std::invalid_argument);
  auto top = base;
  top["extra"] = 1;
  CHECK_THROWS_AS(parse_run_config(top), std::invalid_argument);
  auto typed = base;
  typed["meta"]["inner_steps"] = "five";
  CHECK_THROWS(parse_run_config(typed));
  auto method = base;
  method["method"] = "lstm";
  CHECK_THROWS(parse_run_config(method));

  // Evaluation and data settings do not change the identity of a trained model.
  auto other = cfg;
  other.eval.trials = 7;
  other.data.train_tasks = 99;
  CHECK(config_hash(other) == config_hash(cfg));
  other.meta.inner_step_size = 0.5;
  CHECK(config_hash(other) != config_hash(cfg));
}

TEST_CASE("model files round-trip bit-exactly") {
  auto cfg = parse_run_config(nlohmann::json::parse(kTinyConfig));
  for (auto method : {Method::kDamlTemporal, Method::kDamlLinear, Method::kContextual, Method::kRecurrent}) {
    cfg.method = method;
    const auto m = init_model(cfg, 3);
    CHECK(m.psi.empty() == !is_daml(method));
    std::ostringstream out(std::ios::binary);
    write_model(out, m);
    std::istringstream in(out.str(), std::ios::binary);
    const auto back = read_model(in);
    CHECK(back.method == method);
    CHECK(back.config_hash == m.config_hash);
    CHECK(back.theta.flatten() == m.theta.flatten());
    CHECK(back.psi.flatten() == m.psi.flatten());
    CHECK(back.theta.names() == m.theta.names());
    std::ostringstream again(std::ios::binary);
    write_model(again, back);
    CHECK(again.str() == out.str());
  }
  std::istringstream junk("not a model", std::ios::binary);
  CHECK_THROWS(read_model(junk));
}

TEST_CASE("meta-train") {
  Workdir dir("train");
  const auto cfg = load_run_config(shared().config);

  const auto zero = load_model(train(dir.path("zero.model"), 4, 0));
  CHECK(zero.theta.flatten() == init_model(cfg, 4).theta.flatten());
  CHECK(zero.psi.flatten() == init_model(cfg, 4).psi.flatten());

  const auto a = train(dir.path("a.model"), 9);
  const auto b = train(dir.path("b.model"), 9);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a) != slurp(dir.path("zero.model")));

  const auto log = slurp(a + ".log.csv");
  CHECK(log.rfind("iteration,outer_loss,inner_loss_pre,inner_loss_post,wall_time_ms\n", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 3);

  const auto resumed = load_model(train(dir.path("resumed.model"), 1, 0, a));
  CHECK(resumed.theta.flatten() == load_model(a).theta.flatten());
  CHECK(resumed.psi.flatten() == load_model(a).psi.flatten());

  MetaTrainArgs wrong;
  wrong.config_path = shared().config;
  wrong.data_path = shared().data;
  wrong.out_path = dir.path("wrong.model");
  wrong.method = "contextual";
  wrong.resume_path = a;
  std::ostringstream sink;
  CHECK_THROWS(cmd_meta_train(wrong, sink));
}

TEST_CASE("evaluate") {
  Workdir dir("eval");
  const auto model = train(dir.path("m.model"), 2);

  EvaluateArgs e;
  e.model_path = model;
  e.data_path = shared().data;
  e.trials = 3;
  e.seed = 17;
  e.no_adapt = true;
  e.report_path = dir.path("report.json");
  e.rollout_log_path = dir.path("rollouts.csv");
  std::ostringstream out;
  cmd_evaluate(e, out);

  const auto report = nlohmann::json::parse(slurp(*e.report_path));
  REQUIRE(report["variants"].size() == 2);
  CHECK(report["variants"][0]["variant"] == "adapted");
  CHECK(report["variants"][1]["variant"] == "unadapted");
  for (const auto& v : report["variants"]) CHECK(v["rollouts"] == 60);

  std::ifstream rl(*e.rollout_log_path);
  const auto rows = read_rollout_log(rl);
  CHECK(rows.size() == 120);
  for (const auto& v : report["variants"]) {
    int successes = 0, rollouts = 0;
    for (const auto& r : rows) {
      if (r.variant != v["variant"].get<std::string>()) continue;
      ++rollouts;
      successes += r.success;
    }
    CHECK(rollouts == 60);
    CHECK(successes == v["successes"].get<int>());
  }

  // Same inputs and seed give the same bytes.
  const auto first = slurp(*e.report_path), first_log = slurp(*e.rollout_log_path);
  cmd_evaluate(e, out);
  CHECK(slurp(*e.report_path) == first);
  CHECK(slurp(*e.rollout_log_path) == first_log);

  EvaluateArgs expert;
  expert.expert = true;
  expert.data_path = shared().data;
  expert.config_path = shared().config;
  expert.seed = 3;
  expert.report_path = dir.path("expert.json");
  cmd_evaluate(expert, out);
  const auto ex = nlohmann::json::parse(slurp(*expert.report_path));
  CHECK(ex["variants"][0]["rollouts"] == 60);
  CHECK(ex["variants"][0]["success_rate"].get<double>() >= 0.95);

  EvaluateArgs both = expert;
  both.model_path = model;
  CHECK_THROWS_AS(cmd_evaluate(both, out), UsageError);
}

TEST_CASE("gen-data is byte-deterministic") {
  Workdir dir("gen");
  std::ostringstream log;
  cmd_gen_data({shared().config, dir.path("again.bin"), 5}, log);
  CHECK(slurp(dir.path("again.bin")) == slurp(shared().data));
  cmd_gen_data({shared().config, dir.path("other.bin"), 6}, log);
  CHECK(slurp(dir.path("other.bin")) != slurp(shared().data));
}

TEST_CASE("plot") {
  Workdir dir("plot");
  SUBCASE("empty log draws empty axes") {
    const auto log = dir.write("empty.csv", "iteration,outer_loss,inner_loss_pre,inner_loss_post,wall_time_ms\n");
    std::ostringstream out;
    cmd_plot({{log}, dir.path("out")}, out);
    const auto svg = slurp(dir.path("out/empty.loss.svg"));
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("<polyline") == std::string::npos);
  }
  SUBCASE("two reports give two labelled bars, deterministically") {
    const auto a = dir.write("a.json", R"({"method":"daml_temporal","variants":[{"variant":"adapted","success_rate":0.8}]})");
    const auto b = dir.write("b.json", R"({"method":"contextual","variants":[{"variant":"adapted","success_rate":0.5}]})");
    std::ostringstream out;
    cmd_plot({{a, b}, dir.path("one")}, out);
    cmd_plot({{a, b}, dir.path("two")}, out);
    const auto svg = slurp(dir.path("one/success.svg"));
    std::size_t bars = 0;
    for (auto p = svg.find("<rect x="); p != std::string::npos; p = svg.find("<rect x=", p + 1)) ++bars;
    CHECK(bars == 2);
    CHECK(svg.find(">daml_temporal<") != std::string::npos);
    CHECK(svg.find(">contextual<") != std::string::npos);
    CHECK(svg == slurp(dir.path("two/success.svg")));
    CHECK(slurp(dir.path("one/summary.csv")) == slurp(dir.path("two/summary.csv")));
  }
  SUBCASE("missing column is an error") {
    const auto bad = dir.write("bad.csv", "iteration,loss\n1,2\n");
    std::ostringstream out;
    CHECK_THROWS(cmd_plot({{bad}, dir.path("out")}, out));
  }
}

TEST_CASE("gradcheck fault injection") {
  gradcheck::Settings s;
  s.trials = 3;
  s.second_order_trials = 2;
  s.include_meta = false;
  const auto clean = gradcheck::run_all(s);
  for (const auto& r : clean) {
    CAPTURE(r.name);
    CHECK(r.passed);
  }

  testing::set_conv_backward_fault(1.5);
  const auto faulty = gradcheck::run_all(s);
  testing::set_conv_backward_fault(1.0);
  REQUIRE(faulty.size() == clean.size());
  int conv_failures = 0;
  for (const auto& r : faulty) {
    CAPTURE(r.name);
    if (r.uses_conv) {
      conv_failures += !r.passed;
      CHECK_FALSE(r.passed);
    } else {
      CHECK(r.passed);
    }
    CHECK(std::isfinite(r.max_rel_error));
  }
  CHECK(conv_failures >= 2);

  const auto j = gradcheck::to_json(faulty);
  CHECK(j.dump().find("max_rel_error") != std::string::npos);
}
