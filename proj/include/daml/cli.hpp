#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "daml/adaptloss.hpp"
#include "daml/baselines.hpp"
#include "daml/dataset.hpp"
#include "daml/gradcheck.hpp"
#include "daml/metalearn.hpp"

namespace daml::cli {

enum class Method : std::uint8_t { kDamlTemporal = 0, kDamlLinear = 1, kContextual = 2, kRecurrent = 3 };

std::string to_string(Method method);
Method parse_method(const std::string& s);
bool is_daml(Method method);

struct EvalSettings {
  int trials = 3;
  std::string split = "heldout";
};

/// Everything a command needs besides seeds and paths, which are flags.
struct RunConfig {
  Method method = Method::kDamlTemporal;
  metalearn::MetaConfig meta;
  policy::PolicyConfig policy;
  adaptloss::TemporalLossConfig temporal;
  sim::SimConfig sim;
  data::GenConfig data;
  EvalSettings eval;
  gradcheck::Settings gradcheck;

  void validate() const;
};

/// Missing keys keep their defaults; unknown keys and wrong types throw.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json to_json(const RunConfig& cfg);

/// FNV-1a over the canonical JSON of the fields that shape a trained model
/// (method, meta, policy, temporal loss, sim).
std::uint64_t config_hash(const RunConfig& cfg);

struct ModelFile {
  Method method = Method::kDamlTemporal;
  std::uint64_t config_hash = 0;
  /// Canonical JSON of the RunConfig used for training.
  std::string config_json;
  ParameterVector theta;
  /// Empty for the baselines.
  ParameterVector psi;

  RunConfig config() const;
};

inline constexpr std::uint32_t kModelVersion = 1;

void write_model(std::ostream& out, const ModelFile& model);
ModelFile read_model(std::istream& in);
void save_model(const std::string& path, const ModelFile& model);
ModelFile load_model(const std::string& path);

/// Fresh parameters for `cfg.method` (θ and, for DAML, ψ).
ModelFile init_model(const RunConfig& cfg, std::uint64_t seed);

/// Runs training for `cfg.meta.iterations` starting from `init`.
ModelFile train_model(const data::Dataset& dataset, const ModelFile& init, const RunConfig& cfg,
                      std::uint64_t seed, const metalearn::LogSink& sink = {});

// Evaluation -----------------------------------------------------------------

struct RolloutRecord {
  std::string variant;
  std::size_t task = 0;  // index into the dataset
  int trial = 0;
  std::uint64_t seed = 0;
  bool success = false;
  int steps_in_goal = 0;
  sim::Outcome outcome = sim::Outcome::kControl;
};

struct VariantSummary {
  std::string variant;
  int rollouts = 0;
  int successes = 0;
  int task_identification_failures = 0;
  int control_failures = 0;
  /// Per task in split order: (dataset index, successes).
  std::vector<std::pair<std::size_t, int>> per_task;

  double success_rate() const { return rollouts == 0 ? 0.0 : static_cast<double>(successes) / rollouts; }
};

struct EvalReport {
  std::string method;
  std::string split;
  int trials_per_task = 0;
  std::uint64_t seed = 0;
  std::vector<VariantSummary> variants;
  std::vector<RolloutRecord> rollouts;
};

/// Builds the rollout function for one task from the human demo chosen for it.
using RolloutFn = std::function<sim::Trajectory(const sim::TaskSpec&, std::mt19937_64&)>;
using RolloutFactory = std::function<RolloutFn(const data::TaskRecord&, const sim::HumanDemo&)>;

/// Per-task demo choice and trial seeds depend only on (seed, task index,
/// trial). Tasks run in parallel; results are merged in task order.
EvalReport evaluate(const data::Dataset& dataset, sim::Split split, int trials, std::uint64_t seed,
                    const std::vector<std::pair<std::string, RolloutFactory>>& variants,
                    const sim::SimConfig& sim_cfg, const std::string& method_label);

/// "adapted" (one-shot adaptation or demo conditioning), plus "unadapted"
/// (θ* as trained) for DAML models when `with_unadapted` is set.
std::vector<std::pair<std::string, RolloutFactory>> model_variants(const ModelFile& model,
                                                                   bool with_unadapted);
/// The scripted expert, which ignores the demo.
std::vector<std::pair<std::string, RolloutFactory>> expert_variants(const sim::SimConfig& sim_cfg);

nlohmann::ordered_json to_json(const EvalReport& report);
void write_rollout_log(std::ostream& out, const std::vector<RolloutRecord>& rollouts);
std::vector<RolloutRecord> read_rollout_log(std::istream& in);

// Commands -------------------------------------------------------------------

/// Thrown for bad user input; the entry point prints the message and exits 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenDataArgs {
  std::string config_path;
  std::string out_path;
  std::uint64_t seed = 0;
};
void cmd_gen_data(const GenDataArgs& args, std::ostream& log);

struct MetaTrainArgs {
  std::string config_path;
  std::string data_path;
  std::string out_path;
  std::optional<std::string> method;
  std::optional<std::string> log_path;  // default: <out>.log.csv
  std::optional<std::string> resume_path;
  std::optional<int> iterations;
  std::uint64_t seed = 0;
};
void cmd_meta_train(const MetaTrainArgs& args, std::ostream& log);

struct EvaluateArgs {
  std::optional<std::string> model_path;
  bool expert = false;
  std::string data_path;
  std::string split = "heldout";
  int trials = 3;
  std::uint64_t seed = 0;
  bool no_adapt = false;
  std::optional<std::string> report_path;  // default: stdout only
  std::optional<std::string> rollout_log_path;
  std::optional<std::string> config_path;  // sim settings for --expert
};
void cmd_evaluate(const EvaluateArgs& args, std::ostream& out);

struct GradcheckArgs {
  std::optional<std::string> config_path;
  std::optional<std::string> out_path;
};
/// Returns true when every check passed.
bool cmd_gradcheck(const GradcheckArgs& args, std::ostream& out);

struct PlotArgs {
  std::vector<std::string> inputs;
  std::string out_dir;
};
void cmd_plot(const PlotArgs& args, std::ostream& log);

// Plotting -------------------------------------------------------------------

/// Training-loss curve; an empty series draws empty axes.
std::string loss_curve_svg(const std::string& title, const std::vector<std::pair<double, double>>& points);
/// One labelled bar per entry, values in [0, 1].
std::string bar_chart_svg(const std::string& title,
                          const std::vector<std::pair<std::string, double>>& bars);

}  // namespace daml::cli
