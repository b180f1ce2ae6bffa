// Entry point: daml <gen-data|meta-train|evaluate|gradcheck|plot> [flags]

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "daml/cli.hpp"

namespace {

// Keeps errors on one line so scripts can parse them.
std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace daml::cli;
  CLI::App app{"one-shot imitation from observation with a meta-learned adaptation loss"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a demonstration dataset");
  gen_cmd->add_option("--config", gen.config_path, "run config (JSON)")->required();
  gen_cmd->add_option("--out", gen.out_path, "dataset file to write")->required();
  gen_cmd->add_option("--seed", gen.seed, "rng seed")->required();

  MetaTrainArgs train;
  std::string train_method, train_log, train_resume;
  int train_iters = -1;
  auto* train_cmd = app.add_subcommand("meta-train", "train a model (DAML or a baseline)");
  train_cmd->add_option("--config", train.config_path, "run config (JSON)")->required();
  train_cmd->add_option("--data", train.data_path, "dataset file")->required();
  train_cmd->add_option("--out", train.out_path, "model file to write")->required();
  train_cmd->add_option("--seed", train.seed, "rng seed")->required();
  train_cmd->add_option("--method", train_method, "daml_temporal, daml_linear, contextual or recurrent");
  train_cmd->add_option("--log", train_log, "CSV training log (default <out>.log.csv)");
  train_cmd->add_option("--resume", train_resume, "start from this model's parameters");
  train_cmd->add_option("--iterations", train_iters, "override meta.iterations")->check(CLI::NonNegativeNumber);

  EvaluateArgs eval;
  std::string eval_model, eval_report, eval_rollouts, eval_config;
  auto* eval_cmd = app.add_subcommand("evaluate", "one-shot evaluation on a dataset split");
  eval_cmd->add_option("--model", eval_model, "model file");
  eval_cmd->add_flag("--expert", eval.expert, "evaluate the scripted expert instead of a model");
  eval_cmd->add_option("--data", eval.data_path, "dataset file")->required();
  eval_cmd->add_option("--split", eval.split, "train or heldout")->capture_default_str();
  eval_cmd->add_option("--trials", eval.trials, "rollouts per task")->capture_default_str();
  eval_cmd->add_option("--seed", eval.seed, "rng seed")->required();
  eval_cmd->add_flag("--no-adapt", eval.no_adapt, "also report the unadapted initialization (DAML)");
  eval_cmd->add_option("--report", eval_report, "write the JSON report here");
  eval_cmd->add_option("--rollout-log", eval_rollouts, "write per-rollout CSV here");
  eval_cmd->add_option("--config", eval_config, "simulator settings for --expert");

  GradcheckArgs grad;
  std::string grad_config, grad_out;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  grad_cmd->add_option("--config", grad_config, "run config with a gradcheck section");
  grad_cmd->add_option("--out", grad_out, "write the JSON report here");

  PlotArgs plot;
  auto* plot_cmd = app.add_subcommand("plot", "SVG loss curves and success bar charts");
  plot_cmd->add_option("--in", plot.inputs, "training logs (.csv) and evaluation reports (.json)")->required();
  plot_cmd->add_option("--out", plot.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*gen_cmd) {
      cmd_gen_data(gen, std::cout);
    } else if (*train_cmd) {
      if (!train_method.empty()) train.method = train_method;
      if (!train_log.empty()) train.log_path = train_log;
      if (!train_resume.empty()) train.resume_path = train_resume;
      if (train_iters >= 0) train.iterations = train_iters;
      cmd_meta_train(train, std::cout);
    } else if (*eval_cmd) {
      if (!eval_model.empty()) eval.model_path = eval_model;
      if (!eval_report.empty()) eval.report_path = eval_report;
      if (!eval_rollouts.empty()) eval.rollout_log_path = eval_rollouts;
      if (!eval_config.empty()) eval.config_path = eval_config;
      cmd_evaluate(eval, std::cout);
    } else if (*grad_cmd) {
      if (!grad_config.empty()) grad.config_path = grad_config;
      if (!grad_out.empty()) grad.out_path = grad_out;
      return cmd_gradcheck(grad, std::cout) ? 0 : 1;
    } else if (*plot_cmd) {
      cmd_plot(plot, std::cout);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
