#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "daml/cli.hpp"

namespace daml::cli {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  return out;
}

std::string percent(double rate) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << 100.0 * rate << '%';
  return s.str();
}

}  // namespace

void cmd_gen_data(const GenDataArgs& args, std::ostream& log) {
  const auto cfg = load_run_config(args.config_path);
  const auto ds = data::generate_dataset(cfg.data, cfg.sim, args.seed);
  data::save_dataset(args.out_path, ds);

  std::size_t n_human = 0, n_robot = 0, min_len = SIZE_MAX, max_len = 0, total_len = 0;
  for (const auto& rec : ds.tasks) {
    n_human += rec.human.size();
    n_robot += rec.robot.size();
    for (const auto& d : rec.robot) {
      min_len = std::min(min_len, d.frames.size());
      max_len = std::max(max_len, d.frames.size());
      total_len += d.frames.size();
    }
    for (const auto& d : rec.human) {
      min_len = std::min(min_len, d.frames.size());
      max_len = std::max(max_len, d.frames.size());
      total_len += d.frames.size();
    }
  }
  const std::size_t n_demos = n_human + n_robot;
  log << "wrote " << args.out_path << ": " << ds.split_indices(sim::Split::kTrain).size() << " train tasks, "
      << ds.split_indices(sim::Split::kHeldout).size() << " heldout tasks, " << n_human << " human demos, "
      << n_robot << " robot demos\n";
  if (n_demos > 0) {
    log << "demo length min " << min_len << " mean " << std::fixed << std::setprecision(1)
        << static_cast<double>(total_len) / n_demos << " max " << max_len << '\n';
  }
}

void cmd_meta_train(const MetaTrainArgs& args, std::ostream& log) {
  auto cfg = load_run_config(args.config_path);
  if (args.method) cfg.method = parse_method(*args.method);
  if (args.iterations) cfg.meta.iterations = *args.iterations;
  cfg.validate();
  const auto ds = data::load_dataset(args.data_path);

  ModelFile init = init_model(cfg, args.seed);
  if (args.resume_path) {
    auto resumed = load_model(*args.resume_path);
    if (resumed.method != cfg.method) {
      throw UsageError("resume: model method " + to_string(resumed.method) + " differs from " +
                       to_string(cfg.method));
    }
    if (!resumed.theta.same_layout(init.theta) || !resumed.psi.same_layout(init.psi)) {
      throw UsageError("resume: model parameters do not match the configured architecture");
    }
    init.theta = std::move(resumed.theta);
    init.psi = std::move(resumed.psi);
  }

  const std::string log_path = args.log_path.value_or(args.out_path + ".log.csv");
  auto csv = open_out(log_path);
  metalearn::write_log_header(csv);
  const int iters = cfg.meta.iterations;
  const int every = std::max(1, iters / 20);
  log << "meta-train " << to_string(cfg.method) << ": " << iters << " iterations, " << init.theta.total_len()
      << " policy parameters";
  if (!init.psi.empty()) log << ", " << init.psi.total_len() << " loss parameters";
  log << '\n';
  auto sink = [&](const metalearn::LogRow& row) {
    metalearn::write_log_row(csv, row);
    if (row.iteration % every == 0 || row.iteration == iters - 1) {
      csv.flush();
      log << "  iter " << row.iteration << "  outer " << std::setprecision(6) << row.outer_loss;
      if (is_daml(cfg.method)) log << "  inner " << row.inner_loss_pre << " -> " << row.inner_loss_post;
      log << "  " << std::fixed << std::setprecision(1) << row.wall_time_ms / 1000.0 << "s\n"
          << std::defaultfloat;
    }
  };
  const auto model = train_model(ds, init, cfg, args.seed, sink);
  save_model(args.out_path, model);
  log << "wrote " << args.out_path << " and " << log_path << '\n';
}

void cmd_evaluate(const EvaluateArgs& args, std::ostream& out) {
  if (args.expert == args.model_path.has_value()) {
    throw UsageError("evaluate needs exactly one of --model or --expert");
  }
  if (args.trials < 1) throw UsageError("--trials must be >= 1");
  const auto split = sim::parse_split(args.split);
  const auto ds = data::load_dataset(args.data_path);

  std::vector<std::pair<std::string, RolloutFactory>> variants;
  sim::SimConfig sim_cfg;
  std::string label;
  if (args.expert) {
    if (args.config_path) sim_cfg = load_run_config(*args.config_path).sim;
    variants = expert_variants(sim_cfg);
    label = "expert";
  } else {
    const auto model = load_model(*args.model_path);
    const auto cfg = model.config();
    if (ds.height != cfg.policy.image_size || ds.width != cfg.policy.image_size) {
      throw UsageError("dataset image size does not match the model");
    }
    if (args.no_adapt && !is_daml(model.method)) {
      throw UsageError("--no-adapt applies only to DAML models");
    }
    sim_cfg = cfg.sim;
    variants = model_variants(model, args.no_adapt);
    label = to_string(model.method);
  }
  if (ds.height != sim_cfg.image_size) throw UsageError("dataset image size does not match the simulator");

  const auto report = evaluate(ds, split, args.trials, args.seed, variants, sim_cfg, label);
  const auto j = to_json(report);
  if (args.report_path) {
    auto f = open_out(*args.report_path);
    f << j.dump(2) << '\n';
  }
  if (args.rollout_log_path) {
    auto f = open_out(*args.rollout_log_path);
    write_rollout_log(f, report.rollouts);
  }
  if (!args.report_path) {
    out << j.dump(2) << '\n';
    return;
  }
  for (const auto& v : report.variants) {
    out << label << ' ' << v.variant << ": " << v.successes << '/' << v.rollouts << " ("
        << percent(v.success_rate()) << "), task identification failures " << v.task_identification_failures
        << ", control failures " << v.control_failures << '\n';
  }
}

bool cmd_gradcheck(const GradcheckArgs& args, std::ostream& out) {
  gradcheck::Settings settings;
  if (args.config_path) settings = load_run_config(*args.config_path).gradcheck;
  const auto results = gradcheck::run_all(settings);
  const auto j = gradcheck::to_json(results);
  if (args.out_path) {
    auto f = open_out(*args.out_path);
    f << j.dump(2) << '\n';
  }
  bool ok = true;
  for (const auto& r : results) {
    ok = ok && r.passed;
    out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(34) << r.name << std::right
        << std::scientific << std::setprecision(2) << r.max_rel_error
        << (r.kind == "min_gap" ? " > " : " <= ") << r.tolerance << std::defaultfloat << '\n';
  }
  out << (ok ? "all checks passed" : "some checks failed") << '\n';
  return ok;
}

}  // namespace daml::cli
