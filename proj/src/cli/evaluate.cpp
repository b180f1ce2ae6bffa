#include <algorithm>
#include <atomic>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "daml/cli.hpp"

namespace daml::cli {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t task, std::uint64_t slot) {
  return splitmix64(splitmix64(splitmix64(seed) ^ task) ^ slot);
}

constexpr std::uint64_t kDemoSlot = 0xffffffffULL;

struct TaskResult {
  std::vector<RolloutRecord> records;
};

TaskResult run_task(const data::TaskRecord& rec, std::size_t task_index, int trials,
                    std::uint64_t seed,
                    const std::vector<std::pair<std::string, RolloutFactory>>& variants,
                    const sim::SimConfig& sim_cfg) {
  if (rec.human.empty()) throw std::runtime_error("task " + std::to_string(task_index) + " has no human demo");
  std::mt19937_64 pick(derive_seed(seed, task_index, kDemoSlot));
  const auto& demo = rec.human[std::uniform_int_distribution<std::size_t>(0, rec.human.size() - 1)(pick)];
  TaskResult out;
  for (const auto& [name, factory] : variants) {
    const auto run = factory(rec, demo);
    for (int t = 0; t < trials; ++t) {
      RolloutRecord r;
      r.variant = name;
      r.task = task_index;
      r.trial = t;
      r.seed = derive_seed(seed, task_index, static_cast<std::uint64_t>(t));
      std::mt19937_64 rng(r.seed);
      const auto traj = run(rec.task, rng);
      r.steps_in_goal = sim::steps_in_goal(traj, rec.task, sim_cfg);
      r.outcome = sim::classify(traj, rec.task, sim_cfg);
      r.success = r.outcome == sim::Outcome::kSuccess;
      out.records.push_back(r);
    }
  }
  return out;
}

}  // namespace

EvalReport evaluate(const data::Dataset& dataset, sim::Split split, int trials, std::uint64_t seed,
                    const std::vector<std::pair<std::string, RolloutFactory>>& variants,
                    const sim::SimConfig& sim_cfg, const std::string& method_label) {
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  const auto tasks = dataset.split_indices(split);
  if (tasks.empty()) throw std::runtime_error("dataset has no " + sim::to_string(split) + " tasks");
  std::vector<TaskResult> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next++) < tasks.size();) {
      try {
        results[k] = run_task(dataset.tasks[tasks[k]], tasks[k], trials, seed, variants, sim_cfg);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const auto n_threads = std::max<std::size_t>(
      1, std::min<std::size_t>(std::thread::hardware_concurrency(), tasks.size()));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  EvalReport rep;
  rep.method = method_label;
  rep.split = sim::to_string(split);
  rep.trials_per_task = trials;
  rep.seed = seed;
  for (const auto& [name, factory] : variants) {
    VariantSummary s;
    s.variant = name;
    rep.variants.push_back(s);
  }
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    for (auto& s : rep.variants) s.per_task.emplace_back(tasks[k], 0);
    for (const auto& r : results[k].records) {
      auto& s = *std::find_if(rep.variants.begin(), rep.variants.end(),
                              [&](const VariantSummary& v) { return v.variant == r.variant; });
      ++s.rollouts;
      if (r.outcome == sim::Outcome::kSuccess) {
        ++s.successes;
        ++s.per_task.back().second;
      } else if (r.outcome == sim::Outcome::kTaskIdentification) {
        ++s.task_identification_failures;
      } else {
        ++s.control_failures;
      }
      rep.rollouts.push_back(r);
    }
  }
  return rep;
}

std::vector<std::pair<std::string, RolloutFactory>> model_variants(const ModelFile& model,
                                                                   bool with_unadapted) {
  const auto cfg = model.config();
  std::vector<std::pair<std::string, RolloutFactory>> out;
  const auto sim_cfg = cfg.sim;
  if (is_daml(model.method)) {
    const auto kind = model.method == Method::kDamlTemporal ? adaptloss::AdaptKind::kTemporal
                                                            : adaptloss::AdaptKind::kLinear;
    const auto theta = model.theta.detached();
    const auto psi = model.psi.detached();
    out.emplace_back("adapted", [=](const data::TaskRecord&, const sim::HumanDemo& demo) -> RolloutFn {
      const auto phi = metalearn::meta_test_adapt(theta, psi, kind, demo, cfg.meta, cfg.policy);
      const auto controller = policy::make_policy_controller(phi, cfg.policy);
      return [=](const sim::TaskSpec& task, std::mt19937_64& rng) {
        return policy::rollout(controller, task, sim_cfg, rng);
      };
    });
    if (with_unadapted) {
      out.emplace_back("unadapted", [=](const data::TaskRecord&, const sim::HumanDemo&) -> RolloutFn {
        const auto controller = policy::make_policy_controller(theta, cfg.policy);
        return [=](const sim::TaskSpec& task, std::mt19937_64& rng) {
          return policy::rollout(controller, task, sim_cfg, rng);
        };
      });
    }
    return out;
  }
  const auto which = model.method == Method::kContextual ? baselines::Which::kContextual
                                                         : baselines::Which::kRecurrent;
  const auto params = model.theta.detached();
  out.emplace_back("adapted", [=](const data::TaskRecord&, const sim::HumanDemo& demo) -> RolloutFn {
    return [=, &demo](const sim::TaskSpec& task, std::mt19937_64& rng) {
      // Fresh controller per rollout so recurrent state never leaks between trials.
      const auto controller = baselines::make_controller(params, which, demo, cfg.meta, cfg.policy);
      return policy::rollout(controller, task, sim_cfg, rng);
    };
  });
  return out;
}

std::vector<std::pair<std::string, RolloutFactory>> expert_variants(const sim::SimConfig& sim_cfg) {
  return {{"expert", [sim_cfg](const data::TaskRecord&, const sim::HumanDemo&) -> RolloutFn {
             return [sim_cfg](const sim::TaskSpec& task, std::mt19937_64& rng) {
               return sim::expert_rollout(task, rng, sim_cfg);
             };
           }}};
}

nlohmann::ordered_json to_json(const EvalReport& rep) {
  nlohmann::ordered_json j;
  j["method"] = rep.method;
  j["split"] = rep.split;
  j["trials_per_task"] = rep.trials_per_task;
  j["seed"] = rep.seed;
  j["variants"] = nlohmann::ordered_json::array();
  for (const auto& v : rep.variants) {
    nlohmann::ordered_json vj;
    vj["variant"] = v.variant;
    vj["rollouts"] = v.rollouts;
    vj["successes"] = v.successes;
    vj["success_rate"] = v.success_rate();
    vj["task_identification_failures"] = v.task_identification_failures;
    vj["control_failures"] = v.control_failures;
    vj["per_task"] = nlohmann::ordered_json::array();
    for (const auto& [task, n] : v.per_task) {
      vj["per_task"].push_back({{"task", task}, {"successes", n}});
    }
    j["variants"].push_back(vj);
  }
  return j;
}

void write_rollout_log(std::ostream& out, const std::vector<RolloutRecord>& rollouts) {
  out << "variant,task,trial,seed,success,steps_in_goal,outcome\n";
  for (const auto& r : rollouts) {
    out << r.variant << ',' << r.task << ',' << r.trial << ',' << r.seed << ',' << (r.success ? 1 : 0)
        << ',' << r.steps_in_goal << ',' << sim::to_string(r.outcome) << '\n';
  }
}

std::vector<RolloutRecord> read_rollout_log(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "variant,task,trial,seed,success,steps_in_goal,outcome") {
    throw std::runtime_error("rollout log: missing or unexpected header");
  }
  std::vector<RolloutRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw std::runtime_error("rollout log: malformed row '" + line + "'");
    RolloutRecord r;
    r.variant = f[0];
    r.task = std::stoull(f[1]);
    r.trial = std::stoi(f[2]);
    r.seed = std::stoull(f[3]);
    r.success = f[4] == "1";
    r.steps_in_goal = std::stoi(f[5]);
    if (f[6] == sim::to_string(sim::Outcome::kSuccess)) r.outcome = sim::Outcome::kSuccess;
    else if (f[6] == sim::to_string(sim::Outcome::kTaskIdentification)) r.outcome = sim::Outcome::kTaskIdentification;
    else if (f[6] == sim::to_string(sim::Outcome::kControl)) r.outcome = sim::Outcome::kControl;
    else throw std::runtime_error("rollout log: unknown outcome '" + f[6] + "'");
    out.push_back(r);
  }
  return out;
}

}  // namespace daml::cli
