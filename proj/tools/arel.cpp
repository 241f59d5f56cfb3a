// Command-line front end: training runs, policy evaluation, reward
// redistribution exports, theory verification and gradient checking.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
// 4 verification failure, 1 anything else.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "arel/experiment.hpp"
#include "arel/gradcheck.hpp"
#include "arel/io.hpp"
#include "arel/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitVerification = 4;

/// Relative paths land under $AREL_OUTPUT_ROOT when it is set.
std::string resolve_output(const std::string& path) {
  const char* root = std::getenv("AREL_OUTPUT_ROOT");
  if (!root || path.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(root) / path).string();
}

arel::RunConfig load_config(const std::string& path) {
  return arel::parse_config_text(arel::read_text(path));
}

void emit(const nlohmann::json& j, const std::string& out_path) {
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    arel::atomic_write_text(resolve_output(out_path), text);
  }
}

int cmd_train(const std::string& config_path, const std::vector<std::uint64_t>& seed_override,
              bool parallel_seeds) {
  arel::RunConfig cfg = load_config(config_path);
  if (!seed_override.empty()) cfg.seeds = seed_override;
  if (parallel_seeds) cfg.parallel_seeds = true;
  cfg.out_dir = resolve_output(cfg.out_dir);
  cfg.validate();

  const auto result = arel::run_experiment(cfg);
  arel::write_run_artifacts(cfg, result);

  std::vector<double> finals, aucs;
  for (const auto& run : result.seeds) {
    std::cout << "seed " << run.seed << ": final_return=" << run.final_return
              << " final_success=" << run.final_success << " auc_success=" << run.auc_success << "\n";
    finals.push_back(run.final_success);
    aucs.push_back(run.auc_success);
  }
  std::cout << "median final_success=" << arel::median(finals) << " median auc_success=" << arel::median(aucs)
            << "\nartifacts: " << cfg.out_dir << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::vector<std::uint64_t>& seed_override, const std::string& out_path) {
  arel::RunConfig cfg = load_config(config_path);
  if (!seed_override.empty()) cfg.seeds = seed_override;
  auto policy = arel::TabularPolicy::from_records(arel::read_checkpoint(checkpoint), arel::kNumActions);

  nlohmann::json per_seed = nlohmann::json::array();
  std::vector<double> rets, succ;
  for (auto seed : cfg.seeds) {
    const auto pt = arel::evaluate_policy(cfg, policy, seed, cfg.episodes);
    per_seed.push_back({{"seed", seed}, {"eval_return", pt.eval_return}, {"success_rate", pt.success_rate}});
    rets.push_back(pt.eval_return);
    succ.push_back(pt.success_rate);
  }
  emit(nlohmann::json{{"seeds", per_seed},
                      {"median_eval_return", arel::median(rets)},
                      {"median_success_rate", arel::median(succ)},
                      {"eval_epsilon", cfg.eval_epsilon}},
       out_path);
  return kExitOk;
}

int cmd_redistribute(const std::string& config_path, const std::string& checkpoint,
                     const std::string& episodes_path, const std::string& out_path,
                     const std::string& trace_path) {
  arel::RunConfig cfg = load_config(config_path);
  arel::Rng init(1);
  arel::CreditModel model(cfg.credit_model_config(), init);
  arel::load_parameters(checkpoint, model.named_parameters());

  auto buffer = arel::ExperienceBuffer::load_jsonl(episodes_path, 1u << 20);
  if (buffer.size() == 0) throw arel::ValidationError("episodes file is empty");

  bool any_hidden = false;
  for (std::size_t i = 0; i < buffer.size(); ++i) any_hidden = any_hidden || !buffer.at(i).hidden_rewards.empty();

  std::ostringstream csv;
  csv.precision(17);
  csv << "episode,t,r_hat,r_hat_normalized_0_1" << (any_hidden ? ",true_hidden_reward" : "") << "\n";
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const auto& traj = buffer.at(i);
    arel::AttentionTrace trace;
    const bool want_trace = !trace_path.empty() && i == 0;
    const auto pred = model.redistribute(traj.observations_tensor(), traj.episode_id, {},
                                         want_trace ? &trace : nullptr);
    if (want_trace) {
      arel::atomic_write_text(resolve_output(trace_path), arel::trace_to_json(trace).dump(2) + "\n");
    }
    double lo = pred.values[0], hi = pred.values[0];
    for (double v : pred.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (int t = 0; t < traj.T; ++t) {
      const double v = pred.values[static_cast<std::size_t>(t)];
      // a constant prediction normalizes to the midpoint
      const double norm = hi > lo ? (v - lo) / (hi - lo) : 0.5;
      csv << traj.episode_id << ',' << t << ',' << v << ',' << norm;
      if (any_hidden) {
        csv << ',';
        if (!traj.hidden_rewards.empty()) csv << traj.hidden_rewards[static_cast<std::size_t>(t)];
      }
      csv << '\n';
    }
  }
  if (out_path.empty()) {
    std::cout << csv.str();
  } else {
    arel::atomic_write_text(resolve_output(out_path), csv.str());
  }
  return kExitOk;
}

int cmd_verify(const std::string& out_path, int instances, int ensembles, int inits, std::uint64_t seed) {
  nlohmann::json report;
  bool ok = true;

  const auto theorem = arel::run_theorem1_family(instances, seed);
  report["theorem1"] = {{"instances", theorem.instances}, {"matched", theorem.matched}, {"ok", theorem.ok}};
  ok = ok && theorem.ok;

  const auto uniform = arel::check_uniform_infeasibility(3.0, 3.0, 6.0);
  report["uniform_infeasibility"] = {{"constrained_min", uniform.constrained_min},
                                     {"relaxed_min", uniform.relaxed_min},
                                     {"unconstrained_min", uniform.unconstrained_min},
                                     {"ok", uniform.infeasible}};
  ok = ok && uniform.infeasible;

  {
    arel::Rng rng(seed ^ 0xb01dface5ULL);
    int cases = 0, violations = 0;
    double min_slack = 1e300;
    const int reps = std::max(1, ensembles / 27);
    for (int T = 2; T <= 10; ++T) {
      for (double omega : {0.0, 1.0, 20.0}) {
        for (int rep = 0; rep < reps; ++rep) {
          const auto v = arel::check_loss_bound(T, omega, 16, rng);
          ++cases;
          min_slack = std::min(min_slack, v.slack);
          if (!v.ok) ++violations;
        }
      }
    }
    report["loss_bound"] = {{"cases", cases}, {"violations", violations}, {"min_slack", min_slack},
                            {"ok", violations == 0}};
    ok = ok && violations == 0;
  }

  {
    arel::Rng rng(seed ^ 0x51de5ULL);
    const auto v = arel::check_width_variance_trend({64, 256, 1024}, inits, rng);
    report["width_variance"] = {{"widths", v.widths},
                                {"variances", v.variances},
                                {"slope", v.slope},
                                {"sufficient_span", v.sufficient_span},
                                {"ok", v.ok}};
    ok = ok && v.ok;
  }

  report["ok"] = ok;
  emit(report, out_path);
  return ok ? kExitOk : kExitVerification;
}

int cmd_gradcheck(const std::string& out_path, int instances, std::uint64_t seed) {
  const auto suite = arel::run_gradcheck_suite(instances, seed);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : suite.entries) {
    entries.push_back({{"op", e.name},
                       {"instances", e.instances},
                       {"max_rel_err", e.max_rel_err},
                       {"ok", e.ok},
                       {"detail", e.detail}});
  }
  emit(nlohmann::json{{"ops", entries}, {"seconds", suite.seconds}, {"ok", suite.ok}}, out_path);
  return suite.ok ? kExitOk : kExitVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-based reward redistribution for episodic multi-agent RL"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, episodes_path, out_path, trace_path;
  std::vector<std::uint64_t> seeds;
  bool parallel_seeds = false;
  int instances = 100, ensembles = 1000, inits = 200;
  std::uint64_t suite_seed = 1;

  auto* train = app.add_subcommand("train", "run the full training loop and write run artifacts");
  train->add_option("--config", config_path, "run configuration file")->required();
  train->add_option("--seed", seeds, "override the config seed list");
  train->add_flag("--parallel-seeds", parallel_seeds, "run seeds on separate threads");

  auto* eval = app.add_subcommand("eval", "evaluate a policy checkpoint with greedy rollouts");
  eval->add_option("--config", config_path, "run configuration file")->required();
  eval->add_option("--checkpoint", checkpoint, "policy checkpoint")->required();
  eval->add_option("--seed", seeds, "override the config seed list");
  eval->add_option("--out", out_path, "write the JSON report here instead of stdout");

  auto* redis = app.add_subcommand("redistribute", "predict per-step rewards for stored episodes");
  redis->add_option("--config", config_path, "run configuration file")->required();
  redis->add_option("--checkpoint", checkpoint, "credit-model checkpoint")->required();
  redis->add_option("--episodes", episodes_path, "line-delimited JSON episode file")->required();
  redis->add_option("--out", out_path, "write the CSV here instead of stdout");
  redis->add_option("--trace", trace_path, "write attention weights of the first episode as JSON");

  auto* verify = app.add_subcommand("verify", "run the theory checks and emit a JSON report");
  verify->add_option("--out", out_path, "write the JSON report here instead of stdout");
  verify->add_option("--instances", instances, "return-equivalence instances (default 100)");
  verify->add_option("--ensembles", ensembles, "loss-bound ensembles (default 1000)");
  verify->add_option("--inits", inits, "width-variance initializations per width (default 200)");
  verify->add_option("--seed", suite_seed, "suite seed");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every operation");
  gradcheck->add_option("--out", out_path, "write the JSON report here instead of stdout");
  gradcheck->add_option("--instances", instances, "random instances per operation (default 100)");
  gradcheck->add_option("--seed", suite_seed, "suite seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, seeds, parallel_seeds);
    if (eval->parsed()) return cmd_eval(config_path, checkpoint, seeds, out_path);
    if (redis->parsed()) return cmd_redistribute(config_path, checkpoint, episodes_path, out_path, trace_path);
    if (verify->parsed()) return cmd_verify(out_path, instances, ensembles, inits, suite_seed);
    if (gradcheck->parsed()) return cmd_gradcheck(out_path, instances, suite_seed);
  } catch (const arel::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const arel::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
