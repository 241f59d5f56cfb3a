#pragma once

#include <algorithm>
#include <cstdio>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "arel/config.hpp"
#include "arel/io.hpp"

// End-to-end training runs: per episode, roll out the joint policy, store
// the trajectory, convert the episodic reward into a dense signal with the
// active strategy, update the policy, and periodically train the credit
// network from the buffer. Evaluation checkpoints measure the true return
// (hidden per-step rewards) under a near-greedy policy, so strategies are
// compared on the actual objective rather than on their own reward signals.

namespace arel {

struct CurvePoint {
  long long episode = 0;
  double eval_return = 0.0;
  double success_rate = 0.0;
};

struct SeedRunResult {
  std::uint64_t seed = 0;
  std::vector<CurvePoint> curve;
  std::vector<std::tuple<long long, int, double>> credit_trace;  // episode, step, loss
  double final_return = 0.0;
  double final_success = 0.0;
  double auc_success = 0.0;
  std::vector<CheckpointRecord> credit_records;
  std::vector<CheckpointRecord> policy_records;
  std::vector<std::string> buffer_jsonl;  // populated when cfg.trace is set
};

struct ExperimentResult {
  std::vector<SeedRunResult> seeds;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Greedy-ish evaluation: eval_episodes rollouts with the evaluation epsilon.
/// Episode seeds depend only on (seed, episode), so different strategies see
/// identical evaluation layouts.
inline CurvePoint evaluate_policy(const RunConfig& cfg, const TabularPolicy& policy, std::uint64_t seed,
                                  long long at_episode) {
  GridEnv env(cfg.env);
  Rng stream(seed ^ (0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(at_episode)));
  Rng action_rng = stream.spawn();
  CurvePoint pt;
  pt.episode = at_episode;
  for (int e = 0; e < cfg.eval_episodes; ++e) {
    auto ro = rollout(env, policy, cfg.eval_epsilon, stream.next_u64(), action_rng);
    pt.eval_return += ro.hidden_return;
    pt.success_rate += cfg.env.task == Task::TwoButton ? (ro.success ? 1.0 : 0.0) : ro.coverage;
  }
  pt.eval_return /= cfg.eval_episodes;
  pt.success_rate /= cfg.eval_episodes;
  return pt;
}

inline SeedRunResult run_single_seed(const RunConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SeedRunResult out;
  out.seed = seed;

  Rng master(seed);
  Rng init_rng = master.spawn();
  Rng env_stream = master.spawn();
  Rng action_rng = master.spawn();
  Rng credit_rng = master.spawn();

  GridEnv env(cfg.env);
  TabularPolicy policy(kNumActions);
  ExperienceBuffer buffer(static_cast<std::size_t>(cfg.buffer_capacity));

  std::unique_ptr<CreditModel> model;
  std::unique_ptr<Adam> opt;
  if (cfg.strategy == Strategy::Arel) {
    model = std::make_unique<CreditModel>(cfg.credit_model_config(), init_rng);
    AdamConfig acfg;
    acfg.lr = cfg.credit_lr;
    opt = std::make_unique<Adam>(model->parameters(), acfg);
  }

  PolicyUpdateConfig pcfg;
  pcfg.lr = cfg.policy_lr;
  pcfg.gamma = cfg.gamma;
  pcfg.baseline_rate = cfg.baseline_rate;
  double baseline = 0.0;

  for (long long k = 0; k < cfg.episodes; ++k) {
    const double eps = cfg.epsilon_at(k);
    auto ro = rollout(env, policy, eps, env_stream.next_u64(), action_rng, k);
    buffer.store(ro.trajectory);
    const auto dense = strategy_rewards(cfg.strategy, ro.trajectory, model.get(), cfg.alpha);
    policy_update(policy, ro, dense, pcfg, baseline);

    if (model && k % cfg.update_every == 0 && cfg.update_batches > 0) {
      auto losses = update_credit_network(*model, *opt, buffer, cfg.update_batches, cfg.batch_size,
                                          cfg.regularizer, cfg.omega, credit_rng);
      for (std::size_t i = 0; i < losses.size(); ++i) {
        out.credit_trace.emplace_back(k, static_cast<int>(i), losses[i]);
      }
    }

    if ((k + 1) % cfg.eval_every == 0 || k + 1 == cfg.episodes) {
      out.curve.push_back(evaluate_policy(cfg, policy, seed, k + 1));
    }
  }

  out.final_return = out.curve.back().eval_return;
  out.final_success = out.curve.back().success_rate;
  for (const auto& pt : out.curve) out.auc_success += pt.success_rate;
  out.auc_success /= static_cast<double>(out.curve.size());

  if (model) {
    for (const auto& [name, t] : model->named_parameters()) {
      out.credit_records.push_back({name, t.shape(), t.values()});
    }
  }
  out.policy_records = policy.to_records();
  if (cfg.trace) {
    for (std::size_t i = 0; i < buffer.size(); ++i) {
      out.buffer_jsonl.push_back(trajectory_to_json(buffer.at(i)).dump());
    }
  }
  return out;
}

inline ExperimentResult run_experiment(const RunConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  result.seeds.resize(cfg.seeds.size());
  if (cfg.parallel_seeds && cfg.seeds.size() > 1) {
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
      workers.emplace_back([&cfg, &result, i] { result.seeds[i] = run_single_seed(cfg, cfg.seeds[i]); });
    }
    for (auto& w : workers) w.join();
  } else {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) result.seeds[i] = run_single_seed(cfg, cfg.seeds[i]);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Run artifacts
// ---------------------------------------------------------------------------

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Writes the self-describing run directory: manifest, canonical config,
/// per-seed curves and credit traces, aggregate curves, checkpoints.
inline void write_run_artifacts(const RunConfig& cfg, const ExperimentResult& result) {
  const std::string dir = cfg.out_dir;
  nlohmann::json manifest{{"version", kVersion},
                          {"config_hash", hex64(config_hash(cfg))},
                          {"strategy", strategy_name(cfg.strategy)},
                          {"env", task_name(cfg.env.task)},
                          {"episodes", cfg.episodes},
                          {"seeds", cfg.seeds}};
  atomic_write_text(dir + "/manifest.json", manifest.dump(2) + "\n");
  atomic_write_text(dir + "/config.txt", cfg.canonical_text());

  for (const auto& run : result.seeds) {
    std::ostringstream curve;
    curve << "seed,episode,eval_return,success_rate\n";
    curve.precision(17);
    for (const auto& pt : run.curve) {
      curve << run.seed << ',' << pt.episode << ',' << pt.eval_return << ',' << pt.success_rate << '\n';
    }
    atomic_write_text(dir + "/curve_seed" + std::to_string(run.seed) + ".csv", curve.str());

    if (!run.credit_trace.empty()) {
      std::ostringstream trace;
      trace << "episode,step,loss\n";
      trace.precision(17);
      for (const auto& [ep, step, loss] : run.credit_trace) trace << ep << ',' << step << ',' << loss << '\n';
      atomic_write_text(dir + "/credit_trace_seed" + std::to_string(run.seed) + ".csv", trace.str());
    }
    if (!run.credit_records.empty()) {
      write_checkpoint(dir + "/credit_seed" + std::to_string(run.seed) + ".ckpt", run.credit_records);
    }
    write_checkpoint(dir + "/policy_seed" + std::to_string(run.seed) + ".ckpt", run.policy_records);
    if (!run.buffer_jsonl.empty()) {
      std::string lines;
      for (const auto& l : run.buffer_jsonl) lines += l + "\n";
      atomic_write_text(dir + "/buffer_seed" + std::to_string(run.seed) + ".jsonl", lines);
    }
  }

  // aggregate medians per evaluation checkpoint
  std::ostringstream agg;
  agg << "episode,median_eval_return,median_success_rate\n";
  agg.precision(17);
  if (!result.seeds.empty()) {
    const auto& first = result.seeds.front().curve;
    for (std::size_t p = 0; p < first.size(); ++p) {
      std::vector<double> rets, succ;
      for (const auto& run : result.seeds) {
        if (p < run.curve.size()) {
          rets.push_back(run.curve[p].eval_return);
          succ.push_back(run.curve[p].success_rate);
        }
      }
      agg << first[p].episode << ',' << median(rets) << ',' << median(succ) << '\n';
    }
  }
  atomic_write_text(dir + "/curves_aggregate.csv", agg.str());
}

}  // namespace arel
