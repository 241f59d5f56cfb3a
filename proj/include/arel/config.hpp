#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "arel/credit.hpp"
#include "arel/envs.hpp"
#include "arel/learner.hpp"

// Plain key-value run configuration ("key = value", '#' comments). Unknown
// keys are rejected; every constrained field is validated on load. The full
// schema is documented in the README.

namespace arel {

struct RunConfig {
  // environment
  EnvSpec env;

  // strategy and credit model
  Strategy strategy = Strategy::Arel;
  double alpha = 1.0;
  double omega = 20.0;
  Regularizer regularizer = Regularizer::Variance;
  int depth = 1;
  int heads = 4;
  int embed_dim = 64;
  int credit_hidden = 50;
  bool uniform_agent_attention = false;
  double credit_lr = 1e-4;

  // update cadence (Algorithm-style schedule)
  int update_every = 50;     // M episodes between credit updates
  int update_batches = 100;  // gradient steps per update
  int batch_size = 32;
  int buffer_capacity = 5000;

  // policy learner
  double policy_lr = 0.05;
  double gamma = 1.0;
  double baseline_rate = 0.05;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  int epsilon_decay_episodes = 2000;

  // run control
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int episodes = 4000;
  int eval_every = 200;
  int eval_episodes = 20;
  double eval_epsilon = 0.0;
  std::string out_dir = "runs/default";
  bool trace = false;
  bool parallel_seeds = false;

  CreditModelConfig credit_model_config() const {
    CreditModelConfig cfg;
    cfg.attention.obs_dim = 2 + 4 * env.obs_k;
    cfg.attention.embed_dim = embed_dim;
    cfg.attention.heads = heads;
    cfg.attention.depth = depth;
    cfg.attention.max_time = env.horizon;
    cfg.attention.uniform_agent_attention = uniform_agent_attention;
    cfg.credit_hidden = credit_hidden;
    return cfg;
  }

  double epsilon_at(long long episode) const {
    if (epsilon_decay_episodes <= 0) return epsilon_end;
    const double frac = std::min(1.0, static_cast<double>(episode) / epsilon_decay_episodes);
    return epsilon_start + frac * (epsilon_end - epsilon_start);
  }

  void validate() const {
    env.validate();
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
    if (omega < 0.0) throw ConfigError("omega must be >= 0");
    if (depth < 1) throw ConfigError("depth must be >= 1");
    if (heads < 1 || embed_dim < 1 || embed_dim % heads != 0) {
      throw ConfigError("heads must be >= 1 and divide embed_dim");
    }
    if (credit_hidden < 1) throw ConfigError("credit_hidden must be >= 1");
    if (credit_lr <= 0.0 || policy_lr <= 0.0) throw ConfigError("learning rates must be positive");
    if (update_every < 1) throw ConfigError("update_every must be >= 1");
    if (update_batches < 0) throw ConfigError("update_batches must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (buffer_capacity < 1) throw ConfigError("buffer_capacity must be >= 1");
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must lie in [0, 1]");
    if (baseline_rate < 0.0 || baseline_rate > 1.0) throw ConfigError("baseline_rate must lie in [0, 1]");
    if (epsilon_start < 0.0 || epsilon_start > 1.0 || epsilon_end < 0.0 || epsilon_end > 1.0) {
      throw ConfigError("epsilon bounds must lie in [0, 1]");
    }
    if (epsilon_decay_episodes < 0) throw ConfigError("epsilon_decay_episodes must be >= 0");
    if (seeds.empty()) throw ConfigError("at least one seed required");
    if (episodes < 1) throw ConfigError("episodes must be >= 1");
    if (eval_every < 1 || eval_episodes < 1) throw ConfigError("eval cadence must be >= 1");
    if (eval_epsilon < 0.0 || eval_epsilon > 1.0) throw ConfigError("eval_epsilon must lie in [0, 1]");
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  }

  /// Canonical text form: every key, sorted, one per line. Used for the
  /// manifest hash and for the config copy in run directories.
  std::string canonical_text() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

struct KeyValues {
  std::map<std::string, std::string> kv;

  bool has(const std::string& k) const { return kv.count(k) > 0; }

  template <typename Fn>
  void take(const std::string& key, Fn&& fn) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    try {
      fn(it->second);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
    kv.erase(it);
  }
};

inline double to_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

inline int to_int(const std::string& s) {
  std::size_t pos = 0;
  const long v = std::stol(s, &pos);
  if (pos != s.size()) throw ConfigError("not an integer: '" + s + "'");
  return static_cast<int>(v);
}

inline bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

inline std::vector<std::uint64_t> to_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(std::strtoull(item.c_str(), nullptr, 10));
  }
  return out;
}

}  // namespace detail

inline RunConfig parse_config_text(const std::string& text) {
  detail::KeyValues kvs;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (kvs.kv.count(key)) throw ConfigError("duplicate config key '" + key + "'");
    kvs.kv[key] = value;
  }

  RunConfig cfg;
  kvs.take("env.name", [&](const std::string& v) { cfg.env.task = parse_task(v); });
  kvs.take("env.agents", [&](const std::string& v) { cfg.env.agents = detail::to_int(v); });
  kvs.take("env.grid", [&](const std::string& v) { cfg.env.grid = detail::to_int(v); });
  kvs.take("env.horizon", [&](const std::string& v) { cfg.env.horizon = detail::to_int(v); });
  kvs.take("env.obs_k", [&](const std::string& v) { cfg.env.obs_k = detail::to_int(v); });
  kvs.take("env.lambda1", [&](const std::string& v) { cfg.env.lambda1 = detail::to_double(v); });
  kvs.take("env.lambda2", [&](const std::string& v) { cfg.env.lambda2 = detail::to_double(v); });
  kvs.take("env.lambda3", [&](const std::string& v) { cfg.env.lambda3 = detail::to_double(v); });
  kvs.take("strategy", [&](const std::string& v) { cfg.strategy = parse_strategy(v); });
  kvs.take("alpha", [&](const std::string& v) { cfg.alpha = detail::to_double(v); });
  kvs.take("omega", [&](const std::string& v) { cfg.omega = detail::to_double(v); });
  kvs.take("regularizer", [&](const std::string& v) { cfg.regularizer = parse_regularizer(v); });
  kvs.take("depth", [&](const std::string& v) { cfg.depth = detail::to_int(v); });
  kvs.take("heads", [&](const std::string& v) { cfg.heads = detail::to_int(v); });
  kvs.take("embed_dim", [&](const std::string& v) { cfg.embed_dim = detail::to_int(v); });
  kvs.take("credit_hidden", [&](const std::string& v) { cfg.credit_hidden = detail::to_int(v); });
  kvs.take("agent_attention", [&](const std::string& v) {
    if (v == "full") {
      cfg.uniform_agent_attention = false;
    } else if (v == "uniform") {
      cfg.uniform_agent_attention = true;
    } else {
      throw ConfigError("agent_attention must be 'full' or 'uniform'");
    }
  });
  kvs.take("credit_lr", [&](const std::string& v) { cfg.credit_lr = detail::to_double(v); });
  kvs.take("update_every", [&](const std::string& v) { cfg.update_every = detail::to_int(v); });
  kvs.take("update_batches", [&](const std::string& v) { cfg.update_batches = detail::to_int(v); });
  kvs.take("batch_size", [&](const std::string& v) { cfg.batch_size = detail::to_int(v); });
  kvs.take("buffer_capacity", [&](const std::string& v) { cfg.buffer_capacity = detail::to_int(v); });
  kvs.take("policy_lr", [&](const std::string& v) { cfg.policy_lr = detail::to_double(v); });
  kvs.take("gamma", [&](const std::string& v) { cfg.gamma = detail::to_double(v); });
  kvs.take("baseline_rate", [&](const std::string& v) { cfg.baseline_rate = detail::to_double(v); });
  kvs.take("epsilon_start", [&](const std::string& v) { cfg.epsilon_start = detail::to_double(v); });
  kvs.take("epsilon_end", [&](const std::string& v) { cfg.epsilon_end = detail::to_double(v); });
  kvs.take("epsilon_decay_episodes", [&](const std::string& v) { cfg.epsilon_decay_episodes = detail::to_int(v); });
  kvs.take("seeds", [&](const std::string& v) { cfg.seeds = detail::to_seed_list(v); });
  kvs.take("episodes", [&](const std::string& v) { cfg.episodes = detail::to_int(v); });
  kvs.take("eval_every", [&](const std::string& v) { cfg.eval_every = detail::to_int(v); });
  kvs.take("eval_episodes", [&](const std::string& v) { cfg.eval_episodes = detail::to_int(v); });
  kvs.take("eval_epsilon", [&](const std::string& v) { cfg.eval_epsilon = detail::to_double(v); });
  kvs.take("out_dir", [&](const std::string& v) { cfg.out_dir = v; });
  kvs.take("trace", [&](const std::string& v) { cfg.trace = detail::to_bool(v); });
  kvs.take("parallel_seeds", [&](const std::string& v) { cfg.parallel_seeds = detail::to_bool(v); });

  if (!kvs.kv.empty()) {
    std::string unknown;
    for (const auto& [k, v] : kvs.kv) unknown += (unknown.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config key(s): " + unknown);
  }
  cfg.validate();
  return cfg;
}

inline std::string RunConfig::canonical_text() const {
  std::ostringstream os;
  os << "agent_attention = " << (uniform_agent_attention ? "uniform" : "full") << '\n';
  os << "alpha = " << alpha << '\n';
  os << "baseline_rate = " << baseline_rate << '\n';
  os << "batch_size = " << batch_size << '\n';
  os << "buffer_capacity = " << buffer_capacity << '\n';
  os << "credit_hidden = " << credit_hidden << '\n';
  os << "credit_lr = " << credit_lr << '\n';
  os << "depth = " << depth << '\n';
  os << "embed_dim = " << embed_dim << '\n';
  os << "env.agents = " << env.agents << '\n';
  os << "env.grid = " << env.grid << '\n';
  os << "env.horizon = " << env.horizon << '\n';
  os << "env.lambda1 = " << env.lambda1 << '\n';
  os << "env.lambda2 = " << env.lambda2 << '\n';
  os << "env.lambda3 = " << env.lambda3 << '\n';
  os << "env.name = " << task_name(env.task) << '\n';
  os << "env.obs_k = " << env.obs_k << '\n';
  os << "episodes = " << episodes << '\n';
  os << "epsilon_decay_episodes = " << epsilon_decay_episodes << '\n';
  os << "epsilon_end = " << epsilon_end << '\n';
  os << "epsilon_start = " << epsilon_start << '\n';
  os << "eval_episodes = " << eval_episodes << '\n';
  os << "eval_epsilon = " << eval_epsilon << '\n';
  os << "eval_every = " << eval_every << '\n';
  os << "gamma = " << gamma << '\n';
  os << "heads = " << heads << '\n';
  os << "omega = " << omega << '\n';
  os << "out_dir = " << out_dir << '\n';
  os << "parallel_seeds = " << (parallel_seeds ? "true" : "false") << '\n';
  os << "policy_lr = " << policy_lr << '\n';
  os << "regularizer = " << regularizer_name(regularizer) << '\n';
  os << "seeds = " << join(seeds, ", ") << '\n';
  os << "strategy = " << strategy_name(strategy) << '\n';
  os << "trace = " << (trace ? "true" : "false") << '\n';
  os << "update_batches = " << update_batches << '\n';
  os << "update_every = " << update_every << '\n';
  return os.str();
}

inline std::uint64_t config_hash(const RunConfig& cfg) {
  const std::string text = cfg.canonical_text();
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace arel
