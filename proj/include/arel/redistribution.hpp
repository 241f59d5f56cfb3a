#pragma once

#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "arel/credit.hpp"
#include "arel/optim.hpp"

// Trajectory storage and the credit-network update loop: a bounded FIFO
// buffer of full episodes, uniform batch sampling, gradient updates of the
// total loss, and the mixing rule that turns predictions into the dense
// reward fed to the policy learner.

namespace arel {

struct Trajectory {
  int T = 0;
  int N = 0;
  int obs_dim = 0;
  std::vector<double> observations;  // T*N*obs_dim, row-major
  std::vector<int> actions;          // T*N
  double episodic_reward = 0.0;
  std::vector<double> hidden_rewards;  // evaluation only; empty when absent
  std::uint64_t seed = 0;
  long long episode_id = -1;

  void validate() const {
    if (T < 1 || N < 1 || obs_dim < 1) throw ValidationError("trajectory: non-positive dimensions");
    if (observations.size() != static_cast<std::size_t>(T) * N * obs_dim) {
      throw ValidationError("trajectory: observation buffer size mismatch");
    }
    if (actions.size() != static_cast<std::size_t>(T) * N) throw ValidationError("trajectory: action buffer size mismatch");
    for (double v : observations) {
      if (!std::isfinite(v)) throw ValidationError("trajectory: non-finite observation");
    }
    if (!std::isfinite(episodic_reward)) throw ValidationError("trajectory: non-finite episodic reward");
    if (!hidden_rewards.empty()) {
      if (hidden_rewards.size() != static_cast<std::size_t>(T)) {
        throw ValidationError("trajectory: hidden reward length mismatch");
      }
      const double total = pairwise_sum(hidden_rewards);
      if (std::fabs(total - episodic_reward) > 1e-9 * std::max(1.0, std::fabs(episodic_reward))) {
        throw ValidationError("trajectory: episodic reward does not equal the hidden per-step sum");
      }
    }
  }

  Tensor observations_tensor() const { return Tensor({T, N, obs_dim}, observations); }
};

class ExperienceBuffer {
 public:
  explicit ExperienceBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("experience buffer: capacity must be positive");
  }

  /// Validates and appends; evicts the oldest episode at capacity.
  void store(Trajectory t) {
    t.validate();
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(t));
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Trajectory& at(std::size_t i) const { return items_.at(i); }

  /// Uniform sampling with replacement.
  std::vector<const Trajectory*> sample_batch(int batch_size, Rng& rng) const {
    if (items_.empty()) throw ContractError("sample_batch: buffer is empty");
    if (batch_size < 1) throw ContractError("sample_batch: batch size must be positive");
    std::vector<const Trajectory*> out;
    out.reserve(static_cast<std::size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) {
      out.push_back(&items_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(items_.size()) - 1))]);
    }
    return out;
  }

  void save_jsonl(const std::string& path) const;
  static ExperienceBuffer load_jsonl(const std::string& path, std::size_t capacity);

 private:
  std::size_t capacity_;
  std::deque<Trajectory> items_;
};

// ---------------------------------------------------------------------------
// Line-delimited JSON persistence (one episode per line, schema versioned).
// ---------------------------------------------------------------------------

inline nlohmann::json trajectory_to_json(const Trajectory& t) {
  nlohmann::json obs = nlohmann::json::array();
  for (int step = 0; step < t.T; ++step) {
    nlohmann::json agents = nlohmann::json::array();
    for (int i = 0; i < t.N; ++i) {
      nlohmann::json vec = nlohmann::json::array();
      for (int d = 0; d < t.obs_dim; ++d) {
        vec.push_back(t.observations[static_cast<std::size_t>((step * t.N + i) * t.obs_dim + d)]);
      }
      agents.push_back(std::move(vec));
    }
    obs.push_back(std::move(agents));
  }
  nlohmann::json acts = nlohmann::json::array();
  for (int step = 0; step < t.T; ++step) {
    nlohmann::json row = nlohmann::json::array();
    for (int i = 0; i < t.N; ++i) row.push_back(t.actions[static_cast<std::size_t>(step * t.N + i)]);
    acts.push_back(std::move(row));
  }
  nlohmann::json j{{"schema", 1},
                   {"episode", t.episode_id},
                   {"seed", t.seed},
                   {"T", t.T},
                   {"N", t.N},
                   {"obs_dim", t.obs_dim},
                   {"observations", std::move(obs)},
                   {"actions", std::move(acts)},
                   {"episodic_reward", t.episodic_reward}};
  if (!t.hidden_rewards.empty()) j["hidden_rewards"] = t.hidden_rewards;
  return j;
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  if (!j.contains("schema") || j["schema"].get<int>() != 1) {
    throw ValidationError("trajectory record: unsupported schema");
  }
  Trajectory t;
  t.episode_id = j.value("episode", -1LL);
  t.seed = j.value("seed", 0ULL);
  t.T = j.at("T").get<int>();
  t.N = j.at("N").get<int>();
  t.obs_dim = j.at("obs_dim").get<int>();
  t.episodic_reward = j.at("episodic_reward").get<double>();
  const auto& obs = j.at("observations");
  const auto& acts = j.at("actions");
  t.observations.reserve(static_cast<std::size_t>(t.T) * t.N * t.obs_dim);
  t.actions.reserve(static_cast<std::size_t>(t.T) * t.N);
  for (const auto& agents : obs) {
    for (const auto& vec : agents) {
      for (const auto& v : vec) t.observations.push_back(v.get<double>());
    }
  }
  for (const auto& row : acts) {
    for (const auto& a : row) t.actions.push_back(a.get<int>());
  }
  if (j.contains("hidden_rewards")) t.hidden_rewards = j["hidden_rewards"].get<std::vector<double>>();
  t.validate();
  return t;
}

inline void ExperienceBuffer::save_jsonl(const std::string& path) const {
  std::ostringstream out;
  for (const auto& t : items_) out << trajectory_to_json(t).dump() << '\n';
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    const std::string s = out.str();
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  fs::rename(tmp, target);
}

inline ExperienceBuffer ExperienceBuffer::load_jsonl(const std::string& path, std::size_t capacity) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  ExperienceBuffer buf(capacity);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    buf.store(trajectory_from_json(j));
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Credit-network training
// ---------------------------------------------------------------------------

/// Runs `batches` gradient steps of the total loss over uniform batches from
/// the buffer and returns the per-step loss values. Any non-finite loss
/// aborts with diagnostics.
inline std::vector<double> update_credit_network(const CreditModel& model, Adam& opt,
                                                 const ExperienceBuffer& buffer, int batches, int batch_size,
                                                 Regularizer reg, double omega, Rng& rng) {
  if (buffer.size() == 0) throw ContractError("update_credit_network: buffer is empty");
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(batches));
  for (int step = 0; step < batches; ++step) {
    auto batch = buffer.sample_batch(batch_size, rng);
    Tape tape;
    std::vector<Tensor> rhat;
    std::vector<double> episodic;
    rhat.reserve(batch.size());
    episodic.reserve(batch.size());
    for (const Trajectory* t : batch) {
      rhat.push_back(model.forward(t->observations_tensor()));
      episodic.push_back(t->episodic_reward);
    }
    Tensor loss = total_loss(rhat, episodic, reg, omega);
    const double value = loss.value();
    if (!std::isfinite(value)) {
      throw NumericError("credit update diverged at step " + std::to_string(step) + " (loss=" +
                         std::to_string(value) + ", batch=" + std::to_string(batch.size()) + ")");
    }
    tape.backward(loss);
    opt.step();
    trace.push_back(value);
  }
  return trace;
}

/// Dense reward handed to the policy learner: alpha-weighted predictions with
/// the raw episodic signal mixed in at the final step.
inline std::vector<double> mix_rewards(const std::vector<double>& rhat, double episodic_reward, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("mix_rewards: alpha must lie in [0, 1]");
  if (rhat.empty()) throw ContractError("mix_rewards: empty prediction vector");
  std::vector<double> out(rhat.size());
  for (std::size_t t = 0; t < rhat.size(); ++t) out[t] = alpha * rhat[t];
  out.back() += (1.0 - alpha) * episodic_reward;
  return out;
}

}  // namespace arel
