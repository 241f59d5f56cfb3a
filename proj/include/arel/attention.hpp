#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "arel/tensor.hpp"

// Agent-temporal attention: observation embedding, causally masked temporal
// self-attention applied per agent, unmasked agent self-attention applied per
// time step, each wrapped post-norm transformer style (attention, layer norm,
// two feed-forward layers with ReLU, another layer norm, residuals before
// each normalization). Blocks compose; the position embedding enters once,
// before the first block.

namespace arel {

struct AttentionConfig {
  int obs_dim = 0;
  int embed_dim = 64;  // D
  int heads = 4;
  int depth = 1;       // number of agent-temporal blocks
  int max_time = 64;   // longest supported episode
  int groups = 1;      // >1 enables the agent-group embedding
  bool uniform_agent_attention = false;  // ablation: fixed 1/N agent weights

  void validate() const {
    if (obs_dim < 1) throw ConfigError("attention: obs_dim must be >= 1");
    if (embed_dim < 1) throw ConfigError("attention: embed_dim must be >= 1");
    if (heads < 1 || embed_dim % heads != 0) {
      throw ConfigError("attention: head count " + std::to_string(heads) + " must divide embed_dim " +
                        std::to_string(embed_dim));
    }
    if (depth < 1) throw ConfigError("attention: depth must be >= 1");
    if (max_time < 1) throw ConfigError("attention: max_time must be >= 1");
    if (groups < 1) throw ConfigError("attention: groups must be >= 1");
  }
};

/// Observations wider than this are first compressed by a single
/// fully-connected layer with kCompressUnits outputs.
inline constexpr int kCompressThreshold = 100;
inline constexpr int kCompressUnits = 100;
inline constexpr int kFfnMultiplier = 4;

/// Additive causal mask row for time index t: entries 0..t are attendable
/// (0), entries t+1..T-1 are -kMaskLarge.
inline Tensor causal_mask(int t, int T) {
  if (t < 0 || t >= T) {
    throw ContractError("causal_mask: t=" + std::to_string(t) + " outside horizon " + std::to_string(T));
  }
  Tensor row({T}, 0.0);
  for (int j = t + 1; j < T; ++j) row.values()[static_cast<std::size_t>(j)] = -kMaskLarge;
  return row;
}

/// T x T additive mask whose row t is causal_mask(t, T).
inline Tensor causal_mask_matrix(int T) {
  Tensor m({T, T}, 0.0);
  for (int t = 0; t < T; ++t)
    for (int j = t + 1; j < T; ++j) m.values()[static_cast<std::size_t>(t * T + j)] = -kMaskLarge;
  return m;
}

struct Linear {
  Tensor w, b;

  Linear() = default;
  Linear(int in, int out, Rng& rng) {
    w = randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    w.set_requires_grad(true);
    b = Tensor({out}, 0.0, true);
  }
  Tensor apply(const Tensor& x) const { return add(matmul(x, w), b); }
  bool defined() const { return w.defined(); }
};

/// One attention sub-layer (temporal or agent flavour) with its transformer
/// wrapping parameters.
struct AttentionSublayer {
  Tensor wq, wk, wv;  // D x D
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Linear ff1, ff2;

  AttentionSublayer() = default;
  AttentionSublayer(int dim, Rng& rng) {
    const double std = 1.0 / std::sqrt(static_cast<double>(dim));
    wq = randn({dim, dim}, rng, std).set_requires_grad(true);
    wk = randn({dim, dim}, rng, std).set_requires_grad(true);
    wv = randn({dim, dim}, rng, std).set_requires_grad(true);
    ln1_gain = Tensor({dim}, 1.0, true);
    ln1_bias = Tensor({dim}, 0.0, true);
    ln2_gain = Tensor({dim}, 1.0, true);
    ln2_bias = Tensor({dim}, 0.0, true);
    ff1 = Linear(dim, kFfnMultiplier * dim, rng);
    ff2 = Linear(kFfnMultiplier * dim, dim, rng);
  }
};

struct BlockParams {
  AttentionSublayer temporal;
  AttentionSublayer agent;
};

struct EmbeddingParams {
  Linear compress;  // only when obs_dim > kCompressThreshold
  Linear embed;
  Tensor position;  // max_time x D
  Tensor group;     // groups x D, only when groups > 1
};

/// Attention weights captured during a traced forward pass.
struct AttentionTrace {
  struct Weights {
    Shape shape;
    std::vector<double> values;
  };
  struct Block {
    std::vector<Weights> temporal;  // per head, N x T x T
    std::vector<Weights> agent;     // per head, T x N x N
  };
  std::vector<Block> blocks;
};

class AttentionStack {
 public:
  AttentionStack(AttentionConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int D = cfg_.embed_dim;
    if (cfg_.obs_dim > kCompressThreshold) {
      emb_.compress = Linear(cfg_.obs_dim, kCompressUnits, rng);
      emb_.embed = Linear(kCompressUnits, D, rng);
    } else {
      emb_.embed = Linear(cfg_.obs_dim, D, rng);
    }
    emb_.position = randn({cfg_.max_time, D}, rng, 1.0 / std::sqrt(static_cast<double>(D)));
    emb_.position.set_requires_grad(true);
    if (cfg_.groups > 1) {
      emb_.group = randn({cfg_.groups, D}, rng, 1.0 / std::sqrt(static_cast<double>(D)));
      emb_.group.set_requires_grad(true);
    }
    blocks_.reserve(static_cast<std::size_t>(cfg_.depth));
    for (int i = 0; i < cfg_.depth; ++i) blocks_.push_back(BlockParams{AttentionSublayer(D, rng), AttentionSublayer(D, rng)});
  }

  const AttentionConfig& config() const { return cfg_; }
  const EmbeddingParams& embedding() const { return emb_; }

  /// Linear embedding plus position embedding (temporal axis) and, when
  /// configured, the per-agent group embedding. obs is T x N x obs_dim.
  Tensor embed(const Tensor& obs, const std::vector<int>& group_ids = {}) const {
    if (obs.rank() != 3) throw ShapeError("embed: observations must be T x N x obs_dim");
    const int T = obs.dim(0), N = obs.dim(1);
    if (obs.dim(2) != cfg_.obs_dim) {
      throw ShapeError("embed: observation width " + std::to_string(obs.dim(2)) + " != configured " +
                       std::to_string(cfg_.obs_dim));
    }
    if (T > cfg_.max_time) {
      throw ConfigError("embed: episode length " + std::to_string(T) + " exceeds max_time " +
                        std::to_string(cfg_.max_time));
    }
    Tensor x = obs;
    if (emb_.compress.defined()) x = emb_.compress.apply(x);
    Tensor e = emb_.embed.apply(x);  // T x N x D
    std::vector<int> trange(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) trange[static_cast<std::size_t>(t)] = t;
    Tensor pos = reshape(rows_lookup(emb_.position, trange), {T, 1, cfg_.embed_dim});
    e = add(e, pos);
    if (cfg_.groups > 1) {
      std::vector<int> gids = group_ids;
      if (gids.empty()) gids.assign(static_cast<std::size_t>(N), 0);
      if (static_cast<int>(gids.size()) != N) throw ContractError("embed: group id per agent required");
      for (int g : gids) {
        if (g < 0 || g >= cfg_.groups) throw ContractError("embed: group id " + std::to_string(g) + " out of range");
      }
      Tensor grp = reshape(rows_lookup(emb_.group, gids), {1, N, cfg_.embed_dim});
      e = add(e, grp);
    }
    return e;
  }

  /// Applies the configured number of agent-temporal blocks to embedded
  /// features (T x N x D -> T x N x D).
  Tensor apply_blocks(const Tensor& features, AttentionTrace* trace = nullptr) const {
    Tensor z = features;
    for (const auto& block : blocks_) {
      AttentionTrace::Block* tb = nullptr;
      if (trace) {
        trace->blocks.emplace_back();
        tb = &trace->blocks.back();
      }
      z = temporal_attention(z, block.temporal, tb);
      z = agent_attention(z, block.agent, tb);
    }
    return z;
  }

  /// Full map: embed then all blocks.
  Tensor forward(const Tensor& obs, const std::vector<int>& group_ids = {}, AttentionTrace* trace = nullptr) const {
    return apply_blocks(embed(obs, group_ids), trace);
  }

  /// Causally masked self-attention along time, applied to each agent's
  /// sequence independently. E is T x N x D.
  Tensor temporal_attention(const Tensor& e, const AttentionSublayer& p, AttentionTrace::Block* tb = nullptr) const {
    Tensor x = transpose01(e);  // N x T x D
    const int T = x.dim(1);
    Tensor mask = causal_mask_matrix(T);
    Tensor out = attend(x, p, &mask, false, tb ? &tb->temporal : nullptr);
    return transpose01(out);
  }

  /// Unmasked self-attention across agents at each time step. X is T x N x D.
  Tensor agent_attention(const Tensor& x, const AttentionSublayer& p, AttentionTrace::Block* tb = nullptr) const {
    return attend(x, p, nullptr, cfg_.uniform_agent_attention, tb ? &tb->agent : nullptr);
  }

  void collect_parameters(std::vector<std::pair<std::string, Tensor>>& out) const {
    auto add_linear = [&out](const std::string& name, const Linear& l) {
      if (!l.defined()) return;
      out.emplace_back(name + ".w", l.w);
      out.emplace_back(name + ".b", l.b);
    };
    add_linear("embed.compress", emb_.compress);
    add_linear("embed.map", emb_.embed);
    out.emplace_back("embed.position", emb_.position);
    if (emb_.group.defined()) out.emplace_back("embed.group", emb_.group);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string base = "block" + std::to_string(i);
      auto add_sublayer = [&](const std::string& sub, const AttentionSublayer& s, bool skip_qk) {
        if (!skip_qk) {
          out.emplace_back(base + sub + ".wq", s.wq);
          out.emplace_back(base + sub + ".wk", s.wk);
        }
        out.emplace_back(base + sub + ".wv", s.wv);
        out.emplace_back(base + sub + ".ln1.gain", s.ln1_gain);
        out.emplace_back(base + sub + ".ln1.bias", s.ln1_bias);
        out.emplace_back(base + sub + ".ln2.gain", s.ln2_gain);
        out.emplace_back(base + sub + ".ln2.bias", s.ln2_bias);
        add_linear(base + sub + ".ff1", s.ff1);
        add_linear(base + sub + ".ff2", s.ff2);
      };
      add_sublayer(".tem", blocks_[i].temporal, false);
      // under the uniform ablation the agent query/key projections are unused
      add_sublayer(".agt", blocks_[i].agent, cfg_.uniform_agent_attention);
    }
  }

 private:
  /// Scaled dot-product multi-head attention over the middle axis of a
  /// B x L x D input, followed by the post-norm transformer wrap.
  Tensor attend(const Tensor& x, const AttentionSublayer& p, const Tensor* mask, bool uniform_weights,
                std::vector<AttentionTrace::Weights>* trace) const {
    const int B = x.dim(0), L = x.dim(1), D = x.dim(2);
    const int H = cfg_.heads, hd = D / cfg_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Tensor v = matmul(x, p.wv);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(H));
    Tensor q, k;
    if (!uniform_weights) {
      q = matmul(x, p.wq);
      k = matmul(x, p.wk);
    }
    for (int h = 0; h < H; ++h) {
      Tensor vh = slice_lastdim(v, h * hd, hd);
      Tensor att;
      if (uniform_weights) {
        att = Tensor({1, L, L}, 1.0 / static_cast<double>(L));
      } else {
        Tensor qh = slice_lastdim(q, h * hd, hd);
        Tensor kh = slice_lastdim(k, h * hd, hd);
        Tensor scores = mul_scalar(matmul(qh, transpose_last_two(kh)), scale);
        att = mask ? softmax_lastdim(scores, *mask) : softmax_lastdim(scores);
      }
      if (trace) {
        AttentionTrace::Weights w;
        if (uniform_weights) {
          w.shape = Shape{B, L, L};
          w.values.assign(static_cast<std::size_t>(B) * L * L, 1.0 / static_cast<double>(L));
        } else {
          w.shape = att.shape();
          w.values = att.values();
        }
        trace->push_back(std::move(w));
      }
      heads.push_back(matmul(att, vh));
    }
    Tensor attn = H == 1 ? heads[0] : concat_lastdim(heads);
    Tensor y = layer_norm(add(x, attn), p.ln1_gain, p.ln1_bias);
    Tensor f = p.ff2.apply(relu(p.ff1.apply(y)));
    return layer_norm(add(y, f), p.ln2_gain, p.ln2_bias);
  }

  AttentionConfig cfg_;
  EmbeddingParams emb_;
  std::vector<BlockParams> blocks_;
};

}  // namespace arel
