#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "arel/attention.hpp"

namespace arel {

/// Writes a file atomically (temporary file + rename), creating parent
/// directories as needed.
inline void atomic_write_text(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, target);
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

/// Attention weights as labelled nested arrays, one object per block.
inline nlohmann::json trace_to_json(const AttentionTrace& trace) {
  nlohmann::json blocks = nlohmann::json::array();
  auto weights_json = [](const std::vector<AttentionTrace::Weights>& heads, const char* a0, const char* a1,
                         const char* a2) {
    nlohmann::json per_head = nlohmann::json::array();
    for (const auto& w : heads) {
      const int A = w.shape[0], B = w.shape[1], C = w.shape[2];
      nlohmann::json cube = nlohmann::json::array();
      for (int i = 0; i < A; ++i) {
        nlohmann::json mat = nlohmann::json::array();
        for (int j = 0; j < B; ++j) {
          nlohmann::json row = nlohmann::json::array();
          for (int k = 0; k < C; ++k) row.push_back(w.values[static_cast<std::size_t>((i * B + j) * C + k)]);
          mat.push_back(std::move(row));
        }
        cube.push_back(std::move(mat));
      }
      per_head.push_back(std::move(cube));
    }
    return nlohmann::json{{"axes", {"head", a0, a1, a2}}, {"weights", std::move(per_head)}};
  };
  for (const auto& b : trace.blocks) {
    blocks.push_back({{"temporal", weights_json(b.temporal, "agent", "t_query", "t_key")},
                      {"agent", weights_json(b.agent, "t", "agent_query", "agent_key")}});
  }
  return nlohmann::json{{"blocks", std::move(blocks)}};
}

}  // namespace arel
