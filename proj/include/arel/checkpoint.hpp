#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "arel/tensor.hpp"

// Parameter checkpoints: a 4-byte magic "ARCP", one version byte, then a flat
// list of (name, shape, row-major float64 little-endian) records. The exact
// layout is documented in the README; files are written to a temporary path
// and renamed into place so readers never observe a partial file.

namespace arel {

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

namespace detail {

inline constexpr char kCkptMagic[4] = {'A', 'R', 'C', 'P'};
inline constexpr std::uint8_t kCkptVersion = 1;

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
  std::uint64_t v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(byte()); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(byte() | (byte() << 8)); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::string bytes(std::size_t n) {
    if (pos_ + n > data_.size()) fail();
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  unsigned byte() {
    if (pos_ >= data_.size()) fail();
    return static_cast<unsigned char>(data_[pos_++]);
  }
  [[noreturn]] void fail() const { throw ValidationError("checkpoint " + path_ + " is truncated or corrupt"); }

  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void write_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records) {
  std::string out;
  out.append(detail::kCkptMagic, 4);
  out.push_back(static_cast<char>(detail::kCkptVersion));
  detail::put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.name.size() > 0xffff) throw ValidationError("checkpoint record name too long: " + r.name);
    detail::put_u16(out, static_cast<std::uint16_t>(r.name.size()));
    out.append(r.name);
    out.push_back(static_cast<char>(r.shape.size()));
    for (int d : r.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    if (numel_of(r.shape) != static_cast<long long>(r.values.size())) {
      throw ValidationError("checkpoint record " + r.name + ": shape/value mismatch");
    }
    for (double v : r.values) detail::put_f64(out, v);
  }
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, target);
}

inline std::vector<CheckpointRecord> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::ByteReader r(data, path);
  if (r.bytes(4) != std::string(detail::kCkptMagic, 4)) {
    throw ValidationError("checkpoint " + path + ": bad magic");
  }
  const auto version = r.u8();
  if (version != detail::kCkptVersion) {
    throw ValidationError("checkpoint " + path + ": unsupported version " + std::to_string(version));
  }
  const auto count = r.u32();
  std::vector<CheckpointRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    rec.name = r.bytes(r.u16());
    const int rank = r.u8();
    rec.shape.resize(static_cast<std::size_t>(rank));
    for (int d = 0; d < rank; ++d) rec.shape[static_cast<std::size_t>(d)] = static_cast<int>(r.u32());
    const long long n = numel_of(rec.shape);
    rec.values.resize(static_cast<std::size_t>(n));
    for (long long j = 0; j < n; ++j) rec.values[static_cast<std::size_t>(j)] = r.f64();
    records.push_back(std::move(rec));
  }
  if (!r.done()) throw ValidationError("checkpoint " + path + ": trailing bytes");
  return records;
}

inline void save_parameters(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& params) {
  std::vector<CheckpointRecord> records;
  records.reserve(params.size());
  for (const auto& [name, t] : params) records.push_back({name, t.shape(), t.values()});
  write_checkpoint(path, records);
}

/// Loads values into an existing parameter list; every parameter must be
/// present in the file with a matching shape.
inline void load_parameters(const std::string& path, std::vector<std::pair<std::string, Tensor>> params) {
  auto records = read_checkpoint(path);
  for (auto& [name, t] : params) {
    const CheckpointRecord* found = nullptr;
    for (const auto& r : records) {
      if (r.name == name) {
        found = &r;
        break;
      }
    }
    if (!found) throw ValidationError("checkpoint " + path + ": missing parameter " + name);
    if (found->shape != t.shape()) {
      throw ValidationError("checkpoint " + path + ": parameter " + name + " has shape " +
                            shape_str(found->shape) + ", expected " + shape_str(t.shape()));
    }
    t.values() = found->values;
  }
}

}  // namespace arel
