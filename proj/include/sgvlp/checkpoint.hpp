#pragma once

// Checkpoint directory: params.bin holds every named parameter as raw
// values; meta.json holds run metadata. Loading requires an exact match of
// names and shapes and reports every incompatible parameter.

#include "sgvlp/nn.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgvlp {

inline constexpr char kCheckpointMagic[8] = {'S', 'G', 'V', 'L', 'P', 'C', 'K', '1'};

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(const std::string& what, std::vector<std::string> names = {})
      : std::runtime_error(what), names_(std::move(names)) {}
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
};

namespace ckpt_detail {

template <class V>
void put(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& in, const std::string& path) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw CheckpointError("truncated checkpoint: " + path);
  return v;
}

}  // namespace ckpt_detail

template <class T>
void save_params(const ParamStore<T>& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  ckpt_detail::put<std::uint32_t>(out, sizeof(T));
  ckpt_detail::put<std::uint64_t>(out, store.params().size());
  for (const auto& p : store.params()) {
    ckpt_detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    ckpt_detail::put<std::int64_t>(out, p.var.rows());
    ckpt_detail::put<std::int64_t>(out, p.var.cols());
    out.write(reinterpret_cast<const char*>(p.var.value().data()),
              static_cast<std::streamsize>(sizeof(T) * p.var.value().size()));
  }
  if (!out) throw CheckpointError("write failed: " + path);
}

/// Overwrites every parameter of `store` from the file. Names missing on
/// either side and shape mismatches are all collected into one error.
template <class T>
void load_params(ParamStore<T>& store, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("not a checkpoint file: " + path);
  }
  if (ckpt_detail::get<std::uint32_t>(in, path) != sizeof(T)) {
    throw CheckpointError("checkpoint scalar width differs: " + path);
  }
  const auto count = ckpt_detail::get<std::uint64_t>(in, path);
  std::map<std::string, Matrix<T>> loaded;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = ckpt_detail::get<std::uint32_t>(in, path);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rows = ckpt_detail::get<std::int64_t>(in, path);
    const auto cols = ckpt_detail::get<std::int64_t>(in, path);
    if (rows < 0 || cols < 0 || rows * cols > (1LL << 31)) throw CheckpointError("corrupt shape in " + path);
    Matrix<T> m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(T) * m.size()));
    if (!in) throw CheckpointError("truncated checkpoint: " + path);
    loaded.emplace(std::move(name), std::move(m));
  }
  std::vector<std::string> bad;
  for (const auto& p : store.params()) {
    auto it = loaded.find(p.name);
    if (it == loaded.end()) {
      bad.push_back(p.name + " (missing in checkpoint)");
    } else if (it->second.rows() != p.var.rows() || it->second.cols() != p.var.cols()) {
      bad.push_back(p.name + " (shape " + std::to_string(it->second.rows()) + "x" +
                    std::to_string(it->second.cols()) + " vs model " + std::to_string(p.var.rows()) + "x" +
                    std::to_string(p.var.cols()) + ")");
    }
  }
  for (const auto& [name, m] : loaded) {
    if (!store.contains(name)) bad.push_back(name + " (not in model)");
  }
  if (!bad.empty()) {
    std::string msg = "checkpoint " + path + " is incompatible with the model:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw CheckpointError(msg, bad);
  }
  for (const auto& p : store.params()) {
    Var<T> v = p.var;
    v.mutable_value() = loaded.at(p.name);
  }
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path);
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError("malformed JSON in " + path + ": " + e.what());
  }
}

/// Writes params.bin and meta.json into `dir` (created if needed).
template <class T>
void save_checkpoint(const ParamStore<T>& store, const nlohmann::json& meta, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_params(store, (std::filesystem::path(dir) / "params.bin").string());
  write_json(meta, (std::filesystem::path(dir) / "meta.json").string());
}

template <class T>
nlohmann::json load_checkpoint(ParamStore<T>& store, const std::string& dir) {
  const auto params = std::filesystem::path(dir) / "params.bin";
  const auto meta = std::filesystem::path(dir) / "meta.json";
  if (!std::filesystem::exists(params)) throw CheckpointError("checkpoint not found: " + params.string());
  if (!std::filesystem::exists(meta)) throw CheckpointError("checkpoint metadata not found: " + meta.string());
  load_params(store, params.string());
  return read_json(meta.string());
}

}  // namespace sgvlp
