#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "prospec/nn.hpp"
#include "prospec/tensor.hpp"

namespace prospec {

// Checkpoint layout: 8-byte magic, little-endian u64 manifest length, JSON
// manifest, then raw f64 payload in manifest order. Writing the same tensors
// twice produces identical bytes.
inline constexpr char kCheckpointMagic[8] = {'P', 'S', 'P', 'C', 'K', 'P', 'T', '1'};

inline void save_checkpoint(const std::filesystem::path& path, const ParamList& tensors,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["meta"] = meta;
  auto& list = manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : tensors)
    list.push_back({{"name", name}, {"rows", t->rows()}, {"cols", t->cols()}});
  const std::string mjson = manifest.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const uint64_t len = mjson.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
  for (const auto& [name, t] : tensors)
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size() * sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

struct LoadedCheckpoint {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ull << 30)) throw std::runtime_error("checkpoint: bad manifest length");
  std::string mjson(len, '\0');
  in.read(mjson.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mjson);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: corrupt manifest: ") + e.what());
  }
  if (manifest.value("format_version", 0) != 1)
    throw std::runtime_error("checkpoint: unsupported format version");

  LoadedCheckpoint ck;
  ck.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    Tensor t(entry.at("rows").get<int>(), entry.at("cols").get<int>());
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor payload for " + name);
    ck.tensors.emplace(name, std::move(t));
  }
  return ck;
}

// Copies loaded tensors into the live parameters by name, shape-checked.
inline void restore_into(const LoadedCheckpoint& ck, ParamList targets) {
  for (auto& [name, p] : targets) {
    const auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw std::runtime_error("checkpoint: missing tensor " + name);
    if (!it->second.same_shape(*p))
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    const bool rg = p->requires_grad;
    *p = it->second;
    p->requires_grad = rg;
  }
}

}  // namespace prospec
