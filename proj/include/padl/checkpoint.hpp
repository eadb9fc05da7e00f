#pragma once

// Binary checkpoint container: magic + version, a JSON header carrying the
// model config, the named-tensor manifest (name, dtype tag, shape, offsets)
// and training metadata, then the raw little-endian float32 payload guarded
// by a CRC32.

#include <array>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "padl/attack.hpp"
#include "padl/model.hpp"

namespace padl {

inline constexpr char kCheckpointMagic[8] = {'P', 'A', 'D', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}
}  // namespace detail

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"image_height", c.image_height}, {"image_width", c.image_width},
          {"channels", c.channels},         {"patch_size", c.patch_size},
          {"token_dim", c.token_dim},       {"heads", c.heads},
          {"head_dim", c.head_dim},         {"depth", c.depth},
          {"alpha", c.alpha},               {"mlp_head_hidden", c.mlp_head_hidden}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_height = j.at("image_height").get<int>();
  c.image_width = j.at("image_width").get<int>();
  c.channels = j.at("channels").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.token_dim = j.at("token_dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.head_dim = j.at("head_dim").get<int>();
  c.depth = j.at("depth").get<int>();
  c.alpha = j.at("alpha").get<float>();
  c.mlp_head_hidden = j.at("mlp_head_hidden").get<int>();
  c.validate();
  return c;
}

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const std::vector<std::pair<std::string, Tensor>>& tensors,
                            const nlohmann::json& metadata) {
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    manifest.push_back({{"name", name},
                        {"dtype", "f32"},
                        {"shape", t.shape()},
                        {"offset", offset},
                        {"nbytes", t.numel() * sizeof(float)}});
    offset += t.numel() * sizeof(float);
  }
  std::vector<std::uint8_t> payload(offset);
  std::size_t pos = 0;
  for (const auto& [name, t] : tensors) {
    std::memcpy(payload.data() + pos, t.data(), t.numel() * sizeof(float));
    pos += t.numel() * sizeof(float);
  }

  nlohmann::json header;
  header["model_config"] = to_json(cfg);
  header["tensors"] = manifest;
  header["metadata"] = metadata;
  header["payload_bytes"] = payload.size();
  header["payload_crc32"] = detail::crc32(payload.data(), payload.size());
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t hlen = header_str.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("checkpoint: short write to " + path);
}

struct LoadedCheckpoint {
  ModelConfig config;
  nlohmann::json metadata;
  std::vector<std::string> order;
  std::map<std::string, Tensor> tensors;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(version));
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(header_str);

  const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
  std::vector<std::uint8_t> payload(payload_bytes);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_bytes));
  if (!in) throw std::runtime_error("checkpoint: truncated payload in " + path);
  const std::uint32_t crc = detail::crc32(payload.data(), payload.size());
  if (crc != header.at("payload_crc32").get<std::uint32_t>())
    throw std::runtime_error("checkpoint: payload checksum mismatch in " + path);

  LoadedCheckpoint ckpt;
  ckpt.config = model_config_from_json(header.at("model_config"));
  ckpt.metadata = header.value("metadata", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    if (entry.at("dtype").get<std::string>() != "f32")
      throw std::runtime_error("checkpoint: unsupported dtype for " + name);
    Shape shape = entry.at("shape").get<Shape>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t nbytes = entry.at("nbytes").get<std::size_t>();
    if (offset + nbytes > payload.size())
      throw std::runtime_error("checkpoint: manifest overruns payload for " + name);
    if (nbytes != shape_numel(shape) * sizeof(float))
      throw std::runtime_error("checkpoint: size does not match shape for " + name);
    Tensor t(shape);
    std::memcpy(t.data(), payload.data() + offset, nbytes);
    ckpt.order.push_back(name);
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Model adapters

inline void save_padl(const std::string& path, PADLModel& model, nlohmann::json metadata) {
  metadata["kind"] = "padl";
  save_checkpoint(path, model.cfg, model.named_params(), metadata);
}

inline void load_into(PADLModel& model, const LoadedCheckpoint& ckpt) {
  model.visit_params([&](const std::string& name, Tensor& t) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end())
      throw std::runtime_error("checkpoint: missing tensor " + name);
    if (it->second.shape() != t.shape())
      throw std::runtime_error("checkpoint: tensor " + name + " has shape " +
                               shape_str(it->second.shape()) + ", expected " +
                               shape_str(t.shape()));
    std::memcpy(t.data(), it->second.data(), t.numel() * sizeof(float));
  });
}

inline PADLModel padl_from_checkpoint(const std::string& path, LoadedCheckpoint* meta_out = nullptr) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  if (ckpt.metadata.value("kind", "padl") != "padl")
    throw std::runtime_error("checkpoint: " + path + " does not hold a padl model");
  PADLModel model(ckpt.config, /*seed=*/0);
  load_into(model, ckpt);
  if (meta_out) *meta_out = std::move(ckpt);
  return model;
}

inline void save_baseline(const std::string& path, BaselineModel& model,
                          nlohmann::json metadata) {
  metadata["kind"] = "baseline";
  metadata["num_perturbations"] = model.num_perturbations;
  auto tensors = model.core.named_params();
  tensors.emplace_back("baseline.perturbations", model.pert_params);
  save_checkpoint(path, model.core.cfg, tensors, metadata);
}

inline BaselineModel baseline_from_checkpoint(const std::string& path,
                                              LoadedCheckpoint* meta_out = nullptr) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  if (ckpt.metadata.value("kind", "") != "baseline")
    throw std::runtime_error("checkpoint: " + path + " does not hold a baseline model");
  BaselineModel model(ckpt.config, ckpt.metadata.at("num_perturbations").get<int>(),
                      /*seed=*/0);
  load_into(model.core, ckpt);
  auto it = ckpt.tensors.find("baseline.perturbations");
  if (it == ckpt.tensors.end())
    throw std::runtime_error("checkpoint: missing baseline perturbations");
  if (it->second.shape() != model.pert_params.shape())
    throw std::runtime_error("checkpoint: baseline perturbation shape mismatch");
  std::memcpy(model.pert_params.data(), it->second.data(),
              model.pert_params.numel() * sizeof(float));
  if (meta_out) *meta_out = std::move(ckpt);
  return model;
}

}  // namespace padl
