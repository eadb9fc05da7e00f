#pragma once

// Flat key = value configuration files (UTF-8, '#' comments). Keys are
// documented in the README; unknown keys are reported as errors so typos
// do not silently fall back to defaults.

#include <fstream>
#include <map>
#include <set>

#include "padl/model.hpp"
#include "padl/training.hpp"

namespace padl {

class KeyValueConfig {
 public:
  static KeyValueConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    KeyValueConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
      };
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                    " is not key = value: " + line);
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw std::invalid_argument("config: empty key on line " + std::to_string(lineno));
      cfg.values_[key] = value;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_.insert(key);
    return it->second;
  }
  int get_int(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_.insert(key);
    return std::stoi(it->second);
  }
  float get_float(const std::string& key, float fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_.insert(key);
    return std::stof(it->second);
  }
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_.insert(key);
    return std::stoull(it->second);
  }
  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_.insert(key);
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::invalid_argument("config: key " + key + " is not a boolean: " + it->second);
  }

  void reject_unknown() const {
    for (const auto& [key, value] : values_)
      if (!used_.count(key))
        throw std::invalid_argument("config: unknown key " + key);
  }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

struct ParsedTrainSetup {
  ModelConfig model;
  TrainConfig train;
  std::string model_kind = "padl";  // padl | baseline
  int num_perturbations = 1;        // baseline only
  std::string excluded_degradation; // empty = none
};

inline ParsedTrainSetup parse_train_setup(const KeyValueConfig& cfg) {
  ParsedTrainSetup s;
  s.model.image_height = cfg.get_int("image_height", s.model.image_height);
  s.model.image_width = cfg.get_int("image_width", s.model.image_width);
  s.model.channels = cfg.get_int("channels", s.model.channels);
  s.model.patch_size = cfg.get_int("patch_size", s.model.patch_size);
  s.model.token_dim = cfg.get_int("token_dim", s.model.token_dim);
  s.model.heads = cfg.get_int("heads", s.model.heads);
  s.model.head_dim = cfg.get_int("head_dim", s.model.token_dim / s.model.heads);
  s.model.depth = cfg.get_int("depth", s.model.depth);
  s.model.alpha = cfg.get_float("alpha", s.model.alpha);
  s.model.mlp_head_hidden = cfg.get_int("mlp_head_hidden", s.model.token_dim / 2);
  s.model.validate();

  s.train.iterations = cfg.get_int("iterations", s.train.iterations);
  s.train.batch_size = cfg.get_int("batch_size", s.train.batch_size);
  s.train.learning_rate = cfg.get_float("learning_rate", s.train.learning_rate);
  s.train.weight_decay = cfg.get_float("weight_decay", s.train.weight_decay);
  s.train.degradation_p_max = cfg.get_float("degradation_p_max", s.train.degradation_p_max);
  s.train.noise_sigma_min = cfg.get_float("noise_sigma_min", s.train.noise_sigma_min);
  s.train.noise_sigma_max = cfg.get_float("noise_sigma_max", s.train.noise_sigma_max);
  s.train.noise_inject_prob = cfg.get_float("noise_inject_prob", s.train.noise_inject_prob);
  s.train.enable_noise_injection =
      cfg.get_bool("enable_noise_injection", s.train.enable_noise_injection);
  s.train.enable_l_div = cfg.get_bool("enable_l_div", s.train.enable_l_div);
  s.train.supervise_clean_maps =
      cfg.get_bool("supervise_clean_maps", s.train.supervise_clean_maps);
  s.train.algorithm1_literal = cfg.get_bool("algorithm1_literal", s.train.algorithm1_literal);
  s.train.seed = cfg.get_u64("seed", s.train.seed);
  s.train.checkpoint_every = cfg.get_int("checkpoint_every", s.train.checkpoint_every);
  s.train.train_pool = cfg.get_int("train_pool", s.train.train_pool);
  s.train.jpeg_quality_floor = cfg.get_float("jpeg_quality_floor", s.train.jpeg_quality_floor);
  s.train.blur_max_size = cfg.get_float("blur_max_size", s.train.blur_max_size);
  s.train.noise_max_sigma = cfg.get_float("noise_max_sigma", s.train.noise_max_sigma);
  s.train.lowres_max_factor = cfg.get_float("lowres_max_factor", s.train.lowres_max_factor);

  const std::string degradations = cfg.get_string("degradations", "jpeg,blur,noise,lowres");
  s.train.degradations.clear();
  if (degradations != "none") {
    std::size_t pos = 0;
    while (pos <= degradations.size()) {
      const auto comma = degradations.find(',', pos);
      const std::string tok = degradations.substr(
          pos, comma == std::string::npos ? std::string::npos : comma - pos);
      if (!tok.empty()) s.train.degradations.push_back(degradation_from_string(tok));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  s.excluded_degradation = cfg.get_string("exclude_degradation", "");
  if (!s.excluded_degradation.empty()) {
    const DegradationKind excluded = degradation_from_string(s.excluded_degradation);
    std::vector<DegradationKind> kept;
    for (DegradationKind k : s.train.degradations)
      if (k != excluded) kept.push_back(k);
    s.train.degradations = kept;
  }

  s.model_kind = cfg.get_string("model_kind", "padl");
  if (s.model_kind != "padl" && s.model_kind != "baseline")
    throw std::invalid_argument("config: model_kind must be padl or baseline, got " +
                                s.model_kind);
  s.num_perturbations = cfg.get_int("num_perturbations", 1);
  s.train.validate();
  cfg.reject_unknown();
  return s;
}

}  // namespace padl
