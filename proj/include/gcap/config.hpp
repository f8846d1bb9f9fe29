#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcap/errors.hpp"
#include "gcap/model.hpp"
#include "gcap/synth.hpp"
#include "gcap/train.hpp"

namespace gcap {

struct DataConfig {
  std::size_t num_samples = 200;
  double train_ratio = 0.64;
  double val_ratio = 0.04;
  double test_ratio = 0.32;
  SynthConfig synth;
};

struct AblationConfig {
  std::vector<std::size_t> k_values{1, 2, 3, 4};
  std::vector<bool> elimination{true, false};
};

/// Everything a command needs. Dimensions live in `model`; the synthetic
/// generator and the trainer take theirs from it so the three never disagree.
struct RunConfig {
  std::uint64_t seed = 1;
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::size_t max_len = 20;
  std::size_t save_every = 0;
  AblationConfig ablation;
  std::string data_dir = "data";
  std::string out_dir = "run";

  /// Seeds for the independent random streams of a run.
  std::uint64_t data_seed() const { return derive_seed(seed, 1); }
  std::uint64_t init_seed() const { return derive_seed(seed, 2); }
  std::uint64_t shuffle_seed() const { return derive_seed(seed, 3); }

  SynthConfig synth() const {
    SynthConfig s = data.synth;
    s.feat_dim = model.feat_dim;
    s.grid_size = model.grid_size;
    s.num_proposals = model.num_proposals;
    s.max_branches = model.branches;
    return s;
  }

  TrainConfig trainer() const {
    TrainConfig t = train;
    t.branches = model.branches;
    t.elimination = model.elimination;
    t.seed = shuffle_seed();
    return t;
  }

  void validate() const {
    model.validate();
    train.validate();
    if (max_len == 0) throw ConfigError("max_len must be at least 1");
    for (std::size_t k : ablation.k_values) {
      if (k == 0 || k > model.num_proposals) {
        throw ConfigError("ablation K=" + std::to_string(k) + " outside 1..N=" + std::to_string(model.num_proposals));
      }
    }
    split_sizes(data.num_samples, data.train_ratio, data.val_ratio, data.test_ratio);
    synth().validate();
  }

  /// Desk-scale preset: small dims, fast schedule.
  static RunConfig desk() {
    RunConfig c;
    c.train.lr = 5e-3;
    c.train.decay_every = 10;
    return c;
  }

  /// Full-size dims and the published optimizer schedule.
  static RunConfig paper() {
    RunConfig c;
    c.model = ModelConfig::paper();
    c.train.lr = 5e-4;
    c.train.lr_decay = 0.8;
    c.train.decay_every = 3;
    c.train.batch_size = 64;
    c.train.warmup_epochs = 20;
    c.train.epochs = 30;
    c.data.synth.max_objects = 3;
    return c;
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  const auto& s = c.data.synth;
  nlohmann::json j;
  j["seed"] = c.seed;
  j["model"] = {{"embed_dim", m.embed_dim},         {"hidden_dim", m.hidden_dim},
                {"att_dim", m.att_dim},             {"feat_dim", m.feat_dim},
                {"grid_size", m.grid_size},         {"num_proposals", m.num_proposals},
                {"branches", m.branches},           {"elimination", m.elimination},
                {"init_scale", m.init_scale}};
  j["train"] = {{"warmup_epochs", t.warmup_epochs}, {"epochs", t.epochs},   {"batch_size", t.batch_size},
                {"lr", t.lr},                       {"lr_decay", t.lr_decay}, {"decay_every", t.decay_every}};
  j["data"] = {{"num_samples", c.data.num_samples},
               {"train_ratio", c.data.train_ratio},
               {"val_ratio", c.data.val_ratio},
               {"test_ratio", c.data.test_ratio},
               {"canvas", s.canvas},
               {"min_objects", s.min_objects},
               {"max_objects", s.max_objects},
               {"min_parts", s.min_parts},
               {"max_parts", s.max_parts},
               {"full_duplicates", s.full_duplicates},
               {"jitter", s.jitter},
               {"noise_sigma", s.noise_sigma},
               {"salience_beta", s.salience_beta},
               {"part_strength", s.part_strength}};
  j["max_len"] = c.max_len;
  j["save_every"] = c.save_every;
  j["ablation"] = {{"k_values", c.ablation.k_values}, {"elimination", c.ablation.elimination}};
  j["paths"] = {{"data_dir", c.data_dir}, {"out_dir", c.out_dir}};
  return j;
}

namespace detail {

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config field '" + where + "." + key + "': " + e.what());
  }
}

inline void check_keys(const nlohmann::json& obj, const std::vector<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown config field '" + where + "." + key + "'");
    }
  }
}

}  // namespace detail

/// Overlays the fields present in `j` onto `base`. Unknown fields are rejected.
inline RunConfig from_json(const nlohmann::json& j, RunConfig base = RunConfig::desk()) {
  using detail::check_keys;
  using detail::read_field;
  check_keys(j, {"seed", "model", "train", "data", "max_len", "save_every", "ablation", "paths"}, "config");
  RunConfig c = std::move(base);
  read_field(j, "seed", c.seed, "config");
  read_field(j, "max_len", c.max_len, "config");
  read_field(j, "save_every", c.save_every, "config");
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m, {"embed_dim", "hidden_dim", "att_dim", "feat_dim", "grid_size", "num_proposals", "branches",
                   "elimination", "init_scale"},
               "model");
    read_field(m, "embed_dim", c.model.embed_dim, "model");
    read_field(m, "hidden_dim", c.model.hidden_dim, "model");
    read_field(m, "att_dim", c.model.att_dim, "model");
    read_field(m, "feat_dim", c.model.feat_dim, "model");
    read_field(m, "grid_size", c.model.grid_size, "model");
    read_field(m, "num_proposals", c.model.num_proposals, "model");
    read_field(m, "branches", c.model.branches, "model");
    read_field(m, "elimination", c.model.elimination, "model");
    read_field(m, "init_scale", c.model.init_scale, "model");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, {"warmup_epochs", "epochs", "batch_size", "lr", "lr_decay", "decay_every"}, "train");
    read_field(t, "warmup_epochs", c.train.warmup_epochs, "train");
    read_field(t, "epochs", c.train.epochs, "train");
    read_field(t, "batch_size", c.train.batch_size, "train");
    read_field(t, "lr", c.train.lr, "train");
    read_field(t, "lr_decay", c.train.lr_decay, "train");
    read_field(t, "decay_every", c.train.decay_every, "train");
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, {"num_samples", "train_ratio", "val_ratio", "test_ratio", "canvas", "min_objects", "max_objects",
                   "min_parts", "max_parts", "full_duplicates", "jitter", "noise_sigma", "salience_beta",
                   "part_strength"},
               "data");
    auto& s = c.data.synth;
    read_field(d, "num_samples", c.data.num_samples, "data");
    read_field(d, "train_ratio", c.data.train_ratio, "data");
    read_field(d, "val_ratio", c.data.val_ratio, "data");
    read_field(d, "test_ratio", c.data.test_ratio, "data");
    read_field(d, "canvas", s.canvas, "data");
    read_field(d, "min_objects", s.min_objects, "data");
    read_field(d, "max_objects", s.max_objects, "data");
    read_field(d, "min_parts", s.min_parts, "data");
    read_field(d, "max_parts", s.max_parts, "data");
    read_field(d, "full_duplicates", s.full_duplicates, "data");
    read_field(d, "jitter", s.jitter, "data");
    read_field(d, "noise_sigma", s.noise_sigma, "data");
    read_field(d, "salience_beta", s.salience_beta, "data");
    read_field(d, "part_strength", s.part_strength, "data");
  }
  if (j.contains("ablation")) {
    const auto& a = j["ablation"];
    check_keys(a, {"k_values", "elimination"}, "ablation");
    read_field(a, "k_values", c.ablation.k_values, "ablation");
    read_field(a, "elimination", c.ablation.elimination, "ablation");
  }
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    check_keys(p, {"data_dir", "out_dir"}, "paths");
    read_field(p, "data_dir", c.data_dir, "paths");
    read_field(p, "out_dir", c.out_dir, "paths");
  }
  return c;
}

/// Reads a config file. A top-level "preset": "desk" | "paper" selects the base
/// the remaining fields are layered on (desk when absent).
inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  RunConfig base = RunConfig::desk();
  if (j.is_object() && j.contains("preset")) {
    const std::string preset = j["preset"].is_string() ? j["preset"].get<std::string>() : "";
    if (preset == "paper") {
      base = RunConfig::paper();
    } else if (preset != "desk") {
      throw ConfigError("config '" + path + "': unknown preset '" + j["preset"].dump() + "'");
    }
    j.erase("preset");
  }
  RunConfig c = from_json(j, base);
  c.validate();
  return c;
}

/// Positive thread cap from GCAP_THREADS, or 1 when unset.
inline std::size_t thread_cap(const char* value) {
  if (value == nullptr || *value == '\0') return 1;
  std::size_t pos = 0;
  long long n = 0;
  try {
    n = std::stoll(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != std::string(value).size() || n < 1) {
    throw ConfigError(std::string("GCAP_THREADS must be a positive integer, got '") + value + "'");
  }
  return static_cast<std::size_t>(n);
}

}  // namespace gcap
