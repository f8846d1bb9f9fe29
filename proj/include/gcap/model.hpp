#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gcap/errors.hpp"
#include "gcap/rng.hpp"
#include "gcap/tensor.hpp"

namespace gcap {

/// Decoder dimensions. The defaults are the desk preset; `paper()` is the full-size preset.
struct ModelConfig {
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t att_dim = 64;
  std::size_t feat_dim = 16;
  std::size_t grid_size = 4;
  std::size_t num_proposals = 24;
  std::size_t branches = 4;
  bool elimination = true;
  double init_scale = 0.08;

  static ModelConfig paper() {
    ModelConfig c;
    c.embed_dim = 512;
    c.hidden_dim = 1024;
    c.att_dim = 512;
    c.feat_dim = 2048;
    c.grid_size = 7;
    c.num_proposals = 100;
    return c;
  }

  void validate() const {
    if (embed_dim == 0 || hidden_dim == 0 || att_dim == 0 || feat_dim == 0 || grid_size == 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (branches < 1) throw ConfigError("branches (K) must be at least 1");
    if (num_proposals < 1) throw ConfigError("num_proposals (N) must be at least 1");
    if (branches > num_proposals) {
      throw ConfigError("K=" + std::to_string(branches) + " exceeds N=" + std::to_string(num_proposals));
    }
    if (!(init_scale >= 0.0)) throw ConfigError("init_scale must be nonnegative");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// LSTM cell weights; gate order along the 4H axis is input, forget, output, candidate.
struct LstmWeights {
  Tensor wx;  // in x 4H
  Tensor wh;  // H x 4H
  Tensor b;   // 1 x 4H
};

/// Additive attention z_i = w_a . tanh(W_r r_i + W_h h), stored for row-vector inputs.
struct AttentionWeights {
  Tensor wr;  // d x A
  Tensor wh;  // H x A
  Tensor wa;  // A x 1
};

struct ModelParams {
  ModelConfig config;
  std::size_t vocab_size = 0;
  Tensor embed;  // s x e
  LstmWeights attention_lstm;
  LstmWeights language_lstm;
  std::vector<AttentionWeights> branches;
  AttentionWeights image_attention;
  Tensor output;  // H x s

  /// Uniform(-init_scale, init_scale) for every weight, drawn in manifest order.
  static ModelParams init(const ModelConfig& config, std::size_t vocab_size, std::uint64_t seed) {
    config.validate();
    if (vocab_size < 4) throw ConfigError("vocabulary must hold at least one word besides PAD/BOS/EOS");
    const std::size_t e = config.embed_dim, h = config.hidden_dim, a = config.att_dim, d = config.feat_dim;
    ModelParams p;
    p.config = config;
    p.vocab_size = vocab_size;
    p.embed = Tensor({vocab_size, e}, true);
    p.attention_lstm = {Tensor({d + e, 4 * h}, true), Tensor({h, 4 * h}, true), Tensor({1, 4 * h}, true)};
    p.language_lstm = {Tensor({h + d, 4 * h}, true), Tensor({h, 4 * h}, true), Tensor({1, 4 * h}, true)};
    auto attention = [&] { return AttentionWeights{Tensor({d, a}, true), Tensor({h, a}, true), Tensor({a, 1}, true)}; };
    for (std::size_t k = 0; k < config.branches; ++k) p.branches.push_back(attention());
    p.image_attention = attention();
    p.output = Tensor({h, vocab_size}, true);

    Rng rng(seed);
    for (auto& [name, t] : p.named()) {
      for (double& v : t->values()) v = rng.uniform(-config.init_scale, config.init_scale);
    }
    return p;
  }

  /// Stable parameter order used by checkpoints and the optimizer.
  std::vector<std::pair<std::string, Tensor*>> named() {
    std::vector<std::pair<std::string, Tensor*>> out{
        {"embed", &embed},
        {"attention_lstm.wx", &attention_lstm.wx},
        {"attention_lstm.wh", &attention_lstm.wh},
        {"attention_lstm.b", &attention_lstm.b},
        {"language_lstm.wx", &language_lstm.wx},
        {"language_lstm.wh", &language_lstm.wh},
        {"language_lstm.b", &language_lstm.b},
    };
    for (std::size_t k = 0; k < branches.size(); ++k) {
      const std::string prefix = "branch" + std::to_string(k) + ".";
      out.emplace_back(prefix + "wr", &branches[k].wr);
      out.emplace_back(prefix + "wh", &branches[k].wh);
      out.emplace_back(prefix + "wa", &branches[k].wa);
    }
    out.emplace_back("image_attention.wr", &image_attention.wr);
    out.emplace_back("image_attention.wh", &image_attention.wh);
    out.emplace_back("image_attention.wa", &image_attention.wa);
    out.emplace_back("output", &output);
    return out;
  }

  std::vector<std::pair<std::string, const Tensor*>> named() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [name, t] : const_cast<ModelParams*>(this)->named()) out.emplace_back(name, t);
    return out;
  }

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
  }

  void zero_grad() {
    for (Tensor* t : tensors()) t->zero_grad();
  }
};

}  // namespace gcap
