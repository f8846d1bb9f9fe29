#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gcap/errors.hpp"
#include "gcap/geometry.hpp"
#include "gcap/model.hpp"
#include "gcap/sample.hpp"
#include "gcap/tape.hpp"

namespace gcap {

/// h1/c1 for the shared attention LSTM, one (h2, c2) stream per branch.
struct DecoderState {
  Var h1;
  Var c1;
  std::vector<Var> h2;
  std::vector<Var> c2;
};

inline DecoderState initial_state(Tape& tape, const ModelConfig& config, std::size_t streams) {
  const std::size_t h = config.hidden_dim;
  auto zeros = [&] { return tape.constant({1, h}, std::vector<double>(h, 0.0)); };
  DecoderState s{zeros(), zeros(), {}, {}};
  for (std::size_t k = 0; k < streams; ++k) {
    s.h2.push_back(zeros());
    s.c2.push_back(zeros());
  }
  return s;
}

/// Mean over all G x G cells.
inline std::vector<double> global_pool(const Sample& s) {
  if (s.num_cells() == 0 || s.feat_dim == 0 || s.grid.empty()) throw ValidationError("global_pool of an empty grid");
  std::vector<double> out(s.feat_dim, 0.0);
  for (std::size_t c = 0; c < s.num_cells(); ++c) {
    for (std::size_t j = 0; j < s.feat_dim; ++j) out[j] += s.grid[c * s.feat_dim + j];
  }
  for (double& v : out) v /= static_cast<double>(s.num_cells());
  return out;
}

/// Per-tape view of a sample: constant feature matrices plus lazily computed
/// key projections (W_r applied to every region or grid cell once per tape).
class EncodedSample {
 public:
  EncodedSample(Tape& tape, const Sample& sample, const ModelParams& params)
      : tape_(&tape), sample_(&sample), params_(&params) {
    const std::size_t d = params.config.feat_dim;
    if (sample.feat_dim != d) {
      throw ShapeError("sample '" + sample.id + "' has feature dimension " + std::to_string(sample.feat_dim) +
                       " but the model expects " + std::to_string(d));
    }
    if (sample.proposals.empty()) throw ValidationError("sample '" + sample.id + "' has no proposals");
    std::vector<double> feats;
    feats.reserve(sample.num_proposals() * d);
    for (const auto& p : sample.proposals) feats.insert(feats.end(), p.feature.begin(), p.feature.end());
    regions_ = tape.constant({sample.num_proposals(), d}, std::move(feats));
    grid_ = tape.constant({sample.num_cells(), d}, sample.grid);
    pooled_ = tape.constant({1, d}, global_pool(sample));
    region_keys_.resize(params.branches.size());
  }

  Tape& tape() const { return *tape_; }
  const Sample& sample() const { return *sample_; }
  const ModelParams& params() const { return *params_; }
  std::size_t num_proposals() const { return sample_->num_proposals(); }

  Var regions() const { return regions_; }
  Var grid() const { return grid_; }
  Var pooled() const { return pooled_; }

  Var region_keys(std::size_t branch) {
    if (branch >= region_keys_.size()) throw ConfigError("branch index " + std::to_string(branch) + " out of range");
    if (!region_keys_[branch].valid()) region_keys_[branch] = matmul(regions_, tape_->param(params_->branches[branch].wr));
    return region_keys_[branch];
  }

  Var grid_keys() {
    if (!grid_keys_.valid()) grid_keys_ = matmul(grid_, tape_->param(params_->image_attention.wr));
    return grid_keys_;
  }

  /// Feature rows of the eligible proposals, in eligible order.
  Var eligible_regions(std::span<const std::size_t> eligible) const {
    if (eligible.size() == num_proposals()) return regions_;
    return gather_rows(regions_, {eligible.begin(), eligible.end()});
  }

 private:
  Tape* tape_;
  const Sample* sample_;
  const ModelParams* params_;
  Var regions_;
  Var grid_;
  Var pooled_;
  std::vector<Var> region_keys_;
  Var grid_keys_;
};

/// Row of the embedding matrix for `token`.
inline Var embed_token(Tape& tape, const ModelParams& params, std::size_t token) {
  if (token >= params.vocab_size) throw ValidationError("token index " + std::to_string(token) + " outside vocabulary");
  return gather_rows(tape.param(params.embed), {token});
}

struct LstmOutput {
  Var h;
  Var c;
};

inline LstmOutput lstm_cell(Tape& tape, const LstmWeights& w, Var x, Var h, Var c) {
  const std::size_t hidden = h.numel();
  if (x.numel() != w.wx.rows()) {
    throw ShapeError("lstm input has " + std::to_string(x.numel()) + " values, weights expect " +
                     std::to_string(w.wx.rows()));
  }
  Var gates = add(add(matmul(x, tape.param(w.wx)), matmul(h, tape.param(w.wh))), tape.param(w.b));
  Var in = sigmoid(slice(gates, 0, hidden));
  Var forget = sigmoid(slice(gates, hidden, hidden));
  Var out = sigmoid(slice(gates, 2 * hidden, hidden));
  Var candidate = tanh(slice(gates, 3 * hidden, hidden));
  Var c_next = add(mul(forget, c), mul(in, candidate));
  Var h_next = mul(out, tanh(c_next));
  return {h_next, c_next};
}

/// LSTM_1 over [v_g; e_{t-1}]; updates h1/c1 in place.
inline void attention_lstm_step(Tape& tape, const ModelParams& params, Var pooled, Var prev_embedding,
                                DecoderState& state) {
  auto [h, c] = lstm_cell(tape, params.attention_lstm, concat(pooled, prev_embedding), state.h1, state.c1);
  state.h1 = h;
  state.c1 = c;
}

/// softmax_i(w_a . tanh(keys_i + W_h h1)) as a [1 x n] row.
inline Var additive_attention(Tape& tape, const AttentionWeights& w, Var keys, Var h1) {
  Var query = matmul(h1, tape.param(w.wh));
  Var scores = matmul(tanh(add_row_broadcast(keys, query)), tape.param(w.wa));
  return softmax(reshape(scores, {1, scores.numel()}));
}

/// Attention of branch `branch` over the eligible proposals. Weights are
/// aligned with `eligible` (original proposal ids).
inline Var region_attention(EncodedSample& enc, std::size_t branch, Var h1, std::span<const std::size_t> eligible) {
  if (eligible.empty()) throw ConfigError("region_attention over an empty eligible set");
  Var keys = enc.region_keys(branch);
  if (eligible.size() != enc.num_proposals()) keys = gather_rows(keys, {eligible.begin(), eligible.end()});
  return additive_attention(enc.tape(), enc.params().branches[branch], keys, h1);
}

/// alpha^T R for alpha [1 x n] and R [n x d].
inline Var attended_feature(Var alpha, Var features) {
  if (alpha.numel() != features.shape()[0]) {
    throw ShapeError("attention weights " + to_string(alpha.shape()) + " misaligned with features " +
                     to_string(features.shape()));
  }
  return matmul(alpha, features);
}

/// att_img(f_c): additive attention over grid cells queried by h1, then aggregation.
inline Var image_context(EncodedSample& enc, Var h1) {
  Var alpha = additive_attention(enc.tape(), enc.params().image_attention, enc.grid_keys(), h1);
  return attended_feature(alpha, enc.grid());
}

/// f_hat = r_hat + att_img(f_c).
inline Var fuse_image_feature(EncodedSample& enc, Var attended, Var h1) { return add(attended, image_context(enc, h1)); }

/// LSTM_2 over [h1; f_hat] on stream `branch`, then softmax(W_o h2).
inline Var language_step(Tape& tape, const ModelParams& params, Var h1, Var fused, DecoderState& state,
                         std::size_t branch) {
  if (branch >= state.h2.size()) {
    throw ConfigError("language stream " + std::to_string(branch) + " not present (have " +
                      std::to_string(state.h2.size()) + ")");
  }
  auto [h, c] = lstm_cell(tape, params.language_lstm, concat(h1, fused), state.h2[branch], state.c2[branch]);
  state.h2[branch] = h;
  state.c2[branch] = c;
  return softmax(matmul(h, tape.param(params.output)));
}

/// Index of the largest value; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

/// Attention of one branch at one step, with the selected (argmax) proposal.
struct BranchTrace {
  std::size_t branch = 0;
  std::vector<std::size_t> eligible;
  std::vector<double> weights;
  std::size_t selected = 0;
  std::size_t word = 0;
};

struct TokenGrounding {
  std::size_t position = 0;
  std::size_t token = 0;
  Box box;
  std::vector<std::size_t> voters;
  std::vector<BranchTrace> branches;
};

/// Decoded words (EOS excluded) and a box for every noun-lexicon word.
struct GroundedCaption {
  std::vector<std::size_t> tokens;
  std::vector<TokenGrounding> groundings;
  bool terminated = false;
};

/// Sum over steps of -log p(y*_t | y*_<t) for the single-branch decoder.
/// `targets` are word indices ending with EOS; inputs are BOS then the targets.
inline Var teacher_forced_loss(Tape& tape, const Sample& sample, std::span<const std::size_t> targets,
                               const ModelParams& params) {
  if (targets.empty()) throw ValidationError("teacher_forced_loss needs a non-empty reference");
  EncodedSample enc(tape, sample, params);
  DecoderState state = initial_state(tape, params.config, 1);
  const auto eligible = all_indices(enc.num_proposals());
  std::size_t prev = kBosId;
  Var total;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] >= params.vocab_size) throw ValidationError("target token outside vocabulary");
    attention_lstm_step(tape, params, enc.pooled(), embed_token(tape, params, prev), state);
    Var alpha = region_attention(enc, 0, state.h1, eligible);
    Var fused = fuse_image_feature(enc, attended_feature(alpha, enc.regions()), state.h1);
    Var p = language_step(tape, params, state.h1, fused, state, 0);
    Var step_loss = cross_entropy(p, targets[t]);
    total = total.valid() ? add(total, step_loss) : step_loss;
    prev = targets[t];
  }
  return total;
}

/// Greedy single-branch decoding; nouns are grounded to the argmax-attention proposal.
inline GroundedCaption greedy_decode(const Sample& sample, const ModelParams& params, std::size_t max_len,
                                     const Vocabulary& vocab) {
  Tape tape;
  EncodedSample enc(tape, sample, params);
  DecoderState state = initial_state(tape, params.config, 1);
  const auto eligible = all_indices(enc.num_proposals());
  GroundedCaption out;
  std::size_t prev = kBosId;
  for (std::size_t t = 0; t < max_len; ++t) {
    attention_lstm_step(tape, params, enc.pooled(), embed_token(tape, params, prev), state);
    Var alpha = region_attention(enc, 0, state.h1, eligible);
    Var fused = fuse_image_feature(enc, attended_feature(alpha, enc.regions()), state.h1);
    Var p = language_step(tape, params, state.h1, fused, state, 0);
    const std::size_t word = argmax(p.value());
    if (word == kEosId) {
      out.terminated = true;
      break;
    }
    if (vocab.is_noun(word)) {
      BranchTrace trace;
      trace.eligible = eligible;
      trace.weights.assign(alpha.value().begin(), alpha.value().end());
      trace.selected = eligible[argmax(alpha.value())];
      trace.word = word;
      TokenGrounding g;
      g.position = out.tokens.size();
      g.token = word;
      g.box = sample.proposals[trace.selected].box;
      g.voters = {0};
      g.branches.push_back(std::move(trace));
      out.groundings.push_back(std::move(g));
    }
    out.tokens.push_back(word);
    prev = word;
  }
  return out;
}


}  // namespace gcap
