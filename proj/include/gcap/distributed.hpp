#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "gcap/decoder.hpp"
#include "gcap/errors.hpp"
#include "gcap/geometry.hpp"
#include "gcap/model.hpp"
#include "gcap/sample.hpp"
#include "gcap/tape.hpp"
#include "gcap/vocab.hpp"

namespace gcap {

struct DistributedOptions {
  /// Number of active branches (K). Must not exceed the branches held by the params.
  std::size_t branches = 1;
  /// Remove proposals selected by earlier branches from later branches' candidate sets.
  bool elimination = true;
};

/// Proposals 0..n-1 minus `removed`, in ascending original order.
inline std::vector<std::size_t> eliminate(std::size_t n, std::span<const std::size_t> removed) {
  std::vector<bool> drop(n, false);
  std::size_t dropped = 0;
  for (std::size_t i : removed) {
    if (i >= n) throw ConfigError("eliminated proposal " + std::to_string(i) + " out of range");
    if (!drop[i]) ++dropped;
    drop[i] = true;
  }
  if (dropped >= n) {
    throw ConfigError("elimination removes all " + std::to_string(n) + " proposals; K is too large for N");
  }
  std::vector<std::size_t> out;
  out.reserve(n - dropped);
  for (std::size_t i = 0; i < n; ++i) {
    if (!drop[i]) out.push_back(i);
  }
  return out;
}

struct BranchStepOutput {
  std::size_t branch = 0;
  std::vector<std::size_t> eligible;
  Var alpha;
  /// Original proposal id of the argmax of alpha.
  std::size_t selected = 0;
  Var probs;
  std::size_t word = 0;
};

inline void check_options(const ModelParams& params, const DistributedOptions& opt) {
  if (opt.branches < 1) throw ConfigError("at least one attention branch is required");
  if (opt.branches > params.branches.size()) {
    throw ConfigError("requested K=" + std::to_string(opt.branches) + " but the model holds " +
                      std::to_string(params.branches.size()) + " branches");
  }
}

/// Runs the K branches for one time step, after the shared attention LSTM
/// has produced state.h1. Branch k attends over the proposals not selected by
/// branches 1..k-1 (when elimination is on) and drives its own language stream.
inline std::vector<BranchStepOutput> distributed_step(EncodedSample& enc, DecoderState& state,
                                                      const DistributedOptions& opt) {
  check_options(enc.params(), opt);
  if (state.h2.size() < opt.branches) throw ConfigError("decoder state has fewer language streams than branches");
  Tape& tape = enc.tape();
  const std::size_t n = enc.num_proposals();
  Var context = image_context(enc, state.h1);

  std::vector<BranchStepOutput> out;
  out.reserve(opt.branches);
  std::vector<std::size_t> chosen;
  for (std::size_t k = 0; k < opt.branches; ++k) {
    BranchStepOutput step;
    step.branch = k;
    step.eligible = opt.elimination ? eliminate(n, chosen) : all_indices(n);
    step.alpha = region_attention(enc, k, state.h1, step.eligible);
    step.selected = step.eligible[argmax(step.alpha.value())];
    chosen.push_back(step.selected);
    Var attended = attended_feature(step.alpha, enc.eligible_regions(step.eligible));
    step.probs = language_step(tape, enc.params(), state.h1, add(attended, context), state, k);
    step.word = argmax(step.probs.value());
    out.push_back(std::move(step));
  }
  return out;
}

/// Teacher-forced cross-entropy summed over time steps and all K branch outputs.
inline Var multi_branch_loss(Tape& tape, const Sample& sample, std::span<const std::size_t> targets,
                             const ModelParams& params, const DistributedOptions& opt) {
  if (targets.empty()) throw ValidationError("multi_branch_loss needs a non-empty reference");
  check_options(params, opt);
  EncodedSample enc(tape, sample, params);
  DecoderState state = initial_state(tape, params.config, opt.branches);
  std::size_t prev = kBosId;
  Var total;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] >= params.vocab_size) throw ValidationError("target token outside vocabulary");
    attention_lstm_step(tape, params, enc.pooled(), embed_token(tape, params, prev), state);
    for (const auto& branch : distributed_step(enc, state, opt)) {
      Var term = cross_entropy(branch.probs, targets[t]);
      total = total.valid() ? add(total, term) : term;
    }
    prev = targets[t];
  }
  return total;
}

/// One branch's ballot: its argmax word, full word distribution, and selected box.
struct BranchVote {
  std::size_t word = 0;
  std::span<const double> probs;
  Box box;
};

struct VoteResult {
  std::size_t word = 0;
  std::vector<std::size_t> voters;
  Box box;
  std::size_t count = 0;
};

/// Majority word over the branches; the fused box is the union of the voters' boxes.
/// Ties on vote count go to the larger summed branch probability, then to the lower word index.
inline VoteResult vote_and_fuse(std::span<const BranchVote> votes) {
  if (votes.empty()) throw ConfigError("vote_and_fuse needs at least one branch");
  std::vector<std::size_t> candidates;
  for (const auto& v : votes) {
    if (std::find(candidates.begin(), candidates.end(), v.word) == candidates.end()) candidates.push_back(v.word);
  }
  std::sort(candidates.begin(), candidates.end());

  auto count_of = [&](std::size_t w) {
    return static_cast<std::size_t>(std::count_if(votes.begin(), votes.end(), [&](const auto& v) { return v.word == w; }));
  };
  auto mass_of = [&](std::size_t w) {
    double total = 0.0;
    for (const auto& v : votes) total += w < v.probs.size() ? v.probs[w] : 0.0;
    return total;
  };

  std::size_t best = candidates.front();
  std::size_t best_count = count_of(best);
  double best_mass = mass_of(best);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const std::size_t w = candidates[i];
    const std::size_t c = count_of(w);
    const double m = mass_of(w);
    if (c > best_count || (c == best_count && m > best_mass)) {
      best = w;
      best_count = c;
      best_mass = m;
    }
  }

  VoteResult result;
  result.word = best;
  std::vector<Box> boxes;
  for (std::size_t k = 0; k < votes.size(); ++k) {
    if (votes[k].word != best) continue;
    result.voters.push_back(k);
    boxes.push_back(votes[k].box);
  }
  result.count = result.voters.size();
  result.box = union_box(boxes);
  return result;
}

namespace detail {

inline std::vector<BranchVote> ballots(const Sample& sample, const std::vector<BranchStepOutput>& steps) {
  std::vector<BranchVote> votes;
  votes.reserve(steps.size());
  for (const auto& s : steps) votes.push_back({s.word, s.probs.value(), sample.proposals[s.selected].box});
  return votes;
}

}  // namespace detail

/// Vote-and-fuse decoding: the voted word is fed back into the attention LSTM,
/// and every noun-lexicon word carries the fused box of its voters.
inline GroundedCaption decode_distributed(const Sample& sample, const ModelParams& params,
                                          const DistributedOptions& opt, std::size_t max_len,
                                          const Vocabulary& vocab) {
  check_options(params, opt);
  Tape tape;
  EncodedSample enc(tape, sample, params);
  DecoderState state = initial_state(tape, params.config, opt.branches);
  GroundedCaption out;
  std::size_t prev = kBosId;
  for (std::size_t t = 0; t < max_len; ++t) {
    attention_lstm_step(tape, params, enc.pooled(), embed_token(tape, params, prev), state);
    const auto steps = distributed_step(enc, state, opt);
    const auto votes = detail::ballots(sample, steps);
    const VoteResult vote = vote_and_fuse(votes);
    if (vote.word == kEosId) {
      out.terminated = true;
      break;
    }
    if (vote.word < vocab.size() && vocab.is_noun(vote.word)) {
      TokenGrounding g;
      g.position = out.tokens.size();
      g.token = vote.word;
      g.box = vote.box;
      g.voters = vote.voters;
      for (const auto& s : steps) {
        g.branches.push_back({s.branch, s.eligible, {s.alpha.value().begin(), s.alpha.value().end()}, s.selected, s.word});
      }
      out.groundings.push_back(std::move(g));
    }
    out.tokens.push_back(vote.word);
    prev = vote.word;
  }
  return out;
}

/// Voted word at every teacher-forced step (inputs are BOS then the targets).
inline std::vector<std::size_t> teacher_forced_votes(const Sample& sample, std::span<const std::size_t> targets,
                                                     const ModelParams& params, const DistributedOptions& opt) {
  check_options(params, opt);
  Tape tape;
  EncodedSample enc(tape, sample, params);
  DecoderState state = initial_state(tape, params.config, opt.branches);
  std::vector<std::size_t> out;
  std::size_t prev = kBosId;
  for (std::size_t target : targets) {
    attention_lstm_step(tape, params, enc.pooled(), embed_token(tape, params, prev), state);
    const auto steps = distributed_step(enc, state, opt);
    out.push_back(vote_and_fuse(detail::ballots(sample, steps)).word);
    prev = target;
  }
  return out;
}

}  // namespace gcap
