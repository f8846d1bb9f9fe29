#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gcap/adam.hpp"
#include "gcap/distributed.hpp"
#include "gcap/errors.hpp"
#include "gcap/model.hpp"
#include "gcap/rng.hpp"
#include "gcap/sample.hpp"
#include "gcap/tape.hpp"
#include "gcap/vocab.hpp"

namespace gcap {

struct TrainConfig {
  /// Epochs with only branch 0 active.
  std::size_t warmup_epochs = 10;
  /// Total epochs, warm-up included.
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  double lr = 5e-4;
  /// lr(epoch) = lr * lr_decay ^ floor(epoch / decay_every), epoch counted from 0 over the whole run.
  double lr_decay = 0.8;
  std::size_t decay_every = 3;
  std::size_t branches = 4;
  bool elimination = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (decay_every == 0) throw ConfigError("decay_every must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive and finite");
    if (!(lr_decay > 0.0) || lr_decay > 1.0) throw ConfigError("lr_decay must lie in (0, 1]");
    if (branches == 0) throw ConfigError("branches must be at least 1");
  }

  double lr_at(std::size_t epoch) const {
    return lr * std::pow(lr_decay, static_cast<double>(epoch / decay_every));
  }

  /// Branches trained in `epoch`: 1 during the warm-up, K afterwards.
  std::size_t active_branches(std::size_t epoch) const { return epoch < warmup_epochs ? 1 : branches; }
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  std::size_t active_branches = 1;
  /// Mean over training pairs of the loss summed over steps and active branches.
  double loss = 0.0;
  /// loss / active_branches, comparable across the warm-up boundary.
  double loss_per_branch = 0.0;
};

/// One (sample, reference) training pair with encoded targets ending in EOS.
struct TrainItem {
  std::size_t sample = 0;
  std::vector<std::size_t> targets;
};

inline std::vector<TrainItem> make_items(std::span<const Sample> samples, const Vocabulary& vocab) {
  std::vector<TrainItem> items;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (const auto& ref : samples[i].refs) items.push_back({i, vocab.encode(ref.tokens)});
  }
  if (items.empty()) throw ValidationError("no training references");
  return items;
}

/// Mean loss and gradient over one batch; gradients accumulate into the params.
inline double batch_gradient(std::span<const Sample> samples, std::span<const TrainItem> items,
                             std::span<const std::size_t> batch, const ModelParams& params,
                             const DistributedOptions& opt) {
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t idx : batch) {
    const TrainItem& item = items[idx];
    Tape tape;
    Var loss = multi_branch_loss(tape, samples[item.sample], item.targets, params, opt);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("non-finite loss on sample '" + samples[item.sample].id + "'");
    }
    total += value;
    tape.backward(scale(loss, inv));
  }
  return total * inv;
}

using EpochCallback = std::function<void(const EpochLog&, const ModelParams&, const AdamState&)>;

/// Staged training: branch 0 alone for the warm-up epochs, then all K branches
/// jointly. Pairs are reshuffled every epoch from derive_seed(seed, epoch).
/// Starts at `start_epoch` so a run can resume from a checkpoint.
inline std::vector<EpochLog> train(ModelParams& params, AdamState& adam, std::span<const Sample> samples,
                                   const Vocabulary& vocab, const TrainConfig& config,
                                   const EpochCallback& on_epoch = {}, std::size_t start_epoch = 0) {
  config.validate();
  if (config.branches > params.branches.size()) {
    throw ConfigError("training K=" + std::to_string(config.branches) + " but the model holds " +
                      std::to_string(params.branches.size()) + " branches");
  }
  for (const auto& s : samples) validate(s, vocab);
  const auto items = make_items(samples, vocab);
  auto tensors = params.tensors();

  std::vector<EpochLog> logs;
  for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const DistributedOptions opt{config.active_branches(epoch), config.elimination};
    adam.lr = config.lr_at(epoch);
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, epoch));
    rng.shuffle(order.begin(), order.end());

    double weighted = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      weighted += batch_gradient(samples, items, batch, params, opt) * static_cast<double>(batch.size());
      adam_step(tensors, adam);
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = adam.lr;
    log.active_branches = opt.branches;
    log.loss = weighted / static_cast<double>(items.size());
    log.loss_per_branch = log.loss / static_cast<double>(opt.branches);
    logs.push_back(log);
    if (on_epoch) on_epoch(log, params, adam);
  }
  return logs;
}

/// Fraction of teacher-forced steps whose voted word equals the target.
inline double teacher_forced_accuracy(std::span<const Sample> samples, const Vocabulary& vocab,
                                      const ModelParams& params, const DistributedOptions& opt) {
  std::size_t hits = 0, total = 0;
  for (const auto& item : make_items(samples, vocab)) {
    const auto votes = teacher_forced_votes(samples[item.sample], item.targets, params, opt);
    for (std::size_t t = 0; t < votes.size(); ++t) hits += votes[t] == item.targets[t];
    total += votes.size();
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace gcap
