#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "gcap/checkpoint.hpp"
#include "gcap/config.hpp"
#include "gcap/distributed.hpp"
#include "gcap/io.hpp"
#include "gcap/metrics.hpp"
#include "gcap/synth.hpp"
#include "gcap/train.hpp"

namespace gcap {

inline std::string split_path(const std::string& dir, const std::string& split) {
  if (split != "train" && split != "val" && split != "test") {
    throw ConfigError("unknown split '" + split + "' (expected train, val or test)");
  }
  return (std::filesystem::path(dir) / (split + ".jsonl")).string();
}

inline std::string vocab_path(const std::string& dir) { return (std::filesystem::path(dir) / "vocab.json").string(); }

/// Throws with every disagreement between the model dims and a dataset.
inline void check_compatible(const ModelConfig& model, std::span<const Sample> samples, std::size_t vocab_size,
                             std::size_t checkpoint_vocab) {
  std::vector<std::string> diffs;
  if (vocab_size != checkpoint_vocab) {
    diffs.push_back("vocab_size: model " + std::to_string(checkpoint_vocab) + ", data " + std::to_string(vocab_size));
  }
  for (const auto& s : samples) {
    if (s.feat_dim != model.feat_dim) {
      diffs.push_back("feat_dim: model " + std::to_string(model.feat_dim) + ", sample '" + s.id + "' " +
                      std::to_string(s.feat_dim));
    }
    if (s.grid_size != model.grid_size) {
      diffs.push_back("grid_size: model " + std::to_string(model.grid_size) + ", sample '" + s.id + "' " +
                      std::to_string(s.grid_size));
    }
    if (s.num_proposals() < model.branches) {
      diffs.push_back("proposals: K=" + std::to_string(model.branches) + " needs at least that many, sample '" + s.id +
                      "' has " + std::to_string(s.num_proposals()));
    }
    if (!diffs.empty()) break;
  }
  if (diffs.empty()) return;
  std::string msg = "checkpoint config does not match the dataset:";
  for (const auto& d : diffs) msg += "\n  " + d;
  throw ConfigError(msg);
}

// ---- make-data -------------------------------------------------------------

inline SplitSizes cmd_make_data(const RunConfig& cfg, const std::string& out_dir, std::ostream& log) {
  cfg.validate();
  const Lexicon lex;
  const Dataset ds = build_dataset(cfg.data.num_samples, cfg.data.train_ratio, cfg.data.val_ratio, cfg.data.test_ratio,
                                   cfg.data_seed(), cfg.synth(), lex);
  const Vocabulary vocab = synthetic_vocabulary(lex);
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    for (const auto& s : *split) validate(s, vocab);
  }
  write_dataset(split_path(out_dir, "train"), ds.train);
  write_dataset(split_path(out_dir, "val"), ds.val);
  write_dataset(split_path(out_dir, "test"), ds.test);
  write_file(vocab_path(out_dir), vocab_to_json(vocab));
  log << "train " << ds.train.size() << "\nval " << ds.val.size() << "\ntest " << ds.test.size() << "\n";
  return {ds.train.size(), ds.val.size(), ds.test.size()};
}

// ---- train -----------------------------------------------------------------

struct TrainOutcome {
  ModelParams params;
  AdamState adam;
  std::vector<EpochLog> logs;
};

/// In-memory training run from a config; `on_epoch` sees every finished epoch.
inline TrainOutcome run_training(const RunConfig& cfg, std::span<const Sample> samples, const Vocabulary& vocab,
                                 const EpochCallback& on_epoch = {}) {
  cfg.validate();
  check_compatible(cfg.model, samples, vocab.size(), vocab.size());
  TrainOutcome out{ModelParams::init(cfg.model, vocab.size(), cfg.init_seed()), AdamState{}, {}};
  out.adam.lr = cfg.train.lr;
  out.logs = train(out.params, out.adam, samples, vocab, cfg.trainer(), on_epoch);
  return out;
}

inline std::string checkpoint_path(const std::string& out_dir) {
  return (std::filesystem::path(out_dir) / "checkpoint.gcap").string();
}

inline std::string loss_log_path(const std::string& out_dir) {
  return (std::filesystem::path(out_dir) / "loss.csv").string();
}

/// Trains on `<data_dir>/train.jsonl`; writes checkpoint.gcap and loss.csv into out_dir.
inline TrainOutcome cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
                              std::ostream& log) {
  const auto samples = read_dataset(split_path(data_dir, "train"));
  const Vocabulary vocab = read_vocab(vocab_path(data_dir));
  const Json config = to_json(cfg);
  std::string csv = loss_csv_header();
  write_file(loss_log_path(out_dir), csv);
  auto on_epoch = [&](const EpochLog& e, const ModelParams& params, const AdamState& adam) {
    csv += loss_csv_row(e);
    write_file(loss_log_path(out_dir), csv);
    log << "epoch " << e.epoch << " lr " << format_double(e.lr) << " k " << e.active_branches << " loss "
        << format_double(e.loss) << "\n";
    if (cfg.save_every > 0 && (e.epoch + 1) % cfg.save_every == 0) {
      save_checkpoint(checkpoint_path(out_dir), make_checkpoint(config, params, adam, e.epoch + 1));
    }
  };
  TrainOutcome out = run_training(cfg, samples, vocab, on_epoch);
  save_checkpoint(checkpoint_path(out_dir), make_checkpoint(config, out.params, out.adam, cfg.train.epochs));
  return out;
}

// ---- generate --------------------------------------------------------------

/// Decodes every sample; work is split over `threads` workers and reassembled in sample order.
inline std::vector<GroundedCaption> decode_all(std::span<const Sample> samples, const ModelParams& params,
                                               const DistributedOptions& opt, std::size_t max_len,
                                               const Vocabulary& vocab, std::size_t threads) {
  std::vector<GroundedCaption> out(samples.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, samples.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) out[i] = decode_distributed(samples[i], params, opt, max_len, vocab);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < samples.size(); i += workers) out[i] = decode_distributed(samples[i], params, opt, max_len, vocab);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

inline std::vector<Prediction> to_predictions(std::span<const Sample> samples, std::span<const GroundedCaption> caps,
                                              const Vocabulary& vocab) {
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Prediction p;
    p.id = samples[i].id;
    for (std::size_t t : caps[i].tokens) p.tokens.push_back(vocab.token(t));
    for (const auto& g : caps[i].groundings) p.groundings.push_back({g.position, vocab.token(g.token), g.box});
    out.push_back(std::move(p));
  }
  return out;
}

struct GenerateOptions {
  /// Decode with this many branches; 0 uses the trained K.
  std::size_t branches = 0;
  bool dump_attention = false;
  std::size_t threads = 1;
};

inline std::size_t cmd_generate(const std::string& checkpoint, const std::string& split_file,
                                const std::string& vocab_file, const std::string& out_path,
                                const GenerateOptions& options, std::ostream& log) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const RunConfig cfg = from_json(ckpt.config);
  const auto samples = read_dataset(split_file);
  const Vocabulary vocab = read_vocab(vocab_file);
  check_compatible(cfg.model, samples, vocab.size(), ckpt.vocab_size);
  const ModelParams params = restore_params(ckpt, cfg.model);
  const DistributedOptions opt{options.branches ? options.branches : cfg.model.branches, cfg.model.elimination};
  const auto caps = decode_all(samples, params, opt, cfg.max_len, vocab, options.threads);
  std::string out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out += caption_to_json(samples[i].id, caps[i], vocab, options.dump_attention).dump() + "\n";
  }
  write_file(out_path, out);
  log << "wrote " << samples.size() << " predictions to " << out_path << "\n";
  return samples.size();
}

// ---- eval ------------------------------------------------------------------

/// Orders predictions like the split; every split id needs exactly one prediction.
inline std::vector<Prediction> align_predictions(std::vector<Prediction> preds, std::span<const Sample> samples) {
  std::map<std::string, Prediction> by_id;
  for (auto& p : preds) {
    const std::string id = p.id;
    if (!by_id.emplace(id, std::move(p)).second) throw ValidationError("duplicate prediction for sample '" + id + "'");
  }
  std::vector<Prediction> out;
  for (const auto& s : samples) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) throw ValidationError("no prediction for sample '" + s.id + "'");
    out.push_back(std::move(it->second));
    by_id.erase(it);
  }
  if (!by_id.empty()) throw ValidationError("prediction for unknown sample '" + by_id.begin()->first + "'");
  return out;
}

inline EvalReport evaluate_split(std::span<const Prediction> preds, std::span<const Sample> samples,
                                 const Vocabulary& vocab) {
  const auto nouns = noun_set(vocab);
  std::vector<GroundTruth> truths;
  for (const auto& s : samples) truths.push_back(ground_truth(s, nouns));
  return evaluate(preds, truths, nouns);
}

inline void write_report(const std::string& out_prefix, const EvalReport& report) {
  write_file(out_prefix + ".json", report_to_json(report).dump(2) + "\n");
  write_file(out_prefix + ".csv", report_csv_header() + report_csv_row(report));
}

inline EvalReport cmd_eval(const std::string& predictions, const std::string& split_file, const std::string& vocab_file,
                           const std::string& out_prefix, std::ostream& log) {
  const auto samples = read_dataset(split_file);
  const Vocabulary vocab = read_vocab(vocab_file);
  const auto preds = align_predictions(read_predictions(predictions), samples);
  const EvalReport report = evaluate_split(preds, samples, vocab);
  write_report(out_prefix, report);
  log << report_csv_header() << report_csv_row(report);
  return report;
}

// ---- ablate ----------------------------------------------------------------

struct CellResult {
  AblationRow row;
  EvalReport report;
};

/// Trains with (K, elimination) from `cfg.model` and evaluates on `test`.
inline CellResult run_cell(const RunConfig& cfg, std::span<const Sample> train_split, std::span<const Sample> test,
                           const Vocabulary& vocab, std::size_t threads = 1) {
  const TrainOutcome trained = run_training(cfg, train_split, vocab);
  const DistributedOptions opt{cfg.model.branches, cfg.model.elimination};
  const auto caps = decode_all(test, trained.params, opt, cfg.max_len, vocab, threads);
  const auto preds = to_predictions(test, caps, vocab);
  CellResult cell;
  cell.report = evaluate_split(preds, test, vocab);
  const auto& r = cell.report;
  cell.row = {cfg.model.branches, cfg.model.elimination, r.bleu1, r.bleu4, r.f1_all, r.f1_loc,
              r.taxonomy.ratio(ErrorCategory::kPartial)};
  return cell;
}

/// One row per (elimination, K) cell of the config's ablation grid, all with the
/// same seeds. Top-level report metrics are those of the first cell.
inline EvalReport cmd_ablate(const RunConfig& base, const std::string& data_dir, const std::string& out_dir,
                             std::size_t threads, std::ostream& log) {
  base.validate();
  if (base.ablation.k_values.empty() || base.ablation.elimination.empty()) {
    throw ConfigError("ablation grid is empty");
  }
  const auto train_split = read_dataset(split_path(data_dir, "train"));
  const auto test = read_dataset(split_path(data_dir, "test"));
  const Vocabulary vocab = read_vocab(vocab_path(data_dir));

  EvalReport report;
  std::optional<CellResult> single_branch;
  for (bool elimination : base.ablation.elimination) {
    for (std::size_t k : base.ablation.k_values) {
      RunConfig cfg = base;
      cfg.model.branches = k;
      cfg.model.elimination = elimination;
      CellResult cell;
      // With one branch elimination never removes anything, so the run is shared.
      if (k == 1 && single_branch) {
        cell = *single_branch;
      } else {
        cell = run_cell(cfg, train_split, test, vocab, threads);
        if (k == 1) single_branch = cell;
      }
      cell.row.elimination = elimination;
      if (report.ablation.empty()) report = cell.report;
      report.ablation.push_back(cell.row);
      log << "k " << k << " elimination " << (elimination ? "on" : "off") << " bleu4 " << format_double(cell.row.bleu4)
          << " f1_loc " << format_double(cell.row.f1_loc) << "\n";
    }
  }
  write_file((std::filesystem::path(out_dir) / "ablation.json").string(), report_to_json(report).dump(2) + "\n");
  write_file((std::filesystem::path(out_dir) / "ablation.csv").string(), ablation_csv(report.ablation));
  return report;
}

}  // namespace gcap
