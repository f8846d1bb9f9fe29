#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "gcap/commands.hpp"

using namespace gcap;

namespace {

RunConfig small_run(std::size_t epochs, std::size_t warmup) {
  RunConfig c = RunConfig::desk();
  c.model.embed_dim = 6;
  c.model.hidden_dim = 8;
  c.model.att_dim = 8;
  c.model.grid_size = 2;
  c.model.num_proposals = 8;
  c.model.branches = 2;
  c.data.num_samples = 12;
  c.data.synth.max_objects = 1;
  c.train.epochs = epochs;
  c.train.warmup_epochs = warmup;
  c.train.batch_size = 4;
  return c;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Schedule, PaperPresetStepDecay) {
  const TrainConfig t = RunConfig::paper().train;
  for (std::size_t e = 0; e < 30; ++e) {
    EXPECT_DOUBLE_EQ(t.lr_at(e), 5e-4 * std::pow(0.8, static_cast<double>(e / 3))) << e;
  }
  EXPECT_EQ(t.active_branches(19), 1u);
  EXPECT_EQ(t.active_branches(20), t.branches);
}

TEST(Train, LossLogRecordsScheduleAndWarmup) {
  RunConfig cfg = small_run(7, 3);
  cfg.train.lr = 5e-4;
  cfg.train.decay_every = 3;
  TempDir data("gcap_train_log_data"), out("gcap_train_log_out");
  std::ostringstream log;
  cmd_make_data(cfg, data.str(), log);
  cmd_train(cfg, data.str(), out.str(), log);
  const auto rows = lines(read_file(loss_log_path(out.str())));
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(rows[0], "epoch,lr,k_active,loss,loss_per_branch");
  for (std::size_t e = 0; e < 7; ++e) {
    std::istringstream row(rows[e + 1]);
    std::string epoch, lr, k;
    std::getline(row, epoch, ',');
    std::getline(row, lr, ',');
    std::getline(row, k, ',');
    EXPECT_EQ(std::stoul(epoch), e);
    EXPECT_DOUBLE_EQ(std::stod(lr), 5e-4 * std::pow(0.8, static_cast<double>(e / 3)));
    EXPECT_EQ(std::stoul(k), e < 3 ? 1u : 2u);
  }
}

TEST(Train, ZeroEpochsSavesInitialParams) {
  RunConfig cfg = small_run(0, 0);
  TempDir data("gcap_train_zero_data"), out("gcap_train_zero_out");
  std::ostringstream log;
  cmd_make_data(cfg, data.str(), log);
  cmd_train(cfg, data.str(), out.str(), log);
  EXPECT_EQ(read_file(loss_log_path(out.str())), loss_csv_header());
  const Checkpoint ckpt = load_checkpoint(checkpoint_path(out.str()));
  EXPECT_EQ(ckpt.epoch, 0u);
  const Vocabulary vocab = read_vocab(vocab_path(data.str()));
  const ModelParams init = ModelParams::init(cfg.model, vocab.size(), cfg.init_seed());
  const ModelParams loaded = restore_params(ckpt, cfg.model);
  const auto a = init.named();
  const auto b = loaded.named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_TRUE(std::equal(a[i].second->values().begin(), a[i].second->values().end(),
                           b[i].second->values().begin()));
  }
}

TEST(Train, FixedSeedGivesIdenticalCheckpointBytes) {
  const RunConfig cfg = small_run(4, 2);
  TempDir data("gcap_train_det_data"), a("gcap_train_det_a"), b("gcap_train_det_b");
  std::ostringstream log;
  cmd_make_data(cfg, data.str(), log);
  cmd_train(cfg, data.str(), a.str(), log);
  cmd_train(cfg, data.str(), b.str(), log);
  EXPECT_EQ(read_file(checkpoint_path(a.str())), read_file(checkpoint_path(b.str())));
  EXPECT_EQ(read_file(loss_log_path(a.str())), read_file(loss_log_path(b.str())));

  RunConfig other = cfg;
  other.seed = cfg.seed + 1;
  TempDir c("gcap_train_det_c");
  cmd_train(other, data.str(), c.str(), log);
  EXPECT_NE(read_file(checkpoint_path(a.str())), read_file(checkpoint_path(c.str())));
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const RunConfig cfg = small_run(4, 2);
  const Lexicon lex;
  const Dataset ds = build_dataset(cfg.data.num_samples, cfg.data.train_ratio, cfg.data.val_ratio,
                                   cfg.data.test_ratio, cfg.data_seed(), cfg.synth(), lex);
  const Vocabulary vocab = synthetic_vocabulary(lex);
  const TrainOutcome full = run_training(cfg, ds.train, vocab);

  ModelParams params = ModelParams::init(cfg.model, vocab.size(), cfg.init_seed());
  AdamState adam;
  TrainConfig first = cfg.trainer();
  first.epochs = 2;
  train(params, adam, ds.train, vocab, first);
  const Checkpoint ckpt = parse_checkpoint(serialize_checkpoint(make_checkpoint(to_json(cfg), params, adam, 2)));
  ModelParams resumed = restore_params(ckpt, cfg.model);
  AdamState resumed_adam = ckpt.optimizer;
  train(resumed, resumed_adam, ds.train, vocab, cfg.trainer(), {}, 2);
  EXPECT_EQ(serialize_checkpoint(make_checkpoint(to_json(cfg), resumed, resumed_adam, 4)),
            serialize_checkpoint(make_checkpoint(to_json(cfg), full.params, full.adam, 4)));
}

TEST(Train, NonFiniteLossAborts) {
  const RunConfig cfg = small_run(1, 0);
  const Lexicon lex;
  Dataset ds = build_dataset(cfg.data.num_samples, cfg.data.train_ratio, cfg.data.val_ratio, cfg.data.test_ratio,
                             cfg.data_seed(), cfg.synth(), lex);
  ds.train[0].proposals[0].feature[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(run_training(cfg, ds.train, synthetic_vocabulary(lex)), NumericError);
}

TEST(Train, LossDecreasesOnTinyRun) {
  RunConfig cfg = small_run(12, 2);
  cfg.train.lr = 1e-2;
  const Lexicon lex;
  const Dataset ds = build_dataset(cfg.data.num_samples, cfg.data.train_ratio, cfg.data.val_ratio,
                                   cfg.data.test_ratio, cfg.data_seed(), cfg.synth(), lex);
  const auto out = run_training(cfg, ds.train, synthetic_vocabulary(lex));
  ASSERT_EQ(out.logs.size(), 12u);
  EXPECT_LT(out.logs.back().loss_per_branch, out.logs.front().loss_per_branch);
  for (const auto& l : out.logs) EXPECT_NEAR(l.loss_per_branch * static_cast<double>(l.active_branches), l.loss, 1e-9);
}

TEST(Train, RejectsMoreBranchesThanModel) {
  const RunConfig cfg = small_run(1, 0);
  const Lexicon lex;
  const Dataset ds = build_dataset(cfg.data.num_samples, cfg.data.train_ratio, cfg.data.val_ratio,
                                   cfg.data.test_ratio, cfg.data_seed(), cfg.synth(), lex);
  const Vocabulary vocab = synthetic_vocabulary(lex);
  ModelParams params = ModelParams::init(cfg.model, vocab.size(), 1);
  AdamState adam;
  TrainConfig t = cfg.trainer();
  t.branches = 3;
  EXPECT_THROW(train(params, adam, ds.train, vocab, t), ConfigError);
}
