#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gcap/decoder.hpp"
#include "gcap/gradcheck.hpp"
#include "test_support.hpp"

using namespace gcap;
using namespace gcap::testing;

namespace {

std::vector<double> values_of(Var v) { return {v.value().begin(), v.value().end()}; }

/// d=1 sample with the given proposal features and grid cells.
Sample scalar_sample(std::vector<double> feats, std::vector<double> grid) {
  Sample s;
  s.id = "scalar";
  s.feat_dim = 1;
  s.grid_size = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(grid.size()))));
  s.grid = std::move(grid);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const double x = 10.0 * static_cast<double>(i);
    s.proposals.push_back({{x, 0, x + 5, 5}, {feats[i]}, ""});
  }
  return s;
}

struct ScalarLstm {
  double h = 0, c = 0;
  /// gates_j = sum_i x_i wx[i][j] + h wh[j] + b[j], order input, forget, output, candidate.
  void step(const std::vector<double>& x, const Tensor& wx, const Tensor& wh, const Tensor& b) {
    double g[4];
    for (std::size_t j = 0; j < 4; ++j) {
      g[j] = h * wh.at(0, j) + b.at(0, j);
      for (std::size_t i = 0; i < x.size(); ++i) g[j] += x[i] * wx.at(i, j);
    }
    c = sigmoid(g[1]) * c + sigmoid(g[0]) * std::tanh(g[3]);
    h = sigmoid(g[2]) * std::tanh(c);
  }
};

std::vector<double> scalar_attention(const std::vector<double>& feats, double h, const AttentionWeights& w) {
  std::vector<double> z;
  double m = -1e300;
  for (double r : feats) {
    z.push_back(w.wa[0] * std::tanh(r * w.wr[0] + h * w.wh[0]));
    m = std::max(m, z.back());
  }
  double sum = 0;
  for (double& v : z) sum += (v = std::exp(v - m));
  for (double& v : z) v /= sum;
  return z;
}

/// Independent scalar re-implementation of the K=1 teacher-forced loss (H=e=d=A=1).
double scalar_loss(const Sample& s, const std::vector<std::size_t>& targets, const ModelParams& p) {
  double pool = 0;
  for (double v : s.grid) pool += v;
  pool /= static_cast<double>(s.grid.size());
  std::vector<double> feats;
  for (const auto& pr : s.proposals) feats.push_back(pr.feature[0]);
  ScalarLstm l1, l2;
  std::size_t prev = kBosId;
  double loss = 0;
  for (std::size_t target : targets) {
    l1.step({pool, p.embed.at(prev, 0)}, p.attention_lstm.wx, p.attention_lstm.wh, p.attention_lstm.b);
    const auto alpha = scalar_attention(feats, l1.h, p.branches[0]);
    double rhat = 0;
    for (std::size_t i = 0; i < feats.size(); ++i) rhat += alpha[i] * feats[i];
    const auto beta = scalar_attention(s.grid, l1.h, p.image_attention);
    double ctx = 0;
    for (std::size_t i = 0; i < s.grid.size(); ++i) ctx += beta[i] * s.grid[i];
    l2.step({l1.h, rhat + ctx}, p.language_lstm.wx, p.language_lstm.wh, p.language_lstm.b);
    std::vector<double> logits;
    double m = -1e300;
    for (std::size_t w = 0; w < p.vocab_size; ++w) {
      logits.push_back(l2.h * p.output.at(0, w));
      m = std::max(m, logits.back());
    }
    double sum = 0;
    for (double v : logits) sum += std::exp(v - m);
    loss -= logits[target] - m - std::log(sum);
    prev = target;
  }
  return loss;
}

}  // namespace

TEST(GlobalPool, Examples) {
  Sample s = scalar_sample({1}, {1, 2, 3, 4});
  EXPECT_EQ(global_pool(s), (std::vector<double>{2.5}));
  Sample one = scalar_sample({1}, {7});
  EXPECT_EQ(global_pool(one), (std::vector<double>{7}));
  Sample c = scalar_sample({1}, {3, 3, 3, 3, 3, 3, 3, 3, 3});
  EXPECT_EQ(global_pool(c), (std::vector<double>{3}));
  Sample empty = one;
  empty.grid.clear();
  EXPECT_THROW(global_pool(empty), ValidationError);
}

TEST(AttentionLstm, ZeroWeightsKeepStateZero) {
  const auto cfg = tiny_config(5, 3, 2, 3, 2, 1);
  ModelParams p = ModelParams::init(cfg, 6, 1);
  for (Tensor* t : p.tensors()) fill(*t, 0.0);
  Rng rng(1);
  Sample s = random_sample(rng, 3, 2, 2);
  Tape tape;
  EncodedSample enc(tape, s, p);
  DecoderState st = initial_state(tape, cfg, 1);
  attention_lstm_step(tape, p, enc.pooled(), embed_token(tape, p, kBosId), st);
  EXPECT_EQ(st.h1.shape(), (Shape{1, 5}));
  for (double v : st.h1.value()) EXPECT_EQ(v, 0.0);
}

TEST(AttentionLstm, OutputDimensionIsHidden) {
  for (std::size_t d : {1, 4}) {
    for (std::size_t e : {2, 7}) {
      const auto cfg = tiny_config(3, e, d, 2, 1, 1);
      ModelParams p = ModelParams::init(cfg, 5, 2);
      Rng rng(d * 10 + e);
      Sample s = random_sample(rng, 2, d, 1);
      Tape tape;
      EncodedSample enc(tape, s, p);
      DecoderState st = initial_state(tape, cfg, 1);
      attention_lstm_step(tape, p, enc.pooled(), embed_token(tape, p, kBosId), st);
      EXPECT_EQ(st.h1.numel(), 3u);
    }
  }
}

TEST(AttentionLstm, ScalarCellMatchesHandComputation) {
  const auto cfg = tiny_config(1, 1, 1, 1, 1, 1);
  ModelParams p = ModelParams::init(cfg, 4, 3);
  set(p.attention_lstm.wx, {0.5, -0.3, 0.8, 0.2, 0.1, 0.4, -0.6, 0.7});
  set(p.attention_lstm.wh, {0.3, 0.2, -0.1, 0.5});
  set(p.attention_lstm.b, {0.1, 0.0, -0.2, 0.3});
  fill(p.embed, 0.0);
  p.embed.at(kBosId, 0) = 0.9;
  Sample s = scalar_sample({1.0}, {2.0});

  Tape tape;
  EncodedSample enc(tape, s, p);
  DecoderState st = initial_state(tape, cfg, 1);
  attention_lstm_step(tape, p, enc.pooled(), embed_token(tape, p, kBosId), st);
  attention_lstm_step(tape, p, enc.pooled(), embed_token(tape, p, kBosId), st);

  // x = [v_g, e] = [2.0, 0.9]; two steps of the cell by hand.
  double h = 0, c = 0;
  for (int step = 0; step < 2; ++step) {
    const double gi = 2.0 * 0.5 + 0.9 * 0.1 + h * 0.3 + 0.1;
    const double gf = 2.0 * -0.3 + 0.9 * 0.4 + h * 0.2 + 0.0;
    const double go = 2.0 * 0.8 + 0.9 * -0.6 + h * -0.1 - 0.2;
    const double gc = 2.0 * 0.2 + 0.9 * 0.7 + h * 0.5 + 0.3;
    c = sigmoid(gf) * c + sigmoid(gi) * std::tanh(gc);
    h = sigmoid(go) * std::tanh(c);
  }
  EXPECT_NEAR(st.h1.value()[0], h, 1e-14);
  EXPECT_NEAR(st.c1.value()[0], c, 1e-14);
}

TEST(AttentionLstm, DimensionMismatchIsShapeError) {
  const auto cfg = tiny_config(2, 2, 2, 2, 1, 1);
  ModelParams p = ModelParams::init(cfg, 5, 1);
  Tape tape;
  DecoderState st = initial_state(tape, cfg, 1);
  Var wrong = tape.constant({1, 3}, {1, 2, 3});
  EXPECT_THROW(attention_lstm_step(tape, p, wrong, embed_token(tape, p, 1), st), ShapeError);
}

TEST(RegionAttention, UniformWhenFeaturesIdentical) {
  const auto cfg = tiny_config(4, 3, 3, 5, 1, 1);
  ModelParams p = ModelParams::init(cfg, 5, 4);
  Rng rng(4);
  Sample s = random_sample(rng, 5, 3, 1);
  for (auto& pr : s.proposals) pr.feature = {0.3, -0.2, 0.7};
  Tape tape;
  EncodedSample enc(tape, s, p);
  Var h1 = tape.constant({1, 4}, {0.1, 0.2, -0.3, 0.4});
  Var alpha = region_attention(enc, 0, h1, all_indices(5));
  for (double v : alpha.value()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(RegionAttention, SingleEligibleGetsAllMass) {
  const auto cfg = tiny_config(2, 2, 2, 4, 1, 1);
  ModelParams p = ModelParams::init(cfg, 5, 5);
  Rng rng(5);
  Sample s = random_sample(rng, 4, 2, 1);
  Tape tape;
  EncodedSample enc(tape, s, p);
  Var h1 = tape.constant({1, 2}, {0.5, -0.5});
  const std::vector<std::size_t> one{2};
  EXPECT_EQ(values_of(region_attention(enc, 0, h1, one)), (std::vector<double>{1.0}));
  EXPECT_THROW(region_attention(enc, 0, h1, std::vector<std::size_t>{}), ConfigError);
}

TEST(RegionAttention, ScalarTwoProposalOracle) {
  const auto cfg = tiny_config(1, 1, 1, 2, 1, 1);
  ModelParams p = ModelParams::init(cfg, 4, 6);
  set(p.branches[0].wr, {0.7});
  set(p.branches[0].wh, {-0.4});
  set(p.branches[0].wa, {1.5});
  Sample s = scalar_sample({1.0, -2.0}, {0.0});
  Tape tape;
  EncodedSample enc(tape, s, p);
  Var h1 = tape.constant({1, 1}, {0.6});
  const auto alpha = values_of(region_attention(enc, 0, h1, all_indices(2)));
  const double z0 = 1.5 * std::tanh(1.0 * 0.7 + 0.6 * -0.4);
  const double z1 = 1.5 * std::tanh(-2.0 * 0.7 + 0.6 * -0.4);
  EXPECT_NEAR(alpha[0], std::exp(z0) / (std::exp(z0) + std::exp(z1)), 1e-15);
  EXPECT_NEAR(alpha[1], std::exp(z1) / (std::exp(z0) + std::exp(z1)), 1e-15);
}

TEST(AttendedFeature, Examples) {
  Tape tape;
  Var feats = tape.constant({2, 1}, {4, 8});
  EXPECT_EQ(values_of(attended_feature(tape.constant({1, 2}, {0.25, 0.75}), feats)), (std::vector<double>{7}));
  Var two = tape.constant({2, 2}, {1, 2, 3, 6});
  EXPECT_EQ(values_of(attended_feature(tape.constant({1, 2}, {0, 1}), two)), (std::vector<double>{3, 6}));
  EXPECT_EQ(values_of(attended_feature(tape.constant({1, 2}, {0.5, 0.5}), two)), (std::vector<double>{2, 4}));
  EXPECT_THROW(attended_feature(tape.constant({1, 3}, {0.2, 0.3, 0.5}), two), ShapeError);
}

TEST(FuseImageFeature, ConstantAndZeroGrid) {
  const auto cfg = tiny_config(3, 2, 2, 2, 2, 1);
  ModelParams p = ModelParams::init(cfg, 5, 7);
  Rng rng(7);
  Sample s = random_sample(rng, 2, 2, 2);
  s.grid = {0.4, -1.0, 0.4, -1.0, 0.4, -1.0, 0.4, -1.0};
  Tape tape;
  EncodedSample enc(tape, s, p);
  Var h1 = tape.constant({1, 3}, {0.3, -0.8, 0.1});
  Var rhat = tape.constant({1, 2}, {2.0, 3.0});
  const auto fused = values_of(fuse_image_feature(enc, rhat, h1));
  EXPECT_NEAR(fused[0], 2.4, 1e-15);
  EXPECT_NEAR(fused[1], 2.0, 1e-15);

  s.grid.assign(8, 0.0);
  Tape tape2;
  EncodedSample enc2(tape2, s, p);
  Var rhat2 = tape2.constant({1, 2}, {2.0, 3.0});
  EXPECT_EQ(values_of(fuse_image_feature(enc2, rhat2, tape2.constant({1, 3}, {0.3, -0.8, 0.1}))),
            (std::vector<double>{2.0, 3.0}));
}

TEST(FuseImageFeature, ScalarGridOracle) {
  const auto cfg = tiny_config(1, 1, 1, 1, 2, 1);
  ModelParams p = ModelParams::init(cfg, 4, 8);
  set(p.image_attention.wr, {1.2});
  set(p.image_attention.wh, {0.5});
  set(p.image_attention.wa, {-0.9});
  Sample s = scalar_sample({0.0}, {1.0, -1.0, 0.5, 2.0});
  Tape tape;
  EncodedSample enc(tape, s, p);
  const double h = 0.7;
  const auto fused = values_of(fuse_image_feature(enc, tape.constant({1, 1}, {0.25}), tape.constant({1, 1}, {h})));
  const auto beta = scalar_attention(s.grid, h, p.image_attention);
  double ctx = 0;
  for (std::size_t i = 0; i < 4; ++i) ctx += beta[i] * s.grid[i];
  EXPECT_NEAR(fused[0], 0.25 + ctx, 1e-15);
}

TEST(LanguageStep, DistributionContract) {
  const auto cfg = tiny_config(4, 3, 2, 3, 1, 2);
  ModelParams p = ModelParams::init(cfg, 9, 9);
  Tape tape;
  DecoderState st = initial_state(tape, cfg, 2);
  Var h1 = tape.constant({1, 4}, {0.1, 0.2, 0.3, 0.4});
  Var f = tape.constant({1, 2}, {1.0, -1.0});
  Var probs = language_step(tape, p, h1, f, st, 1);
  EXPECT_EQ(probs.numel(), 9u);
  double sum = 0;
  for (double v : probs.value()) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-9);
  EXPECT_THROW(language_step(tape, p, h1, f, st, 2), ConfigError);
}

TEST(LanguageStep, ZeroWeightsGiveUniform) {
  const auto cfg = tiny_config(3, 2, 2, 2, 1, 1);
  ModelParams p = ModelParams::init(cfg, 6, 1);
  for (Tensor* t : p.tensors()) fill(*t, 0.0);
  Tape tape;
  DecoderState st = initial_state(tape, cfg, 1);
  Var probs = language_step(tape, p, tape.constant({1, 3}, {1, 2, 3}), tape.constant({1, 2}, {4, 5}), st, 0);
  for (double v : probs.value()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
}

TEST(LanguageStep, ScalarTwoWordOracle) {
  const auto cfg = tiny_config(1, 1, 1, 1, 1, 1);
  ModelParams p = ModelParams::init(cfg, 4, 10);
  set(p.language_lstm.wx, {0.2, 0.4, -0.3, 0.6, 0.5, -0.1, 0.9, 0.3});
  set(p.language_lstm.wh, {0.1, 0.1, 0.1, 0.1});
  set(p.language_lstm.b, {0.0, 0.5, 0.0, -0.5});
  set(p.output, {1.0, -2.0, 0.5, 3.0});
  Tape tape;
  DecoderState st = initial_state(tape, cfg, 1);
  const auto probs = values_of(language_step(tape, p, tape.constant({1, 1}, {0.3}), tape.constant({1, 1}, {-0.7}), st, 0));
  ScalarLstm l;
  l.step({0.3, -0.7}, p.language_lstm.wx, p.language_lstm.wh, p.language_lstm.b);
  double sum = 0;
  for (std::size_t w = 0; w < 4; ++w) sum += std::exp(l.h * p.output[w]);
  for (std::size_t w = 0; w < 4; ++w) EXPECT_NEAR(probs[w], std::exp(l.h * p.output[w]) / sum, 1e-15);
}

TEST(TeacherForcedLoss, UniformPredictionCostsTLogS) {
  const auto cfg = tiny_config(3, 2, 2, 3, 2, 1);
  ModelParams p = ModelParams::init(cfg, 7, 11);
  for (Tensor* t : p.tensors()) fill(*t, 0.0);
  Rng rng(11);
  Sample s = random_sample(rng, 3, 2, 2);
  const std::vector<std::size_t> targets{3, 4, 5, kEosId};
  Tape tape;
  EXPECT_NEAR(teacher_forced_loss(tape, s, targets, p).item(), 4.0 * std::log(7.0), 1e-12);
}

TEST(TeacherForcedLoss, OneHotCorrectPredictionCostsZero) {
  const auto cfg = tiny_config(1, 1, 1, 2, 1, 1);
  ModelParams p = ModelParams::init(cfg, 5, 12);
  // Saturate LSTM_2 so h2 > 0.7 every step, then make word 4 dominate by a wide margin.
  fill(p.language_lstm.wx, 0.0);
  fill(p.language_lstm.wh, 0.0);
  set(p.language_lstm.b, {50.0, -50.0, 50.0, 50.0});
  fill(p.output, 0.0);
  p.output.at(0, 4) = 2000.0;
  Sample s = scalar_sample({0.5, 0.1}, {0.2});
  const std::vector<std::size_t> targets{4, 4, 4};
  Tape tape;
  EXPECT_EQ(teacher_forced_loss(tape, s, targets, p).item(), 0.0);
}

TEST(TeacherForcedLoss, MatchesScalarReferenceModel) {
  const auto cfg = tiny_config(1, 1, 1, 3, 2, 1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelParams p = ModelParams::init(cfg, 6, seed);
    for (Tensor* t : p.tensors()) {
      Rng rng(seed * 31 + t->numel());
      for (double& v : t->values()) v = rng.uniform(-1.5, 1.5);
    }
    Rng rng(seed);
    Sample s = random_sample(rng, 3, 1, 2);
    const std::vector<std::size_t> targets{3, 5, 4, kEosId};
    Tape tape;
    EXPECT_NEAR(teacher_forced_loss(tape, s, targets, p).item(), scalar_loss(s, targets, p), 1e-12) << "seed " << seed;
  }
}

TEST(TeacherForcedLoss, RejectsOutOfVocabularyTarget) {
  const auto cfg = tiny_config(2, 2, 2, 2, 1, 1);
  ModelParams p = ModelParams::init(cfg, 5, 13);
  Rng rng(13);
  Sample s = random_sample(rng, 2, 2, 1);
  Tape tape;
  EXPECT_THROW(teacher_forced_loss(tape, s, std::vector<std::size_t>{3, 9}, p), ValidationError);
  Tape tape2;
  EXPECT_THROW(teacher_forced_loss(tape2, s, std::vector<std::size_t>{}, p), ValidationError);
}

TEST(TeacherForcedLoss, GradientsMatchFiniteDifferences) {
  const auto cfg = tiny_config(4, 3, 3, 4, 2, 1);
  ModelParams p = ModelParams::init(cfg, 8, 14);
  Rng rng(14);
  Sample s = random_sample(rng, 4, 3, 2);
  const std::vector<std::size_t> targets{3, 6, kEosId};
  auto tensors = p.tensors();
  const auto result = finite_diff_check([&](Tape& t) { return teacher_forced_loss(t, s, targets, p); }, tensors);
  EXPECT_LT(result.max_rel_error, 1e-4);
}

TEST(GreedyDecode, RiggedOneHotRepeatsTokenUntilMaxLen) {
  const auto cfg = tiny_config(2, 2, 2, 3, 1, 1);
  const Vocabulary vocab = tiny_vocab(3, 1);  // w0 (noun), w1, w2 -> ids 3, 4, 5
  ModelParams p = ModelParams::init(cfg, vocab.size(), 15);
  fill(p.language_lstm.wx, 0.0);
  fill(p.language_lstm.wh, 0.0);
  set(p.language_lstm.b, {50, -50, 50, 50, 50, -50, 50, 50});
  fill(p.output, 0.0);
  p.output.at(0, 4) = 100.0;
  p.output.at(1, 4) = 100.0;
  Rng rng(15);
  Sample s = random_sample(rng, 3, 2, 1);
  const auto cap = greedy_decode(s, p, 5, vocab);
  EXPECT_EQ(cap.tokens, (std::vector<std::size_t>(5, 4)));
  EXPECT_FALSE(cap.terminated);
  EXPECT_TRUE(cap.groundings.empty());

  p.output.at(0, kEosId) = 1000.0;
  const auto stop = greedy_decode(s, p, 5, vocab);
  EXPECT_TRUE(stop.tokens.empty());
  EXPECT_TRUE(stop.terminated);
}

TEST(GreedyDecode, NounsGroundedToDominantProposal) {
  const auto cfg = tiny_config(2, 2, 1, 4, 1, 1);
  const Vocabulary vocab = tiny_vocab(2, 1);  // w0 is a noun at id 3
  ModelParams p = ModelParams::init(cfg, vocab.size(), 16);
  fill(p.language_lstm.wx, 0.0);
  fill(p.language_lstm.wh, 0.0);
  set(p.language_lstm.b, {50, -50, 50, 50, 50, -50, 50, 50});
  fill(p.output, 0.0);
  p.output.at(0, 3) = 100.0;
  fill(p.branches[0].wr, 1.0);
  fill(p.branches[0].wh, 0.0);
  fill(p.branches[0].wa, 10.0);
  Sample s = scalar_sample({0.0, 0.0, 5.0, 0.0}, {0.0});
  const auto cap = greedy_decode(s, p, 3, vocab);
  ASSERT_EQ(cap.tokens.size(), 3u);
  ASSERT_EQ(cap.groundings.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(cap.groundings[i].position, i);
    EXPECT_EQ(cap.groundings[i].box, s.proposals[2].box);
    double sum = 0;
    for (double w : cap.groundings[i].branches[0].weights) sum += w;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(GreedyDecode, BoxesComeFromProposalSet) {
  const auto cfg = tiny_config(6, 4, 3, 6, 2, 1);
  const Vocabulary vocab = tiny_vocab(6, 6);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ModelParams p = ModelParams::init(cfg, vocab.size(), seed);
    Rng rng(seed + 100);
    Sample s = random_sample(rng, 6, 3, 2);
    const auto cap = greedy_decode(s, p, 8, vocab);
    for (const auto& g : cap.groundings) {
      EXPECT_TRUE(vocab.is_noun(g.token));
      EXPECT_TRUE(std::any_of(s.proposals.begin(), s.proposals.end(), [&](const Proposal& pr) { return pr.box == g.box; }));
    }
  }
}

TEST(Argmax, TiesGoToLowestIndex) {
  const std::vector<double> v{0.1, 0.4, 0.4, 0.1};
  EXPECT_EQ(argmax(v), 1u);
}
