#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "gcap/errors.hpp"
#include "gcap/geometry.hpp"
#include "gcap/rng.hpp"
#include "gcap/sample.hpp"
#include "gcap/vocab.hpp"

namespace gcap {

/// Closed word lists the generator draws from.
struct Lexicon {
  std::vector<std::string> classes{"dog", "cat", "man", "woman", "horse", "car"};
  std::vector<std::string> colors{"red", "blue", "green", "white"};
  std::vector<std::string> backgrounds{"grass", "street", "beach"};

  /// Feature channels: classes | backgrounds | colors | centre x, centre y | object count.
  std::size_t class_channel(std::size_t c) const { return c; }
  std::size_t background_channel(std::size_t b) const { return classes.size() + b; }
  std::size_t color_channel(std::size_t c) const { return classes.size() + backgrounds.size() + c; }
  std::size_t geometry_channel() const { return classes.size() + backgrounds.size() + colors.size(); }
  std::size_t count_channel() const { return geometry_channel() + 2; }
  std::size_t min_feat_dim() const { return count_channel() + 1; }
};

/// Caption surface forms: two reference styles that differ in their article.
struct TemplateSet {
  std::vector<std::string> articles{"a", "the"};
  std::string relation = "beside";
  std::string conjunction = "and";
  std::string preposition = "on";
  std::string definite = "the";
  /// Noun surface form per class label; every scene class needs an entry.
  std::map<std::string, std::string> nouns;

  static TemplateSet for_lexicon(const Lexicon& lex) {
    TemplateSet t;
    for (const auto& c : lex.classes) t.nouns[c] = c;
    return t;
  }

  std::vector<std::string> words(const Lexicon& lex) const {
    std::vector<std::string> out = articles;
    for (const auto& w : {relation, conjunction, preposition, definite}) out.push_back(w);
    for (const auto& c : lex.colors) out.push_back(c);
    for (const auto& [label, noun] : nouns) out.push_back(noun);
    for (const auto& b : lex.backgrounds) out.push_back(b);
    std::vector<std::string> unique;
    for (const auto& w : out) {
      if (std::find(unique.begin(), unique.end(), w) == unique.end()) unique.push_back(w);
    }
    return unique;
  }
};

/// Vocabulary closed over the template set: every word a rendered caption can use.
inline Vocabulary synthetic_vocabulary(const Lexicon& lex = {}, const TemplateSet& templates = {}) {
  TemplateSet t = templates.nouns.empty() ? TemplateSet::for_lexicon(lex) : templates;
  std::vector<std::string> nouns;
  for (const auto& [label, noun] : t.nouns) nouns.push_back(noun);
  return Vocabulary(t.words(lex), nouns);
}

struct SynthConfig {
  double canvas = 100.0;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  std::size_t min_parts = 2;
  std::size_t max_parts = 4;
  /// Jittered copies of each object's full box, in addition to the full proposal itself.
  std::size_t full_duplicates = 1;
  /// Total proposals per sample; the remainder after object proposals is noise.
  std::size_t num_proposals = 24;
  std::size_t feat_dim = 16;
  std::size_t grid_size = 4;
  /// Full-proposal jitter as a fraction of the object's width/height.
  double jitter = 0.05;
  double noise_sigma = 0.05;
  /// Extra object-signal scale on the designated discriminative part.
  double salience_beta = 1.0;
  /// Object-signal scale on the other parts.
  double part_strength = 0.8;
  /// Largest K the data must support: every sample has at least max_branches + 1 proposals.
  std::size_t max_branches = 4;

  void validate(const Lexicon& lex = {}) const {
    if (!(canvas > 0.0)) throw ConfigError("canvas must be positive");
    if (min_objects > max_objects) throw ConfigError("min_objects exceeds max_objects");
    if (max_objects > lex.classes.size()) throw ConfigError("more objects than distinct classes");
    if (min_parts < 2 || min_parts > max_parts || max_parts > 4) throw ConfigError("parts per object must lie in 2..4");
    if (feat_dim < lex.min_feat_dim()) {
      throw ConfigError("feat_dim " + std::to_string(feat_dim) + " is below the feature layout size " +
                        std::to_string(lex.min_feat_dim()));
    }
    if (grid_size == 0) throw ConfigError("grid_size must be positive");
    if (!(noise_sigma >= 0.0) || !(salience_beta >= 0.0) || !(jitter >= 0.0)) {
      throw ConfigError("noise_sigma, salience_beta and jitter must be nonnegative");
    }
    if (num_proposals < max_branches + 1) throw ConfigError("num_proposals must be at least max_branches + 1");
    const std::size_t worst = max_objects * (1 + full_duplicates + max_parts);
    if (worst > num_proposals) {
      throw ConfigError("object proposals (" + std::to_string(worst) + ") can exceed num_proposals (" +
                        std::to_string(num_proposals) + ")");
    }
  }
};

struct SceneObject {
  std::size_t label = 0;  // index into Lexicon::classes
  std::size_t color = 0;  // index into Lexicon::colors
  Box box;
  std::vector<Box> parts;
  std::size_t discriminative = 0;  // index into parts
};

struct SceneSpec {
  double width = 0.0;
  double height = 0.0;
  std::size_t background = 0;
  /// Sorted left to right.
  std::vector<SceneObject> objects;
};

enum class ProposalKind { kFull, kPart, kNoise };

inline const char* to_string(ProposalKind k) {
  switch (k) {
    case ProposalKind::kFull: return "full";
    case ProposalKind::kPart: return "part";
    case ProposalKind::kNoise: return "noise";
  }
  return "noise";
}

struct SceneProposal {
  Box box;
  ProposalKind kind = ProposalKind::kNoise;
  std::size_t object = 0;  // meaningful unless kind == kNoise
  bool discriminative = false;
};

namespace detail {

inline std::vector<Box> split_parts(const Box& obj, std::size_t count, Rng& rng) {
  const double x1 = obj.x1, y1 = obj.y1, w = obj.width(), h = obj.height();
  const double xm = x1 + w / 2, ym = y1 + h / 2;
  std::vector<Box> cells;
  const bool horizontal = rng.uniform() < 0.5;
  if (count == 2) {
    if (horizontal) {
      cells = {{x1, y1, obj.x2, ym}, {x1, ym, obj.x2, obj.y2}};
    } else {
      cells = {{x1, y1, xm, obj.y2}, {xm, y1, obj.x2, obj.y2}};
    }
  } else if (count == 3) {
    if (horizontal) {
      cells = {{x1, y1, obj.x2, ym}, {x1, ym, xm, obj.y2}, {xm, ym, obj.x2, obj.y2}};
    } else {
      cells = {{x1, y1, xm, obj.y2}, {xm, y1, obj.x2, ym}, {xm, ym, obj.x2, obj.y2}};
    }
  } else {
    cells = {{x1, y1, xm, ym}, {xm, y1, obj.x2, ym}, {x1, ym, xm, obj.y2}, {xm, ym, obj.x2, obj.y2}};
  }
  std::vector<Box> parts;
  for (const Box& c : cells) {
    const double pw = c.width() * rng.uniform(0.75, 1.0);
    const double ph = c.height() * rng.uniform(0.75, 1.0);
    const double px = c.x1 + (c.width() - pw) * rng.uniform();
    const double py = c.y1 + (c.height() - ph) * rng.uniform();
    parts.push_back({px, py, std::min(px + pw, c.x2), std::min(py + ph, c.y2)});
  }
  return parts;
}

inline bool partial_grounding_holds(const SceneObject& o) {
  bool has_partial = false;
  for (const Box& p : o.parts) has_partial = has_partial || (contains(o.box, p) && iou(o.box, p) <= 0.5);
  return has_partial && iou(union_box(o.parts), o.box) > 0.5;
}

inline Box clamp_to(const Box& b, double w, double h) {
  Box out{std::clamp(b.x1, 0.0, w), std::clamp(b.y1, 0.0, h), std::clamp(b.x2, 0.0, w), std::clamp(b.y2, 0.0, h)};
  if (out.x2 < out.x1) std::swap(out.x1, out.x2);
  if (out.y2 < out.y1) std::swap(out.y1, out.y2);
  return out;
}

}  // namespace detail

/// Places objects in disjoint vertical slots, left to right, each with
/// 2-4 parts of at most half its area. Objects that fail the partial-grounding
/// construction are redrawn from a bumped sub-seed.
inline SceneSpec generate_scene(std::uint64_t seed, const SynthConfig& config, const Lexicon& lex = {}) {
  config.validate(lex);
  Rng rng(seed);
  SceneSpec scene;
  scene.width = config.canvas;
  scene.height = config.canvas;
  scene.background = rng.index(lex.backgrounds.size());
  const std::size_t n = config.min_objects + rng.index(config.max_objects - config.min_objects + 1);
  if (n == 0) return scene;

  const double slot = config.canvas / static_cast<double>(n);
  constexpr double kMinSide = 4.0;
  if (slot * 0.6 < kMinSide || config.canvas * 0.4 < kMinSide) {
    throw ConfigError("canvas " + std::to_string(config.canvas) + " is too small to place " + std::to_string(n) +
                      " objects");
  }

  std::vector<std::size_t> labels(lex.classes.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i;
  rng.shuffle(labels.begin(), labels.end());

  for (std::size_t i = 0; i < n; ++i) {
    SceneObject obj;
    obj.label = labels[i];
    obj.color = rng.index(lex.colors.size());
    for (std::uint64_t attempt = 0;; ++attempt) {
      Rng sub(derive_seed(seed, 1000 + i * 64 + attempt));
      const double w = slot * sub.uniform(0.6, 0.95);
      const double h = config.canvas * sub.uniform(0.4, 0.9);
      const double x = slot * static_cast<double>(i) + (slot - w) * sub.uniform();
      const double y = (config.canvas - h) * sub.uniform();
      obj.box = {x, y, x + w, y + h};
      const std::size_t parts = config.min_parts + sub.index(config.max_parts - config.min_parts + 1);
      obj.parts = detail::split_parts(obj.box, parts, sub);
      obj.discriminative = sub.index(obj.parts.size());
      if (detail::partial_grounding_holds(obj)) break;
      if (attempt > 1000) throw ConfigError("could not construct a partially covered object");
    }
    scene.objects.push_back(std::move(obj));
  }
  return scene;
}

/// Object proposals (full box with mild jitter, jittered duplicates, exact
/// parts) followed by noise proposals, then shuffled.
inline std::vector<SceneProposal> make_proposals(const SceneSpec& scene, const SynthConfig& config,
                                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SceneProposal> out;
  auto jittered = [&](const Box& b) {
    const double jx = config.jitter * b.width(), jy = config.jitter * b.height();
    Box j{b.x1 + rng.uniform(-jx, jx), b.y1 + rng.uniform(-jy, jy), b.x2 + rng.uniform(-jx, jx),
          b.y2 + rng.uniform(-jy, jy)};
    return detail::clamp_to(j, scene.width, scene.height);
  };
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& obj = scene.objects[i];
    for (std::size_t d = 0; d <= config.full_duplicates; ++d) out.push_back({jittered(obj.box), ProposalKind::kFull, i, false});
    for (std::size_t p = 0; p < obj.parts.size(); ++p) {
      out.push_back({obj.parts[p], ProposalKind::kPart, i, p == obj.discriminative});
    }
  }
  if (out.size() > config.num_proposals) {
    throw ConfigError("scene needs " + std::to_string(out.size()) + " object proposals but N=" +
                      std::to_string(config.num_proposals));
  }
  while (out.size() < config.num_proposals) {
    const double w = scene.width * rng.uniform(0.1, 0.4), h = scene.height * rng.uniform(0.1, 0.4);
    const double x = (scene.width - w) * rng.uniform(), y = (scene.height - h) * rng.uniform();
    out.push_back({{x, y, x + w, y + h}, ProposalKind::kNoise, 0, false});
  }
  rng.shuffle(out.begin(), out.end());
  return out;
}

/// Object signal (class + color one-hots) scaled by proposal kind, background
/// one-hot for noise, normalized box centre, and Gaussian noise on every channel.
inline std::vector<double> synth_features(const SceneProposal& proposal, const SceneSpec& scene,
                                          const SynthConfig& config, std::uint64_t seed, const Lexicon& lex = {}) {
  if (config.feat_dim < lex.min_feat_dim()) throw ConfigError("feat_dim too small for the feature layout");
  std::vector<double> f(config.feat_dim, 0.0);
  if (proposal.kind == ProposalKind::kNoise) {
    f[lex.background_channel(scene.background)] = 1.0;
  } else {
    const auto& obj = scene.objects.at(proposal.object);
    double strength = 1.0;
    if (proposal.kind == ProposalKind::kPart) {
      strength = proposal.discriminative ? 1.0 + config.salience_beta : config.part_strength;
    }
    f[lex.class_channel(obj.label)] = strength;
    f[lex.color_channel(obj.color)] = strength;
  }
  const Box& b = proposal.box;
  f[lex.geometry_channel()] = 0.5 * (b.x1 + b.x2) / scene.width;
  f[lex.geometry_channel() + 1] = 0.5 * (b.y1 + b.y2) / scene.height;
  if (config.noise_sigma > 0.0) {
    Rng rng(seed);
    for (double& v : f) v += config.noise_sigma * rng.normal();
  }
  return f;
}

/// Feature map: background one-hot and object count in every cell, plus noise.
inline std::vector<double> synth_grid(const SceneSpec& scene, const SynthConfig& config, std::uint64_t seed,
                                      const Lexicon& lex = {}) {
  const std::size_t cells = config.grid_size * config.grid_size;
  std::vector<double> grid(cells * config.feat_dim, 0.0);
  Rng rng(seed);
  const double count =
      static_cast<double>(scene.objects.size()) / static_cast<double>(std::max<std::size_t>(1, config.max_objects));
  for (std::size_t c = 0; c < cells; ++c) {
    double* cell = grid.data() + c * config.feat_dim;
    cell[lex.background_channel(scene.background)] = 1.0;
    cell[lex.count_channel()] = count;
    for (std::size_t j = 0; j < config.feat_dim; ++j) cell[j] += config.noise_sigma * rng.normal();
  }
  return grid;
}

/// Two references: "a red dog beside a blue cat on the grass" and the same
/// with "the" articles. Class tokens align to the object's full box.
inline std::vector<Reference> render_caption(const SceneSpec& scene, const TemplateSet& templates,
                                             const Lexicon& lex = {}) {
  std::vector<Reference> refs;
  for (const auto& article : templates.articles) {
    Reference ref;
    if (scene.objects.empty()) {
      ref.tokens = {templates.definite, lex.backgrounds.at(scene.background)};
      refs.push_back(std::move(ref));
      continue;
    }
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      const auto& obj = scene.objects[i];
      if (i == 1) ref.tokens.push_back(templates.relation);
      if (i >= 2) ref.tokens.push_back(templates.conjunction);
      auto noun = templates.nouns.find(lex.classes.at(obj.label));
      if (noun == templates.nouns.end()) {
        throw ConfigError("no template noun for class '" + lex.classes.at(obj.label) + "'");
      }
      ref.tokens.push_back(article);
      ref.tokens.push_back(lex.colors.at(obj.color));
      ref.alignments.push_back({ref.tokens.size(), obj.box});
      ref.tokens.push_back(noun->second);
    }
    ref.tokens.push_back(templates.preposition);
    ref.tokens.push_back(templates.definite);
    ref.tokens.push_back(lex.backgrounds.at(scene.background));
    refs.push_back(std::move(ref));
  }
  return refs;
}

/// Everything about one generated sample, including generator-side provenance.
struct SynthSample {
  SceneSpec scene;
  std::vector<SceneProposal> proposals;
  Sample sample;
};

inline SynthSample make_sample(const std::string& id, std::uint64_t seed, const SynthConfig& config,
                               const Lexicon& lex = {}, const TemplateSet& templates = {}) {
  const TemplateSet t = templates.nouns.empty() ? TemplateSet::for_lexicon(lex) : templates;
  SynthSample out;
  out.scene = generate_scene(derive_seed(seed, 0), config, lex);
  out.proposals = make_proposals(out.scene, config, derive_seed(seed, 1));
  Sample& s = out.sample;
  s.id = id;
  s.grid_size = config.grid_size;
  s.feat_dim = config.feat_dim;
  s.grid = synth_grid(out.scene, config, derive_seed(seed, 2), lex);
  for (std::size_t i = 0; i < out.proposals.size(); ++i) {
    const auto& p = out.proposals[i];
    s.proposals.push_back({p.box, synth_features(p, out.scene, config, derive_seed(seed, 100 + i), lex), to_string(p.kind)});
  }
  s.refs = render_caption(out.scene, t, lex);
  return out;
}

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// val and test get floor(ratio * n); train takes the remainder.
inline SplitSizes split_sizes(std::size_t n, double train_ratio, double val_ratio, double test_ratio) {
  if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0 || std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be nonnegative and sum to 1");
  }
  SplitSizes s;
  s.val = static_cast<std::size_t>(std::floor(val_ratio * static_cast<double>(n)));
  s.test = static_cast<std::size_t>(std::floor(test_ratio * static_cast<double>(n)));
  s.train = n - s.val - s.test;
  return s;
}

inline std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%06zu", index);
  return buf;
}

/// Sample i is generated from derive_seed(master_seed, i), so any subset of
/// indices can be produced independently and in any order.
inline Dataset build_dataset(std::size_t n, double train_ratio, double val_ratio, double test_ratio,
                             std::uint64_t master_seed, const SynthConfig& config, const Lexicon& lex = {}) {
  config.validate(lex);
  const SplitSizes sizes = split_sizes(n, train_ratio, val_ratio, test_ratio);
  Dataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = make_sample(sample_id(i), derive_seed(master_seed, i), config, lex).sample;
    if (i < sizes.train) {
      ds.train.push_back(std::move(s));
    } else if (i < sizes.train + sizes.val) {
      ds.val.push_back(std::move(s));
    } else {
      ds.test.push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace gcap
