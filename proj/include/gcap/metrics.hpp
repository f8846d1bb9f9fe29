#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gcap/errors.hpp"
#include "gcap/geometry.hpp"
#include "gcap/sample.hpp"

namespace gcap {

/// Match threshold: a grounding counts as correct when IoU is strictly above this.
inline constexpr double kIouThreshold = 0.5;

struct PredictedGrounding {
  std::size_t position = 0;
  std::string token;
  Box box;
};

struct Prediction {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<PredictedGrounding> groundings;
};

/// Evaluation-side view of a sample: reference token lists and per-class GT boxes.
struct GroundTruth {
  std::string id;
  std::vector<std::vector<std::string>> refs;
  /// Noun classes mentioned in any reference, with every aligned box for that class.
  std::map<std::string, std::vector<Box>> boxes;
};

inline GroundTruth ground_truth(const Sample& s, const std::set<std::string>& nouns) {
  GroundTruth gt;
  gt.id = s.id;
  for (const auto& ref : s.refs) {
    gt.refs.push_back(ref.tokens);
    for (const auto& w : ref.tokens) {
      if (nouns.count(w)) gt.boxes[w];
    }
    for (const auto& a : ref.alignments) {
      auto& list = gt.boxes[ref.tokens.at(a.position)];
      if (std::find(list.begin(), list.end(), a.box) == list.end()) list.push_back(a.box);
    }
  }
  return gt;
}

namespace detail {

/// First-occurrence box per predicted noun class. A noun without a grounding maps to nullopt.
inline std::map<std::string, std::optional<Box>> predicted_classes(const Prediction& p,
                                                                   const std::set<std::string>& nouns) {
  std::map<std::string, std::optional<Box>> out;
  for (std::size_t pos = 0; pos < p.tokens.size(); ++pos) {
    const auto& w = p.tokens[pos];
    if (!nouns.count(w) || out.count(w)) continue;
    std::optional<Box> box;
    for (const auto& g : p.groundings) {
      if (g.position == pos) {
        box = g.box;
        break;
      }
    }
    out.emplace(w, box);
  }
  return out;
}

inline double best_iou(const std::optional<Box>& box, const std::vector<Box>& truths) {
  if (!box) return 0.0;
  double best = 0.0;
  for (const Box& t : truths) best = std::max(best, iou(*box, t));
  return best;
}

inline void check_aligned(std::span<const Prediction> preds, std::span<const GroundTruth> truths) {
  if (preds.empty()) throw ValidationError("empty evaluation set");
  if (preds.size() != truths.size()) {
    throw ValidationError("prediction count " + std::to_string(preds.size()) + " differs from ground truth count " +
                          std::to_string(truths.size()));
  }
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].id != truths[i].id) {
      throw ValidationError("prediction id '" + preds[i].id + "' does not match sample id '" + truths[i].id + "'");
    }
  }
}

}  // namespace detail

struct ClassStats {
  std::size_t true_positives = 0;
  std::size_t asserted = 0;
  std::size_t gt_positive = 0;
  /// Samples where the class is both generated and in the references.
  std::size_t correct_words = 0;
  /// Of those, how many are localized with IoU > 0.5.
  std::size_t localized = 0;
};

inline std::map<std::string, ClassStats> class_stats(std::span<const Prediction> preds,
                                                     std::span<const GroundTruth> truths,
                                                     const std::set<std::string>& nouns) {
  detail::check_aligned(preds, truths);
  std::map<std::string, ClassStats> stats;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto predicted = detail::predicted_classes(preds[i], nouns);
    const auto& gt = truths[i].boxes;
    for (const auto& [cls, boxes] : gt) ++stats[cls].gt_positive;
    for (const auto& [cls, box] : predicted) {
      auto& s = stats[cls];
      ++s.asserted;
      auto it = gt.find(cls);
      if (it == gt.end()) continue;
      ++s.correct_words;
      if (detail::best_iou(box, it->second) > kIouThreshold) {
        ++s.true_positives;
        ++s.localized;
      }
    }
  }
  return stats;
}

/// Class-averaged F1 where a hit needs the word generated and its box at IoU > 0.5.
inline double f1_all(std::span<const Prediction> preds, std::span<const GroundTruth> truths,
                     const std::set<std::string>& nouns) {
  const auto stats = class_stats(preds, truths, nouns);
  double total = 0.0;
  std::size_t classes = 0;
  for (const auto& [cls, s] : stats) {
    if (s.gt_positive == 0 && s.asserted == 0) continue;
    ++classes;
    const double precision = s.asserted ? static_cast<double>(s.true_positives) / static_cast<double>(s.asserted) : 0.0;
    const double recall =
        s.gt_positive ? static_cast<double>(s.true_positives) / static_cast<double>(s.gt_positive) : 0.0;
    total += (precision + recall > 0.0) ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return classes ? total / static_cast<double>(classes) : 0.0;
}

struct LocScore {
  double value = 0.0;
  /// True when no word was correctly generated; value is then reported as 0.
  bool undefined = false;
};

/// Class-averaged localization accuracy over correctly generated words only.
inline LocScore f1_loc(std::span<const Prediction> preds, std::span<const GroundTruth> truths,
                       const std::set<std::string>& nouns) {
  const auto stats = class_stats(preds, truths, nouns);
  double total = 0.0;
  std::size_t classes = 0;
  for (const auto& [cls, s] : stats) {
    if (s.correct_words == 0) continue;
    ++classes;
    total += static_cast<double>(s.localized) / static_cast<double>(s.correct_words);
  }
  if (classes == 0) return {0.0, true};
  return {total / static_cast<double>(classes), false};
}

/// Corpus BLEU with per-reference clipping, uniform weights over orders 1..max_n,
/// and a brevity penalty against the closest reference length (ties to the shorter).
/// Orders for which the candidates contain no n-grams at all are left out of the mean.
inline double bleu(std::span<const std::vector<std::string>> candidates,
                   std::span<const std::vector<std::vector<std::string>>> references, std::size_t max_n) {
  if (max_n < 1 || max_n > 4) throw ValidationError("BLEU order must be in 1..4, got " + std::to_string(max_n));
  if (candidates.empty()) throw ValidationError("BLEU needs at least one candidate");
  if (candidates.size() != references.size()) throw ValidationError("BLEU candidate/reference count mismatch");

  using Gram = std::vector<std::string>;
  auto grams = [](const std::vector<std::string>& toks, std::size_t n) {
    std::map<Gram, std::size_t> out;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[Gram(toks.begin() + i, toks.begin() + i + n)];
    return out;
  };

  std::array<std::size_t, 4> matched{}, total{};
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& cand = candidates[i];
    const auto& refs = references[i];
    if (refs.empty()) throw ValidationError("BLEU candidate without references");
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto cg = grams(cand, n);
      std::map<Gram, std::size_t> max_ref;
      for (const auto& r : refs) {
        for (const auto& [g, c] : grams(r, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : cg) {
        total[n - 1] += c;
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n - 1] += std::min(c, it->second);
      }
    }
    std::size_t closest = refs.front().size();
    for (const auto& r : refs) {
      const auto d = [&](std::size_t len) { return len > cand.size() ? len - cand.size() : cand.size() - len; };
      if (d(r.size()) < d(closest) || (d(r.size()) == d(closest) && r.size() < closest)) closest = r.size();
    }
    cand_len += static_cast<double>(cand.size());
    ref_len += static_cast<double>(closest);
  }

  if (cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (total[n] == 0) continue;
    if (matched[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
    ++orders;
  }
  if (orders == 0) return 0.0;
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum / static_cast<double>(orders));
}

inline double bleu(std::span<const Prediction> preds, std::span<const GroundTruth> truths, std::size_t max_n) {
  detail::check_aligned(preds, truths);
  std::vector<std::vector<std::string>> cands;
  std::vector<std::vector<std::vector<std::string>>> refs;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    cands.push_back(preds[i].tokens);
    refs.push_back(truths[i].refs);
  }
  return bleu(std::span<const std::vector<std::string>>(cands),
              std::span<const std::vector<std::vector<std::string>>>(refs), max_n);
}

enum class ErrorCategory { kMissing, kHallucinated, kCorrect, kPartial, kOther };

inline constexpr std::array<const char*, 5> kCategoryNames{"mis_cls", "hallu_cls", "corr_grd", "part_grd", "other_err"};

struct TaxonomyReport {
  std::array<std::size_t, 5> counts{};
  std::array<double, 5> ratios{};

  std::size_t count(ErrorCategory c) const { return counts[static_cast<std::size_t>(c)]; }
  double ratio(ErrorCategory c) const { return ratios[static_cast<std::size_t>(c)]; }
  std::size_t total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

/// Grounding outcome for a class that is both generated and referenced.
inline ErrorCategory classify_grounding(const std::optional<Box>& box, const std::vector<Box>& truths) {
  if (detail::best_iou(box, truths) > kIouThreshold) return ErrorCategory::kCorrect;
  if (box) {
    for (const Box& t : truths) {
      if (contains(t, *box)) return ErrorCategory::kPartial;
    }
  }
  return ErrorCategory::kOther;
}

/// Partitions (sample, noun class) pairs: referenced-only (missing), generated-only
/// (hallucinated), and generated-and-referenced split by grounding quality.
inline TaxonomyReport error_taxonomy(std::span<const Prediction> preds, std::span<const GroundTruth> truths,
                                     const std::set<std::string>& nouns) {
  detail::check_aligned(preds, truths);
  TaxonomyReport report;
  auto bump = [&](ErrorCategory c) { ++report.counts[static_cast<std::size_t>(c)]; };
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto predicted = detail::predicted_classes(preds[i], nouns);
    const auto& gt = truths[i].boxes;
    for (const auto& [cls, boxes] : gt) {
      if (!predicted.count(cls)) bump(ErrorCategory::kMissing);
    }
    for (const auto& [cls, box] : predicted) {
      auto it = gt.find(cls);
      bump(it == gt.end() ? ErrorCategory::kHallucinated : classify_grounding(box, it->second));
    }
  }
  const std::size_t total = report.total();
  if (total == 0) throw ValidationError("error taxonomy over an empty universe");
  for (std::size_t c = 0; c < 5; ++c) report.ratios[c] = static_cast<double>(report.counts[c]) / static_cast<double>(total);
  return report;
}

/// One row of an ablation table over K and elimination.
struct AblationRow {
  std::size_t branches = 1;
  bool elimination = true;
  double bleu1 = 0.0;
  double bleu4 = 0.0;
  double f1_all = 0.0;
  double f1_loc = 0.0;
  double part_grd = 0.0;

  friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

struct EvalReport {
  std::size_t num_samples = 0;
  double bleu1 = 0.0;
  double bleu4 = 0.0;
  double f1_all = 0.0;
  double f1_loc = 0.0;
  bool f1_loc_undefined = false;
  TaxonomyReport taxonomy;
  std::vector<AblationRow> ablation;
};

inline EvalReport evaluate(std::span<const Prediction> preds, std::span<const GroundTruth> truths,
                           const std::set<std::string>& nouns) {
  EvalReport r;
  r.num_samples = preds.size();
  r.bleu1 = bleu(preds, truths, 1);
  r.bleu4 = bleu(preds, truths, 4);
  r.f1_all = f1_all(preds, truths, nouns);
  const LocScore loc = f1_loc(preds, truths, nouns);
  r.f1_loc = loc.value;
  r.f1_loc_undefined = loc.undefined;
  r.taxonomy = error_taxonomy(preds, truths, nouns);
  return r;
}

}  // namespace gcap
