#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gcap/errors.hpp"
#include "gcap/geometry.hpp"
#include "gcap/vocab.hpp"

namespace gcap {

struct Proposal {
  Box box;
  std::vector<double> feature;
  /// Provenance: "full", "part", or "noise". Never read by the model.
  std::string tag;
};

/// Evaluation-only link from a caption position to the object's ground-truth box.
struct Alignment {
  std::size_t position = 0;
  Box box;
};

struct Reference {
  std::vector<std::string> tokens;
  std::vector<Alignment> alignments;
};

/// One synthetic "image": region proposals, a G x G feature map, and references.
struct Sample {
  std::string id;
  std::size_t grid_size = 0;
  std::size_t feat_dim = 0;
  /// Row-major G*G cells of feat_dim values each.
  std::vector<double> grid;
  std::vector<Proposal> proposals;
  std::vector<Reference> refs;

  std::size_t num_proposals() const { return proposals.size(); }
  std::size_t num_cells() const { return grid_size * grid_size; }
};

/// Checks the structural invariants of a sample against a vocabulary.
inline void validate(const Sample& s, const Vocabulary& vocab) {
  const std::string where = "sample '" + s.id + "': ";
  if (s.proposals.empty()) throw ValidationError(where + "needs at least one proposal");
  if (s.feat_dim == 0 || s.grid_size == 0) throw ValidationError(where + "empty grid or zero feature dimension");
  if (s.grid.size() != s.num_cells() * s.feat_dim) throw ValidationError(where + "grid size does not match G*G*d");
  for (const auto& p : s.proposals) {
    if (p.feature.size() != s.feat_dim) throw ValidationError(where + "proposal feature has the wrong dimension");
    validate(p.box);
  }
  for (const auto& ref : s.refs) {
    for (const auto& w : ref.tokens) vocab.index(w);
    for (const auto& a : ref.alignments) {
      if (a.position >= ref.tokens.size()) throw ValidationError(where + "alignment position out of bounds");
      if (!vocab.is_noun(ref.tokens[a.position])) {
        throw ValidationError(where + "alignment on non-noun token '" + ref.tokens[a.position] + "'");
      }
      validate(a.box);
      if (a.box.area() <= 0.0) throw ValidationError(where + "degenerate ground-truth box " + to_string(a.box));
    }
  }
}

}  // namespace gcap
