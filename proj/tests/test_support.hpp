#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "gcap/model.hpp"
#include "gcap/rng.hpp"
#include "gcap/sample.hpp"
#include "gcap/vocab.hpp"

namespace gcap::testing {

inline ModelConfig tiny_config(std::size_t h, std::size_t e, std::size_t d, std::size_t n, std::size_t g,
                               std::size_t k) {
  ModelConfig c;
  c.hidden_dim = h;
  c.embed_dim = e;
  c.att_dim = h;
  c.feat_dim = d;
  c.num_proposals = n;
  c.grid_size = g;
  c.branches = k;
  return c;
}

/// Words "w0".."w{count-1}"; the first `nouns` of them are nouns.
inline Vocabulary tiny_vocab(std::size_t count, std::size_t nouns) {
  std::vector<std::string> words, noun_words;
  for (std::size_t i = 0; i < count; ++i) {
    words.push_back("w" + std::to_string(i));
    if (i < nouns) noun_words.push_back(words.back());
  }
  return Vocabulary(words, noun_words);
}

inline Box random_box(Rng& rng) {
  const double x = rng.uniform(0, 50), y = rng.uniform(0, 50);
  return {x, y, x + rng.uniform(1, 40), y + rng.uniform(1, 40)};
}

/// Random features in [-1, 1] and random non-degenerate boxes.
inline Sample random_sample(Rng& rng, std::size_t n, std::size_t d, std::size_t g, const std::string& id = "t") {
  Sample s;
  s.id = id;
  s.grid_size = g;
  s.feat_dim = d;
  for (std::size_t i = 0; i < g * g * d; ++i) s.grid.push_back(rng.uniform(-1, 1));
  for (std::size_t i = 0; i < n; ++i) {
    Proposal p;
    p.box = random_box(rng);
    for (std::size_t j = 0; j < d; ++j) p.feature.push_back(rng.uniform(-1, 1));
    s.proposals.push_back(std::move(p));
  }
  return s;
}

inline void fill(Tensor& t, double v) { std::fill(t.values().begin(), t.values().end(), v); }

inline void set(Tensor& t, std::initializer_list<double> values) {
  std::copy(values.begin(), values.end(), t.values().begin());
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace gcap::testing
