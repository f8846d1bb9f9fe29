#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gcap/errors.hpp"

namespace gcap {

inline constexpr const char* kBos = "<bos>";
inline constexpr const char* kEos = "<eos>";
inline constexpr const char* kPad = "<pad>";
inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kBosId = 1;
inline constexpr std::size_t kEosId = 2;

/// Bijective token <-> index map. Indices 0, 1, 2 are PAD, BOS, EOS.
/// Noun-lexicon tokens are the visually groundable words.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(std::vector<std::string>{}, {}) {}

  /// `words` must not contain the special tokens; duplicates are rejected.
  Vocabulary(const std::vector<std::string>& words, const std::vector<std::string>& nouns) {
    for (const char* special : {kPad, kBos, kEos}) add(special);
    for (const auto& w : words) {
      if (w == kPad || w == kBos || w == kEos) throw ValidationError("reserved token in word list: " + w);
      add(w);
    }
    is_noun_.assign(tokens_.size(), false);
    for (const auto& n : nouns) {
      auto it = index_.find(n);
      if (it == index_.end()) throw ValidationError("noun '" + n + "' is not in the vocabulary");
      is_noun_[it->second] = true;
    }
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t pad() const { return kPadId; }
  std::size_t bos() const { return kBosId; }
  std::size_t eos() const { return kEosId; }

  const std::string& token(std::size_t index) const {
    if (index >= tokens_.size()) throw ValidationError("token index " + std::to_string(index) + " out of range");
    return tokens_[index];
  }

  bool contains(const std::string& word) const { return index_.count(word) != 0; }

  std::size_t index(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw ValidationError("out-of-vocabulary token '" + word + "'");
    return it->second;
  }

  bool is_noun(std::size_t index) const { return index < is_noun_.size() && is_noun_[index]; }
  bool is_noun(const std::string& word) const { return contains(word) && is_noun(index(word)); }

  /// Words in index order, excluding the three special tokens.
  std::vector<std::string> words() const { return {tokens_.begin() + 3, tokens_.end()}; }

  std::vector<std::string> nouns() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (is_noun_[i]) out.push_back(tokens_[i]);
    }
    return out;
  }

  /// Word indices followed by EOS.
  std::vector<std::size_t> encode(std::span<const std::string> words) const {
    std::vector<std::size_t> out;
    out.reserve(words.size() + 1);
    for (const auto& w : words) out.push_back(index(w));
    out.push_back(eos());
    return out;
  }

  std::vector<std::string> decode(std::span<const std::size_t> ids) const {
    std::vector<std::string> out;
    for (std::size_t id : ids) {
      if (id == eos()) break;
      if (id == bos() || id == pad()) continue;
      out.push_back(token(id));
    }
    return out;
  }

 private:
  void add(const std::string& w) {
    if (!index_.emplace(w, tokens_.size()).second) throw ValidationError("duplicate token '" + w + "'");
    tokens_.push_back(w);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<bool> is_noun_;
};

}  // namespace gcap
