#pragma once

#include "domlm/corpus.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <vector>

namespace domlm {

using Rng = std::mt19937_64;

struct PhraseEntry {
  std::vector<int> tokens;  // length >= 2
  double score = 0.0;
};

/// Quality-scored domain phrases. The phrase-vocabulary id of an entry is its
/// index; entries are ordered by token sequence so ids are deterministic.
class PhrasePool {
 public:
  PhrasePool() = default;
  explicit PhrasePool(std::vector<PhraseEntry> entries);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<PhraseEntry>& entries() const { return entries_; }
  const PhraseEntry& entry(int phrase_id) const { return entries_.at(static_cast<std::size_t>(phrase_id)); }
  std::size_t max_phrase_len() const { return max_len_; }

  /// Phrase id for an exact token sequence, or -1.
  int find(std::span<const int> tokens) const;

  std::size_t dropped_low_score = 0;
  std::size_t dropped_unknown = 0;
  std::size_t dropped_short = 0;

 private:
  std::vector<PhraseEntry> entries_;
  std::map<std::vector<int>, int> index_;
  std::size_t max_len_ = 0;
};

struct PhraseMatch {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  double score = 0.0;
  int phrase_id = -1;

  std::size_t length() const { return end - start; }
  friend bool operator==(const PhraseMatch&, const PhraseMatch&) = default;
};

/// phrase<TAB>score per line; keeps score >= min_score, max score on duplicates.
PhrasePool load_pool(const std::filesystem::path& path, const Vocab& vocab, double min_score = 0.5);

/// Greedy left-to-right longest-match scan; matches never overlap.
std::vector<PhraseMatch> detect(std::span<const int> tokens, const PhrasePool& pool);
inline std::vector<PhraseMatch> detect(const Document& doc, const PhrasePool& pool) { return detect(doc.tokens, pool); }

struct PhraseSample {
  std::vector<std::size_t> positions;             // union of sampled phrases, ascending
  std::vector<std::vector<std::size_t>> groups;   // one per sampled phrase, in draw order
  std::vector<std::size_t> match_indices;         // which match each group came from
};

/// Softmax-over-scores draws without replacement until the covered token count
/// reaches ceil(budget_ratio * length) or the matches run out.
PhraseSample sample_phrase_tokens(std::size_t length, std::span<const PhraseMatch> matches, double budget_ratio,
                                  Rng& rng);

/// ceil(ratio * length) computed without the ratio's representation error
/// leaking into the ceiling (0.15 * 20 must be 3, not 4).
std::size_t masking_budget(std::size_t length, double ratio);

}  // namespace domlm
