#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

// Templated synthetic corpora with planted structure, shared by the trainer
// tests and the acceptance suite.
namespace domlm::testing {

struct PhraseCorpus {
  std::vector<std::string> sentences;
  std::vector<std::pair<std::string, double>> pool;  // includes sub-threshold entries
  std::vector<std::string> phrases;                  // the kept (score >= 0.5) phrases
};

/// Sentences from a handful of templates over five topical categories. Each
/// category owns six phrases (lengths 2, 2, 2, 3, 3, 4) plus cue words that
/// co-occur with them; fillers are drawn uniformly.
PhraseCorpus make_phrase_corpus(std::uint64_t seed, std::size_t sentences);

struct PairCorpus {
  std::vector<std::pair<std::string, std::string>> content;  // id, text
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<std::pair<std::string, std::string>> synonyms;  // (word in a, counterpart in b)
};

/// Associated entity texts: the b side restates the a side with planted
/// synonyms swapped in, reordered, and padded with unrelated fillers.
PairCorpus make_pair_corpus(std::uint64_t seed, std::size_t pairs, std::size_t synonym_count = 20);

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);
void write_pool(const std::filesystem::path& path, const std::vector<std::pair<std::string, double>>& pool);
void write_tsv(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& rows);

/// Fresh directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace domlm::testing
