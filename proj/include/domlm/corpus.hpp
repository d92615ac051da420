#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace domlm {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kMaskId = 2;
inline constexpr int kClsId = 3;
inline constexpr int kFirstRegularId = 4;

/// Lowercases and splits on whitespace; every ASCII punctuation character
/// becomes its own token.
std::vector<std::string> split_words(std::string_view text);

class Vocab {
 public:
  Vocab();

  /// Regular tokens in order of descending frequency, ties lexicographic.
  static Vocab from_counts(const std::unordered_map<std::string, std::size_t>& counts, std::size_t min_freq);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int id(std::string_view token) const;  // UNK when absent
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;

  /// token<TAB>id per line, specials first.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.id_to_token_ == b.id_to_token_; }

 private:
  void push(std::string token);

  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

struct Document {
  std::optional<std::string> entity_id;
  std::vector<int> tokens;
  std::size_t raw_len = 0;

  std::size_t size() const { return tokens.size(); }
};

Vocab build_vocab(const std::filesystem::path& corpus_path, std::size_t min_freq);
Document tokenize(std::string_view text, const Vocab& vocab, std::size_t max_seq_len);
/// One document per non-empty line.
std::vector<Document> load_corpus(const std::filesystem::path& corpus_path, const Vocab& vocab, std::size_t max_seq_len);

struct EntityPairSet {
  std::vector<std::pair<std::string, std::string>> pairs;  // smaller id first
  std::unordered_map<std::string, Document> content;
  std::size_t dropped = 0;  // pairs lost to missing or empty content
  std::size_t self_pairs = 0;

  std::size_t size() const { return pairs.size(); }
  const Document& doc(const std::string& id) const;
};

EntityPairSet load_entity_pairs(const std::filesystem::path& pairs_path, const std::filesystem::path& content_path,
                                const Vocab& vocab, std::size_t max_seq_len = 128);

/// Splits a TSV line into exactly two fields or returns nullopt.
std::optional<std::pair<std::string, std::string>> split_two_columns(std::string_view line);

}  // namespace domlm
