#include "domlm/corpus.hpp"

#include "domlm/errors.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

namespace domlm {

namespace {

constexpr const char* kSpecialTokens[] = {"[PAD]", "[UNK]", "[MASK]", "[CLS]"};

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return in;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      current.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

Vocab::Vocab() {
  for (const char* s : kSpecialTokens) push(s);
}

void Vocab::push(std::string token) {
  token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(std::move(token));
}

Vocab Vocab::from_counts(const std::unordered_map<std::string, std::size_t>& counts, std::size_t min_freq) {
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, n] : counts) {
    if (n >= min_freq) kept.emplace_back(tok, n);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocab v;
  for (auto& [tok, n] : kept) {
    if (!v.contains(tok)) v.push(std::move(tok));
  }
  return v;
}

int Vocab::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnkId : it->second;
}

bool Vocab::contains(std::string_view token) const { return token_to_id_.contains(std::string(token)); }

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += token(ids[i]);
  }
  return out;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\t' << i << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  auto in = open_input(path);
  Vocab v;
  v.token_to_id_.clear();
  v.id_to_token_.clear();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    auto cols = split_two_columns(line);
    if (!cols) throw ParseError(path.string(), lineno, "expected token<TAB>id");
    int id = -1;
    try {
      id = std::stoi(cols->second);
    } catch (const std::exception&) {
      throw ParseError(path.string(), lineno, "non-numeric id '" + cols->second + "'");
    }
    if (id != v.size()) throw ParseError(path.string(), lineno, "ids must be consecutive from 0");
    v.push(cols->first);
  }
  for (int i = 0; i < kFirstRegularId; ++i) {
    if (v.size() <= i || v.id_to_token_[static_cast<std::size_t>(i)] != kSpecialTokens[i]) {
      throw ParseError(path.string(), static_cast<std::size_t>(i + 1), "missing special token " +
                                                                           std::string(kSpecialTokens[i]));
    }
  }
  return v;
}

Vocab build_vocab(const std::filesystem::path& corpus_path, std::size_t min_freq) {
  auto in = open_input(corpus_path);
  std::unordered_map<std::string, std::size_t> counts;
  std::string line;
  std::size_t docs = 0;
  while (std::getline(in, line)) {
    strip_cr(line);
    auto words = split_words(line);
    if (words.empty()) continue;
    ++docs;
    for (auto& w : words) ++counts[w];
  }
  if (docs == 0) throw ContractError("corpus " + corpus_path.string() + " is empty");
  return Vocab::from_counts(counts, min_freq);
}

Document tokenize(std::string_view text, const Vocab& vocab, std::size_t max_seq_len) {
  Document doc;
  doc.tokens = vocab.encode(text);
  doc.raw_len = doc.tokens.size();
  if (doc.tokens.size() > max_seq_len) doc.tokens.resize(max_seq_len);
  return doc;
}

std::vector<Document> load_corpus(const std::filesystem::path& corpus_path, const Vocab& vocab,
                                  std::size_t max_seq_len) {
  auto in = open_input(corpus_path);
  std::vector<Document> docs;
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    Document d = tokenize(line, vocab, max_seq_len);
    if (!d.tokens.empty()) docs.push_back(std::move(d));
  }
  return docs;
}

std::optional<std::pair<std::string, std::string>> split_two_columns(std::string_view line) {
  const auto tab = line.find('\t');
  if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos) return std::nullopt;
  return std::pair{std::string(line.substr(0, tab)), std::string(line.substr(tab + 1))};
}

const Document& EntityPairSet::doc(const std::string& id) const {
  auto it = content.find(id);
  if (it == content.end()) throw IndexError("unknown entity id '" + id + "'");
  return it->second;
}

EntityPairSet load_entity_pairs(const std::filesystem::path& pairs_path, const std::filesystem::path& content_path,
                                const Vocab& vocab, std::size_t max_seq_len) {
  std::unordered_map<std::string, Document> content;
  {
    auto in = open_input(content_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      strip_cr(line);
      if (line.empty()) continue;
      auto cols = split_two_columns(line);
      if (!cols || cols->first.empty()) throw ParseError(content_path.string(), lineno, "expected id<TAB>text");
      Document d = tokenize(cols->second, vocab, max_seq_len);
      d.entity_id = cols->first;
      content.insert_or_assign(cols->first, std::move(d));
    }
  }

  EntityPairSet set;
  std::set<std::pair<std::string, std::string>> seen;
  auto in = open_input(pairs_path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    auto cols = split_two_columns(line);
    if (!cols || cols->first.empty() || cols->second.empty()) {
      throw ParseError(pairs_path.string(), lineno, "expected id_a<TAB>id_b");
    }
    auto [a, b] = std::move(*cols);
    if (a == b) {
      ++set.self_pairs;
      continue;
    }
    if (b < a) std::swap(a, b);
    if (!seen.emplace(a, b).second) continue;
    auto ia = content.find(a);
    auto ib = content.find(b);
    if (ia == content.end() || ib == content.end() || ia->second.tokens.empty() || ib->second.tokens.empty()) {
      ++set.dropped;
      continue;
    }
    set.pairs.emplace_back(a, b);
  }
  for (const auto& [a, b] : set.pairs) {
    set.content.try_emplace(a, content.at(a));
    set.content.try_emplace(b, content.at(b));
  }
  return set;
}

}  // namespace domlm
