#include "synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <stdexcept>

namespace domlm::testing {

namespace {

using Rng = std::mt19937_64;

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

std::vector<std::string> numbered(const std::string& prefix, int count) {
  std::vector<std::string> out;
  for (int i = 0; i < count; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

std::string join(const std::vector<std::string>& words) {
  std::string s;
  for (const auto& w : words) {
    if (!s.empty()) s.push_back(' ');
    s += w;
  }
  return s;
}

}  // namespace

PhraseCorpus make_phrase_corpus(std::uint64_t seed, std::size_t count) {
  Rng rng(seed);
  const std::vector<std::string> letters{"a", "b", "c", "d", "e"};
  const auto adjectives = numbered("adj", 40);
  const auto nouns = numbered("noun", 40);
  const auto adverbs = numbered("adv", 12);

  struct Category {
    std::vector<std::string> cues;
    std::vector<std::string> phrases;
  };
  std::vector<Category> categories;
  PhraseCorpus corpus;
  std::uniform_real_distribution<double> good(0.55, 1.0);
  // Phrase words are private to a category; the same word appears in several
  // of its phrases so partial context narrows but does not fix the rest.
  for (const auto& c : letters) {
    Category cat;
    cat.cues = numbered("cue" + c, 4);
    const auto w = numbered("p" + c, 7);
    cat.phrases = {join({w[0], w[1]}),       join({w[0], w[2]}),       join({w[3], w[1]}),
                   join({w[4], w[5], w[2]}), join({w[3], w[5], w[6]}), join({w[4], w[0], w[6], w[1]})};
    for (const auto& p : cat.phrases) {
      corpus.pool.emplace_back(p, good(rng));
      corpus.phrases.push_back(p);
    }
    categories.push_back(std::move(cat));
  }
  // Sub-threshold entries that the loader must drop.
  corpus.pool.emplace_back("adj0 noun0", 0.2);
  corpus.pool.emplace_back("noun1 adv1", 0.45);

  std::uniform_int_distribution<int> template_of(0, 4);
  for (std::size_t i = 0; i < count; ++i) {
    const Category& cat = pick(categories, rng);
    const std::string& cue = pick(cat.cues, rng);
    const std::string& phrase = pick(cat.phrases, rng);
    std::string s;
    switch (template_of(rng)) {
      case 0:
        s = "the " + cue + " " + phrase + " is " + pick(adjectives, rng) + " and " + pick(adjectives, rng) + " .";
        break;
      case 1:
        s = "i bought this " + cue + " " + phrase + " for my " + pick(nouns, rng) + " .";
        break;
      case 2:
        s = phrase + " works " + pick(adverbs, rng) + " with the " + cue + " " + pick(nouns, rng) + " .";
        break;
      case 3:
        s = "my " + pick(nouns, rng) + " says the " + cue + " " + phrase + " was " + pick(adjectives, rng) + " .";
        break;
      default:
        s = "the " + phrase + " and the " + pick(cat.phrases, rng) + " are " + pick(adjectives, rng) + " " + cue +
            " items .";
        break;
    }
    corpus.sentences.push_back(std::move(s));
  }
  return corpus;
}

PairCorpus make_pair_corpus(std::uint64_t seed, std::size_t count, std::size_t synonym_count) {
  Rng rng(seed);
  PairCorpus corpus;
  const auto left = numbered("syn", static_cast<int>(synonym_count));
  const auto right = numbered("alt", static_cast<int>(synonym_count));
  for (std::size_t k = 0; k < synonym_count; ++k) corpus.synonyms.emplace_back(left[k], right[k]);
  const auto cues = numbered("kind", static_cast<int>(synonym_count));
  const auto shared = numbered("item", 30);
  const auto fillers = numbered("word", 60);

  // A synonym and its counterpart share a cue word, the way real synonyms
  // share contexts. Segment order and filler count vary per document so
  // token position says nothing about the counterpart.
  std::uniform_int_distribution<std::size_t> syn(0, synonym_count - 1);
  std::uniform_int_distribution<int> filler_count(1, 2);
  auto render = [&](std::vector<std::string> segments) {
    for (int f = filler_count(rng); f > 0; --f) segments.push_back(pick(fillers, rng));
    std::shuffle(segments.begin(), segments.end(), rng);
    return join(segments);
  };
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t s1 = syn(rng), s2 = syn(rng);
    while (s2 == s1) s2 = syn(rng);
    const std::string& i1 = pick(shared, rng);
    std::string i2 = pick(shared, rng);
    while (i2 == i1) i2 = pick(shared, rng);
    const std::string a = render({cues[s1] + " " + left[s1] + " " + i1, cues[s2] + " " + left[s2] + " " + i2});
    const std::string b = render({cues[s1] + " " + right[s1] + " " + i1, cues[s2] + " " + right[s2] + " " + i2});
    const std::string ida = "A" + std::to_string(i);
    const std::string idb = "B" + std::to_string(i);
    corpus.content.emplace_back(ida, a);
    corpus.content.emplace_back(idb, b);
    corpus.pairs.emplace_back(ida, idb);
  }
  return corpus;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

void write_pool(const std::filesystem::path& path, const std::vector<std::pair<std::string, double>>& pool) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [p, s] : pool) out << p << '\t' << s << '\n';
}

void write_tsv(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [a, b] : rows) out << a << '\t' << b << '\n';
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("domlm_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace domlm::testing
