#include "domlm/phrase_pool.hpp"

#include "domlm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace domlm {

PhrasePool::PhrasePool(std::vector<PhraseEntry> entries) {
  std::map<std::vector<int>, double> best;
  for (auto& e : entries) {
    if (e.tokens.size() < 2) throw ContractError("phrases need at least two tokens");
    auto [it, inserted] = best.emplace(e.tokens, e.score);
    if (!inserted) it->second = std::max(it->second, e.score);
  }
  for (auto& [tokens, score] : best) {
    index_.emplace(tokens, static_cast<int>(entries_.size()));
    max_len_ = std::max(max_len_, tokens.size());
    entries_.push_back({tokens, score});
  }
}

int PhrasePool::find(std::span<const int> tokens) const {
  auto it = index_.find(std::vector<int>(tokens.begin(), tokens.end()));
  return it == index_.end() ? -1 : it->second;
}

PhrasePool load_pool(const std::filesystem::path& path, const Vocab& vocab, double min_score) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<PhraseEntry> kept;
  std::size_t low = 0, unknown = 0, shorter = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split_two_columns(line);
    if (!cols) throw ParseError(path.string(), lineno, "expected phrase<TAB>score");
    double score = 0.0;
    std::size_t used = 0;
    try {
      score = std::stod(cols->second, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != cols->second.size() || !std::isfinite(score)) {
      throw ParseError(path.string(), lineno, "non-numeric score '" + cols->second + "'");
    }
    if (score < min_score) {
      ++low;
      continue;
    }
    std::vector<int> ids = vocab.encode(cols->first);
    if (std::find(ids.begin(), ids.end(), kUnkId) != ids.end()) {
      ++unknown;
      continue;
    }
    if (ids.size() < 2) {
      ++shorter;
      continue;
    }
    kept.push_back({std::move(ids), score});
  }
  PhrasePool pool(std::move(kept));
  pool.dropped_low_score = low;
  pool.dropped_unknown = unknown;
  pool.dropped_short = shorter;
  return pool;
}

std::vector<PhraseMatch> detect(std::span<const int> tokens, const PhrasePool& pool) {
  std::vector<PhraseMatch> matches;
  const std::size_t n = tokens.size();
  std::size_t i = 0;
  while (i < n) {
    bool hit = false;
    const std::size_t longest = std::min(pool.max_phrase_len(), n - i);
    for (std::size_t len = longest; len >= 2; --len) {
      const int id = pool.find(tokens.subspan(i, len));
      if (id >= 0) {
        matches.push_back({i, i + len, pool.entry(id).score, id});
        i += len;
        hit = true;
        break;
      }
    }
    if (!hit) ++i;
  }
  return matches;
}

std::size_t masking_budget(std::size_t length, double ratio) {
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(length) - 1e-9));
}

PhraseSample sample_phrase_tokens(std::size_t length, std::span<const PhraseMatch> matches, double budget_ratio,
                                  Rng& rng) {
  if (!(budget_ratio > 0.0 && budget_ratio < 1.0)) throw ContractError("budget_ratio must lie in (0, 1)");
  PhraseSample out;
  if (matches.empty()) return out;

  const std::size_t budget = masking_budget(length, budget_ratio);
  double top = matches[0].score;
  for (const auto& m : matches) top = std::max(top, m.score);
  std::vector<double> weight;
  std::vector<std::size_t> remaining;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    weight.push_back(std::exp(matches[i].score - top));
    remaining.push_back(i);
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t covered = 0;
  while (covered < budget && !remaining.empty()) {
    double total = 0.0;
    for (std::size_t r : remaining) total += weight[r];
    double u = unit(rng) * total;
    std::size_t pick = remaining.size() - 1;
    for (std::size_t k = 0; k < remaining.size(); ++k) {
      u -= weight[remaining[k]];
      if (u < 0.0) {
        pick = k;
        break;
      }
    }
    const std::size_t which = remaining[pick];
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
    const PhraseMatch& m = matches[which];
    std::vector<std::size_t> group;
    for (std::size_t p = m.start; p < m.end; ++p) group.push_back(p);
    covered += group.size();
    out.positions.insert(out.positions.end(), group.begin(), group.end());
    out.groups.push_back(std::move(group));
    out.match_indices.push_back(which);
  }
  std::sort(out.positions.begin(), out.positions.end());
  return out;
}

}  // namespace domlm
