#include "domlm/masking.hpp"

#include "domlm/errors.hpp"

#include <algorithm>
#include <numeric>

namespace domlm {

using Eigen::Index;

namespace {

// Picks `count` of `candidates` uniformly without replacement (partial Fisher-Yates).
std::vector<std::size_t> choose(std::vector<std::size_t> candidates, std::size_t count, Rng& rng) {
  count = std::min(count, candidates.size());
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[pick(rng)]);
  }
  candidates.resize(count);
  return candidates;
}

void perturb(MaskedExample& ex, int vocab_size, Rng& rng) {
  std::sort(ex.masked_positions.begin(), ex.masked_positions.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ex.perturbations.clear();
  for (std::size_t p : ex.masked_positions) {
    const double u = unit(rng);
    if (u < 0.8) {
      ex.input_ids[p] = kMaskId;
      ex.perturbations.push_back(Perturbation::mask);
    } else if (u < 0.9) {
      if (vocab_size > kFirstRegularId) {
        std::uniform_int_distribution<int> token(kFirstRegularId, vocab_size - 1);
        ex.input_ids[p] = token(rng);
      }
      ex.perturbations.push_back(Perturbation::random);
    } else {
      ex.perturbations.push_back(Perturbation::keep);
    }
  }
}

MaskedExample blank(const Document& doc, MaskMode mode) {
  if (doc.tokens.empty()) throw ContractError("cannot mask an empty document");
  MaskedExample ex;
  ex.input_ids = doc.tokens;
  ex.gold_ids = doc.tokens;
  ex.mode = mode;
  return ex;
}

std::size_t word_budget(std::size_t length) { return std::max<std::size_t>(1, masking_budget(length, kMaskRatio)); }

}  // namespace

const char* to_string(MaskMode mode) { return mode == MaskMode::word ? "word" : "phrase"; }

std::size_t MaskedBatch::masked_count() const {
  std::size_t n = 0;
  for (const auto& s : masked_index_sets) n += s.size();
  return n;
}

std::size_t MaskedBatch::group_count() const {
  std::size_t n = 0;
  for (const auto& g : phrase_groups) n += g.size();
  return n;
}

MaskedExample mask_words(const Document& doc, int vocab_size, Rng& rng) {
  MaskedExample ex = blank(doc, MaskMode::word);
  std::vector<std::size_t> all(doc.tokens.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  ex.masked_positions = choose(std::move(all), word_budget(doc.tokens.size()), rng);
  perturb(ex, vocab_size, rng);
  return ex;
}

MaskedExample mask_phrases(const Document& doc, const PhrasePool& pool, int vocab_size, Rng& rng) {
  MaskedExample ex = blank(doc, MaskMode::phrase);
  const auto matches = detect(doc, pool);
  PhraseSample sample = sample_phrase_tokens(doc.tokens.size(), matches, kMaskRatio, rng);

  ex.masked_positions = sample.positions;
  ex.phrase_groups = std::move(sample.groups);
  for (std::size_t m : sample.match_indices) ex.phrase_labels.push_back(matches[m].phrase_id);

  const std::size_t target = word_budget(doc.tokens.size());
  if (ex.masked_positions.size() < target) {
    std::vector<bool> taken(doc.tokens.size(), false);
    for (std::size_t p : ex.masked_positions) taken[p] = true;
    std::vector<std::size_t> free;
    for (std::size_t p = 0; p < doc.tokens.size(); ++p) {
      if (!taken[p]) free.push_back(p);
    }
    auto fill = choose(std::move(free), target - ex.masked_positions.size(), rng);
    ex.masked_positions.insert(ex.masked_positions.end(), fill.begin(), fill.end());
  }
  perturb(ex, vocab_size, rng);
  return ex;
}

MaskedExample mask_example(const Document& doc, MaskMode mode, const PhrasePool& pool, int vocab_size, Rng& rng) {
  return mode == MaskMode::word ? mask_words(doc, vocab_size, rng) : mask_phrases(doc, pool, vocab_size, rng);
}

IdMatrix pad_sequences(std::span<const std::vector<int>> sequences) {
  std::size_t longest = 0;
  for (const auto& s : sequences) longest = std::max(longest, s.size());
  IdMatrix ids = IdMatrix::Constant(static_cast<Index>(sequences.size()), static_cast<Index>(longest), kPadId);
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    for (std::size_t p = 0; p < sequences[b].size(); ++p) {
      ids(static_cast<Index>(b), static_cast<Index>(p)) = sequences[b][p];
    }
  }
  return ids;
}

MaskedBatch assemble(std::span<const MaskedExample> examples) {
  if (examples.empty()) throw ContractError("cannot assemble an empty batch");
  MaskedBatch batch;
  batch.mode = examples[0].mode;
  std::vector<std::vector<int>> inputs, golds;
  for (const auto& ex : examples) {
    if (ex.mode != batch.mode) throw ContractError("batch mixes word and phrase examples");
    inputs.push_back(ex.input_ids);
    golds.push_back(ex.gold_ids);
    batch.lengths.push_back(ex.input_ids.size());
    batch.masked_index_sets.push_back(ex.masked_positions);
    batch.phrase_groups.push_back(ex.phrase_groups);
    batch.phrase_labels.push_back(ex.phrase_labels);
  }
  batch.input_ids = pad_sequences(inputs);
  batch.gold_ids = pad_sequences(golds);
  return batch;
}

}  // namespace domlm
