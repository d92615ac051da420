#pragma once

#include "domlm/corpus.hpp"
#include "domlm/phrase_pool.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <vector>

namespace domlm {

using IdMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class MaskMode { word, phrase };

const char* to_string(MaskMode mode);

/// What happened to a selected position.
enum class Perturbation : unsigned char { mask, random, keep };

inline constexpr double kMaskRatio = 0.15;

struct MaskedExample {
  std::vector<int> input_ids;
  std::vector<int> gold_ids;
  std::vector<std::size_t> masked_positions;  // ascending
  std::vector<Perturbation> perturbations;    // aligned with masked_positions
  std::vector<std::vector<std::size_t>> phrase_groups;
  std::vector<int> phrase_labels;  // aligned with phrase_groups
  MaskMode mode = MaskMode::word;
};

struct MaskedBatch {
  IdMatrix input_ids;  // B x L, PAD beyond each example's length
  IdMatrix gold_ids;
  std::vector<std::size_t> lengths;
  std::vector<std::vector<std::size_t>> masked_index_sets;
  std::vector<std::vector<std::vector<std::size_t>>> phrase_groups;
  std::vector<std::vector<int>> phrase_labels;
  MaskMode mode = MaskMode::word;

  Eigen::Index batch_size() const { return input_ids.rows(); }
  Eigen::Index seq_len() const { return input_ids.cols(); }
  std::size_t masked_count() const;
  std::size_t group_count() const;
};

/// max(1, ceil(0.15 * length)) positions, uniformly without replacement,
/// then 80% MASK / 10% random regular token / 10% unchanged per position.
MaskedExample mask_words(const Document& doc, int vocab_size, Rng& rng);

/// Phrase-mode masking. Falls back to word-mode sampling for any shortfall
/// against the word-mode budget; fill positions carry no phrase group.
MaskedExample mask_phrases(const Document& doc, const PhrasePool& pool, int vocab_size, Rng& rng);

MaskedExample mask_example(const Document& doc, MaskMode mode, const PhrasePool& pool, int vocab_size, Rng& rng);

/// Pads to the longest example. All examples must share a mode.
MaskedBatch assemble(std::span<const MaskedExample> examples);

/// Pads raw token sequences into a B x L id matrix.
IdMatrix pad_sequences(std::span<const std::vector<int>> sequences);

}  // namespace domlm
