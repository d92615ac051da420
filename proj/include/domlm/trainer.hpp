#pragma once

#include "domlm/ahm.hpp"
#include "domlm/checkpoint.hpp"
#include "domlm/corpus.hpp"
#include "domlm/encoder.hpp"
#include "domlm/ot.hpp"
#include "domlm/phrase_pool.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace domlm {

enum class CeaVariant { ot, attention };

const char* to_string(CeaVariant variant);
CeaVariant parse_cea_variant(const std::string& text);

struct TrainConfig {
  int stage1_epochs = 10;
  int stage2_epochs = 10;
  int batch_size = 8;
  double learning_rate = 1e-5;
  double cea_weight = 1.0;
  std::uint64_t seed = 0;
  IpotOptions ipot{0.5, 50, 1};
  SchedulerConfig scheduler;
  CeaVariant cea_variant = CeaVariant::ot;
  bool scaled_cross_attention = false;
  /// Stage 2 starts from a fresh scheduler instead of continuing stage 1's.
  bool reset_scheduler_for_stage2 = false;

  void validate() const;
};

nlohmann::ordered_json to_json(const TrainConfig& config);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> first_moment;  // aligned with ModelParams::named()
  std::vector<std::vector<double>> second_moment;
};

/// Bias-corrected Adam without weight decay, in parameter order. A non-finite
/// gradient aborts with a NumericalError naming the parameter, before any
/// parameter is touched.
void adam_step(const std::vector<NamedTensor>& params, AdamState& state, double learning_rate);

struct IterationRecord {
  long iter = 0;
  int stage = 1;
  MaskMode mode = MaskMode::word;
  std::optional<double> loss_word;
  std::optional<double> loss_phrase;
  std::optional<double> loss_phrase_token;
  std::optional<double> loss_phrase_completeness;
  std::optional<double> loss_cea;
  CeaVariant cea_variant = CeaVariant::ot;
  double alpha = 0.0;  // alpha the iteration ran with
};

struct EpochRecord {
  int stage = 1;
  int epoch = 0;
  std::optional<double> word_accuracy;
  std::optional<double> phrase_accuracy;
};

struct TrainReport {
  std::vector<IterationRecord> iterations;
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;

  /// One JSON object per line, stable key order.
  void write_jsonl(std::ostream& out) const;
  void write_jsonl(const std::filesystem::path& path) const;
};

struct TrainState {
  EncoderConfig encoder;
  ModelParams params;
  AdamState adam;
  SchedulerState scheduler;
  Rng rng;
  int stage = 1;
  int epoch = 0;  // within the current stage
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  long iterations = 0;
};

TrainState init_train_state(const EncoderConfig& encoder, const TrainConfig& config);

Checkpoint to_checkpoint(const TrainState& state, const TrainConfig& config);
TrainState state_from_checkpoint(const Checkpoint& checkpoint);

/// Called after every iteration; progress lines in the CLI hang off this.
using IterationCallback = std::function<void(const IterationRecord&)>;

struct RunLimits {
  /// Stop after this many iterations in this call (the state stays resumable).
  std::optional<long> max_iterations;
  IterationCallback on_iteration;
  /// Evaluated at the end of every epoch when set.
  std::function<EpochRecord(const TrainState&)> on_epoch;
  /// Skip the alignment term entirely (used to check the lambda = 0 ablation).
  bool disable_cea = false;
};

/// AHM-only training over the corpus. Returns true when the stage finished.
bool run_stage1(TrainState& state, const std::vector<Document>& corpus, const PhrasePool& pool,
                const TrainConfig& config, TrainReport& report, const RunLimits& limits = {});

/// Joint AHM + lambda * CEA training over associated pairs.
bool run_stage2(TrainState& state, const EntityPairSet& pairs, const PhrasePool& pool, const TrainConfig& config,
                TrainReport& report, const RunLimits& limits = {});

/// Encoder output for a document with special tokens dropped.
Tensor content_embeddings(const Document& doc, const ModelParams& params, const EncoderConfig& config);

/// Alignment between two documents' content tokens. Returns the
/// row-normalized matrix plus the surviving token ids for labels.
struct PairAlignment {
  Eigen::MatrixXd values;
  std::vector<int> row_ids;
  std::vector<int> col_ids;
};

PairAlignment align_documents(const Document& a, const Document& b, const ModelParams& params,
                              const EncoderConfig& config, CeaVariant variant, const IpotOptions& ipot,
                              bool scaled_cross_attention = false);

// Reconstruction evaluation.

/// Returns a prediction for each position in `positions`.
using Predictor = std::function<std::vector<int>(const Document& doc, const std::vector<int>& input_ids,
                                                 const std::vector<std::size_t>& positions)>;

Predictor model_predictor(const ModelParams& params, const EncoderConfig& config);

struct SpanAccuracy {
  int span_len = 0;
  std::size_t n_examples = 0;
  std::optional<double> accuracy;        // exact match; absent when n_examples == 0
  std::optional<double> token_accuracy;  // per-token accuracy over the same spans
};

/// Span length 1 masks one random word per document; longer lengths mask each
/// detected pool phrase of that length on its own. Masked positions are
/// replaced by MASK.
std::vector<SpanAccuracy> eval_reconstruction(const Predictor& predictor, const std::vector<Document>& docs,
                                              const PhrasePool& pool, std::uint64_t seed, int max_span = 4);

/// span_len,n_examples,accuracy with NA for absent lengths.
void write_accuracy_csv(std::ostream& out, const std::vector<SpanAccuracy>& table);

}  // namespace domlm
