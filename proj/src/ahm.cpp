#include "domlm/ahm.hpp"

#include "domlm/errors.hpp"
#include "domlm/ops.hpp"

#include <cmath>

namespace domlm {

namespace {

struct MaskedRows {
  std::vector<int> rows;
  std::vector<int> gold;
};

MaskedRows masked_rows(const MaskedBatch& batch) {
  MaskedRows out;
  const Index len = batch.seq_len();
  for (std::size_t b = 0; b < batch.masked_index_sets.size(); ++b) {
    for (std::size_t p : batch.masked_index_sets[b]) {
      out.rows.push_back(static_cast<int>(static_cast<Index>(b) * len + static_cast<Index>(p)));
      out.gold.push_back(batch.gold_ids(static_cast<Index>(b), static_cast<Index>(p)));
    }
  }
  return out;
}

Tensor token_nll(const MaskedBatch& batch, const Tensor& hidden, const ModelParams& params) {
  const MaskedRows m = masked_rows(batch);
  if (m.rows.empty()) throw ContractError("batch has no masked positions");
  return cross_entropy(token_logits_at(hidden, m.rows, params), m.gold);
}

}  // namespace

Tensor word_loss(const MaskedBatch& batch, const Tensor& hidden, const ModelParams& params) {
  if (batch.mode != MaskMode::word) throw ContractError("word_loss on a phrase-mode batch");
  return token_nll(batch, hidden, params);
}

PhraseLoss phrase_loss(const MaskedBatch& batch, const Tensor& hidden, const ModelParams& params) {
  if (batch.mode != MaskMode::phrase) throw ContractError("phrase_loss on a word-mode batch");
  PhraseLoss out;
  out.token_term = token_nll(batch, hidden, params);

  std::vector<std::vector<int>> groups;
  std::vector<int> labels;
  const Index len = batch.seq_len();
  for (std::size_t b = 0; b < batch.phrase_groups.size(); ++b) {
    const auto& gs = batch.phrase_groups[b];
    const auto& ls = batch.phrase_labels[b];
    if (ls.size() != gs.size()) throw ContractError("phrase group without a phrase label");
    for (std::size_t g = 0; g < gs.size(); ++g) {
      if (ls[g] < 0) throw ContractError("phrase group without a phrase label");
      std::vector<int> flat;
      for (std::size_t p : gs[g]) flat.push_back(static_cast<int>(static_cast<Index>(b) * len + static_cast<Index>(p)));
      groups.push_back(std::move(flat));
      labels.push_back(ls[g]);
    }
  }
  if (groups.empty()) {
    out.total = out.token_term;
    return out;
  }
  out.completeness = cross_entropy(phrase_logits(hidden, groups, params), labels);
  out.total = add(out.token_term, out.completeness);
  return out;
}

double fitting_progress(double first, double prev, double curr) {
  const double denom = first - curr;
  if (denom <= 1e-12) return 0.0;
  return std::max(prev - curr, 0.0) / denom;
}

MaskMode select_mode(double alpha) { return alpha > 0.5 ? MaskMode::word : MaskMode::phrase; }

double update_alpha(const SchedulerState& state, const SchedulerConfig& config) {
  if (config.force_alpha) return *config.force_alpha;
  if (state.iter + 1 <= config.warm_iters) return config.warm_alpha;
  const double eta_w = state.word.progress();
  const double eta_p = state.phrase.progress();
  if (eta_p == 0.0) return eta_w > 0.0 ? 1.0 : state.alpha;
  return std::tanh(eta_w / eta_p);
}

AdaptiveScheduler::AdaptiveScheduler(SchedulerConfig config, SchedulerState state)
    : config_(config), state_(state) {
  if (state_.iter == 0) state_.alpha = update_alpha(state_, config_);
}

void AdaptiveScheduler::reset() {
  state_ = {};
  state_.alpha = update_alpha(state_, config_);
}

MaskMode AdaptiveScheduler::next_mode() const {
  const long t = state_.iter + 1;
  if (!config_.force_alpha && t <= config_.warm_iters && config_.warm_phrase_every > 0 &&
      t % config_.warm_phrase_every == 0) {
    return MaskMode::phrase;
  }
  if (!config_.force_alpha && t > config_.warm_iters && config_.max_idle > 0) {
    if (t - state_.word_last > config_.max_idle) return MaskMode::word;
    if (t - state_.phrase_last > config_.max_idle) return MaskMode::phrase;
  }
  return select_mode(state_.alpha);
}

void AdaptiveScheduler::record(MaskMode mode, double loss) {
  LossHistory& h = mode == MaskMode::word ? state_.word : state_.phrase;
  if (!h.seen) {
    h = {true, loss, loss, loss};
  } else {
    h.prev = h.curr;
    h.curr = config_.smooth ? config_.ema_decay * h.curr + (1.0 - config_.ema_decay) * loss : loss;
  }
  ++state_.iter;
  (mode == MaskMode::word ? state_.word_last : state_.phrase_last) = state_.iter;
  state_.alpha = update_alpha(state_, config_);
}

}  // namespace domlm
