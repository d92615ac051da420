#pragma once

#include "domlm/encoder.hpp"
#include "domlm/masking.hpp"
#include "domlm/tensor.hpp"

#include <optional>

namespace domlm {

/// Mean NLL of gold tokens over every masked position (word mode).
Tensor word_loss(const MaskedBatch& batch, const Tensor& hidden, const ModelParams& params);

struct PhraseLoss {
  Tensor total;         // token_term + completeness (or token_term alone)
  Tensor token_term;    // mean token NLL over the masked positions
  Tensor completeness;  // mean phrase NLL over the groups; undefined when there are none
};

/// Token reconstruction plus the completeness regularizer over phrase groups.
PhraseLoss phrase_loss(const MaskedBatch& batch, const Tensor& hidden, const ModelParams& params);

/// Relative loss-reduction speed: max(prev - curr, 0) / (first - curr), 0 when
/// the denominator is <= 1e-12.
double fitting_progress(double first, double prev, double curr);

/// Word mode iff alpha > 0.5.
MaskMode select_mode(double alpha);

struct SchedulerConfig {
  long warm_iters = 1000;
  double warm_alpha = 0.6;
  /// During warm-up every k-th iteration runs phrase mode so both loss
  /// histories exist when the adaptive rule takes over. 0 disables.
  long warm_phrase_every = 5;
  /// After warm-up a mode idle for this many iterations runs once, so its
  /// loss history cannot freeze at zero progress forever. 0 disables.
  long max_idle = 3;
  bool smooth = true;
  double ema_decay = 0.9;
  /// Pins alpha for every iteration, warm-up included.
  std::optional<double> force_alpha;
};

/// Loss history of one mode. `curr` is the (optionally smoothed) latest loss.
struct LossHistory {
  bool seen = false;
  double first = 0.0;
  double prev = 0.0;
  double curr = 0.0;

  double progress() const { return seen ? fitting_progress(first, prev, curr) : 0.0; }
  friend bool operator==(const LossHistory&, const LossHistory&) = default;
};

struct SchedulerState {
  LossHistory word;
  LossHistory phrase;
  double alpha = 0.6;  // alpha for the upcoming iteration
  long iter = 0;       // completed iterations
  long word_last = 0;  // iteration each mode last ran, 0 = never
  long phrase_last = 0;
  friend bool operator==(const SchedulerState&, const SchedulerState&) = default;
};

/// alpha for iteration state.iter + 1: warm_alpha inside warm-up, otherwise
/// tanh(eta_w / eta_p), 1 when only eta_p is zero, unchanged when both are.
double update_alpha(const SchedulerState& state, const SchedulerConfig& config);

class AdaptiveScheduler {
 public:
  explicit AdaptiveScheduler(SchedulerConfig config = {}, SchedulerState state = {});

  /// Mode for the upcoming iteration.
  MaskMode next_mode() const;
  /// Feeds the loss of the mode that just ran, advances iter and alpha.
  void record(MaskMode mode, double loss);

  const SchedulerState& state() const { return state_; }
  const SchedulerConfig& config() const { return config_; }
  void reset();

 private:
  SchedulerConfig config_;
  SchedulerState state_;
};

}  // namespace domlm
