#pragma once

#include "domlm/masking.hpp"
#include "domlm/phrase_pool.hpp"
#include "domlm/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace domlm {

struct EncoderConfig {
  int layers = 2;
  int dim = 32;
  int heads = 2;
  int ffn_dim = 64;
  int max_seq_len = 128;
  int vocab_size = 0;
  int phrase_vocab_size = 0;

  int head_dim() const { return dim / heads; }
  /// Throws ContractError on non-positive sizes or dim % heads != 0.
  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct LayerParams {
  std::vector<Tensor> query, key, value;  // per head: dim x head_dim
  std::vector<Tensor> query_bias, key_bias, value_bias;
  Tensor out_proj, out_bias;
  Tensor attn_norm_gain, attn_norm_bias;
  Tensor ffn_in, ffn_in_bias, ffn_out, ffn_out_bias;
  Tensor ffn_norm_gain, ffn_norm_bias;
};

using NamedTensor = std::pair<std::string, Tensor>;

struct ModelParams {
  Tensor token_embedding;     // vocab_size x dim
  Tensor position_embedding;  // max_seq_len x dim
  Tensor embed_norm_gain, embed_norm_bias;
  std::vector<LayerParams> layers;
  Tensor token_softmax;   // dim x vocab_size
  Tensor phrase_softmax;  // dim x phrase_vocab_size

  /// Every parameter with a stable name, in a fixed order.
  std::vector<NamedTensor> named() const;
  std::vector<Tensor> all() const;
  void zero_grad() const;
};

/// normal(0, 0.02) matrices, zero biases, unit layer-norm gains.
ModelParams init_params(const EncoderConfig& config, Rng& rng);

/// Deep copy with fresh leaves.
ModelParams clone_params(const ModelParams& params);

/// Rebuilds parameters from named tensors; throws on missing names or shape drift.
ModelParams params_from_named(const EncoderConfig& config, const std::vector<NamedTensor>& named);

/// Optional attention capture: probs[layer][example][head] is L x L.
struct AttentionTrace {
  std::vector<std::vector<std::vector<RowMatrix>>> probs;
};

/// Contextual embeddings [B x L x dim]. PAD keys get an additive -inf before
/// the attention softmax.
Tensor forward(const IdMatrix& ids, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& pad_mask,
               const ModelParams& params, const EncoderConfig& config, AttentionTrace* trace = nullptr);

/// forward() with the pad mask taken from ids == PAD.
Tensor forward(const IdMatrix& ids, const ModelParams& params, const EncoderConfig& config,
               AttentionTrace* trace = nullptr);

/// Encodes one unpadded sequence to [len x dim].
Tensor encode_sequence(std::span<const int> ids, const ModelParams& params, const EncoderConfig& config);

/// hidden [B x L x dim] -> [B x L x vocab_size].
Tensor token_logits(const Tensor& hidden, const ModelParams& params);

/// Token logits for selected rows of the flattened (B*L) x dim hidden state.
Tensor token_logits_at(const Tensor& hidden, std::span<const int> flat_rows, const ModelParams& params);

/// One row of phrase logits per group; each group averages the hidden rows at
/// its flat (B*L) indices before the phrase softmax matrix.
Tensor phrase_logits(const Tensor& hidden, const std::vector<std::vector<int>>& groups, const ModelParams& params);

}  // namespace domlm
