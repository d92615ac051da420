#include "domlm/encoder.hpp"

#include "domlm/errors.hpp"
#include "domlm/ops.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <memory>

namespace domlm {

namespace {

using PadMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Tensor normal_matrix(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 0.02);
  Buffer data(static_cast<std::size_t>(rows * cols));
  for (double& v : data) v = dist(rng);
  return Tensor({rows, cols}, std::move(data), true);
}

Tensor zeros(Index n) { return Tensor::zeros({n}, true); }
Tensor ones(Index n) { return Tensor::full({n}, 1.0, true); }

// Rows of x are the flattened (batch * len) positions. Projections run on all
// rows at once; scores and mixing are per example.
Tensor attention_block(const Tensor& x, const LayerParams& layer, const EncoderConfig& config,
                       const std::vector<Tensor>& key_bias, Index len, std::vector<std::vector<RowMatrix>>* captured) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(config.head_dim()));
  const auto batch = key_bias.size();
  std::vector<std::vector<int>> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    rows[b].resize(static_cast<std::size_t>(len));
    for (Index j = 0; j < len; ++j) rows[b][static_cast<std::size_t>(j)] = static_cast<int>(static_cast<Index>(b) * len + j);
  }
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(config.heads));
  for (std::size_t h = 0; h < static_cast<std::size_t>(config.heads); ++h) {
    Tensor q = add(matmul(x, layer.query[h]), layer.query_bias[h]);
    Tensor k = add(matmul(x, layer.key[h]), layer.key_bias[h]);
    Tensor v = add(matmul(x, layer.value[h]), layer.value_bias[h]);
    std::vector<Tensor> mixed;
    mixed.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const bool whole = batch == 1;
      Tensor qb = whole ? q : gather_rows(q, rows[b]);
      Tensor kb = whole ? k : gather_rows(k, rows[b]);
      Tensor vb = whole ? v : gather_rows(v, rows[b]);
      Tensor probs = softmax(add(scale(matmul(qb, transpose(kb)), inv_sqrt), key_bias[b]));
      if (captured) (*captured)[b].push_back(probs.matrix());
      mixed.push_back(matmul(probs, vb));
    }
    heads.push_back(batch == 1 ? mixed[0] : concat_rows(mixed));
  }
  return add(matmul(concat_last(heads), layer.out_proj), layer.out_bias);
}

// ids and pad are row-major batch x len; returns [(batch * len) x dim].
Tensor encode_flat(std::span<const int> ids, std::span<const bool> pad, Index batch, Index len,
                   const ModelParams& params, const EncoderConfig& config, AttentionTrace* trace) {
  const Index rows = batch * len;
  std::vector<int> positions(static_cast<std::size_t>(rows));
  for (Index r = 0; r < rows; ++r) {
    const int id = ids[static_cast<std::size_t>(r)];
    if (id < 0 || id >= config.vocab_size) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
    positions[static_cast<std::size_t>(r)] = static_cast<int>(r % len);
  }
  std::vector<Tensor> key_bias;
  for (Index b = 0; b < batch; ++b) {
    Buffer bias(static_cast<std::size_t>(len), 0.0);
    for (Index j = 0; j < len; ++j) {
      if (pad[static_cast<std::size_t>(b * len + j)]) bias[static_cast<std::size_t>(j)] = -std::numeric_limits<double>::infinity();
    }
    key_bias.emplace_back(Shape{len}, std::move(bias));
  }

  Tensor x = add(gather_rows(params.token_embedding, ids), gather_rows(params.position_embedding, positions));
  x = layer_norm(x, params.embed_norm_gain, params.embed_norm_bias);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const LayerParams& layer = params.layers[l];
    auto* captured = trace ? &trace->probs[l] : nullptr;
    x = layer_norm(add(x, attention_block(x, layer, config, key_bias, len, captured)), layer.attn_norm_gain,
                   layer.attn_norm_bias);
    Tensor ff = add(matmul(gelu(add(matmul(x, layer.ffn_in), layer.ffn_in_bias)), layer.ffn_out), layer.ffn_out_bias);
    x = layer_norm(add(x, ff), layer.ffn_norm_gain, layer.ffn_norm_bias);
  }
  return x;
}

}  // namespace

void EncoderConfig::validate() const {
  if (layers < 1 || dim < 1 || heads < 1 || ffn_dim < 1 || max_seq_len < 1 || vocab_size < 1 ||
      phrase_vocab_size < 1) {
    throw ContractError("encoder sizes must all be >= 1");
  }
  if (dim % heads != 0) throw ContractError("dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
}

std::vector<NamedTensor> ModelParams::named() const {
  std::vector<NamedTensor> out{{"embed.token", token_embedding},
                               {"embed.position", position_embedding},
                               {"embed.norm.gain", embed_norm_gain},
                               {"embed.norm.bias", embed_norm_bias}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerParams& p = layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    for (std::size_t h = 0; h < p.query.size(); ++h) {
      const std::string hp = pre + "head" + std::to_string(h) + ".";
      out.emplace_back(hp + "query", p.query[h]);
      out.emplace_back(hp + "query_bias", p.query_bias[h]);
      out.emplace_back(hp + "key", p.key[h]);
      out.emplace_back(hp + "key_bias", p.key_bias[h]);
      out.emplace_back(hp + "value", p.value[h]);
      out.emplace_back(hp + "value_bias", p.value_bias[h]);
    }
    out.emplace_back(pre + "attn.out", p.out_proj);
    out.emplace_back(pre + "attn.out_bias", p.out_bias);
    out.emplace_back(pre + "attn.norm.gain", p.attn_norm_gain);
    out.emplace_back(pre + "attn.norm.bias", p.attn_norm_bias);
    out.emplace_back(pre + "ffn.in", p.ffn_in);
    out.emplace_back(pre + "ffn.in_bias", p.ffn_in_bias);
    out.emplace_back(pre + "ffn.out", p.ffn_out);
    out.emplace_back(pre + "ffn.out_bias", p.ffn_out_bias);
    out.emplace_back(pre + "ffn.norm.gain", p.ffn_norm_gain);
    out.emplace_back(pre + "ffn.norm.bias", p.ffn_norm_bias);
  }
  out.emplace_back("head.token", token_softmax);
  out.emplace_back("head.phrase", phrase_softmax);
  return out;
}

std::vector<Tensor> ModelParams::all() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

void ModelParams::zero_grad() const {
  for (auto& [name, t] : named()) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

ModelParams init_params(const EncoderConfig& config, Rng& rng) {
  config.validate();
  const Index d = config.dim, dh = config.head_dim();
  ModelParams p;
  p.token_embedding = normal_matrix(config.vocab_size, d, rng);
  p.position_embedding = normal_matrix(config.max_seq_len, d, rng);
  p.embed_norm_gain = ones(d);
  p.embed_norm_bias = zeros(d);
  for (int l = 0; l < config.layers; ++l) {
    LayerParams layer;
    for (int h = 0; h < config.heads; ++h) {
      layer.query.push_back(normal_matrix(d, dh, rng));
      layer.query_bias.push_back(zeros(dh));
      layer.key.push_back(normal_matrix(d, dh, rng));
      layer.key_bias.push_back(zeros(dh));
      layer.value.push_back(normal_matrix(d, dh, rng));
      layer.value_bias.push_back(zeros(dh));
    }
    layer.out_proj = normal_matrix(d, d, rng);
    layer.out_bias = zeros(d);
    layer.attn_norm_gain = ones(d);
    layer.attn_norm_bias = zeros(d);
    layer.ffn_in = normal_matrix(d, config.ffn_dim, rng);
    layer.ffn_in_bias = zeros(config.ffn_dim);
    layer.ffn_out = normal_matrix(config.ffn_dim, d, rng);
    layer.ffn_out_bias = zeros(d);
    layer.ffn_norm_gain = ones(d);
    layer.ffn_norm_bias = zeros(d);
    p.layers.push_back(std::move(layer));
  }
  p.token_softmax = normal_matrix(d, config.vocab_size, rng);
  p.phrase_softmax = normal_matrix(d, config.phrase_vocab_size, rng);
  return p;
}

ModelParams params_from_named(const EncoderConfig& config, const std::vector<NamedTensor>& named) {
  config.validate();
  Rng scratch(0);
  ModelParams p = init_params(config, scratch);
  std::map<std::string, const Tensor*> lookup;
  for (const auto& [name, t] : named) lookup[name] = &t;
  for (auto& [name, slot] : p.named()) {
    auto it = lookup.find(name);
    if (it == lookup.end()) throw ContractError("missing parameter '" + name + "'");
    if (it->second->shape() != slot.shape()) {
      throw DimensionError("parameter '" + name + "' has shape " + shape_string(it->second->shape()) + ", expected " +
                           shape_string(slot.shape()));
    }
    Tensor target = slot;
    auto dst = target.mutable_data();
    const auto src = it->second->data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return p;
}

ModelParams clone_params(const ModelParams& params) {
  ModelParams p = params;
  auto copy = [](Tensor& t) { t = t.clone(true); };
  copy(p.token_embedding);
  copy(p.position_embedding);
  copy(p.embed_norm_gain);
  copy(p.embed_norm_bias);
  for (auto& l : p.layers) {
    for (auto* v : {&l.query, &l.key, &l.value, &l.query_bias, &l.key_bias, &l.value_bias}) {
      for (auto& t : *v) copy(t);
    }
    for (Tensor* t : {&l.out_proj, &l.out_bias, &l.attn_norm_gain, &l.attn_norm_bias, &l.ffn_in, &l.ffn_in_bias,
                      &l.ffn_out, &l.ffn_out_bias, &l.ffn_norm_gain, &l.ffn_norm_bias}) {
      copy(*t);
    }
  }
  copy(p.token_softmax);
  copy(p.phrase_softmax);
  return p;
}

Tensor forward(const IdMatrix& ids, const PadMask& pad_mask, const ModelParams& params, const EncoderConfig& config,
               AttentionTrace* trace) {
  const Index batch = ids.rows(), len = ids.cols();
  if (pad_mask.rows() != batch || pad_mask.cols() != len) throw DimensionError("pad mask does not match ids");
  if (len > config.max_seq_len) {
    throw IndexError("sequence length " + std::to_string(len) + " exceeds max_seq_len " +
                     std::to_string(config.max_seq_len));
  }
  if (batch == 0 || len == 0) throw ContractError("forward on an empty batch");
  if (trace) {
    trace->probs.assign(params.layers.size(), std::vector<std::vector<RowMatrix>>(static_cast<std::size_t>(batch)));
  }
  Tensor flat = encode_flat(std::span<const int>(ids.data(), static_cast<std::size_t>(ids.size())),
                            std::span<const bool>(pad_mask.data(), static_cast<std::size_t>(pad_mask.size())), batch,
                            len, params, config, trace);
  return reshape(flat, {batch, len, config.dim});
}

Tensor forward(const IdMatrix& ids, const ModelParams& params, const EncoderConfig& config, AttentionTrace* trace) {
  PadMask pad = (ids.array() == kPadId);
  return forward(ids, pad, params, config, trace);
}

Tensor encode_sequence(std::span<const int> ids, const ModelParams& params, const EncoderConfig& config) {
  if (ids.empty()) throw ContractError("encode_sequence on an empty sequence");
  if (static_cast<int>(ids.size()) > config.max_seq_len) throw IndexError("sequence longer than max_seq_len");
  const auto mask = std::make_unique<bool[]>(ids.size());
  return encode_flat(ids, std::span<const bool>(mask.get(), ids.size()), 1, static_cast<Index>(ids.size()), params,
                     config, nullptr);
}

Tensor token_logits(const Tensor& hidden, const ModelParams& params) {
  if (hidden.rank() != 3) throw DimensionError("token_logits expects [B x L x dim], got " + shape_string(hidden.shape()));
  const Index b = hidden.dim(0), l = hidden.dim(1), d = hidden.dim(2);
  Tensor logits = matmul(reshape(hidden, {b * l, d}), params.token_softmax);
  return reshape(logits, {b, l, params.token_softmax.dim(1)});
}

Tensor token_logits_at(const Tensor& hidden, std::span<const int> flat_rows, const ModelParams& params) {
  const Index d = hidden.dim(-1);
  Tensor flat = reshape(hidden, {hidden.numel() / d, d});
  return matmul(gather_rows(flat, flat_rows), params.token_softmax);
}

Tensor phrase_logits(const Tensor& hidden, const std::vector<std::vector<int>>& groups, const ModelParams& params) {
  if (groups.empty()) throw ContractError("phrase_logits: no groups");
  const Index d = hidden.dim(-1);
  std::vector<int> members;
  for (const auto& g : groups) {
    if (g.empty()) throw ContractError("phrase_logits: empty phrase group");
    members.insert(members.end(), g.begin(), g.end());
  }
  RowMatrix averaging = RowMatrix::Zero(static_cast<Index>(groups.size()), static_cast<Index>(members.size()));
  Index col = 0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const double w = 1.0 / static_cast<double>(groups[i].size());
    for (std::size_t k = 0; k < groups[i].size(); ++k) averaging(static_cast<Index>(i), col++) = w;
  }
  Tensor flat = reshape(hidden, {hidden.numel() / d, d});
  Tensor merged = matmul(Tensor::from_matrix(averaging), gather_rows(flat, members));
  return matmul(merged, params.phrase_softmax);
}

}  // namespace domlm
