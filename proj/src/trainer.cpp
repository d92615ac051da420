#include "domlm/trainer.hpp"

#include "domlm/cea_attention.hpp"
#include "domlm/errors.hpp"
#include "domlm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace domlm {

const char* to_string(CeaVariant variant) { return variant == CeaVariant::ot ? "ot" : "attention"; }

CeaVariant parse_cea_variant(const std::string& text) {
  if (text == "ot") return CeaVariant::ot;
  if (text == "attention") return CeaVariant::attention;
  throw ContractError("unknown CEA variant '" + text + "' (expected ot or attention)");
}

void TrainConfig::validate() const {
  if (stage1_epochs < 0 || stage2_epochs < 0) throw ContractError("epoch counts must be >= 0");
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ContractError("learning_rate must be positive");
  if (!(cea_weight >= 0.0)) throw ContractError("cea_weight must be >= 0");
  if (!(ipot.beta > 0.0) || ipot.outer_iters < 1 || ipot.inner_k < 1) throw ContractError("invalid IPOT settings");
  if (scheduler.warm_iters < 0 || scheduler.warm_phrase_every < 0 || scheduler.max_idle < 0) throw ContractError("invalid warm-up settings");
  if (scheduler.warm_alpha < 0.0 || scheduler.warm_alpha > 1.0) throw ContractError("warm_alpha must lie in [0, 1]");
  if (scheduler.force_alpha && (*scheduler.force_alpha < 0.0 || *scheduler.force_alpha > 1.0)) {
    throw ContractError("force_alpha must lie in [0, 1]");
  }
  if (!(scheduler.ema_decay >= 0.0 && scheduler.ema_decay < 1.0)) throw ContractError("ema_decay must lie in [0, 1)");
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j{{"stage1_epochs", c.stage1_epochs},
                           {"stage2_epochs", c.stage2_epochs},
                           {"batch_size", c.batch_size},
                           {"learning_rate", c.learning_rate},
                           {"cea_weight", c.cea_weight},
                           {"seed", c.seed},
                           {"beta", c.ipot.beta},
                           {"outer_iters", c.ipot.outer_iters},
                           {"inner_k", c.ipot.inner_k},
                           {"warm_iters", c.scheduler.warm_iters},
                           {"warm_alpha", c.scheduler.warm_alpha},
                           {"warm_phrase_every", c.scheduler.warm_phrase_every},
                           {"max_idle", c.scheduler.max_idle},
                           {"smooth_losses", c.scheduler.smooth},
                           {"ema_decay", c.scheduler.ema_decay},
                           {"cea_variant", to_string(c.cea_variant)}};
  if (c.scheduler.force_alpha) j["force_alpha"] = *c.scheduler.force_alpha;
  return j;
}

void adam_step(const std::vector<NamedTensor>& params, AdamState& state, double learning_rate) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter '" + name + "'");
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& [name, t] : params) {
      state.first_moment.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
      state.second_moment.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw ContractError("optimizer state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto values = p.mutable_data();
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    for (std::size_t k = 0; k < values.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      values[k] -= learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.eps);
    }
  }
}

namespace {

void put_optional(nlohmann::ordered_json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
}

}  // namespace

void TrainReport::write_jsonl(std::ostream& out) const {
  for (const auto& r : iterations) {
    nlohmann::ordered_json j{{"record", "iteration"},
                             {"iter", r.iter},
                             {"stage", r.stage},
                             {"mode", to_string(r.mode)},
                             {"alpha", r.alpha}};
    put_optional(j, "L_w", r.loss_word);
    put_optional(j, "L_p", r.loss_phrase);
    put_optional(j, "L_p_token", r.loss_phrase_token);
    put_optional(j, "L_p_completeness", r.loss_phrase_completeness);
    if (r.loss_cea) j[r.cea_variant == CeaVariant::ot ? "L_cea_ot" : "L_cea_triplet"] = *r.loss_cea;
    out << j.dump() << '\n';
  }
  for (const auto& e : epochs) {
    nlohmann::ordered_json j{{"record", "epoch"}, {"stage", e.stage}, {"epoch", e.epoch}};
    put_optional(j, "word_acc", e.word_accuracy);
    put_optional(j, "phrase_acc", e.phrase_accuracy);
    out << j.dump() << '\n';
  }
  out << nlohmann::ordered_json{{"record", "summary"}, {"wall_seconds", wall_seconds}}.dump() << '\n';
}

void TrainReport::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_jsonl(out);
}

TrainState init_train_state(const EncoderConfig& encoder, const TrainConfig& config) {
  config.validate();
  TrainState state;
  state.encoder = encoder;
  state.rng.seed(config.seed);
  state.params = init_params(encoder, state.rng);
  state.scheduler = AdaptiveScheduler(config.scheduler).state();
  return state;
}

Checkpoint to_checkpoint(const TrainState& state, const TrainConfig& config) {
  Checkpoint ck = model_checkpoint(state.encoder, state.params);
  ck.meta["train_config"] = to_json(config);
  auto history = [](const LossHistory& h) {
    return nlohmann::ordered_json{{"seen", h.seen}, {"first", h.first}, {"prev", h.prev}, {"curr", h.curr}};
  };
  ck.meta["scheduler"] = {{"alpha", state.scheduler.alpha},
                          {"iter", state.scheduler.iter},
                          {"word_last", state.scheduler.word_last},
                          {"phrase_last", state.scheduler.phrase_last},
                          {"word", history(state.scheduler.word)},
                          {"phrase", history(state.scheduler.phrase)}};
  std::ostringstream rng;
  rng << state.rng;
  ck.meta["trainer"] = {{"stage", state.stage},     {"epoch", state.epoch},
                        {"cursor", state.cursor},   {"iterations", state.iterations},
                        {"order", state.order},     {"rng", rng.str()},
                        {"adam_step", state.adam.step}};
  const auto named = state.params.named();
  for (std::size_t i = 0; i < state.adam.first_moment.size(); ++i) {
    const auto& shape = named[i].second.shape();
    ck.tensors.emplace_back("adam.m." + named[i].first, Tensor(shape, state.adam.first_moment[i]));
    ck.tensors.emplace_back("adam.v." + named[i].first, Tensor(shape, state.adam.second_moment[i]));
  }
  return ck;
}

TrainState state_from_checkpoint(const Checkpoint& ck) {
  TrainState state;
  state.params = params_from_checkpoint(ck, &state.encoder);
  if (ck.meta.contains("scheduler")) {
    const auto& s = ck.meta["scheduler"];
    auto history = [](const nlohmann::ordered_json& h) {
      return LossHistory{h.at("seen").get<bool>(), h.at("first").get<double>(), h.at("prev").get<double>(),
                         h.at("curr").get<double>()};
    };
    state.scheduler.alpha = s.at("alpha").get<double>();
    state.scheduler.iter = s.at("iter").get<long>();
    state.scheduler.word_last = s.at("word_last").get<long>();
    state.scheduler.phrase_last = s.at("phrase_last").get<long>();
    state.scheduler.word = history(s.at("word"));
    state.scheduler.phrase = history(s.at("phrase"));
  }
  if (ck.meta.contains("trainer")) {
    const auto& t = ck.meta["trainer"];
    state.stage = t.at("stage").get<int>();
    state.epoch = t.at("epoch").get<int>();
    state.cursor = t.at("cursor").get<std::size_t>();
    state.iterations = t.at("iterations").get<long>();
    state.order = t.at("order").get<std::vector<std::size_t>>();
    std::istringstream rng(t.at("rng").get<std::string>());
    rng >> state.rng;
    state.adam.step = t.at("adam_step").get<long>();
    if (state.adam.step > 0) {
      for (const auto& [name, p] : state.params.named()) {
        const auto m = ck.tensor("adam.m." + name).data();
        const auto v = ck.tensor("adam.v." + name).data();
        state.adam.first_moment.emplace_back(m.begin(), m.end());
        state.adam.second_moment.emplace_back(v.begin(), v.end());
      }
    }
  }
  return state;
}

namespace {

struct AhmPass {
  MaskMode mode = MaskMode::word;
  Tensor loss;
  IterationRecord record;
};

AhmPass ahm_pass(TrainState& state, const std::vector<const Document*>& docs, const PhrasePool& pool,
                 const AdaptiveScheduler& scheduler) {
  AhmPass pass;
  pass.mode = scheduler.next_mode();
  pass.record.mode = pass.mode;
  pass.record.alpha = scheduler.state().alpha;
  std::vector<MaskedExample> examples;
  examples.reserve(docs.size());
  for (const Document* d : docs) {
    examples.push_back(mask_example(*d, pass.mode, pool, state.encoder.vocab_size, state.rng));
  }
  const MaskedBatch batch = assemble(examples);
  const Tensor hidden = forward(batch.input_ids, state.params, state.encoder);
  if (pass.mode == MaskMode::word) {
    pass.loss = word_loss(batch, hidden, state.params);
    pass.record.loss_word = pass.loss.item();
  } else {
    PhraseLoss pl = phrase_loss(batch, hidden, state.params);
    pass.loss = pl.total;
    pass.record.loss_phrase = pl.total.item();
    pass.record.loss_phrase_token = pl.token_term.item();
    if (pl.completeness.defined()) pass.record.loss_phrase_completeness = pl.completeness.item();
  }
  return pass;
}

void optimize(TrainState& state, const Tensor& loss, const TrainConfig& config) {
  const auto named = state.params.named();
  for (auto& [name, t] : named) {
    Tensor h = t;
    h.zero_grad();
  }
  loss.backward();
  adam_step(named, state.adam, config.learning_rate);
}

// Shared epoch/batch bookkeeping for both stages. `step` consumes the item
// indices of one batch.
template <typename Step>
bool run_epochs(TrainState& state, std::size_t items, int epochs, const TrainConfig& config, const RunLimits& limits,
                TrainReport& report, Step&& step) {
  const auto started = std::chrono::steady_clock::now();
  long done = 0;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  bool finished = true;
  while (state.epoch < epochs) {
    if (state.order.empty()) {
      state.order.resize(items);
      std::iota(state.order.begin(), state.order.end(), std::size_t{0});
      std::shuffle(state.order.begin(), state.order.end(), state.rng);
      state.cursor = 0;
    }
    while (state.cursor < items) {
      if (limits.max_iterations && done >= *limits.max_iterations) {
        finished = false;
        break;
      }
      const std::size_t end = std::min(items, state.cursor + bs);
      std::vector<std::size_t> batch(state.order.begin() + static_cast<std::ptrdiff_t>(state.cursor),
                                     state.order.begin() + static_cast<std::ptrdiff_t>(end));
      IterationRecord rec = step(batch);
      state.cursor = end;
      ++state.iterations;
      ++done;
      rec.iter = state.iterations;
      rec.stage = state.stage;
      report.iterations.push_back(rec);
      if (limits.on_iteration) limits.on_iteration(rec);
    }
    if (!finished) break;
    state.order.clear();
    state.cursor = 0;
    ++state.epoch;
    if (limits.on_epoch) {
      EpochRecord e = limits.on_epoch(state);
      e.stage = state.stage;
      e.epoch = state.epoch;
      report.epochs.push_back(e);
    }
  }
  report.wall_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return finished;
}

}  // namespace

bool run_stage1(TrainState& state, const std::vector<Document>& corpus, const PhrasePool& pool,
                const TrainConfig& config, TrainReport& report, const RunLimits& limits) {
  config.validate();
  if (state.stage != 1) return true;
  if (corpus.empty()) throw ContractError("stage 1 needs a non-empty corpus");
  AdaptiveScheduler scheduler(config.scheduler, state.scheduler);
  return run_epochs(state, corpus.size(), config.stage1_epochs, config, limits, report,
                    [&](const std::vector<std::size_t>& idx) {
                      std::vector<const Document*> docs;
                      for (std::size_t i : idx) docs.push_back(&corpus[i]);
                      AhmPass pass = ahm_pass(state, docs, pool, scheduler);
                      optimize(state, pass.loss, config);
                      scheduler.record(pass.mode, pass.loss.item());
                      state.scheduler = scheduler.state();
                      return pass.record;
                    });
}

Tensor content_embeddings(const Document& doc, const ModelParams& params, const EncoderConfig& config) {
  Tensor hidden = encode_sequence(doc.tokens, params, config);
  std::vector<int> keep;
  for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
    if (doc.tokens[i] != kPadId && doc.tokens[i] != kClsId) keep.push_back(static_cast<int>(i));
  }
  if (keep.size() == doc.tokens.size()) return hidden;
  if (keep.empty()) throw ContractError("document has no content tokens");
  return gather_rows(hidden, keep);
}

namespace {

struct NegativeSampler {
  std::vector<std::string> entities;
  std::map<std::string, std::set<std::string>> associated;

  explicit NegativeSampler(const EntityPairSet& pairs) {
    for (const auto& [id, doc] : pairs.content) entities.push_back(id);
    std::sort(entities.begin(), entities.end());
    for (const auto& [a, b] : pairs.pairs) {
      associated[a].insert(b);
      associated[b].insert(a);
    }
  }

  const std::string* sample(const std::string& anchor, Rng& rng) const {
    const auto& linked = associated.at(anchor);
    auto eligible = [&](const std::string& e) { return e != anchor && !linked.contains(e); };
    std::uniform_int_distribution<std::size_t> pick(0, entities.size() - 1);
    for (int attempt = 0; attempt < 64; ++attempt) {
      const std::string& e = entities[pick(rng)];
      if (eligible(e)) return &e;
    }
    for (const auto& e : entities) {
      if (eligible(e)) return &e;
    }
    return nullptr;
  }
};

}  // namespace

bool run_stage2(TrainState& state, const EntityPairSet& pairs, const PhrasePool& pool, const TrainConfig& config,
                TrainReport& report, const RunLimits& limits) {
  config.validate();
  if (pairs.pairs.empty()) throw ContractError("stage 2 needs a non-empty pair set");
  if (state.stage == 1) {
    state.stage = 2;
    state.epoch = 0;
    state.cursor = 0;
    state.order.clear();
    if (config.reset_scheduler_for_stage2) state.scheduler = AdaptiveScheduler(config.scheduler).state();
  }
  AdaptiveScheduler scheduler(config.scheduler, state.scheduler);
  const NegativeSampler negatives(pairs);
  const CrossAttentionOptions attn{config.scaled_cross_attention};

  return run_epochs(state, pairs.pairs.size(), config.stage2_epochs, config, limits, report,
                    [&](const std::vector<std::size_t>& idx) {
                      std::vector<const Document*> docs;
                      for (std::size_t i : idx) {
                        docs.push_back(&pairs.doc(pairs.pairs[i].first));
                        docs.push_back(&pairs.doc(pairs.pairs[i].second));
                      }
                      AhmPass pass = ahm_pass(state, docs, pool, scheduler);
                      Tensor total = pass.loss;
                      if (!limits.disable_cea) {
                        std::optional<NoGradGuard> no_grad;
                        if (config.cea_weight == 0.0) no_grad.emplace();
                        Tensor cea;
                        for (std::size_t i : idx) {
                          const auto& [a, b] = pairs.pairs[i];
                          const Tensor x = content_embeddings(pairs.doc(a), state.params, state.encoder);
                          const Tensor y = content_embeddings(pairs.doc(b), state.params, state.encoder);
                          Tensor term;
                          if (config.cea_variant == CeaVariant::ot) {
                            term = cea_loss(x, y, config.ipot).loss;
                          } else {
                            const std::string* neg = negatives.sample(a, state.rng);
                            if (!neg) {
                              term = Tensor::scalar(0.0);
                            } else {
                              const Tensor yn = content_embeddings(pairs.doc(*neg), state.params, state.encoder);
                              term = triplet_loss(x, y, yn, attn);
                            }
                          }
                          cea = cea.defined() ? add(cea, term) : term;
                        }
                        cea = scale(cea, 1.0 / static_cast<double>(idx.size()));
                        pass.record.loss_cea = cea.item();
                        pass.record.cea_variant = config.cea_variant;
                        if (config.cea_weight > 0.0) total = add(total, scale(cea, config.cea_weight));
                      }
                      optimize(state, total, config);
                      scheduler.record(pass.mode, pass.loss.item());
                      state.scheduler = scheduler.state();
                      return pass.record;
                    });
}

PairAlignment align_documents(const Document& a, const Document& b, const ModelParams& params,
                              const EncoderConfig& config, CeaVariant variant, const IpotOptions& ipot_options,
                              bool scaled_cross_attention) {
  NoGradGuard no_grad;
  PairAlignment out;
  for (int t : a.tokens) {
    if (t != kPadId && t != kClsId) out.row_ids.push_back(t);
  }
  for (int t : b.tokens) {
    if (t != kPadId && t != kClsId) out.col_ids.push_back(t);
  }
  const Tensor x = content_embeddings(a, params, config);
  const Tensor y = content_embeddings(b, params, config);
  if (variant == CeaVariant::ot) {
    const Eigen::MatrixXd cost = cost_matrix(x, y).matrix();
    out.values = alignment_matrix(ipot(cost, ipot_options).values);
  } else {
    const Eigen::MatrixXd alpha = cross_attention(x, y, {scaled_cross_attention}).alpha.matrix();
    out.values = alpha;
  }
  return out;
}

Predictor model_predictor(const ModelParams& params, const EncoderConfig& config) {
  return [&params, config](const Document&, const std::vector<int>& input_ids,
                           const std::vector<std::size_t>& positions) {
    NoGradGuard no_grad;
    const Tensor hidden = encode_sequence(input_ids, params, config);
    std::vector<int> rows(positions.begin(), positions.end());
    const Tensor scores = matmul(gather_rows(hidden, rows), params.token_softmax);
    const auto logits = scores.matrix();
    std::vector<int> out;
    for (Index r = 0; r < logits.rows(); ++r) {
      Index best = 0;
      logits.row(r).maxCoeff(&best);
      out.push_back(static_cast<int>(best));
    }
    return out;
  };
}

std::vector<SpanAccuracy> eval_reconstruction(const Predictor& predictor, const std::vector<Document>& docs,
                                              const PhrasePool& pool, std::uint64_t seed, int max_span) {
  if (max_span < 1) throw ContractError("max_span must be >= 1");
  Rng rng(seed);
  std::vector<std::size_t> exact(static_cast<std::size_t>(max_span + 1), 0), seen(exact), tokens_ok(exact),
      tokens_seen(exact);
  auto score = [&](const Document& doc, std::vector<std::size_t> positions) {
    const auto k = positions.size();
    std::vector<int> input = doc.tokens;
    for (std::size_t p : positions) input[p] = kMaskId;
    const auto predicted = predictor(doc, input, positions);
    if (predicted.size() != k) throw ContractError("predictor returned the wrong number of tokens");
    std::size_t ok = 0;
    for (std::size_t i = 0; i < k; ++i) ok += predicted[i] == doc.tokens[positions[i]] ? 1 : 0;
    ++seen[k];
    exact[k] += ok == k ? 1 : 0;
    tokens_ok[k] += ok;
    tokens_seen[k] += k;
  };
  for (const Document& doc : docs) {
    if (doc.tokens.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, doc.tokens.size() - 1);
    score(doc, {pick(rng)});
    if (max_span < 2) continue;
    for (const PhraseMatch& m : detect(doc, pool)) {
      if (m.length() > static_cast<std::size_t>(max_span)) continue;
      std::vector<std::size_t> span(m.length());
      std::iota(span.begin(), span.end(), m.start);
      score(doc, std::move(span));
    }
  }
  std::vector<SpanAccuracy> table;
  for (int k = 1; k <= max_span; ++k) {
    const auto sk = static_cast<std::size_t>(k);
    SpanAccuracy row{k, seen[sk], std::nullopt, std::nullopt};
    if (seen[sk] > 0) {
      row.accuracy = static_cast<double>(exact[sk]) / static_cast<double>(seen[sk]);
      row.token_accuracy = static_cast<double>(tokens_ok[sk]) / static_cast<double>(tokens_seen[sk]);
    }
    table.push_back(row);
  }
  return table;
}

void write_accuracy_csv(std::ostream& out, const std::vector<SpanAccuracy>& table) {
  out << "span_len,n_examples,accuracy\n";
  for (const auto& row : table) {
    out << row.span_len << ',' << row.n_examples << ',';
    if (row.accuracy) {
      out << std::setprecision(6) << *row.accuracy;
    } else {
      out << "NA";
    }
    out << '\n';
  }
}

}  // namespace domlm
