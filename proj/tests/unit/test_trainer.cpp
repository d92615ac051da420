#include "domlm/errors.hpp"
#include "domlm/ops.hpp"
#include "domlm/trainer.hpp"
#include "synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace domlm;

namespace {

struct PhraseFixture {
  Vocab vocab;
  std::vector<Document> docs;
  PhrasePool pool;
};

PhraseFixture phrase_fixture(std::uint64_t seed, std::size_t sentences) {
  const auto dir = testing::scratch_dir("trainer_phrase_" + std::to_string(seed));
  const auto corpus = testing::make_phrase_corpus(seed, sentences);
  testing::write_lines(dir / "c.txt", corpus.sentences);
  testing::write_pool(dir / "p.tsv", corpus.pool);
  PhraseFixture f{build_vocab(dir / "c.txt", 1), {}, {}};
  f.docs = load_corpus(dir / "c.txt", f.vocab, 128);
  f.pool = load_pool(dir / "p.tsv", f.vocab);
  return f;
}

struct PairFixture {
  Vocab vocab;
  EntityPairSet pairs;
  PhrasePool pool;
};

PairFixture pair_fixture(std::uint64_t seed, std::size_t n) {
  const auto dir = testing::scratch_dir("trainer_pairs_" + std::to_string(seed));
  const auto corpus = testing::make_pair_corpus(seed, n);
  std::vector<std::string> texts;
  for (const auto& [id, text] : corpus.content) texts.push_back(text);
  testing::write_lines(dir / "c.txt", texts);
  testing::write_tsv(dir / "content.tsv", corpus.content);
  testing::write_tsv(dir / "pairs.tsv", corpus.pairs);
  PairFixture f{build_vocab(dir / "c.txt", 1), {}, {}};
  f.pairs = load_entity_pairs(dir / "pairs.tsv", dir / "content.tsv", f.vocab);
  return f;
}

EncoderConfig small_encoder(const Vocab& vocab, const PhrasePool& pool) {
  EncoderConfig c;
  c.layers = 1;
  c.dim = 16;
  c.heads = 2;
  c.ffn_dim = 32;
  c.vocab_size = vocab.size();
  c.phrase_vocab_size = std::max<int>(1, static_cast<int>(pool.size()));
  return c;
}

TrainConfig small_train(std::uint64_t seed) {
  TrainConfig t;
  t.stage1_epochs = 1;
  t.stage2_epochs = 0;
  t.batch_size = 8;
  t.learning_rate = 1e-2;
  t.seed = seed;
  t.scheduler.warm_iters = 20;
  return t;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  const auto na = a.named(), nb = b.named();
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    const auto x = na[i].second.data(), y = nb[i].second.data();
    if (na[i].first != nb[i].first || !std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

std::string report_text(const TrainReport& r) {
  std::ostringstream out;
  TrainReport copy = r;
  copy.wall_seconds = 0.0;
  copy.write_jsonl(out);
  return out.str();
}

}  // namespace

TEST_CASE("adam leaves parameters alone under a zero gradient") {
  Tensor p({3}, {1.0, -2.0, 0.5}, true);
  Tensor zero = mul(p, Tensor::zeros({3}));
  sum(zero).backward();
  AdamState state;
  adam_step({{"p", p}}, state, 0.1);
  CHECK(std::vector<double>(p.data().begin(), p.data().end()) == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adam first step moves each coordinate by lr against the gradient sign") {
  Tensor p({4}, {1.0, -2.0, 0.5, 3.0}, true);
  const std::vector<double> w{2.0, -0.3, 1e-3, -50.0};
  sum(mul(p, Tensor({4}, w))).backward();
  AdamState state;
  adam_step({{"p", p}}, state, 0.01);
  const std::vector<double> before{1.0, -2.0, 0.5, 3.0};
  for (std::size_t i = 0; i < 4; ++i) {
    const double expect = before[i] - 0.01 * std::abs(w[i]) / (std::abs(w[i]) + 1e-8) * (w[i] > 0 ? 1.0 : -1.0);
    CHECK(p.data()[i] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(state.step == 1);
}

TEST_CASE("adam rejects a non-finite gradient before touching anything") {
  Tensor a({2}, {1.0, 2.0}, true), b({2}, {3.0, 4.0}, true);
  sum(add(a, mul(b, Tensor({2}, {1.0, std::numeric_limits<double>::infinity()})))).backward();
  AdamState state;
  try {
    adam_step({{"a", a}, {"b", b}}, state, 0.1);
    FAIL("expected a NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("'b'") != std::string::npos);
  }
  CHECK(a.data()[0] == 1.0);
  CHECK(state.step == 0);
}

TEST_CASE("stage 1 bookkeeping and the warm-up alpha trace") {
  const PhraseFixture f = phrase_fixture(1, 100);
  TrainConfig cfg = small_train(3);
  cfg.stage1_epochs = 2;
  cfg.batch_size = 7;
  TrainState st = init_train_state(small_encoder(f.vocab, f.pool), cfg);
  TrainReport report;
  CHECK(run_stage1(st, f.docs, f.pool, cfg, report));
  const long per_epoch = (static_cast<long>(f.docs.size()) + 6) / 7;
  CHECK(st.iterations == 2 * per_epoch);
  REQUIRE(report.iterations.size() == static_cast<std::size_t>(2 * per_epoch));
  for (std::size_t i = 0; i < report.iterations.size(); ++i) {
    const IterationRecord& r = report.iterations[i];
    CHECK(r.iter == static_cast<long>(i + 1));
    CHECK(r.loss_word.has_value() != r.loss_phrase.has_value());
    CHECK(r.loss_word.has_value() == (r.mode == MaskMode::word));
    CHECK_FALSE(r.loss_cea.has_value());
    if (r.iter <= cfg.scheduler.warm_iters) CHECK(r.alpha == 0.6);
  }

  TrainState empty = init_train_state(small_encoder(f.vocab, f.pool), cfg);
  CHECK_THROWS_AS(run_stage1(empty, {}, f.pool, cfg, report), ContractError);
}

TEST_CASE("identical seeds give bitwise-identical runs") {
  const PhraseFixture f = phrase_fixture(2, 80);
  const TrainConfig cfg = small_train(5);
  auto run = [&] {
    TrainState st = init_train_state(small_encoder(f.vocab, f.pool), cfg);
    TrainReport report;
    run_stage1(st, f.docs, f.pool, cfg, report);
    return std::pair{std::move(st), std::move(report)};
  };
  const auto [a, ra] = run();
  const auto [b, rb] = run();
  CHECK(same_params(a.params, b.params));
  CHECK(report_text(ra) == report_text(rb));

  TrainConfig other = cfg;
  other.seed = 6;
  TrainState c = init_train_state(small_encoder(f.vocab, f.pool), other);
  TrainReport rc;
  run_stage1(c, f.docs, f.pool, other, rc);
  CHECK_FALSE(same_params(a.params, c.params));
}

TEST_CASE("resuming from a checkpoint matches the uninterrupted run") {
  const PhraseFixture f = phrase_fixture(3, 160);
  TrainConfig cfg = small_train(9);
  cfg.stage1_epochs = 10;
  const EncoderConfig enc = small_encoder(f.vocab, f.pool);

  TrainState straight = init_train_state(enc, cfg);
  TrainReport r1;
  RunLimits limits;
  limits.max_iterations = 130;
  run_stage1(straight, f.docs, f.pool, cfg, r1, limits);

  TrainState first = init_train_state(enc, cfg);
  TrainReport r2;
  limits.max_iterations = 30;
  CHECK_FALSE(run_stage1(first, f.docs, f.pool, cfg, r2, limits));
  const auto path = testing::scratch_dir("trainer_resume") / "ck.bin";
  save_checkpoint(path, to_checkpoint(first, cfg));
  TrainState resumed = state_from_checkpoint(load_checkpoint(path));
  limits.max_iterations = 100;
  run_stage1(resumed, f.docs, f.pool, cfg, r2, limits);

  CHECK(resumed.iterations == 130);
  CHECK(same_params(straight.params, resumed.params));
  CHECK(straight.scheduler == resumed.scheduler);
  CHECK(straight.adam.step == resumed.adam.step);
  CHECK(report_text(r1) == report_text(r2));
}

TEST_CASE("forcing alpha to one runs word mode only") {
  const PhraseFixture f = phrase_fixture(4, 120);
  TrainConfig cfg = small_train(2);
  cfg.stage1_epochs = 2;
  cfg.scheduler.force_alpha = 1.0;
  TrainState st = init_train_state(small_encoder(f.vocab, f.pool), cfg);
  TrainReport report;
  run_stage1(st, f.docs, f.pool, cfg, report);
  for (const auto& r : report.iterations) {
    CHECK(r.mode == MaskMode::word);
    CHECK(r.alpha == 1.0);
  }
  CHECK_FALSE(st.scheduler.phrase.seen);
}

TEST_CASE("both smoothed losses are lower at stage end than at warm-up exit") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const PhraseFixture f = phrase_fixture(10 + seed, 300);
    TrainConfig cfg = small_train(seed);
    cfg.stage1_epochs = 12;
    cfg.scheduler.warm_iters = 60;
    TrainState st = init_train_state(small_encoder(f.vocab, f.pool), cfg);
    TrainReport report;
    RunLimits warm;
    warm.max_iterations = cfg.scheduler.warm_iters;
    run_stage1(st, f.docs, f.pool, cfg, report, warm);
    const SchedulerState at_exit = st.scheduler;
    REQUIRE(at_exit.word.seen);
    REQUIRE(at_exit.phrase.seen);
    run_stage1(st, f.docs, f.pool, cfg, report);
    CHECK_MESSAGE(st.scheduler.word.curr < at_exit.word.curr, "seed " << seed);
    CHECK_MESSAGE(st.scheduler.phrase.curr < at_exit.phrase.curr, "seed " << seed);
  }
}

TEST_CASE("stage 2 with zero alignment weight reproduces the AHM-only dynamics") {
  const PairFixture f = pair_fixture(1, 40);
  TrainConfig cfg = small_train(4);
  cfg.stage1_epochs = 0;
  cfg.stage2_epochs = 2;
  cfg.cea_weight = 0.0;
  const EncoderConfig enc = small_encoder(f.vocab, f.pool);

  TrainState weighted = init_train_state(enc, cfg);
  TrainReport rw;
  run_stage2(weighted, f.pairs, f.pool, cfg, rw);

  TrainState skipped = init_train_state(enc, cfg);
  TrainReport rs;
  RunLimits off;
  off.disable_cea = true;
  run_stage2(skipped, f.pairs, f.pool, cfg, rs, off);

  CHECK(same_params(weighted.params, skipped.params));
  REQUIRE(rw.iterations.size() == rs.iterations.size());
  for (std::size_t i = 0; i < rw.iterations.size(); ++i) {
    CHECK(rw.iterations[i].loss_cea.has_value());
    CHECK_FALSE(rs.iterations[i].loss_cea.has_value());
    CHECK(rw.iterations[i].stage == 2);
  }

  TrainState empty = init_train_state(enc, cfg);
  CHECK_THROWS_AS(run_stage2(empty, EntityPairSet{}, f.pool, cfg, rs), ContractError);
}

TEST_CASE("alignment loss falls during stage 2") {
  const PairFixture f = pair_fixture(2, 60);
  TrainConfig cfg = small_train(8);
  cfg.stage1_epochs = 0;
  cfg.stage2_epochs = 6;
  cfg.batch_size = 6;
  TrainState st = init_train_state(small_encoder(f.vocab, f.pool), cfg);
  TrainReport report;
  run_stage2(st, f.pairs, f.pool, cfg, report);
  const std::size_t per_epoch = (f.pairs.size() + 5) / 6;
  REQUIRE(report.iterations.size() == 6 * per_epoch);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < per_epoch; ++i) {
    first += *report.iterations[i].loss_cea;
    last += *report.iterations[report.iterations.size() - per_epoch + i].loss_cea;
  }
  CHECK(last <= 0.9 * first);
}

TEST_CASE("attention variant records triplet losses") {
  const PairFixture f = pair_fixture(3, 20);
  TrainConfig cfg = small_train(1);
  cfg.stage1_epochs = 0;
  cfg.stage2_epochs = 1;
  cfg.cea_variant = CeaVariant::attention;
  TrainState st = init_train_state(small_encoder(f.vocab, f.pool), cfg);
  TrainReport report;
  run_stage2(st, f.pairs, f.pool, cfg, report);
  for (const auto& r : report.iterations) {
    CHECK(r.cea_variant == CeaVariant::attention);
    CHECK(*r.loss_cea >= 0.0);
  }
  std::ostringstream out;
  report.write_jsonl(out);
  CHECK(out.str().find("\"L_cea_triplet\"") != std::string::npos);
  CHECK(out.str().find("\"L_cea_ot\"") == std::string::npos);
}

TEST_CASE("self-alignment is near-diagonal") {
  const PairFixture f = pair_fixture(4, 10);
  TrainConfig cfg = small_train(1);
  TrainState st = init_train_state(small_encoder(f.vocab, f.pool), cfg);
  const Document& doc = f.pairs.doc(f.pairs.pairs.front().first);
  const PairAlignment a = align_documents(doc, doc, st.params, st.encoder, CeaVariant::ot, {0.5, 2000, 1});
  Index hits = 0;
  for (Index i = 0; i < a.values.rows(); ++i) {
    Index best = 0;
    a.values.row(i).maxCoeff(&best);
    hits += best == i ? 1 : 0;
    CHECK(std::abs(a.values.row(i).sum() - 1.0) <= 1e-9);
  }
  CHECK(static_cast<double>(hits) >= 0.9 * static_cast<double>(a.values.rows()));
}

TEST_CASE("reconstruction evaluation against oracle predictors") {
  const PhraseFixture f = phrase_fixture(5, 400);
  const Predictor gold = [](const Document& doc, const std::vector<int>&, const std::vector<std::size_t>& positions) {
    std::vector<int> out;
    for (std::size_t p : positions) out.push_back(doc.tokens[p]);
    return out;
  };
  const auto perfect = eval_reconstruction(gold, f.docs, f.pool, 1, 4);
  REQUIRE(perfect.size() == 4);
  for (const auto& row : perfect) {
    if (row.n_examples > 0) CHECK(*row.accuracy == 1.0);
  }
  CHECK(perfect[0].n_examples == f.docs.size());

  const int v = f.vocab.size();
  std::mt19937_64 rng(3);
  const Predictor chance = [&](const Document&, const std::vector<int>&, const std::vector<std::size_t>& positions) {
    std::uniform_int_distribution<int> pick(0, v - 1);
    std::vector<int> out;
    for (std::size_t i = 0; i < positions.size(); ++i) out.push_back(pick(rng));
    return out;
  };
  const auto random = eval_reconstruction(chance, f.docs, f.pool, 2, 4);
  const double n = static_cast<double>(random[0].n_examples), p = 1.0 / v;
  CHECK(std::abs(*random[0].accuracy - p) <= 3.0 * std::sqrt(p * (1 - p) / n));
  for (const auto& row : random) {
    if (row.accuracy) CHECK(*row.accuracy <= *row.token_accuracy);
  }

  const auto again = eval_reconstruction(gold, f.docs, f.pool, 1, 4);
  for (std::size_t k = 0; k < 4; ++k) CHECK(again[k].n_examples == perfect[k].n_examples);
}

TEST_CASE("accuracy table marks absent lengths") {
  std::ostringstream out;
  write_accuracy_csv(out, {{1, 10, 0.5, 0.5}, {2, 0, std::nullopt, std::nullopt}});
  CHECK(out.str() == "span_len,n_examples,accuracy\n1,10,0.5\n2,0,NA\n");
}
