#include "cli.hpp"

#include "domlm/checkpoint.hpp"
#include "domlm/corpus.hpp"
#include "domlm/errors.hpp"
#include "domlm/phrase_pool.hpp"
#include "domlm/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>

namespace domlm {

namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// key=value lines, '#' comments. Keys use the long flag name with or without
// dashes turned into underscores.
std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path.string(), number, "expected key=value");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(path.string(), number, "empty key");
    entries.emplace_back(std::move(key), value);
  }
  return entries;
}

struct Paths {
  fs::path corpus, vocab, pool, pairs, content, out, out_dir, checkpoint, config;
};

struct EncoderFlags {
  int layers = 2, dim = 32, heads = 2, ffn_dim = 64, max_seq_len = 128;
};

struct AlignFlags {
  std::vector<std::string> pairs;
  std::string text_a, text_b;
  std::string variant = "ot";
  bool scaled = false;
};

struct EvalFlags {
  std::uint64_t seed = 0;
  int max_span = 4;
};

struct Options {
  Paths paths;
  EncoderFlags encoder;
  TrainConfig train;
  std::optional<double> force_alpha;
  bool no_smooth = false;
  std::string cea_variant = "ot";
  std::size_t min_freq = 1;
  double min_score = 0.5;
  long log_every = 50;
  AlignFlags align;
  EvalFlags eval;
};

void add_config_flag(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.paths.config, "key=value file with defaults for this command; flags win");
}

void add_ipot_flags(CLI::App* sub, Options& o) {
  sub->add_option("--beta", o.train.ipot.beta, "IPOT proximal step size")->capture_default_str();
  sub->add_option("--outer-iters", o.train.ipot.outer_iters, "IPOT outer iterations")->capture_default_str();
  sub->add_option("--inner-k", o.train.ipot.inner_k, "IPOT inner scaling rounds")->capture_default_str();
}

void print_vocab_summary(const Vocab& vocab, const fs::path& corpus, std::ostream& out) {
  std::ifstream in(corpus);
  std::size_t total = 0, known = 0;
  std::string line;
  while (std::getline(in, line)) {
    for (int id : vocab.encode(line)) {
      ++total;
      if (id != kUnkId) ++known;
    }
  }
  out << "vocab_size " << vocab.size() << "\n";
  out << "coverage " << std::setprecision(6) << (total ? static_cast<double>(known) / static_cast<double>(total) : 0.0)
      << "\n";
}

int cmd_build_vocab(const Options& o, std::ostream& out) {
  const Vocab vocab = build_vocab(o.paths.corpus, o.min_freq);
  vocab.save(o.paths.out);
  print_vocab_summary(vocab, o.paths.corpus, out);
  return kExitOk;
}

EncoderConfig encoder_config(const Options& o, const Vocab& vocab, const PhrasePool& pool) {
  EncoderConfig c;
  c.layers = o.encoder.layers;
  c.dim = o.encoder.dim;
  c.heads = o.encoder.heads;
  c.ffn_dim = o.encoder.ffn_dim;
  c.max_seq_len = o.encoder.max_seq_len;
  c.vocab_size = vocab.size();
  c.phrase_vocab_size = std::max<int>(1, static_cast<int>(pool.size()));
  return c;
}

std::string progress_line(const IterationRecord& r) {
  std::ostringstream os;
  os << "iter " << r.iter << " stage " << r.stage << " mode " << to_string(r.mode) << " alpha " << r.alpha;
  auto field = [&](const char* name, const std::optional<double>& v) {
    if (v) os << ' ' << name << ' ' << *v;
  };
  field("L_w", r.loss_word);
  field("L_p", r.loss_phrase);
  field(r.cea_variant == CeaVariant::ot ? "L_cea_ot" : "L_cea_triplet", r.loss_cea);
  return os.str();
}

int cmd_pretrain(Options o, std::ostream& out, std::ostream& err) {
  o.train.scheduler.force_alpha = o.force_alpha;
  o.train.scheduler.smooth = !o.no_smooth;
  o.train.cea_variant = parse_cea_variant(o.cea_variant);
  o.train.validate();
  if (o.train.stage2_epochs > 0 && (o.paths.pairs.empty() || o.paths.content.empty())) {
    throw UsageError("--pairs and --content are required when --stage2-epochs > 0");
  }
  if (o.log_every < 1) throw UsageError("--log-every must be >= 1");

  const Vocab vocab = Vocab::load(o.paths.vocab);
  const auto max_len = static_cast<std::size_t>(o.encoder.max_seq_len);
  const std::vector<Document> corpus = load_corpus(o.paths.corpus, vocab, max_len);
  const PhrasePool pool = load_pool(o.paths.pool, vocab, o.min_score);
  std::optional<EntityPairSet> pairs;
  if (o.train.stage2_epochs > 0) pairs = load_entity_pairs(o.paths.pairs, o.paths.content, vocab, max_len);
  const EncoderConfig enc = encoder_config(o, vocab, pool);
  enc.validate();

  err << "corpus " << corpus.size() << " documents, pool " << pool.size() << " phrases";
  if (pairs) err << ", " << pairs->size() << " pairs (" << pairs->dropped << " dropped)";
  err << "\n";

  fs::create_directories(o.paths.out_dir);
  TrainState state = init_train_state(enc, o.train);
  TrainReport report;
  RunLimits limits;
  limits.on_iteration = [&](const IterationRecord& r) {
    if (r.iter % o.log_every == 0) err << progress_line(r) << "\n";
  };
  const auto start = std::chrono::steady_clock::now();
  try {
    run_stage1(state, corpus, pool, o.train, report, limits);
    if (pairs) run_stage2(state, *pairs, pool, o.train, report, limits);
  } catch (const NumericalError&) {
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.write_jsonl(o.paths.out_dir / "report.jsonl");
    throw;
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  save_checkpoint(o.paths.out_dir / "checkpoint.bin", to_checkpoint(state, o.train));
  report.write_jsonl(o.paths.out_dir / "report.jsonl");
  out << "iterations " << state.iterations << "\n";
  out << "checkpoint " << (o.paths.out_dir / "checkpoint.bin").string() << "\n";
  return kExitOk;
}

std::string safe_name(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  }
  return s;
}

std::vector<std::string> token_labels(const Vocab& vocab, const std::vector<int>& ids) {
  std::vector<std::string> labels;
  labels.reserve(ids.size());
  for (int id : ids) labels.push_back(vocab.token(id));
  return labels;
}

int cmd_align(Options o, std::ostream& out) {
  const CeaVariant variant = parse_cea_variant(o.align.variant);
  const Checkpoint ck = load_checkpoint(o.paths.checkpoint);
  EncoderConfig enc;
  const ModelParams params = params_from_checkpoint(ck, &enc);
  const Vocab vocab = Vocab::load(o.paths.vocab);
  if (vocab.size() != enc.vocab_size) {
    throw UsageError("vocabulary has " + std::to_string(vocab.size()) + " tokens, checkpoint expects " +
                     std::to_string(enc.vocab_size));
  }
  const auto max_len = static_cast<std::size_t>(enc.max_seq_len);
  fs::create_directories(o.paths.out_dir);

  auto emit = [&](const Document& a, const Document& b, const std::string& name) {
    const PairAlignment al = align_documents(a, b, params, enc, variant, o.train.ipot, o.align.scaled);
    const fs::path path = o.paths.out_dir / (safe_name(name) + ".csv");
    write_alignment_csv(path, token_labels(vocab, al.row_ids), token_labels(vocab, al.col_ids), al.values);
    out << path.string() << "\n";
  };

  const bool texts = !o.align.text_a.empty() || !o.align.text_b.empty();
  if (texts) {
    if (o.align.text_a.empty() || o.align.text_b.empty()) throw UsageError("--text-a and --text-b go together");
    emit(tokenize(o.align.text_a, vocab, max_len), tokenize(o.align.text_b, vocab, max_len), "alignment");
    return kExitOk;
  }
  if (o.paths.pairs.empty() || o.paths.content.empty()) {
    throw UsageError("align needs --pairs and --content, or --text-a and --text-b");
  }
  const EntityPairSet set = load_entity_pairs(o.paths.pairs, o.paths.content, vocab, max_len);
  std::vector<std::pair<std::string, std::string>> wanted;
  if (o.align.pairs.empty()) {
    wanted = set.pairs;
  } else {
    for (const std::string& spec : o.align.pairs) {
      const auto colon = spec.find(':');
      if (colon == std::string::npos) throw UsageError("--pair expects ID_A:ID_B, got '" + spec + "'");
      wanted.emplace_back(spec.substr(0, colon), spec.substr(colon + 1));
    }
  }
  for (const auto& [a, b] : wanted) {
    for (const std::string* id : {&a, &b}) {
      if (!set.content.contains(*id)) throw UsageError("unknown entity id '" + *id + "'");
    }
  }
  for (const auto& [a, b] : wanted) emit(set.doc(a), set.doc(b), a + "__" + b);
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(o.paths.checkpoint);
  EncoderConfig enc;
  const ModelParams params = params_from_checkpoint(ck, &enc);
  const Vocab vocab = Vocab::load(o.paths.vocab);
  if (vocab.size() != enc.vocab_size) {
    throw UsageError("vocabulary has " + std::to_string(vocab.size()) + " tokens, checkpoint expects " +
                     std::to_string(enc.vocab_size));
  }
  if (o.eval.max_span < 1) throw UsageError("--max-span must be >= 1");
  const auto docs = load_corpus(o.paths.corpus, vocab, static_cast<std::size_t>(enc.max_seq_len));
  const PhrasePool pool = load_pool(o.paths.pool, vocab, o.min_score);
  const auto table = eval_reconstruction(model_predictor(params, enc), docs, pool, o.eval.seed, o.eval.max_span);

  write_accuracy_csv(out, table);
  if (!o.paths.out.empty()) {
    std::ofstream file(o.paths.out);
    if (!file) throw IoError("cannot write " + o.paths.out.string());
    write_accuracy_csv(file, table);
  }
  return kExitOk;
}

// Prepends --key=value for every config entry so later command-line flags
// override them under the take-last policy.
std::vector<std::string> expand_config(const std::vector<std::string>& args, CLI::App& app) {
  if (args.size() < 2) return args;
  CLI::App* sub = nullptr;
  for (CLI::App* s : app.get_subcommands({})) {
    if (s->get_name() == args[1]) sub = s;
  }
  if (!sub) return args;
  std::optional<std::string> config;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (!config) return args;
  std::vector<std::string> expanded(args.begin(), args.begin() + 2);
  for (const auto& [key, value] : read_config_file(*config)) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (flag == "config" || !sub->get_option_no_throw("--" + flag)) {
      throw UsageError("unknown config key '" + key + "' in " + *config);
    }
    expanded.push_back("--" + flag + "=" + value);
  }
  expanded.insert(expanded.end(), args.begin() + 2, args.end());
  return expanded;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Domain-oriented language model pretraining: vocabulary, AHM + CEA pretraining, alignment export, "
               "reconstruction evaluation.",
               "domlm"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  auto* vocab_cmd = app.add_subcommand("build-vocab", "Build a frequency-ordered vocabulary from a corpus");
  add_config_flag(vocab_cmd, o);
  vocab_cmd->add_option("--corpus", o.paths.corpus, "One document per line")->required();
  vocab_cmd->add_option("--out", o.paths.out, "Vocabulary file to write (token<TAB>id)")->required();
  vocab_cmd->add_option("--min-freq", o.min_freq, "Drop tokens rarer than this")->capture_default_str();

  auto* pre = app.add_subcommand("pretrain", "Stage 1 (AHM) then stage 2 (AHM + cross entity alignment)");
  add_config_flag(pre, o);
  pre->add_option("--vocab", o.paths.vocab, "Vocabulary file")->required();
  pre->add_option("--corpus", o.paths.corpus, "Domain corpus, one document per line")->required();
  pre->add_option("--pool", o.paths.pool, "Phrase pool: phrase<TAB>score")->required();
  pre->add_option("--pairs", o.paths.pairs, "Entity association pairs: id_a<TAB>id_b");
  pre->add_option("--content", o.paths.content, "Entity content: id<TAB>text");
  pre->add_option("--out-dir", o.paths.out_dir, "Receives checkpoint.bin and report.jsonl")->required();
  pre->add_option("--min-score", o.min_score, "Phrase quality threshold")->capture_default_str();
  pre->add_option("--layers", o.encoder.layers, "Encoder layers")->capture_default_str();
  pre->add_option("--dim", o.encoder.dim, "Hidden size")->capture_default_str();
  pre->add_option("--heads", o.encoder.heads, "Attention heads")->capture_default_str();
  pre->add_option("--ffn-dim", o.encoder.ffn_dim, "Feed-forward width")->capture_default_str();
  pre->add_option("--max-seq-len", o.encoder.max_seq_len, "Longer documents are truncated")->capture_default_str();
  pre->add_option("--stage1-epochs", o.train.stage1_epochs, "AHM-only epochs")->capture_default_str();
  pre->add_option("--stage2-epochs", o.train.stage2_epochs, "Joint AHM + CEA epochs")->capture_default_str();
  pre->add_option("--batch-size", o.train.batch_size, "Documents (stage 1) or pairs (stage 2) per step")
      ->capture_default_str();
  pre->add_option("--lr", o.train.learning_rate, "Adam learning rate")->capture_default_str();
  pre->add_option("--cea-weight", o.train.cea_weight, "Weight of the alignment loss in stage 2")
      ->capture_default_str();
  pre->add_option("--seed", o.train.seed, "Seed for initialization, masking and shuffling")->capture_default_str();
  add_ipot_flags(pre, o);
  pre->add_option("--warm-iters", o.train.scheduler.warm_iters, "Iterations with alpha fixed")->capture_default_str();
  pre->add_option("--warm-alpha", o.train.scheduler.warm_alpha, "Alpha during warm-up")->capture_default_str();
  pre->add_option("--warm-phrase-every", o.train.scheduler.warm_phrase_every,
                  "Every k-th warm-up iteration runs phrase mode (0 disables)")
      ->capture_default_str();
  pre->add_option("--max-idle", o.train.scheduler.max_idle,
                  "After warm-up, a mode idle this long runs once (0 disables)")
      ->capture_default_str();
  pre->add_option("--force-alpha", o.force_alpha, "Pin alpha for every iteration (1 = word masking only)");
  pre->add_flag("--no-smooth", o.no_smooth, "Feed raw instead of EMA-smoothed losses to the scheduler");
  pre->add_option("--cea-variant", o.cea_variant, "ot or attention")->capture_default_str();
  pre->add_flag("--scaled-attention", o.train.scaled_cross_attention, "Scale cross-attention scores by 1/sqrt(dim)");
  pre->add_flag("--reset-scheduler", o.train.reset_scheduler_for_stage2, "Fresh scheduler state for stage 2");
  pre->add_option("--log-every", o.log_every, "Progress line interval in iterations")->capture_default_str();

  auto* align = app.add_subcommand("align", "Export token alignment matrices for entity pairs");
  add_config_flag(align, o);
  align->add_option("--checkpoint", o.paths.checkpoint, "Model checkpoint")->required();
  align->add_option("--vocab", o.paths.vocab, "Vocabulary file")->required();
  align->add_option("--pairs", o.paths.pairs, "Entity association pairs");
  align->add_option("--content", o.paths.content, "Entity content");
  align->add_option("--pair", o.align.pairs, "ID_A:ID_B to export (repeatable; default all pairs)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  align->add_option("--text-a", o.align.text_a, "Raw text instead of an entity id");
  align->add_option("--text-b", o.align.text_b, "Raw text instead of an entity id");
  align->add_option("--out-dir", o.paths.out_dir, "One CSV per pair")->required();
  align->add_option("--variant", o.align.variant, "ot (transport plan) or attention (alpha matrix)")
      ->capture_default_str();
  align->add_flag("--scaled-attention", o.align.scaled, "Scale cross-attention scores by 1/sqrt(dim)");
  add_ipot_flags(align, o);

  auto* eval = app.add_subcommand("eval", "Masked span reconstruction accuracy by span length");
  add_config_flag(eval, o);
  eval->add_option("--checkpoint", o.paths.checkpoint, "Model checkpoint")->required();
  eval->add_option("--vocab", o.paths.vocab, "Vocabulary file")->required();
  eval->add_option("--corpus", o.paths.corpus, "Evaluation documents")->required();
  eval->add_option("--pool", o.paths.pool, "Phrase pool used to find spans")->required();
  eval->add_option("--min-score", o.min_score, "Phrase quality threshold")->capture_default_str();
  eval->add_option("--out", o.paths.out, "Also write the table as CSV here");
  eval->add_option("--seed", o.eval.seed, "Seed for single-word positions")->capture_default_str();
  eval->add_option("--max-span", o.eval.max_span, "Longest span length reported")->capture_default_str();

  try {
    std::vector<std::string> argv = expand_config(args, app);
    std::vector<std::string> reversed(argv.rbegin(), argv.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (vocab_cmd->parsed()) return cmd_build_vocab(o, out);
    if (pre->parsed()) return cmd_pretrain(o, out, err);
    if (align->parsed()) return cmd_align(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
  } catch (const NumericalError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace domlm
