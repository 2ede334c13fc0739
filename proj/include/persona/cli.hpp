#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "persona/checkpoint.hpp"
#include "persona/corpus.hpp"
#include "persona/decoding.hpp"
#include "persona/metrics.hpp"
#include "persona/numerics.hpp"
#include "persona/pairing.hpp"
#include "persona/service.hpp"
#include "persona/session.hpp"
#include "persona/training.hpp"

namespace persona::cli {

inline constexpr const char* kEnvPrefix = "PRG_";

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

using Environment = std::map<std::string, std::string>;

inline Environment process_environment() {
  Environment env;
  for (char** e = ::environ; e != nullptr && *e != nullptr; ++e) {
    std::string entry(*e);
    const auto eq = entry.find('=');
    if (eq != std::string::npos) env.emplace(entry.substr(0, eq), entry.substr(eq + 1));
  }
  return env;
}

// ---- run configuration -------------------------------------------------------

struct KeySpec {
  const char* key;
  const char* desk;
  const char* paper;
  const char* help;
};

inline const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys{
      {"hidden", "64", "1024", "GRU hidden size"},
      {"emb", "32", "500", "word embedding size"},
      {"align", "64", "1024", "attention alignment size"},
      {"pool", "2", "2", "maxout pool size"},
      {"max_len", "30", "30", "maximum response length"},
      {"precision", "float64", "float32", "float32 | float64"},
      {"summary", "mean", "mean", "encoder summary: mean | last"},
      {"min_count", "1", "1", "minimum token count for the vocabulary"},
      {"max_vocab", "35000", "35000", "vocabulary size cap per side, reserved tokens included"},
      {"batch", "16", "128", "mini-batch size"},
      {"epochs_general", "10", "10", "general-phase epochs"},
      {"epochs_persona", "8", "8", "persona-phase epochs"},
      {"lr", "2.0", "0.5", "learning rate"},
      {"optimizer", "sgd", "sgd", "sgd | adam"},
      {"clip", "5", "5", "global gradient clip norm"},
      {"seed", "1", "1", "random seed"},
      {"lts_weight", "1", "1", "weight of the first-word loss"},
      {"start_mode", "lts", "lts", "first-word training: lts | bos | both"},
      {"decode", "greedy", "greedy", "greedy | beam"},
      {"beam", "5", "5", "beam width"},
      {"lts", "true", "true", "start decoding from the first-word head"},
      {"length_norm", "false", "false", "rank beam hypotheses per step"},
      {"k1", "1.2", "1.2", "BM25 k1"},
      {"b", "0.75", "0.75", "BM25 b"},
      {"overlap", "containment", "containment", "overlap denominator: containment | jaccard"},
  };
  return keys;
}

inline bool known_key(const std::string& key) {
  return key == "profile" || std::any_of(config_keys().begin(), config_keys().end(),
                                         [&](const KeySpec& k) { return key == k.key; });
}

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  return s.substr(begin, s.find_last_not_of(" \t\r") - begin + 1);
}

// key=value lines; '#' starts a comment.
inline std::map<std::string, std::string> parse_config_text(std::istream& in, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ContractViolation(origin + ":" + std::to_string(n) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (!known_key(key)) throw ContractViolation(origin + ":" + std::to_string(n) + ": unknown key '" + key + "'");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

class RunConfig {
 public:
  // Precedence, lowest first: profile defaults, config file, environment, flags.
  static RunConfig resolve(const std::string& config_file, const Environment& env,
                           const std::map<std::string, std::string>& flags) {
    std::map<std::string, std::string> file_values;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw DataError("cannot open config file '" + config_file + "'");
      file_values = parse_config_text(in, config_file);
    }
    std::map<std::string, std::string> env_values;
    const std::string prefix = kEnvPrefix;
    for (const auto& [name, value] : env) {
      if (name.rfind(prefix, 0) != 0) continue;
      std::string key = name.substr(prefix.size());
      std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (!known_key(key)) throw ContractViolation("environment: unknown setting " + name);
      env_values[key] = value;
    }
    for (const auto& [key, value] : flags)
      if (!known_key(key)) throw ContractViolation("unknown setting '" + key + "'");

    RunConfig c;
    std::string profile = "desk";
    for (const std::map<std::string, std::string>* layer : std::initializer_list<const std::map<std::string, std::string>*>{&file_values, &env_values, &flags})
      if (auto it = layer->find("profile"); it != layer->end()) profile = it->second;
    if (profile != "desk" && profile != "paper") throw ContractViolation("profile must be desk or paper");
    c.set("profile", profile, "default");
    for (const auto& k : config_keys()) c.set(k.key, profile == "paper" ? k.paper : k.desk, "profile " + profile);
    for (const auto& [k, v] : file_values) c.set(k, v, "file");
    for (const auto& [k, v] : env_values) c.set(k, v, "env");
    for (const auto& [k, v] : flags) c.set(k, v, "flag");
    c.model_config();  // validate every typed value up front
    c.train_config();
    c.decode_config();
    c.bm25();
    c.overlap_mode();
    return c;
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    require(it != values_.end(), "config: no key '" + key + "'");
    return it->second;
  }

  std::size_t get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }
  std::uint64_t get_u64(const std::string& key) const {
    const auto& v = get(key);
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ContractViolation("config: " + key + " expects a non-negative integer, got '" + v + "'");
    return out;
  }
  double get_double(const std::string& key) const {
    const auto& v = get(key);
    try {
      std::size_t used = 0;
      double d = std::stod(v, &used);
      if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ContractViolation("config: " + key + " expects a number, got '" + v + "'");
  }
  bool get_bool(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ContractViolation("config: " + key + " expects true or false, got '" + v + "'");
  }

  model::ModelConfig model_config() const {
    model::ModelConfig m;
    m.hidden_dim = get_size("hidden");
    m.embedding_dim = get_size("emb");
    m.alignment_dim = get_size("align");
    m.maxout_pool_size = get_size("pool");
    m.max_decode_length = get_size("max_len");
    try {
      m.precision = model::parse_precision(get("precision"));
      m.summary = model::parse_summary(get("summary"));
    } catch (const DataError& e) {
      throw ContractViolation(std::string("config: ") + e.what());
    }
    return m;
  }

  training::TrainConfig train_config() const {
    training::TrainConfig t;
    t.batch_size = get_size("batch");
    t.epochs_general = get_size("epochs_general");
    t.epochs_persona = get_size("epochs_persona");
    t.learning_rate = get_double("lr");
    t.clip_norm = get_double("clip");
    t.seed = get_u64("seed");
    t.lts_weight = get_double("lts_weight");
    try {
      t.optimizer = training::parse_optimizer(get("optimizer"));
      t.start_mode = training::parse_start_mode(get("start_mode"));
    } catch (const DataError& e) {
      throw ContractViolation(std::string("config: ") + e.what());
    }
    t.validate();
    return t;
  }

  decoding::DecodeConfig decode_config() const {
    decoding::DecodeConfig d;
    try {
      d.mode = decoding::parse_mode(get("decode"));
    } catch (const DataError& e) {
      throw ContractViolation(std::string("config: ") + e.what());
    }
    d.beam_width = get_size("beam");
    d.max_decode_length = get_size("max_len");
    d.lts_enabled = get_bool("lts");
    d.length_normalize = get_bool("length_norm");
    d.validate();
    return d;
  }

  pairing::Bm25Params bm25() const { return {get_double("k1"), get_double("b")}; }

  metrics::OverlapMode overlap_mode() const {
    try {
      return metrics::parse_overlap_mode(get("overlap"));
    } catch (const DataError& e) {
      throw ContractViolation(std::string("config: ") + e.what());
    }
  }

  // Re-loadable with --config; the command line is recorded as a comment.
  std::string banner(const std::string& command_line) const {
    std::ostringstream out;
    out << "# persona effective configuration\n# command: " << command_line << '\n';
    for (const auto& [k, v] : values_) out << k << '=' << v << "  # " << sources_.at(k) << '\n';
    return out.str();
  }

 private:
  void set(const std::string& key, const std::string& value, const std::string& source) {
    values_[key] = value;
    sources_[key] = source;
  }

  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> sources_;
};

// ---- helpers -------------------------------------------------------------------

inline std::vector<std::vector<std::string>> read_token_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    auto tokens = corpus::tokenize(line);
    if (!tokens.empty()) out.push_back(std::move(tokens));
  }
  return out;
}

inline std::unordered_set<std::string> maybe_stoplist(const std::string& path) {
  if (path.empty()) return {};
  return corpus::load_stoplist(path);
}

template <std::floating_point Real>
void print_report(std::ostream& out, const training::TrainReport& r) {
  for (std::size_t e = 0; e < r.epoch_losses.size(); ++e)
    out << "epoch " << (e + 1) << " loss " << metrics::format_fixed(r.epoch_losses[e], 6) << '\n';
  out << "phase " << r.phase << ", " << r.steps << " steps, " << metrics::format_fixed(r.wall_seconds, 2) << " s";
  if (r.truncated_responses > 0) out << ", " << r.truncated_responses << " responses truncated";
  if (r.unknown_token_rate > 0) out << ", response UNK rate " << metrics::format_percent(r.unknown_token_rate);
  out << '\n';
  if (!r.checkpoint_path.empty()) out << "checkpoint " << r.checkpoint_path << '\n';
}

// Vocabulary over the responses (decoder) or posts (encoder) of several corpora.
inline corpus::Vocabulary merged_vocabulary(const std::vector<corpus::Corpus>& corpora, corpus::Side side,
                                            std::size_t min_count, std::size_t max_size) {
  corpus::Corpus merged;
  for (const auto& c : corpora)
    for (const auto& p : c.pairs) merged.pairs.push_back(p);
  return corpus::build_vocabulary(merged, side, min_count, max_size);
}

template <std::floating_point Real>
int run_train(const RunConfig& cfg, const std::string& corpus_path, const std::vector<std::string>& extra,
              const std::string& out_path, std::ostream& out) {
  auto general = corpus::load_corpus(corpus_path, corpus::SourceTag::general());
  std::vector<corpus::Corpus> for_vocab{general};
  for (const auto& path : extra) for_vocab.push_back(corpus::load_corpus(path, corpus::SourceTag::persona("vocab")));
  const auto min_count = cfg.get_size("min_count");
  const auto max_vocab = cfg.get_size("max_vocab");
  auto enc = merged_vocabulary(for_vocab, corpus::Side::encoder, min_count, max_vocab);
  auto dec = merged_vocabulary(for_vocab, corpus::Side::decoder, min_count, max_vocab);
  auto train = cfg.train_config();
  train.checkpoint_path = out_path;
  auto m = model::Model<Real>::create(cfg.model_config(), enc, dec, train.seed);
  out << "pairs " << general.pairs.size() << " (duplicates dropped " << general.dropped_duplicates << "), vocab "
      << enc.size() << "/" << dec.size() << ", parameters " << m.params.scalar_count() << '\n';
  print_report<Real>(out, training::train_general(m, general, train));
  return kOk;
}

template <std::floating_point Real>
int run_adapt(const RunConfig& cfg, const std::string& model_path, const std::string& corpus_path,
              const std::string& persona, const std::string& stoplist, const std::string& out_path, std::ostream& out) {
  auto m = checkpoint::load<Real>(model_path);
  auto data = corpus::load_corpus(corpus_path, corpus::SourceTag::persona(persona));
  if (!stoplist.empty()) {
    const auto dropped = corpus::drop_stoplisted(data, corpus::load_stoplist(stoplist));
    out << "dropped " << dropped << " stoplist-only pairs\n";
    if (data.pairs.empty()) throw DataError("persona corpus is empty after stoplist filtering");
  }
  auto train = cfg.train_config();
  train.checkpoint_path = out_path;
  print_report<Real>(out, training::adapt_persona(m, data, train));
  return kOk;
}

template <std::floating_point Real>
int run_gradcheck(std::size_t hidden, std::size_t emb, std::size_t vocab, std::uint64_t seed, std::ostream& out) {
  model::ModelConfig c;
  c.hidden_dim = hidden;
  c.embedding_dim = emb;
  c.alignment_dim = hidden;
  c.encoder_vocab_size = vocab;
  c.decoder_vocab_size = vocab;
  c.max_decode_length = 6;
  auto params = model::ModelParameters<Real>::create(c);
  params.initialize(seed, 1.0);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<corpus::TokenId> id(corpus::kReservedCount, static_cast<corpus::TokenId>(vocab - 1));
  corpus::EncodedPair pair{{id(rng), id(rng), id(rng)}, {id(rng), id(rng), id(rng)}};
  std::function<numerics::Var<Real>(numerics::Tape<Real>&)> loss = [&](numerics::Tape<Real>& tape) {
    return training::pair_loss(tape, params, pair);
  };
  // differences are taken on a long double copy; see finite_difference_check
  auto reference = model::convert_parameters<long double>(params);
  std::function<numerics::Var<long double>(numerics::Tape<long double>&)> reference_loss =
      [&](numerics::Tape<long double>& tape) { return training::pair_loss(tape, reference, pair); };
  auto named = params.named();
  auto reference_named = reference.named();
  auto report = numerics::finite_difference_check<Real, long double>(loss, named, reference_loss, reference_named);
  for (const auto& t : report.tensors)
    out << std::left << std::setw(20) << t.name << " max " << std::scientific << std::setprecision(3)
        << t.max_relative_error << "  checked " << t.checked << "  kinks " << t.skipped_non_smooth << '\n';
  out << "max relative error " << std::scientific << std::setprecision(3) << report.max_relative_error << '\n';
  out.unsetf(std::ios::floatfield);
  if (report.max_relative_error >= 1e-4) {
    out << "FAILED: above 1e-4\n";
    return kNumericFailure;
  }
  out << "ok\n";
  return kOk;
}

inline std::string describe(const std::vector<std::string>& args) {
  std::string s;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (i) s += ' ';
    const bool quote = args[i].find_first_of(" \t") != std::string::npos || args[i].empty();
    s += quote ? "\"" + args[i] + "\"" : args[i];
  }
  return s;
}

inline int run_metrics(const RunConfig& cfg, const std::vector<std::string>& responses,
                const std::vector<std::string>& overlap, const std::string& imitation, const std::string& judged,
                const std::string& stoplist_path, bool as_json, std::ostream& out);

// ---- entry point ---------------------------------------------------------------

inline int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                    const Environment& env = process_environment()) {
  CLI::App app{"Personalized response generation: corpus prep, two-phase training, decoding, metrics, evaluation service"};
  app.name("persona");
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Expand help for all subcommands");

  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flag_values;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "key=value configuration file");
    sub->add_option("--set", sets, "override one setting, key=value (repeatable)");
    sub->add_option("--profile", flag_values["profile"], "desk | paper");
    sub->add_option("--seed", flag_values["seed"], "random seed");
  };
  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_option(name, flag_values[key], help);
  };

  // prep-persona
  auto* prep = app.add_subcommand("prep-persona", "pair persona messages with posts from the general corpus");
  std::string prep_general, prep_messages, prep_persona, prep_stoplist, prep_out;
  prep->add_option("--general", prep_general, "general corpus (JSONL)")->required();
  prep->add_option("--messages", prep_messages, "persona messages, one per line")->required();
  prep->add_option("--persona", prep_persona, "persona name")->required();
  prep->add_option("--stoplist", prep_stoplist, "stopwords, one per line");
  prep->add_option("--out", prep_out, "output persona corpus (JSONL)")->required();
  common(prep);

  // train
  auto* train = app.add_subcommand("train", "general-phase training");
  std::string train_corpus, train_out;
  std::vector<std::string> train_extra;
  train->add_option("--corpus", train_corpus, "general corpus (JSONL)")->required();
  train->add_option("--vocab-corpus", train_extra, "extra corpora counted when building vocabularies (repeatable)");
  train->add_option("--out", train_out, "checkpoint to write")->required();
  flag(train, "--epochs", "epochs_general", "general-phase epochs");
  flag(train, "--hidden", "hidden", "hidden size");
  flag(train, "--emb", "emb", "embedding size");
  flag(train, "--batch", "batch", "batch size");
  flag(train, "--lr", "lr", "learning rate");
  flag(train, "--optimizer", "optimizer", "sgd | adam");
  common(train);

  // adapt
  auto* adapt = app.add_subcommand("adapt", "persona-phase training from a general checkpoint");
  std::string adapt_model, adapt_corpus, adapt_persona, adapt_stoplist, adapt_out;
  adapt->add_option("--model", adapt_model, "general checkpoint")->required();
  adapt->add_option("--corpus", adapt_corpus, "persona corpus (JSONL)")->required();
  adapt->add_option("--persona", adapt_persona, "persona name")->required();
  adapt->add_option("--stoplist", adapt_stoplist, "drop pairs whose response is only stopwords");
  adapt->add_option("--out", adapt_out, "checkpoint to write")->required();
  flag(adapt, "--epochs", "epochs_persona", "persona-phase epochs");
  flag(adapt, "--batch", "batch", "batch size");
  flag(adapt, "--lr", "lr", "learning rate");
  flag(adapt, "--optimizer", "optimizer", "sgd | adam");
  common(adapt);

  // generate
  auto* gen = app.add_subcommand("generate", "generate responses");
  std::string gen_model, gen_post, gen_posts, gen_form;
  bool gen_no_lts = false;
  gen->add_option("--model", gen_model, "checkpoint")->required();
  auto* post_opt = gen->add_option("--post", gen_post, "a single post");
  auto* posts_opt = gen->add_option("--posts", gen_posts, "file with one post per line");
  post_opt->excludes(posts_opt);
  gen->add_option("--judgment-form", gen_form, "also write a blank judgment form (JSON) for the generated responses");
  gen->add_flag("--no-lts", gen_no_lts, "start from the start marker instead of the first-word head");
  flag(gen, "--beam", "beam", "beam width (implies beam decoding)");
  flag(gen, "--max-len", "max_len", "maximum response length");
  common(gen);

  // metrics
  auto* met = app.add_subcommand("metrics", "lexical distributions, divergence, overlap, imitation tables");
  std::vector<std::string> met_responses, met_overlap;
  std::string met_stoplist, met_imitation, met_judged;
  bool met_json = false;
  met->add_option("--responses", met_responses, "label=file of generated responses (repeatable)");
  met->add_option("--overlap", met_overlap, "name=volunteer_file,model_file (repeatable, >= 2)");
  met->add_option("--imitation", met_imitation, "JSON list of {label, n_gr, n_imi, n_vr, n_test}");
  met->add_option("--judged", met_judged, "filled judgment form written by generate --judgment-form");
  met->add_option("--stoplist", met_stoplist, "stopwords, one per line");
  met->add_flag("--json", met_json, "JSON output");
  flag(met, "--overlap-mode", "overlap", "containment | jaccard");
  common(met);

  // serve
  auto* serve = app.add_subcommand("serve", "run the evaluation session service");
  std::string serve_root = ".", serve_host = "127.0.0.1", serve_logs;
  int serve_port = 8080;
  bool serve_reveal = false;
  serve->add_option("--model-root", serve_root, "directory that model references are resolved against");
  serve->add_option("--host", serve_host, "bind address");
  serve->add_option("--port", serve_port, "port (0 picks a free one)");
  serve->add_option("--log-dir", serve_logs, "directory for per-session event logs");
  serve->add_flag("--reveal-candidate", serve_reveal, "show unrouted bot candidates on the volunteer console");
  common(serve);

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the training loss gradient");
  std::size_t grad_hidden = 4, grad_emb = 4, grad_vocab = 8;
  grad->add_option("--hidden", grad_hidden, "hidden size");
  grad->add_option("--emb", grad_emb, "embedding size");
  grad->add_option("--vocab", grad_vocab, "vocabulary size (reserved tokens included, >= 5)");
  common(grad);

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    std::map<std::string, std::string> flags;
    for (const auto& [k, v] : flag_values)
      if (!v.empty()) flags[k] = v;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ContractViolation("--set expects key=value, got '" + s + "'");
      flags[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
    }
    if (gen->parsed()) {
      if (gen_no_lts) flags["lts"] = "false";
      if (flag_values.count("beam") && !flag_values["beam"].empty()) flags["decode"] = "beam";
    }
    const auto cfg = RunConfig::resolve(config_file, env, flags);
    err << cfg.banner("persona " + describe(args));

    if (prep->parsed()) {
      auto general = corpus::load_corpus(prep_general, corpus::SourceTag::general());
      auto messages = pairing::load_messages(prep_messages, prep_persona);
      auto index = pairing::build_index(general, cfg.bm25());
      auto built = pairing::build_persona_corpus(index, messages, general, maybe_stoplist(prep_stoplist));
      std::ofstream o(prep_out);
      if (!o) throw DataError("cannot write '" + prep_out + "'");
      corpus::write_corpus(o, built.corpus);
      out << "pairs " << built.corpus.pairs.size() << ", unmatchable " << built.skipped_unmatchable
          << ", stoplist-only " << built.dropped_stoplisted << '\n';
      return kOk;
    }
    if (train->parsed()) {
      if (cfg.model_config().precision == model::Precision::float32)
        return run_train<float>(cfg, train_corpus, train_extra, train_out, out);
      return run_train<double>(cfg, train_corpus, train_extra, train_out, out);
    }
    if (adapt->parsed()) {
      if (checkpoint::peek_precision(adapt_model) == model::Precision::float32)
        return run_adapt<float>(cfg, adapt_model, adapt_corpus, adapt_persona, adapt_stoplist, adapt_out, out);
      return run_adapt<double>(cfg, adapt_model, adapt_corpus, adapt_persona, adapt_stoplist, adapt_out, out);
    }
    if (gen->parsed()) {
      if (gen_post.empty() == gen_posts.empty()) throw ContractViolation("generate needs exactly one of --post or --posts");
      auto m = checkpoint::load<double>(gen_model);
      std::vector<std::vector<std::string>> posts;
      if (!gen_post.empty()) {
        posts.push_back(corpus::tokenize(gen_post));
        if (posts.back().empty()) throw DataError("empty post");
      } else {
        posts = read_token_lines(gen_posts);
        if (posts.empty()) throw DataError("no posts in '" + gen_posts + "'");
      }
      auto decode = cfg.decode_config();
      if (!gen_form.empty()) {
        session::BatchJudgmentSession batch(m, posts, decode);
        for (const auto& item : batch.items()) out << corpus::join(item.response) << '\n';
        std::ofstream o(gen_form);
        if (!o) throw DataError("cannot write '" + gen_form + "'");
        o << nlohmann::json{{"model", gen_model}, {"items", batch.form()}}.dump(2) << '\n';
        return kOk;
      }
      for (const auto& post : posts) out << corpus::join(decoding::response_tokens(m, decoding::generate(m, post, decode))) << '\n';
      return kOk;
    }
    if (met->parsed()) return run_metrics(cfg, met_responses, met_overlap, met_imitation, met_judged, met_stoplist, met_json, out);
    if (serve->parsed()) {
      session::SessionOptions options;
      options.decode = cfg.decode_config();
      options.reveal_candidate_to_volunteer = serve_reveal;
      session::SessionManager manager(serve_root, options, serve_logs);
      service::Service svc(manager);
      int port = serve_port;
      if (port == 0) {
        port = svc.bind_to_any_port(serve_host);
      } else if (!svc.bind(serve_host, port)) {
        throw DataError("cannot bind " + serve_host + ":" + std::to_string(port));
      }
      out << "listening on http://" << serve_host << ":" << port << std::endl;
      svc.listen_after_bind();
      return kOk;
    }
    if (grad->parsed()) {
      require(grad_vocab > corpus::kReservedCount, "gradcheck: --vocab must exceed the 4 reserved tokens");
      return run_gradcheck<double>(grad_hidden, grad_emb, grad_vocab, cfg.get_u64("seed"), out);
    }
  } catch (const ContractViolation& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const session::SessionError& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const nlohmann::json::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

inline std::pair<std::string, std::string> split_label(const std::string& s, char sep) {
  const auto at = s.find(sep);
  if (at == std::string::npos) return {s, s};
  return {s.substr(0, at), s.substr(at + 1)};
}

inline int run_metrics(const RunConfig& cfg, const std::vector<std::string>& responses,
                       const std::vector<std::string>& overlap, const std::string& imitation,
                       const std::string& judged, const std::string& stoplist_path, bool as_json, std::ostream& out) {
  if (responses.empty() && overlap.empty() && imitation.empty() && judged.empty())
    throw ContractViolation("metrics needs --responses, --overlap, --imitation or --judged");
  const auto stop = maybe_stoplist(stoplist_path);
  nlohmann::json report = nlohmann::json::object();

  if (!responses.empty()) {
    std::vector<std::string> labels;
    std::vector<metrics::LexicalDistribution> dists;
    for (const auto& spec : responses) {
      auto [label, path] = split_label(spec, '=');
      labels.push_back(label);
      dists.push_back(metrics::lexical_distribution(read_token_lines(path), stop));
    }
    std::set<std::string> union_vocab;
    for (const auto& d : dists)
      for (const auto& [t, p] : d.probabilities) union_vocab.insert(t);
    nlohmann::json jd = nlohmann::json::object();
    for (std::size_t i = 0; i < dists.size(); ++i) jd[labels[i]] = metrics::to_json(dists[i]);
    report["distributions"] = jd;
    report["union_vocabulary_size"] = union_vocab.size();
    std::vector<std::vector<double>> jsd(dists.size(), std::vector<double>(dists.size()));
    for (std::size_t i = 0; i < dists.size(); ++i)
      for (std::size_t j = 0; j < dists.size(); ++j) jsd[i][j] = metrics::jensen_shannon(dists[i], dists[j]);
    report["jsd"] = {{"labels", labels}, {"matrix", jsd}};
    if (!as_json) {
      out << "lexical distributions (stopwords removed), union vocabulary " << union_vocab.size() << '\n';
      for (std::size_t i = 0; i < dists.size(); ++i)
        out << "  " << labels[i] << ": " << dists[i].vocabulary_size() << " types, " << dists[i].total_tokens << " tokens\n";
      out << "Jensen-Shannon divergence (nats)\n";
      for (std::size_t i = 0; i < dists.size(); ++i) {
        out << "  " << std::left << std::setw(12) << labels[i];
        for (double v : jsd[i]) out << ' ' << metrics::format_fixed(v, 4);
        out << '\n';
      }
    }
  }

  if (!overlap.empty()) {
    std::vector<metrics::PersonaResponses> personas;
    for (const auto& spec : overlap) {
      auto [name, files] = split_label(spec, '=');
      auto comma = files.find(',');
      if (comma == std::string::npos) throw ContractViolation("--overlap expects name=volunteer_file,model_file");
      personas.push_back({name, read_token_lines(files.substr(0, comma)), read_token_lines(files.substr(comma + 1))});
    }
    auto matrix = metrics::overlap_matrix(personas, stop, cfg.overlap_mode());
    report["overlap"] = metrics::to_json(matrix);
    if (!as_json) {
      out << "word overlap (" << metrics::to_string(cfg.overlap_mode()) << "), diagonal maximal in "
          << matrix.diagonal_rows() << " of " << matrix.names.size() << " rows\n"
          << metrics::overlap_matrix_text(matrix);
    }
  }

  std::vector<metrics::LabeledStats> columns;
  if (!imitation.empty()) {
    std::ifstream in(imitation);
    if (!in) throw DataError("cannot open '" + imitation + "'");
    for (const auto& j : nlohmann::json::parse(in))
      columns.push_back({j.at("label").get<std::string>(),
                         {j.at("n_gr").get<std::size_t>(), j.at("n_imi").get<std::size_t>(), j.value("n_vr", std::size_t{0}),
                          j.value("n_test", j.at("n_gr").get<std::size_t>())}});
  }
  if (!judged.empty()) {
    std::ifstream in(judged);
    if (!in) throw DataError("cannot open '" + judged + "'");
    auto form = nlohmann::json::parse(in);
    metrics::ImitationStats s;
    for (const auto& item : form.at("items")) {
      if (item.at("verdict").is_null()) throw DataError("judgment form: turn " + item.at("turn").dump() + " has no verdict");
      ++s.n_gr;
      ++s.n_test;
      if (session::parse_verdict(item.at("verdict").get<std::string>()) == session::Verdict::volunteer) ++s.n_imi;
    }
    columns.push_back({form.value("model", std::string("model")), s});
  }
  if (!columns.empty()) {
    for (const auto& c : columns) c.stats.validate();
    report["imitation"] = metrics::imitation_table_json(columns, columns.size() > 1);
    if (!as_json) out << "imitation rate\n" << metrics::imitation_table_text(columns, columns.size() > 1);
  }
  if (as_json) out << report.dump(2) << '\n';
  return kOk;
}

inline int dispatch(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, out, err, process_environment());
}

}  // namespace persona::cli
