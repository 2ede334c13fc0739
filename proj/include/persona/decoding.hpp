#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "persona/corpus.hpp"
#include "persona/model.hpp"

namespace persona::decoding {

using corpus::TokenId;
using model::ModelParameters;
using numerics::Tape;
using numerics::Var;

enum class Mode { greedy, beam };

inline std::string to_string(Mode m) { return m == Mode::greedy ? "greedy" : "beam"; }
inline Mode parse_mode(const std::string& s) {
  if (s == "greedy") return Mode::greedy;
  if (s == "beam") return Mode::beam;
  throw DataError("unknown decode mode '" + s + "'");
}

struct DecodeConfig {
  Mode mode = Mode::greedy;
  std::size_t beam_width = 5;
  std::size_t max_decode_length = 30;
  bool lts_enabled = true;
  bool length_normalize = false;  // rank by log probability per scored step

  void validate() const {
    require(beam_width >= 1, "decode config: beam_width must be >= 1");
    require(max_decode_length >= 1, "decode config: max_decode_length must be >= 1");
  }
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // EOS stripped, no start marker
  double log_probability = 0;
  bool finished = false;  // ended by EOS rather than by the length limit
};

// PAD and the start marker are never produced.
inline bool emittable(TokenId id) { return id != corpus::kPad && id != corpus::kBos; }

template <std::floating_point Real>
std::vector<double> log_softmax(std::span<const Real> logits) {
  double top = -std::numeric_limits<double>::infinity();
  for (Real v : logits) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("decode: non-finite logit");
    top = std::max(top, static_cast<double>(v));
  }
  double total = 0;
  for (Real v : logits) total += std::exp(static_cast<double>(v) - top);
  const double lse = top + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

namespace detail {

// Next-token log distribution plus the decoder state that the chosen token
// will be fed into.
template <std::floating_point Real>
struct Distribution {
  std::vector<double> log_probs;
  Var<Real> hidden;
};

template <std::floating_point Real>
class Stepper {
 public:
  Stepper(const ModelParameters<Real>& params, std::span<const TokenId> post, bool lts)
      : params_(params), tape_(false), lts_(lts) {
    enc_ = model::encode(tape_, params_, post);
    start_ = model::init_decoder(tape_, params_, enc_);
  }

  Distribution<Real> first() {
    if (lts_) return {log_softmax<Real>(model::lts_logits(tape_, params_, enc_.summary).value()), start_.hidden};
    return next(start_);
  }

  Distribution<Real> next(const model::DecoderState<Real>& state) {
    auto out = model::decode_step(tape_, params_, state, enc_);
    return {log_softmax<Real>(out.logits.value()), out.hidden};
  }

 private:
  const ModelParameters<Real>& params_;
  Tape<Real> tape_;
  bool lts_;
  model::EncoderOutput<Real> enc_;
  model::DecoderState<Real> start_;
};

template <std::floating_point Real>
struct Entry {
  Hypothesis hyp;
  bool done = false;
  Var<Real> hidden;     // state the last token is fed into
  Distribution<Real> dist;
};

inline double score(const Hypothesis& h, const DecodeConfig& config) {
  if (!config.length_normalize) return h.log_probability;
  const std::size_t steps = h.tokens.size() + (h.finished ? 1 : 0);
  return h.log_probability / static_cast<double>(std::max<std::size_t>(1, steps));
}

// Higher score first; equal scores go to the lexicographically smaller ids.
inline bool ranks_before(const Hypothesis& a, const Hypothesis& b, const DecodeConfig& config) {
  const double sa = score(a, config), sb = score(b, config);
  if (sa != sb) return sa > sb;
  if (a.tokens != b.tokens) return std::lexicographical_compare(a.tokens.begin(), a.tokens.end(), b.tokens.begin(), b.tokens.end());
  return a.finished && !b.finished;
}

template <std::floating_point Real>
Hypothesis greedy(const ModelParameters<Real>& params, std::span<const TokenId> post, const DecodeConfig& config) {
  Stepper<Real> stepper(params, post, config.lts_enabled);
  Hypothesis h;
  auto dist = stepper.first();
  while (true) {
    TokenId best = corpus::kEos;
    for (TokenId k = 0; k < dist.log_probs.size(); ++k)
      if (emittable(k) && dist.log_probs[k] > dist.log_probs[best]) best = k;
    h.log_probability += dist.log_probs[best];
    if (best == corpus::kEos) {
      h.finished = true;
      return h;
    }
    h.tokens.push_back(best);
    if (h.tokens.size() >= config.max_decode_length) return h;
    dist = stepper.next({dist.hidden, h.tokens.size(), best});
  }
}

template <std::floating_point Real>
Hypothesis beam(const ModelParameters<Real>& params, std::span<const TokenId> post, const DecodeConfig& config) {
  Stepper<Real> stepper(params, post, config.lts_enabled);
  std::vector<Entry<Real>> active(1);
  active[0].dist = stepper.first();
  std::vector<Entry<Real>> done;

  while (!active.empty()) {
    std::vector<Entry<Real>> pool = done;
    for (const auto& parent : active) {
      for (TokenId k = 0; k < parent.dist.log_probs.size(); ++k) {
        if (!emittable(k)) continue;
        Entry<Real> child;
        child.hyp.tokens = parent.hyp.tokens;
        child.hyp.log_probability = parent.hyp.log_probability + parent.dist.log_probs[k];
        if (k == corpus::kEos) {
          child.hyp.finished = true;
          child.done = true;
        } else {
          child.hyp.tokens.push_back(k);
          child.done = child.hyp.tokens.size() >= config.max_decode_length;
          child.hidden = parent.dist.hidden;
        }
        pool.push_back(std::move(child));
      }
    }
    const std::size_t keep = std::min(config.beam_width, pool.size());
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(),
                      [&](const Entry<Real>& a, const Entry<Real>& b) { return ranks_before(a.hyp, b.hyp, config); });
    pool.resize(keep);
    done.clear();
    active.clear();
    for (auto& e : pool) {
      if (e.done) {
        done.push_back(std::move(e));
      } else {
        e.dist = stepper.next({e.hidden, e.hyp.tokens.size(), e.hyp.tokens.back()});
        active.push_back(std::move(e));
      }
    }
  }
  return done.front().hyp;
}

}  // namespace detail

template <std::floating_point Real>
Hypothesis generate(const ModelParameters<Real>& params, std::span<const TokenId> post, const DecodeConfig& config) {
  config.validate();
  if (post.empty()) throw DataError("empty post");
  if (config.mode == Mode::greedy) return detail::greedy(params, post, config);
  return detail::beam(params, post, config);
}

template <std::floating_point Real>
Hypothesis generate(const model::Model<Real>& m, const std::vector<std::string>& post, const DecodeConfig& config) {
  if (post.empty()) throw DataError("empty post");
  auto ids = corpus::encode(post, m.encoder_vocab);
  return generate(m.params, std::span<const TokenId>(ids), config);
}

template <std::floating_point Real>
std::vector<std::string> response_tokens(const model::Model<Real>& m, const Hypothesis& h) {
  return corpus::decode(h.tokens, m.decoder_vocab);
}

struct FirstWordTable {
  std::map<TokenId, std::size_t> counts;
  double entropy = 0;  // nats
  std::size_t total = 0;
};

struct FirstWordStats {
  FirstWordTable lts_on;
  FirstWordTable lts_off;
};

inline double entropy_of(const std::map<TokenId, std::size_t>& counts) {
  std::size_t total = 0;
  for (const auto& [id, c] : counts) total += c;
  double h = 0;
  for (const auto& [id, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

// First generated token for each post, with and without the first-word head.
// An immediately ended response counts as EOS.
template <std::floating_point Real>
FirstWordStats first_word_stats(const ModelParameters<Real>& params, const std::vector<std::vector<TokenId>>& posts,
                                DecodeConfig config) {
  require(!posts.empty(), "first_word_stats: no posts");
  FirstWordStats stats;
  for (bool lts : {true, false}) {
    config.lts_enabled = lts;
    FirstWordTable& table = lts ? stats.lts_on : stats.lts_off;
    for (const auto& post : posts) {
      auto h = generate(params, std::span<const TokenId>(post), config);
      ++table.counts[h.tokens.empty() ? corpus::kEos : h.tokens.front()];
      ++table.total;
    }
    table.entropy = entropy_of(table.counts);
  }
  return stats;
}

}  // namespace persona::decoding
