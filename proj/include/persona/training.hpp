#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "persona/checkpoint.hpp"
#include "persona/corpus.hpp"
#include "persona/model.hpp"

namespace persona::training {

using corpus::EncodedPair;
using corpus::TokenId;
using model::Model;
using model::ModelParameters;
using numerics::Tape;
using numerics::Var;

enum class Optimizer { sgd, adam };

// Which head is trained to emit the first response word.
//   lts  - first-word head only (decoding starts from the head)
//   bos  - classic start: decode_step fed with the start marker
//   both - both heads, so either decoding mode is usable
enum class StartMode { lts, bos, both };

inline std::string to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }
inline std::string to_string(StartMode m) {
  switch (m) {
    case StartMode::lts: return "lts";
    case StartMode::bos: return "bos";
    default: return "both";
  }
}
inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  throw DataError("unknown optimizer '" + s + "'");
}
inline StartMode parse_start_mode(const std::string& s) {
  if (s == "lts") return StartMode::lts;
  if (s == "bos") return StartMode::bos;
  if (s == "both") return StartMode::both;
  throw DataError("unknown start mode '" + s + "'");
}

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs_general = 10;
  std::size_t epochs_persona = 8;
  double learning_rate = 0.5;
  Optimizer optimizer = Optimizer::sgd;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  double lts_weight = 1.0;
  StartMode start_mode = StartMode::lts;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::string checkpoint_path;  // empty: do not write

  void validate() const {
    require(batch_size >= 1, "train config: batch_size must be >= 1");
    require(clip_norm > 0, "train config: clip_norm must be > 0");
    require(learning_rate > 0, "train config: learning_rate must be > 0");
    require(lts_weight >= 0, "train config: lts_weight must be >= 0");
  }
};

struct TrainReport {
  std::vector<double> epoch_losses;
  std::string phase;
  double wall_seconds = 0;
  std::string checkpoint_path;
  std::size_t steps = 0;
  std::size_t truncated_responses = 0;
  double unknown_token_rate = 0;  // fraction of response tokens mapped to UNK
};

struct LossOptions {
  double lts_weight = 1.0;
  StartMode start_mode = StartMode::lts;
};

// Teacher-forced cross-entropy of one pair, EOS appended, averaged over the
// response length + 1. Responses longer than max_decode_length are cut and
// counted in *truncated.
template <std::floating_point Real>
Var<Real> pair_loss(Tape<Real>& tape, const ModelParameters<Real>& params, const EncodedPair& pair,
                    const LossOptions& options = {}, std::size_t* truncated = nullptr) {
  using namespace numerics;
  require(!pair.response.empty(), "pair_loss: empty response");
  const auto& cfg = params.config;
  for (TokenId id : pair.response)
    require(id < cfg.decoder_vocab_size, "pair_loss: response id " + std::to_string(id) + " outside decoder vocabulary");

  std::span<const TokenId> response(pair.response);
  if (response.size() > cfg.max_decode_length) {
    response = response.first(cfg.max_decode_length);
    if (truncated != nullptr) ++*truncated;
  }
  std::vector<TokenId> targets(response.begin(), response.end());
  targets.push_back(corpus::kEos);

  auto enc = model::encode(tape, params, pair.post);
  auto state = model::init_decoder(tape, params, enc);
  std::vector<Var<Real>> terms;
  terms.reserve(targets.size() + 1);

  const bool use_lts = options.start_mode != StartMode::bos;
  const bool use_bos = options.start_mode != StartMode::lts;
  if (use_lts) {
    Var<Real> first = cross_entropy(model::lts_first_word(tape, params, enc.summary), targets[0]);
    terms.push_back(scale(first, static_cast<Real>(options.lts_weight)));
  }
  std::size_t next = 1;
  if (use_bos) {
    state.prev_token = corpus::kBos;
    auto out = model::decode_step(tape, params, state, enc);
    terms.push_back(cross_entropy(softmax(out.logits), targets[0]));
    if (!use_lts) state = {out.hidden, 1, targets[0]};
  }
  if (use_lts) state.prev_token = targets[0];
  for (; next < targets.size(); ++next) {
    auto out = model::decode_step(tape, params, state, enc);
    terms.push_back(cross_entropy(softmax(out.logits), targets[next]));
    state = {out.hidden, state.step + 1, targets[next]};
  }
  return scale(sum(std::span<const Var<Real>>(terms)), Real(1) / static_cast<Real>(targets.size()));
}

// Mini-batch gradient descent over a fixed parameter set.
template <std::floating_point Real>
class Trainer {
 public:
  Trainer(ModelParameters<Real>& params, const TrainConfig& config) : params_(params), config_(config) {
    config_.validate();
    named_ = params_.named();
    if (config_.optimizer == Optimizer::adam) {
      for (auto& n : named_) {
        first_moment_.emplace_back(n.tensor->size(), 0.0);
        second_moment_.emplace_back(n.tensor->size(), 0.0);
      }
    }
  }

  // One update on `batch`; returns the batch mean loss before the update.
  double step(std::span<const EncodedPair* const> batch, std::size_t batch_index = 0) {
    require(!batch.empty(), "train step: empty batch");
    params_.zero_grad();
    const LossOptions options{config_.lts_weight, config_.start_mode};
    double total = 0;
    for (const EncodedPair* pair : batch) {
      Tape<Real> tape;
      Var<Real> loss;
      try {
        loss = pair_loss(tape, params_, *pair, options, &truncated_);
      } catch (const NumericError& e) {
        throw NumericError("non-finite loss in batch " + std::to_string(batch_index) + ": " + e.what());
      }
      const double value = static_cast<double>(loss.scalar());
      if (!std::isfinite(value))
        throw NumericError("non-finite loss in batch " + std::to_string(batch_index));
      total += value;
      tape.backward(loss);
      for (auto& n : named_) tape.accumulate_into(*n.tensor);
    }
    const Real inv = Real(1) / static_cast<Real>(batch.size());
    double norm_sq = 0;
    for (auto& n : named_)
      for (auto& g : n.tensor->grad) {
        g *= inv;
        norm_sq += static_cast<double>(g) * static_cast<double>(g);
      }
    const double norm = std::sqrt(norm_sq);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient in batch " + std::to_string(batch_index));
    const double clip = norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;
    apply_update(clip);
    ++steps_;
    return total / static_cast<double>(batch.size());
  }

  // Shuffled (seeded) pass; batches group pairs of similar response length.
  double epoch(std::span<const EncodedPair> pairs, std::mt19937_64& rng) {
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return pairs[a].response.size() < pairs[b].response.size();
    });
    std::vector<std::vector<const EncodedPair*>> batches;
    for (std::size_t i = 0; i < order.size(); i += config_.batch_size) {
      std::vector<const EncodedPair*> batch;
      for (std::size_t k = i; k < std::min(order.size(), i + config_.batch_size); ++k) batch.push_back(&pairs[order[k]]);
      batches.push_back(std::move(batch));
    }
    std::shuffle(batches.begin(), batches.end(), rng);
    double weighted = 0;
    for (std::size_t b = 0; b < batches.size(); ++b)
      weighted += step(batches[b], b) * static_cast<double>(batches[b].size());
    return weighted / static_cast<double>(pairs.size());
  }

  std::size_t steps() const { return steps_; }
  std::size_t truncated() const { return truncated_; }

 private:
  void apply_update(double clip) {
    const double lr = config_.learning_rate;
    if (config_.optimizer == Optimizer::sgd) {
      for (auto& n : named_) {
        auto& t = *n.tensor;
        for (std::size_t i = 0; i < t.size(); ++i) t.values[i] -= static_cast<Real>(lr * clip * t.grad[i]);
      }
      return;
    }
    const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
    const double step = static_cast<double>(steps_ + 1);
    const double correction1 = 1 - std::pow(b1, step), correction2 = 1 - std::pow(b2, step);
    for (std::size_t k = 0; k < named_.size(); ++k) {
      auto& t = *named_[k].tensor;
      auto& m = first_moment_[k];
      auto& v = second_moment_[k];
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double g = clip * static_cast<double>(t.grad[i]);
        m[i] = b1 * m[i] + (1 - b1) * g;
        v[i] = b2 * v[i] + (1 - b2) * g * g;
        const double update = lr * (m[i] / correction1) / (std::sqrt(v[i] / correction2) + config_.adam_epsilon);
        t.values[i] -= static_cast<Real>(update);
      }
    }
  }

  ModelParameters<Real>& params_;
  TrainConfig config_;
  std::vector<numerics::NamedTensor<Real>> named_;
  std::vector<std::vector<double>> first_moment_, second_moment_;
  std::size_t steps_ = 0;
  std::size_t truncated_ = 0;
};

namespace detail {

inline double unknown_rate(std::span<const EncodedPair> pairs) {
  std::size_t unk = 0, total = 0;
  for (const auto& p : pairs) {
    total += p.response.size();
    unk += static_cast<std::size_t>(std::count(p.response.begin(), p.response.end(), corpus::kUnk));
  }
  return total == 0 ? 0.0 : static_cast<double>(unk) / static_cast<double>(total);
}

template <std::floating_point Real>
void check_vocabulary(const Model<Real>& m, std::span<const EncodedPair> pairs) {
  for (const auto& p : pairs) {
    for (TokenId id : p.post)
      if (id >= m.encoder_vocab.size()) throw DataError("vocabulary mismatch: post id " + std::to_string(id) + " outside checkpoint encoder vocabulary");
    for (TokenId id : p.response)
      if (id >= m.decoder_vocab.size()) throw DataError("vocabulary mismatch: response id " + std::to_string(id) + " outside checkpoint decoder vocabulary");
  }
}

template <std::floating_point Real>
TrainReport run_phase(Model<Real>& m, std::span<const EncodedPair> pairs, const TrainConfig& config,
                      std::size_t epochs, const std::string& phase) {
  const auto start = std::chrono::steady_clock::now();
  check_vocabulary(m, pairs);
  TrainReport report;
  report.phase = phase;
  report.unknown_token_rate = unknown_rate(pairs);
  if (epochs > 0) {
    require(!pairs.empty(), "training: no pairs");
    Trainer<Real> trainer(m.params, config);
    std::mt19937_64 rng(config.seed);
    for (std::size_t e = 0; e < epochs; ++e) report.epoch_losses.push_back(trainer.epoch(pairs, rng));
    report.steps = trainer.steps();
    report.truncated_responses = trainer.truncated();
  }
  m.phase = phase;
  if (!config.checkpoint_path.empty()) {
    checkpoint::save(m, config.checkpoint_path);
    report.checkpoint_path = config.checkpoint_path;
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace detail

// Initialization phase on the general corpus.
template <std::floating_point Real>
TrainReport train_general(Model<Real>& m, std::span<const EncodedPair> pairs, const TrainConfig& config) {
  config.validate();
  require(config.epochs_general >= 1, "train_general: epochs must be >= 1");
  return detail::run_phase(m, pairs, config, config.epochs_general, "general");
}

template <std::floating_point Real>
TrainReport train_general(Model<Real>& m, const corpus::Corpus& general, const TrainConfig& config) {
  require(general.tag.is_general(), "train_general: corpus is not tagged general");
  auto pairs = corpus::encode_corpus(general, m.encoder_vocab, m.decoder_vocab);
  return train_general(m, std::span<const EncodedPair>(pairs), config);
}

// Adaptation phase: continues optimizing the same parameters on persona data.
template <std::floating_point Real>
TrainReport adapt_persona(Model<Real>& m, std::span<const EncodedPair> pairs, const corpus::SourceTag& persona,
                          const TrainConfig& config) {
  config.validate();
  require(m.phase == "general", "adapt_persona: model phase is '" + m.phase + "', expected general");
  require(!persona.is_general(), "adapt_persona: corpus must be tagged persona:<name>");
  return detail::run_phase(m, pairs, config, config.epochs_persona, persona.str());
}

template <std::floating_point Real>
TrainReport adapt_persona(Model<Real>& m, const corpus::Corpus& persona, const TrainConfig& config) {
  auto pairs = corpus::encode_corpus(persona, m.encoder_vocab, m.decoder_vocab);
  return adapt_persona(m, std::span<const EncodedPair>(pairs), persona.tag, config);
}

}  // namespace persona::training
