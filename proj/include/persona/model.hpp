#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/corpus.hpp"
#include "persona/numerics.hpp"

namespace persona::model {

using corpus::TokenId;
using numerics::NamedTensor;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

enum class Precision { float32, float64 };
enum class SummaryMode { mean, last };

template <std::floating_point Real>
constexpr Precision precision_of() {
  return sizeof(Real) == sizeof(float) ? Precision::float32 : Precision::float64;
}

inline std::string to_string(Precision p) { return p == Precision::float32 ? "float32" : "float64"; }
inline std::string to_string(SummaryMode m) { return m == SummaryMode::mean ? "mean" : "last"; }

inline Precision parse_precision(const std::string& s) {
  if (s == "float32" || s == "float") return Precision::float32;
  if (s == "float64" || s == "double") return Precision::float64;
  throw DataError("unknown precision '" + s + "'");
}
inline SummaryMode parse_summary(const std::string& s) {
  if (s == "mean") return SummaryMode::mean;
  if (s == "last") return SummaryMode::last;
  throw DataError("unknown summary mode '" + s + "'");
}

struct ModelConfig {
  std::size_t encoder_vocab_size = 0;
  std::size_t decoder_vocab_size = 0;
  std::size_t embedding_dim = 500;
  std::size_t hidden_dim = 1024;
  std::size_t alignment_dim = 1024;
  std::size_t maxout_pool_size = 2;
  std::size_t max_decode_length = 30;
  Precision precision = Precision::float64;
  SummaryMode summary = SummaryMode::mean;

  void validate() const {
    require(encoder_vocab_size >= 1 && decoder_vocab_size >= 1, "model config: vocabulary sizes must be >= 1");
    require(embedding_dim >= 1 && hidden_dim >= 1 && alignment_dim >= 1, "model config: dimensions must be >= 1");
    require(maxout_pool_size >= 2, "model config: maxout pool size must be >= 2");
    require(max_decode_length >= 1, "model config: max_decode_length must be >= 1");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder_vocab_size", c.encoder_vocab_size}, {"decoder_vocab_size", c.decoder_vocab_size},
       {"embedding_dim", c.embedding_dim},           {"hidden_dim", c.hidden_dim},
       {"alignment_dim", c.alignment_dim},           {"maxout_pool_size", c.maxout_pool_size},
       {"max_decode_length", c.max_decode_length},   {"precision", to_string(c.precision)},
       {"summary", to_string(c.summary)}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("encoder_vocab_size").get_to(c.encoder_vocab_size);
  j.at("decoder_vocab_size").get_to(c.decoder_vocab_size);
  j.at("embedding_dim").get_to(c.embedding_dim);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("alignment_dim").get_to(c.alignment_dim);
  j.at("maxout_pool_size").get_to(c.maxout_pool_size);
  j.at("max_decode_length").get_to(c.max_decode_length);
  c.precision = parse_precision(j.at("precision").get<std::string>());
  c.summary = parse_summary(j.at("summary").get<std::string>());
}

template <std::floating_point Real>
struct GruCell {
  Tensor<Real> input_update, hidden_update, bias_update;
  Tensor<Real> input_reset, hidden_reset, bias_reset;
  Tensor<Real> input_candidate, hidden_candidate, bias_candidate;

  static GruCell create(std::size_t input_dim, std::size_t hidden_dim) {
    auto w = [&] { return Tensor<Real>::zeros({hidden_dim, input_dim}); };
    auto u = [&] { return Tensor<Real>::zeros({hidden_dim, hidden_dim}); };
    auto b = [&] { return Tensor<Real>::zeros({hidden_dim}); };
    return {w(), u(), b(), w(), u(), b(), w(), u(), b()};
  }

  std::size_t input_dim() const { return input_update.cols(); }
  std::size_t hidden_dim() const { return input_update.rows(); }

  template <class Self, class Fn>
  static void visit(Self& self, const std::string& prefix, Fn&& fn) {
    fn(prefix + ".W_z", self.input_update);
    fn(prefix + ".U_z", self.hidden_update);
    fn(prefix + ".b_z", self.bias_update);
    fn(prefix + ".W_r", self.input_reset);
    fn(prefix + ".U_r", self.hidden_reset);
    fn(prefix + ".b_r", self.bias_reset);
    fn(prefix + ".W_h", self.input_candidate);
    fn(prefix + ".U_h", self.hidden_candidate);
    fn(prefix + ".b_h", self.bias_candidate);
  }
};

// Every learnable tensor of the encoder-decoder. Names are stable and form
// the checkpoint manifest.
template <std::floating_point Real>
struct ModelParameters {
  ModelConfig config;

  Tensor<Real> encoder_embedding;  // enc_vocab x emb
  Tensor<Real> decoder_embedding;  // dec_vocab x emb; also the E of the first-word head
  GruCell<Real> encoder_cell;      // input emb
  GruCell<Real> decoder_cell;      // input [emb ; hidden]
  Tensor<Real> init_weight, init_bias;
  // Additive alignment: v . tanh(W s + U h + b)
  Tensor<Real> align_state, align_annotation, align_bias, align_score;
  // Maxout output over [s_t ; emb(prev) ; c_t]
  Tensor<Real> output_weight, output_bias;
  // First-word head: softmax(E (sigmoid(W_i c) + b_i) + b_e)
  Tensor<Real> lts_weight, lts_bias, lts_vocab_bias;

  static ModelParameters create(const ModelConfig& config) {
    config.validate();
    require(config.precision == precision_of<Real>(), "model: config precision does not match the numeric type");
    const auto emb = config.embedding_dim, hid = config.hidden_dim, aln = config.alignment_dim;
    const auto enc_v = config.encoder_vocab_size, dec_v = config.decoder_vocab_size;
    ModelParameters p;
    p.config = config;
    p.encoder_embedding = Tensor<Real>::zeros({enc_v, emb});
    p.decoder_embedding = Tensor<Real>::zeros({dec_v, emb});
    p.encoder_cell = GruCell<Real>::create(emb, hid);
    p.decoder_cell = GruCell<Real>::create(emb + hid, hid);
    p.init_weight = Tensor<Real>::zeros({hid, hid});
    p.init_bias = Tensor<Real>::zeros({hid});
    p.align_state = Tensor<Real>::zeros({aln, hid});
    p.align_annotation = Tensor<Real>::zeros({aln, hid});
    p.align_bias = Tensor<Real>::zeros({aln});
    p.align_score = Tensor<Real>::zeros({aln});
    p.output_weight = Tensor<Real>::zeros({config.maxout_pool_size * dec_v, hid + emb + hid});
    p.output_bias = Tensor<Real>::zeros({config.maxout_pool_size * dec_v});
    p.lts_weight = Tensor<Real>::zeros({emb, hid});
    p.lts_bias = Tensor<Real>::zeros({emb});
    p.lts_vocab_bias = Tensor<Real>::zeros({dec_v});
    return p;
  }

  // uniform(-scale, scale) over every tensor, in manifest order.
  void initialize(std::uint64_t seed, Real scale = Real(0.08)) {
    std::mt19937_64 rng(seed);
    for_each([&](const std::string&, Tensor<Real>& t) { t.fill_uniform(rng, -scale, scale); });
  }

  template <class Fn>
  void for_each(Fn&& fn) { visit(*this, fn); }
  template <class Fn>
  void for_each(Fn&& fn) const { visit(*this, fn); }

  std::vector<NamedTensor<Real>> named() {
    std::vector<NamedTensor<Real>> out;
    for_each([&](const std::string& name, Tensor<Real>& t) { out.push_back({name, &t}); });
    return out;
  }

  void zero_grad() {
    for_each([](const std::string&, Tensor<Real>& t) { t.zero_grad(); });
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor<Real>& t) { n += t.size(); });
    return n;
  }

 private:
  template <class Self, class Fn>
  static void visit(Self& self, Fn&& fn) {
    fn("encoder.embedding", self.encoder_embedding);
    fn("decoder.embedding", self.decoder_embedding);
    GruCell<Real>::visit(self.encoder_cell, "encoder.gru", fn);
    GruCell<Real>::visit(self.decoder_cell, "decoder.gru", fn);
    fn("decoder.init.W", self.init_weight);
    fn("decoder.init.b", self.init_bias);
    fn("attention.W", self.align_state);
    fn("attention.U", self.align_annotation);
    fn("attention.b", self.align_bias);
    fn("attention.v", self.align_score);
    fn("output.W", self.output_weight);
    fn("output.b", self.output_bias);
    fn("lts.W_i", self.lts_weight);
    fn("lts.b_i", self.lts_bias);
    fn("lts.b_e", self.lts_vocab_bias);
  }
};

// Same parameters at another floating-point width.
template <std::floating_point To, std::floating_point From>
ModelParameters<To> convert_parameters(const ModelParameters<From>& from) {
  auto to = ModelParameters<To>::create(from.config);
  std::vector<const Tensor<From>*> source;
  from.for_each([&](const std::string&, const Tensor<From>& t) { source.push_back(&t); });
  std::size_t k = 0;
  to.for_each([&](const std::string&, Tensor<To>& t) {
    const auto& src = *source[k++];
    for (std::size_t i = 0; i < t.size(); ++i) t.values[i] = static_cast<To>(src.values[i]);
  });
  return to;
}

template <std::floating_point Real>
struct EncoderOutput {
  std::vector<Var<Real>> annotations;
  Var<Real> summary;
  std::vector<Var<Real>> keys;  // U h_j + b, cached for attention
};

template <std::floating_point Real>
struct DecoderState {
  Var<Real> hidden;
  std::size_t step = 0;
  TokenId prev_token = corpus::kBos;
};

template <std::floating_point Real>
struct Attention {
  Var<Real> context;
  Var<Real> weights;
};

template <std::floating_point Real>
struct StepOutput {
  Var<Real> logits;
  Var<Real> hidden;
  Attention<Real> attention;
};

namespace detail {

template <std::floating_point Real>
Var<Real> affine(Tape<Real>& tape, const Tensor<Real>& w, Var<Real> x, const Tensor<Real>& u, Var<Real> h,
                 const Tensor<Real>& b) {
  return numerics::add(numerics::add(numerics::matvec(tape.param(w), x), numerics::matvec(tape.param(u), h)),
                       tape.param(b));
}

}  // namespace detail

template <std::floating_point Real>
Var<Real> gru_step(Tape<Real>& tape, const GruCell<Real>& cell, Var<Real> h_prev, Var<Real> x) {
  using namespace numerics;
  require(x.size() == cell.input_dim() && h_prev.size() == cell.hidden_dim(), "gru_step: dimension mismatch");
  Var<Real> z = sigmoid(detail::affine(tape, cell.input_update, x, cell.hidden_update, h_prev, cell.bias_update));
  Var<Real> r = sigmoid(detail::affine(tape, cell.input_reset, x, cell.hidden_reset, h_prev, cell.bias_reset));
  Var<Real> candidate = numerics::tanh(
      detail::affine(tape, cell.input_candidate, x, cell.hidden_candidate, mul(r, h_prev), cell.bias_candidate));
  return add(mul(one_minus(z), candidate), mul(z, h_prev));
}

template <std::floating_point Real>
EncoderOutput<Real> encode(Tape<Real>& tape, const ModelParameters<Real>& params, std::span<const TokenId> post) {
  using namespace numerics;
  if (post.empty()) throw DataError("empty post");
  const auto& cfg = params.config;
  EncoderOutput<Real> out;
  Var<Real> h = tape.constant(std::vector<Real>(cfg.hidden_dim, Real(0)));
  Var<Real> table = tape.param(params.encoder_embedding);
  for (TokenId id : post) {
    require(id < cfg.encoder_vocab_size, "encode: token id " + std::to_string(id) + " outside encoder vocabulary");
    h = gru_step(tape, params.encoder_cell, h, lookup(table, id));
    out.annotations.push_back(h);
  }
  out.summary = cfg.summary == SummaryMode::mean
                    ? mean(std::span<const Var<Real>>(out.annotations))
                    : out.annotations.back();
  Var<Real> u = tape.param(params.align_annotation);
  Var<Real> b = tape.param(params.align_bias);
  for (auto a : out.annotations) out.keys.push_back(add(matvec(u, a), b));
  return out;
}

// e_j = v . tanh(W s_prev + U h_j + b); alpha = softmax(e); c = sum_j alpha_j h_j
template <std::floating_point Real>
Attention<Real> attend(Tape<Real>& tape, const ModelParameters<Real>& params, Var<Real> s_prev,
                       const EncoderOutput<Real>& enc) {
  using namespace numerics;
  require(!enc.annotations.empty(), "attend: no annotations");
  Var<Real> query = matvec(tape.param(params.align_state), s_prev);
  Var<Real> v = tape.param(params.align_score);
  std::vector<Var<Real>> scores;
  scores.reserve(enc.keys.size());
  for (auto key : enc.keys) scores.push_back(dot(v, numerics::tanh(add(query, key))));
  Var<Real> weights = softmax(concat(std::span<const Var<Real>>(scores)));
  return {weighted_sum(weights, std::span<const Var<Real>>(enc.annotations)), weights};
}

// s_0 = tanh(W_init summary + b_init)
template <std::floating_point Real>
DecoderState<Real> init_decoder(Tape<Real>& tape, const ModelParameters<Real>& params, const EncoderOutput<Real>& enc) {
  using namespace numerics;
  Var<Real> s0 = numerics::tanh(add(matvec(tape.param(params.init_weight), enc.summary), tape.param(params.init_bias)));
  return {s0, 0, corpus::kBos};
}

template <std::floating_point Real>
Var<Real> lts_logits(Tape<Real>& tape, const ModelParameters<Real>& params, Var<Real> context) {
  using namespace numerics;
  require(context.size() == params.config.hidden_dim, "lts: context dimension mismatch");
  Var<Real> gate = add(sigmoid(matvec(tape.param(params.lts_weight), context)), tape.param(params.lts_bias));
  return add(matvec(tape.param(params.decoder_embedding), gate), tape.param(params.lts_vocab_bias));
}

// First-word distribution over the decoder vocabulary, conditioned on the
// encoder summary.
template <std::floating_point Real>
Var<Real> lts_first_word(Tape<Real>& tape, const ModelParameters<Real>& params, Var<Real> context) {
  return numerics::softmax(lts_logits(tape, params, context));
}

template <std::floating_point Real>
StepOutput<Real> decode_step(Tape<Real>& tape, const ModelParameters<Real>& params, const DecoderState<Real>& state,
                             const EncoderOutput<Real>& enc) {
  using namespace numerics;
  const auto& cfg = params.config;
  require(state.prev_token < cfg.decoder_vocab_size,
          "decode_step: token id " + std::to_string(state.prev_token) + " outside decoder vocabulary");
  Attention<Real> att = attend(tape, params, state.hidden, enc);
  Var<Real> prev = lookup(tape.param(params.decoder_embedding), state.prev_token);
  Var<Real> s = gru_step(tape, params.decoder_cell, state.hidden, concat<Real>({prev, att.context}));
  Var<Real> u = add(matvec(tape.param(params.output_weight), concat<Real>({s, prev, att.context})),
                    tape.param(params.output_bias));
  return {maxout(u, cfg.maxout_pool_size), s, att};
}

// Parameters plus the vocabularies and provenance needed to use them.
template <std::floating_point Real>
struct Model {
  ModelParameters<Real> params;
  corpus::Vocabulary encoder_vocab;
  corpus::Vocabulary decoder_vocab;
  std::string phase = "init";  // init | general | persona:<name>
  std::uint64_t seed = 0;

  static Model create(ModelConfig config, corpus::Vocabulary enc, corpus::Vocabulary dec, std::uint64_t seed) {
    config.encoder_vocab_size = enc.size();
    config.decoder_vocab_size = dec.size();
    Model m{ModelParameters<Real>::create(config), std::move(enc), std::move(dec), "init", seed};
    m.params.initialize(seed);
    return m;
  }

  const ModelConfig& config() const { return params.config; }
};

}  // namespace persona::model
