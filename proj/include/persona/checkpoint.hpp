#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/model.hpp"

namespace persona::checkpoint {

// Layout: 8-byte magic, u64 little-endian header length, JSON manifest, then
// each tensor as raw little-endian IEEE values in manifest order.
inline constexpr char kMagic[8] = {'P', 'R', 'S', 'N', 'C', 'K', 'P', 'T'};
inline constexpr int kFormatVersion = 1;

namespace detail {

template <class T>
void write_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw DataError("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

struct Header {
  nlohmann::json manifest;
  model::Precision precision;
};

inline Header read_header(std::istream& in, const std::string& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw DataError("checkpoint: '" + path + "' is not a checkpoint file");
  const auto length = read_le<std::uint64_t>(in);
  if (length > (1ull << 31)) throw DataError("checkpoint: implausible header length");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw DataError("checkpoint: truncated header");
  Header h;
  try {
    h.manifest = nlohmann::json::parse(text);
    if (h.manifest.at("version").get<int>() != kFormatVersion) throw DataError("checkpoint: unsupported format version");
    h.precision = model::parse_precision(h.manifest.at("precision").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  return h;
}

}  // namespace detail

template <std::floating_point Real>
nlohmann::json manifest(const model::Model<Real>& m) {
  nlohmann::json tensors = nlohmann::json::array();
  m.params.for_each([&](const std::string& name, const numerics::Tensor<Real>& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape}});
  });
  return {{"format", "persona-checkpoint"},
          {"version", kFormatVersion},
          {"precision", model::to_string(model::precision_of<Real>())},
          {"config", m.params.config},
          {"seed", m.seed},
          {"phase", m.phase},
          {"encoder_vocab", m.encoder_vocab.all_tokens()},
          {"decoder_vocab", m.decoder_vocab.all_tokens()},
          {"tensors", tensors}};
}

template <std::floating_point Real>
void save(const model::Model<Real>& m, std::ostream& out) {
  const std::string header = manifest(m).dump();
  out.write(kMagic, 8);
  detail::write_le<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  m.params.for_each([&](const std::string&, const numerics::Tensor<Real>& t) {
    for (Real v : t.values) detail::write_le<Real>(out, v);
  });
}

template <std::floating_point Real>
void save(const model::Model<Real>& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write '" + path + "'");
  save(m, out);
  if (!out) throw DataError("checkpoint: write failed for '" + path + "'");
}

inline model::Precision peek_precision(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  return detail::read_header(in, path).precision;
}

// A float32 checkpoint may be widened into a double model; narrowing is refused.
template <std::floating_point Real>
model::Model<Real> load(std::istream& in, const std::string& path = "<stream>") {
  auto header = detail::read_header(in, path);
  const auto& mf = header.manifest;
  if (header.precision == model::Precision::float64 && model::precision_of<Real>() == model::Precision::float32)
    throw DataError("checkpoint: cannot load a float64 checkpoint at float32 precision");

  model::Model<Real> m;
  try {
    auto config = mf.at("config").get<model::ModelConfig>();
    config.precision = model::precision_of<Real>();
    m.params = model::ModelParameters<Real>::create(config);
    m.encoder_vocab = corpus::Vocabulary::from_tokens(mf.at("encoder_vocab").get<std::vector<std::string>>());
    m.decoder_vocab = corpus::Vocabulary::from_tokens(mf.at("decoder_vocab").get<std::vector<std::string>>());
    m.phase = mf.at("phase").get<std::string>();
    m.seed = mf.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad manifest: ") + e.what());
  } catch (const ContractViolation& e) {
    throw DataError(std::string("checkpoint: inconsistent manifest: ") + e.what());
  }
  if (m.encoder_vocab.size() != m.params.config.encoder_vocab_size ||
      m.decoder_vocab.size() != m.params.config.decoder_vocab_size)
    throw DataError("checkpoint: vocabulary sizes disagree with config");

  const auto& listed = mf.at("tensors");
  std::size_t k = 0;
  m.params.for_each([&](const std::string& name, numerics::Tensor<Real>& t) {
    if (k >= listed.size() || listed[k].at("name") != name ||
        listed[k].at("shape").get<std::vector<std::size_t>>() != t.shape)
      throw DataError("checkpoint: tensor manifest mismatch at '" + name + "'");
    ++k;
    for (auto& v : t.values) {
      if (header.precision == model::Precision::float32) {
        v = static_cast<Real>(detail::read_le<float>(in));
      } else {
        v = static_cast<Real>(detail::read_le<double>(in));
      }
    }
  });
  if (k != listed.size()) throw DataError("checkpoint: unexpected extra tensors");
  return m;
}

template <std::floating_point Real>
model::Model<Real> load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  return load<Real>(in, path);
}

}  // namespace persona::checkpoint
