#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "persona/checkpoint.hpp"
#include "persona/model.hpp"

namespace fixtures {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("persona-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

// Small random model over words p0..p(n-1) / r0..r(n-1).
inline persona::model::Model<double> tiny_model(std::uint64_t seed, std::size_t words = 8, double scale = 0.8) {
  persona::model::ModelConfig c;
  c.embedding_dim = 4;
  c.hidden_dim = 6;
  c.alignment_dim = 5;
  c.max_decode_length = 5;
  std::vector<std::string> enc, dec;
  for (std::size_t i = 0; i < words; ++i) {
    enc.push_back("p" + std::to_string(i));
    dec.push_back("r" + std::to_string(i));
  }
  auto m = persona::model::Model<double>::create(c, persona::corpus::Vocabulary(enc), persona::corpus::Vocabulary(dec), seed);
  m.params.initialize(seed, scale);
  m.phase = "persona:test";
  return m;
}

}  // namespace fixtures
