#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "persona/error.hpp"

namespace persona::corpus {

using TokenId = std::uint32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kReservedCount = 4;

inline const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> tokens{"<pad>", "</s>", "<eos>", "<unk>"};
  return tokens;
}

enum class Side { encoder, decoder };

struct SourceTag {
  enum class Kind { general, persona };
  Kind kind = Kind::general;
  std::string name;  // persona name; empty for general

  static SourceTag general() { return {}; }
  static SourceTag persona(std::string name) {
    require(!name.empty(), "persona tag needs a name");
    return {Kind::persona, std::move(name)};
  }
  static SourceTag parse(std::string_view text) {
    if (text == "general") return general();
    constexpr std::string_view prefix = "persona:";
    if (text.starts_with(prefix) && text.size() > prefix.size()) return persona(std::string(text.substr(prefix.size())));
    throw DataError("unknown source tag '" + std::string(text) + "'");
  }
  std::string str() const { return kind == Kind::general ? "general" : "persona:" + name; }
  bool is_general() const { return kind == Kind::general; }
  bool operator==(const SourceTag&) const = default;
};

struct DialoguePair {
  std::vector<std::string> post;
  std::vector<std::string> response;
  SourceTag source;
};

struct Corpus {
  std::vector<DialoguePair> pairs;
  std::unordered_set<std::string> stopwords;  // consumed by metrics only
  SourceTag tag;
  std::size_t dropped_duplicates = 0;
};

// Splits on ASCII whitespace; leading/trailing/repeated whitespace vanish.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !space(text[i])) ++i;
    if (i > start) tokens.emplace_back(text.substr(start, i - start));
  }
  return tokens;
}

inline std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

// Reads JSONL {"post": ..., "response": ...}. In a general corpus a post may
// occur only once; later duplicates are dropped and counted.
inline Corpus parse_corpus(std::istream& in, const SourceTag& tag) {
  Corpus corpus;
  corpus.tag = tag;
  std::unordered_set<std::string> seen_posts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (tokenize(line).empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw DataError(where + "malformed JSON");
    }
    if (!obj.is_object()) throw DataError(where + "expected a JSON object");
    DialoguePair pair;
    pair.source = tag;
    for (const char* field : {"post", "response"}) {
      auto it = obj.find(field);
      if (it == obj.end()) throw DataError(where + "missing field \"" + field + "\"");
      if (!it->is_string()) throw DataError(where + "field \"" + field + "\" must be a string");
      auto tokens = tokenize(it->get<std::string>());
      if (tokens.empty()) throw DataError(where + "empty " + field);
      (std::string_view(field) == "post" ? pair.post : pair.response) = std::move(tokens);
    }
    if (tag.is_general() && !seen_posts.insert(join(pair.post)).second) {
      ++corpus.dropped_duplicates;
      continue;
    }
    corpus.pairs.push_back(std::move(pair));
  }
  if (corpus.pairs.empty()) throw DataError("corpus contains no pairs");
  return corpus;
}

inline Corpus load_corpus(const std::string& path, const SourceTag& tag) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file '" + path + "'");
  return parse_corpus(in, tag);
}

inline void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& p : corpus.pairs) out << nlohmann::json{{"post", join(p.post)}, {"response", join(p.response)}}.dump() << '\n';
}

// One token per line.
inline std::unordered_set<std::string> load_stoplist(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open stoplist '" + path + "'");
  std::unordered_set<std::string> words;
  std::string line;
  while (std::getline(in, line))
    for (auto& t : tokenize(line)) words.insert(std::move(t));
  return words;
}

// Drops persona pairs whose response consists only of stoplisted tokens
// (greetings and other content-free messages).
inline std::size_t drop_stoplisted(Corpus& corpus, const std::unordered_set<std::string>& stoplist) {
  const auto before = corpus.pairs.size();
  std::erase_if(corpus.pairs, [&](const DialoguePair& p) {
    return std::all_of(p.response.begin(), p.response.end(), [&](const std::string& t) { return stoplist.contains(t); });
  });
  return before - corpus.pairs.size();
}

class Vocabulary {
 public:
  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  // `words` excludes the reserved tokens, which always occupy ids 0..3.
  explicit Vocabulary(const std::vector<std::string>& words) {
    tokens_ = reserved_tokens();
    for (const auto& w : words) {
      require(std::find(reserved_tokens().begin(), reserved_tokens().end(), w) == reserved_tokens().end(),
              "vocabulary: reserved token '" + w + "' listed as a word");
      tokens_.push_back(w);
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      require(ids_.emplace(tokens_[i], static_cast<TokenId>(i)).second, "vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }

  // Inverse of all_tokens(): validates that the reserved prefix is intact.
  static Vocabulary from_tokens(const std::vector<std::string>& all) {
    if (all.size() < kReservedCount || !std::equal(reserved_tokens().begin(), reserved_tokens().end(), all.begin()))
      throw DataError("vocabulary: reserved tokens missing or reordered");
    return Vocabulary(std::vector<std::string>(all.begin() + kReservedCount, all.end()));
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& all_tokens() const { return tokens_; }

  TokenId id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& token) const { return ids_.contains(token); }
  const std::string& token_of(TokenId id) const {
    require(id < tokens_.size(), "vocabulary: id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

// Encoder side counts post tokens, decoder side response tokens. Frequency
// descending, ties lexicographic, at most max_size entries including the
// four reserved ones.
inline Vocabulary build_vocabulary(const Corpus& corpus, Side side, std::size_t min_count = 1,
                                   std::size_t max_size = 35000) {
  require(max_size >= kReservedCount + 1, "build_vocabulary: max_size must be at least 5");
  require(!corpus.pairs.empty(), "build_vocabulary: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& p : corpus.pairs)
    for (const auto& t : side == Side::encoder ? p.post : p.response) ++counts[t];
  for (const auto& r : reserved_tokens()) counts.erase(r);

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [token, n] : counts)
    if (n >= min_count) ranked.emplace_back(token, n);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_size - kReservedCount) ranked.resize(max_size - kReservedCount);

  std::vector<std::string> words;
  words.reserve(ranked.size());
  for (auto& [token, n] : ranked) words.push_back(token);
  return Vocabulary(words);
}

inline std::vector<TokenId> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id_of(t));
  return ids;
}

// PAD ids are dropped.
inline std::vector<std::string> decode(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::vector<std::string> tokens;
  for (TokenId id : ids) {
    const std::string& t = vocab.token_of(id);
    if (id != kPad) tokens.push_back(t);
  }
  return tokens;
}

struct EncodedPair {
  std::vector<TokenId> post;
  std::vector<TokenId> response;
};

inline std::vector<EncodedPair> encode_corpus(const Corpus& corpus, const Vocabulary& encoder_vocab,
                                              const Vocabulary& decoder_vocab) {
  std::vector<EncodedPair> out;
  out.reserve(corpus.pairs.size());
  for (const auto& p : corpus.pairs) out.push_back({encode(p.post, encoder_vocab), encode(p.response, decoder_vocab)});
  return out;
}

}  // namespace persona::corpus
