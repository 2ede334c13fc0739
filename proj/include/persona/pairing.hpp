#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "persona/corpus.hpp"

namespace persona::pairing {

using corpus::Corpus;

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct Posting {
  std::size_t doc;
  std::size_t tf;
};

// Inverted index over the responses of a general corpus. Document ids are
// pair positions in load order.
class ResponseIndex {
 public:
  static ResponseIndex build(const Corpus& general, Bm25Params params = {}) {
    require(!general.pairs.empty(), "build_index: empty corpus");
    require(params.k1 >= 0 && params.b >= 0 && params.b <= 1, "build_index: bad BM25 parameters");
    ResponseIndex index;
    index.params_ = params;
    std::size_t total = 0;
    for (std::size_t d = 0; d < general.pairs.size(); ++d) {
      const auto& response = general.pairs[d].response;
      std::map<std::string, std::size_t> tf;
      for (const auto& t : response) ++tf[t];
      for (const auto& [token, count] : tf) index.postings_[token].push_back({d, count});
      index.lengths_.push_back(response.size());
      total += response.size();
    }
    index.average_length_ = static_cast<double>(total) / static_cast<double>(general.pairs.size());
    return index;
  }

  std::size_t document_count() const { return lengths_.size(); }
  std::size_t document_length(std::size_t doc) const { return lengths_.at(doc); }
  double average_length() const { return average_length_; }
  const Bm25Params& params() const { return params_; }

  std::span<const Posting> postings(const std::string& token) const {
    auto it = postings_.find(token);
    if (it == postings_.end()) return {};
    return it->second;
  }
  std::size_t document_frequency(const std::string& token) const { return postings(token).size(); }

  double idf(const std::string& token) const {
    const double n = static_cast<double>(document_count());
    const double df = static_cast<double>(document_frequency(token));
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
  }

  // Contribution of one query term occurring tf times in a document.
  double term_score(double idf, std::size_t tf, std::size_t doc_length) const {
    const double f = static_cast<double>(tf);
    const double norm = params_.k1 * (1.0 - params_.b + params_.b * static_cast<double>(doc_length) / average_length_);
    return idf * f * (params_.k1 + 1.0) / (f + norm);
  }

 private:
  Bm25Params params_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::vector<std::size_t> lengths_;
  double average_length_ = 0;
};

inline ResponseIndex build_index(const Corpus& general, Bm25Params params = {}) {
  return ResponseIndex::build(general, params);
}

struct PersonaMessage {
  std::vector<std::string> tokens;
  std::string persona;
};

struct Match {
  std::size_t doc;
  double score;
  bool operator==(const Match&) const = default;
};

// Distinct query terms in lexicographic order, stoplisted terms removed.
inline std::vector<std::string> query_terms(const std::vector<std::string>& tokens,
                                            const std::unordered_set<std::string>& stoplist = {}) {
  std::vector<std::string> terms;
  for (const auto& t : tokens)
    if (!stoplist.contains(t)) terms.push_back(t);
  std::sort(terms.begin(), terms.end());
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
  return terms;
}

// BM25 over distinct query terms; best first, equal scores by smaller doc id.
inline std::vector<Match> match_message(const ResponseIndex& index, const std::vector<std::string>& tokens,
                                        std::size_t k, const std::unordered_set<std::string>& stoplist = {}) {
  require(k >= 1, "match_message: k must be >= 1");
  std::map<std::size_t, double> scores;
  for (const auto& term : query_terms(tokens, stoplist)) {
    const double idf = index.idf(term);
    for (const Posting& p : index.postings(term)) scores[p.doc] += index.term_score(idf, p.tf, index.document_length(p.doc));
  }
  std::vector<Match> ranked;
  ranked.reserve(scores.size());
  for (const auto& [doc, score] : scores) ranked.push_back({doc, score});
  const std::size_t keep = std::min(k, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep), ranked.end(),
                    [](const Match& a, const Match& b) { return a.score != b.score ? a.score > b.score : a.doc < b.doc; });
  ranked.resize(keep);
  return ranked;
}

inline std::vector<Match> match_message(const ResponseIndex& index, const PersonaMessage& message, std::size_t k,
                                        const std::unordered_set<std::string>& stoplist = {}) {
  return match_message(index, message.tokens, k, stoplist);
}

struct PersonaBuild {
  Corpus corpus;
  std::size_t skipped_unmatchable = 0;
  std::size_t dropped_stoplisted = 0;  // messages with nothing left after the stoplist
  std::vector<std::size_t> matched_docs;  // general doc id per produced pair
};

// Each matchable message becomes (post of its best-matching general response,
// message). Stoplisted tokens are ignored for matching; messages made only of
// stoplisted tokens are dropped.
inline PersonaBuild build_persona_corpus(const ResponseIndex& index, const std::vector<PersonaMessage>& messages,
                                         const Corpus& general, const std::unordered_set<std::string>& stoplist = {}) {
  require(!messages.empty(), "build_persona_corpus: no messages");
  require(index.document_count() == general.pairs.size(), "build_persona_corpus: index was built over another corpus");
  const std::string persona = messages.front().persona;
  PersonaBuild out;
  out.corpus.tag = corpus::SourceTag::persona(persona);
  out.corpus.stopwords = stoplist;
  for (const auto& message : messages) {
    require(message.persona == persona, "build_persona_corpus: messages from more than one persona");
    if (query_terms(message.tokens, stoplist).empty()) {
      ++out.dropped_stoplisted;
      continue;
    }
    auto best = match_message(index, message.tokens, 1, stoplist);
    if (best.empty()) {
      ++out.skipped_unmatchable;
      continue;
    }
    out.corpus.pairs.push_back({general.pairs[best[0].doc].post, message.tokens, out.corpus.tag});
    out.matched_docs.push_back(best[0].doc);
  }
  if (out.corpus.pairs.empty())
    throw DataError("no persona message matched the general corpus (" + std::to_string(out.skipped_unmatchable) +
                    " unmatchable, " + std::to_string(out.dropped_stoplisted) + " stoplisted)");
  return out;
}

// One whitespace-tokenized message per line; blank lines are ignored.
inline std::vector<PersonaMessage> parse_messages(std::istream& in, const std::string& persona) {
  require(!persona.empty(), "persona messages need a persona name");
  std::vector<PersonaMessage> out;
  std::string line;
  while (std::getline(in, line)) {
    auto tokens = corpus::tokenize(line);
    if (!tokens.empty()) out.push_back({std::move(tokens), persona});
  }
  return out;
}

inline std::vector<PersonaMessage> load_messages(const std::string& path, const std::string& persona) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open message file '" + path + "'");
  auto out = parse_messages(in, persona);
  if (out.empty()) throw DataError("message file '" + path + "' has no messages");
  return out;
}

}  // namespace persona::pairing
