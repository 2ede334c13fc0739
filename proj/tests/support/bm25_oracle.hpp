#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "persona/pairing.hpp"

namespace oracle {

using persona::corpus::Corpus;
using persona::pairing::Match;

// Scores every document directly from the raw responses.
inline std::vector<Match> brute_force_rank(const Corpus& general, const std::vector<std::string>& query, double k1 = 1.2,
                                    double b = 0.75) {
  const double n = static_cast<double>(general.pairs.size());
  double total_len = 0;
  for (const auto& p : general.pairs) total_len += static_cast<double>(p.response.size());
  const double avg = total_len / n;
  std::set<std::string> terms(query.begin(), query.end());
  std::vector<Match> out;
  for (std::size_t d = 0; d < general.pairs.size(); ++d) {
    const auto& resp = general.pairs[d].response;
    double score = 0;
    bool any = false;
    for (const auto& term : terms) {
      const auto tf = static_cast<double>(std::count(resp.begin(), resp.end(), term));
      if (tf == 0) continue;
      any = true;
      double df = 0;
      for (const auto& other : general.pairs)
        if (std::find(other.response.begin(), other.response.end(), term) != other.response.end()) df += 1;
      const double idf = std::log(1 + (n - df + 0.5) / (df + 0.5));
      score += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * static_cast<double>(resp.size()) / avg));
    }
    if (any) out.push_back({d, score});
  }
  std::stable_sort(out.begin(), out.end(), [](const Match& a, const Match& c) { return a.score > c.score; });
  return out;
}

}  // namespace oracle
