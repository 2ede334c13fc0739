#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "persona/error.hpp"

namespace persona::metrics {

using Tokens = std::vector<std::string>;
using Stopwords = std::unordered_set<std::string>;

struct ImitationStats {
  std::size_t n_gr = 0;    // bot responses judged
  std::size_t n_imi = 0;   // of those, judged as the volunteer's
  std::size_t n_vr = 0;    // volunteer responses
  std::size_t n_test = 0;  // posts

  void validate() const { require(n_imi <= n_gr, "imitation stats: n_imi exceeds n_gr"); }
  bool balanced() const { return n_gr + n_vr == n_test; }

  ImitationStats& operator+=(const ImitationStats& o) {
    n_gr += o.n_gr;
    n_imi += o.n_imi;
    n_vr += o.n_vr;
    n_test += o.n_test;
    return *this;
  }
  bool operator==(const ImitationStats&) const = default;
};

class UndefinedRate : public DataError {
 public:
  UndefinedRate() : DataError("imitation rate undefined: no bot-generated responses (n_gr = 0)") {}
};

inline double imitation_rate(std::size_t n_imi, std::size_t n_gr) {
  require(n_imi <= n_gr, "imitation rate: n_imi exceeds n_gr");
  if (n_gr == 0) throw UndefinedRate();
  return static_cast<double>(n_imi) / static_cast<double>(n_gr);
}

inline double imitation_rate(const ImitationStats& s) { return imitation_rate(s.n_imi, s.n_gr); }

inline std::string format_fixed(double value, int decimals) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(decimals) << value;
  return out.str();
}

inline std::string format_percent(double ratio, int decimals = 2) { return format_fixed(100.0 * ratio, decimals) + "%"; }

// "37.93%" or "N/A" when the rate is undefined.
inline std::string format_rate(const ImitationStats& s, int decimals = 2) {
  if (s.n_gr == 0) return "N/A";
  return format_percent(imitation_rate(s), decimals);
}

struct LexicalDistribution {
  std::map<std::string, double> probabilities;
  std::size_t total_tokens = 0;

  std::size_t vocabulary_size() const { return probabilities.size(); }
  double probability(const std::string& token) const {
    auto it = probabilities.find(token);
    return it == probabilities.end() ? 0.0 : it->second;
  }
};

inline LexicalDistribution lexical_distribution(const std::vector<Tokens>& responses, const Stopwords& stopwords = {}) {
  std::map<std::string, std::size_t> counts;
  LexicalDistribution d;
  for (const auto& r : responses)
    for (const auto& t : r)
      if (!stopwords.contains(t)) {
        ++counts[t];
        ++d.total_tokens;
      }
  if (d.total_tokens == 0) throw DataError("lexical distribution: no tokens left after stopword removal");
  for (const auto& [token, c] : counts)
    d.probabilities[token] = static_cast<double>(c) / static_cast<double>(d.total_tokens);
  return d;
}

// Jensen-Shannon divergence in nats over the union support.
inline double jensen_shannon(const LexicalDistribution& p, const LexicalDistribution& q) {
  std::set<std::string> support;
  for (const auto& [t, v] : p.probabilities) support.insert(t);
  for (const auto& [t, v] : q.probabilities) support.insert(t);
  double kl_p = 0, kl_q = 0;
  for (const auto& t : support) {
    const double a = p.probability(t), b = q.probability(t), m = 0.5 * (a + b);
    if (a > 0) kl_p += a * std::log(a / m);
    if (b > 0) kl_q += b * std::log(b / m);
  }
  return std::clamp(0.5 * kl_p + 0.5 * kl_q, 0.0, std::log(2.0));
}

enum class OverlapMode {
  containment,  // |M ∩ V| / |M|: share of the model's lexicon found in the volunteer's
  jaccard       // |M ∩ V| / |M ∪ V|
};

inline std::string to_string(OverlapMode m) { return m == OverlapMode::containment ? "containment" : "jaccard"; }
inline OverlapMode parse_overlap_mode(const std::string& s) {
  if (s == "containment") return OverlapMode::containment;
  if (s == "jaccard") return OverlapMode::jaccard;
  throw DataError("unknown overlap mode '" + s + "'");
}

inline std::set<std::string> content_words(const std::vector<Tokens>& responses, const Stopwords& stopwords) {
  std::set<std::string> words;
  for (const auto& r : responses)
    for (const auto& t : r)
      if (!stopwords.contains(t)) words.insert(t);
  return words;
}

// Percentage in [0, 100].
inline double overlap_percentage(const std::vector<Tokens>& volunteer, const std::vector<Tokens>& model,
                                 const Stopwords& stopwords = {}, OverlapMode mode = OverlapMode::containment) {
  const auto v = content_words(volunteer, stopwords);
  const auto m = content_words(model, stopwords);
  if (v.empty()) throw DataError("overlap: volunteer responses have no content words");
  if (m.empty()) throw DataError("overlap: model responses have no content words");
  std::size_t shared = 0;
  for (const auto& t : m) shared += v.contains(t) ? 1 : 0;
  const std::size_t denominator = mode == OverlapMode::containment ? m.size() : v.size() + m.size() - shared;
  return 100.0 * static_cast<double>(shared) / static_cast<double>(denominator);
}

struct PersonaResponses {
  std::string name;
  std::vector<Tokens> volunteer;
  std::vector<Tokens> model;
};

// cells[i][j]: volunteer i against model j.
struct OverlapMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<double>> cells;
  std::vector<bool> diagonal_is_row_max;  // strictly greater than every other cell in the row

  std::size_t diagonal_rows() const {
    return static_cast<std::size_t>(std::count(diagonal_is_row_max.begin(), diagonal_is_row_max.end(), true));
  }
};

inline OverlapMatrix overlap_matrix(const std::vector<PersonaResponses>& personas, const Stopwords& stopwords = {},
                                    OverlapMode mode = OverlapMode::containment) {
  require(personas.size() >= 2, "overlap_matrix: needs at least two personas");
  OverlapMatrix out;
  const std::size_t n = personas.size();
  out.cells.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    out.names.push_back(personas[i].name);
    for (std::size_t j = 0; j < n; ++j)
      out.cells[i][j] = overlap_percentage(personas[i].volunteer, personas[j].model, stopwords, mode);
  }
  for (std::size_t i = 0; i < n; ++i) {
    bool strict = true;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && out.cells[i][j] >= out.cells[i][i]) strict = false;
    out.diagonal_is_row_max.push_back(strict);
  }
  return out;
}

// ---- reports ---------------------------------------------------------------

struct LabeledStats {
  std::string label;
  ImitationStats stats;
};

inline nlohmann::json to_json(const ImitationStats& s) {
  nlohmann::json j{{"n_gr", s.n_gr}, {"n_imi", s.n_imi}, {"n_vr", s.n_vr}, {"n_test", s.n_test}};
  if (s.n_gr == 0) {
    j["r_imi"] = nullptr;
    j["r_imi_percent"] = "N/A";
  } else {
    j["r_imi"] = std::stod(format_fixed(imitation_rate(s), 4));
    j["r_imi_percent"] = format_rate(s);
  }
  return j;
}

namespace detail {

inline std::string table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == 0) {
        out << std::left << std::setw(static_cast<int>(width[c])) << cells[c];
      } else {
        out << "  " << std::right << std::setw(static_cast<int>(width[c])) << cells[c];
      }
    }
    out << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (auto w : width) total += w + 2;
  out << std::string(total - 2, '-') << '\n';
  for (const auto& r : rows) line(r);
  return out.str();
}

}  // namespace detail

// Columns per volunteer plus an optional Sum column; rows n_gr, n_vr, n_test,
// n_imi, r_imi.
inline std::string imitation_table_text(const std::vector<LabeledStats>& columns, bool with_sum = true) {
  std::vector<std::string> header{""};
  ImitationStats sum;
  for (const auto& c : columns) {
    header.push_back(c.label);
    sum += c.stats;
  }
  std::vector<LabeledStats> all = columns;
  if (with_sum) {
    header.push_back("Sum");
    all.push_back({"Sum", sum});
  }
  std::vector<std::vector<std::string>> rows(5);
  rows[0] = {"n_gr"};
  rows[1] = {"n_vr"};
  rows[2] = {"n_test"};
  rows[3] = {"n_imi"};
  rows[4] = {"r_imi"};
  for (const auto& c : all) {
    rows[0].push_back(std::to_string(c.stats.n_gr));
    rows[1].push_back(std::to_string(c.stats.n_vr));
    rows[2].push_back(std::to_string(c.stats.n_test));
    rows[3].push_back(std::to_string(c.stats.n_imi));
    rows[4].push_back(format_rate(c.stats));
  }
  return detail::table(header, rows);
}

inline nlohmann::json imitation_table_json(const std::vector<LabeledStats>& columns, bool with_sum = true) {
  nlohmann::json j = nlohmann::json::object();
  ImitationStats sum;
  for (const auto& c : columns) {
    j[c.label] = to_json(c.stats);
    sum += c.stats;
  }
  if (with_sum) j["Sum"] = to_json(sum);
  return j;
}

inline std::string overlap_matrix_text(const OverlapMatrix& m) {
  std::vector<std::string> header{""};
  for (const auto& n : m.names) header.push_back("model:" + n);
  header.push_back("diag max");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < m.names.size(); ++i) {
    std::vector<std::string> r{"volunteer:" + m.names[i]};
    for (double v : m.cells[i]) r.push_back(format_fixed(v, 2) + "%");
    r.push_back(m.diagonal_is_row_max[i] ? "yes" : "no");
    rows.push_back(std::move(r));
  }
  return detail::table(header, rows);
}

inline nlohmann::json to_json(const OverlapMatrix& m) {
  return {{"names", m.names},
          {"cells", m.cells},
          {"diagonal_is_row_max", m.diagonal_is_row_max},
          {"diagonal_rows", m.diagonal_rows()}};
}

inline nlohmann::json to_json(const LexicalDistribution& d) {
  return {{"vocabulary_size", d.vocabulary_size()}, {"total_tokens", d.total_tokens}, {"probabilities", d.probabilities}};
}

}  // namespace persona::metrics
