#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/checkpoint.hpp"
#include "persona/decoding.hpp"
#include "persona/metrics.hpp"

namespace persona::session {

using json = nlohmann::json;
using Tokens = std::vector<std::string>;
using metrics::ImitationStats;

// Protocol failure with a stable machine-readable code and an HTTP status.
class SessionError : public ProtocolError {
 public:
  SessionError(std::string code, int status, const std::string& message, json detail = json::object())
      : ProtocolError(message), code_(std::move(code)), status_(status), detail_(std::move(detail)) {}
  const std::string& code() const { return code_; }
  int status() const { return status_; }
  const json& detail() const { return detail_; }
  json body() const { return {{"code", code_}, {"message", what()}, {"detail", detail_}}; }

 private:
  std::string code_;
  int status_;
  json detail_;
};

inline SessionError bad_request(const std::string& m, json d = json::object()) { return {"bad_request", 400, m, std::move(d)}; }
inline SessionError forbidden(const std::string& m) { return {"forbidden", 403, m}; }
inline SessionError not_found(const std::string& m) { return {"not_found", 404, m}; }
inline SessionError out_of_order(const std::string& m, json d = json::object()) { return {"out_of_order", 409, m, std::move(d)}; }

enum class Status { active, judging, closed };
enum class Decision { self, bot };
enum class Author { volunteer, bot };
enum class Verdict { volunteer, someone_else };
enum class Role { tester, volunteer };

inline std::string to_string(Status s) {
  switch (s) {
    case Status::active: return "active";
    case Status::judging: return "judging";
    default: return "closed";
  }
}
inline std::string to_string(Decision d) { return d == Decision::self ? "self" : "bot"; }
inline std::string to_string(Author a) { return a == Author::volunteer ? "volunteer" : "bot"; }
inline std::string to_string(Verdict v) { return v == Verdict::volunteer ? "volunteer" : "someone-else"; }

inline Decision parse_decision(const std::string& s) {
  if (s == "self") return Decision::self;
  if (s == "bot") return Decision::bot;
  throw bad_request("decision must be \"self\" or \"bot\"");
}
inline Verdict parse_verdict(const std::string& s) {
  if (s == "volunteer") return Verdict::volunteer;
  if (s == "someone-else") return Verdict::someone_else;
  throw bad_request("verdict must be \"volunteer\" or \"someone-else\"");
}

struct Turn {
  std::size_t index = 0;
  Tokens message;
  Tokens bot_candidate;
  double bot_log_probability = 0;
  std::optional<Decision> decision;
  std::optional<Tokens> volunteer_response;
  Tokens sent;
  std::optional<Author> truth;
  std::optional<Verdict> verdict;

  bool routed() const { return decision.has_value(); }
};

struct Judgment {
  std::size_t turn;
  Verdict verdict;
};

// Shared, read-only models addressed by a path relative to a root directory.
class ModelStore {
 public:
  using ModelPtr = std::shared_ptr<const model::Model<double>>;

  explicit ModelStore(std::filesystem::path root) : root_(std::move(root)) {}

  ModelPtr get(const std::string& ref) {
    const auto path = resolve(ref);
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(path.string()); it != cache_.end()) return it->second;
    ModelPtr m;
    try {
      m = std::make_shared<const model::Model<double>>(checkpoint::load<double>(path.string()));
    } catch (const DataError& e) {
      throw SessionError("model_unavailable", 422, e.what());
    }
    cache_.emplace(path.string(), m);
    return m;
  }

  // Preloaded model under a reference name (tests, batch tools).
  void put(const std::string& ref, ModelPtr m) {
    std::lock_guard lock(mutex_);
    cache_[resolve(ref, false).string()] = std::move(m);
  }

 private:
  std::filesystem::path resolve(const std::string& ref, bool must_exist = true) const {
    if (ref.empty()) throw bad_request("model reference is empty");
    std::filesystem::path p(ref);
    if (p.is_absolute()) throw bad_request("model reference must be relative to the model root");
    for (const auto& part : p)
      if (part == "..") throw bad_request("model reference may not leave the model root");
    auto full = (root_ / p).lexically_normal();
    if (must_exist && !cached(full) && !std::filesystem::is_regular_file(full))
      throw SessionError("model_not_found", 404, "no checkpoint '" + ref + "' under the model root");
    return full;
  }
  bool cached(const std::filesystem::path& p) const {
    std::lock_guard lock(mutex_);
    return cache_.contains(p.string());
  }

  std::filesystem::path root_;
  mutable std::mutex mutex_;
  std::map<std::string, ModelPtr> cache_;
};

// Seeded, advisory routing suggestion; a pure function of (seed, turn).
inline Decision suggested_decision(std::uint64_t seed, std::size_t turn) {
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * (turn + 1)));
  return (rng() & 1u) == 0 ? Decision::self : Decision::bot;
}

struct SessionOptions {
  decoding::DecodeConfig decode;
  bool reveal_candidate_to_volunteer = false;  // show unrouted bot candidates on the volunteer console
};

// One shelter-protocol session. Not thread-safe; SessionManager serializes access.
class EvalSession {
 public:
  EvalSession(std::string id, std::string model_ref, std::uint64_t seed, ModelStore::ModelPtr model,
              SessionOptions options)
      : id_(std::move(id)), model_ref_(std::move(model_ref)), seed_(seed), model_(std::move(model)),
        options_(options) {
    log({{"event", "open"}, {"id", id_}, {"model", model_ref_}, {"seed", seed_}, {"decode", decode_json()}});
  }

  const std::string& id() const { return id_; }
  const std::string& model_ref() const { return model_ref_; }
  std::uint64_t seed() const { return seed_; }
  Status status() const { return status_; }
  const std::vector<Turn>& turns() const { return turns_; }
  const std::vector<json>& events() const { return events_; }
  const std::optional<ImitationStats>& stats() const { return stats_; }

  void set_log_file(const std::filesystem::path& path) {
    log_file_ = std::make_unique<std::ofstream>(path, std::ios::app);
    if (!*log_file_) throw DataError("cannot open session log '" + path.string() + "'");
    for (const auto& e : events_) *log_file_ << e.dump() << '\n';
    log_file_->flush();
  }

  std::size_t tester_message(const Tokens& message) {
    if (status_ != Status::active) throw out_of_order("session is " + to_string(status_) + "; no further messages");
    if (!turns_.empty() && !turns_.back().routed())
      throw out_of_order("turn " + std::to_string(turns_.back().index) + " has not been answered yet",
                         {{"pending_turn", turns_.back().index}});
    if (message.empty()) throw bad_request("empty message");
    Turn t;
    t.index = turns_.size();
    t.message = message;
    auto h = decoding::generate(*model_, message, options_.decode);
    t.bot_candidate = decoding::response_tokens(*model_, h);
    t.bot_log_probability = h.log_probability;
    turns_.push_back(t);
    log({{"event", "message"}, {"turn", t.index}, {"message", t.message}, {"bot_candidate", t.bot_candidate}});
    return t.index;
  }

  std::optional<std::size_t> pending_turn() const {
    if (status_ == Status::active && !turns_.empty() && !turns_.back().routed()) return turns_.back().index;
    return std::nullopt;
  }

  Decision suggestion(std::size_t turn) const { return suggested_decision(seed_, turn); }

  const Tokens& route(std::size_t turn, Decision decision, const std::optional<Tokens>& volunteer_text) {
    if (turn >= turns_.size()) throw not_found("no turn " + std::to_string(turn));
    Turn& t = turns_[turn];
    if (t.routed()) throw out_of_order("turn " + std::to_string(turn) + " was already routed");
    if (status_ != Status::active) throw out_of_order("session is " + to_string(status_));
    if (decision == Decision::bot && volunteer_text.has_value())
      throw bad_request("decision \"bot\" must not carry volunteer text");
    if (decision == Decision::self && (!volunteer_text.has_value() || volunteer_text->empty()))
      throw bad_request("decision \"self\" needs the volunteer's text");
    t.decision = decision;
    if (decision == Decision::self) {
      t.volunteer_response = *volunteer_text;
      t.sent = *volunteer_text;
      t.truth = Author::volunteer;
    } else {
      t.sent = t.bot_candidate;
      t.truth = Author::bot;
    }
    json e{{"event", "route"}, {"turn", turn}, {"decision", to_string(decision)}, {"sent", t.sent}};
    if (t.volunteer_response) e["text"] = *t.volunteer_response;
    log(e);
    return t.sent;
  }

  // The first call freezes the conversation (judging); a complete, valid set closes it.
  ImitationStats submit_judgments(const std::vector<Judgment>& judgments) {
    if (status_ == Status::closed) throw out_of_order("session already closed");
    if (auto p = pending_turn()) throw out_of_order("turn " + std::to_string(*p) + " has not been answered yet");
    std::vector<std::size_t> routed;
    for (const auto& t : turns_)
      if (t.routed()) routed.push_back(t.index);
    if (routed.empty()) throw out_of_order("no answered turns to judge");
    begin_judging();

    std::map<std::size_t, int> seen;
    std::vector<std::size_t> unknown, duplicate, missing;
    for (const auto& j : judgments) {
      if (j.turn >= turns_.size() || !turns_[j.turn].routed()) {
        unknown.push_back(j.turn);
        continue;
      }
      if (++seen[j.turn] == 2) duplicate.push_back(j.turn);
    }
    for (auto idx : routed)
      if (!seen.contains(idx)) missing.push_back(idx);
    if (!unknown.empty() || !duplicate.empty() || !missing.empty())
      throw SessionError("invalid_judgments", 422, "judgments must cover every answered turn exactly once",
                         {{"missing", missing}, {"duplicate", duplicate}, {"unknown", unknown}});

    ImitationStats s;
    for (const auto& j : judgments) {
      Turn& t = turns_[j.turn];
      t.verdict = j.verdict;
      if (*t.truth == Author::bot) {
        ++s.n_gr;
        if (j.verdict == Verdict::volunteer) ++s.n_imi;
      } else {
        ++s.n_vr;
      }
    }
    s.n_test = routed.size();
    stats_ = s;
    status_ = Status::closed;
    json js = json::array();
    for (const auto& j : judgments) js.push_back({{"turn", j.turn}, {"verdict", to_string(j.verdict)}});
    log({{"event", "judgments"}, {"judgments", js}, {"stats", metrics::to_json(s)}});
    return s;
  }

  // Freezes the conversation; no more messages or routing.
  void begin_judging() {
    if (status_ != Status::active) return;
    status_ = Status::judging;
    log({{"event", "judging"}});
  }

  // ---- role-filtered views ----

  json pending_view() const {
    auto p = pending_turn();
    if (!p) return {{"turn", nullptr}, {"tester_message", nullptr}, {"bot_candidate", nullptr}, {"suggestion", nullptr}};
    const Turn& t = turns_[*p];
    return {{"turn", t.index},
            {"tester_message", corpus::join(t.message)},
            {"bot_candidate", options_.reveal_candidate_to_volunteer ? json(corpus::join(t.bot_candidate)) : json(nullptr)},
            {"suggestion", to_string(suggestion(t.index))}};
  }

  // Tester: own messages and what was sent back; authorship only once closed.
  json tester_view() const {
    json turns = json::array();
    for (const auto& t : turns_) {
      json j{{"turn", t.index}, {"message", corpus::join(t.message)},
             {"response", t.routed() ? json(corpus::join(t.sent)) : json(nullptr)}};
      if (status_ == Status::closed && t.routed()) {
        j["author"] = to_string(*t.truth);
        j["verdict"] = to_string(*t.verdict);
      }
      turns.push_back(std::move(j));
    }
    json out{{"id", id_}, {"status", to_string(status_)}, {"turns", turns}};
    if (stats_) out["stats"] = metrics::to_json(*stats_);
    return out;
  }

  json volunteer_view() const {
    json turns = json::array();
    for (const auto& t : turns_) {
      json j{{"turn", t.index}, {"message", corpus::join(t.message)}};
      const bool show = t.routed() || options_.reveal_candidate_to_volunteer;
      j["bot_candidate"] = show ? json(corpus::join(t.bot_candidate)) : json(nullptr);
      j["decision"] = t.decision ? json(to_string(*t.decision)) : json(nullptr);
      j["sent"] = t.routed() ? json(corpus::join(t.sent)) : json(nullptr);
      if (status_ == Status::closed && t.verdict) j["verdict"] = to_string(*t.verdict);
      turns.push_back(std::move(j));
    }
    json out{{"id", id_}, {"status", to_string(status_)}, {"turns", turns}};
    if (stats_) out["stats"] = metrics::to_json(*stats_);
    return out;
  }

  json transcript(Role role) const { return role == Role::tester ? tester_view() : volunteer_view(); }

 private:
  json decode_json() const {
    return {{"mode", decoding::to_string(options_.decode.mode)},
            {"beam_width", options_.decode.beam_width},
            {"max_decode_length", options_.decode.max_decode_length},
            {"lts_enabled", options_.decode.lts_enabled},
            {"length_normalize", options_.decode.length_normalize}};
  }

  void log(json event) {
    event["seq"] = events_.size();
    if (log_file_) {
      *log_file_ << event.dump() << '\n';
      log_file_->flush();
    }
    events_.push_back(std::move(event));
  }

  std::string id_;
  std::string model_ref_;
  std::uint64_t seed_;
  ModelStore::ModelPtr model_;
  SessionOptions options_;
  Status status_ = Status::active;
  std::vector<Turn> turns_;
  std::optional<ImitationStats> stats_;
  std::vector<json> events_;
  std::unique_ptr<std::ofstream> log_file_;
};

inline decoding::DecodeConfig decode_config_from_json(const json& j) {
  decoding::DecodeConfig c;
  c.mode = decoding::parse_mode(j.at("mode").get<std::string>());
  c.beam_width = j.at("beam_width").get<std::size_t>();
  c.max_decode_length = j.at("max_decode_length").get<std::size_t>();
  c.lts_enabled = j.at("lts_enabled").get<bool>();
  c.length_normalize = j.at("length_normalize").get<bool>();
  return c;
}

// Rebuilds a session from its event log, regenerating every bot candidate and
// checking it against the logged one.
inline EvalSession replay(const std::vector<json>& events, ModelStore& store) {
  if (events.empty() || events.front().value("event", "") != "open") throw DataError("replay: log does not start with open");
  const json& open = events.front();
  SessionOptions options;
  options.decode = decode_config_from_json(open.at("decode"));
  EvalSession s(open.at("id").get<std::string>(), open.at("model").get<std::string>(), open.at("seed").get<std::uint64_t>(),
                store.get(open.at("model").get<std::string>()), options);
  for (std::size_t i = 1; i < events.size(); ++i) {
    const json& e = events[i];
    const std::string kind = e.at("event").get<std::string>();
    if (kind == "message") {
      auto turn = s.tester_message(e.at("message").get<Tokens>());
      if (s.turns()[turn].bot_candidate != e.at("bot_candidate").get<Tokens>())
        throw DataError("replay: bot candidate differs at turn " + std::to_string(turn));
    } else if (kind == "route") {
      std::optional<Tokens> text;
      if (e.contains("text")) text = e.at("text").get<Tokens>();
      s.route(e.at("turn").get<std::size_t>(), parse_decision(e.at("decision").get<std::string>()), text);
    } else if (kind == "judgments") {
      std::vector<Judgment> js;
      for (const auto& j : e.at("judgments")) js.push_back({j.at("turn").get<std::size_t>(), parse_verdict(j.at("verdict").get<std::string>())});
      s.submit_judgments(js);
    } else if (kind == "judging") {
      s.begin_judging();
    } else {
      throw DataError("replay: unknown event '" + kind + "'");
    }
  }
  return s;
}

inline std::vector<json> read_event_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open session log '" + path + "'");
  std::vector<json> events;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) events.push_back(json::parse(line));
  return events;
}

inline std::string random_hex(std::size_t bytes) {
  static thread_local std::random_device device;
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < bytes; ++i) {
    const auto b = device() & 0xFFu;
    out += digits[b >> 4];
    out += digits[b & 0xF];
  }
  return out;
}

struct OpenedSession {
  std::string id;
  std::string tester_token;
  std::string volunteer_token;
};

// Owns all live sessions; each session is guarded by its own mutex.
class SessionManager {
 public:
  SessionManager(std::filesystem::path model_root, SessionOptions options = {}, std::filesystem::path log_dir = {})
      : store_(std::move(model_root)), options_(options), log_dir_(std::move(log_dir)) {
    if (!log_dir_.empty()) std::filesystem::create_directories(log_dir_);
  }

  ModelStore& store() { return store_; }
  const SessionOptions& options() const { return options_; }

  OpenedSession open(const std::string& model_ref, std::uint64_t seed) {
    auto model = store_.get(model_ref);
    OpenedSession out{"s" + std::to_string(++counter_) + "-" + random_hex(4), random_hex(16), random_hex(16)};
    auto slot = std::make_shared<Slot>(out.tester_token, out.volunteer_token,
                                       EvalSession(out.id, model_ref, seed, std::move(model), options_));
    if (!log_dir_.empty()) slot->session.set_log_file(log_dir_ / (out.id + ".jsonl"));
    std::lock_guard lock(mutex_);
    slots_.emplace(out.id, std::move(slot));
    return out;
  }

  // Runs fn(session) under the session lock after checking the capability token.
  template <class Fn>
  auto with(const std::string& id, const std::string& token, std::optional<Role> required, Fn&& fn) {
    std::shared_ptr<Slot> slot;
    {
      std::lock_guard lock(mutex_);
      auto it = slots_.find(id);
      if (it == slots_.end()) throw not_found("no session '" + id + "'");
      slot = it->second;
    }
    const std::optional<Role> role = slot->role_of(token);
    if (!role) throw forbidden("invalid session token");
    if (required && *role != *required) throw forbidden("this action needs the " + std::string(*required == Role::tester ? "tester" : "volunteer") + " token");
    std::lock_guard lock(slot->mutex);
    return fn(slot->session, *role);
  }

  ModelStore::ModelPtr model(const std::string& ref) { return store_.get(ref); }

 private:
  struct Slot {
    Slot(std::string t, std::string v, EvalSession s)
        : tester_token(std::move(t)), volunteer_token(std::move(v)), session(std::move(s)) {}
    std::optional<Role> role_of(const std::string& token) const {
      if (token == tester_token) return Role::tester;
      if (token == volunteer_token) return Role::volunteer;
      return std::nullopt;
    }
    std::string tester_token, volunteer_token;
    std::mutex mutex;
    EvalSession session;
  };

  ModelStore store_;
  SessionOptions options_;
  std::filesystem::path log_dir_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Slot>> slots_;
  std::atomic<std::uint64_t> counter_{0};
};

// "Absolute" evaluation: every post answered by the model, then judged.
class BatchJudgmentSession {
 public:
  struct Item {
    std::size_t index;
    Tokens post;
    Tokens response;
  };

  BatchJudgmentSession(const model::Model<double>& m, const std::vector<Tokens>& posts, decoding::DecodeConfig config = {}) {
    if (posts.empty()) throw DataError("batch judgment: no posts");
    for (std::size_t i = 0; i < posts.size(); ++i) {
      auto h = decoding::generate(m, posts[i], config);
      items_.push_back({i, posts[i], decoding::response_tokens(m, h)});
    }
  }

  const std::vector<Item>& items() const { return items_; }

  json form() const {
    json out = json::array();
    for (const auto& it : items_)
      out.push_back({{"turn", it.index}, {"post", corpus::join(it.post)}, {"response", corpus::join(it.response)}, {"verdict", nullptr}});
    return out;
  }

  ImitationStats judge(const std::vector<Judgment>& judgments) const {
    std::vector<int> seen(items_.size(), 0);
    std::vector<std::size_t> unknown, duplicate, missing;
    for (const auto& j : judgments) {
      if (j.turn >= items_.size()) {
        unknown.push_back(j.turn);
      } else if (++seen[j.turn] == 2) {
        duplicate.push_back(j.turn);
      }
    }
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (seen[i] == 0) missing.push_back(i);
    if (!unknown.empty() || !duplicate.empty() || !missing.empty())
      throw SessionError("invalid_judgments", 422, "judgments must cover every response exactly once",
                         {{"missing", missing}, {"duplicate", duplicate}, {"unknown", unknown}});
    ImitationStats s;
    s.n_gr = items_.size();
    s.n_test = items_.size();
    for (const auto& j : judgments)
      if (j.verdict == Verdict::volunteer) ++s.n_imi;
    return s;
  }

 private:
  std::vector<Item> items_;
};

inline std::vector<Judgment> parse_judgments(const json& body) {
  if (!body.is_object() || !body.contains("judgments") || !body["judgments"].is_array())
    throw bad_request("body must be {\"judgments\": [{\"turn\": n, \"verdict\": ...}, ...]}");
  std::vector<Judgment> out;
  for (const auto& j : body["judgments"]) {
    if (!j.is_object() || !j.contains("turn") || !j["turn"].is_number_unsigned() || !j.contains("verdict") ||
        !j["verdict"].is_string())
      throw bad_request("each judgment needs an unsigned \"turn\" and a string \"verdict\"");
    out.push_back({j["turn"].get<std::size_t>(), parse_verdict(j["verdict"].get<std::string>())});
  }
  return out;
}

}  // namespace persona::session
