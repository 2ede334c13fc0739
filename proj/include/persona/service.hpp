#pragma once

#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "persona/session.hpp"

namespace persona::service {

using json = nlohmann::json;
using session::Role;
using session::SessionError;
using session::SessionManager;

// HTTP+JSON front of the session manager. Capability tokens travel in
// "Authorization: Bearer <token>".
class Service {
 public:
  explicit Service(SessionManager& manager) : manager_(manager) { routes(); }

  httplib::Server& server() { return server_; }

  int bind_to_any_port(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  static json body_of(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      return json::parse(req.body);
    } catch (const json::parse_error&) {
      throw session::bad_request("request body is not valid JSON");
    }
  }

  static std::string token_of(const httplib::Request& req) {
    const std::string auth = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    if (auth.rfind(prefix, 0) != 0) throw session::forbidden("missing bearer token");
    return auth.substr(prefix.size());
  }

  static std::string text_field(const json& body, const char* key) {
    if (!body.is_object() || !body.contains(key) || !body[key].is_string())
      throw session::bad_request(std::string("body needs a string field \"") + key + "\"");
    return body[key].get<std::string>();
  }

  static void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json; charset=utf-8");
  }

  template <class Fn>
  static httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const SessionError& e) {
        send(res, e.status(), e.body());
      } catch (const json::exception& e) {
        send(res, 400, {{"code", "bad_request"}, {"message", e.what()}, {"detail", json::object()}});
      } catch (const DataError& e) {
        send(res, 422, {{"code", "data_error"}, {"message", e.what()}, {"detail", json::object()}});
      } catch (const NumericError& e) {
        send(res, 500, {{"code", "numeric_error"}, {"message", e.what()}, {"detail", json::object()}});
      } catch (const std::exception& e) {
        send(res, 500, {{"code", "internal"}, {"message", e.what()}, {"detail", json::object()}});
      }
    };
  }

  void routes() {
    server_.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = body_of(req);
      const std::string model = text_field(body, "model");
      std::uint64_t seed = 0;
      if (body.contains("seed")) {
        if (!body["seed"].is_number_unsigned()) throw session::bad_request("\"seed\" must be an unsigned integer");
        seed = body["seed"].get<std::uint64_t>();
      }
      auto opened = manager_.open(model, seed);
      send(res, 201, {{"id", opened.id}, {"tester_token", opened.tester_token}, {"volunteer_token", opened.volunteer_token}});
    }));

    server_.Post(R"(/sessions/([^/]+)/message)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = body_of(req);
      const auto tokens = corpus::tokenize(text_field(body, "text"));
      auto turn = manager_.with(req.matches[1], token_of(req), Role::tester,
                                [&](session::EvalSession& s, Role) { return s.tester_message(tokens); });
      send(res, 200, {{"turn", turn}});
    }));

    server_.Get(R"(/sessions/([^/]+)/pending)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto view = manager_.with(req.matches[1], token_of(req), Role::volunteer,
                                [](session::EvalSession& s, Role) { return s.pending_view(); });
      send(res, 200, view);
    }));

    server_.Post(R"(/sessions/([^/]+)/route)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = body_of(req);
      if (!body.contains("turn") || !body["turn"].is_number_unsigned()) throw session::bad_request("body needs an unsigned \"turn\"");
      const auto decision = session::parse_decision(text_field(body, "decision"));
      std::optional<session::Tokens> text;
      if (body.contains("text") && !body["text"].is_null()) text = corpus::tokenize(text_field(body, "text"));
      const auto turn = body["turn"].get<std::size_t>();
      auto sent = manager_.with(req.matches[1], token_of(req), Role::volunteer, [&](session::EvalSession& s, Role) {
        return s.route(turn, decision, text);
      });
      send(res, 200, {{"sent", corpus::join(sent)}});
    }));

    server_.Get(R"(/sessions/([^/]+)/transcript)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto view = manager_.with(req.matches[1], token_of(req), std::nullopt,
                                [](session::EvalSession& s, Role role) { return s.transcript(role); });
      send(res, 200, view);
    }));

    server_.Post(R"(/sessions/([^/]+)/judgments)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto judgments = session::parse_judgments(body_of(req));
      auto stats = manager_.with(req.matches[1], token_of(req), Role::tester,
                                 [&](session::EvalSession& s, Role) { return s.submit_judgments(judgments); });
      send(res, 200, metrics::to_json(stats));
    }));

    server_.Post("/generate", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = body_of(req);
      auto model = manager_.model(text_field(body, "model"));
      const auto post = corpus::tokenize(text_field(body, "post"));
      if (post.empty()) throw session::bad_request("empty post");
      auto h = decoding::generate(*model, post, manager_.options().decode);
      send(res, 200, {{"response", corpus::join(decoding::response_tokens(*model, h))}, {"log_probability", h.log_probability}});
    }));

    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) send(res, res.status, {{"code", res.status == 404 ? "not_found" : "http_error"}, {"message", "no such endpoint"}, {"detail", json::object()}});
    });
  }

  SessionManager& manager_;
  httplib::Server server_;
};

}  // namespace persona::service
