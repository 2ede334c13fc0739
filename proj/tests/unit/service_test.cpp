#include <gtest/gtest.h>

#include "persona/service.hpp"
#include "support/fixtures.hpp"
#include "support/http_harness.hpp"

namespace {

using harness::Api;
using harness::json;
using persona::session::SessionManager;

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    model_ = fixtures::tiny_model(21);
    persona::checkpoint::save(model_, dir_.file("bot.ckpt"));
    manager_ = std::make_unique<SessionManager>(dir_.path());
    live_ = std::make_unique<harness::LiveService>(*manager_);
    api_ = std::make_unique<Api>(live_->port());
  }
  void TearDown() override {
    api_.reset();
    live_.reset();
  }

  json open(std::uint64_t seed = 1) {
    auto r = api_->post("/sessions", {{"model", "bot.ckpt"}, {"seed", seed}});
    EXPECT_EQ(r.status, 201) << r.raw;
    return r.body;
  }
  std::string path(const json& s, const std::string& leaf) { return "/sessions/" + s["id"].get<std::string>() + "/" + leaf; }
  std::string tester(const json& s) { return s["tester_token"]; }
  std::string volunteer(const json& s) { return s["volunteer_token"]; }

  fixtures::TempDir dir_;
  persona::model::Model<double> model_;
  std::unique_ptr<SessionManager> manager_;
  std::unique_ptr<harness::LiveService> live_;
  std::unique_ptr<Api> api_;
};

void expect_error_shape(const harness::Reply& r, int status, const std::string& code) {
  EXPECT_EQ(r.status, status) << r.raw;
  ASSERT_TRUE(r.body.is_object()) << r.raw;
  EXPECT_EQ(r.body["code"], code) << r.raw;
  EXPECT_TRUE(r.body["message"].is_string());
  EXPECT_TRUE(r.body.contains("detail"));
}

TEST_F(ServiceTest, FullSessionOverHttp) {
  auto s = open();
  auto msg = api_->post(path(s, "message"), {{"text", "p1 p2"}}, tester(s));
  ASSERT_EQ(msg.status, 200) << msg.raw;
  EXPECT_EQ(msg.body["turn"], 0);

  auto pending = api_->get(path(s, "pending"), volunteer(s));
  ASSERT_EQ(pending.status, 200);
  EXPECT_EQ(pending.body["turn"], 0);
  EXPECT_EQ(pending.body["tester_message"], "p1 p2");
  EXPECT_TRUE(pending.body["bot_candidate"].is_null());
  EXPECT_TRUE(pending.body["suggestion"] == "self" || pending.body["suggestion"] == "bot");

  auto routed = api_->post(path(s, "route"), {{"turn", 0}, {"decision", "bot"}}, volunteer(s));
  ASSERT_EQ(routed.status, 200) << routed.raw;
  auto h = persona::decoding::generate(model_, persona::corpus::tokenize("p1 p2"), {});
  EXPECT_EQ(routed.body["sent"], persona::corpus::join(persona::decoding::response_tokens(model_, h)));

  api_->post(path(s, "message"), {{"text", "p3"}}, tester(s));
  api_->post(path(s, "route"), {{"turn", 1}, {"decision", "self"}, {"text", "my own words"}}, volunteer(s));

  auto transcript = api_->get(path(s, "transcript"), tester(s));
  ASSERT_EQ(transcript.status, 200);
  EXPECT_EQ(transcript.body["turns"][1]["response"], "my own words");
  EXPECT_FALSE(transcript.body["turns"][0].contains("author"));

  auto stats = api_->post(path(s, "judgments"),
                          {{"judgments", {{{"turn", 0}, {"verdict", "volunteer"}}, {{"turn", 1}, {"verdict", "volunteer"}}}}},
                          tester(s));
  ASSERT_EQ(stats.status, 200) << stats.raw;
  EXPECT_EQ(stats.body["n_gr"], 1);
  EXPECT_EQ(stats.body["n_imi"], 1);
  EXPECT_EQ(stats.body["n_vr"], 1);
  EXPECT_EQ(stats.body["n_test"], 2);
  EXPECT_EQ(stats.body["r_imi_percent"], "100.00%");

  auto closed = api_->get(path(s, "transcript"), tester(s));
  EXPECT_EQ(closed.body["status"], "closed");
  EXPECT_EQ(closed.body["turns"][0]["author"], "bot");
}

TEST_F(ServiceTest, ErrorsUseCodeMessageDetail) {
  expect_error_shape(api_->post("/sessions", {{"model", "nope.ckpt"}}), 404, "model_not_found");
  expect_error_shape(api_->post("/sessions", {{"model", "../x"}}), 400, "bad_request");
  expect_error_shape(api_->post("/sessions", json::object()), 400, "bad_request");
  expect_error_shape(api_->post_raw("/sessions", "{not json"), 400, "bad_request");
  auto s = open();
  expect_error_shape(api_->post(path(s, "message"), {{"text", "p1"}}), 403, "forbidden");
  expect_error_shape(api_->post(path(s, "message"), {{"text", "p1"}}, volunteer(s)), 403, "forbidden");
  expect_error_shape(api_->get(path(s, "pending"), tester(s)), 403, "forbidden");
  expect_error_shape(api_->post("/sessions/zzz/message", {{"text", "p1"}}, tester(s)), 404, "not_found");
  ASSERT_EQ(api_->post(path(s, "message"), {{"text", "p1"}}, tester(s)).status, 200);
  expect_error_shape(api_->post(path(s, "message"), {{"text", "p2"}}, tester(s)), 409, "out_of_order");
  expect_error_shape(api_->post(path(s, "route"), {{"turn", 0}, {"decision", "bot"}, {"text", "x"}}, volunteer(s)), 400, "bad_request");
  expect_error_shape(api_->post(path(s, "route"), {{"turn", 0}, {"decision", "maybe"}}, volunteer(s)), 400, "bad_request");
  expect_error_shape(api_->post(path(s, "judgments"), {{"judgments", json::array()}}, tester(s)), 409, "out_of_order");
  ASSERT_EQ(api_->post(path(s, "route"), {{"turn", 0}, {"decision", "bot"}}, volunteer(s)).status, 200);
  expect_error_shape(api_->post(path(s, "route"), {{"turn", 0}, {"decision", "bot"}}, volunteer(s)), 409, "out_of_order");
  auto bad = api_->post(path(s, "judgments"), {{"judgments", json::array()}}, tester(s));
  expect_error_shape(bad, 422, "invalid_judgments");
  EXPECT_EQ(bad.body["detail"]["missing"], json::array({0}));
  expect_error_shape(api_->get("/no/such/endpoint"), 404, "not_found");
}

TEST_F(ServiceTest, GenerateIsStateless) {
  auto a = api_->post("/generate", {{"model", "bot.ckpt"}, {"post", "p4 p5"}});
  auto b = api_->post("/generate", {{"model", "bot.ckpt"}, {"post", "p4 p5"}});
  ASSERT_EQ(a.status, 200) << a.raw;
  EXPECT_EQ(a.body["response"], b.body["response"]);
  auto h = persona::decoding::generate(model_, persona::corpus::tokenize("p4 p5"), {});
  EXPECT_EQ(a.body["response"], persona::corpus::join(persona::decoding::response_tokens(model_, h)));
  expect_error_shape(api_->post("/generate", {{"model", "bot.ckpt"}, {"post", "  "}}), 400, "bad_request");
  expect_error_shape(api_->post("/generate", {{"model", "missing"}, {"post", "p1"}}), 404, "model_not_found");
}

TEST_F(ServiceTest, TesterNeverSeesUnroutedCandidate) {
  auto s = open(3);
  ASSERT_EQ(api_->post(path(s, "message"), {{"text", "p6 p7"}}, tester(s)).status, 200);
  auto h = persona::decoding::generate(model_, persona::corpus::tokenize("p6 p7"), {});
  const auto candidate = persona::corpus::join(persona::decoding::response_tokens(model_, h));
  auto t = api_->get(path(s, "transcript"), tester(s));
  EXPECT_TRUE(t.body["turns"][0]["response"].is_null());
  if (!candidate.empty()) {
    EXPECT_EQ(t.raw.find(candidate), std::string::npos);
  }
  auto v = api_->get(path(s, "transcript"), volunteer(s));
  EXPECT_TRUE(v.body["turns"][0]["bot_candidate"].is_null());
}

}  // namespace
