/*
 * Copyright 2026 The polr Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <polr/remote.hpp>

#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

using namespace polr;
using namespace polr::backend;
using nlohmann::json;

namespace {

// Minimal completion server on a loopback port.
class MockServer {
 public:
  explicit MockServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    svr_.Post("/v1/completions", [this, handler](const httplib::Request& rq, httplib::Response& rs) {
      ++hits_;
      last_body_ = rq.body;
      last_auth_ = rq.get_header_value("Authorization");
      handler(rq, rs);
    });
    port_ = svr_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { svr_.listen_after_bind(); });
    svr_.wait_until_ready();
  }
  ~MockServer() {
    svr_.stop();
    thread_.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int hits() const { return hits_; }
  json last_body() const { return json::parse(last_body_); }
  std::string last_auth() const { return last_auth_; }

 private:
  httplib::Server svr_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> hits_{0};
  std::string last_body_, last_auth_;
};

RemoteConfig config_for(const MockServer& s) {
  RemoteConfig c;
  c.endpoint = s.endpoint();
  c.model = "test-model";
  c.api_key = "secret";
  c.timeout = std::chrono::seconds(5);
  c.retry.sleep = [](std::chrono::milliseconds) {};
  return c;
}

void reply(httplib::Response& rs, const std::string& text, int tokens, const std::string& reason) {
  json j = {{"choices", {{{"text", text}, {"finish_reason", reason}}}}, {"usage", {{"completion_tokens", tokens}}}};
  rs.set_content(j.dump(), "application/json");
}

GenerationRequest request(std::optional<std::string> prefix = std::nullopt) {
  return {"Q: 2+2?\n", std::move(prefix), {0.6, 0.9, 256, 1234}, {"q7", 3, 256}};
}

}  // namespace

TEST(Remote, SendsProtocolFields) {
  MockServer s([](auto&, auto& rs) { reply(rs, " four", 2, "stop"); });
  RemoteBackend be(config_for(s));
  auto r = be.sample_prefix(request());
  EXPECT_EQ(r.text, " four");
  EXPECT_EQ(r.token_count, 2);
  EXPECT_TRUE(r.finished);
  auto b = s.last_body();
  EXPECT_EQ(b["model"], "test-model");
  EXPECT_EQ(b["prompt"], "Q: 2+2?\n");
  EXPECT_EQ(b["max_tokens"], 256);
  EXPECT_DOUBLE_EQ(b["temperature"].get<double>(), 0.6);
  EXPECT_DOUBLE_EQ(b["top_p"].get<double>(), 0.9);
  EXPECT_EQ(b["seed"], 1234);
  EXPECT_EQ(s.last_auth(), "Bearer secret");
}

TEST(Remote, ContinuationConditionsOnPromptAndPrefix) {
  MockServer s([](auto&, auto& rs) { reply(rs, " so 4.\n#### 4", 4, "stop"); });
  RemoteBackend be(config_for(s));
  auto r = be.expand_prefix(request(std::string("Let me think")));
  EXPECT_EQ(s.last_body()["prompt"], "Q: 2+2?\nLet me think");
  EXPECT_EQ(r.text, " so 4.\n#### 4");
}

TEST(Remote, LengthFinishMeansUnfinished) {
  MockServer s([](auto&, auto& rs) { reply(rs, "abc", 256, "length"); });
  RemoteBackend be(config_for(s));
  EXPECT_FALSE(be.sample_prefix(request()).finished);
}

TEST(Remote, RetriesServerErrorsThenSucceeds) {
  std::atomic<int> n{0};
  MockServer s([&](auto&, auto& rs) {
    if (++n < 3) {
      rs.status = n == 1 ? 503 : 429;
      return;
    }
    reply(rs, "ok", 1, "stop");
  });
  RemoteBackend be(config_for(s));
  EXPECT_EQ(be.sample_prefix(request()).text, "ok");
  EXPECT_EQ(s.hits(), 3);
}

TEST(Remote, GivesUpAfterThreeAttempts) {
  MockServer s([](auto&, auto& rs) { rs.status = 500; });
  RemoteBackend be(config_for(s));
  try {
    be.sample_prefix(request());
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.attempts(), 3);
    EXPECT_FALSE(e.retryable());
  }
  EXPECT_EQ(s.hits(), 3);
}

TEST(Remote, ClientErrorsAreNotRetried) {
  MockServer s([](auto&, auto& rs) {
    rs.status = 400;
    rs.set_content("bad", "text/plain");
  });
  RemoteBackend be(config_for(s));
  EXPECT_THROW(be.sample_prefix(request()), BackendError);
  EXPECT_EQ(s.hits(), 1);
}

TEST(Remote, TransportErrorIsRetried) {
  RemoteConfig c;
  c.endpoint = "http://127.0.0.1:1";  // nothing listens here
  c.model = "m";
  c.timeout = std::chrono::seconds(1);
  std::vector<long> delays;
  c.retry.sleep = [&](std::chrono::milliseconds d) { delays.push_back(d.count()); };
  RemoteBackend be(c);
  try {
    be.sample_prefix(request());
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.attempts(), 3);
  }
  EXPECT_EQ(delays.size(), 2u);
}

TEST(Remote, MalformedResponses) {
  EXPECT_THROW(RemoteBackend::parse_response("not json"), BackendError);
  EXPECT_THROW(RemoteBackend::parse_response(R"({"choices": []})"), BackendError);
  EXPECT_THROW(RemoteBackend::parse_response(R"({"choices": [{"text": "x"}]})"), BackendError);
  auto r = RemoteBackend::parse_response(R"({"choices": [{"text": "x"}], "usage": {"completion_tokens": 1}})");
  EXPECT_TRUE(r.finished);
}

TEST(Remote, ApiKeyFromEnvironment) {
  MockServer s([](auto&, auto& rs) { reply(rs, "x", 1, "stop"); });
  ::setenv(kApiKeyEnv, "from-env", 1);
  auto c = config_for(s);
  c.api_key.reset();
  RemoteBackend be(c);
  be.sample_prefix(request());
  ::unsetenv(kApiKeyEnv);
  EXPECT_EQ(s.last_auth(), "Bearer from-env");
}

TEST(Remote, EndpointMustHaveScheme) {
  RemoteConfig c;
  c.endpoint = "localhost:8000";
  EXPECT_THROW(RemoteBackend{c}, ConfigError);
}
