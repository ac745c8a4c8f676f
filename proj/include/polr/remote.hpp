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

#pragma once

/**
 * Completion-API client backend (see docs/protocol.md).
 *
 *   POST <endpoint>/v1/completions
 *   {"model", "prompt", "max_tokens", "temperature", "top_p", "seed"}
 *   -> {"choices": [{"text", "finish_reason"}], "usage": {"completion_tokens"}}
 *
 * Continuations send prompt + prefix as the prompt. Transport errors, 429 and
 * 5xx are retried; other failures are not.
 */

#include <polr/backend.hpp>
#include <polr/core.hpp>

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>

namespace polr::backend {

inline constexpr const char* kApiKeyEnv = "POLR_API_KEY";

struct RemoteConfig {
  std::string endpoint = "http://127.0.0.1:8000";  // scheme://host[:port][/base]
  std::string model;
  std::optional<std::string> api_key;  // falls back to $POLR_API_KEY
  std::chrono::seconds timeout{600};
  RetryPolicy retry{};
};

class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(RemoteConfig cfg) : cfg_(std::move(cfg)) {
    auto scheme = cfg_.endpoint.find("://");
    if (scheme == std::string::npos) throw ConfigError("endpoint", "expected scheme://host[:port][/path]");
    auto slash = cfg_.endpoint.find('/', scheme + 3);
    host_ = cfg_.endpoint.substr(0, slash);
    std::string base = slash == std::string::npos ? "" : cfg_.endpoint.substr(slash);
    while (!base.empty() && base.back() == '/') base.pop_back();
    path_ = base.ends_with("/completions") ? base : base + "/v1/completions";
    if (!cfg_.api_key)
      if (const char* env = std::getenv(kApiKeyEnv); env && *env) cfg_.api_key = env;
  }

  std::string backend_id() const override { return "remote"; }
  std::string model_id() const override { return cfg_.model; }

  /// Request body for `req`; exposed for protocol tests.
  nlohmann::json request_body(const GenerationRequest& req) const {
    return {{"model", cfg_.model},
            {"prompt", req.prompt + req.prefix_to_continue.value_or("")},
            {"max_tokens", req.params.max_tokens},
            {"temperature", req.params.temperature},
            {"top_p", req.params.top_p},
            {"seed", req.params.seed}};
  }

  static GenerationResult parse_response(const std::string& body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("malformed response: ") + e.what(), 1, false);
    }
    try {
      const auto& choice = j.at("choices").at(0);
      GenerationResult r;
      r.text = choice.at("text").get<std::string>();
      r.token_count = j.at("usage").at("completion_tokens").get<int>();
      auto reason = choice.value("finish_reason", std::string{});
      r.finished = reason != "length";
      return r;
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("response missing required field: ") + e.what(), 1, false);
    }
  }

 protected:
  GenerationResult do_sample(const GenerationRequest& req) override { return post(req); }
  GenerationResult do_expand(const GenerationRequest& req) override { return post(req); }

 private:
  GenerationResult post(const GenerationRequest& req) {
    const std::string body = request_body(req).dump();
    const std::uint64_t salt = hash::combine(req.params.seed, hash::fnv1a(req.tag.question_id));
    return with_retry(cfg_.retry, salt, [&] {
      httplib::Client cli(host_);
      cli.set_connection_timeout(cfg_.timeout);
      cli.set_read_timeout(cfg_.timeout);
      cli.set_write_timeout(cfg_.timeout);
      httplib::Headers headers;
      if (cfg_.api_key) headers.emplace("Authorization", "Bearer " + *cfg_.api_key);
      auto res = cli.Post(path_, headers, body, "application/json");
      if (!res) throw BackendError("transport error: " + httplib::to_string(res.error()), 1, true);
      if (res->status == 429 || res->status >= 500)
        throw BackendError("server returned HTTP " + std::to_string(res->status), 1, true);
      if (res->status != 200)
        throw BackendError("server returned HTTP " + std::to_string(res->status) + ": " + res->body, 1, false);
      return parse_response(res->body);
    });
  }

  RemoteConfig cfg_;
  std::string host_;
  std::string path_;
};

}  // namespace polr::backend
