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
 * Text-generation backend interface.
 *
 * Two calls: sample a prefix of at most max_tokens tokens, and continue a
 * given prefix to the end of the trace. Token counts are whatever the backend
 * reports; nothing downstream re-tokenizes. Implementations must be safe to
 * call concurrently.
 */

#include <polr/core.hpp>
#include <polr/hash.hpp>

#include <atomic>
#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <thread>

namespace polr::backend {

enum class Stage { prefix, continuation };

inline constexpr std::string_view to_string(Stage s) {
  return s == Stage::prefix ? "prefix" : "continuation";
}

/// Routing metadata. Backends may use it for reproducibility and caching; it
/// never changes what a remote model is asked.
struct RequestTag {
  std::string question_id;
  int sample_index = 0;
  int prefix_length = 0;
};

struct GenerationRequest {
  std::string prompt;
  std::optional<std::string> prefix_to_continue;
  SamplingParams params;
  RequestTag tag;
};

struct GenerationResult {
  std::string text;  // excludes the conditioning prefix
  int token_count = 0;
  bool finished = false;  // natural stop before max_tokens
  std::optional<int> latent_mode;

  bool operator==(const GenerationResult&) const = default;
};

class BackendError : public Error {
 public:
  BackendError(const std::string& what, int attempts, bool retryable)
      : Error(what), attempts_(attempts), retryable_(retryable) {}
  int attempts() const noexcept { return attempts_; }
  bool retryable() const noexcept { return retryable_; }

 private:
  int attempts_;
  bool retryable_;
};

class Backend {
 public:
  virtual ~Backend() = default;

  /// Identifies backend + model for cache keys.
  virtual std::string backend_id() const = 0;
  virtual std::string model_id() const = 0;

  GenerationResult sample_prefix(const GenerationRequest& req) {
    if (req.prefix_to_continue) throw Error("sample_prefix: request carries a prefix");
    if (req.params.max_tokens < 1) throw ConfigError("max_tokens", "must be positive");
    ++calls_;
    auto r = do_sample(req);
    if (r.token_count > req.params.max_tokens) throw BackendError("prefix exceeds max_tokens", 1, false);
    return r;
  }

  GenerationResult expand_prefix(const GenerationRequest& req) {
    if (!req.prefix_to_continue) throw Error("expand_prefix: request has no prefix");
    if (req.params.max_tokens < 1) throw ConfigError("max_tokens", "must be positive");
    ++calls_;
    return do_expand(req);
  }

  /// Number of generation calls that reached this backend.
  long calls() const noexcept { return calls_.load(); }

 protected:
  virtual GenerationResult do_sample(const GenerationRequest& req) = 0;
  virtual GenerationResult do_expand(const GenerationRequest& req) = 0;

 private:
  std::atomic<long> calls_{0};
};

// ============================================================================
// Retry
// ============================================================================

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds base_delay{500};
  double jitter = 0.25;  // fraction of the delay added at random
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };
};

/// Runs `call` until it succeeds, throws a non-retryable BackendError, or the
/// attempt budget is spent. Delay before retry k (0-based) is
/// base * 2^k * (1 + jitter * u) with u derived from `salt`.
template <typename Fn>
auto with_retry(const RetryPolicy& policy, std::uint64_t salt, Fn&& call) -> decltype(call()) {
  for (int attempt = 1;; ++attempt) {
    try {
      return call();
    } catch (const BackendError& e) {
      if (!e.retryable() || attempt >= policy.attempts)
        throw BackendError(e.what(), attempt, false);
      double u = static_cast<double>(hash::combine(salt, static_cast<std::uint64_t>(attempt)) >> 11) * 0x1.0p-53;
      auto delay = std::chrono::milliseconds(static_cast<long>(
          static_cast<double>(policy.base_delay.count()) * static_cast<double>(1L << (attempt - 1)) *
          (1.0 + policy.jitter * u)));
      if (policy.sleep) policy.sleep(delay);
    }
  }
}

/// Whitespace-delimited token count; the synthetic backend's token unit.
inline int count_whitespace_tokens(std::string_view s) {
  int n = 0;
  bool in = false;
  for (char c : s) {
    bool ws = c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\v' || c == '\f';
    if (!ws && !in) ++n;
    in = !ws;
  }
  return n;
}

}  // namespace polr::backend
