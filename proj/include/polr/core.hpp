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
 * Domain types shared by every stage of the pipeline: questions, sampling
 * parameters, trace records, the run configuration and the token ledger.
 *
 * All types are plain values. A RunConfig only becomes trustworthy after
 * validate_config(), which fills defaults and enforces the range checks;
 * the rest of the library assumes a validated config.
 */

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace polr {

// ============================================================================
// Errors
// ============================================================================

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised by validate_config; field() names the offending setting.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// ============================================================================
// Domain types
// ============================================================================

struct Question {
  std::string id;
  std::string prompt;
  std::optional<std::string> gold_answer;  // normalized; absent for unlabeled runs
};

struct SamplingParams {
  double temperature = 0.6;
  double top_p = 0.9;
  int max_tokens = 32768;
  std::uint64_t seed = 0;

  bool operator==(const SamplingParams&) const = default;
};

struct TraceRecord {
  std::string question_id;
  int index = 0;
  std::string prefix_text;
  int prefix_token_count = 0;
  std::optional<std::string> continuation_text;
  int continuation_token_count = 0;
  std::optional<std::string> answer;
  std::optional<int> cluster_id;
  std::uint64_t seed = 0;
  double temperature = 0.0;
  bool finished = false;  // last generation stopped naturally
  bool complete = false;  // the trace reached its end (prefix stopped, or expanded)
  std::optional<int> latent_mode;  // synthetic backend only

  int full_token_count() const noexcept { return prefix_token_count + continuation_token_count; }
  std::string full_text() const { return prefix_text + continuation_text.value_or(""); }
};

enum class Mode { cot, sc, polr, ac, esc, polr_ac, polr_esc };
enum class ClusterMethod { agglomerative, dbscan, hdbscan, none };
enum class BackendKind { remote, synthetic };

inline constexpr std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::cot: return "cot";
    case Mode::sc: return "sc";
    case Mode::polr: return "polr";
    case Mode::ac: return "ac";
    case Mode::esc: return "esc";
    case Mode::polr_ac: return "polr_ac";
    case Mode::polr_esc: return "polr_esc";
  }
  return "?";
}

inline constexpr std::string_view to_string(ClusterMethod m) {
  switch (m) {
    case ClusterMethod::agglomerative: return "agglomerative";
    case ClusterMethod::dbscan: return "dbscan";
    case ClusterMethod::hdbscan: return "hdbscan";
    case ClusterMethod::none: return "none";
  }
  return "?";
}

inline constexpr std::string_view to_string(BackendKind b) {
  return b == BackendKind::remote ? "remote" : "synthetic";
}

inline Mode parse_mode(std::string_view s) {
  for (Mode m : {Mode::cot, Mode::sc, Mode::polr, Mode::ac, Mode::esc, Mode::polr_ac, Mode::polr_esc})
    if (s == to_string(m)) return m;
  if (s == "polr+ac") return Mode::polr_ac;
  if (s == "polr+esc") return Mode::polr_esc;
  throw ConfigError("mode", "unknown mode '" + std::string(s) + "'");
}

inline ClusterMethod parse_cluster_method(std::string_view s) {
  for (ClusterMethod m : {ClusterMethod::agglomerative, ClusterMethod::dbscan, ClusterMethod::hdbscan,
                          ClusterMethod::none})
    if (s == to_string(m)) return m;
  throw ConfigError("cluster_method", "unknown method '" + std::string(s) + "'");
}

inline BackendKind parse_backend(std::string_view s) {
  if (s == "remote") return BackendKind::remote;
  if (s == "synthetic") return BackendKind::synthetic;
  throw ConfigError("backend", "unknown backend '" + std::string(s) + "'");
}

constexpr bool uses_clustering(Mode m) {
  return m == Mode::polr || m == Mode::polr_ac || m == Mode::polr_esc;
}
constexpr bool uses_ac(Mode m) { return m == Mode::ac || m == Mode::polr_ac; }
constexpr bool uses_esc(Mode m) { return m == Mode::esc || m == Mode::polr_esc; }

struct RunConfig {
  Mode mode = Mode::polr;
  int n_samples = 51;
  int prefix_length = 256;
  std::optional<int> expansion_cap;  // K; absent = expand the whole dominant cluster
  ClusterMethod cluster_method = ClusterMethod::agglomerative;
  double distance_threshold = 1.0;
  int downsample_dim = 10;
  double dbscan_eps = 0.5;
  int dbscan_min_pts = 3;
  int hdbscan_min_cluster_size = 3;
  double ac_confidence = 0.95;
  int esc_window = 5;
  SamplingParams sampling{};
  // Optional per-sample temperatures; when set its length must equal n_samples.
  std::vector<double> sample_temperatures;
  int repeats = 1;
  std::uint64_t run_seed = 0;
  BackendKind backend = BackendKind::synthetic;
  int max_inflight = 8;
  // Also expand non-dominant prefixes so cluster/correctness alignment can be
  // measured. Those extra tokens never enter the ledger.
  bool measure_alignment = false;

  bool operator==(const RunConfig&) const = default;

  double temperature_for(int index) const {
    return sample_temperatures.empty() ? sampling.temperature
                                       : sample_temperatures.at(static_cast<std::size_t>(index));
  }
};

/// Fills defaults and enforces every RunConfig invariant. Idempotent.
inline RunConfig validate_config(RunConfig cfg) {
  auto require = [](bool ok, const char* field, const std::string& what) {
    if (!ok) throw ConfigError(field, what);
  };

  if (cfg.mode == Mode::cot) cfg.n_samples = 1;

  require(cfg.n_samples >= 1, "n_samples", "must be positive");
  require(cfg.prefix_length >= 1, "prefix_length", "must be positive");
  if (cfg.expansion_cap) {
    require(*cfg.expansion_cap >= 1, "expansion_cap", "must be positive");
    require(*cfg.expansion_cap <= cfg.n_samples, "expansion_cap", "K exceeds N");
  }
  require(std::isfinite(cfg.distance_threshold) && cfg.distance_threshold > 0.0, "distance_threshold",
          "must be > 0");
  require(cfg.downsample_dim >= 1, "downsample_dim", "must be positive");
  require(std::isfinite(cfg.dbscan_eps) && cfg.dbscan_eps > 0.0, "dbscan_eps", "must be > 0");
  require(cfg.dbscan_min_pts >= 1, "dbscan_min_pts", "must be >= 1");
  require(cfg.hdbscan_min_cluster_size >= 2, "hdbscan_min_cluster_size", "must be >= 2");
  require(cfg.ac_confidence > 0.5 && cfg.ac_confidence < 1.0, "ac_confidence", "must lie in (0.5, 1)");
  require(cfg.esc_window >= 1, "esc_window", "must be positive");
  if (uses_esc(cfg.mode))
    require(cfg.esc_window <= cfg.n_samples, "esc_window", "window exceeds N");

  const auto& s = cfg.sampling;
  require(s.temperature > 0.0 && s.temperature <= 2.0, "temperature", "must lie in (0, 2]");
  require(s.top_p > 0.0 && s.top_p <= 1.0, "top_p", "must lie in (0, 1]");
  require(s.max_tokens >= 1, "max_tokens", "must be positive");
  require(cfg.prefix_length <= s.max_tokens, "prefix_length", "exceeds max_tokens");

  if (!cfg.sample_temperatures.empty()) {
    require(cfg.sample_temperatures.size() == static_cast<std::size_t>(cfg.n_samples),
            "sample_temperatures", "length must equal N");
    for (double t : cfg.sample_temperatures)
      require(t > 0.0 && t <= 2.0, "sample_temperatures", "each must lie in (0, 2]");
  }

  require(cfg.repeats >= 1, "repeats", "must be positive");
  require(cfg.max_inflight >= 1, "max_inflight", "must be positive");

  if (uses_clustering(cfg.mode) && cfg.cluster_method != ClusterMethod::none)
    require(cfg.n_samples >= 2, "n_samples", "clustering needs at least 2 prefixes");

  return cfg;
}

// ============================================================================
// Token accounting
// ============================================================================

struct TokenLedger {
  std::int64_t prefix_tokens_total = 0;
  std::int64_t continuation_tokens_total = 0;
  std::int64_t sc_reference_tokens = 0;
  bool sc_reference_measured = false;  // false: estimated as N * mean full length
  double mean_prefix_len = 0.0;
  double mean_full_len = 0.0;

  std::int64_t polr_tokens() const noexcept { return prefix_tokens_total + continuation_tokens_total; }

  /// Uniform-length cost model: N prefixes of length lp, K of them continued to lf.
  static TokenLedger closed_form(std::int64_t n, std::int64_t k, std::int64_t lp, std::int64_t lf) {
    TokenLedger l;
    l.prefix_tokens_total = n * lp;
    l.continuation_tokens_total = k * (lf - lp);
    l.sc_reference_tokens = n * lf;
    l.mean_prefix_len = static_cast<double>(lp);
    l.mean_full_len = static_cast<double>(lf);
    return l;
  }
};

/// Token efficiency relative to self-consistency; negative when PoLR costs more.
inline double ledger_efficiency(const TokenLedger& ledger) {
  if (ledger.sc_reference_tokens <= 0) throw Error("empty SC reference");
  return 1.0 - static_cast<double>(ledger.polr_tokens()) / static_cast<double>(ledger.sc_reference_tokens);
}

}  // namespace polr
