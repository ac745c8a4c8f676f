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
 * Per-question orchestration for every run mode.
 *
 * PoLR, one question:
 *   1. sample N prefixes of at most L_p tokens (concurrently)
 *   2. embed + cluster them, pick the dominant cluster C*
 *   3. continue min(K, |C*|) members of C* in sample-index order
 *      (hybrids check AC/ESC after each continuation and stop early)
 *   4. majority-vote the extracted answers
 *
 * SC samples and continues all N; AC and ESC sample and continue one trace
 * at a time until their stopping rule fires or N is reached; CoT is SC with
 * N = 1. Every mode goes through the same two-stage prefix/continuation calls,
 * so all modes share one cache.
 *
 * Sample i of question q under run seed s always uses seed
 * combine(combine(s, fnv(q)), i), independent of completion order.
 */

#include <polr/backend.hpp>
#include <polr/cluster.hpp>
#include <polr/consensus.hpp>
#include <polr/core.hpp>
#include <polr/dataset.hpp>
#include <polr/embed.hpp>
#include <polr/hash.hpp>
#include <polr/metrics.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace polr::harness {

inline std::uint64_t sample_seed(std::uint64_t run_seed, std::string_view question_id, int index) {
  return hash::combine(hash::combine(run_seed, hash::fnv1a(question_id)), static_cast<std::uint64_t>(index));
}

/// Calls fn(i) for i in [0, n) on at most `max_inflight` threads. The
/// exception of the lowest failing index is rethrown after all work stops.
template <typename Fn>
void parallel_for(int n, int max_inflight, Fn&& fn) {
  if (n <= 0) return;
  const int workers = std::clamp(max_inflight, 1, n);
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  int failed_index = std::numeric_limits<int>::max();
  std::exception_ptr failure;
  auto work = [&] {
    for (int i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
}

struct QuestionOutcome {
  Question question;
  std::vector<TraceRecord> traces;  // every sampled prefix, by index
  std::vector<int> voters;          // indices whose continuations were paid for and voted
  std::optional<consensus::VoteTally> tally;
  std::optional<cluster::ClusterResult> clusters;
  TokenLedger ledger;
  metrics::QuestionMetrics metrics;
  std::string error;
};

class Runner {
 public:
  Runner(RunConfig cfg, backend::Backend& backend)
      : cfg_(validate_config(std::move(cfg))), backend_(backend), embedder_(cfg_.downsample_dim) {}

  const RunConfig& config() const noexcept { return cfg_; }

  QuestionOutcome run(const Question& q, int repeat = 0) const {
    auto t0 = std::chrono::steady_clock::now();
    QuestionOutcome out;
    out.question = q;
    out.metrics.question_id = q.id;
    out.metrics.repeat = repeat;
    out.metrics.n_samples = cfg_.n_samples;
    out.metrics.gold = q.gold_answer;
    try {
      switch (cfg_.mode) {
        case Mode::cot:
        case Mode::sc: run_parallel_all(q, out); break;
        case Mode::ac:
        case Mode::esc: run_sequential(q, out); break;
        case Mode::polr:
        case Mode::polr_ac:
        case Mode::polr_esc: run_polr_steps(q, out); break;
      }
      finish(out);
    } catch (const backend::BackendError& e) {
      out.metrics.failed = true;
      out.error = e.what();
    }
    out.metrics.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

 private:
  TraceRecord sample(const Question& q, int i) const {
    TraceRecord t;
    t.question_id = q.id;
    t.index = i;
    t.seed = sample_seed(cfg_.run_seed, q.id, i);
    t.temperature = cfg_.temperature_for(i);
    backend::GenerationRequest req{q.prompt, std::nullopt,
                                   SamplingParams{t.temperature, cfg_.sampling.top_p, cfg_.prefix_length, t.seed},
                                   {q.id, i, cfg_.prefix_length}};
    auto r = backend_.sample_prefix(req);
    t.prefix_text = std::move(r.text);
    t.prefix_token_count = r.token_count;
    t.finished = r.finished;
    t.latent_mode = r.latent_mode;
    if (r.finished) {
      t.complete = true;
      t.answer = consensus::extract_answer(t.prefix_text);
    }
    return t;
  }

  void expand(const Question& q, TraceRecord& t) const {
    if (t.complete) return;
    const int budget = std::max(1, cfg_.sampling.max_tokens - t.prefix_token_count);
    backend::GenerationRequest req{q.prompt, t.prefix_text,
                                   SamplingParams{t.temperature, cfg_.sampling.top_p, budget, t.seed},
                                   {q.id, t.index, cfg_.prefix_length}};
    auto r = backend_.expand_prefix(req);
    if (r.token_count > 0 || !r.text.empty()) {
      t.continuation_text = std::move(r.text);
      t.continuation_token_count = r.token_count;
    }
    t.finished = r.finished;
    t.complete = true;
    if (r.latent_mode) t.latent_mode = r.latent_mode;
    t.answer = consensus::extract_answer(t.full_text());
  }

  std::vector<TraceRecord> sample_all(const Question& q, int n) const {
    std::vector<TraceRecord> traces(static_cast<std::size_t>(n));
    parallel_for(n, cfg_.max_inflight, [&](int i) { traces[static_cast<std::size_t>(i)] = sample(q, i); });
    return traces;
  }

  void expand_all(const Question& q, std::vector<TraceRecord>& traces, const std::vector<int>& which) const {
    parallel_for(static_cast<int>(which.size()), cfg_.max_inflight,
                 [&](int k) { expand(q, traces[static_cast<std::size_t>(which[static_cast<std::size_t>(k)])]); });
  }

  // Feeds the answers of `voters` (in order) to the configured stopping rule.
  bool should_stop(const std::vector<TraceRecord>& traces, const std::vector<int>& voters) const {
    if (uses_ac(cfg_.mode)) {
      std::map<std::string, int> counts;
      for (int i : voters)
        if (const auto& a = traces[static_cast<std::size_t>(i)].answer) ++counts[*a];
      return !counts.empty() && consensus::ac_should_stop(counts, cfg_.ac_confidence).stop;
    }
    if (uses_esc(cfg_.mode)) {
      std::vector<consensus::Answer> stream;
      for (int i : voters) stream.push_back(traces[static_cast<std::size_t>(i)].answer);
      return consensus::esc_should_stop(stream, cfg_.esc_window).stop;
    }
    return false;
  }

  void run_parallel_all(const Question& q, QuestionOutcome& out) const {
    out.traces = sample_all(q, cfg_.n_samples);
    for (int i = 0; i < cfg_.n_samples; ++i) out.voters.push_back(i);
    expand_all(q, out.traces, out.voters);
  }

  void run_sequential(const Question& q, QuestionOutcome& out) const {
    for (int i = 0; i < cfg_.n_samples; ++i) {
      out.traces.push_back(sample(q, i));
      expand(q, out.traces.back());
      out.voters.push_back(i);
      if (should_stop(out.traces, out.voters)) break;
    }
  }

  void run_polr_steps(const Question& q, QuestionOutcome& out) const {
    const int n = cfg_.n_samples;
    out.traces = sample_all(q, n);

    std::vector<std::string> prefixes;
    for (const auto& t : out.traces) prefixes.push_back(t.prefix_text);
    std::vector<int> candidates;
    try {
      auto clusters = cluster::cluster_prefixes(prefixes, embedder_, cluster::ClusterParams::from(cfg_));
      for (int i = 0; i < n; ++i) {
        int label = clusters.labels[static_cast<std::size_t>(i)];
        if (label >= 0) out.traces[static_cast<std::size_t>(i)].cluster_id = label;
        if (label == clusters.dominant_id) candidates.push_back(i);
      }
      out.metrics.k_t_ms = clusters.overhead_ms;
      out.metrics.kappa = static_cast<double>(clusters.dominant_size) / n;
      out.metrics.dominant_size = clusters.dominant_size;
      out.metrics.cluster_sizes = clusters.sizes;
      out.clusters = std::move(clusters);
    } catch (const cluster::NoDominantCluster&) {
      // Density methods found only noise: behave exactly like SC.
      out.metrics.fallback = true;
      out.metrics.kappa = 1.0;
      out.metrics.dominant_size = n;
      out.metrics.cluster_sizes = {n};
      candidates.resize(static_cast<std::size_t>(n));
      std::iota(candidates.begin(), candidates.end(), 0);
      for (auto& t : out.traces) t.cluster_id = 0;
    }

    const auto cap = static_cast<std::size_t>(cfg_.expansion_cap.value_or(n));
    if (candidates.size() > cap) candidates.resize(cap);

    if (uses_ac(cfg_.mode) || uses_esc(cfg_.mode)) {
      for (int i : candidates) {
        expand(q, out.traces[static_cast<std::size_t>(i)]);
        out.voters.push_back(i);
        if (should_stop(out.traces, out.voters)) break;
      }
    } else {
      out.voters = candidates;
      expand_all(q, out.traces, out.voters);
    }

    if (cfg_.measure_alignment) {
      std::vector<int> rest;
      for (int i = 0; i < n; ++i)
        if (!out.traces[static_cast<std::size_t>(i)].complete) rest.push_back(i);
      expand_all(q, out.traces, rest);
    }
  }

  // Ledger, vote and per-question metrics from the finished traces.
  void finish(QuestionOutcome& out) const {
    auto& m = out.metrics;
    auto& ledger = out.ledger;
    const int n = cfg_.n_samples;

    std::vector<metrics::Tokens> prefix_tokens;
    for (const auto& t : out.traces) {
      ledger.prefix_tokens_total += t.prefix_token_count;
      prefix_tokens.push_back(embed::TokenList{});
      std::string_view s = t.prefix_text;
      std::size_t i = 0;
      while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) prefix_tokens.back().emplace_back(s.substr(i, j - i));
        i = j;
      }
    }
    m.prefixes_sampled = static_cast<int>(out.traces.size());
    m.identical_prefix_group = metrics::largest_identical_prefix_group(
        prefix_tokens, static_cast<std::size_t>(cfg_.prefix_length));

    std::vector<consensus::Answer> answers;
    std::int64_t full_total = 0;
    for (int i : out.voters) {
      const auto& t = out.traces[static_cast<std::size_t>(i)];
      ledger.continuation_tokens_total += t.continuation_token_count;
      full_total += t.full_token_count();
      answers.push_back(t.answer);
    }
    m.pexp = static_cast<int>(out.voters.size());
    if (!out.traces.empty())
      ledger.mean_prefix_len = static_cast<double>(ledger.prefix_tokens_total) / out.traces.size();
    if (!out.voters.empty()) ledger.mean_full_len = static_cast<double>(full_total) / out.voters.size();

    if (cfg_.mode == Mode::sc || cfg_.mode == Mode::cot) {
      ledger.sc_reference_tokens = full_total;
      ledger.sc_reference_measured = true;
    } else {
      ledger.sc_reference_tokens = static_cast<std::int64_t>(std::llround(n * ledger.mean_full_len));
    }
    m.prefix_tokens = ledger.prefix_tokens_total;
    m.continuation_tokens = ledger.continuation_tokens_total;
    m.sc_reference_tokens = ledger.sc_reference_tokens;
    m.sc_reference_measured = ledger.sc_reference_measured;
    m.eta = ledger.sc_reference_tokens > 0 ? ledger_efficiency(ledger) : 0.0;

    if (!uses_clustering(cfg_.mode)) {
      m.kappa = 1.0;
      m.dominant_size = static_cast<int>(out.traces.size());
      m.cluster_sizes = {m.dominant_size};
    }

    try {
      out.tally = consensus::majority_vote(answers);
      m.voted = out.tally->winner;
    } catch (const consensus::NoAnswers&) {
      out.tally.reset();
    }
    m.correct = out.tally && out.question.gold_answer && out.tally->winner == *out.question.gold_answer;

    // Alignment between prefix clusters and per-trace correctness.
    if (out.question.gold_answer) {
      std::vector<double> right(m.cluster_sizes.size(), 0.0), seen(m.cluster_sizes.size(), 0.0);
      for (const auto& t : out.traces) {
        if (!t.complete) continue;
        int z = t.cluster_id.value_or(uses_clustering(cfg_.mode) ? cluster::kNoise : 0);
        int y = t.answer && *t.answer == *out.question.gold_answer ? 1 : 0;
        m.z.push_back(z);
        m.y.push_back(y);
        if (z >= 0 && static_cast<std::size_t>(z) < right.size()) {
          right[static_cast<std::size_t>(z)] += y;
          seen[static_cast<std::size_t>(z)] += 1.0;
        }
      }
      for (std::size_t c = 0; c < right.size(); ++c)
        m.cluster_accuracies.push_back(seen[c] > 0 ? right[c] / seen[c] : std::nan(""));
    }
  }

  RunConfig cfg_;
  backend::Backend& backend_;
  embed::TfidfHashEmbedder embedder_;
};

// ============================================================================
// Mode entry points
// ============================================================================

inline QuestionOutcome run_question(const Question& q, const RunConfig& cfg, backend::Backend& be) {
  return Runner(cfg, be).run(q);
}

inline QuestionOutcome run_polr(const Question& q, RunConfig cfg, backend::Backend& be) {
  if (!uses_clustering(cfg.mode)) cfg.mode = Mode::polr;
  return run_question(q, cfg, be);
}

inline QuestionOutcome with_mode(const Question& q, RunConfig cfg, Mode mode, backend::Backend& be) {
  cfg.mode = mode;
  return run_question(q, cfg, be);
}

inline QuestionOutcome run_sc(const Question& q, const RunConfig& cfg, backend::Backend& be) {
  return with_mode(q, cfg, Mode::sc, be);
}
inline QuestionOutcome run_cot(const Question& q, const RunConfig& cfg, backend::Backend& be) {
  return with_mode(q, cfg, Mode::cot, be);
}
inline QuestionOutcome run_ac(const Question& q, const RunConfig& cfg, backend::Backend& be) {
  return with_mode(q, cfg, Mode::ac, be);
}
inline QuestionOutcome run_esc(const Question& q, const RunConfig& cfg, backend::Backend& be) {
  return with_mode(q, cfg, Mode::esc, be);
}

// ============================================================================
// Dataset runs
// ============================================================================

struct RunResult {
  RunConfig config;
  std::string dataset;
  std::vector<metrics::QuestionMetrics> rows;           // all repeats
  std::vector<metrics::AggregateReport> per_repeat;
  std::vector<QuestionOutcome> outcomes;                // kept only when requested
};

struct RunOptions {
  bool keep_outcomes = false;
  std::function<void(int repeat, int done, int total)> progress;
};

/// Runs every question `cfg.repeats` times; repeat r uses run seed
/// cfg.run_seed + r.
inline RunResult run_dataset(const dataset::Dataset& ds, const RunConfig& cfg, backend::Backend& be,
                             const RunOptions& opts = {}) {
  RunResult res;
  res.config = validate_config(cfg);
  res.dataset = ds.name;
  for (int r = 0; r < res.config.repeats; ++r) {
    RunConfig rc = res.config;
    rc.run_seed = res.config.run_seed + static_cast<std::uint64_t>(r);
    Runner runner(rc, be);
    std::vector<metrics::QuestionMetrics> rows;
    int done = 0;
    for (const auto& q : ds.questions) {
      auto o = runner.run(q, r);
      rows.push_back(o.metrics);
      if (opts.keep_outcomes) res.outcomes.push_back(std::move(o));
      if (opts.progress) opts.progress(r, ++done, static_cast<int>(ds.questions.size()));
    }
    res.per_repeat.push_back(metrics::aggregate(rows, rc));
    res.rows.insert(res.rows.end(), rows.begin(), rows.end());
  }
  return res;
}

}  // namespace polr::harness
