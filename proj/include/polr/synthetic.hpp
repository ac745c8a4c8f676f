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
 * Deterministic synthetic reasoning-trace model.
 *
 * A trace draws a latent mode z from `mode_weights`, emits an optional shared
 * opening, then body tokens from the vocabulary of mode z (or, with
 * probability `overlap_fraction`, from a shared vocabulary), and ends with
 * "#### <answer>". The answer is the question's gold answer with probability
 * `mode_correct_prob[z]`, otherwise a uniformly chosen wrong answer.
 *
 * Every trace is a pure function of (spec.seed, request seed, question id), so
 * a prefix followed by its continuation reproduces the one-shot trace exactly.
 *
 * build_synthetic_spec() chooses mode vocabularies with the embedding's hash
 * in mind: each mode's tokens land in hash buckets (and signs) that no other
 * mode uses, or, in the antipodal layout, in the same buckets with opposite
 * signs. Distinct vocabularies alone would not survive hashing into ten
 * dimensions; this keeps modes separable after it.
 */

#include <polr/backend.hpp>
#include <polr/core.hpp>
#include <polr/embed.hpp>
#include <polr/hash.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace polr::synthetic {

struct SyntheticModelSpec {
  std::vector<double> mode_weights;
  std::vector<double> mode_correct_prob;
  std::vector<std::vector<std::string>> mode_vocab;
  std::vector<std::string> shared_vocab;
  std::vector<std::string> opening;  // shared leading tokens of every trace
  double overlap_fraction = 0.0;     // body tokens drawn from shared_vocab
  int full_length = 400;             // tokens per trace, answer line included
  int length_jitter = 0;             // full length varies uniformly by +-jitter
  std::vector<std::string> answer_space;
  std::uint64_t seed = 0;

  int num_modes() const noexcept { return static_cast<int>(mode_weights.size()); }
};

/// Throws ConfigError on any inconsistency.
inline void validate(const SyntheticModelSpec& s) {
  auto require = [](bool ok, const char* field, const std::string& what) {
    if (!ok) throw ConfigError(field, what);
  };
  const std::size_t m = s.mode_weights.size();
  require(m >= 1, "mode_weights", "need at least one mode");
  double sum = 0.0;
  for (double w : s.mode_weights) {
    require(w >= 0.0, "mode_weights", "weights must be nonnegative");
    sum += w;
  }
  require(std::abs(sum - 1.0) <= 1e-9, "mode_weights", "weights not normalized");
  require(s.mode_correct_prob.size() == m, "mode_correct_prob", "length must equal number of modes");
  for (double p : s.mode_correct_prob) require(p >= 0.0 && p <= 1.0, "mode_correct_prob", "must lie in [0, 1]");
  require(s.mode_vocab.size() == m, "mode_vocab", "one vocabulary per mode");
  std::set<std::string> seen;
  for (const auto& v : s.mode_vocab) {
    require(!v.empty(), "mode_vocab", "vocabulary must be nonempty");
    for (const auto& t : v) require(seen.insert(t).second, "mode_vocab", "vocabularies must be disjoint");
  }
  require(s.overlap_fraction >= 0.0 && s.overlap_fraction <= 1.0, "overlap_fraction", "must lie in [0, 1]");
  require(s.overlap_fraction == 0.0 || !s.shared_vocab.empty(), "shared_vocab", "needed when overlapping");
  require(s.length_jitter >= 0, "length_jitter", "must be nonnegative");
  require(s.full_length - s.length_jitter >= static_cast<int>(s.opening.size()) + 3, "full_length",
          "too short for opening, body and answer line");
  require(s.answer_space.size() >= 2, "answer_space", "need a correct and at least one wrong answer");
}

/// Gold answer the synthetic model associates with a question id.
inline const std::string& gold_answer(const SyntheticModelSpec& s, std::string_view question_id) {
  return s.answer_space[hash::of(question_id, s.seed ^ 0x676f6c64ULL) % s.answer_space.size()];
}

// ============================================================================
// Spec construction
// ============================================================================

struct SyntheticLayout {
  std::size_t feature_dim = 10;  // must match the embedding dimension
  int tokens_per_mode = 24;
  int opening_length = 0;
  double overlap_fraction = 0.0;
  int shared_vocab_size = 32;
  bool antipodal = false;  // two modes on the same buckets with opposite signs
  int full_length = 400;
  int length_jitter = 0;
  int answer_space_size = 5;
  std::uint64_t seed = 0;
};

namespace detail {

// Finds `count` tokens "<stem><k>" whose hash slot is in `buckets` with the
// required sign (0 = any), cycling over buckets so each gets its share.
inline std::vector<std::string> tokens_for(const std::string& stem, const std::vector<std::size_t>& buckets,
                                           double sign, int count, std::size_t dim) {
  std::vector<std::string> out;
  std::uint64_t k = 0;
  for (int i = 0; i < count; ++i) {
    std::size_t target = buckets[static_cast<std::size_t>(i) % buckets.size()];
    for (;; ++k) {
      std::string tok = stem + std::to_string(k);
      auto slot = embed::feature_slot(tok, dim);
      if (slot.bucket == target && (sign == 0.0 || slot.sign == sign)) {
        out.push_back(std::move(tok));
        ++k;
        break;
      }
    }
  }
  return out;
}

}  // namespace detail

inline SyntheticModelSpec build_synthetic_spec(std::vector<double> weights, std::vector<double> correct_prob,
                                               const SyntheticLayout& layout = {}) {
  const std::size_t m = weights.size();
  const std::size_t d = layout.feature_dim;
  const bool shared = layout.opening_length > 0 || layout.overlap_fraction > 0.0;
  const std::size_t n_shared = shared ? std::max<std::size_t>(1, d * 2 / 5) : 0;
  if (d <= n_shared) throw ConfigError("feature_dim", "too small for the requested layout");

  std::vector<std::size_t> shared_buckets, mode_buckets;
  for (std::size_t b = 0; b < d; ++b) (b < n_shared ? shared_buckets : mode_buckets).push_back(b);

  SyntheticModelSpec s;
  s.mode_weights = std::move(weights);
  s.mode_correct_prob = std::move(correct_prob);
  s.overlap_fraction = layout.overlap_fraction;
  s.full_length = layout.full_length;
  s.length_jitter = layout.length_jitter;
  s.seed = layout.seed;

  if (layout.antipodal) {
    if (m != 2) throw ConfigError("antipodal", "antipodal layout needs exactly two modes");
    s.mode_vocab.push_back(detail::tokens_for("alpha", mode_buckets, +1.0, layout.tokens_per_mode, d));
    s.mode_vocab.push_back(detail::tokens_for("beta", mode_buckets, -1.0, layout.tokens_per_mode, d));
  } else {
    if (m > mode_buckets.size()) throw ConfigError("mode_weights", "more modes than free hash buckets");
    for (std::size_t z = 0; z < m; ++z) {
      std::vector<std::size_t> mine;
      for (std::size_t i = z; i < mode_buckets.size(); i += m) mine.push_back(mode_buckets[i]);
      s.mode_vocab.push_back(
          detail::tokens_for("mode" + std::to_string(z) + "w", mine, +1.0, layout.tokens_per_mode, d));
    }
  }
  if (shared) {
    s.shared_vocab = detail::tokens_for("common", shared_buckets, 0.0, layout.shared_vocab_size, d);
    s.opening = detail::tokens_for("open", shared_buckets, 0.0, layout.opening_length, d);
  }
  for (int i = 0; i < layout.answer_space_size; ++i) s.answer_space.push_back(std::to_string(12 + 7 * i));
  validate(s);
  return s;
}

// ============================================================================
// Generation
// ============================================================================

namespace detail {

// Platform-stable generator; std distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() { return hash::mix64(state_++); }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next() % n); }
  int categorical(const std::vector<double>& w) {
    double u = uniform(), acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      acc += w[i];
      if (u < acc) return static_cast<int>(i);
    }
    for (std::size_t i = w.size(); i-- > 0;)
      if (w[i] > 0.0) return static_cast<int>(i);
    return 0;
  }

 private:
  std::uint64_t state_;
};

struct Trace {
  int mode = 0;
  std::vector<std::string> tokens;  // whitespace tokens, answer line included
  std::string text;
};

inline std::string body_token(const SyntheticModelSpec& s, int mode, Rng& rng) {
  if (s.overlap_fraction > 0.0 && rng.uniform() < s.overlap_fraction)
    return s.shared_vocab[rng.below(s.shared_vocab.size())];
  const auto& v = s.mode_vocab[static_cast<std::size_t>(mode)];
  return v[rng.below(v.size())];
}

inline std::string draw_answer(const SyntheticModelSpec& s, int mode, const std::string& gold, Rng& rng) {
  if (rng.uniform() < s.mode_correct_prob[static_cast<std::size_t>(mode)]) return gold;
  std::vector<const std::string*> wrong;
  for (const auto& a : s.answer_space)
    if (a != gold) wrong.push_back(&a);
  return *wrong[rng.below(wrong.size())];
}

inline std::string render(const std::vector<std::string>& reasoning, const std::string& answer) {
  std::string text;
  for (std::size_t i = 0; i < reasoning.size(); ++i) {
    if (i) text += ' ';
    text += reasoning[i];
  }
  text += "\n#### " + answer;
  return text;
}

inline Trace full_trace(const SyntheticModelSpec& s, std::string_view question_id, std::uint64_t seed) {
  Rng rng(hash::combine(hash::combine(s.seed, seed), hash::fnv1a(question_id)));
  Trace t;
  t.mode = rng.categorical(s.mode_weights);
  int length = s.full_length;
  if (s.length_jitter > 0)
    length += static_cast<int>(rng.below(static_cast<std::size_t>(2 * s.length_jitter + 1))) - s.length_jitter;
  const int reasoning = length - 2;
  std::vector<std::string> words;
  words.reserve(static_cast<std::size_t>(reasoning));
  for (int i = 0; i < reasoning; ++i)
    words.push_back(i < static_cast<int>(s.opening.size()) ? s.opening[static_cast<std::size_t>(i)]
                                                           : body_token(s, t.mode, rng));
  std::string answer = draw_answer(s, t.mode, gold_answer(s, question_id), rng);
  t.text = render(words, answer);
  t.tokens = std::move(words);
  t.tokens.push_back("####");
  t.tokens.push_back(answer);
  return t;
}

// Byte offset just past the k-th whitespace token (k >= 1).
inline std::size_t end_of_token(std::string_view text, int k) {
  int seen = 0;
  bool in = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    bool ws = text[i] == ' ' || text[i] == '\n';
    if (!ws && !in) ++seen;
    if (ws && in && seen == k) return i;
    in = !ws;
  }
  return text.size();
}

inline int infer_mode(const SyntheticModelSpec& s, std::string_view prefix) {
  std::vector<int> votes(s.mode_vocab.size(), 0);
  for (const auto& tok : embed::tokenize(prefix))
    for (std::size_t z = 0; z < s.mode_vocab.size(); ++z)
      if (std::find(s.mode_vocab[z].begin(), s.mode_vocab[z].end(), tok) != s.mode_vocab[z].end()) ++votes[z];
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

}  // namespace detail

/// Prefix stage: the first params.max_tokens tokens of the trace. Continuation
/// stage: the rest of the trace after `prefix` (a prefix the model did not
/// produce under this seed gets a fresh body from its inferred mode).
inline backend::GenerationResult synthetic_generate(const SyntheticModelSpec& s, const Question& q,
                                                    backend::Stage stage, const SamplingParams& params,
                                                    const std::optional<std::string>& prefix = std::nullopt) {
  const auto trace = detail::full_trace(s, q.id, params.seed);
  const int total = static_cast<int>(trace.tokens.size());
  backend::GenerationResult r;

  if (stage == backend::Stage::prefix) {
    const int n = std::min(total, params.max_tokens);
    r.text = trace.text.substr(0, detail::end_of_token(trace.text, n));
    r.token_count = n;
    r.finished = n == total;
    r.latent_mode = trace.mode;
    return r;
  }

  const std::string& p = prefix.value();
  const int have = backend::count_whitespace_tokens(p);
  std::string rest;
  int rest_tokens = 0;
  if (trace.text.compare(0, p.size(), p) == 0 &&
      (have == 0 || p.size() == trace.text.size() || detail::end_of_token(trace.text, have) == p.size())) {
    rest = trace.text.substr(p.size());
    rest_tokens = total - have;
    r.latent_mode = trace.mode;
  } else if (p.find("####") != std::string::npos) {
    r.latent_mode = detail::infer_mode(s, p);
  } else {
    const int mode = detail::infer_mode(s, p);
    detail::Rng rng(hash::combine(hash::combine(s.seed, params.seed), hash::fnv1a(p)));
    std::vector<std::string> words;
    for (int i = have; i < s.full_length - 2; ++i) words.push_back(detail::body_token(s, mode, rng));
    std::string answer = detail::draw_answer(s, mode, gold_answer(s, q.id), rng);
    rest = (words.empty() ? "" : " ") + detail::render(words, answer);
    rest_tokens = static_cast<int>(words.size()) + 2;
    r.latent_mode = mode;
  }

  if (rest_tokens > params.max_tokens) {
    rest = rest.substr(0, detail::end_of_token(rest, params.max_tokens));
    rest_tokens = params.max_tokens;
    r.finished = false;
  } else {
    r.finished = true;
  }
  r.text = std::move(rest);
  r.token_count = rest_tokens;
  return r;
}

/// Backend adapter over a SyntheticModelSpec. Stateless; safe for concurrent use.
class SyntheticBackend final : public backend::Backend {
 public:
  explicit SyntheticBackend(SyntheticModelSpec spec) : spec_(std::move(spec)) { validate(spec_); }

  std::string backend_id() const override { return "synthetic"; }
  std::string model_id() const override { return "synthetic-" + hash::hex(fingerprint()); }
  const SyntheticModelSpec& spec() const noexcept { return spec_; }

 protected:
  backend::GenerationResult do_sample(const backend::GenerationRequest& req) override {
    return synthetic_generate(spec_, question_of(req), backend::Stage::prefix, req.params);
  }
  backend::GenerationResult do_expand(const backend::GenerationRequest& req) override {
    return synthetic_generate(spec_, question_of(req), backend::Stage::continuation, req.params,
                              req.prefix_to_continue);
  }

 private:
  static Question question_of(const backend::GenerationRequest& req) {
    return {req.tag.question_id.empty() ? req.prompt : req.tag.question_id, req.prompt, std::nullopt};
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = spec_.seed;
    auto add = [&](std::string_view s) { h = hash::combine(h, hash::fnv1a(s)); };
    for (double w : spec_.mode_weights) add(std::to_string(w));
    for (double p : spec_.mode_correct_prob) add(std::to_string(p));
    for (const auto& v : spec_.mode_vocab)
      for (const auto& t : v) add(t);
    for (const auto& t : spec_.shared_vocab) add(t);
    for (const auto& t : spec_.opening) add(t);
    add(std::to_string(spec_.overlap_fraction));
    add(std::to_string(spec_.full_length));
    add(std::to_string(spec_.length_jitter));
    for (const auto& a : spec_.answer_space) add(a);
    return h;
  }

  SyntheticModelSpec spec_;
};

/// Questions "<stem>0000", ... labelled with the model's gold answers.
inline std::vector<Question> make_questions(const SyntheticModelSpec& s, int count, std::string_view stem = "q") {
  std::vector<Question> out;
  for (int i = 0; i < count; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", i);
    std::string id = std::string(stem) + buf;
    out.push_back({id, "Synthetic problem " + id + ": reason step by step.", gold_answer(s, id)});
  }
  return out;
}

}  // namespace polr::synthetic
