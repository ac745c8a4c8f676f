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

#include <polr/backend.hpp>
#include <polr/synthetic.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace polr;
using namespace polr::synthetic;
using backend::Stage;

namespace {

Question question(std::string id) { return {std::move(id), "prompt", std::nullopt}; }

SamplingParams params(int max_tokens, std::uint64_t seed) { return {0.6, 0.9, max_tokens, seed}; }

backend::GenerationRequest prefix_req(const std::string& qid, int lp, std::uint64_t seed) {
  return {"prompt", std::nullopt, params(lp, seed), {qid, 0, lp}};
}

}  // namespace

TEST(SyntheticSpec, Validation) {
  auto s = build_synthetic_spec({0.5, 0.5}, {1, 0});
  EXPECT_NO_THROW(validate(s));
  s.mode_weights = {0.5, 0.6};
  EXPECT_THROW(validate(s), ConfigError);
  EXPECT_THROW(build_synthetic_spec({0.7, 0.2}, {1, 1}), ConfigError);
  EXPECT_THROW(build_synthetic_spec({0.5, 0.5}, {1.2, 0}), ConfigError);
}

TEST(SyntheticSpec, HashAwareVocabulariesAreOrthogonal) {
  // Every mode owns buckets (or signs) that no other mode touches.
  auto s = build_synthetic_spec({0.25, 0.25, 0.25, 0.25}, {1, 1, 1, 1});
  std::map<std::size_t, int> owner;
  for (std::size_t z = 0; z < s.mode_vocab.size(); ++z)
    for (const auto& t : s.mode_vocab[z]) {
      auto slot = embed::feature_slot(t, 10);
      EXPECT_EQ(slot.sign, 1.0);
      auto [it, fresh] = owner.emplace(slot.bucket, static_cast<int>(z));
      EXPECT_EQ(it->second, static_cast<int>(z));
    }
  SyntheticLayout anti;
  anti.antipodal = true;
  auto a = build_synthetic_spec({0.5, 0.5}, {1, 1}, anti);
  for (const auto& t : a.mode_vocab[0]) EXPECT_EQ(embed::feature_slot(t, 10).sign, 1.0);
  for (const auto& t : a.mode_vocab[1]) EXPECT_EQ(embed::feature_slot(t, 10).sign, -1.0);
}

TEST(Synthetic, SameSeedSameText) {
  SyntheticBackend be(build_synthetic_spec({0.5, 0.5}, {0.5, 0.5}));
  auto a = be.sample_prefix(prefix_req("q1", 64, 42));
  auto b = be.sample_prefix(prefix_req("q1", 64, 42));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.token_count, 64);
  EXPECT_FALSE(a.finished);
  EXPECT_NE(a.text, be.sample_prefix(prefix_req("q1", 64, 43)).text);
  EXPECT_EQ(be.calls(), 3);
}

TEST(Synthetic, SingleModeUsesItsVocabulary) {
  auto spec = build_synthetic_spec({1.0}, {1.0});
  std::set<std::string> vocab(spec.mode_vocab[0].begin(), spec.mode_vocab[0].end());
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto r = synthetic_generate(spec, question("q"), Stage::prefix, params(32, seed));
    EXPECT_EQ(r.latent_mode, 0);
    for (const auto& t : embed::tokenize(r.text)) EXPECT_TRUE(vocab.count(t)) << t;
  }
}

TEST(Synthetic, ZeroLengthPrefixIsRejectedBeforeAnyCall) {
  SyntheticBackend be(build_synthetic_spec({1.0}, {1.0}));
  EXPECT_THROW(be.sample_prefix(prefix_req("q", 0, 1)), ConfigError);
  EXPECT_EQ(be.calls(), 0);
}

TEST(Synthetic, SpliceConsistency) {
  SyntheticLayout lay;
  lay.opening_length = 4;
  lay.overlap_fraction = 0.3;
  lay.length_jitter = 30;
  lay.full_length = 120;
  auto spec = build_synthetic_spec({0.4, 0.6}, {0.8, 0.3}, lay);
  for (std::uint64_t seed = 0; seed < 40; ++seed)
    for (int lp : {1, 2, 7, 50, 89, 90, 91, 92, 150, 1000}) {
      auto q = question("splice" + std::to_string(seed));
      auto whole = synthetic_generate(spec, q, Stage::prefix, params(100000, seed));
      ASSERT_TRUE(whole.finished);
      auto pre = synthetic_generate(spec, q, Stage::prefix, params(lp, seed));
      EXPECT_LE(pre.token_count, lp);
      auto cont = synthetic_generate(spec, q, Stage::continuation, params(100000, seed), pre.text);
      EXPECT_EQ(pre.text + cont.text, whole.text);
      EXPECT_EQ(pre.token_count + cont.token_count, whole.token_count);
      EXPECT_EQ(cont.latent_mode, whole.latent_mode);
      if (pre.finished) {
        EXPECT_EQ(cont.token_count, 0);
      }
    }
}

TEST(Synthetic, TerminatedPrefixGivesEmptyContinuation) {
  auto spec = build_synthetic_spec({1.0}, {1.0});
  auto r = synthetic_generate(spec, question("q"), Stage::continuation, params(100, 1),
                              std::string("some text\n#### 12"));
  EXPECT_TRUE(r.finished);
  EXPECT_EQ(r.token_count, 0);
  EXPECT_TRUE(r.text.empty());
}

TEST(Synthetic, ContinuationCapReturnsUnfinished) {
  auto spec = build_synthetic_spec({1.0}, {1.0});
  auto q = question("cap");
  auto pre = synthetic_generate(spec, q, Stage::prefix, params(10, 5));
  auto r = synthetic_generate(spec, q, Stage::continuation, params(20, 5), pre.text);
  EXPECT_FALSE(r.finished);
  EXPECT_EQ(r.token_count, 20);
}

TEST(Synthetic, ForeignPrefixContinuesInItsMode) {
  auto spec = build_synthetic_spec({0.5, 0.5}, {1.0, 0.0});
  auto q = question("foreign");
  std::string p = spec.mode_vocab[1][0] + " " + spec.mode_vocab[1][1];
  auto r = synthetic_generate(spec, q, Stage::continuation, params(10000, 1), p);
  EXPECT_EQ(r.latent_mode, 1);
  EXPECT_TRUE(r.finished);
  EXPECT_EQ(r.token_count + 2, spec.full_length);
}

TEST(Synthetic, AlwaysCorrectModeYieldsGold) {
  auto spec = build_synthetic_spec({1.0}, {1.0});
  for (int i = 0; i < 30; ++i) {
    auto q = question("g" + std::to_string(i));
    auto r = synthetic_generate(spec, q, Stage::prefix, params(100000, 9));
    EXPECT_TRUE(r.text.ends_with("#### " + gold_answer(spec, q.id)));
  }
}

TEST(Synthetic, CorrectnessRateConvergesToModeProbability) {
  auto spec = build_synthetic_spec({1.0}, {0.7});
  spec.full_length = 8;
  const int n = 10000;
  int right = 0;
  for (int i = 0; i < n; ++i) {
    auto q = question("mc" + std::to_string(i % 97));
    auto pre = synthetic_generate(spec, q, Stage::prefix, params(3, static_cast<std::uint64_t>(i)));
    auto r = synthetic_generate(spec, q, Stage::continuation, params(100, static_cast<std::uint64_t>(i)), pre.text);
    right += (pre.text + r.text).ends_with(" " + gold_answer(spec, q.id));
  }
  EXPECT_NEAR(static_cast<double>(right) / n, 0.7, 0.02);
}

TEST(Synthetic, PerModeCorrectnessAndWeights) {
  auto spec = build_synthetic_spec({0.8, 0.2}, {0.9, 0.2});
  spec.full_length = 8;
  const int n = 1000;
  int mode0 = 0;
  std::array<int, 2> seen{}, right{};
  for (int i = 0; i < n; ++i) {
    auto q = question("w" + std::to_string(i));
    auto r = synthetic_generate(spec, q, Stage::prefix, params(100, 3));
    int z = *r.latent_mode;
    mode0 += z == 0;
    ++seen[static_cast<std::size_t>(z)];
    right[static_cast<std::size_t>(z)] += r.text.ends_with(" " + gold_answer(spec, q.id));
  }
  EXPECT_NEAR(mode0 / static_cast<double>(n), 0.8, 0.04);
  for (int z : {0, 1}) {
    double p = spec.mode_correct_prob[static_cast<std::size_t>(z)];
    double sd = std::sqrt(p * (1 - p) / seen[static_cast<std::size_t>(z)]);
    EXPECT_NEAR(right[static_cast<std::size_t>(z)] / static_cast<double>(seen[static_cast<std::size_t>(z)]), p, 3 * sd);
  }
}

TEST(Synthetic, ModelIdTracksSpec) {
  SyntheticBackend a(build_synthetic_spec({0.5, 0.5}, {1, 0}));
  SyntheticBackend b(build_synthetic_spec({0.5, 0.5}, {1, 0.1}));
  EXPECT_NE(a.model_id(), b.model_id());
  EXPECT_EQ(a.model_id(), SyntheticBackend(build_synthetic_spec({0.5, 0.5}, {1, 0})).model_id());
}

TEST(Retry, BackoffSchedule) {
  std::vector<long> delays;
  backend::RetryPolicy p;
  p.sleep = [&](std::chrono::milliseconds d) { delays.push_back(d.count()); };
  int calls = 0;
  EXPECT_THROW(backend::with_retry(p, 7,
                                   [&]() -> int {
                                     ++calls;
                                     throw backend::BackendError("busy", 1, true);
                                   }),
               backend::BackendError);
  EXPECT_EQ(calls, 3);
  ASSERT_EQ(delays.size(), 2u);
  EXPECT_GE(delays[0], 500);
  EXPECT_LE(delays[0], 625);
  EXPECT_GE(delays[1], 1000);
  EXPECT_LE(delays[1], 1250);
}

TEST(Retry, NonRetryableFailsImmediately) {
  backend::RetryPolicy p;
  p.sleep = [](auto) {};
  int calls = 0;
  try {
    backend::with_retry(p, 1, [&]() -> int {
      ++calls;
      throw backend::BackendError("bad request", 1, false);
    });
  } catch (const backend::BackendError& e) {
    EXPECT_EQ(e.attempts(), 1);
  }
  EXPECT_EQ(calls, 1);
}

TEST(Retry, RecoversAfterTransientFailure) {
  backend::RetryPolicy p;
  p.sleep = [](auto) {};
  int calls = 0;
  int v = backend::with_retry(p, 1, [&] {
    if (++calls < 3) throw backend::BackendError("flaky", 1, true);
    return 5;
  });
  EXPECT_EQ(v, 5);
}

TEST(Tokens, WhitespaceCount) {
  EXPECT_EQ(backend::count_whitespace_tokens(""), 0);
  EXPECT_EQ(backend::count_whitespace_tokens("  a  b\n#### 3 "), 4);
}
