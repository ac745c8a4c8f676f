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

#include <polr/metrics.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <random>

using namespace polr;
using namespace polr::metrics;

namespace {

double nmi_ii(const std::vector<int>& z, const std::vector<int>& y) { return polr::metrics::nmi<int, int>(z, y); }

// Contingency-table oracle: I = sum p(z,y) log2(p(z,y) / (p(z) p(y))).
double mi_oracle(const std::vector<int>& z, const std::vector<int>& y) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pz, py;
  const double n = static_cast<double>(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    joint[{z[i], y[i]}] += 1 / n;
    pz[z[i]] += 1 / n;
    py[y[i]] += 1 / n;
  }
  double mi = 0;
  for (auto& [k, p] : joint) mi += p * std::log2(p / (pz[k.first] * py[k.second]));
  return mi;
}

double h_oracle(const std::vector<int>& v) {
  std::map<int, double> c;
  for (int x : v) c[x] += 1;
  double h = 0;
  for (auto& [k, n] : c) h -= n / v.size() * std::log2(n / v.size());
  return h;
}

}  // namespace

TEST(Skew, Examples) {
  std::vector<int> one(9, 0);
  EXPECT_DOUBLE_EQ(skew(one, 9), 1.0);
  std::vector<int> bal = {0, 1, 2, 3, 0, 1, 2, 3};
  EXPECT_DOUBLE_EQ(skew(bal, 8), 0.25);
  std::vector<int> t8;
  for (int c : {0, 1, 2})
    for (int i = 0; i < (c == 0 ? 20 : c == 1 ? 19 : 12); ++i) t8.push_back(c);
  EXPECT_NEAR(skew(t8, 51), 0.3922, 1e-4);
  std::vector<int> noise = {-1, -1};
  EXPECT_THROW(skew(noise, 2), Error);
}

TEST(Bound, Examples) {
  EXPECT_NEAR(prop1_bound(4, 10, 0.5), 0.2, 1e-15);
  EXPECT_DOUBLE_EQ(prop1_bound(7, 7, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(prop1_bound(5, 10, 0.25), -1.0);
  EXPECT_THROW(prop1_bound(1, 10, 0.0), Error);
  EXPECT_THROW(prop1_bound(1, 0, 0.5), Error);
}

TEST(Bound, EqualityUnderProportionalAllocation) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 500; ++t) {
    std::vector<int> sizes;
    int n = 0;
    for (int c = 0, m = 1 + static_cast<int>(rng() % 5); c < m; ++c) {
      sizes.push_back(1 + static_cast<int>(rng() % 20));
      n += sizes.back();
    }
    int dom = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    double M = 1 + static_cast<double>(rng() % static_cast<unsigned>(n));
    double k = 1 + static_cast<double>(rng() % static_cast<unsigned>(M));
    auto alloc = proportional_allocation(sizes, M);
    double kappa = static_cast<double>(sizes[static_cast<std::size_t>(dom)]) / n;
    EXPECT_NEAR(measured_relative_saving(sizes, dom, alloc, k), prop1_bound(k, M, kappa), 1e-9);
  }
}

TEST(Information, HandExample) {
  std::vector<int> z = {0, 0, 1, 1}, y = {0, 0, 0, 1};
  auto mi = mutual_information<int, int>(z, y);
  EXPECT_NEAR(mi.mi_bits, 0.3113, 1e-4);
  EXPECT_NEAR(mi.h_y_given_z_bits, 0.5, 1e-12);
  EXPECT_NEAR(mi.mi_bits, mi_oracle(z, y), 1e-12);
  EXPECT_NEAR(nmi_ii(z, y), 0.3437, 1e-4);
  EXPECT_NEAR(nmi_ii(z, y), mi_oracle(z, y) / ((1.0 + h_oracle(y)) / 2), 1e-12);
}

TEST(Information, DegenerateCases) {
  std::vector<int> y = {0, 1, 1, 0, 1};
  auto same = mutual_information<int, int>(y, y);
  EXPECT_NEAR(same.mi_bits, h_oracle(y), 1e-12);
  EXPECT_NEAR(same.h_y_given_z_bits, 0.0, 1e-12);
  EXPECT_NEAR(nmi_ii(y, y), 1.0, 1e-12);

  std::vector<int> z(5, 3);
  auto none = mutual_information<int, int>(z, y);
  EXPECT_NEAR(none.mi_bits, 0.0, 1e-12);
  EXPECT_NEAR(none.h_y_given_z_bits, h_oracle(y), 1e-12);
  EXPECT_DOUBLE_EQ(nmi_ii(z, y), 0.0);

  std::vector<int> c(4, 0);
  EXPECT_DOUBLE_EQ(nmi_ii(c, c), 0.0);  // 0/0 := 0

  std::vector<int> shorter = {1, 2};
  EXPECT_THROW((mutual_information<int, int>(shorter, y)), Error);
}

TEST(Information, RandomLabelsAgainstOracle) {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 1000; ++t) {
    std::size_t n = 1 + rng() % 60;
    int kz = 1 + static_cast<int>(rng() % 6);
    std::vector<int> z(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = static_cast<int>(rng() % static_cast<unsigned>(kz));
      y[i] = static_cast<int>(rng() % 2);
    }
    auto mi = mutual_information<int, int>(z, y);
    const double hy = entropy_bits<int>(y), hz = entropy_bits<int>(z);
    EXPECT_NEAR(mi.mi_bits, mi_oracle(z, y), 1e-9);
    EXPECT_NEAR(mi.h_y_given_z_bits, hy - mi.mi_bits, 1e-12);
    EXPECT_LE(mi.mi_bits, std::min(hy, hz) + 1e-12);
    EXPECT_GE(mi.h_y_given_z_bits, -1e-12);
    double v = nmi_ii(z, y);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    // Relabeling the clusters changes nothing.
    std::vector<int> relabeled(n);
    for (std::size_t i = 0; i < n; ++i) relabeled[i] = 100 - 7 * z[i];
    EXPECT_NEAR(nmi_ii(relabeled, y), v, 1e-12);
  }
}

TEST(Pearson, Examples) {
  std::vector<double> acc = {0.9, 0.6, 0.3};
  std::vector<double> up = {3, 2, 1}, down = {1, 2, 3};
  EXPECT_NEAR(pearson_cluster_accuracy(up, acc), 1.0, 1e-12);
  EXPECT_NEAR(pearson_cluster_accuracy(down, acc), -1.0, 1e-12);
  // Hand computation: sxy = -0.94, sxx = 38, syy = 0.0248.
  std::vector<double> sizes = {20, 19, 12}, accs = {0.45, 0.53, 0.67};
  EXPECT_NEAR(pearson_cluster_accuracy(sizes, accs), -0.94 / std::sqrt(38 * 0.0248), 1e-12);
  EXPECT_NEAR(pearson_cluster_accuracy(sizes, accs), -0.9683, 1e-4);
  std::vector<double> flat = {1, 1, 1};
  try {
    pearson(flat, acc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "correlation undefined");
  }
}

TEST(PrefixMatch, Examples) {
  std::vector<Tokens> same = {{"a", "b"}, {"a", "b"}};
  std::vector<std::vector<Tokens>> qs = {same, same, same};
  auto all = prefix_match_analysis(qs, 2);
  EXPECT_DOUBLE_EQ(all.expansion_rate, 1.0);
  EXPECT_EQ(all.epm, 3);

  std::vector<Tokens> three = {{"x", "y", "z", "w", "1"}, {"x", "y", "z", "w", "2"}, {"x", "q", "z", "w"}};
  std::vector<std::vector<Tokens>> one = {three};
  auto r = prefix_match_analysis(one, 4);
  EXPECT_NEAR(r.expansion_rate, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(r.epm, 0);
  EXPECT_EQ(prefix_match_analysis(one, 1).epm, 1);
}

namespace {

QuestionMetrics row(std::string id, int pexp, int n, double kappa) {
  QuestionMetrics m;
  m.question_id = std::move(id);
  m.pexp = pexp;
  m.n_samples = n;
  m.kappa = kappa;
  m.eta = 1.0 - static_cast<double>(pexp) / n;
  m.dominant_size = static_cast<int>(std::lround(kappa * n));
  m.cluster_sizes = {m.dominant_size};
  if (n > m.dominant_size) m.cluster_sizes.push_back(n - m.dominant_size);
  return m;
}

}  // namespace

TEST(Aggregate, Examples) {
  RunConfig c;
  c.n_samples = 51;
  std::vector<QuestionMetrics> rows = {row("a", 20, 51, 20 / 51.0), row("b", 10, 51, 10 / 51.0)};
  auto a = aggregate(rows, c);
  EXPECT_DOUBLE_EQ(a.mean_pexp, 15.0);
  EXPECT_NEAR(a.peff, 1 - 15.0 / 51, 1e-15);
  EXPECT_NEAR(a.peff, 0.7059, 1e-4);
  EXPECT_EQ(a.bound_violations, 0);

  RunConfig one;
  one.n_samples = 7;
  std::vector<QuestionMetrics> sc = {row("s", 7, 7, 1.0)};
  auto b = aggregate(sc, one);
  EXPECT_DOUBLE_EQ(b.peff, 0.0);
  EXPECT_DOUBLE_EQ(b.mean_eta, 0.0);
  EXPECT_EQ(b.bound_violations, 0);

  EXPECT_THROW(aggregate({}, c), Error);
}

TEST(Aggregate, CountsBoundViolations) {
  RunConfig c;
  c.n_samples = 10;
  std::vector<QuestionMetrics> rows = {row("x", 5, 10, 0.5), row("y", 5, 10, 0.9)};
  for (auto& r : rows) {
    r.cluster_sizes = {5, 3, 2};
    r.dominant_size = 5;
  }
  // y claims kappa 0.9 for a cluster of 5 out of 10.
  EXPECT_EQ(aggregate(rows, c).bound_violations, 1);
}

TEST(Aggregate, OrderInvariant) {
  std::mt19937_64 rng(3);
  RunConfig c;
  c.n_samples = 21;
  std::vector<QuestionMetrics> rows;
  for (int i = 0; i < 40; ++i) {
    auto m = row("q" + std::to_string(i), 1 + static_cast<int>(rng() % 21), 21, (1 + rng() % 21) / 21.0);
    m.correct = rng() % 2;
    for (int k = 0; k < 21; ++k) {
      m.z.push_back(static_cast<int>(rng() % 3));
      m.y.push_back(static_cast<int>(rng() % 2));
    }
    m.cluster_sizes = {1 + static_cast<int>(rng() % 9), 1 + static_cast<int>(rng() % 9), 1 + static_cast<int>(rng() % 9)};
    m.cluster_accuracies = {(rng() % 8) / 7.0, (rng() % 8) / 7.0, (rng() % 8) / 7.0};
    m.prefixes_sampled = 21;
    m.identical_prefix_group = 1 + static_cast<int>(rng() % 21);
    rows.push_back(m);
  }
  auto base = aggregate(rows, c);
  for (int t = 0; t < 10; ++t) {
    std::shuffle(rows.begin(), rows.end(), rng);
    auto a = aggregate(rows, c);
    EXPECT_EQ(a.accuracy, base.accuracy);
    EXPECT_EQ(a.mean_eta, base.mean_eta);
    EXPECT_EQ(a.nmi, base.nmi);
    EXPECT_EQ(a.mi_bits, base.mi_bits);
    EXPECT_EQ(a.cond_entropy_bits, base.cond_entropy_bits);
    EXPECT_EQ(a.pearson_rho, base.pearson_rho);
    EXPECT_EQ(a.expansion_rate, base.expansion_rate);
    EXPECT_EQ(a.bound_violations, base.bound_violations);
  }
  EXPECT_LE(base.epm, base.questions);
}
