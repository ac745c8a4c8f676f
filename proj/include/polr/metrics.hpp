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
 * Efficiency, skew and information-theoretic metrics.
 *
 * Entropies are plug-in estimates in bits. NMI uses the arithmetic mean of
 * the two marginal entropies and is 0 when both are 0.
 */

#include <polr/core.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace polr::metrics {

// ============================================================================
// Skew and the expansion bound
// ============================================================================

/// Dominant (non-noise) cluster size over N.
inline double skew(std::span<const int> labels, int n) {
  if (n < 1) throw Error("skew: N must be >= 1");
  std::map<int, int> sizes;
  for (int l : labels)
    if (l >= 0) ++sizes[l];
  if (sizes.empty()) throw Error("skew: all points are noise");
  int top = 0;
  for (const auto& [id, s] : sizes) top = std::max(top, s);
  return static_cast<double>(top) / static_cast<double>(n);
}

/// Lower bound 1 - (K/M)/kappa on PoLR's saving against M SC expansions.
/// Returned unclamped; negative values mean the bound is vacuous.
inline double prop1_bound(double k, double sc_expansions, double kappa) {
  if (sc_expansions <= 0.0) throw Error("prop1_bound: M must be > 0");
  if (kappa <= 0.0) throw Error("prop1_bound: kappa must be > 0");
  return 1.0 - (k / sc_expansions) / kappa;
}

/// SC spreads `sc_expansions` continuations over clusters in proportion to
/// their sizes.
inline std::vector<double> proportional_allocation(std::span<const int> cluster_sizes, double sc_expansions) {
  double n = std::accumulate(cluster_sizes.begin(), cluster_sizes.end(), 0.0);
  std::vector<double> out;
  out.reserve(cluster_sizes.size());
  for (int s : cluster_sizes) out.push_back(sc_expansions * static_cast<double>(s) / n);
  return out;
}

/**
 * Relative saving of PoLR against an SC allocation, measured per prefix:
 * PoLR spends K continuations on |C*| prefixes while SC's allocation reaches
 * at most max_j(m_j / |C_j|) continuations per prefix. The saving is
 *
 *   1 - (K / |C*|) / max_j(m_j / |C_j|)
 *
 * and equals prop1_bound exactly when the allocation is proportional
 * (every per-prefix rate is M/N); any other allocation raises the peak rate
 * and the saving can only grow.
 */
inline double measured_relative_saving(std::span<const int> cluster_sizes, int dominant,
                                       std::span<const double> sc_allocation, double k) {
  if (cluster_sizes.size() != sc_allocation.size()) throw Error("allocation/cluster size mismatch");
  double peak = 0.0;
  for (std::size_t j = 0; j < cluster_sizes.size(); ++j)
    if (cluster_sizes[j] > 0) peak = std::max(peak, sc_allocation[j] / cluster_sizes[j]);
  if (peak <= 0.0) throw Error("SC allocation is empty");
  double polr_rate = k / static_cast<double>(cluster_sizes[static_cast<std::size_t>(dominant)]);
  return 1.0 - polr_rate / peak;
}

// ============================================================================
// Information measures
// ============================================================================

template <typename Label>
double entropy_bits(std::span<const Label> labels) {
  if (labels.empty()) return 0.0;
  std::map<Label, double> counts;
  for (const auto& l : labels) counts[l] += 1.0;
  const double n = static_cast<double>(labels.size());
  double h = 0.0;
  for (const auto& [l, c] : counts) {
    double p = c / n;
    h -= p * std::log2(p);
  }
  return h;
}

struct MutualInformation {
  double mi_bits = 0.0;
  double h_y_given_z_bits = 0.0;
};

/// Plug-in I(Z;Y) and H(Y|Z) = sum_z P(z) H(Y|Z=z), in bits.
template <typename LabelZ, typename LabelY>
MutualInformation mutual_information(std::span<const LabelZ> z, std::span<const LabelY> y) {
  if (z.size() != y.size()) throw Error("mutual_information: length mismatch");
  if (z.empty()) throw Error("mutual_information: empty input");
  std::map<LabelZ, std::vector<LabelY>> by_z;
  for (std::size_t i = 0; i < z.size(); ++i) by_z[z[i]].push_back(y[i]);
  const double n = static_cast<double>(z.size());
  MutualInformation r;
  for (const auto& [zv, ys] : by_z)
    r.h_y_given_z_bits += static_cast<double>(ys.size()) / n * entropy_bits<LabelY>(ys);
  r.mi_bits = std::max(0.0, entropy_bits<LabelY>(y) - r.h_y_given_z_bits);
  return r;
}

template <typename LabelZ, typename LabelY>
double nmi(std::span<const LabelZ> z, std::span<const LabelY> y) {
  auto mi = mutual_information(z, y);
  double denom = 0.5 * (entropy_bits<LabelZ>(z) + entropy_bits<LabelY>(y));
  if (denom <= 0.0) return 0.0;
  return std::clamp(mi.mi_bits / denom, 0.0, 1.0);
}

// ============================================================================
// Correlation
// ============================================================================

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("pearson: need two equal-length lists of size >= 2");
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw Error("correlation undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Correlation between cluster sizes and per-cluster accuracies.
inline double pearson_cluster_accuracy(std::span<const double> sizes, std::span<const double> accuracies) {
  return pearson(sizes, accuracies);
}

// ============================================================================
// Exact-prefix analysis
// ============================================================================

using Tokens = std::vector<std::string>;

/// Size of the largest group of traces whose first `length` tokens agree.
inline int largest_identical_prefix_group(std::span<const Tokens> traces, std::size_t length) {
  std::map<std::vector<std::string>, int> groups;
  int best = 0;
  for (const auto& t : traces) {
    std::vector<std::string> head(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(std::min(length, t.size())));
    best = std::max(best, ++groups[std::move(head)]);
  }
  return best;
}

struct PrefixMatch {
  double expansion_rate = 0.0;
  int epm = 0;
};

/// Expansion rate (mean largest-identical-group fraction) and the count of
/// questions whose traces all share their first `length` tokens.
inline PrefixMatch prefix_match_analysis(std::span<const std::vector<Tokens>> questions, std::size_t length) {
  PrefixMatch r;
  if (questions.empty()) return r;
  for (const auto& traces : questions) {
    if (traces.empty()) throw Error("prefix_match_analysis: question without traces");
    int g = largest_identical_prefix_group(traces, length);
    r.expansion_rate += static_cast<double>(g) / static_cast<double>(traces.size());
    if (g == static_cast<int>(traces.size())) ++r.epm;
  }
  r.expansion_rate /= static_cast<double>(questions.size());
  return r;
}

// ============================================================================
// Per-question and aggregate reports
// ============================================================================

struct QuestionMetrics {
  std::string question_id;
  int repeat = 0;
  bool correct = false;
  bool failed = false;    // backend failure after retries
  bool fallback = false;  // density clustering found no cluster; every prefix expanded
  std::optional<std::string> voted;
  std::optional<std::string> gold;
  int n_samples = 0;
  double eta = 0.0;
  bool sc_reference_measured = false;
  std::int64_t prefix_tokens = 0;
  std::int64_t continuation_tokens = 0;
  std::int64_t sc_reference_tokens = 0;
  int pexp = 0;
  double kappa = 1.0;
  int dominant_size = 0;
  double k_t_ms = 0.0;
  double latency_ms = 0.0;
  std::vector<int> cluster_sizes;
  std::vector<double> cluster_accuracies;  // fraction of correct traces per cluster; NaN when none scored
  std::vector<int> z;                      // cluster label of each scored trace
  std::vector<int> y;                      // 1 if that trace's answer matched gold
  int prefixes_sampled = 0;
  int identical_prefix_group = 0;  // largest set of prefixes with identical tokens
};

struct AggregateReport {
  int questions = 0;
  int scored = 0;
  int failed = 0;
  int fallbacks = 0;
  int n_samples = 0;
  double accuracy = 0.0;
  double mean_eta = 0.0;
  double mean_pexp = 0.0;
  double peff = 0.0;
  double mean_kappa = 0.0;
  double nmi = 0.0;
  double mi_bits = 0.0;
  double cond_entropy_bits = 0.0;
  std::optional<double> pearson_rho;
  int epm = 0;
  double expansion_rate = 0.0;
  int bound_violations = 0;
  double mean_k_t_ms = 0.0;
  double mean_latency_ms = 0.0;
};

inline double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Folds per-question rows in question-id order, so the result does not depend
/// on the order the rows arrive in.
inline AggregateReport aggregate(std::span<const QuestionMetrics> rows, const RunConfig& cfg) {
  if (rows.empty()) throw Error("aggregate: no per-question metrics");
  std::vector<const QuestionMetrics*> sorted;
  for (const auto& r : rows) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) {
    return std::tie(a->question_id, a->repeat) < std::tie(b->question_id, b->repeat);
  });

  AggregateReport a;
  a.questions = static_cast<int>(rows.size());
  a.n_samples = cfg.n_samples;
  std::vector<double> eta, pexp, kappa, nmis, mis, hyz, kt, lat, rate, sizes, accs;
  int correct = 0;
  for (const auto* r : sorted) {
    kt.push_back(r->k_t_ms);
    lat.push_back(r->latency_ms);
    if (r->failed) {
      ++a.failed;
      continue;
    }
    ++a.scored;
    if (r->correct) ++correct;
    if (r->fallback) ++a.fallbacks;
    eta.push_back(r->eta);
    pexp.push_back(static_cast<double>(r->pexp));
    kappa.push_back(r->kappa);
    const double n = static_cast<double>(r->n_samples);
    if (r->prefixes_sampled > 0) {
      rate.push_back(static_cast<double>(r->identical_prefix_group) / r->prefixes_sampled);
      if (r->identical_prefix_group == r->prefixes_sampled) ++a.epm;
    }

    if (!r->z.empty()) {
      auto mi = mutual_information<int, int>(r->z, r->y);
      mis.push_back(mi.mi_bits);
      hyz.push_back(mi.h_y_given_z_bits);
      nmis.push_back(nmi<int, int>(r->z, r->y));
    }
    for (std::size_t c = 0; c < r->cluster_sizes.size() && c < r->cluster_accuracies.size(); ++c)
      if (!std::isnan(r->cluster_accuracies[c])) {
        sizes.push_back(static_cast<double>(r->cluster_sizes[c]));
        accs.push_back(r->cluster_accuracies[c]);
      }

    // Expansion saving against SC spreading M = N continuations in
    // proportion to cluster size; equals the bound when kappa is consistent.
    auto dom = std::find(r->cluster_sizes.begin(), r->cluster_sizes.end(), r->dominant_size);
    if (r->pexp > 0 && r->kappa > 0.0 && dom != r->cluster_sizes.end()) {
      auto alloc = proportional_allocation(r->cluster_sizes, n);
      double measured = measured_relative_saving(r->cluster_sizes, static_cast<int>(dom - r->cluster_sizes.begin()),
                                                 alloc, r->pexp);
      if (measured < prop1_bound(r->pexp, n, r->kappa) - 1e-9) ++a.bound_violations;
    }
  }
  a.accuracy = a.scored ? static_cast<double>(correct) / a.scored : 0.0;
  a.mean_eta = mean_of(eta);
  a.mean_pexp = mean_of(pexp);
  a.peff = 1.0 - a.mean_pexp / static_cast<double>(cfg.n_samples);
  a.mean_kappa = mean_of(kappa);
  a.nmi = mean_of(nmis);
  a.mi_bits = mean_of(mis);
  a.cond_entropy_bits = mean_of(hyz);
  a.expansion_rate = mean_of(rate);
  a.mean_k_t_ms = mean_of(kt);
  a.mean_latency_ms = mean_of(lat);
  try {
    a.pearson_rho = pearson_cluster_accuracy(sizes, accs);
  } catch (const Error&) {
    a.pearson_rho.reset();
  }
  return a;
}

}  // namespace polr::metrics
