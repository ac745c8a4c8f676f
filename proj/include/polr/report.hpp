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
 * Run reports: one JSON document (config echo, per-question rows, per-repeat
 * aggregates, mean and standard deviation across repeats) plus a plain-text
 * table. Wall-clock fields can be left out, which makes the document a pure
 * function of the config, the dataset and the backend's outputs.
 */

#include <polr/core.hpp>
#include <polr/harness.hpp>
#include <polr/metrics.hpp>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace polr::report {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

struct ReportOptions {
  bool include_timing = true;  // k_t_ms and latency_ms
};

namespace detail {

inline json opt(const std::optional<std::string>& s) { return s ? json(*s) : json(); }
inline json opt(const std::optional<double>& v) { return v ? json(*v) : json(); }
inline json num(double v) { return std::isfinite(v) ? json(v) : json(); }

inline json nums(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
  json j = {{"mode", to_string(c.mode)},
            {"n_samples", c.n_samples},
            {"prefix_length", c.prefix_length},
            {"expansion_cap", c.expansion_cap ? json(*c.expansion_cap) : json()},
            {"cluster_method", to_string(c.cluster_method)},
            {"distance_threshold", c.distance_threshold},
            {"downsample_dim", c.downsample_dim},
            {"dbscan_eps", c.dbscan_eps},
            {"dbscan_min_pts", c.dbscan_min_pts},
            {"hdbscan_min_cluster_size", c.hdbscan_min_cluster_size},
            {"ac_confidence", c.ac_confidence},
            {"esc_window", c.esc_window},
            {"temperature", c.sampling.temperature},
            {"top_p", c.sampling.top_p},
            {"max_tokens", c.sampling.max_tokens},
            {"sample_temperatures", c.sample_temperatures},
            {"repeats", c.repeats},
            {"run_seed", c.run_seed},
            {"backend", to_string(c.backend)},
            {"max_inflight", c.max_inflight},
            {"measure_alignment", c.measure_alignment}};
  return j;
}

inline json to_json(const metrics::QuestionMetrics& m, const ReportOptions& o = {}) {
  json j = {{"question_id", m.question_id},
            {"repeat", m.repeat},
            {"correct", m.correct},
            {"failed", m.failed},
            {"fallback", m.fallback},
            {"voted", detail::opt(m.voted)},
            {"gold", detail::opt(m.gold)},
            {"n_samples", m.n_samples},
            {"eta", detail::num(m.eta)},
            {"sc_reference_measured", m.sc_reference_measured},
            {"prefix_tokens", m.prefix_tokens},
            {"continuation_tokens", m.continuation_tokens},
            {"sc_reference_tokens", m.sc_reference_tokens},
            {"pexp", m.pexp},
            {"kappa", detail::num(m.kappa)},
            {"dominant_size", m.dominant_size},
            {"cluster_sizes", m.cluster_sizes},
            {"cluster_accuracies", detail::nums(m.cluster_accuracies)},
            {"z", m.z},
            {"y", m.y},
            {"prefixes_sampled", m.prefixes_sampled},
            {"identical_prefix_group", m.identical_prefix_group}};
  if (o.include_timing) {
    j["k_t_ms"] = detail::num(m.k_t_ms);
    j["latency_ms"] = detail::num(m.latency_ms);
  }
  return j;
}

inline json to_json(const metrics::AggregateReport& a, const ReportOptions& o = {}) {
  json j = {{"questions", a.questions},
            {"scored", a.scored},
            {"failed", a.failed},
            {"fallbacks", a.fallbacks},
            {"n_samples", a.n_samples},
            {"accuracy", detail::num(a.accuracy)},
            {"mean_eta", detail::num(a.mean_eta)},
            {"mean_pexp", detail::num(a.mean_pexp)},
            {"peff", detail::num(a.peff)},
            {"mean_kappa", detail::num(a.mean_kappa)},
            {"nmi", detail::num(a.nmi)},
            {"mi_bits", detail::num(a.mi_bits)},
            {"cond_entropy_bits", detail::num(a.cond_entropy_bits)},
            {"pearson_rho", detail::opt(a.pearson_rho)},
            {"epm", a.epm},
            {"expansion_rate", detail::num(a.expansion_rate)},
            {"bound_violations", a.bound_violations}};
  if (o.include_timing) {
    j["mean_k_t_ms"] = detail::num(a.mean_k_t_ms);
    j["mean_latency_ms"] = detail::num(a.mean_latency_ms);
  }
  return j;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single repeat
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

/// {"metric": {"mean", "std"}} over the numeric fields of the per-repeat aggregates.
inline json summarize(const json& per_repeat) {
  json out = json::object();
  if (per_repeat.empty()) return out;
  for (const auto& [field, first] : per_repeat.front().items()) {
    if (!first.is_number() && !first.is_null()) continue;
    std::vector<double> xs;
    for (const auto& rep : per_repeat)
      if (rep.contains(field) && rep[field].is_number()) xs.push_back(rep[field].get<double>());
    if (xs.empty()) {
      out[field] = {{"mean", nullptr}, {"std", nullptr}};
      continue;
    }
    auto ms = mean_std(xs);
    out[field] = {{"mean", detail::num(ms.mean)}, {"std", detail::num(ms.std)}};
  }
  return out;
}

inline json build_report(const harness::RunResult& r, const ReportOptions& o = {}) {
  if (r.rows.empty()) throw Error("report: empty per-question set");
  json rows = json::array();
  for (const auto& m : r.rows) rows.push_back(to_json(m, o));
  json reps = json::array();
  for (const auto& a : r.per_repeat) reps.push_back(to_json(a, o));
  return {{"schema_version", kSchemaVersion},
          {"dataset", r.dataset},
          {"config", to_json(r.config)},
          {"questions", rows},
          {"per_repeat", reps},
          {"summary", summarize(reps)}};
}

// ============================================================================
// Plain-text table
// ============================================================================

namespace detail {

inline std::string cell(const json& summary, const char* field, int precision, double scale = 1.0,
                        bool with_std = false) {
  if (!summary.contains(field) || !summary[field]["mean"].is_number()) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << summary[field]["mean"].get<double>() * scale;
  if (with_std && summary[field]["std"].is_number())
    os << " +- " << std::setprecision(precision) << summary[field]["std"].get<double>() * scale;
  return os.str();
}

}  // namespace detail

/// Accuracy (+- std over repeats), the accuracy delta against `baseline` when
/// given, token efficiency, PExp, PEff, skew, NMI and clustering overhead.
inline std::string render_table(const json& report, const std::optional<json>& baseline = std::nullopt) {
  const auto& s = report.at("summary");
  const auto& cfg = report.at("config");
  std::vector<std::string> head = {"Mode", "N", "Acc (%)", "dAcc", "eta", "PExp", "PEff", "kappa", "NMI", "k_t (ms)"};
  std::string delta = "-";
  if (baseline && baseline->at("summary").contains("accuracy") &&
      baseline->at("summary")["accuracy"]["mean"].is_number() && s["accuracy"]["mean"].is_number()) {
    std::ostringstream os;
    double d = 100.0 * (s["accuracy"]["mean"].get<double>() - baseline->at("summary")["accuracy"]["mean"].get<double>());
    os << std::showpos << std::fixed << std::setprecision(2) << d;
    delta = os.str();
  }
  std::vector<std::string> row = {cfg.at("mode").get<std::string>(),
                                  std::to_string(cfg.at("n_samples").get<int>()),
                                  detail::cell(s, "accuracy", 2, 100.0, true),
                                  delta,
                                  detail::cell(s, "mean_eta", 3),
                                  detail::cell(s, "mean_pexp", 2),
                                  detail::cell(s, "peff", 3),
                                  detail::cell(s, "mean_kappa", 3),
                                  detail::cell(s, "nmi", 3),
                                  detail::cell(s, "mean_k_t_ms", 2)};
  std::vector<std::size_t> width(head.size());
  for (std::size_t i = 0; i < head.size(); ++i) width[i] = std::max(head[i].size(), row[i].size());
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " | " : "") << std::setw(static_cast<int>(width[i])) << v[i];
    os << '\n';
  };
  os << "dataset: " << report.value("dataset", std::string{}) << ", repeats: " << report.at("per_repeat").size()
     << '\n';
  line(head);
  for (std::size_t i = 0; i < head.size(); ++i) os << (i ? "-+-" : "") << std::string(width[i], '-');
  os << '\n';
  line(row);
  return os.str();
}

inline json read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open report " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("malformed report " + path.string() + ": " + e.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << body;
  if (!out.flush()) throw Error("cannot write " + path.string());
}

/// Writes `path` (JSON) and the table next to it with a .txt extension.
inline json write_report(const harness::RunResult& r, const std::filesystem::path& path,
                         const ReportOptions& o = {}) {
  auto doc = build_report(r, o);
  write_text(path, doc.dump(2) + "\n");
  auto txt = path;
  txt.replace_extension(".txt");
  write_text(txt, render_table(doc));
  return doc;
}

}  // namespace polr::report
