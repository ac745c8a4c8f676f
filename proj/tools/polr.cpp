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

// polr: command-line front end.
//
//   polr run      --dataset data/x.jsonl --mode polr --n 51 --out report.json
//   polr analyze  --cache-dir .polr-cache --prefix-len 256
//   polr report   --in report.json [--baseline sc.json]

#include <polr/polr.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <memory>

namespace {

using namespace polr;

struct RunArgs {
  std::string mode = "polr";
  int n = 51;
  int k = 0;
  int prefix_len = 256;
  double threshold = 1.0;
  std::string cluster_method = "agglomerative";
  double dbscan_eps = 0.5;
  int dbscan_min_pts = 3;
  int hdbscan_min_cluster_size = 3;
  double ac_confidence = 0.95;
  int esc_window = 5;
  double temperature = 0.6;
  double top_p = 0.9;
  int max_tokens = 32768;
  std::vector<double> temperatures;
  std::string dataset;
  std::string format = "jsonl";
  std::string backend = "synthetic";
  std::string endpoint = "http://127.0.0.1:8000";
  std::string model;
  std::uint64_t seed = 0;
  int repeats = 1;
  int max_inflight = 8;
  std::string cache_dir;
  std::string out = "polr_report.json";
  bool measure_alignment = false;
  bool no_timing = false;
  bool quiet = false;
  // synthetic model
  int syn_questions = 100;
  std::vector<double> syn_weights = {0.7, 0.3};
  std::vector<double> syn_correct = {0.85, 0.35};
  int syn_length = 400;
  int syn_jitter = 0;
  int syn_opening = 0;
  double syn_overlap = 0.0;
  std::uint64_t syn_seed = 0;
};

RunConfig to_config(const RunArgs& a) {
  RunConfig c;
  c.mode = parse_mode(a.mode);
  c.n_samples = a.n;
  if (a.k > 0) c.expansion_cap = a.k;
  c.prefix_length = a.prefix_len;
  c.distance_threshold = a.threshold;
  c.cluster_method = parse_cluster_method(a.cluster_method);
  c.dbscan_eps = a.dbscan_eps;
  c.dbscan_min_pts = a.dbscan_min_pts;
  c.hdbscan_min_cluster_size = a.hdbscan_min_cluster_size;
  c.ac_confidence = a.ac_confidence;
  c.esc_window = a.esc_window;
  c.sampling.temperature = a.temperature;
  c.sampling.top_p = a.top_p;
  c.sampling.max_tokens = a.max_tokens;
  c.sample_temperatures = a.temperatures;
  c.run_seed = a.seed;
  c.repeats = a.repeats;
  c.backend = parse_backend(a.backend);
  c.max_inflight = a.max_inflight;
  c.measure_alignment = a.measure_alignment;
  return validate_config(c);
}

int cmd_run(const RunArgs& a) {
  const RunConfig cfg = to_config(a);

  std::unique_ptr<backend::Backend> inner;
  dataset::Dataset ds;
  if (cfg.backend == BackendKind::synthetic) {
    synthetic::SyntheticLayout lay;
    lay.full_length = a.syn_length;
    lay.length_jitter = a.syn_jitter;
    lay.opening_length = a.syn_opening;
    lay.overlap_fraction = a.syn_overlap;
    lay.seed = a.syn_seed;
    auto spec = synthetic::build_synthetic_spec(a.syn_weights, a.syn_correct, lay);
    if (a.dataset.empty()) {
      ds = {"synthetic", synthetic::make_questions(spec, a.syn_questions)};
    } else {
      // The synthetic model knows its own gold answers.
      ds = dataset::load_dataset(a.dataset, dataset::parse_format(a.format));
      for (auto& q : ds.questions) q.gold_answer = synthetic::gold_answer(spec, q.id);
    }
    inner = std::make_unique<synthetic::SyntheticBackend>(std::move(spec));
  } else {
    if (a.dataset.empty()) throw ConfigError("dataset", "required with the remote backend");
    if (a.model.empty()) throw ConfigError("model", "required with the remote backend");
    ds = dataset::load_dataset(a.dataset, dataset::parse_format(a.format));
    inner = std::make_unique<backend::RemoteBackend>(backend::RemoteConfig{a.endpoint, a.model, std::nullopt});
  }

  std::unique_ptr<cache::FileCache> fc;
  std::unique_ptr<cache::CachingBackend> cached;
  backend::Backend* be = inner.get();
  if (!a.cache_dir.empty()) {
    fc = std::make_unique<cache::FileCache>(a.cache_dir);
    cached = std::make_unique<cache::CachingBackend>(*inner, *fc);
    be = cached.get();
  }

  harness::RunOptions opts;
  if (!a.quiet)
    opts.progress = [](int r, int done, int total) {
      if (done == total || done % 25 == 0) std::cerr << "repeat " << r << ": " << done << "/" << total << '\n';
    };
  auto result = harness::run_dataset(ds, cfg, *be, opts);
  auto doc = report::write_report(result, a.out, report::ReportOptions{!a.no_timing});
  std::cout << report::render_table(doc);
  if (cached)
    std::cerr << "cache: " << cached->hits() << " hits, " << cached->misses() << " misses\n";
  std::cerr << "backend calls: " << inner->calls() << '\n';
  return 0;
}

int cmd_analyze(const std::string& dir, int prefix_len, const std::string& out) {
  cache::FileCache fc(dir);
  std::map<std::string, std::vector<metrics::Tokens>> by_question;
  for (const auto& e : fc.entries()) {
    if (e.key.stage != backend::Stage::prefix || e.key.prefix_length < prefix_len) continue;
    metrics::Tokens toks;
    std::istringstream in(e.value.text);
    for (std::string w; in >> w;) toks.push_back(w);
    by_question[e.key.model_id + "/" + e.key.question_id + "@" + std::to_string(e.key.prefix_length)].push_back(
        std::move(toks));
  }
  if (by_question.empty()) throw Error("no prefix entries of length >= " + std::to_string(prefix_len) + " in " + dir);
  std::vector<std::vector<metrics::Tokens>> groups;
  for (auto& [q, t] : by_question) groups.push_back(std::move(t));
  auto r = metrics::prefix_match_analysis(groups, static_cast<std::size_t>(prefix_len));
  nlohmann::json j = {{"prefix_length", prefix_len},
                      {"questions", groups.size()},
                      {"expansion_rate", r.expansion_rate},
                      {"epm", r.epm}};
  std::cout << j.dump(2) << '\n';
  if (!out.empty()) report::write_text(out, j.dump(2) + "\n");
  return 0;
}

int cmd_report(const std::string& in, const std::string& baseline, const std::string& out) {
  auto doc = report::read_report(in);
  std::optional<nlohmann::json> base;
  if (!baseline.empty()) base = report::read_report(baseline);
  auto table = report::render_table(doc, base);
  if (out.empty())
    std::cout << table;
  else
    report::write_text(out, table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prefix-consensus sampling for reasoning models"};
  app.require_subcommand(1);

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Run a dataset and write a report");
  run->add_option("--mode", ra.mode, "cot|sc|polr|ac|esc|polr_ac|polr_esc")->capture_default_str();
  run->add_option("--n", ra.n, "Prefixes sampled per question (N)")->capture_default_str();
  run->add_option("--k", ra.k, "Expansion cap K (0 = whole dominant cluster)")->capture_default_str();
  run->add_option("--prefix-len", ra.prefix_len, "Prefix length in tokens")->capture_default_str();
  run->add_option("--threshold", ra.threshold, "Agglomerative distance threshold")->capture_default_str();
  run->add_option("--cluster-method", ra.cluster_method, "agglomerative|dbscan|hdbscan|none")->capture_default_str();
  run->add_option("--dbscan-eps", ra.dbscan_eps)->capture_default_str();
  run->add_option("--dbscan-min-pts", ra.dbscan_min_pts)->capture_default_str();
  run->add_option("--hdbscan-min-cluster-size", ra.hdbscan_min_cluster_size)->capture_default_str();
  run->add_option("--ac-confidence", ra.ac_confidence)->capture_default_str();
  run->add_option("--esc-window", ra.esc_window)->capture_default_str();
  run->add_option("--temperature", ra.temperature)->capture_default_str();
  run->add_option("--temperatures", ra.temperatures, "Per-sample temperatures (N values)");
  run->add_option("--top-p", ra.top_p)->capture_default_str();
  run->add_option("--max-tokens", ra.max_tokens)->capture_default_str();
  run->add_option("--dataset", ra.dataset, "Line-delimited JSON questions");
  run->add_option("--format", ra.format, "jsonl|gsm8k")->capture_default_str();
  run->add_option("--backend", ra.backend, "synthetic|remote")->capture_default_str();
  run->add_option("--endpoint", ra.endpoint, "Completion server base URL")->capture_default_str();
  run->add_option("--model", ra.model, "Model name sent to the server");
  run->add_option("--seed", ra.seed, "Run seed")->capture_default_str();
  run->add_option("--repeats", ra.repeats)->capture_default_str();
  run->add_option("--max-inflight", ra.max_inflight, "Concurrent generation requests")->capture_default_str();
  run->add_option("--cache-dir", ra.cache_dir, "Generation cache directory");
  run->add_option("--out", ra.out, "Report path (.json; a .txt table is written next to it)")->capture_default_str();
  run->add_flag("--measure-alignment", ra.measure_alignment, "Also expand non-dominant prefixes (untracked cost)");
  run->add_flag("--no-timing", ra.no_timing, "Omit wall-clock fields from the report");
  run->add_flag("--quiet", ra.quiet);
  run->add_option("--synthetic-questions", ra.syn_questions)->capture_default_str();
  run->add_option("--synthetic-weights", ra.syn_weights)->capture_default_str();
  run->add_option("--synthetic-correct", ra.syn_correct)->capture_default_str();
  run->add_option("--synthetic-length", ra.syn_length)->capture_default_str();
  run->add_option("--synthetic-jitter", ra.syn_jitter)->capture_default_str();
  run->add_option("--synthetic-opening", ra.syn_opening)->capture_default_str();
  run->add_option("--synthetic-overlap", ra.syn_overlap)->capture_default_str();
  run->add_option("--synthetic-seed", ra.syn_seed)->capture_default_str();

  std::string cache_dir, analyze_out;
  int analyze_len = 256;
  auto* analyze = app.add_subcommand("analyze", "Exact-prefix agreement over cached prefixes");
  analyze->add_option("--cache-dir", cache_dir)->required();
  analyze->add_option("--prefix-len", analyze_len)->capture_default_str();
  analyze->add_option("--out", analyze_out);

  std::string report_in, report_base, report_out;
  auto* rep = app.add_subcommand("report", "Render a report as a table");
  rep->add_option("--in", report_in)->required();
  rep->add_option("--baseline", report_base, "Report to compute the accuracy delta against");
  rep->add_option("--out", report_out);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(ra);
    if (*analyze) return cmd_analyze(cache_dir, analyze_len, analyze_out);
    if (*rep) return cmd_report(report_in, report_base, report_out);
  } catch (const std::exception& e) {
    std::cerr << "polr: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
