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
 * Prefix clustering and dominant-cluster selection.
 *
 * Every method works on a precomputed N x N cosine distance matrix (N is at
 * most a few dozen, so O(N^3) is fine). Labels are canonical: clusters are
 * numbered by the sample index of their first member, and -1 marks noise
 * from the density methods.
 */

#include <polr/core.hpp>
#include <polr/embed.hpp>

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace polr::cluster {

inline constexpr int kNoise = -1;

struct NoDominantCluster : Error {
  NoDominantCluster() : Error("no dominant cluster") {}
};

struct ClusterResult {
  std::vector<int> labels;
  std::vector<int> sizes;  // indexed by cluster id
  int dominant_id = -1;
  int dominant_size = 0;
  int noise_count = 0;
  double overhead_ms = 0.0;  // k_t: embedding + clustering wall time

  int num_clusters() const noexcept { return static_cast<int>(sizes.size()); }

  std::vector<int> members(int cluster_id) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cluster_id) out.push_back(static_cast<int>(i));
    return out;
  }
};

/// Square distance matrix view.
class DistanceMatrix {
 public:
  DistanceMatrix(std::span<const double> data, std::size_t n) : data_(data), n_(n) {
    if (data.size() != n * n) throw Error("distance matrix must be n x n");
  }
  explicit DistanceMatrix(const std::vector<double>& data)
      : DistanceMatrix(data, static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(data.size()))))) {}

  std::size_t size() const noexcept { return n_; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * n_ + j]; }

 private:
  std::span<const double> data_;
  std::size_t n_;
};

/// Relabels arbitrary non-negative ids in order of first appearance and fills
/// sizes/noise; the dominant cluster is left unset.
inline ClusterResult make_result(std::vector<int> raw) {
  ClusterResult r;
  std::vector<std::pair<int, int>> remap;  // raw -> canonical
  r.labels.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] < 0) {
      r.labels[i] = kNoise;
      ++r.noise_count;
      continue;
    }
    auto it = std::find_if(remap.begin(), remap.end(), [&](auto& p) { return p.first == raw[i]; });
    int id;
    if (it == remap.end()) {
      id = static_cast<int>(remap.size());
      remap.emplace_back(raw[i], id);
      r.sizes.push_back(0);
    } else {
      id = it->second;
    }
    r.labels[i] = id;
    ++r.sizes[static_cast<std::size_t>(id)];
  }
  return r;
}

inline double mean_intra_distance(const ClusterResult& r, const DistanceMatrix& d, int cluster_id) {
  auto m = r.members(cluster_id);
  if (m.size() < 2) return 0.0;
  double s = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < m.size(); ++a)
    for (std::size_t b = a + 1; b < m.size(); ++b, ++pairs)
      s += d(static_cast<std::size_t>(m[a]), static_cast<std::size_t>(m[b]));
  return s / static_cast<double>(pairs);
}

/// Largest cluster; ties go to the tighter cluster (smaller mean pairwise
/// distance), then to the smaller id.
inline int select_dominant(const ClusterResult& r, const DistanceMatrix& d) {
  int best = -1;
  double best_spread = 0.0;
  for (int c = 0; c < r.num_clusters(); ++c) {
    int size = r.sizes[static_cast<std::size_t>(c)];
    if (size == 0) continue;
    if (best < 0 || size > r.sizes[static_cast<std::size_t>(best)]) {
      best = c;
      best_spread = mean_intra_distance(r, d, c);
    } else if (size == r.sizes[static_cast<std::size_t>(best)]) {
      double spread = mean_intra_distance(r, d, c);
      if (spread < best_spread) {
        best = c;
        best_spread = spread;
      }
    }
  }
  if (best < 0) throw NoDominantCluster();
  return best;
}

inline int select_dominant(const ClusterResult& r, const embed::PrefixMatrix& m) {
  auto d = embed::pairwise_distances(m);
  return select_dominant(r, DistanceMatrix(d, m.rows));
}

inline ClusterResult& finalize(ClusterResult& r, const DistanceMatrix& d) {
  r.dominant_id = select_dominant(r, d);
  r.dominant_size = r.sizes[static_cast<std::size_t>(r.dominant_id)];
  return r;
}

// ============================================================================
// Agglomerative (average linkage)
// ============================================================================

/// Average-linkage agglomeration. Repeatedly merges the closest pair of
/// clusters while that distance is strictly below `threshold`. Ties go to the
/// pair that comes first when clusters are ordered by their smallest member.
inline ClusterResult agglomerative(const DistanceMatrix& d, double threshold) {
  const std::size_t n = d.size();
  if (n == 0) throw Error("agglomerative: no points");

  std::vector<std::vector<int>> members(n);
  for (std::size_t i = 0; i < n; ++i) members[i] = {static_cast<int>(i)};
  std::vector<double> link(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) link[i * n + j] = d(i, j);
  std::vector<std::size_t> active(n);
  std::iota(active.begin(), active.end(), 0);

  while (active.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t a = 0; a < active.size(); ++a)
      for (std::size_t b = a + 1; b < active.size(); ++b) {
        double v = link[active[a] * n + active[b]];
        if (v < best) {
          best = v;
          bi = a;
          bj = b;
        }
      }
    if (!(best < threshold)) break;

    std::size_t ci = active[bi], cj = active[bj];
    const double ni = static_cast<double>(members[ci].size());
    const double nj = static_cast<double>(members[cj].size());
    // Lance-Williams update for average linkage.
    for (std::size_t k : active) {
      if (k == ci || k == cj) continue;
      double v = (ni * link[k * n + ci] + nj * link[k * n + cj]) / (ni + nj);
      link[k * n + ci] = link[ci * n + k] = v;
    }
    members[ci].insert(members[ci].end(), members[cj].begin(), members[cj].end());
    members[cj].clear();
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(bj));
  }

  std::vector<int> raw(n);
  for (std::size_t c : active)
    for (int p : members[c]) raw[static_cast<std::size_t>(p)] = static_cast<int>(c);
  auto r = make_result(std::move(raw));
  return finalize(r, d);
}

inline ClusterResult agglomerative(const embed::PrefixMatrix& m, double threshold) {
  auto d = embed::pairwise_distances(m);
  return agglomerative(DistanceMatrix(d, m.rows), threshold);
}

// ============================================================================
// DBSCAN
// ============================================================================

/// Neighborhoods are closed balls (distance <= eps) that include the point
/// itself. Throws NoDominantCluster when every point is noise.
inline ClusterResult dbscan(const DistanceMatrix& d, double eps, int min_pts) {
  if (!(eps > 0.0)) throw Error("dbscan: eps must be > 0");
  if (min_pts < 1) throw Error("dbscan: min_pts must be >= 1");
  const std::size_t n = d.size();

  auto neighbors = [&](std::size_t p) {
    std::vector<std::size_t> out;
    for (std::size_t q = 0; q < n; ++q)
      if (d(p, q) <= eps) out.push_back(q);
    return out;
  };

  constexpr int kUnvisited = -2;
  std::vector<int> raw(n, kUnvisited);
  int next = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (raw[p] != kUnvisited) continue;
    auto nb = neighbors(p);
    if (static_cast<int>(nb.size()) < min_pts) {
      raw[p] = kNoise;
      continue;
    }
    int c = next++;
    raw[p] = c;
    std::vector<std::size_t> frontier(nb.begin(), nb.end());
    for (std::size_t f = 0; f < frontier.size(); ++f) {
      std::size_t q = frontier[f];
      if (raw[q] == kNoise) raw[q] = c;  // border point
      if (raw[q] != kUnvisited) continue;
      raw[q] = c;
      auto qn = neighbors(q);
      if (static_cast<int>(qn.size()) >= min_pts) frontier.insert(frontier.end(), qn.begin(), qn.end());
    }
  }
  auto r = make_result(std::move(raw));
  return finalize(r, d);
}

inline ClusterResult dbscan(const embed::PrefixMatrix& m, double eps, int min_pts) {
  auto d = embed::pairwise_distances(m);
  return dbscan(DistanceMatrix(d, m.rows), eps, min_pts);
}

// ============================================================================
// HDBSCAN
// ============================================================================

namespace detail {

struct LinkNode {
  std::size_t left, right;
  double dist;
  std::size_t size;
};

inline double to_lambda(double dist) {
  constexpr double kMaxLambda = 1e12;
  return dist > 1.0 / kMaxLambda ? 1.0 / dist : kMaxLambda;
}

}  // namespace detail

/// Hierarchical density clustering: mutual-reachability distances (core
/// distance = distance to the min_cluster_size-th nearest point, self
/// included), Prim MST, single-linkage hierarchy, condensed tree, and
/// excess-of-mass selection. The root is never selected. When it never splits
/// into two clusters of at least min_cluster_size, the points that persist
/// past the root level form the one cluster if there are enough of them;
/// coincident points always form one cluster.
inline ClusterResult hdbscan(const DistanceMatrix& d, int min_cluster_size) {
  if (min_cluster_size < 2) throw Error("hdbscan: min_cluster_size must be >= 2");
  const std::size_t n = d.size();
  const std::size_t mcs = static_cast<std::size_t>(min_cluster_size);
  if (n == 0) throw Error("hdbscan: no points");
  if (n < mcs) throw NoDominantCluster();

  // Core distances and mutual reachability.
  const std::size_t k = std::min(mcs, n);
  std::vector<double> core(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(n);
    for (std::size_t j = 0; j < n; ++j) row[j] = d(i, j);
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k - 1), row.end());
    core[i] = row[k - 1];
  }
  auto mreach = [&](std::size_t i, std::size_t j) { return std::max({core[i], core[j], d(i, j)}); };

  // Prim's MST over the complete mutual-reachability graph.
  struct Edge {
    std::size_t a, b;
    double w;
  };
  std::vector<Edge> mst;
  {
    std::vector<bool> in(n, false);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> from(n, 0);
    in[0] = true;
    for (std::size_t j = 1; j < n; ++j) best[j] = mreach(0, j);
    for (std::size_t step = 1; step < n; ++step) {
      std::size_t v = n;
      for (std::size_t j = 0; j < n; ++j)
        if (!in[j] && (v == n || best[j] < best[v])) v = j;
      in[v] = true;
      mst.push_back({from[v], v, best[v]});
      for (std::size_t j = 0; j < n; ++j)
        if (!in[j]) {
          double w = mreach(v, j);
          if (w < best[j]) {
            best[j] = w;
            from[j] = v;
          }
        }
    }
  }
  std::stable_sort(mst.begin(), mst.end(), [](const Edge& x, const Edge& y) { return x.w < y.w; });

  // Single-linkage hierarchy: leaves 0..n-1, internal nodes n..2n-2.
  std::vector<detail::LinkNode> nodes(n);
  for (std::size_t i = 0; i < n; ++i) nodes[i] = {i, i, 0.0, 1};
  std::vector<std::size_t> parent(2 * n - 1);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& e : mst) {
    std::size_t ra = find(e.a), rb = find(e.b);
    std::size_t id = nodes.size();
    nodes.push_back({ra, rb, e.w, nodes[ra].size + nodes[rb].size});
    parent[ra] = parent[rb] = id;
  }
  const std::size_t root = nodes.size() - 1;

  // Condensed tree.
  struct ClusterInfo {
    int parent = -1;
    double birth = 0.0;
    double stability = 0.0;
    std::vector<int> children;
  };
  std::vector<ClusterInfo> clusters(1);
  std::vector<int> point_cluster(n, 0);    // cluster a point fell out of
  std::vector<double> point_lambda(n, 0.0);

  auto leaves_of = [&](std::size_t node, auto&& emit) {
    std::vector<std::size_t> stack{node};
    while (!stack.empty()) {
      std::size_t x = stack.back();
      stack.pop_back();
      if (x < n) emit(x);
      else {
        stack.push_back(nodes[x].left);
        stack.push_back(nodes[x].right);
      }
    }
  };

  std::vector<std::pair<std::size_t, int>> work{{root, 0}};
  while (!work.empty()) {
    auto [node, c] = work.back();
    work.pop_back();
    const auto& nd = nodes[node];
    const double lambda = detail::to_lambda(nd.dist);
    const std::size_t sl = nodes[nd.left].size, sr = nodes[nd.right].size;
    auto fall_out = [&](std::size_t child) {
      leaves_of(child, [&](std::size_t p) {
        point_cluster[p] = c;
        point_lambda[p] = lambda;
      });
    };
    if (sl >= mcs && sr >= mcs) {
      for (std::size_t child : {nd.left, nd.right}) {
        int id = static_cast<int>(clusters.size());
        clusters.push_back({c, lambda, 0.0, {}});
        clusters[static_cast<std::size_t>(c)].children.push_back(id);
        work.emplace_back(child, id);
      }
    } else if (sl < mcs && sr < mcs) {
      fall_out(nd.left);
      fall_out(nd.right);
    } else if (sl < mcs) {
      fall_out(nd.left);
      work.emplace_back(nd.right, c);
    } else {
      fall_out(nd.right);
      work.emplace_back(nd.left, c);
    }
  }

  // Stability: points contribute until they fall out; child clusters carry
  // their whole size until their birth.
  std::vector<std::size_t> cluster_size(clusters.size(), 0);
  for (std::size_t p = 0; p < n; ++p)
    for (int c = point_cluster[p]; c >= 0; c = clusters[static_cast<std::size_t>(c)].parent) ++cluster_size[static_cast<std::size_t>(c)];
  for (std::size_t p = 0; p < n; ++p) {
    auto& ci = clusters[static_cast<std::size_t>(point_cluster[p])];
    ci.stability += point_lambda[p] - ci.birth;
  }
  for (std::size_t c = 1; c < clusters.size(); ++c) {
    auto& par = clusters[static_cast<std::size_t>(clusters[c].parent)];
    par.stability += static_cast<double>(cluster_size[c]) * (clusters[c].birth - par.birth);
  }

  std::vector<int> raw(n, kNoise);
  if (clusters.size() == 1) {
    // The root never split. Coincident points are one cluster; otherwise a
    // core of >= min_cluster_size points must outlive the root level, else
    // there is no density structure at all.
    const double root_lambda = detail::to_lambda(nodes[root].dist);
    const double deepest = *std::max_element(point_lambda.begin(), point_lambda.end());
    const auto persistent = static_cast<std::size_t>(std::count(point_lambda.begin(), point_lambda.end(), deepest));
    if (nodes[root].dist <= 0.0) {
      std::fill(raw.begin(), raw.end(), 0);
    } else if (deepest > root_lambda && persistent >= mcs) {
      for (std::size_t p = 0; p < n; ++p)
        if (point_lambda[p] == deepest) raw[p] = 0;
    }
  } else {
    // Excess of mass, bottom-up (children always have larger ids).
    std::vector<bool> selected(clusters.size(), false);
    std::vector<double> value(clusters.size(), 0.0);
    for (std::size_t c = clusters.size() - 1; c >= 1; --c) {
      double sub = 0.0;
      for (int ch : clusters[c].children) sub += value[static_cast<std::size_t>(ch)];
      if (clusters[c].children.empty() || clusters[c].stability >= sub) {
        selected[c] = true;
        value[c] = clusters[c].stability;
        std::vector<int> stack(clusters[c].children.begin(), clusters[c].children.end());
        while (!stack.empty()) {
          auto x = static_cast<std::size_t>(stack.back());
          stack.pop_back();
          selected[x] = false;
          stack.insert(stack.end(), clusters[x].children.begin(), clusters[x].children.end());
        }
      } else {
        value[c] = sub;
      }
    }
    for (std::size_t p = 0; p < n; ++p)
      for (int c = point_cluster[p]; c > 0; c = clusters[static_cast<std::size_t>(c)].parent)
        if (selected[static_cast<std::size_t>(c)]) {
          raw[p] = c;
          break;
        }
  }

  auto r = make_result(std::move(raw));
  return finalize(r, d);
}

inline ClusterResult hdbscan(const embed::PrefixMatrix& m, int min_cluster_size) {
  auto d = embed::pairwise_distances(m);
  return hdbscan(DistanceMatrix(d, m.rows), min_cluster_size);
}

// ============================================================================
// Pipeline entry point
// ============================================================================

struct ClusterParams {
  ClusterMethod method = ClusterMethod::agglomerative;
  double threshold = 1.0;
  double eps = 0.5;
  int min_pts = 3;
  int min_cluster_size = 3;

  static ClusterParams from(const RunConfig& cfg) {
    return {cfg.cluster_method, cfg.distance_threshold, cfg.dbscan_eps, cfg.dbscan_min_pts,
            cfg.hdbscan_min_cluster_size};
  }
};

inline ClusterResult run_method(const DistanceMatrix& d, const ClusterParams& p) {
  switch (p.method) {
    case ClusterMethod::agglomerative: return agglomerative(d, p.threshold);
    case ClusterMethod::dbscan: return dbscan(d, p.eps, p.min_pts);
    case ClusterMethod::hdbscan: return hdbscan(d, p.min_cluster_size);
    case ClusterMethod::none: {
      auto r = make_result(std::vector<int>(d.size(), 0));
      return finalize(r, d);
    }
  }
  throw Error("unknown cluster method");
}

/// Embeds and clusters the prefixes of one question, timing both stages.
/// NoDominantCluster propagates; callers fall back to expanding every prefix.
inline ClusterResult cluster_prefixes(std::span<const std::string> prefixes, const embed::Embedder& embedder,
                                      const ClusterParams& params) {
  auto t0 = std::chrono::steady_clock::now();
  auto m = embedder.embed(prefixes);
  auto dist = embed::pairwise_distances(m);
  auto r = run_method(DistanceMatrix(dist, m.rows), params);
  r.overhead_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace polr::cluster
