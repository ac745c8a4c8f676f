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
 * Prefix embedding: bag-of-words TF-IDF fitted on the N prefixes of a single
 * question, then signed feature hashing down to a small fixed dimension.
 *
 *   tokens  = tokenize(prefix)            lowercase, whitespace split, strip punctuation
 *   tf      = raw count
 *   idf(t)  = ln((1 + N) / (1 + df(t))) + 1
 *   row     = L2-normalize(tf * idf)
 *   hashed  = L2-normalize(sum_t sign(t) * row[t] * e_bucket(t))
 *
 * Buckets and signs come from a fixed-seed 64-bit hash, so the output is
 * bit-identical across runs and platforms.
 */

#include <polr/core.hpp>
#include <polr/hash.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace polr::embed {

using TokenList = std::vector<std::string>;

namespace detail {

// Decodes one UTF-8 code point at s[i]; advances i. Invalid bytes decode as themselves.
inline char32_t next_code_point(std::string_view s, std::size_t& i) {
  auto b0 = static_cast<unsigned char>(s[i]);
  int len = b0 < 0x80 ? 1 : (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xe ? 3 : (b0 >> 3) == 0x1e ? 4 : 1;
  if (i + len > s.size()) len = 1;
  char32_t cp = len == 1 ? b0 : len == 2 ? (b0 & 0x1f) : len == 3 ? (b0 & 0x0f) : (b0 & 0x07);
  for (int k = 1; k < len; ++k) {
    auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xc0) != 0x80) {
      len = 1;
      cp = b0;
      break;
    }
    cp = (cp << 6) | (b & 0x3f);
  }
  i += len;
  return cp;
}

inline bool is_unicode_space(char32_t c) {
  switch (c) {
    case 0x09: case 0x0a: case 0x0b: case 0x0c: case 0x0d: case 0x20:
    case 0x85: case 0xa0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202f: case 0x205f: case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200a;
  }
}

inline bool is_ascii_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

}  // namespace detail

/// Lowercase (ASCII), split on Unicode whitespace, strip surrounding ASCII
/// punctuation; tokens that are pure punctuation vanish.
inline TokenList tokenize(std::string_view text) {
  TokenList out;
  std::string cur;
  auto flush = [&] {
    std::size_t b = 0, e = cur.size();
    while (b < e && detail::is_ascii_punct(cur[b])) ++b;
    while (e > b && detail::is_ascii_punct(cur[e - 1])) --e;
    if (e > b) out.emplace_back(cur.substr(b, e - b));
    cur.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t start = i;
    char32_t cp = detail::next_code_point(text, i);
    if (detail::is_unicode_space(cp)) {
      flush();
    } else {
      for (std::size_t k = start; k < i; ++k)
        cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[k]))));
    }
  }
  flush();
  return out;
}

// ============================================================================
// PrefixMatrix
// ============================================================================

/// Dense row-major N x dim matrix. `columns` names each feature before hashing
/// and is empty afterwards.
struct PrefixMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::size_t vocab_size = 0;
  std::vector<double> data;
  std::vector<std::string> columns;

  PrefixMatrix() = default;
  PrefixMatrix(std::size_t r, std::size_t d) : rows(r), dim(d), data(r * d, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * dim, dim}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }

  bool operator==(const PrefixMatrix&) const = default;
};

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline void normalize_rows(PrefixMatrix& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto r = m.row(i);
    double n = l2_norm(r);
    if (n > 0.0)
      for (double& x : r) x /= n;
  }
}

/// Per-question TF-IDF with smoothed idf; rows L2-normalized. Columns are
/// the sorted vocabulary of these documents only.
inline PrefixMatrix tfidf(std::span<const TokenList> docs) {
  std::map<std::string, std::size_t> vocab;
  for (const auto& d : docs)
    for (const auto& t : d) vocab.emplace(t, 0);
  std::size_t col = 0;
  for (auto& [term, idx] : vocab) idx = col++;

  PrefixMatrix m(docs.size(), vocab.size());
  m.vocab_size = vocab.size();
  m.columns.reserve(vocab.size());
  for (const auto& [term, idx] : vocab) m.columns.push_back(term);

  std::vector<double> df(vocab.size(), 0.0);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    auto r = m.row(i);
    for (const auto& t : docs[i]) r[vocab.at(t)] += 1.0;
    for (std::size_t j = 0; j < r.size(); ++j)
      if (r[j] > 0.0) df[j] += 1.0;
  }
  const double n = static_cast<double>(docs.size());
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] *= std::log((1.0 + n) / (1.0 + df[j])) + 1.0;
  }
  normalize_rows(m);
  return m;
}

// ============================================================================
// Signed feature hashing
// ============================================================================

inline constexpr std::uint64_t kFeatureHashSeed = 0x706f6c72'2d746668ULL;

struct FeatureSlot {
  std::size_t bucket;
  double sign;
};

inline FeatureSlot feature_slot(std::string_view term, std::size_t dim) {
  std::uint64_t h = hash::of(term, kFeatureHashSeed);
  return {static_cast<std::size_t>((h & 0x7fffffffffffffffULL) % dim), (h >> 63) ? -1.0 : 1.0};
}

/// Project onto `dim` signed hash buckets and re-normalize. Requires named
/// columns (the output of tfidf).
inline PrefixMatrix downsample(const PrefixMatrix& m, std::size_t dim) {
  if (dim == 0) throw Error("downsample: dim must be >= 1");
  if (m.columns.size() != m.dim) throw Error("downsample: matrix has no feature names");
  std::vector<FeatureSlot> slots;
  slots.reserve(m.dim);
  for (const auto& term : m.columns) slots.push_back(feature_slot(term, dim));

  PrefixMatrix out(m.rows, dim);
  out.vocab_size = m.vocab_size;
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto src = m.row(i);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < m.dim; ++j)
      if (src[j] != 0.0) dst[slots[j].bucket] += slots[j].sign * src[j];
  }
  normalize_rows(out);
  return out;
}

/// 1 - cos(u, v), clamped to [0, 2]; any zero vector is at distance 1.
inline double cosine_distance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error("cosine_distance: dimension mismatch");
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) return 1.0;
  return std::clamp(1.0 - dot / (std::sqrt(uu) * std::sqrt(vv)), 0.0, 2.0);
}

/// Symmetric N x N cosine distance matrix, row-major.
inline std::vector<double> pairwise_distances(const PrefixMatrix& m) {
  const std::size_t n = m.rows;
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d[i * n + j] = d[j * n + i] = cosine_distance(m.row(i), m.row(j));
  return d;
}

// ============================================================================
// Embedder interface
// ============================================================================

/// Maps the N prefixes of one question to row vectors. TF-IDF + hashing is the
/// only implementation shipped; a neural encoder would slot in here.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual PrefixMatrix embed(std::span<const std::string> prefixes) const = 0;
};

class TfidfHashEmbedder final : public Embedder {
 public:
  explicit TfidfHashEmbedder(std::size_t dim = 10) : dim_(dim) {}

  PrefixMatrix embed(std::span<const std::string> prefixes) const override {
    std::vector<TokenList> docs;
    docs.reserve(prefixes.size());
    for (const auto& p : prefixes) docs.push_back(tokenize(p));
    return downsample(tfidf(docs), dim_);
  }

 private:
  std::size_t dim_;
};

}  // namespace polr::embed
