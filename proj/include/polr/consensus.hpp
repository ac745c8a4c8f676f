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

// Answer extraction, majority voting and the adaptive stopping rules.

#include <polr/core.hpp>

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace polr::consensus {

using Answer = std::optional<std::string>;

struct NoAnswers : Error {
  NoAnswers() : Error("no extractable answers") {}
};

// ============================================================================
// Normalization
// ============================================================================

namespace detail {

inline std::string_view trim(std::string_view s) {
  auto ws = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

inline bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// "1,234,567" style grouping, optionally signed and with a fractional part.
inline bool has_thousands_groups(std::string_view s) {
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) s.remove_prefix(1);
  auto dot = s.find('.');
  std::string_view ip = s.substr(0, dot);
  if (dot != std::string_view::npos && !all_digits(s.substr(dot + 1))) return false;
  if (ip.find(',') == std::string_view::npos) return false;
  std::size_t first = ip.find(',');
  if (first == 0 || first > 3 || !all_digits(ip.substr(0, first))) return false;
  for (std::size_t i = first; i < ip.size(); i += 4) {
    if (ip[i] != ',' || i + 4 > ip.size() || !all_digits(ip.substr(i + 1, 3))) return false;
  }
  return true;
}

inline std::optional<std::string> canonical_number(std::string_view s) {
  bool neg = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    neg = s.front() == '-';
    s.remove_prefix(1);
  }
  auto dot = s.find('.');
  std::string_view ip = s.substr(0, dot);
  std::string_view fp = dot == std::string_view::npos ? std::string_view{} : s.substr(dot + 1);
  if (ip.empty() && fp.empty()) return std::nullopt;
  if (!ip.empty() && !all_digits(ip)) return std::nullopt;
  if (!fp.empty() && !all_digits(fp)) return std::nullopt;
  if (dot != std::string_view::npos && fp.empty() && ip.empty()) return std::nullopt;

  while (ip.size() > 1 && ip.front() == '0') ip.remove_prefix(1);
  if (ip.empty()) ip = "0";
  while (!fp.empty() && fp.back() == '0') fp.remove_suffix(1);

  std::string out(ip);
  if (!fp.empty()) out += "." + std::string(fp);
  if (neg && out != "0") out.insert(out.begin(), '-');
  return out;
}

}  // namespace detail

/// Canonical form used for exact-match scoring and voting.
inline std::string normalize_answer(std::string_view raw) {
  std::string_view s = detail::trim(raw);
  while (!s.empty() && s.back() == '.') s = detail::trim(s.substr(0, s.size() - 1));

  std::string v(s);
  if (detail::has_thousands_groups(v)) v.erase(std::remove(v.begin(), v.end(), ','), v.end());
  if (auto num = detail::canonical_number(v)) return *num;
  if (v.size() == 1 && std::isalpha(static_cast<unsigned char>(v[0])))
    v[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(v[0])));
  return v;
}

// ============================================================================
// Extraction
// ============================================================================

namespace detail {

inline std::optional<std::string> last_boxed(std::string_view t) {
  constexpr std::string_view kMarker = "\\boxed{";
  auto pos = t.rfind(kMarker);
  if (pos == std::string_view::npos) return std::nullopt;
  std::size_t i = pos + kMarker.size();
  int depth = 1;
  std::size_t start = i;
  for (; i < t.size(); ++i) {
    if (t[i] == '{') ++depth;
    else if (t[i] == '}' && --depth == 0) return std::string(t.substr(start, i - start));
  }
  return std::nullopt;
}

inline std::optional<std::string> hash_line(std::string_view t) {
  constexpr std::string_view kMarker = "####";
  std::optional<std::string> found;
  std::size_t line_start = 0;
  while (line_start <= t.size()) {
    auto end = t.find('\n', line_start);
    std::string_view line = t.substr(line_start, end == std::string_view::npos ? t.npos : end - line_start);
    line = trim(line);
    if (line.substr(0, kMarker.size()) == kMarker) {
      auto rest = trim(line.substr(kMarker.size()));
      if (!rest.empty()) found = std::string(rest);
    }
    if (end == std::string_view::npos) break;
    line_start = end + 1;
  }
  return found;
}

inline std::optional<std::string> answer_phrase(std::string_view t) {
  std::string lower(t);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  std::size_t best = std::string::npos, skip = 0;
  for (std::string_view marker : {"answer is", "answer:"}) {
    auto p = lower.rfind(marker);
    if (p != std::string::npos && (best == std::string::npos || p > best)) {
      best = p;
      skip = marker.size();
    }
  }
  if (best == std::string::npos) return std::nullopt;
  std::string_view rest = t.substr(best + skip);
  rest = trim(rest);
  if (!rest.empty() && rest.front() == ':') rest = trim(rest.substr(1));
  auto stop = rest.find('\n');
  rest = rest.substr(0, stop);
  // Sentence end: a period followed by whitespace or end of text.
  for (std::size_t i = 0; i < rest.size(); ++i)
    if (rest[i] == '.' && (i + 1 == rest.size() || std::isspace(static_cast<unsigned char>(rest[i + 1])))) {
      rest = rest.substr(0, i);
      break;
    }
  rest = trim(rest);
  if (rest.empty()) return std::nullopt;
  return std::string(rest);
}

}  // namespace detail

/// Boxed marker, then a "#### x" line, then a trailing "answer is/answer:"
/// phrase; the first marker kind found wins and is normalized.
inline Answer extract_answer(std::string_view trace) {
  for (auto pick : {detail::last_boxed, detail::hash_line, detail::answer_phrase})
    if (auto raw = pick(trace)) {
      auto norm = normalize_answer(*raw);
      if (!norm.empty()) return norm;
    }
  return std::nullopt;
}

// ============================================================================
// Voting
// ============================================================================

struct VoteTally {
  std::map<std::string, int> counts;
  int total = 0;
  std::string winner;
  int winner_count = 0;

  bool operator==(const VoteTally&) const = default;
};

/// Most frequent answer; ties go to the answer seen first. Missing answers are
/// skipped.
inline VoteTally majority_vote(std::span<const Answer> answers) {
  VoteTally t;
  std::vector<std::string> order;
  for (const auto& a : answers) {
    if (!a) continue;
    if (t.counts[*a]++ == 0) order.push_back(*a);
    ++t.total;
  }
  if (t.total == 0) throw NoAnswers();
  for (const auto& a : order) {
    int c = t.counts.at(a);
    if (c > t.winner_count) {
      t.winner = a;
      t.winner_count = c;
    }
  }
  return t;
}

// ============================================================================
// Stopping rules
// ============================================================================

struct StopDecision {
  bool stop = false;
  double confidence = 0.0;
  int samples_used = 0;
};

/// P(theta > 1/2) for theta ~ Beta(top + 1, rest + 1).
inline double ac_confidence(int top, int rest) {
  return boost::math::ibetac(static_cast<double>(top + 1), static_cast<double>(rest + 1), 0.5);
}

/// Adaptive-consistency rule on the two-bucket (leader vs. everyone else)
/// Beta posterior.
inline StopDecision ac_should_stop(const std::map<std::string, int>& counts, double confidence_threshold) {
  int top = 0, total = 0;
  for (const auto& [ans, c] : counts) {
    top = std::max(top, c);
    total += c;
  }
  if (total == 0) throw Error("ac_should_stop: no observed answers");
  StopDecision d;
  d.confidence = ac_confidence(top, total - top);
  d.stop = d.confidence >= confidence_threshold;
  d.samples_used = total;
  return d;
}

/// Early-stopping rule: the last `window` answers exist and agree.
inline StopDecision esc_should_stop(std::span<const Answer> stream, int window) {
  if (window < 1) throw Error("esc_should_stop: window must be >= 1");
  StopDecision d;
  d.samples_used = static_cast<int>(stream.size());
  if (stream.size() < static_cast<std::size_t>(window)) return d;
  auto tail = stream.last(static_cast<std::size_t>(window));
  d.stop = tail.front().has_value() &&
           std::all_of(tail.begin(), tail.end(), [&](const Answer& a) { return a == tail.front(); });
  d.confidence = d.stop ? 1.0 : 0.0;
  return d;
}

}  // namespace polr::consensus
