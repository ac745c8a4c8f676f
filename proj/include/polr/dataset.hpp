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
 * Line-delimited JSON datasets.
 *
 *   jsonl:  {"id": "...", "question": "...", "answer": "..."}   answer optional
 *   gsm8k:  {"question": "...", "answer": "...\n#### 18"}       id optional
 *
 * Answers may be strings or numbers and are stored normalized. Blank lines
 * are skipped.
 */

#include <polr/consensus.hpp>
#include <polr/core.hpp>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace polr::dataset {

enum class Format { jsonl, gsm8k };

inline Format parse_format(std::string_view s) {
  if (s == "jsonl") return Format::jsonl;
  if (s == "gsm8k") return Format::gsm8k;
  throw ConfigError("format", "unknown dataset format '" + std::string(s) + "'");
}

struct Dataset {
  std::string name;
  std::vector<Question> questions;
};

struct DatasetError : Error {
  using Error::Error;
};

inline Dataset parse_dataset(std::istream& in, std::string name, Format format = Format::jsonl) {
  Dataset ds{std::move(name), {}};
  std::set<std::string> ids;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& what) -> DatasetError {
    return DatasetError("line " + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw fail("malformed JSON");
    }
    if (!j.is_object()) throw fail("expected a JSON object");

    Question q;
    if (j.contains("id")) {
      const auto& id = j["id"];
      q.id = id.is_string() ? id.get<std::string>() : id.dump();
    } else if (format == Format::gsm8k) {
      q.id = "line-" + std::to_string(lineno);
    } else {
      throw fail("missing field 'id'");
    }
    if (q.id.empty()) throw fail("empty id");
    if (!j.contains("question") || !j["question"].is_string()) throw fail("missing field 'question'");
    q.prompt = j["question"].get<std::string>();
    if (q.prompt.empty()) throw fail("empty question");

    if (j.contains("answer") && !j["answer"].is_null()) {
      const auto& a = j["answer"];
      std::string raw = a.is_string() ? a.get<std::string>() : a.dump();
      if (format == Format::gsm8k) {
        auto extracted = consensus::extract_answer(raw);
        if (!extracted) throw fail("answer has no '####' line");
        q.gold_answer = *extracted;
      } else {
        q.gold_answer = consensus::normalize_answer(raw);
      }
    }
    if (!ids.insert(q.id).second) throw fail("duplicate id '" + q.id + "'");
    ds.questions.push_back(std::move(q));
  }
  if (ds.questions.empty()) throw DatasetError("dataset is empty");
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path, Format format = Format::jsonl) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset " + path.string());
  return parse_dataset(in, path.stem().string(), format);
}

}  // namespace polr::dataset
