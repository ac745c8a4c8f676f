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
 * Content-addressed generation cache.
 *
 * One JSON file per key under the cache directory, named by the key digest.
 * Writes go to a unique temporary file and are renamed into place, so
 * concurrent writers of the same key leave exactly one complete entry. Reads
 * verify the stored key and a checksum of the payload; a mismatch is a miss.
 */

#include <polr/backend.hpp>
#include <polr/hash.hpp>

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace polr::cache {

struct CacheKey {
  std::string backend_id;
  std::string model_id;
  std::string question_id;
  int sample_index = 0;
  backend::Stage stage = backend::Stage::prefix;
  int prefix_length = 0;
  std::uint64_t params_hash = 0;

  bool operator==(const CacheKey&) const = default;

  std::string canonical() const {
    std::ostringstream os;
    os << backend_id << '\x1f' << model_id << '\x1f' << question_id << '\x1f' << sample_index << '\x1f'
       << backend::to_string(stage) << '\x1f' << prefix_length << '\x1f' << hash::hex(params_hash);
    return os.str();
  }
  std::string digest() const {
    auto c = canonical();
    return hash::hex(hash::fnv1a(c)) + hash::hex(hash::of(c, 0x6b6579ULL));
  }
};

inline std::uint64_t params_hash(const SamplingParams& p, const std::optional<std::string>& prefix) {
  std::uint64_t h = hash::fnv1a(std::to_string(p.temperature));
  h = hash::combine(h, hash::fnv1a(std::to_string(p.top_p)));
  h = hash::combine(h, static_cast<std::uint64_t>(p.max_tokens));
  h = hash::combine(h, p.seed);
  if (prefix) h = hash::combine(h, hash::fnv1a(*prefix));
  return h;
}

struct Entry {
  CacheKey key;
  backend::GenerationResult value;
};

inline nlohmann::json to_json(const CacheKey& k) {
  return {{"backend", k.backend_id},        {"model", k.model_id},
          {"question_id", k.question_id},   {"sample_index", k.sample_index},
          {"stage", backend::to_string(k.stage)}, {"prefix_length", k.prefix_length},
          {"params_hash", hash::hex(k.params_hash)}};
}

inline CacheKey key_from_json(const nlohmann::json& j) {
  CacheKey k;
  k.backend_id = j.at("backend").get<std::string>();
  k.model_id = j.at("model").get<std::string>();
  k.question_id = j.at("question_id").get<std::string>();
  k.sample_index = j.at("sample_index").get<int>();
  k.stage = j.at("stage").get<std::string>() == "prefix" ? backend::Stage::prefix : backend::Stage::continuation;
  k.prefix_length = j.at("prefix_length").get<int>();
  k.params_hash = std::stoull(j.at("params_hash").get<std::string>(), nullptr, 16);
  return k;
}

inline std::string payload_checksum(const backend::GenerationResult& v) {
  std::uint64_t h = hash::fnv1a(v.text);
  h = hash::combine(h, static_cast<std::uint64_t>(v.token_count));
  h = hash::combine(h, v.finished ? 1u : 0u);
  h = hash::combine(h, static_cast<std::uint64_t>(v.latent_mode.value_or(-1) + 1));
  return hash::hex(h);
}

class FileCache {
 public:
  explicit FileCache(std::filesystem::path dir,
                     std::function<void(const std::string&)> warn = [](const std::string& m) {
                       std::cerr << "polr: warning: " << m << '\n';
                     })
      : dir_(std::move(dir)), warn_(std::move(warn)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }

  std::filesystem::path path_for(const CacheKey& k) const { return dir_ / (k.digest() + ".json"); }

  std::optional<backend::GenerationResult> get(const CacheKey& k) const {
    auto p = path_for(k);
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    try {
      auto e = decode(nlohmann::json::parse(in));
      if (!(e.key == k)) {
        warn_("cache key mismatch in " + p.string());
        ++integrity_failures_;
        return std::nullopt;
      }
      return e.value;
    } catch (const std::exception& ex) {
      warn_("corrupt cache entry " + p.string() + ": " + ex.what());
      ++integrity_failures_;
      return std::nullopt;
    }
  }

  void put(const CacheKey& k, const backend::GenerationResult& v) const {
    nlohmann::json j = {{"key", to_json(k)},
                        {"text", v.text},
                        {"token_count", v.token_count},
                        {"finished", v.finished},
                        {"latent_mode", v.latent_mode ? nlohmann::json(*v.latent_mode) : nlohmann::json()},
                        {"checksum", payload_checksum(v)}};
    auto final_path = path_for(k);
    std::ostringstream tmp_name;
    tmp_name << final_path.filename().string() << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id())
             << '.' << tmp_counter_++;
    auto tmp = dir_ / tmp_name.str();
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot write cache entry " + tmp.string());
      out << j.dump();
      if (!out) throw Error("cannot write cache entry " + tmp.string());
    }
    std::filesystem::rename(tmp, final_path);
  }

  /// Every readable entry, in directory order sorted by file name.
  std::vector<Entry> entries() const {
    std::vector<std::filesystem::path> files;
    for (const auto& de : std::filesystem::directory_iterator(dir_))
      if (de.is_regular_file() && de.path().extension() == ".json") files.push_back(de.path());
    std::sort(files.begin(), files.end());
    std::vector<Entry> out;
    for (const auto& f : files) {
      std::ifstream in(f, std::ios::binary);
      try {
        out.push_back(decode(nlohmann::json::parse(in)));
      } catch (const std::exception& ex) {
        warn_("skipping corrupt cache entry " + f.string() + ": " + ex.what());
      }
    }
    return out;
  }

  long integrity_failures() const noexcept { return integrity_failures_.load(); }

 private:
  static Entry decode(const nlohmann::json& j) {
    Entry e;
    e.key = key_from_json(j.at("key"));
    e.value.text = j.at("text").get<std::string>();
    e.value.token_count = j.at("token_count").get<int>();
    e.value.finished = j.at("finished").get<bool>();
    if (!j.at("latent_mode").is_null()) e.value.latent_mode = j.at("latent_mode").get<int>();
    if (j.at("checksum").get<std::string>() != payload_checksum(e.value)) throw Error("checksum mismatch");
    return e;
  }

  std::filesystem::path dir_;
  std::function<void(const std::string&)> warn_;
  mutable std::atomic<long> integrity_failures_{0};
  mutable std::atomic<std::uint64_t> tmp_counter_{0};
};

/// Read-through cache in front of another backend. Only misses reach the
/// inner backend.
class CachingBackend final : public backend::Backend {
 public:
  CachingBackend(backend::Backend& inner, FileCache& cache) : inner_(inner), cache_(cache) {}

  std::string backend_id() const override { return inner_.backend_id(); }
  std::string model_id() const override { return inner_.model_id(); }

  long hits() const noexcept { return hits_.load(); }
  long misses() const noexcept { return misses_.load(); }
  backend::Backend& inner() noexcept { return inner_; }

  CacheKey key_for(const backend::GenerationRequest& req, backend::Stage stage) const {
    return {inner_.backend_id(),
            inner_.model_id(),
            req.tag.question_id,
            req.tag.sample_index,
            stage,
            req.tag.prefix_length,
            params_hash(req.params, req.prefix_to_continue)};
  }

 protected:
  backend::GenerationResult do_sample(const backend::GenerationRequest& req) override {
    return through(req, backend::Stage::prefix);
  }
  backend::GenerationResult do_expand(const backend::GenerationRequest& req) override {
    return through(req, backend::Stage::continuation);
  }

 private:
  backend::GenerationResult through(const backend::GenerationRequest& req, backend::Stage stage) {
    auto key = key_for(req, stage);
    if (auto hit = cache_.get(key)) {
      ++hits_;
      return *hit;
    }
    ++misses_;
    auto r = stage == backend::Stage::prefix ? inner_.sample_prefix(req) : inner_.expand_prefix(req);
    cache_.put(key, r);
    return r;
  }

  backend::Backend& inner_;
  FileCache& cache_;
  std::atomic<long> hits_{0};
  std::atomic<long> misses_{0};
};

}  // namespace polr::cache
