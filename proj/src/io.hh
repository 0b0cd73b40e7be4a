// io.hh
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace dub {

// Provenance stamped into every artifact: the hash of the producing config
// plus the root seed. Loaders reject artifacts whose stamp does not match
// the session's expectation.
struct Provenance {
  std::string config_hash;
  uint64_t seed = 0;
};

uint64_t fnv1a64_bytes(const std::string& bytes);
std::string hash_hex(uint64_t h);

// Write-temp-then-rename so readers never observe a partial file.
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

void ensure_dir(const std::string& path);

// JSON document with an embedded provenance block.
void save_json_artifact(const std::string& path, const Provenance& prov,
                        const std::string& kind, const nlohmann::json& payload);

// Loads and verifies kind and (when expected != nullptr) provenance.
nlohmann::json load_json_artifact(const std::string& path, const std::string& kind,
                                  const Provenance* expected);

// JSONL: a leading meta record carries provenance, each following line is
// one data record.
void save_jsonl(const std::string& path, const Provenance& prov, const std::string& kind,
                const std::vector<nlohmann::json>& records,
                const nlohmann::json& extra_meta = nlohmann::json::object());

struct JsonlFile {
  nlohmann::json meta;
  std::vector<nlohmann::json> records;
};

JsonlFile load_jsonl(const std::string& path, const std::string& kind,
                     const Provenance* expected);

}  // namespace dub
