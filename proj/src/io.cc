// io.cc
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

#include "io.hh"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "errors.hh"

namespace dub {

uint64_t fnv1a64_bytes(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

void write_file_atomic(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) ensure_dir(p.parent_path().string());
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

namespace {

void check_provenance(const nlohmann::json& meta, const std::string& path,
                      const std::string& kind, const Provenance* expected) {
  if (meta.value("kind", "") != kind) {
    throw ValidationError(path + ": expected kind '" + kind + "', found '" +
                          meta.value("kind", "<missing>") + "'");
  }
  if (expected) {
    if (meta.value("config_hash", "") != expected->config_hash) {
      throw ValidationError(path + ": config hash mismatch (artifact " +
                            meta.value("config_hash", "<missing>") + ", session " +
                            expected->config_hash + ")");
    }
    if (meta.value("seed", uint64_t(0)) != expected->seed) {
      throw ValidationError(path + ": seed mismatch");
    }
  }
}

}  // namespace

void save_json_artifact(const std::string& path, const Provenance& prov,
                        const std::string& kind, const nlohmann::json& payload) {
  nlohmann::json doc;
  doc["kind"] = kind;
  doc["config_hash"] = prov.config_hash;
  doc["seed"] = prov.seed;
  doc["payload"] = payload;
  write_file_atomic(path, doc.dump(2) + "\n");
}

nlohmann::json load_json_artifact(const std::string& path, const std::string& kind,
                                  const Provenance* expected) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": invalid JSON: " + e.what());
  }
  check_provenance(doc, path, kind, expected);
  if (!doc.contains("payload")) throw ValidationError(path + ": missing payload");
  return doc["payload"];
}

void save_jsonl(const std::string& path, const Provenance& prov, const std::string& kind,
                const std::vector<nlohmann::json>& records, const nlohmann::json& extra_meta) {
  std::ostringstream os;
  nlohmann::json meta = extra_meta;
  meta["_meta"] = true;
  meta["kind"] = kind;
  meta["config_hash"] = prov.config_hash;
  meta["seed"] = prov.seed;
  meta["count"] = records.size();
  os << meta.dump() << "\n";
  for (const auto& r : records) os << r.dump() << "\n";
  write_file_atomic(path, os.str());
}

JsonlFile load_jsonl(const std::string& path, const std::string& kind,
                     const Provenance* expected) {
  std::istringstream is(read_file(path));
  JsonlFile file;
  std::string line;
  bool first = true;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    if (first) {
      first = false;
      if (j.is_object() && j.value("_meta", false)) {
        check_provenance(j, path, kind, expected);
        file.meta = j;
        continue;
      }
      throw ValidationError(path + ": missing meta record");
    }
    file.records.push_back(std::move(j));
  }
  if (first) throw ValidationError(path + ": empty file");
  return file;
}

}  // namespace dub
