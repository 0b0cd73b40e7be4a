// model_io.cc
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

#include "model_io.hh"

#include <cstring>

#include "errors.hh"

namespace dub {

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"layers_enc", c.layers_enc},
          {"layers_dec", c.layers_dec},
          {"hidden", c.hidden},
          {"heads", c.heads},
          {"ffn", c.ffn},
          {"dropout", c.dropout},
          {"label_smoothing", c.label_smoothing},
          {"max_len", c.max_len},
          {"direction", c.direction == Direction::unit_to_text ? "unit_to_text" : "text_to_unit"},
          {"input_mode",
           c.input_mode == InputMode::unit_ids ? "unit_ids" : "continuous_frames"},
          {"use_pretrained_embedding", c.use_pretrained_embedding},
          {"input_dim", c.input_dim},
          {"vocab_size", c.vocab_size}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.layers_enc = j.at("layers_enc").get<int>();
  c.layers_dec = j.at("layers_dec").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn = j.at("ffn").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.label_smoothing = j.at("label_smoothing").get<double>();
  c.max_len = j.at("max_len").get<int>();
  std::string dir = j.at("direction").get<std::string>();
  if (dir == "unit_to_text") {
    c.direction = Direction::unit_to_text;
  } else if (dir == "text_to_unit") {
    c.direction = Direction::text_to_unit;
  } else {
    throw ValidationError("checkpoint: unknown direction '" + dir + "'");
  }
  std::string mode = j.at("input_mode").get<std::string>();
  if (mode == "unit_ids") {
    c.input_mode = InputMode::unit_ids;
  } else if (mode == "continuous_frames") {
    c.input_mode = InputMode::continuous_frames;
  } else {
    throw ValidationError("checkpoint: unknown input mode '" + mode + "'");
  }
  c.use_pretrained_embedding = j.value("use_pretrained_embedding", false);
  c.input_dim = j.at("input_dim").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  return c;
}

void save_checkpoint(const std::string& path, Parameters<float>& params,
                     const Provenance& prov) {
  nlohmann::json header;
  header["kind"] = "checkpoint";
  header["config_hash"] = prov.config_hash;
  header["seed"] = prov.seed;
  header["model_config"] = model_config_to_json(params.config);
  header["vocab_hash"] = hash_hex(params.vocab_hash);
  header["step"] = params.step;
  nlohmann::json manifest = nlohmann::json::array();
  std::string blob;
  visit_params(params, [&](const std::string& name, Mat<float>& m) {
    manifest.push_back({{"name", name}, {"rows", m.rows}, {"cols", m.cols}});
    size_t bytes = static_cast<size_t>(m.size()) * sizeof(float);
    size_t off = blob.size();
    blob.resize(off + bytes);
    std::memcpy(blob.data() + off, m.data.data(), bytes);
  });
  header["tensors"] = manifest;
  write_file_atomic(path, header.dump() + "\n" + blob);
}

Parameters<float> load_checkpoint(const std::string& path, const Provenance* expected,
                                  uint64_t expected_vocab_hash) {
  std::string raw = read_file(path);
  size_t nl = raw.find('\n');
  if (nl == std::string::npos) throw ValidationError(path + ": missing checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(raw.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": invalid checkpoint header: " + e.what());
  }
  if (header.value("kind", "") != "checkpoint") {
    throw ValidationError(path + ": not a checkpoint file");
  }
  if (expected) {
    if (header.value("config_hash", "") != expected->config_hash) {
      throw ValidationError(path + ": config hash mismatch");
    }
    if (header.value("seed", uint64_t(0)) != expected->seed) {
      throw ValidationError(path + ": seed mismatch");
    }
  }

  Parameters<float> params = init_model<float>(
      model_config_from_json(header.at("model_config")), /*seed=*/0);
  params.step = header.value("step", int64_t(0));
  std::string vh = header.value("vocab_hash", "");
  params.vocab_hash = vh.empty() ? 0 : std::stoull(vh, nullptr, 16);
  if (expected_vocab_hash != 0 && params.vocab_hash != expected_vocab_hash) {
    throw ValidationError(path + ": vocabulary hash mismatch");
  }

  const auto& manifest = header.at("tensors");
  size_t offset = nl + 1;
  size_t idx = 0;
  visit_params(params, [&](const std::string& name, Mat<float>& m) {
    if (idx >= manifest.size()) throw ValidationError(path + ": manifest too short");
    const auto& entry = manifest[idx++];
    if (entry.at("name").get<std::string>() != name ||
        entry.at("rows").get<int64_t>() != m.rows ||
        entry.at("cols").get<int64_t>() != m.cols) {
      throw ValidationError(path + ": tensor layout mismatch at '" + name + "'");
    }
    size_t bytes = static_cast<size_t>(m.size()) * sizeof(float);
    if (offset + bytes > raw.size()) throw ValidationError(path + ": truncated checkpoint");
    std::memcpy(m.data.data(), raw.data() + offset, bytes);
    offset += bytes;
  });
  if (idx != manifest.size()) throw ValidationError(path + ": manifest too long");
  return params;
}

}  // namespace dub
