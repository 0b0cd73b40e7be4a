// model_io.hh
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

#include <string>

#include "io.hh"
#include "model.hh"

namespace dub {

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Single-file checkpoint: one JSON header line (config, vocab hash, step,
// tensor manifest) followed by raw little-endian float32 data.
void save_checkpoint(const std::string& path, Parameters<float>& params,
                     const Provenance& prov);

Parameters<float> load_checkpoint(const std::string& path, const Provenance* expected,
                                  uint64_t expected_vocab_hash = 0);

}  // namespace dub
