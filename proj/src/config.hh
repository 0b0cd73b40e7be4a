// config.hh
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
#include <vector>

#include "decode.hh"
#include "io.hh"
#include "json.hpp"
#include "model.hh"
#include "world.hh"

namespace dub {

struct QuantizerConfig {
  int clusters = 32;
  int max_iters = 50;
};

struct VocabConfig {
  int text_entries = 256;  // budget beyond specials and unit symbols
};

struct MixtureConfig {
  // 0 selects the automatic rate round(|synthetic| / |original|), clamped
  // to [1, upsample_cap].
  int upsample_rate = 0;
  int upsample_cap = 32;
  std::vector<int> bt_amounts = {0, 2000, 5000, 10000};
  bool use_speaker_norm = false;
};

struct ReportOptions {
  bool uer_study = true;
  bool input_mode_study = false;
  int input_mode_steps = 0;  // 0 = same as train.max_steps
};

struct ExperimentConfig {
  uint64_t seed = 1;
  std::string out_dir = "runs/default";
  int threads = 2;
  WorldConfig world;
  CorpusSizes corpus;
  QuantizerConfig quantizer;
  VocabConfig vocab;
  ModelConfig model;
  TrainConfig train;
  MixtureConfig mixture;
  DecodeConfig bt_decode;    // defaults to sampling
  DecodeConfig eval_decode;  // defaults to beam 5
  ReportOptions report;

  int vocab_target_size() const {
    return Vocabulary::kNumSpecials + quantizer.clusters + vocab.text_entries;
  }
  void validate() const;
};

// Minimal TOML subset: [section] headers one level deep, key = value with
// strings, integers, floats, booleans and flat scalar arrays, # comments.
nlohmann::json parse_toml(const std::string& text);

nlohmann::json config_to_json(const ExperimentConfig& config);

// Schema errors (unknown fields, wrong types) always throw; range checks
// run only when validate_ranges is set, so partial override sequences can
// pass through an inconsistent intermediate state.
ExperimentConfig config_from_json(const nlohmann::json& j, bool validate_ranges = true);

// Reads .toml or .json by extension.
ExperimentConfig load_config_file(const std::string& path);

// Dotted-path override, e.g. set_config_field(j, "train.max_steps", "3000").
void set_config_field(nlohmann::json& config_json, const std::string& key,
                      const std::string& value);

// Hash over the configuration fields that determine an artifact's content
// (out_dir and threads are runtime concerns; the seed is tracked
// separately). Scopes are cumulative prefixes of the pipeline, so
// overriding a downstream knob — say the BT decoding method — leaves
// upstream artifacts valid while any upstream change invalidates them.
enum class HashScope {
  world,   // world + corpus
  units,   // + quantizer, speaker normalization
  vocab,   // + vocabulary budget
  model,   // + model + training
  bt,      // + BT decoding + mixture
  full,    // everything
};
std::string config_hash(const ExperimentConfig& config, HashScope scope = HashScope::full);

ExperimentConfig default_config();

}  // namespace dub
