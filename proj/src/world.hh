// world.hh
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
#include "rng.hh"

namespace dub {

// Deterministic synthetic speech/translation world. Each source word is a
// short phoneme sequence; an utterance is the concatenation of per-phoneme
// prototype frames plus a speaker offset and isotropic Gaussian noise. The
// oracle translation maps words to 1-2 target tokens after swapping
// adjacent word pairs.
struct WorldConfig {
  int phonemes = 25;
  int frame_dim = 8;
  int lexicon_words = 40;
  int duration_lo = 2;
  int duration_hi = 5;
  double noise_sigma = 0.1;
  int speakers = 4;
  double speaker_offset_norm = 0.5;
  int target_tokens = 60;
  int sentence_len_lo = 3;
  int sentence_len_hi = 8;
};

// Speaker id accepted by synthesize_utterance meaning "no speaker offset".
constexpr int kCanonicalSpeaker = -1;

struct WorldSpec {
  WorldConfig config;
  uint64_t seed = 0;
  std::vector<std::vector<double>> prototypes;       // P x d
  std::vector<std::string> source_words;             // lexicon keys, index = word id
  std::vector<std::vector<int>> lexicon;             // word id -> phoneme ids (len 2-4)
  std::vector<std::vector<double>> speaker_offsets;  // speakers x d
  std::vector<std::string> target_token_table;
  std::vector<std::vector<int>> translation_map;     // word id -> target token ids (len 1-2)

  int word_id(const std::string& word) const;  // -1 if unknown
  double min_prototype_distance() const;
};

struct Utterance {
  std::vector<std::string> source_tokens;
  std::vector<std::string> target_tokens;
  std::vector<std::vector<double>> frames;  // T x d
  int speaker_id = 0;
};

// Monolingual record: target side only, the source sentence is kept for
// split-hygiene checks but its audio is never synthesized.
struct MonoRecord {
  std::vector<std::string> source_tokens;
  std::vector<std::string> target_tokens;
};

struct CorpusSizes {
  int train = 300;
  int dev = 150;
  int test = 150;
  int mono = 10000;
};

struct CorpusSplit {
  std::vector<Utterance> train;
  std::vector<Utterance> dev;
  std::vector<Utterance> test;
  std::vector<MonoRecord> mono;
};

WorldSpec build_world(const WorldConfig& config, uint64_t seed);

Utterance synthesize_utterance(const WorldSpec& world,
                               const std::vector<std::string>& source_tokens,
                               int speaker_id, uint64_t seed);

std::vector<std::string> translate_oracle(const WorldSpec& world,
                                          const std::vector<std::string>& source_tokens);

CorpusSplit sample_corpus(const WorldSpec& world, const CorpusSizes& sizes, uint64_t seed);

nlohmann::json world_to_json(const WorldSpec& world);
WorldSpec world_from_json(const nlohmann::json& j);

std::vector<std::string> split_words(const std::string& line);
std::string join_words(const std::vector<std::string>& words);

}  // namespace dub
