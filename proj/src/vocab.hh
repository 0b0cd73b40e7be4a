// vocab.hh
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
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "quantizer.hh"

namespace dub {

// Joint subword vocabulary: five specials, one atomic symbol per cluster
// id, then byte-pair entries learned on target text only. Unit symbols
// never participate in merges. Id layout is fixed:
// [specials][unit symbols][text symbols in learning order].
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kBtTag = 4;
  static constexpr int kNumSpecials = 5;

  int unit_count = 0;  // K
  std::vector<std::string> id_to_symbol;
  std::unordered_map<std::string, int> symbol_to_id;
  std::vector<std::pair<std::string, std::string>> merges;  // in learned order

  int size() const { return static_cast<int>(id_to_symbol.size()); }
  // Text-side entry count (specials plus subwords), the complement of the
  // unit block inside the joint table.
  int text_side_entries() const { return size() - unit_count; }

  bool is_unit_id(int id) const {
    return id >= kNumSpecials && id < kNumSpecials + unit_count;
  }
  int unit_to_id(int unit) const { return kNumSpecials + unit; }
  int id_to_unit(int id) const { return id - kNumSpecials; }
  bool is_special(int id) const { return id < kNumSpecials; }
};

Vocabulary learn_vocab(const std::vector<std::vector<std::string>>& target_corpus,
                       int unit_count, int target_size);

std::vector<int> encode_text(const Vocabulary& vocab, const std::vector<std::string>& tokens);
std::vector<int> encode_units(const Vocabulary& vocab, const UnitSequence& units);

// Inverse of encode_text: drops specials and unit symbols, restores word
// boundaries from the end-of-word marker.
std::vector<std::string> decode_text(const Vocabulary& vocab, const std::vector<int>& ids);

// Inverse of encode_units: keeps only unit symbols and re-applies dedup
// (an autoregressive model may emit adjacent duplicates).
UnitSequence decode_units(const Vocabulary& vocab, const std::vector<int>& ids);

nlohmann::json vocab_to_json(const Vocabulary& vocab);
Vocabulary vocab_from_json(const nlohmann::json& j);

uint64_t vocab_hash(const Vocabulary& vocab);

}  // namespace dub
