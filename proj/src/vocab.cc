// vocab.cc
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

#include "vocab.hh"

#include <algorithm>
#include <map>

#include "errors.hh"
#include "rng.hh"

namespace dub {

namespace {

const char* kEndOfWord = "</w>";

// A word as a mutable symbol sequence: ["a", "b", "c</w>"].
std::vector<std::string> word_to_symbols(const std::string& word) {
  std::vector<std::string> syms;
  for (size_t i = 0; i < word.size(); ++i) {
    std::string s(1, word[i]);
    if (i + 1 == word.size()) s += kEndOfWord;
    syms.push_back(std::move(s));
  }
  return syms;
}

void apply_merge(std::vector<std::string>& syms, const std::string& left,
                 const std::string& right) {
  size_t out = 0;
  for (size_t i = 0; i < syms.size();) {
    if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
      syms[out] = left + right;
      ++out;
      i += 2;
    } else {
      if (out != i) syms[out] = std::move(syms[i]);
      ++out;
      i += 1;
    }
  }
  syms.resize(out);
}

void add_symbol(Vocabulary& vocab, const std::string& symbol) {
  if (vocab.symbol_to_id.count(symbol)) return;
  vocab.symbol_to_id.emplace(symbol, vocab.size());
  vocab.id_to_symbol.push_back(symbol);
}

}  // namespace

Vocabulary learn_vocab(const std::vector<std::vector<std::string>>& target_corpus,
                       int unit_count, int target_size) {
  Vocabulary vocab;
  vocab.unit_count = unit_count;
  add_symbol(vocab, "<pad>");
  add_symbol(vocab, "<s>");
  add_symbol(vocab, "</s>");
  add_symbol(vocab, "<unk>");
  add_symbol(vocab, "<BT>");
  for (int u = 0; u < unit_count; ++u) add_symbol(vocab, "#" + std::to_string(u));

  // Distinct words with counts; base symbols registered in corpus order.
  std::vector<std::pair<std::vector<std::string>, int64_t>> words;  // symbols, count
  std::map<std::string, size_t> word_index;
  int base_symbols = 0;
  for (const auto& sentence : target_corpus) {
    for (const auto& word : sentence) {
      if (word.empty()) continue;
      auto [it, fresh] = word_index.try_emplace(word, words.size());
      if (fresh) {
        words.emplace_back(word_to_symbols(word), 1);
        for (const auto& s : words.back().first) {
          if (!vocab.symbol_to_id.count(s)) {
            add_symbol(vocab, s);
            ++base_symbols;
          }
        }
      } else {
        ++words[it->second].second;
      }
    }
  }

  if (target_size < vocab.size()) {
    throw ValidationError("learn_vocab: target size " + std::to_string(target_size) +
                          " below floor " + std::to_string(vocab.size()) +
                          " (specials + units + base characters)");
  }

  while (vocab.size() < target_size) {
    // Pair counts over the current word representations.
    std::map<std::pair<std::string, std::string>, int64_t> pair_counts;
    for (const auto& [syms, count] : words) {
      for (size_t i = 0; i + 1 < syms.size(); ++i) {
        pair_counts[{syms[i], syms[i + 1]}] += count;
      }
    }
    if (pair_counts.empty()) break;  // merges exhausted

    // Highest count; ties go to the lexicographically smallest pair, which
    // the ordered map yields by scanning in order with a strict compare.
    std::pair<std::string, std::string> best;
    int64_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {
        best_count = count;
        best = pair;
      }
    }

    for (auto& [syms, count] : words) apply_merge(syms, best.first, best.second);
    vocab.merges.push_back(best);
    add_symbol(vocab, best.first + best.second);
  }
  return vocab;
}

std::vector<int> encode_text(const Vocabulary& vocab, const std::vector<std::string>& tokens) {
  std::vector<int> ids;
  for (const auto& word : tokens) {
    if (word.empty()) continue;
    std::vector<std::string> syms = word_to_symbols(word);
    for (const auto& [left, right] : vocab.merges) apply_merge(syms, left, right);
    for (const auto& s : syms) {
      auto it = vocab.symbol_to_id.find(s);
      ids.push_back(it == vocab.symbol_to_id.end() ? Vocabulary::kUnk : it->second);
    }
  }
  return ids;
}

std::vector<int> encode_units(const Vocabulary& vocab, const UnitSequence& units) {
  std::vector<int> ids;
  ids.reserve(units.units.size());
  for (int u : units.units) {
    if (u < 0 || u >= vocab.unit_count) {
      throw ValidationError("encode_units: unit " + std::to_string(u) + " out of range");
    }
    ids.push_back(vocab.unit_to_id(u));
  }
  return ids;
}

std::vector<std::string> decode_text(const Vocabulary& vocab, const std::vector<int>& ids) {
  std::vector<std::string> tokens;
  std::string current;
  for (int id : ids) {
    if (id < 0 || id >= vocab.size()) throw ValidationError("decode: invalid id");
    if (vocab.is_special(id) || vocab.is_unit_id(id)) continue;
    const std::string& sym = vocab.id_to_symbol[id];
    if (sym.size() >= 4 && sym.compare(sym.size() - 4, 4, kEndOfWord) == 0) {
      current += sym.substr(0, sym.size() - 4);
      tokens.push_back(current);
      current.clear();
    } else {
      current += sym;
    }
  }
  if (!current.empty()) tokens.push_back(current);
  return tokens;
}

UnitSequence decode_units(const Vocabulary& vocab, const std::vector<int>& ids) {
  std::vector<int> raw;
  for (int id : ids) {
    if (id < 0 || id >= vocab.size()) throw ValidationError("decode: invalid id");
    if (vocab.is_unit_id(id)) raw.push_back(vocab.id_to_unit(id));
  }
  UnitSequence seq;
  seq.units = dedup(raw);
  return seq;
}

nlohmann::json vocab_to_json(const Vocabulary& vocab) {
  nlohmann::json j;
  j["specials"] = {"<pad>", "<s>", "</s>", "<unk>", "<BT>"};
  j["unit_count"] = vocab.unit_count;
  nlohmann::json unit_symbols = nlohmann::json::array();
  for (int u = 0; u < vocab.unit_count; ++u) {
    unit_symbols.push_back(vocab.id_to_symbol[vocab.unit_to_id(u)]);
  }
  j["unit_symbols"] = unit_symbols;
  j["id_to_symbol"] = vocab.id_to_symbol;
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [l, r] : vocab.merges) merges.push_back({l, r});
  j["merges"] = merges;
  return j;
}

Vocabulary vocab_from_json(const nlohmann::json& j) {
  Vocabulary vocab;
  vocab.unit_count = j.at("unit_count").get<int>();
  vocab.id_to_symbol = j.at("id_to_symbol").get<std::vector<std::string>>();
  for (size_t i = 0; i < vocab.id_to_symbol.size(); ++i) {
    vocab.symbol_to_id.emplace(vocab.id_to_symbol[i], static_cast<int>(i));
  }
  for (const auto& m : j.at("merges")) {
    vocab.merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
  }
  return vocab;
}

uint64_t vocab_hash(const Vocabulary& vocab) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  };
  for (const auto& s : vocab.id_to_symbol) mix(s);
  for (const auto& [l, r] : vocab.merges) {
    mix(l);
    mix(r);
  }
  return h;
}

}  // namespace dub
