// world.cc
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

#include "world.hh"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "errors.hh"

namespace dub {

namespace {

constexpr int kMaxDrawAttempts = 100000;

double sq_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

std::string word_name(int id, int width) {
  std::ostringstream os;
  os << 'w';
  std::string digits = std::to_string(id);
  for (int i = static_cast<int>(digits.size()); i < width; ++i) os << '0';
  os << digits;
  return os.str();
}

// Distinct alphabetic token strings built from consonant-vowel syllables.
std::vector<std::string> make_target_tokens(int count, Rng rng) {
  static const char* kConsonants = "bdfgklmnprstvz";
  static const char* kVowels = "aeiou";
  std::vector<std::string> syllables;
  for (int c = 0; c < 14; ++c) {
    for (int v = 0; v < 5; ++v) {
      syllables.push_back(std::string{kConsonants[c], kVowels[v]});
    }
  }
  // Seeded Fisher-Yates so different worlds get different surface forms.
  for (int i = static_cast<int>(syllables.size()) - 1; i > 0; --i) {
    int j = static_cast<int>(rng.uniform_int(0, i));
    std::swap(syllables[i], syllables[j]);
  }
  std::vector<std::string> tokens;
  std::set<std::string> seen;
  for (const auto& s : syllables) {
    if (static_cast<int>(tokens.size()) >= count) break;
    if (seen.insert(s).second) tokens.push_back(s);
  }
  size_t i = 0, j = 1;
  while (static_cast<int>(tokens.size()) < count) {
    std::string t = syllables[i % syllables.size()] + syllables[j % syllables.size()];
    if (seen.insert(t).second) tokens.push_back(t);
    if (++j >= syllables.size()) {
      j = 0;
      ++i;
      if (i >= syllables.size()) throw ValidationError("target token space exhausted");
    }
  }
  return tokens;
}

std::vector<double> random_unit_vector(Rng& rng, int dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (int i = 0; i < dim; ++i) {
      v[i] = rng.gaussian();
      norm += v[i] * v[i];
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  for (int i = 0; i < dim; ++i) v[i] /= norm;
  return v;
}

std::vector<int> draw_sentence(const WorldSpec& world, Rng& rng) {
  int len = static_cast<int>(
      rng.uniform_int(world.config.sentence_len_lo, world.config.sentence_len_hi));
  std::vector<int> words(len);
  for (int i = 0; i < len; ++i) {
    words[i] = static_cast<int>(rng.uniform_int(0, world.config.lexicon_words - 1));
  }
  return words;
}

std::vector<std::string> words_to_tokens(const WorldSpec& world, const std::vector<int>& ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(world.source_words[id]);
  return out;
}

}  // namespace

int WorldSpec::word_id(const std::string& word) const {
  for (size_t i = 0; i < source_words.size(); ++i) {
    if (source_words[i] == word) return static_cast<int>(i);
  }
  return -1;
}

double WorldSpec::min_prototype_distance() const {
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < prototypes.size(); ++i) {
    for (size_t j = i + 1; j < prototypes.size(); ++j) {
      best = std::min(best, std::sqrt(sq_distance(prototypes[i], prototypes[j])));
    }
  }
  return best;
}

WorldSpec build_world(const WorldConfig& config, uint64_t seed) {
  if (config.phonemes < 2) throw ValidationError("world: phonemes must be >= 2");
  if (config.frame_dim < 2) throw ValidationError("world: frame_dim must be >= 2");
  if (config.lexicon_words < 2) throw ValidationError("world: lexicon must have >= 2 words");
  if (config.duration_lo < 1 || config.duration_hi < config.duration_lo) {
    throw ValidationError("world: duration range must satisfy hi >= lo >= 1");
  }
  if (config.noise_sigma < 0.0) throw ValidationError("world: noise_sigma must be >= 0");
  if (config.speakers < 1) throw ValidationError("world: speakers must be >= 1");
  if (config.target_tokens < 2) throw ValidationError("world: target_tokens must be >= 2");
  if (config.sentence_len_lo < 1 || config.sentence_len_hi < config.sentence_len_lo) {
    throw ValidationError("world: sentence length range must satisfy hi >= lo >= 1");
  }

  WorldSpec world;
  world.config = config;
  world.seed = seed;
  Rng root(seed);

  // Prototypes with guaranteed pairwise separation >= 4*sigma.
  const double min_dist = std::max(4.0 * config.noise_sigma, 1e-6);
  const double min_sq = min_dist * min_dist;
  Rng proto_rng = root.substream("prototypes");
  for (int p = 0; p < config.phonemes; ++p) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxDrawAttempts; ++attempt) {
      std::vector<double> row(config.frame_dim);
      for (double& x : row) x = proto_rng.gaussian();
      bool ok = true;
      for (const auto& prev : world.prototypes) {
        if (sq_distance(row, prev) < min_sq) {
          ok = false;
          break;
        }
      }
      if (ok) {
        world.prototypes.push_back(std::move(row));
        placed = true;
        break;
      }
    }
    if (!placed) throw NumericError("world: prototype separation unattainable");
  }

  // Lexicon: distinct phoneme sequences of length 2-4.
  const int name_width = config.lexicon_words > 100 ? 3 : 2;
  Rng lex_rng = root.substream("lexicon");
  std::set<std::vector<int>> seen_pron;
  for (int w = 0; w < config.lexicon_words; ++w) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxDrawAttempts; ++attempt) {
      int len = static_cast<int>(lex_rng.uniform_int(2, 4));
      std::vector<int> pron(len);
      for (int& ph : pron) ph = static_cast<int>(lex_rng.uniform_int(0, config.phonemes - 1));
      if (seen_pron.insert(pron).second) {
        world.lexicon.push_back(std::move(pron));
        world.source_words.push_back(word_name(w, name_width));
        placed = true;
        break;
      }
    }
    if (!placed) throw NumericError("world: lexicon pronunciation space exhausted");
  }

  // Speaker offsets drawn in antisymmetric pairs so they sum to zero and
  // the average speaker coincides with the canonical (offset-free) one.
  Rng spk_rng = root.substream("speakers");
  for (int s = 0; s < config.speakers; ++s) {
    if (s % 2 == 1) {
      std::vector<double> neg = world.speaker_offsets[s - 1];
      for (double& x : neg) x = -x;
      world.speaker_offsets.push_back(std::move(neg));
    } else if (s + 1 == config.speakers && config.speakers % 2 == 1) {
      world.speaker_offsets.emplace_back(config.frame_dim, 0.0);  // odd tail
    } else {
      std::vector<double> v = random_unit_vector(spk_rng, config.frame_dim);
      for (double& x : v) x *= config.speaker_offset_norm;
      world.speaker_offsets.push_back(std::move(v));
    }
  }

  world.target_token_table = make_target_tokens(config.target_tokens, root.substream("tokens"));

  // Translation map: distinct 1-2 token sequences per source word.
  Rng tr_rng = root.substream("translation");
  std::set<std::vector<int>> seen_tr;
  for (int w = 0; w < config.lexicon_words; ++w) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxDrawAttempts; ++attempt) {
      int len = static_cast<int>(tr_rng.uniform_int(1, 2));
      std::vector<int> toks(len);
      for (int& t : toks) t = static_cast<int>(tr_rng.uniform_int(0, config.target_tokens - 1));
      if (seen_tr.insert(toks).second) {
        world.translation_map.push_back(std::move(toks));
        placed = true;
        break;
      }
    }
    if (!placed) throw NumericError("world: translation space exhausted");
  }

  return world;
}

std::vector<std::string> translate_oracle(const WorldSpec& world,
                                          const std::vector<std::string>& source_tokens) {
  std::vector<int> ids;
  ids.reserve(source_tokens.size());
  for (const auto& tok : source_tokens) {
    int id = world.word_id(tok);
    if (id < 0) throw ValidationError("translate: unknown source word '" + tok + "'");
    ids.push_back(id);
  }
  // Fixed reordering rule: swap adjacent word pairs, odd tail stays.
  std::vector<int> reordered;
  reordered.reserve(ids.size());
  for (size_t i = 0; i + 1 < ids.size(); i += 2) {
    reordered.push_back(ids[i + 1]);
    reordered.push_back(ids[i]);
  }
  if (ids.size() % 2 == 1) reordered.push_back(ids.back());

  std::vector<std::string> out;
  for (int id : reordered) {
    for (int t : world.translation_map[id]) out.push_back(world.target_token_table[t]);
  }
  return out;
}

Utterance synthesize_utterance(const WorldSpec& world,
                               const std::vector<std::string>& source_tokens,
                               int speaker_id, uint64_t seed) {
  if (speaker_id != kCanonicalSpeaker &&
      (speaker_id < 0 || speaker_id >= static_cast<int>(world.speaker_offsets.size()))) {
    throw ValidationError("synthesize: invalid speaker id " + std::to_string(speaker_id));
  }
  std::vector<int> phonemes;
  for (const auto& tok : source_tokens) {
    int id = world.word_id(tok);
    if (id < 0) throw ValidationError("synthesize: unknown source word '" + tok + "'");
    for (int ph : world.lexicon[id]) phonemes.push_back(ph);
  }

  const int d = world.config.frame_dim;
  const std::vector<double> zero(d, 0.0);
  const std::vector<double>& offset =
      speaker_id == kCanonicalSpeaker ? zero : world.speaker_offsets[speaker_id];

  Utterance utt;
  utt.source_tokens = source_tokens;
  utt.target_tokens = translate_oracle(world, source_tokens);
  utt.speaker_id = speaker_id;

  // Draw order (durations and noise) is independent of the speaker, so two
  // speakers given the same seed differ exactly by their offsets.
  Rng rng(seed);
  for (int ph : phonemes) {
    int dur = static_cast<int>(rng.uniform_int(world.config.duration_lo, world.config.duration_hi));
    for (int t = 0; t < dur; ++t) {
      std::vector<double> frame(d);
      for (int i = 0; i < d; ++i) {
        double noise = world.config.noise_sigma > 0.0
                           ? world.config.noise_sigma * rng.gaussian()
                           : 0.0;
        frame[i] = world.prototypes[ph][i] + offset[i] + noise;
      }
      utt.frames.push_back(std::move(frame));
    }
  }
  return utt;
}

CorpusSplit sample_corpus(const WorldSpec& world, const CorpusSizes& sizes, uint64_t seed) {
  if (sizes.train < 0 || sizes.dev < 0 || sizes.test < 0 || sizes.mono < 0) {
    throw ValidationError("corpus: sizes must be nonnegative");
  }
  const int64_t total =
      static_cast<int64_t>(sizes.train) + sizes.dev + sizes.test + sizes.mono;

  Rng root(seed);
  Rng sent_rng = root.substream("sentences");
  std::set<std::vector<int>> seen;
  std::vector<std::vector<int>> sentences;
  sentences.reserve(total);
  int64_t attempts = 0;
  const int64_t max_attempts = total * 1000 + 1000;
  while (static_cast<int64_t>(sentences.size()) < total) {
    if (++attempts > max_attempts) {
      throw ValidationError("corpus: sentence space too small for requested sizes");
    }
    std::vector<int> s = draw_sentence(world, sent_rng);
    if (seen.insert(s).second) sentences.push_back(std::move(s));
  }

  CorpusSplit split;
  Rng item_root = root.substream("items");
  int64_t idx = 0;
  auto take_parallel = [&](int count, std::vector<Utterance>& out) {
    for (int i = 0; i < count; ++i, ++idx) {
      Rng item = item_root.substream(static_cast<uint64_t>(idx));
      int speaker = static_cast<int>(item.uniform_int(0, world.config.speakers - 1));
      uint64_t synth_seed = item.next_u64();
      out.push_back(synthesize_utterance(world, words_to_tokens(world, sentences[idx]),
                                         speaker, synth_seed));
    }
  };
  take_parallel(sizes.train, split.train);
  take_parallel(sizes.dev, split.dev);
  take_parallel(sizes.test, split.test);
  for (int i = 0; i < sizes.mono; ++i, ++idx) {
    MonoRecord rec;
    rec.source_tokens = words_to_tokens(world, sentences[idx]);
    rec.target_tokens = translate_oracle(world, rec.source_tokens);
    split.mono.push_back(std::move(rec));
  }
  return split;
}

nlohmann::json world_to_json(const WorldSpec& world) {
  nlohmann::json j;
  j["config"] = {{"phonemes", world.config.phonemes},
                 {"frame_dim", world.config.frame_dim},
                 {"lexicon_words", world.config.lexicon_words},
                 {"duration_lo", world.config.duration_lo},
                 {"duration_hi", world.config.duration_hi},
                 {"noise_sigma", world.config.noise_sigma},
                 {"speakers", world.config.speakers},
                 {"speaker_offset_norm", world.config.speaker_offset_norm},
                 {"target_tokens", world.config.target_tokens},
                 {"sentence_len_lo", world.config.sentence_len_lo},
                 {"sentence_len_hi", world.config.sentence_len_hi}};
  j["seed"] = world.seed;
  j["prototypes"] = world.prototypes;
  j["reordering"] = "swap_adjacent_pairs";
  nlohmann::json lex = nlohmann::json::object();
  nlohmann::json tr = nlohmann::json::object();
  for (size_t w = 0; w < world.source_words.size(); ++w) {
    lex[world.source_words[w]] = world.lexicon[w];
    std::vector<std::string> toks;
    for (int t : world.translation_map[w]) toks.push_back(world.target_token_table[t]);
    tr[world.source_words[w]] = toks;
  }
  j["lexicon"] = lex;
  j["translation_map"] = tr;
  j["source_words"] = world.source_words;
  j["speaker_offsets"] = world.speaker_offsets;
  j["target_token_table"] = world.target_token_table;
  return j;
}

WorldSpec world_from_json(const nlohmann::json& j) {
  WorldSpec world;
  const auto& c = j.at("config");
  world.config.phonemes = c.at("phonemes").get<int>();
  world.config.frame_dim = c.at("frame_dim").get<int>();
  world.config.lexicon_words = c.at("lexicon_words").get<int>();
  world.config.duration_lo = c.at("duration_lo").get<int>();
  world.config.duration_hi = c.at("duration_hi").get<int>();
  world.config.noise_sigma = c.at("noise_sigma").get<double>();
  world.config.speakers = c.at("speakers").get<int>();
  world.config.speaker_offset_norm = c.at("speaker_offset_norm").get<double>();
  world.config.target_tokens = c.at("target_tokens").get<int>();
  world.config.sentence_len_lo = c.at("sentence_len_lo").get<int>();
  world.config.sentence_len_hi = c.at("sentence_len_hi").get<int>();
  world.seed = j.at("seed").get<uint64_t>();
  world.prototypes = j.at("prototypes").get<std::vector<std::vector<double>>>();
  world.source_words = j.at("source_words").get<std::vector<std::string>>();
  world.speaker_offsets = j.at("speaker_offsets").get<std::vector<std::vector<double>>>();
  world.target_token_table = j.at("target_token_table").get<std::vector<std::string>>();

  std::vector<int> token_id(256, -1);
  const auto& lex = j.at("lexicon");
  const auto& tr = j.at("translation_map");
  for (const auto& word : world.source_words) {
    world.lexicon.push_back(lex.at(word).get<std::vector<int>>());
    std::vector<int> ids;
    for (const auto& tok : tr.at(word)) {
      auto it = std::find(world.target_token_table.begin(), world.target_token_table.end(),
                          tok.get<std::string>());
      if (it == world.target_token_table.end()) {
        throw ValidationError("world json: translation token not in table");
      }
      ids.push_back(static_cast<int>(it - world.target_token_table.begin()));
    }
    world.translation_map.push_back(std::move(ids));
  }
  return world;
}

std::vector<std::string> split_words(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace dub
