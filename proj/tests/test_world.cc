// test_world.cc
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

#include <cmath>
#include <set>

#include "doctest.h"
#include "errors.hh"
#include "world.hh"

using namespace dub;

namespace {

WorldConfig tiny_config() {
  WorldConfig c;
  c.phonemes = 5;
  c.frame_dim = 3;
  c.lexicon_words = 6;
  c.duration_lo = 1;
  c.duration_hi = 2;
  c.noise_sigma = 0.0;
  c.speakers = 2;
  c.target_tokens = 10;
  c.sentence_len_lo = 1;
  c.sentence_len_hi = 4;
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("world");

TEST_CASE("two-phoneme noise-free world has distinct prototype rows") {
  WorldConfig c = tiny_config();
  c.phonemes = 2;
  c.frame_dim = 2;
  WorldSpec w = build_world(c, 7);
  REQUIRE(w.prototypes.size() == 2);
  CHECK(w.prototypes[0] != w.prototypes[1]);
}

TEST_CASE("same config and seed rebuild an identical world") {
  WorldConfig c;  // defaults
  WorldSpec a = build_world(c, 42);
  WorldSpec b = build_world(c, 42);
  CHECK(a.prototypes == b.prototypes);
  CHECK(a.lexicon == b.lexicon);
  CHECK(a.translation_map == b.translation_map);
  CHECK(a.speaker_offsets == b.speaker_offsets);
  CHECK(a.target_token_table == b.target_token_table);
  WorldSpec other = build_world(c, 43);
  CHECK(a.prototypes != other.prototypes);
}

TEST_CASE("default-scale world keeps prototypes 4 sigma apart") {
  WorldConfig c;
  c.phonemes = 25;
  c.frame_dim = 8;
  c.noise_sigma = 0.1;
  WorldSpec w = build_world(c, 1);
  CHECK(w.min_prototype_distance() >= 0.4);
}

TEST_CASE("invalid configs are rejected") {
  WorldConfig c = tiny_config();
  c.phonemes = 1;
  CHECK_THROWS_AS(build_world(c, 1), ValidationError);
  c = tiny_config();
  c.duration_lo = 3;
  c.duration_hi = 2;
  CHECK_THROWS_AS(build_world(c, 1), ValidationError);
  c = tiny_config();
  c.frame_dim = 1;
  CHECK_THROWS_AS(build_world(c, 1), ValidationError);
}

TEST_CASE("noise-free canonical synthesis concatenates prototype rows") {
  WorldConfig c = tiny_config();
  c.duration_lo = 1;
  c.duration_hi = 1;
  WorldSpec w = build_world(c, 3);
  std::vector<std::string> sentence{w.source_words[0]};
  Utterance utt = synthesize_utterance(w, sentence, kCanonicalSpeaker, 99);
  const auto& pron = w.lexicon[0];
  REQUIRE(utt.frames.size() == pron.size());
  for (size_t i = 0; i < pron.size(); ++i) {
    CHECK(utt.frames[i] == w.prototypes[pron[i]]);
  }
}

TEST_CASE("frame count is the sum of sampled durations") {
  WorldConfig c = tiny_config();
  c.duration_lo = 2;
  c.duration_hi = 2;
  WorldSpec w = build_world(c, 3);
  // pick a word with a 3-phoneme pronunciation if one exists, else any
  for (int wi = 0; wi < c.lexicon_words; ++wi) {
    if (w.lexicon[wi].size() == 3) {
      Utterance utt = synthesize_utterance(w, {w.source_words[wi]}, 0, 5);
      CHECK(utt.frames.size() == 6);
      return;
    }
  }
  WARN("no 3-phoneme word in this tiny lexicon");
}

TEST_CASE("mean per-frame deviation from prototype stays under 3 sigma sqrt(d)") {
  WorldConfig c = tiny_config();
  c.noise_sigma = 0.1;
  c.duration_lo = 1;  // one frame per phoneme aligns frames with prototypes
  c.duration_hi = 1;
  WorldSpec w = build_world(c, 11);
  double total_dev = 0.0;
  int64_t frames = 0;
  Rng pick(5);
  for (int item = 0; frames < 1000; ++item) {
    int wi = static_cast<int>(pick.uniform_int(0, c.lexicon_words - 1));
    Utterance utt =
        synthesize_utterance(w, {w.source_words[wi]}, kCanonicalSpeaker, 1000 + item);
    const auto& pron = w.lexicon[wi];
    REQUIRE(utt.frames.size() == pron.size());
    for (size_t i = 0; i < pron.size(); ++i) {
      double d2 = 0.0;
      for (int k = 0; k < c.frame_dim; ++k) {
        double diff = utt.frames[i][k] - w.prototypes[pron[i]][k];
        d2 += diff * diff;
      }
      total_dev += std::sqrt(d2);
      ++frames;
    }
  }
  double mean_dev = total_dev / static_cast<double>(frames);
  CHECK(mean_dev <= 3.0 * c.noise_sigma * std::sqrt(static_cast<double>(c.frame_dim)));
}

TEST_CASE("speaker offset shifts frames exactly, given the same seed") {
  WorldConfig c = tiny_config();
  c.noise_sigma = 0.05;
  WorldSpec w = build_world(c, 13);
  std::vector<std::string> sentence{w.source_words[1], w.source_words[2]};
  Utterance canon = synthesize_utterance(w, sentence, kCanonicalSpeaker, 77);
  Utterance spk = synthesize_utterance(w, sentence, 1, 77);
  REQUIRE(canon.frames.size() == spk.frames.size());
  for (size_t i = 0; i < canon.frames.size(); ++i) {
    for (int k = 0; k < c.frame_dim; ++k) {
      CHECK(spk.frames[i][k] == doctest::Approx(canon.frames[i][k] + w.speaker_offsets[1][k])
                                    .epsilon(1e-12));
    }
  }
}

TEST_CASE("unknown source word raises a lexicon error") {
  WorldSpec w = build_world(tiny_config(), 3);
  CHECK_THROWS_AS(synthesize_utterance(w, {"nosuchword"}, 0, 1), ValidationError);
  CHECK_THROWS_AS(translate_oracle(w, {"nosuchword"}), ValidationError);
  CHECK_THROWS_AS(synthesize_utterance(w, {w.source_words[0]}, 99, 1), ValidationError);
}

TEST_CASE("oracle translation: empty, single word, adjacent swap") {
  WorldSpec w = build_world(tiny_config(), 21);
  CHECK(translate_oracle(w, {}).empty());

  std::vector<std::string> one{w.source_words[3]};
  std::vector<std::string> expect_one;
  for (int t : w.translation_map[3]) expect_one.push_back(w.target_token_table[t]);
  CHECK(translate_oracle(w, one) == expect_one);

  // Two adjacent words swap: tokens of word 1 come first.
  std::vector<std::string> two{w.source_words[0], w.source_words[1]};
  std::vector<std::string> expect_two;
  for (int t : w.translation_map[1]) expect_two.push_back(w.target_token_table[t]);
  for (int t : w.translation_map[0]) expect_two.push_back(w.target_token_table[t]);
  CHECK(translate_oracle(w, two) == expect_two);

  // Odd tail stays in place.
  std::vector<std::string> three{w.source_words[0], w.source_words[1], w.source_words[2]};
  std::vector<std::string> expect_three = expect_two;
  for (int t : w.translation_map[2]) expect_three.push_back(w.target_token_table[t]);
  CHECK(translate_oracle(w, three) == expect_three);
}

TEST_CASE("every sampled utterance satisfies the oracle consistency invariant") {
  WorldSpec w = build_world(tiny_config(), 31);
  CorpusSplit corpus = sample_corpus(w, {20, 5, 5, 30}, 8);
  for (const auto& utt : corpus.train) {
    CHECK(utt.target_tokens == translate_oracle(w, utt.source_tokens));
  }
}

TEST_CASE("corpus splits are disjoint by source sentence") {
  WorldConfig c;
  c.lexicon_words = 40;
  WorldSpec w = build_world(c, 77);
  CorpusSplit corpus = sample_corpus(w, {300, 50, 50, 10000}, 5);
  std::set<std::string> seen;
  auto add_all = [&](const std::vector<Utterance>& utts) {
    for (const auto& u : utts) {
      CHECK(seen.insert(join_words(u.source_tokens)).second);
    }
  };
  add_all(corpus.train);
  add_all(corpus.dev);
  add_all(corpus.test);
  for (const auto& m : corpus.mono) {
    CHECK(seen.insert(join_words(m.source_tokens)).second);
  }
  CHECK(corpus.mono.size() == 10000);
}

TEST_CASE("zero parallel yields monolingual-only corpus; sampling is deterministic") {
  WorldSpec w = build_world(tiny_config(), 5);
  CorpusSplit corpus = sample_corpus(w, {0, 0, 0, 12}, 4);
  CHECK(corpus.train.empty());
  CHECK(corpus.mono.size() == 12);

  CorpusSplit a = sample_corpus(w, {5, 2, 2, 6}, 19);
  CorpusSplit b = sample_corpus(w, {5, 2, 2, 6}, 19);
  REQUIRE(a.train.size() == b.train.size());
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].source_tokens == b.train[i].source_tokens);
    CHECK(a.train[i].frames == b.train[i].frames);
    CHECK(a.train[i].speaker_id == b.train[i].speaker_id);
  }
}

TEST_CASE("oversized corpus request fails with a sampling error") {
  WorldConfig c = tiny_config();
  c.sentence_len_lo = 1;
  c.sentence_len_hi = 1;  // only lexicon_words distinct sentences exist
  WorldSpec w = build_world(c, 2);
  CHECK_THROWS_AS(sample_corpus(w, {100, 0, 0, 0}, 1), ValidationError);
}

TEST_CASE("world JSON round trip preserves the spec") {
  WorldSpec w = build_world(tiny_config(), 17);
  WorldSpec back = world_from_json(world_to_json(w));
  CHECK(back.prototypes == w.prototypes);
  CHECK(back.lexicon == w.lexicon);
  CHECK(back.translation_map == w.translation_map);
  CHECK(back.speaker_offsets == w.speaker_offsets);
  CHECK(back.source_words == w.source_words);
  CHECK(back.config.noise_sigma == w.config.noise_sigma);
}

TEST_SUITE_END();
