// test_vocab.cc
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

#include <set>

#include "doctest.h"
#include "errors.hh"
#include "rng.hh"
#include "vocab.hh"
#include "world.hh"

using namespace dub;

namespace {

std::vector<std::vector<std::string>> corpus_of(std::initializer_list<const char*> lines) {
  std::vector<std::vector<std::string>> corpus;
  for (const char* line : lines) corpus.push_back(split_words(line));
  return corpus;
}

}  // namespace

TEST_SUITE_BEGIN("vocab");

TEST_CASE("floor-size vocabulary learns zero merges") {
  auto corpus = corpus_of({"ab ba", "ab"});
  // base symbols: a, b</w>, b, a</w>  -> floor = 5 specials + K + 4
  Vocabulary floor_vocab = learn_vocab(corpus, 3, Vocabulary::kNumSpecials + 3 + 4);
  CHECK(floor_vocab.merges.empty());
  CHECK(floor_vocab.size() == Vocabulary::kNumSpecials + 3 + 4);
  CHECK_THROWS_AS(learn_vocab(corpus, 3, Vocabulary::kNumSpecials + 3 + 3), ValidationError);
}

TEST_CASE("abab corpus learns (a,b) as its first merge") {
  auto corpus = corpus_of({"abab abab"});
  Vocabulary vocab = learn_vocab(corpus, 2, 40);
  REQUIRE(!vocab.merges.empty());
  CHECK(vocab.merges[0].first == "a");
  CHECK(vocab.merges[0].second == "b");
  // after the (a,b) merge the word encodes in two pieces
  std::vector<int> ids = encode_text(vocab, {"abab"});
  CHECK(ids.size() <= 2);
}

TEST_CASE("a vocabulary of size 8000 with 500 unit symbols keeps 7500 text entries") {
  // Rich synthetic character corpus so merges never run out.
  Rng rng(5);
  std::vector<std::vector<std::string>> corpus;
  for (int i = 0; i < 3000; ++i) {
    std::vector<std::string> sentence;
    for (int wlen = 0; wlen < 6; ++wlen) {
      std::string word;
      int len = static_cast<int>(rng.uniform_int(3, 10));
      for (int k = 0; k < len; ++k) {
        word += static_cast<char>('a' + rng.uniform_int(0, 25));
      }
      sentence.push_back(word);
    }
    corpus.push_back(sentence);
  }
  Vocabulary vocab = learn_vocab(corpus, 500, 8000);
  CHECK(vocab.size() == 8000);
  CHECK(vocab.unit_count == 500);
  CHECK(vocab.text_side_entries() == 7500);
}

TEST_CASE("unit symbols are atomic and never appear in merges") {
  auto corpus = corpus_of({"lo ka lo ka", "miro miro lo"});
  Vocabulary vocab = learn_vocab(corpus, 8, 60);
  for (int u = 0; u < 8; ++u) {
    std::string sym = "#" + std::to_string(u);
    REQUIRE(vocab.symbol_to_id.count(sym) == 1);
    for (const auto& [l, r] : vocab.merges) {
      CHECK(l != sym);
      CHECK(r != sym);
      CHECK(l != "<BT>");
      CHECK(r != "<BT>");
      CHECK(l + r != sym);
    }
  }
  UnitSequence units;
  units.units = {0, 2, 5};
  std::vector<int> ids = encode_units(vocab, units);
  CHECK(ids.size() == 3);
  CHECK(ids == std::vector<int>{vocab.unit_to_id(0), vocab.unit_to_id(2), vocab.unit_to_id(5)});
  UnitSequence bad;
  bad.units = {9};
  CHECK_THROWS_AS(encode_units(vocab, bad), ValidationError);
}

TEST_CASE("encode/decode round trip is the identity on in-vocabulary text") {
  WorldSpec w = build_world(WorldConfig{}, 3);
  CorpusSplit corpus = sample_corpus(w, {50, 0, 0, 1000}, 9);
  std::vector<std::vector<std::string>> targets;
  for (const auto& u : corpus.train) targets.push_back(u.target_tokens);
  // cover every token type so all mono sentences are in-vocabulary
  targets.push_back(w.target_token_table);
  Vocabulary vocab = learn_vocab(targets, 16, Vocabulary::kNumSpecials + 16 + 128);

  int checked = 0;
  for (const auto& m : corpus.mono) {
    std::vector<int> ids = encode_text(vocab, m.target_tokens);
    CHECK(decode_text(vocab, ids) == m.target_tokens);
    if (++checked >= 1000) break;
  }
}

TEST_CASE("specials are stripped and BOS/EOS-only input decodes to nothing") {
  auto corpus = corpus_of({"ka lo"});
  Vocabulary vocab = learn_vocab(corpus, 2, 40);
  CHECK(decode_text(vocab, {Vocabulary::kBos, Vocabulary::kEos}).empty());
  std::vector<int> ids = encode_text(vocab, {"ka"});
  ids.insert(ids.begin(), Vocabulary::kBos);
  ids.insert(ids.begin() + 1, Vocabulary::kBtTag);
  ids.push_back(Vocabulary::kEos);
  CHECK(decode_text(vocab, ids) == std::vector<std::string>{"ka"});
  CHECK_THROWS_AS(decode_text(vocab, {vocab.size()}), ValidationError);
  CHECK_THROWS_AS(decode_units(vocab, {-1}), ValidationError);
}

TEST_CASE("decoded unit streams re-apply dedup") {
  auto corpus = corpus_of({"ka lo"});
  Vocabulary vocab = learn_vocab(corpus, 10, 50);
  std::vector<int> ids{vocab.unit_to_id(3), vocab.unit_to_id(3), vocab.unit_to_id(7)};
  UnitSequence units = decode_units(vocab, ids);
  CHECK(units.units == std::vector<int>{3, 7});
}

TEST_CASE("unknown characters map to UNK") {
  auto corpus = corpus_of({"ka lo"});
  Vocabulary vocab = learn_vocab(corpus, 2, 40);
  std::vector<int> ids = encode_text(vocab, {"xyz"});
  REQUIRE(!ids.empty());
  for (int id : ids) CHECK(id == Vocabulary::kUnk);
}

TEST_CASE("id assignment is deterministic in corpus order") {
  auto corpus = corpus_of({"ka lo miro", "lo ka"});
  Vocabulary a = learn_vocab(corpus, 4, 64);
  Vocabulary b = learn_vocab(corpus, 4, 64);
  CHECK(a.id_to_symbol == b.id_to_symbol);
  CHECK(a.merges == b.merges);
  CHECK(vocab_hash(a) == vocab_hash(b));
}

TEST_CASE("vocabulary JSON round trip preserves table and merges") {
  auto corpus = corpus_of({"ka lo miro", "lo ka baz"});
  Vocabulary vocab = learn_vocab(corpus, 6, 80);
  Vocabulary back = vocab_from_json(vocab_to_json(vocab));
  CHECK(back.id_to_symbol == vocab.id_to_symbol);
  CHECK(back.merges == vocab.merges);
  CHECK(back.unit_count == vocab.unit_count);
  CHECK(vocab_hash(back) == vocab_hash(vocab));
  // encoding behaves identically after the round trip
  auto text = split_words("miro ka lo");
  CHECK(encode_text(back, text) == encode_text(vocab, text));
}

TEST_SUITE_END();
