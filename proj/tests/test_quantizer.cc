// test_quantizer.cc
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

#include <algorithm>
#include <cmath>
#include <map>

#include "doctest.h"
#include "errors.hh"
#include "metrics.hh"
#include "quantizer.hh"
#include "rng.hh"
#include "world.hh"

using namespace dub;

namespace {

FrameList random_frames(int n, int dim, uint64_t seed) {
  Rng rng(seed);
  FrameList frames(n, std::vector<double>(dim));
  for (auto& f : frames) {
    for (double& v : f) v = rng.gaussian();
  }
  return frames;
}

}  // namespace

TEST_SUITE_BEGIN("quantizer");

TEST_CASE("one-dimensional {0,1,10,11} with K=2 recovers {0.5, 10.5} exactly") {
  FrameList frames{{0.0}, {1.0}, {10.0}, {11.0}};
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Codebook cb = fit_kmeans(frames, 2, 50, seed);
    std::vector<double> centers{cb.centroids[0][0], cb.centroids[1][0]};
    std::sort(centers.begin(), centers.end());
    CHECK(centers[0] == 0.5);
    CHECK(centers[1] == 10.5);
  }
}

TEST_CASE("K equal to the number of distinct frames reaches objective zero") {
  FrameList frames = random_frames(12, 3, 4);
  Codebook cb = fit_kmeans(frames, 12, 50, 9);
  CHECK(cb.fit_objective_trace.back() == 0.0);
  // centroids are the points as a set
  for (const auto& f : frames) {
    int c = assign(cb, f);
    CHECK(cb.centroids[c] == f);
  }
}

TEST_CASE("objective trace is non-increasing on random fits") {
  for (uint64_t seed = 0; seed < 50; ++seed) {
    FrameList frames = random_frames(120, 4, 100 + seed);
    Codebook cb = fit_kmeans(frames, 8, 40, seed);
    for (size_t i = 1; i < cb.fit_objective_trace.size(); ++i) {
      CHECK(cb.fit_objective_trace[i] <= cb.fit_objective_trace[i - 1]);
    }
    for (const auto& row : cb.centroids) {
      for (double v : row) CHECK(std::isfinite(v));
    }
  }
}

TEST_CASE("final assignment is a fixpoint of assign") {
  FrameList frames = random_frames(200, 4, 17);
  Codebook cb = fit_kmeans(frames, 6, 60, 3);
  // re-assigning and re-averaging changes nothing
  std::vector<std::vector<double>> sums(6, std::vector<double>(4, 0.0));
  std::vector<int64_t> counts(6, 0);
  for (const auto& f : frames) {
    int c = assign(cb, f);
    for (int k = 0; k < 4; ++k) sums[c][k] += f[k];
    ++counts[c];
  }
  for (int c = 0; c < 6; ++c) {
    REQUIRE(counts[c] > 0);
    for (int k = 0; k < 4; ++k) {
      CHECK(cb.centroids[c][k] == doctest::Approx(sums[c][k] / counts[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("fewer frames than clusters is a fit error") {
  FrameList frames = random_frames(3, 2, 1);
  CHECK_THROWS_AS(fit_kmeans(frames, 4, 10, 0), ValidationError);
  CHECK_THROWS_AS(fit_kmeans(frames, 0, 10, 0), ValidationError);
}

TEST_CASE("assign matches a brute-force linear scan on 1000 random frames") {
  FrameList data = random_frames(300, 5, 23);
  Codebook cb = fit_kmeans(data, 16, 30, 7);
  FrameList probes = random_frames(1000, 5, 29);
  for (const auto& f : probes) {
    int got = assign(cb, f);
    int expect = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int c = 0; c < cb.k; ++c) {
      double d = 0.0;
      for (int k = 0; k < 5; ++k) {
        double diff = f[k] - cb.centroids[c][k];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        expect = c;
      }
    }
    CHECK(got == expect);
  }
}

TEST_CASE("assign returns the centroid itself and breaks ties low") {
  Codebook cb;
  cb.k = 5;
  cb.dim = 2;
  cb.centroids = {{0, 0}, {2, 0}, {4, 0}, {0, 9}, {2, 9}};
  CHECK(assign(cb, {4.0, 0.0}) == 2);
  // equidistant between centroids 1 and 4's column... pick (1,0): distance
  // 1 to both centroid 0 and centroid 1 -> lowest index wins
  CHECK(assign(cb, {1.0, 0.0}) == 0);
  CHECK_THROWS_AS(assign(cb, {1.0, 0.0, 0.0}), ValidationError);
}

TEST_CASE("dedup collapses runs, keeps order, and is idempotent") {
  CHECK(dedup({5, 5, 5, 2, 2, 5}) == std::vector<int>{5, 2, 5});
  CHECK(dedup({}) == std::vector<int>{});
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> raw(static_cast<size_t>(rng.uniform_int(0, 40)));
    for (int& v : raw) v = static_cast<int>(rng.uniform_int(0, 4));
    std::vector<int> once = dedup(raw);
    CHECK(dedup(once) == once);
    for (size_t i = 1; i < once.size(); ++i) CHECK(once[i] != once[i - 1]);
  }
}

TEST_CASE("extract_units dedups per-frame assignments") {
  Codebook cb;
  cb.k = 3;
  cb.dim = 1;
  cb.centroids = {{0.0}, {5.0}, {10.0}};
  FrameList frames;
  for (int i = 0; i < 4; ++i) frames.push_back({0.05});
  for (int i = 0; i < 3; ++i) frames.push_back({9.9});
  ExtractResult res = extract_units(cb, frames);
  CHECK(res.units.units == std::vector<int>{0, 2});
  CHECK(res.assignments == std::vector<int>{0, 0, 0, 0, 2, 2, 2});
  CHECK(res.units.units.size() <= frames.size());
  CHECK_THROWS_AS(extract_units(cb, {}), ValidationError);
}

TEST_CASE("clean-world units recover phoneme sequences up to relabeling") {
  WorldConfig wc;
  wc.phonemes = 6;
  wc.frame_dim = 4;
  wc.lexicon_words = 8;
  wc.noise_sigma = 0.0;
  wc.speakers = 2;
  wc.duration_lo = 1;
  wc.duration_hi = 3;
  wc.sentence_len_lo = 1;
  wc.sentence_len_hi = 3;
  WorldSpec w = build_world(wc, 19);
  CorpusSplit corpus = sample_corpus(w, {24, 0, 0, 0}, 6);
  FrameList clean;  // canonical-speaker frames
  std::vector<Utterance> canon;
  for (int i = 0; i < static_cast<int>(corpus.train.size()); ++i) {
    canon.push_back(synthesize_utterance(w, corpus.train[i].source_tokens, kCanonicalSpeaker,
                                         1000 + i));
    for (const auto& f : canon.back().frames) clean.push_back(f);
  }
  Codebook cb = fit_kmeans(clean, wc.phonemes, 50, 2);

  // Nearest-neighbor matching between centroids and prototypes.
  std::map<int, int> cluster_to_phoneme;
  for (int c = 0; c < cb.k; ++c) {
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    for (int p = 0; p < wc.phonemes; ++p) {
      double d = 0.0;
      for (int k = 0; k < wc.frame_dim; ++k) {
        double diff = cb.centroids[c][k] - w.prototypes[p][k];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        arg = p;
      }
    }
    cluster_to_phoneme[c] = arg;
  }

  for (const auto& utt : canon) {
    std::vector<int> phoneme_seq;
    for (const auto& tok : utt.source_tokens) {
      int wid = w.word_id(tok);
      for (int ph : w.lexicon[wid]) phoneme_seq.push_back(ph);
    }
    std::vector<int> expected = dedup(phoneme_seq);
    ExtractResult res = extract_units(cb, utt.frames);
    std::vector<int> mapped;
    for (int u : res.units.units) mapped.push_back(cluster_to_phoneme[u]);
    CHECK(mapped == expected);
  }
}

TEST_CASE("relabeling the codebook permutes extracted units elementwise") {
  FrameList data = random_frames(100, 3, 31);
  Codebook cb = fit_kmeans(data, 5, 30, 11);
  // rotate rows by 2 as the permutation
  Codebook permuted = cb;
  for (int c = 0; c < cb.k; ++c) permuted.centroids[(c + 2) % cb.k] = cb.centroids[c];
  FrameList probe = random_frames(40, 3, 33);
  ExtractResult a = extract_units(cb, probe);
  ExtractResult b = extract_units(permuted, probe);
  REQUIRE(a.units.units.size() == b.units.units.size());
  for (size_t i = 0; i < a.units.units.size(); ++i) {
    CHECK(b.units.units[i] == (a.units.units[i] + 2) % cb.k);
  }
}

TEST_CASE("speaker normalization with zero offset is the identity") {
  SpeakerStats stats;
  stats.dim = 2;
  stats.offsets[0] = {0.0, 0.0};
  FrameList frames{{1.0, 2.0}, {3.0, 4.0}};
  CHECK(normalize_speaker(frames, stats, 0) == frames);
  CHECK_THROWS_AS(normalize_speaker(frames, stats, 1), ValidationError);
}

TEST_CASE("noise-free normalization recovers canonical frames to 1e-9") {
  WorldConfig wc;
  wc.phonemes = 6;
  wc.frame_dim = 4;
  wc.lexicon_words = 8;
  wc.noise_sigma = 0.0;
  wc.speakers = 4;
  wc.duration_lo = 2;
  wc.duration_hi = 2;
  wc.sentence_len_lo = 2;
  wc.sentence_len_hi = 3;
  WorldSpec w = build_world(wc, 23);

  // Same sentences for every speaker so content cancels in the stats.
  CorpusSplit corpus = sample_corpus(w, {30, 0, 0, 0}, 3);
  std::vector<Utterance> utts;
  int64_t frames_per_speaker = 0;
  for (int s = 0; s < wc.speakers; ++s) {
    frames_per_speaker = 0;
    for (int i = 0; i < 30; ++i) {
      utts.push_back(synthesize_utterance(w, corpus.train[i].source_tokens, s, 500 + i));
      frames_per_speaker += static_cast<int64_t>(utts.back().frames.size());
    }
  }
  REQUIRE(frames_per_speaker * wc.speakers >= 1000);
  std::vector<std::pair<int, const FrameList*>> by_utt;
  for (const auto& u : utts) by_utt.emplace_back(u.speaker_id, &u.frames);
  SpeakerStats stats = estimate_speaker_stats(by_utt);

  for (int s = 0; s < wc.speakers; ++s) {
    Utterance spoken = synthesize_utterance(w, corpus.train[0].source_tokens, s, 500);
    Utterance canon =
        synthesize_utterance(w, corpus.train[0].source_tokens, kCanonicalSpeaker, 500);
    FrameList normed = normalize_speaker(spoken.frames, stats, s);
    REQUIRE(normed.size() == canon.frames.size());
    for (size_t i = 0; i < normed.size(); ++i) {
      for (int k = 0; k < wc.frame_dim; ++k) {
        CHECK(std::abs(normed[i][k] - canon.frames[i][k]) <= 1e-9);
      }
    }
  }
}

TEST_CASE("normalization lowers cross-speaker UER on the default world") {
  WorldConfig wc;  // default: sigma 0.1, offsets 0.5
  WorldSpec w = build_world(wc, 29);
  CorpusSplit corpus = sample_corpus(w, {100, 0, 0, 0}, 7);

  std::vector<std::pair<int, const FrameList*>> by_utt;
  for (const auto& u : corpus.train) by_utt.emplace_back(u.speaker_id, &u.frames);
  SpeakerStats stats = estimate_speaker_stats(by_utt);

  FrameList raw_fit, norm_fit;
  for (const auto& u : corpus.train) {
    raw_fit.insert(raw_fit.end(), u.frames.begin(), u.frames.end());
    FrameList n = normalize_speaker(u.frames, stats, u.speaker_id);
    norm_fit.insert(norm_fit.end(), n.begin(), n.end());
  }
  Codebook raw_cb = fit_kmeans(raw_fit, 32, 40, 5);
  Codebook norm_cb = fit_kmeans(norm_fit, 32, 40, 5);

  // The same 100 sentences spoken by two different speakers.
  std::vector<std::vector<int>> raw_a, raw_b, norm_a, norm_b;
  for (int i = 0; i < 100; ++i) {
    const auto& sentence = corpus.train[i].source_tokens;
    Utterance ua = synthesize_utterance(w, sentence, 0, 9000 + i);
    Utterance ub = synthesize_utterance(w, sentence, 1, 9000 + i);
    raw_a.push_back(extract_units(raw_cb, ua.frames).units.units);
    raw_b.push_back(extract_units(raw_cb, ub.frames).units.units);
    norm_a.push_back(
        extract_units(norm_cb, normalize_speaker(ua.frames, stats, 0)).units.units);
    norm_b.push_back(
        extract_units(norm_cb, normalize_speaker(ub.frames, stats, 1)).units.units);
  }
  double raw_uer = corpus_uer(raw_a, raw_b);
  double norm_uer = corpus_uer(norm_a, norm_b);
  CHECK(norm_uer < raw_uer);
}

TEST_CASE("resynthesize looks up centroids and bounds the round-trip error") {
  FrameList data = random_frames(60, 3, 41);
  Codebook cb = fit_kmeans(data, 4, 30, 13);
  FrameList one = resynthesize(cb, {2});
  CHECK(one.size() == 1);
  CHECK(one[0] == cb.centroids[2]);
  CHECK_THROWS_AS(resynthesize(cb, {9}), ValidationError);

  // Round-trip MSE can never beat the best single constant frame.
  ExtractResult res = extract_units(cb, data);
  FrameList recon = resynthesize(cb, res.assignments);
  double mse = 0.0;
  std::vector<double> mean(3, 0.0);
  for (const auto& f : data) {
    for (int k = 0; k < 3; ++k) mean[k] += f[k];
  }
  for (double& v : mean) v /= static_cast<double>(data.size());
  double const_mse = 0.0;
  for (size_t i = 0; i < data.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      double d = data[i][k] - recon[i][k];
      mse += d * d;
      double dc = data[i][k] - mean[k];
      const_mse += dc * dc;
    }
  }
  CHECK(mse <= const_mse);
}

TEST_CASE("noise-free round-trip MSE with K=P stays under the offset norm squared") {
  // Offsets well inside the prototype separation keep the Lloyd optimum
  // phoneme-aligned, where each frame's residual is its speaker offset.
  WorldConfig wc;
  wc.phonemes = 8;
  wc.frame_dim = 8;
  wc.lexicon_words = 12;
  wc.noise_sigma = 0.0;
  wc.speakers = 4;
  wc.speaker_offset_norm = 0.3;
  wc.sentence_len_lo = 2;
  wc.sentence_len_hi = 4;
  WorldSpec w = build_world(wc, 37);
  CorpusSplit corpus = sample_corpus(w, {100, 0, 0, 0}, 11);
  FrameList all;
  for (const auto& u : corpus.train) all.insert(all.end(), u.frames.begin(), u.frames.end());
  Codebook cb = fit_kmeans(all, wc.phonemes, 60, 3);
  double total = 0.0;
  int64_t n = 0;
  for (const auto& u : corpus.train) {
    ExtractResult res = extract_units(cb, u.frames);
    FrameList recon = resynthesize(cb, res.assignments);
    for (size_t i = 0; i < u.frames.size(); ++i) {
      double d2 = 0.0;
      for (int k = 0; k < wc.frame_dim; ++k) {
        double d = u.frames[i][k] - recon[i][k];
        d2 += d * d;
      }
      total += d2;
      ++n;
    }
  }
  CHECK(total / n <= wc.speaker_offset_norm * wc.speaker_offset_norm);
}

TEST_CASE("codebook JSON round trip is exact") {
  FrameList data = random_frames(50, 4, 3);
  Codebook cb = fit_kmeans(data, 6, 20, 1);
  Codebook back = codebook_from_json(codebook_to_json(cb));
  CHECK(back.k == cb.k);
  CHECK(back.dim == cb.dim);
  CHECK(back.centroids == cb.centroids);
  CHECK(back.fit_objective_trace == cb.fit_objective_trace);
}

TEST_SUITE_END();
