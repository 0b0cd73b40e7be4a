// test_metrics.cc
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

#include "doctest.h"
#include "errors.hh"
#include "metrics.hh"
#include "rng.hh"
#include "world.hh"

using namespace dub;

namespace {

// Independent full-matrix edit distance used as the oracle.
int64_t oracle_edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::vector<int64_t>> dp(a.size() + 1, std::vector<int64_t>(b.size() + 1, 0));
  for (size_t i = 0; i <= a.size(); ++i) dp[i][0] = static_cast<int64_t>(i);
  for (size_t j = 0; j <= b.size(); ++j) dp[0][j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      int64_t best = dp[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      best = std::min(best, dp[i - 1][j] + 1);
      best = std::min(best, dp[i][j - 1] + 1);
      dp[i][j] = best;
    }
  }
  return dp[a.size()][b.size()];
}

std::vector<int> random_units(Rng& rng, int max_len, int alphabet) {
  std::vector<int> v(static_cast<size_t>(rng.uniform_int(0, max_len)));
  for (int& x : v) x = static_cast<int>(rng.uniform_int(0, alphabet - 1));
  return v;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("identical corpora score BLEU 100") {
  std::vector<std::vector<std::string>> corpus{split_words("ka lo mi ra"),
                                               split_words("zu ba")};
  BleuReport rep = corpus_bleu(corpus, corpus);
  CHECK(rep.bleu == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(rep.brevity_penalty == 1.0);
}

TEST_CASE("hand-computed brevity penalty case scores 77.88") {
  BleuReport rep = corpus_bleu({split_words("a b c d")}, {split_words("a b c d e")});
  CHECK(rep.bleu == doctest::Approx(77.88).epsilon(0.0002));
  CHECK(rep.precisions[0] == 1.0);
  CHECK(rep.precisions[3] == 1.0);
  CHECK(rep.brevity_penalty == doctest::Approx(std::exp(1.0 - 5.0 / 4.0)).epsilon(1e-12));
}

TEST_CASE("zero matched 4-grams still yields a positive score under smoothing") {
  BleuReport rep = corpus_bleu({split_words("a b c d e")}, {split_words("a b x y z")});
  CHECK(rep.bleu > 0.0);
  CHECK(rep.precisions[3] > 0.0);
}

TEST_CASE("BLEU is invariant to corpus order") {
  std::vector<std::vector<std::string>> hyp{split_words("a b c"), split_words("d e f g"),
                                            split_words("a a b")};
  std::vector<std::vector<std::string>> ref{split_words("a b d"), split_words("d e f f"),
                                            split_words("a b b")};
  double forward = corpus_bleu(hyp, ref).bleu;
  std::reverse(hyp.begin(), hyp.end());
  std::reverse(ref.begin(), ref.end());
  CHECK(corpus_bleu(hyp, ref).bleu == doctest::Approx(forward).epsilon(1e-12));
}

TEST_CASE("empty corpus and mismatched counts are metric errors") {
  CHECK_THROWS_AS(corpus_bleu({}, {}), ValidationError);
  CHECK_THROWS_AS(corpus_bleu({split_words("a")}, {}), ValidationError);
}

TEST_CASE("UER basics: identity, the {1,2,3} vs {1,3} case, pure insertions") {
  CHECK(uer({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(uer({1, 2, 3}, {1, 3}) == 50.0);
  // hypothesis = reference plus ref_len pure insertions
  CHECK(uer({1, 2, 3, 9, 9, 9}, {1, 2, 3}) == 100.0);
  CHECK_THROWS_AS(uer({1}, {}), ValidationError);
}

TEST_CASE("UER can exceed 100 percent") {
  CHECK(uer({7, 8, 9, 7, 8, 9, 7}, {1}) > 100.0);
}

TEST_CASE("edit distance matches the oracle on 200 random cases") {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> a = random_units(rng, 24, 6);
    std::vector<int> b = random_units(rng, 24, 6);
    CHECK(edit_distance(a, b) == oracle_edit_distance(a, b));
  }
}

TEST_CASE("edit distance is symmetric and satisfies the triangle inequality") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> a = random_units(rng, 15, 4);
    std::vector<int> b = random_units(rng, 15, 4);
    std::vector<int> c = random_units(rng, 15, 4);
    CHECK(edit_distance(a, b) == edit_distance(b, a));
    CHECK(edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c));
    if (!a.empty() && !b.empty()) {
      // cost-model symmetry stated on rates
      CHECK(uer(a, b) * static_cast<double>(b.size()) ==
            doctest::Approx(uer(b, a) * static_cast<double>(a.size())).epsilon(1e-9));
    }
  }
}

TEST_CASE("quantization MSE: zero on centroids, variance for K=1, matches brute force") {
  Codebook cb;
  cb.k = 3;
  cb.dim = 2;
  cb.centroids = {{0, 0}, {1, 0}, {0, 1}};
  FrameList on_centroids{{0, 0}, {1, 0}, {0, 1}, {1, 0}};
  CHECK(quantization_mse(cb, on_centroids) == 0.0);

  Rng rng(7);
  FrameList data(50, std::vector<double>(2));
  for (auto& f : data) {
    f[0] = rng.gaussian();
    f[1] = rng.gaussian();
  }
  Codebook k1 = fit_kmeans(data, 1, 20, 3);
  std::vector<double> mean(2, 0.0);
  for (const auto& f : data) {
    mean[0] += f[0];
    mean[1] += f[1];
  }
  mean[0] /= data.size();
  mean[1] /= data.size();
  double variance = 0.0;
  for (const auto& f : data) {
    variance += (f[0] - mean[0]) * (f[0] - mean[0]) + (f[1] - mean[1]) * (f[1] - mean[1]);
  }
  variance /= data.size();
  CHECK(quantization_mse(k1, data) == doctest::Approx(variance).epsilon(1e-9));

  Codebook k4 = fit_kmeans(data, 4, 20, 3);
  double brute = 0.0;
  for (const auto& f : data) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : k4.centroids) {
      double d = (f[0] - c[0]) * (f[0] - c[0]) + (f[1] - c[1]) * (f[1] - c[1]);
      best = std::min(best, d);
    }
    brute += best;
  }
  brute /= data.size();
  CHECK(quantization_mse(k4, data) == doctest::Approx(brute).epsilon(1e-12));
}

TEST_CASE("growing the codebook from the smaller one never increases the MSE") {
  Rng rng(21);
  FrameList data(200, std::vector<double>(3));
  for (auto& f : data) {
    for (double& v : f) v = rng.gaussian();
  }
  Codebook small = fit_kmeans(data, 4, 40, 5);
  double small_mse = quantization_mse(small, data);
  // initialize the larger fit with the smaller centroids plus extra points
  std::vector<std::vector<double>> init = small.centroids;
  for (int extra = 0; extra < 4; ++extra) init.push_back(data[extra * 37]);
  Codebook big = fit_kmeans_from(data, init, 40);
  CHECK(quantization_mse(big, data) <= small_mse + 1e-12);
}

TEST_SUITE_END();
