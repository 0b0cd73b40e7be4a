// metrics.cc
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

#include "metrics.hh"

#include <algorithm>
#include <cmath>
#include <map>

#include "errors.hh"

namespace dub {

namespace {

using Ngram = std::vector<std::string>;

void count_ngrams(const std::vector<std::string>& tokens, int n,
                  std::map<Ngram, int64_t>& counts) {
  if (static_cast<int>(tokens.size()) < n) return;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    Ngram g(tokens.begin() + i, tokens.begin() + i + n);
    ++counts[g];
  }
}

}  // namespace

BleuReport corpus_bleu(const std::vector<std::vector<std::string>>& hypotheses,
                       const std::vector<std::vector<std::string>>& references) {
  if (hypotheses.empty()) throw ValidationError("bleu: empty corpus");
  if (hypotheses.size() != references.size()) {
    throw ValidationError("bleu: hypothesis/reference count mismatch");
  }

  BleuReport rep;
  int64_t matched[4] = {0, 0, 0, 0};
  int64_t total[4] = {0, 0, 0, 0};
  for (size_t s = 0; s < hypotheses.size(); ++s) {
    rep.hyp_tokens += static_cast<int64_t>(hypotheses[s].size());
    rep.ref_tokens += static_cast<int64_t>(references[s].size());
    for (int n = 1; n <= 4; ++n) {
      std::map<Ngram, int64_t> hyp_counts, ref_counts;
      count_ngrams(hypotheses[s], n, hyp_counts);
      count_ngrams(references[s], n, ref_counts);
      for (const auto& [gram, count] : hyp_counts) {
        total[n - 1] += count;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }

  // Exponential smoothing: the i-th zero-match order contributes
  // 1 / (2^i * total_n).
  double log_sum = 0.0;
  double smooth = 1.0;
  bool degenerate = false;
  for (int n = 0; n < 4; ++n) {
    double p;
    if (total[n] == 0) {
      degenerate = true;  // hypothesis corpus shorter than n everywhere
      p = 0.0;
    } else if (matched[n] == 0) {
      smooth *= 2.0;
      p = 1.0 / (smooth * static_cast<double>(total[n]));
    } else {
      p = static_cast<double>(matched[n]) / static_cast<double>(total[n]);
    }
    rep.precisions[n] = p;
    if (p > 0.0) log_sum += std::log(p);
  }

  if (rep.hyp_tokens == 0 || degenerate) {
    rep.bleu = 0.0;
    rep.brevity_penalty = 0.0;
    return rep;
  }
  rep.brevity_penalty =
      rep.hyp_tokens >= rep.ref_tokens
          ? 1.0
          : std::exp(1.0 - static_cast<double>(rep.ref_tokens) / rep.hyp_tokens);
  rep.bleu = 100.0 * rep.brevity_penalty * std::exp(log_sum / 4.0);
  return rep;
}

int64_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int64_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= m; ++j) {
      int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double uer(const std::vector<int>& hyp_units, const std::vector<int>& ref_units) {
  if (ref_units.empty()) throw ValidationError("uer: empty reference");
  return 100.0 * static_cast<double>(edit_distance(hyp_units, ref_units)) /
         static_cast<double>(ref_units.size());
}

double corpus_uer(const std::vector<std::vector<int>>& hyps,
                  const std::vector<std::vector<int>>& refs) {
  if (hyps.size() != refs.size()) throw ValidationError("uer: count mismatch");
  int64_t dist = 0, ref_len = 0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    dist += edit_distance(hyps[i], refs[i]);
    ref_len += static_cast<int64_t>(refs[i].size());
  }
  if (ref_len == 0) throw ValidationError("uer: empty references");
  return 100.0 * static_cast<double>(dist) / static_cast<double>(ref_len);
}

double quantization_mse(const Codebook& codebook, const FrameList& frames) {
  if (frames.empty()) throw ValidationError("quantization_mse: no frames");
  double total = 0.0;
  for (const auto& f : frames) {
    int c = assign(codebook, f);
    double d = 0.0;
    for (size_t i = 0; i < f.size(); ++i) {
      double diff = f[i] - codebook.centroids[c][i];
      d += diff * diff;
    }
    total += d;
  }
  return total / static_cast<double>(frames.size());
}

}  // namespace dub
