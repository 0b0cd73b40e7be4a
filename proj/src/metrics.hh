// metrics.hh
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

#include "quantizer.hh"

namespace dub {

// Corpus BLEU with a single reference per hypothesis: case-sensitive,
// 4-gram, exponential smoothing for zero-match precisions, standard
// brevity penalty. Tokenization is whitespace (the toy language has no
// punctuation); callers tokenize.
struct BleuReport {
  double bleu = 0.0;                       // [0, 100]
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 1.0;
  int64_t hyp_tokens = 0;
  int64_t ref_tokens = 0;
};

BleuReport corpus_bleu(const std::vector<std::vector<std::string>>& hypotheses,
                       const std::vector<std::vector<std::string>>& references);

// Levenshtein distance with unit insert/delete/substitute costs.
int64_t edit_distance(const std::vector<int>& a, const std::vector<int>& b);

// 100 * distance / reference length; the reference must be nonempty.
double uer(const std::vector<int>& hyp_units, const std::vector<int>& ref_units);

// Corpus-level aggregate: 100 * sum(distances) / sum(reference lengths).
double corpus_uer(const std::vector<std::vector<int>>& hyps,
                  const std::vector<std::vector<int>>& refs);

double quantization_mse(const Codebook& codebook, const FrameList& frames);

}  // namespace dub
