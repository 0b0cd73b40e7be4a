// quantizer.hh
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
#include <map>
#include <vector>

#include "json.hpp"

namespace dub {

// Discrete unit extractor: a k-means codebook over frames. Assignment is
// nearest centroid by squared Euclidean distance with ties broken toward
// the lowest centroid index; unit sequences are runs of assignments with
// adjacent duplicates collapsed.
struct Codebook {
  int k = 0;
  int dim = 0;
  std::vector<std::vector<double>> centroids;        // K x d
  std::vector<double> fit_objective_trace;           // per-iteration SSE
};

struct UnitSequence {
  std::vector<int> units;          // no two adjacent entries equal
  int speaker_id = -1;
  bool is_normalized = false;
};

// Per-speaker mean offsets relative to the global frame mean.
struct SpeakerStats {
  int dim = 0;
  std::map<int, std::vector<double>> offsets;
};

using FrameList = std::vector<std::vector<double>>;

Codebook fit_kmeans(const FrameList& frames, int k, int max_iters, uint64_t seed);

// Same Lloyd loop with caller-provided initial centroids.
Codebook fit_kmeans_from(const FrameList& frames, std::vector<std::vector<double>> init,
                         int max_iters);

int assign(const Codebook& codebook, const std::vector<double>& frame);

std::vector<int> dedup(const std::vector<int>& raw_indices);

struct ExtractResult {
  UnitSequence units;
  std::vector<int> assignments;  // pre-dedup, one per frame
};

ExtractResult extract_units(const Codebook& codebook, const FrameList& frames);

SpeakerStats estimate_speaker_stats(const std::vector<std::pair<int, const FrameList*>>& frames_by_utt);

FrameList normalize_speaker(const FrameList& frames, const SpeakerStats& stats, int speaker_id);

FrameList resynthesize(const Codebook& codebook, const std::vector<int>& pre_dedup_assignments);

nlohmann::json codebook_to_json(const Codebook& codebook);
Codebook codebook_from_json(const nlohmann::json& j);

}  // namespace dub
