// quantizer.cc
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

#include "quantizer.hh"

#include <algorithm>
#include <cmath>
#include <limits>

#include "errors.hh"
#include "rng.hh"

namespace dub {

namespace {

double sq_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

// Greedy k-means++ seeding: first centroid uniform, then each step samples
// a small pool of candidates weighted by squared distance to the nearest
// chosen centroid and keeps the candidate that lowers the potential most.
std::vector<std::vector<double>> kmeanspp_init(const FrameList& frames, int k, Rng& rng) {
  std::vector<std::vector<double>> centroids;
  centroids.reserve(k);
  int64_t n = static_cast<int64_t>(frames.size());
  int64_t first = rng.uniform_int(0, n - 1);
  centroids.push_back(frames[first]);

  std::vector<double> d2(n);
  for (int64_t i = 0; i < n; ++i) d2[i] = sq_distance(frames[i], centroids[0]);

  const int pool = 2 + static_cast<int>(std::log2(std::max(2, k)));
  std::vector<double> cand_d2(n);
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    int64_t best_pick = -1;
    double best_potential = std::numeric_limits<double>::infinity();
    for (int c = 0; c < pool; ++c) {
      int64_t pick;
      if (total <= 0.0) {
        pick = rng.uniform_int(0, n - 1);  // all points covered already
      } else {
        double target = rng.uniform() * total;
        double cum = 0.0;
        pick = n - 1;
        for (int64_t i = 0; i < n; ++i) {
          cum += d2[i];
          if (target < cum) {
            pick = i;
            break;
          }
        }
      }
      double potential = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        potential += std::min(d2[i], sq_distance(frames[i], frames[pick]));
      }
      if (potential < best_potential) {
        best_potential = potential;
        best_pick = pick;
      }
    }
    centroids.push_back(frames[best_pick]);
    for (int64_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_distance(frames[i], centroids.back()));
    }
  }
  return centroids;
}

}  // namespace

int assign(const Codebook& codebook, const std::vector<double>& frame) {
  if (static_cast<int>(frame.size()) != codebook.dim) {
    throw ValidationError("assign: frame dimension mismatch");
  }
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int c = 0; c < codebook.k; ++c) {
    double d = sq_distance(frame, codebook.centroids[c]);
    if (d < best_d) {  // strict: ties keep the lowest index
      best_d = d;
      best = c;
    }
  }
  return best;
}

std::vector<int> dedup(const std::vector<int>& raw_indices) {
  std::vector<int> out;
  for (int v : raw_indices) {
    if (out.empty() || out.back() != v) out.push_back(v);
  }
  return out;
}

Codebook fit_kmeans_from(const FrameList& frames, std::vector<std::vector<double>> init,
                         int max_iters) {
  const int64_t n = static_cast<int64_t>(frames.size());
  const int k = static_cast<int>(init.size());
  if (n < k) throw ValidationError("fit_kmeans: fewer frames than clusters");
  if (k < 1) throw ValidationError("fit_kmeans: K must be >= 1");
  const int dim = static_cast<int>(frames[0].size());

  Codebook cb;
  cb.k = k;
  cb.dim = dim;
  cb.centroids = std::move(init);

  std::vector<int> assignment(n, -1);
  std::vector<double> point_d2(n, 0.0);
  for (int iter = 0; iter < max_iters; ++iter) {
    // Assignment step; SSE against the current centroids is the trace entry.
    bool changed = false;
    double sse = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        double d = sq_distance(frames[i], cb.centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assignment[i] != best) {
        assignment[i] = best;
        changed = true;
      }
      point_d2[i] = best_d;
      sse += best_d;
    }
    cb.fit_objective_trace.push_back(sse);
    if (!changed && iter > 0) break;  // fixpoint

    // Update step: means of assigned points.
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<int64_t> counts(k, 0);
    for (int64_t i = 0; i < n; ++i) {
      const auto& f = frames[i];
      auto& s = sums[assignment[i]];
      for (int d = 0; d < dim; ++d) s[d] += f[d];
      ++counts[assignment[i]];
    }
    std::vector<bool> taken(n, false);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (int d = 0; d < dim; ++d) cb.centroids[c][d] = sums[c][d] / counts[c];
      } else {
        // Re-seed an empty cluster to the point farthest from its centroid.
        int64_t far_i = -1;
        double far_d = -1.0;
        for (int64_t i = 0; i < n; ++i) {
          if (taken[i]) continue;
          if (point_d2[i] > far_d) {
            far_d = point_d2[i];
            far_i = i;
          }
        }
        if (far_i >= 0) {
          cb.centroids[c] = frames[far_i];
          taken[far_i] = true;
        }
      }
    }
  }

  for (const auto& row : cb.centroids) {
    for (double v : row) {
      if (!std::isfinite(v)) throw NumericError("fit_kmeans: non-finite centroid");
    }
  }
  return cb;
}

Codebook fit_kmeans(const FrameList& frames, int k, int max_iters, uint64_t seed) {
  if (k < 1) throw ValidationError("fit_kmeans: K must be >= 1");
  if (static_cast<int64_t>(frames.size()) < k) {
    throw ValidationError("fit_kmeans: fewer frames than clusters");
  }
  Rng rng = Rng(seed).substream("kmeans");
  return fit_kmeans_from(frames, kmeanspp_init(frames, k, rng), max_iters);
}

ExtractResult extract_units(const Codebook& codebook, const FrameList& frames) {
  if (frames.empty()) throw ValidationError("extract_units: empty frame sequence");
  ExtractResult res;
  res.assignments.reserve(frames.size());
  for (const auto& f : frames) res.assignments.push_back(assign(codebook, f));
  res.units.units = dedup(res.assignments);
  return res;
}

SpeakerStats estimate_speaker_stats(
    const std::vector<std::pair<int, const FrameList*>>& frames_by_utt) {
  SpeakerStats stats;
  std::map<int, std::vector<double>> sums;
  std::map<int, int64_t> counts;
  std::vector<double> global_sum;
  int64_t global_count = 0;
  for (const auto& [speaker, frames] : frames_by_utt) {
    for (const auto& f : *frames) {
      if (stats.dim == 0) {
        stats.dim = static_cast<int>(f.size());
        global_sum.assign(stats.dim, 0.0);
      }
      auto& s = sums.try_emplace(speaker, stats.dim, 0.0).first->second;
      for (int d = 0; d < stats.dim; ++d) {
        s[d] += f[d];
        global_sum[d] += f[d];
      }
      ++counts[speaker];
      ++global_count;
    }
  }
  if (global_count == 0) throw ValidationError("speaker stats: no frames");
  for (int d = 0; d < stats.dim; ++d) global_sum[d] /= global_count;
  for (auto& [speaker, sum] : sums) {
    std::vector<double> offset(stats.dim);
    for (int d = 0; d < stats.dim; ++d) {
      offset[d] = sum[d] / counts[speaker] - global_sum[d];
    }
    stats.offsets[speaker] = std::move(offset);
  }
  return stats;
}

FrameList normalize_speaker(const FrameList& frames, const SpeakerStats& stats, int speaker_id) {
  auto it = stats.offsets.find(speaker_id);
  if (it == stats.offsets.end()) {
    throw ValidationError("normalize_speaker: no stats for speaker " +
                          std::to_string(speaker_id));
  }
  const auto& offset = it->second;
  FrameList out = frames;
  for (auto& f : out) {
    if (static_cast<int>(f.size()) != stats.dim) {
      throw ValidationError("normalize_speaker: frame dimension mismatch");
    }
    for (int d = 0; d < stats.dim; ++d) f[d] -= offset[d];
  }
  return out;
}

FrameList resynthesize(const Codebook& codebook, const std::vector<int>& pre_dedup_assignments) {
  FrameList out;
  out.reserve(pre_dedup_assignments.size());
  for (int a : pre_dedup_assignments) {
    if (a < 0 || a >= codebook.k) throw ValidationError("resynthesize: index out of range");
    out.push_back(codebook.centroids[a]);
  }
  return out;
}

nlohmann::json codebook_to_json(const Codebook& codebook) {
  nlohmann::json j;
  j["k"] = codebook.k;
  j["dim"] = codebook.dim;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : codebook.centroids) {
    for (double v : row) rows.push_back(v);
  }
  j["centroids"] = rows;  // row-major
  j["fit_objective_trace"] = codebook.fit_objective_trace;
  return j;
}

Codebook codebook_from_json(const nlohmann::json& j) {
  Codebook cb;
  cb.k = j.at("k").get<int>();
  cb.dim = j.at("dim").get<int>();
  std::vector<double> flat = j.at("centroids").get<std::vector<double>>();
  if (static_cast<int64_t>(flat.size()) != static_cast<int64_t>(cb.k) * cb.dim) {
    throw ValidationError("codebook json: centroid size mismatch");
  }
  for (int c = 0; c < cb.k; ++c) {
    cb.centroids.emplace_back(flat.begin() + static_cast<int64_t>(c) * cb.dim,
                              flat.begin() + static_cast<int64_t>(c + 1) * cb.dim);
  }
  if (j.contains("fit_objective_trace")) {
    cb.fit_objective_trace = j.at("fit_objective_trace").get<std::vector<double>>();
  }
  return cb;
}

}  // namespace dub
