// pipeline.hh
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
//
// Discrete unit back-translation pipeline: extract units from the parallel
// corpus, train the text-to-unit model, synthesize tagged pseudo-units from
// monolingual text, mix with upsampled originals and train the final
// unit-to-text model. The from-scratch baseline is the degenerate mixture
// (rate 1, no synthetic pairs), so a run with zero back-translated data is
// bit-identical to the baseline by construction.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "config.hh"
#include "decode.hh"
#include "metrics.hh"
#include "model_io.hh"

namespace dub {

struct ParallelPair {
  UnitSequence units;
  std::vector<std::string> target;
  enum class Origin { original, synthetic } origin = Origin::original;
};

struct UnitCorpus {
  std::vector<ParallelPair> train, dev, test;
  int skipped = 0;
};

// Everything the experiment needs before any model training.
struct PreparedData {
  WorldSpec world;
  CorpusSplit corpus;
  SpeakerStats speaker_stats;  // populated when use_speaker_norm
  Codebook codebook;
  UnitCorpus units;
  Vocabulary vocab;
  std::vector<std::vector<std::string>> mono_text;  // hygiene-filtered
  int mono_filtered = 0;  // mono records dropped because their target
                          // collides with an original training target
};

// Named substreams of the root seed, so stages can re-run in isolation.
struct StageSeeds {
  uint64_t world, corpus, kmeans, init_u2tt, init_t2ut, init_cont, train_u2tt, train_t2ut,
      train_cont, bt, mixture;
};
StageSeeds stage_seeds(uint64_t root_seed);

std::vector<ParallelPair> prepare_unit_corpus(const Codebook& codebook,
                                              const std::vector<Utterance>& utterances,
                                              bool use_speaker_norm,
                                              const SpeakerStats* stats, int* skipped);

PreparedData prepare_data(const ExperimentConfig& config);

// Pair -> model example. Unit-to-text sources are BOS (+<BT> for synthetic
// pairs) + unit symbols + EOS; text-to-unit sources are BOS + text + EOS
// with unit targets and never carry the tag.
std::vector<TrainingExample> encode_pairs(const Vocabulary& vocab,
                                          const std::vector<ParallelPair>& pairs,
                                          Direction direction);

int auto_upsample_rate(const MixtureConfig& mixture, size_t n_original, size_t n_synthetic);

// r copies of every original pair plus the synthetic pairs once, globally
// shuffled; the multiset is exact.
std::vector<ParallelPair> build_mixture(const std::vector<ParallelPair>& original,
                                        const std::vector<ParallelPair>& synthetic,
                                        int upsample_rate, uint64_t shuffle_seed);

struct BtStats {
  int requested = 0;
  int generated = 0;
  int dropped_empty = 0;
  int truncated = 0;
  int stray_non_unit_tokens = 0;
};

std::vector<ParallelPair> generate_bt(const Parameters<float>& t2ut, const Vocabulary& vocab,
                                      const std::vector<std::vector<std::string>>& mono_text,
                                      const DecodeConfig& decode, BtStats* stats = nullptr);

struct EvalResult {
  BleuReport bleu;
  std::vector<std::vector<std::string>> hypotheses;
};

EvalResult evaluate_bleu(const Parameters<float>& u2tt, const Vocabulary& vocab,
                         const std::vector<ParallelPair>& test_pairs,
                         const DecodeConfig& decode);

// Trains a model with the experiment's optimizer settings on pre-encoded
// examples (used directly for the continuous-frame input mode).
Parameters<float> train_model(const ExperimentConfig& config, ModelConfig mc,
                              const Vocabulary& vocab,
                              const std::vector<TrainingExample>& train_data,
                              const std::vector<TrainingExample>& dev_data, uint64_t init_seed,
                              uint64_t train_seed, const Codebook* codebook, bool pretrained,
                              TrainLog* log, int max_steps_override);

// Trains one direction on the given pairs with dev-loss tracking.
Parameters<float> train_direction(const ExperimentConfig& config, const Vocabulary& vocab,
                                  const Codebook& codebook,
                                  const std::vector<ParallelPair>& train_pairs,
                                  const std::vector<ParallelPair>& dev_pairs,
                                  Direction direction, uint64_t init_seed, uint64_t train_seed,
                                  bool use_pretrained_embedding, TrainLog* log,
                                  int max_steps_override = 0);

// Full experiment. When out_dir is nonempty every artifact (world, corpus,
// codebook, vocab, checkpoints, report.json/report.md/curve.csv) is
// persisted there.
nlohmann::json run_dub_experiment(const ExperimentConfig& config, bool write_artifacts = true);

std::string render_report_markdown(const nlohmann::json& report);
std::string render_curve_csv(const nlohmann::json& report);

// Report JSON with volatile fields (timings) removed; two runs with the
// same config and seed produce byte-identical dumps of this view.
nlohmann::json stable_report_view(nlohmann::json report);

}  // namespace dub
