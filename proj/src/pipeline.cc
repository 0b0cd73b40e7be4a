// pipeline.cc
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

#include "pipeline.hh"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include "errors.hh"

namespace dub {

namespace {

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string units_to_string(const std::vector<int>& units) {
  std::string out;
  for (size_t i = 0; i < units.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(units[i]);
  }
  return out;
}

}  // namespace

StageSeeds stage_seeds(uint64_t root_seed) {
  Rng root(root_seed);
  StageSeeds s;
  s.world = root.substream("world").seed();
  s.corpus = root.substream("corpus").seed();
  s.kmeans = root.substream("kmeans").seed();
  s.init_u2tt = root.substream("init_u2tt").seed();
  s.init_t2ut = root.substream("init_t2ut").seed();
  s.init_cont = root.substream("init_cont").seed();
  s.train_u2tt = root.substream("train_u2tt").seed();
  s.train_t2ut = root.substream("train_t2ut").seed();
  s.train_cont = root.substream("train_cont").seed();
  s.bt = root.substream("bt").seed();
  s.mixture = root.substream("mixture").seed();
  return s;
}

std::vector<ParallelPair> prepare_unit_corpus(const Codebook& codebook,
                                              const std::vector<Utterance>& utterances,
                                              bool use_speaker_norm, const SpeakerStats* stats,
                                              int* skipped) {
  if (use_speaker_norm && stats == nullptr) {
    throw ValidationError("prepare_unit_corpus: speaker norm requires stats");
  }
  std::vector<ParallelPair> pairs;
  pairs.reserve(utterances.size());
  for (const auto& utt : utterances) {
    if (utt.frames.empty()) {
      if (skipped) ++*skipped;
      continue;
    }
    const FrameList* frames = &utt.frames;
    FrameList normalized;
    if (use_speaker_norm) {
      normalized = normalize_speaker(utt.frames, *stats, utt.speaker_id);
      frames = &normalized;
    }
    ParallelPair pair;
    pair.units = extract_units(codebook, *frames).units;
    pair.units.speaker_id = utt.speaker_id;
    pair.units.is_normalized = use_speaker_norm;
    pair.target = utt.target_tokens;
    pair.origin = ParallelPair::Origin::original;
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

PreparedData prepare_data(const ExperimentConfig& config) {
  config.validate();
  StageSeeds seeds = stage_seeds(config.seed);

  PreparedData data;
  data.world = build_world(config.world, seeds.world);
  data.corpus = sample_corpus(data.world, config.corpus, seeds.corpus);

  const bool norm = config.mixture.use_speaker_norm;
  if (norm) {
    std::vector<std::pair<int, const FrameList*>> by_utt;
    for (const auto& utt : data.corpus.train) by_utt.emplace_back(utt.speaker_id, &utt.frames);
    data.speaker_stats = estimate_speaker_stats(by_utt);
  }

  FrameList fit_frames;
  for (const auto& utt : data.corpus.train) {
    const FrameList* frames = &utt.frames;
    FrameList normalized;
    if (norm) {
      normalized = normalize_speaker(utt.frames, data.speaker_stats, utt.speaker_id);
      frames = &normalized;
    }
    fit_frames.insert(fit_frames.end(), frames->begin(), frames->end());
  }
  data.codebook =
      fit_kmeans(fit_frames, config.quantizer.clusters, config.quantizer.max_iters, seeds.kmeans);

  const SpeakerStats* stats = norm ? &data.speaker_stats : nullptr;
  data.units.train =
      prepare_unit_corpus(data.codebook, data.corpus.train, norm, stats, &data.units.skipped);
  data.units.dev =
      prepare_unit_corpus(data.codebook, data.corpus.dev, norm, stats, &data.units.skipped);
  data.units.test =
      prepare_unit_corpus(data.codebook, data.corpus.test, norm, stats, &data.units.skipped);

  std::vector<std::vector<std::string>> targets;
  targets.reserve(data.units.train.size());
  for (const auto& pair : data.units.train) targets.push_back(pair.target);
  data.vocab = learn_vocab(targets, data.codebook.k, config.vocab_target_size());

  // Monolingual hygiene: a sentence whose target string already appears as
  // an original training target is never used for back-translation.
  std::set<std::string> train_targets;
  for (const auto& pair : data.units.train) train_targets.insert(join_words(pair.target));
  for (const auto& rec : data.corpus.mono) {
    if (train_targets.count(join_words(rec.target_tokens))) {
      ++data.mono_filtered;
    } else {
      data.mono_text.push_back(rec.target_tokens);
    }
  }
  return data;
}

std::vector<TrainingExample> encode_pairs(const Vocabulary& vocab,
                                          const std::vector<ParallelPair>& pairs,
                                          Direction direction) {
  std::vector<TrainingExample> examples;
  examples.reserve(pairs.size());
  for (const auto& pair : pairs) {
    TrainingExample ex;
    std::vector<int> unit_ids = encode_units(vocab, pair.units);
    std::vector<int> text_ids = encode_text(vocab, pair.target);
    if (direction == Direction::unit_to_text) {
      ex.src_ids.push_back(Vocabulary::kBos);
      if (pair.origin == ParallelPair::Origin::synthetic) {
        ex.src_ids.push_back(Vocabulary::kBtTag);
      }
      ex.src_ids.insert(ex.src_ids.end(), unit_ids.begin(), unit_ids.end());
      ex.src_ids.push_back(Vocabulary::kEos);
      ex.tgt_ids = std::move(text_ids);
    } else {
      ex.src_ids.push_back(Vocabulary::kBos);
      ex.src_ids.insert(ex.src_ids.end(), text_ids.begin(), text_ids.end());
      ex.src_ids.push_back(Vocabulary::kEos);
      ex.tgt_ids = std::move(unit_ids);
    }
    examples.push_back(std::move(ex));
  }
  return examples;
}

int auto_upsample_rate(const MixtureConfig& mixture, size_t n_original, size_t n_synthetic) {
  if (mixture.upsample_rate > 0) return mixture.upsample_rate;
  if (n_original == 0) return 1;
  int r = static_cast<int>(
      std::llround(static_cast<double>(n_synthetic) / static_cast<double>(n_original)));
  return std::max(1, std::min(r, mixture.upsample_cap));
}

std::vector<ParallelPair> build_mixture(const std::vector<ParallelPair>& original,
                                        const std::vector<ParallelPair>& synthetic,
                                        int upsample_rate, uint64_t shuffle_seed) {
  if (upsample_rate < 1) throw ValidationError("mixture: upsample rate must be >= 1");
  std::vector<ParallelPair> stream;
  stream.reserve(original.size() * upsample_rate + synthetic.size());
  for (int r = 0; r < upsample_rate; ++r) {
    stream.insert(stream.end(), original.begin(), original.end());
  }
  stream.insert(stream.end(), synthetic.begin(), synthetic.end());
  Rng rng(shuffle_seed);
  for (size_t i = stream.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
    std::swap(stream[i - 1], stream[j]);
  }
  return stream;
}

std::vector<ParallelPair> generate_bt(const Parameters<float>& t2ut, const Vocabulary& vocab,
                                      const std::vector<std::vector<std::string>>& mono_text,
                                      const DecodeConfig& decode, BtStats* stats) {
  BtStats local;
  local.requested = static_cast<int>(mono_text.size());

  std::vector<ParallelPair> out;
  out.reserve(mono_text.size());
  const size_t chunk = 64;
  for (size_t begin = 0; begin < mono_text.size(); begin += chunk) {
    size_t end = std::min(mono_text.size(), begin + chunk);
    std::vector<TrainingExample> sources;
    std::vector<int> caps;
    for (size_t i = begin; i < end; ++i) {
      TrainingExample ex;
      std::vector<int> text_ids = encode_text(vocab, mono_text[i]);
      ex.src_ids.push_back(Vocabulary::kBos);
      ex.src_ids.insert(ex.src_ids.end(), text_ids.begin(), text_ids.end());
      ex.src_ids.push_back(Vocabulary::kEos);
      // Generated unit length is capped at twice the text length plus
      // slack; truncations are counted in the stats.
      caps.push_back(std::min(decode.max_len, 2 * static_cast<int>(text_ids.size()) + 8));
      sources.push_back(std::move(ex));
    }
    std::vector<GenResult> results =
        generate_batch(t2ut, sources, decode, /*item_index_base=*/begin, &caps);
    for (size_t i = 0; i < results.size(); ++i) {
      const GenResult& r = results[i];
      if (r.truncated) ++local.truncated;
      UnitSequence units = decode_units(vocab, r.ids);
      for (int id : r.ids) {
        if (!vocab.is_unit_id(id)) ++local.stray_non_unit_tokens;
      }
      if (units.units.empty()) {
        ++local.dropped_empty;
        continue;
      }
      ParallelPair pair;
      pair.units = std::move(units);
      pair.target = mono_text[begin + i];
      pair.origin = ParallelPair::Origin::synthetic;
      out.push_back(std::move(pair));
    }
  }
  local.generated = static_cast<int>(out.size());
  if (stats) *stats = local;
  return out;
}

EvalResult evaluate_bleu(const Parameters<float>& u2tt, const Vocabulary& vocab,
                         const std::vector<ParallelPair>& test_pairs,
                         const DecodeConfig& decode) {
  std::vector<TrainingExample> sources = encode_pairs(vocab, test_pairs, Direction::unit_to_text);
  for (auto& ex : sources) ex.tgt_ids.clear();
  std::vector<GenResult> results = generate_batch(u2tt, sources, decode);
  EvalResult eval;
  std::vector<std::vector<std::string>> refs;
  for (size_t i = 0; i < results.size(); ++i) {
    eval.hypotheses.push_back(decode_text(vocab, results[i].ids));
    refs.push_back(test_pairs[i].target);
  }
  eval.bleu = corpus_bleu(eval.hypotheses, refs);
  return eval;
}

Parameters<float> train_model(const ExperimentConfig& config, ModelConfig mc,
                              const Vocabulary& vocab,
                              const std::vector<TrainingExample>& train_data,
                              const std::vector<TrainingExample>& dev_data, uint64_t init_seed,
                              uint64_t train_seed, const Codebook* codebook, bool pretrained,
                              TrainLog* log, int max_steps_override) {
  mc.vocab_size = vocab.size();
  Parameters<float> params = init_model<float>(mc, init_seed, codebook, pretrained);
  params.vocab_hash = vocab_hash(vocab);
  TrainConfig tc = config.train;
  tc.seed = train_seed;
  if (max_steps_override > 0) tc.max_steps = max_steps_override;
  Parameters<float> trained = train(std::move(params), train_data, dev_data, tc, log);
  trained.vocab_hash = vocab_hash(vocab);
  return trained;
}

Parameters<float> train_direction(const ExperimentConfig& config, const Vocabulary& vocab,
                                  const Codebook& codebook,
                                  const std::vector<ParallelPair>& train_pairs,
                                  const std::vector<ParallelPair>& dev_pairs,
                                  Direction direction, uint64_t init_seed, uint64_t train_seed,
                                  bool use_pretrained_embedding, TrainLog* log,
                                  int max_steps_override) {
  ModelConfig mc = config.model;
  mc.direction = direction;
  mc.input_mode = InputMode::unit_ids;
  std::vector<TrainingExample> train_data = encode_pairs(vocab, train_pairs, direction);
  std::vector<TrainingExample> dev_data = encode_pairs(vocab, dev_pairs, direction);
  return train_model(config, mc, vocab, train_data, dev_data, init_seed, train_seed,
                     use_pretrained_embedding ? &codebook : nullptr, use_pretrained_embedding,
                     log, max_steps_override);
}

namespace {

std::vector<TrainingExample> encode_frame_examples(const Vocabulary& vocab,
                                                   const std::vector<Utterance>& utterances) {
  std::vector<TrainingExample> out;
  out.reserve(utterances.size());
  for (const auto& utt : utterances) {
    TrainingExample ex;
    ex.frames = utt.frames;
    ex.tgt_ids = encode_text(vocab, utt.target_tokens);
    out.push_back(std::move(ex));
  }
  return out;
}

nlohmann::json train_log_to_json(const TrainLog& log) {
  nlohmann::json j;
  j["best_dev_loss"] = log.best_dev;
  j["best_dev_step"] = log.best_dev_step;
  j["final_dev_loss"] = log.final_dev;
  j["steps"] = log.steps;
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& [step, loss] : log.dev_loss) curve.push_back({{"step", step}, {"loss", loss}});
  j["dev_curve"] = curve;
  if (!log.train_loss.empty()) {
    j["first_train_loss"] = log.train_loss.front().second;
    j["last_train_loss"] = log.train_loss.back().second;
  }
  return j;
}

}  // namespace

nlohmann::json run_dub_experiment(const ExperimentConfig& config, bool write_artifacts) {
  config.validate();
  if (config.model.input_mode != InputMode::unit_ids) {
    throw ValidationError("dub-run: back-translation requires unit id input "
                          "(model.input_mode = unit_ids)");
  }
  ThreadPool::instance().set_threads(config.threads);
  StageSeeds seeds = stage_seeds(config.seed);
  Provenance prov{config_hash(config), config.seed};
  Provenance world_prov{config_hash(config, HashScope::world), config.seed};
  Provenance units_prov{config_hash(config, HashScope::units), config.seed};
  Provenance vocab_prov{config_hash(config, HashScope::vocab), config.seed};
  Provenance model_prov{config_hash(config, HashScope::model), config.seed};
  Provenance bt_prov{config_hash(config, HashScope::bt), config.seed};

  nlohmann::json report;
  report["config"] = config_to_json(config);
  report["config_hash"] = prov.config_hash;
  report["seed"] = config.seed;
  nlohmann::json timings = nlohmann::json::object();

  const std::string dir = config.out_dir;
  auto maybe_write_report = [&](bool final_write) {
    report["timings"] = timings;
    if (!write_artifacts) return;
    save_json_artifact(dir + "/report.json", prov, "report", report);
    if (final_write) {
      write_file_atomic(dir + "/report.md", render_report_markdown(report));
      write_file_atomic(dir + "/curve.csv", render_curve_csv(report));
    }
  };

  std::string stage = "prepare";
  try {
    double t0 = now_seconds();
    PreparedData data = prepare_data(config);
    timings["prepare"] = now_seconds() - t0;

    report["world"] = {{"min_prototype_distance", data.world.min_prototype_distance()},
                       {"lexicon_words", static_cast<int>(data.world.lexicon.size())},
                       {"mono_filtered", data.mono_filtered},
                       {"mono_available", static_cast<int>(data.mono_text.size())}};
    FrameList train_frames;
    for (const auto& utt : data.corpus.train) {
      train_frames.insert(train_frames.end(), utt.frames.begin(), utt.frames.end());
    }
    report["quantizer"] = {
        {"k", data.codebook.k},
        {"iterations", static_cast<int>(data.codebook.fit_objective_trace.size())},
        {"final_sse", data.codebook.fit_objective_trace.back()},
        {"train_quantization_mse", quantization_mse(data.codebook, train_frames)},
        {"skipped_utterances", data.units.skipped}};
    report["vocab"] = {{"size", data.vocab.size()},
                       {"unit_symbols", data.vocab.unit_count},
                       {"text_side_entries", data.vocab.text_side_entries()},
                       {"merges", static_cast<int>(data.vocab.merges.size())}};

    if (write_artifacts) {
      save_json_artifact(dir + "/world.json", world_prov, "world", world_to_json(data.world));
      save_json_artifact(dir + "/codebook.json", units_prov, "codebook",
                         codebook_to_json(data.codebook));
      save_json_artifact(dir + "/vocab.json", vocab_prov, "vocab", vocab_to_json(data.vocab));
      auto utterance_records = [&](const std::vector<Utterance>& utts) {
        std::vector<nlohmann::json> recs;
        for (const auto& u : utts) {
          nlohmann::json r;
          r["src"] = join_words(u.source_tokens);
          r["tgt"] = join_words(u.target_tokens);
          r["speaker"] = u.speaker_id;
          std::vector<double> flat;
          for (const auto& f : u.frames) flat.insert(flat.end(), f.begin(), f.end());
          r["frames"] = flat;
          recs.push_back(std::move(r));
        }
        return recs;
      };
      save_jsonl(dir + "/corpus/train.jsonl", world_prov, "corpus",
                 utterance_records(data.corpus.train));
      save_jsonl(dir + "/corpus/dev.jsonl", world_prov, "corpus",
                 utterance_records(data.corpus.dev));
      save_jsonl(dir + "/corpus/test.jsonl", world_prov, "corpus",
                 utterance_records(data.corpus.test));
      std::vector<nlohmann::json> mono_recs;
      for (const auto& m : data.corpus.mono) {
        mono_recs.push_back({{"src", join_words(m.source_tokens)},
                             {"tgt", join_words(m.target_tokens)}});
      }
      save_jsonl(dir + "/corpus/mono.jsonl", world_prov, "corpus", mono_recs);
      auto unit_records = [&](const std::vector<ParallelPair>& pairs) {
        std::vector<nlohmann::json> recs;
        for (const auto& p : pairs) {
          recs.push_back({{"units", units_to_string(p.units.units)},
                          {"tgt", join_words(p.target)},
                          {"speaker", p.units.speaker_id},
                          {"origin", p.origin == ParallelPair::Origin::original ? "original"
                                                                                 : "synthetic"}});
        }
        return recs;
      };
      nlohmann::json unit_meta = {{"normalized", config.mixture.use_speaker_norm}};
      save_jsonl(dir + "/corpus/units_train.jsonl", units_prov, "units",
                 unit_records(data.units.train), unit_meta);
      save_jsonl(dir + "/corpus/units_dev.jsonl", units_prov, "units",
                 unit_records(data.units.dev), unit_meta);
      save_jsonl(dir + "/corpus/units_test.jsonl", units_prov, "units",
                 unit_records(data.units.test), unit_meta);
    }
    maybe_write_report(false);

    // Baseline: the degenerate mixture (rate 1, no synthetic pairs).
    stage = "train_baseline";
    t0 = now_seconds();
    std::vector<ParallelPair> baseline_stream =
        build_mixture(data.units.train, {}, 1, seeds.mixture);
    TrainLog baseline_log;
    Parameters<float> baseline =
        train_direction(config, data.vocab, data.codebook, baseline_stream, data.units.dev,
                        Direction::unit_to_text, seeds.init_u2tt, seeds.train_u2tt,
                        config.model.use_pretrained_embedding, &baseline_log);
    timings["train_baseline"] = now_seconds() - t0;
    t0 = now_seconds();
    EvalResult baseline_eval =
        evaluate_bleu(baseline, data.vocab, data.units.test, config.eval_decode);
    timings["eval_baseline"] = now_seconds() - t0;
    report["baseline"] = {{"test_bleu", baseline_eval.bleu.bleu},
                          {"train", train_log_to_json(baseline_log)}};
    if (write_artifacts) {
      save_checkpoint(dir + "/ckpt/u2tt_baseline.bin", baseline, model_prov);
      std::string hyps, refs;
      for (size_t i = 0; i < baseline_eval.hypotheses.size(); ++i) {
        hyps += join_words(baseline_eval.hypotheses[i]) + "\n";
        refs += join_words(data.units.test[i].target) + "\n";
      }
      write_file_atomic(dir + "/corpus/test_hyps_baseline.txt", hyps);
      write_file_atomic(dir + "/corpus/test_refs.txt", refs);
    }
    maybe_write_report(false);

    // Back-translation model (text -> units).
    stage = "train_t2ut";
    t0 = now_seconds();
    TrainLog t2ut_log;
    Parameters<float> t2ut =
        train_direction(config, data.vocab, data.codebook, data.units.train, data.units.dev,
                        Direction::text_to_unit, seeds.init_t2ut, seeds.train_t2ut,
                        /*use_pretrained_embedding=*/false, &t2ut_log,
                        config.train.t2ut_max_steps);
    timings["train_t2ut"] = now_seconds() - t0;
    report["t2ut"] = {{"train", train_log_to_json(t2ut_log)}};
    if (write_artifacts) save_checkpoint(dir + "/ckpt/t2ut.bin", t2ut, model_prov);
    maybe_write_report(false);

    // Synthesize pseudo-units for the largest requested amount once; curve
    // points reuse prefixes (per-item seeds depend on the item index only).
    stage = "generate_bt";
    int max_amount = 0;
    for (int a : config.mixture.bt_amounts) max_amount = std::max(max_amount, a);
    max_amount = std::min<int>(max_amount, static_cast<int>(data.mono_text.size()));
    t0 = now_seconds();
    DecodeConfig bt_decode = config.bt_decode;
    bt_decode.seed = seeds.bt;
    std::vector<std::vector<std::string>> bt_input(data.mono_text.begin(),
                                                   data.mono_text.begin() + max_amount);
    BtStats bt_stats;
    std::vector<ParallelPair> synthetic = generate_bt(t2ut, data.vocab, bt_input, bt_decode,
                                                      &bt_stats);
    timings["generate_bt"] = now_seconds() - t0;
    report["bt"] = {{"method", decode_method_name(bt_decode.method)},
                    {"k", bt_decode.k},
                    {"beam_size", bt_decode.beam_size},
                    {"requested", bt_stats.requested},
                    {"generated", bt_stats.generated},
                    {"dropped_empty", bt_stats.dropped_empty},
                    {"truncated", bt_stats.truncated},
                    {"stray_non_unit_tokens", bt_stats.stray_non_unit_tokens}};
    if (write_artifacts) {
      std::vector<nlohmann::json> recs;
      for (const auto& p : synthetic) {
        recs.push_back({{"units", units_to_string(p.units.units)},
                        {"tgt", join_words(p.target)},
                        {"origin", "synthetic"}});
      }
      nlohmann::json meta = {{"method", decode_method_name(bt_decode.method)},
                             {"k", bt_decode.k},
                             {"beam_size", bt_decode.beam_size}};
      save_jsonl(dir + "/corpus/bt.jsonl", bt_prov, "bt_units", recs, meta);
    }
    maybe_write_report(false);

    // BLEU over increasing amounts of back-translated data. Amount 0 with
    // automatic rate is the baseline stream itself, so its score is reused;
    // the largest amount is the headline DUB system.
    stage = "dub_curve";
    std::vector<int> amounts = config.mixture.bt_amounts;
    std::sort(amounts.begin(), amounts.end());
    amounts.erase(std::unique(amounts.begin(), amounts.end()), amounts.end());
    nlohmann::json curve = nlohmann::json::array();
    double dub_bleu = baseline_eval.bleu.bleu;
    int dub_rate = 1;
    int64_t dub_stream_len = static_cast<int64_t>(baseline_stream.size());
    int dub_synth = 0;
    for (int amount : amounts) {
      int capped = std::min<int>(amount, static_cast<int>(synthetic.size()));
      std::vector<ParallelPair> synth_slice(synthetic.begin(), synthetic.begin() + capped);
      int rate = auto_upsample_rate(config.mixture, data.units.train.size(), synth_slice.size());
      double bleu;
      int64_t stream_len;
      if (synth_slice.empty() && rate == 1) {
        bleu = baseline_eval.bleu.bleu;  // identical stream by construction
        stream_len = static_cast<int64_t>(baseline_stream.size());
      } else {
        t0 = now_seconds();
        std::vector<ParallelPair> stream =
            build_mixture(data.units.train, synth_slice, rate, seeds.mixture);
        stream_len = static_cast<int64_t>(stream.size());
        TrainLog log;
        Parameters<float> model =
            train_direction(config, data.vocab, data.codebook, stream, data.units.dev,
                            Direction::unit_to_text, seeds.init_u2tt, seeds.train_u2tt,
                            config.model.use_pretrained_embedding, &log);
        EvalResult eval = evaluate_bleu(model, data.vocab, data.units.test, config.eval_decode);
        bleu = eval.bleu.bleu;
        timings["dub_amount_" + std::to_string(amount)] = now_seconds() - t0;
        if (amount == amounts.back()) {
          if (write_artifacts) {
            save_checkpoint(dir + "/ckpt/u2tt_dub.bin", model, bt_prov);
            std::string hyps;
            for (const auto& hyp : eval.hypotheses) hyps += join_words(hyp) + "\n";
            write_file_atomic(dir + "/corpus/test_hyps_dub.txt", hyps);
          }
        }
      }
      if (amount == amounts.back()) {
        dub_bleu = bleu;
        dub_rate = rate;
        dub_stream_len = stream_len;
        dub_synth = capped;
      }
      curve.push_back({{"amount", amount},
                       {"used_synthetic", capped},
                       {"upsample_rate", rate},
                       {"stream_length", stream_len},
                       {"test_bleu", bleu}});
      maybe_write_report(false);
    }
    report["curve"] = curve;
    report["dub"] = {{"test_bleu", dub_bleu},
                     {"upsample_rate", dub_rate},
                     {"stream_length", dub_stream_len},
                     {"synthetic_pairs", dub_synth},
                     {"original_pairs", static_cast<int>(data.units.train.size())},
                     {"delta_bleu", dub_bleu - baseline_eval.bleu.bleu}};
    maybe_write_report(false);

    // Pseudo-unit quality per generation method, measured on the dev set
    // against directly extracted units.
    if (config.report.uer_study) {
      stage = "uer_study";
      t0 = now_seconds();
      std::vector<std::vector<std::string>> dev_text;
      std::vector<std::vector<int>> dev_units;
      for (const auto& pair : data.units.dev) {
        dev_text.push_back(pair.target);
        dev_units.push_back(pair.units.units);
      }
      Rng uer_root(seeds.bt);
      auto study_arm = [&](DecodeMethod method, int k, int beam,
                           const char* name) -> nlohmann::json {
        DecodeConfig dc = config.bt_decode;
        dc.method = method;
        dc.k = k;
        dc.beam_size = beam;
        dc.seed = uer_root.substream(std::string("uer_") + name).seed();
        std::vector<TrainingExample> sources;
        std::vector<int> caps;
        for (const auto& text : dev_text) {
          TrainingExample ex;
          std::vector<int> ids = encode_text(data.vocab, text);
          ex.src_ids.push_back(Vocabulary::kBos);
          ex.src_ids.insert(ex.src_ids.end(), ids.begin(), ids.end());
          ex.src_ids.push_back(Vocabulary::kEos);
          caps.push_back(std::min(dc.max_len, 2 * static_cast<int>(ids.size()) + 8));
          sources.push_back(std::move(ex));
        }
        std::vector<GenResult> gen = generate_batch(t2ut, sources, dc, 0, &caps);
        // Index-aligned; an empty generation scores as pure deletions.
        std::vector<std::vector<int>> hyps(dev_units.size());
        int empties = 0;
        for (size_t i = 0; i < gen.size(); ++i) {
          hyps[i] = decode_units(data.vocab, gen[i].ids).units;
          if (hyps[i].empty()) ++empties;
        }
        return {{"uer", corpus_uer(hyps, dev_units)}, {"empty", empties}};
      };
      nlohmann::json study;
      study["beam_5"] = study_arm(DecodeMethod::beam, config.bt_decode.k, 5, "beam");
      study["top_10"] = study_arm(DecodeMethod::topk, 10, config.bt_decode.beam_size, "topk");
      study["sampling"] =
          study_arm(DecodeMethod::sample, config.bt_decode.k, config.bt_decode.beam_size,
                    "sample");
      report["uer_study"] = study;
      timings["uer_study"] = now_seconds() - t0;
      maybe_write_report(false);
    }

    // Input-representation comparison: continuous frames vs unit ids vs
    // unit ids with the centroid-initialized embedding.
    if (config.report.input_mode_study) {
      stage = "input_mode_study";
      t0 = now_seconds();
      int steps = config.report.input_mode_steps > 0 ? config.report.input_mode_steps
                                                     : config.train.max_steps;
      ModelConfig cont = config.model;
      cont.direction = Direction::unit_to_text;
      cont.input_mode = InputMode::continuous_frames;
      cont.input_dim = config.world.frame_dim;
      TrainLog cont_log;
      Parameters<float> cont_model = train_model(
          config, cont, data.vocab, encode_frame_examples(data.vocab, data.corpus.train),
          encode_frame_examples(data.vocab, data.corpus.dev), seeds.init_cont, seeds.train_cont,
          nullptr, false, &cont_log, steps);
      std::vector<TrainingExample> test_frames =
          encode_frame_examples(data.vocab, data.corpus.test);
      for (auto& ex : test_frames) ex.tgt_ids.clear();
      std::vector<GenResult> cont_gen = generate_batch(cont_model, test_frames,
                                                       config.eval_decode);
      std::vector<std::vector<std::string>> cont_hyps, cont_refs;
      for (size_t i = 0; i < cont_gen.size(); ++i) {
        cont_hyps.push_back(decode_text(data.vocab, cont_gen[i].ids));
        cont_refs.push_back(data.corpus.test[i].target_tokens);
      }
      double cont_bleu = corpus_bleu(cont_hyps, cont_refs).bleu;

      TrainLog scratch_log;
      Parameters<float> scratch =
          train_direction(config, data.vocab, data.codebook, baseline_stream, data.units.dev,
                          Direction::unit_to_text, seeds.init_u2tt, seeds.train_u2tt, false,
                          &scratch_log, steps);
      double scratch_bleu =
          evaluate_bleu(scratch, data.vocab, data.units.test, config.eval_decode).bleu.bleu;

      TrainLog pre_log;
      Parameters<float> pretrained =
          train_direction(config, data.vocab, data.codebook, baseline_stream, data.units.dev,
                          Direction::unit_to_text, seeds.init_u2tt, seeds.train_u2tt, true,
                          &pre_log, steps);
      double pre_bleu =
          evaluate_bleu(pretrained, data.vocab, data.units.test, config.eval_decode).bleu.bleu;

      report["input_mode_study"] = {
          {"steps", steps},
          {"continuous_frames_bleu", cont_bleu},
          {"unit_ids_bleu", scratch_bleu},
          {"unit_ids_pretrained_embedding_bleu", pre_bleu}};
      timings["input_mode_study"] = now_seconds() - t0;
    }

    maybe_write_report(true);
    return report;
  } catch (const std::exception& e) {
    report["failure"] = {{"stage", stage}, {"error", e.what()}};
    maybe_write_report(true);
    throw;
  }
}

std::string render_report_markdown(const nlohmann::json& report) {
  std::ostringstream md;
  md << "# Discrete unit back-translation report\n\n";
  md << "- seed: " << report.value("seed", uint64_t(0)) << "\n";
  md << "- config hash: " << report.value("config_hash", std::string("?")) << "\n";
  if (report.contains("failure")) {
    md << "\n**FAILED** at stage `" << report["failure"].value("stage", "?") << "`: "
       << report["failure"].value("error", "?") << "\n";
    return md.str();
  }
  double base = 0.0, dub = 0.0;
  if (report.contains("baseline")) base = report["baseline"].value("test_bleu", 0.0);
  if (report.contains("dub")) dub = report["dub"].value("test_bleu", 0.0);
  md << "- baseline test BLEU: " << base << "\n";
  if (report.contains("dub")) {
    md << "- DUB test BLEU: " << dub << " (delta " << (dub - base) << ", upsample rate "
       << report["dub"].value("upsample_rate", 0) << ")\n";
  }
  if (report.contains("bt")) {
    md << "- BT generation: " << report["bt"].value("method", std::string("?")) << ", "
       << report["bt"].value("generated", 0) << " synthetic pairs ("
       << report["bt"].value("dropped_empty", 0) << " empty dropped, "
       << report["bt"].value("truncated", 0) << " truncated)\n";
  }

  if (report.contains("uer_study")) {
    const auto& study = report["uer_study"];
    std::string trained = report.contains("bt") ? report["bt"].value("method", std::string(""))
                                                : std::string("");
    md << "\n## Pseudo-unit quality vs final gain\n\n";
    md << "| generation method | dev UER (%) | test BLEU | delta BLEU |\n";
    md << "|---|---|---|---|\n";
    auto row = [&](const char* key, const char* label, const std::string& method_name) {
      if (!study.contains(key)) return;
      md << "| " << label << " | " << study[key].value("uer", 0.0) << " | ";
      if (method_name == trained) {
        md << dub << " | " << (dub - base) << " |\n";
      } else {
        md << "- | - |\n";
      }
    };
    row("speaker_norm", "speaker-norm + sampling", "speaker_norm");
    row("beam_5", "beam-5", "beam");
    row("top_10", "top-10 sampling", "topk");
    row("sampling", "sampling", "sample");
  }

  if (report.contains("curve")) {
    md << "\n## BLEU vs amount of back-translated text\n\n";
    md << "| mono sentences | upsample r | test BLEU |\n|---|---|---|\n";
    for (const auto& point : report["curve"]) {
      md << "| " << point.value("amount", 0) << " | " << point.value("upsample_rate", 0) << " | "
         << point.value("test_bleu", 0.0) << " |\n";
    }
  }

  if (report.contains("input_mode_study")) {
    const auto& s = report["input_mode_study"];
    md << "\n## Input representation comparison\n\n";
    md << "| input | test BLEU |\n|---|---|\n";
    md << "| continuous frames | " << s.value("continuous_frames_bleu", 0.0) << " |\n";
    md << "| discrete units | " << s.value("unit_ids_bleu", 0.0) << " |\n";
    md << "| discrete units + pretrained embedding | "
       << s.value("unit_ids_pretrained_embedding_bleu", 0.0) << " |\n";
  }
  return md.str();
}

std::string render_curve_csv(const nlohmann::json& report) {
  std::ostringstream csv;
  csv << "amount,used_synthetic,upsample_rate,stream_length,test_bleu\n";
  if (report.contains("curve")) {
    for (const auto& point : report["curve"]) {
      csv << point.value("amount", 0) << "," << point.value("used_synthetic", 0) << ","
          << point.value("upsample_rate", 0) << "," << point.value("stream_length", int64_t(0))
          << "," << point.value("test_bleu", 0.0) << "\n";
    }
  }
  return csv.str();
}

nlohmann::json stable_report_view(nlohmann::json report) {
  report.erase("timings");
  return report;
}

}  // namespace dub
