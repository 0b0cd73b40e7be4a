// session.cc
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

#include "session.hh"

#include <algorithm>
#include <set>
#include <sstream>

#include "errors.hh"

namespace dub {

namespace {

std::vector<int> parse_units_field(const std::string& s) {
  std::vector<int> units;
  std::istringstream is(s);
  int v;
  while (is >> v) units.push_back(v);
  return units;
}

std::vector<Utterance> utterances_from_jsonl(const JsonlFile& file, int frame_dim) {
  std::vector<Utterance> out;
  for (const auto& r : file.records) {
    Utterance u;
    u.source_tokens = split_words(r.at("src").get<std::string>());
    u.target_tokens = split_words(r.at("tgt").get<std::string>());
    u.speaker_id = r.value("speaker", 0);
    if (r.contains("frames")) {
      std::vector<double> flat = r.at("frames").get<std::vector<double>>();
      if (flat.size() % frame_dim != 0) {
        throw ValidationError("corpus record: frame payload not divisible by frame_dim");
      }
      for (size_t i = 0; i < flat.size(); i += frame_dim) {
        u.frames.emplace_back(flat.begin() + i, flat.begin() + i + frame_dim);
      }
    }
    out.push_back(std::move(u));
  }
  return out;
}

std::vector<ParallelPair> unit_pairs_from_jsonl(const JsonlFile& file) {
  std::vector<ParallelPair> out;
  const bool normalized = file.meta.value("normalized", false);
  for (const auto& r : file.records) {
    ParallelPair p;
    p.units.units = parse_units_field(r.at("units").get<std::string>());
    p.units.speaker_id = r.value("speaker", -1);
    p.units.is_normalized = normalized;
    p.target = split_words(r.at("tgt").get<std::string>());
    p.origin = r.value("origin", "original") == std::string("synthetic")
                   ? ParallelPair::Origin::synthetic
                   : ParallelPair::Origin::original;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<nlohmann::json> unit_pairs_to_records(const std::vector<ParallelPair>& pairs) {
  std::vector<nlohmann::json> recs;
  for (const auto& p : pairs) {
    std::string units;
    for (size_t i = 0; i < p.units.units.size(); ++i) {
      if (i) units += ' ';
      units += std::to_string(p.units.units[i]);
    }
    recs.push_back({{"units", units},
                    {"tgt", join_words(p.target)},
                    {"speaker", p.units.speaker_id},
                    {"origin", p.origin == ParallelPair::Origin::original ? "original"
                                                                           : "synthetic"}});
  }
  return recs;
}

}  // namespace

Session::Session() : config_json_(config_to_json(default_config())) {}

Session::Session(const std::string& config_path)
    : config_json_(config_to_json(load_config_file(config_path))) {}

void Session::set_field(const std::string& key, const std::string& value) {
  nlohmann::json updated = config_json_;
  set_config_field(updated, key, value);
  // Schema problems (unknown field, wrong type) surface immediately;
  // cross-field range checks wait until the configuration is used.
  config_from_json(updated, /*validate_ranges=*/false);
  config_json_ = std::move(updated);
}

void Session::set_seed(uint64_t seed) { config_json_["seed"] = seed; }

ExperimentConfig Session::config() const { return config_from_json(config_json_); }

void Session::run_stage(const std::string& stage) {
  ExperimentConfig cfg = config();
  ThreadPool::instance().set_threads(cfg.threads);
  if (stage == "gen-world") {
    stage_gen_world(cfg);
  } else if (stage == "extract-units") {
    stage_extract_units(cfg);
  } else if (stage == "learn-vocab") {
    stage_learn_vocab(cfg);
  } else if (stage == "train-u2tt") {
    stage_train_u2tt(cfg);
  } else if (stage == "train-t2ut") {
    stage_train_t2ut(cfg);
  } else if (stage == "generate-bt") {
    stage_generate_bt(cfg);
  } else if (stage == "dub-run") {
    run_dub_experiment(cfg, /*write_artifacts=*/true);
  } else if (stage == "report") {
    stage_report(cfg);
  } else {
    throw ValidationError("unknown stage '" + stage + "'");
  }
}

void Session::stage_gen_world(const ExperimentConfig& cfg) {
  StageSeeds seeds = stage_seeds(cfg.seed);
  Provenance prov{config_hash(cfg, HashScope::world), cfg.seed};
  WorldSpec world = build_world(cfg.world, seeds.world);
  CorpusSplit corpus = sample_corpus(world, cfg.corpus, seeds.corpus);
  const std::string dir = cfg.out_dir;
  save_json_artifact(dir + "/world.json", prov, "world", world_to_json(world));
  auto utt_records = [&](const std::vector<Utterance>& utts) {
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
  save_jsonl(dir + "/corpus/train.jsonl", prov, "corpus", utt_records(corpus.train));
  save_jsonl(dir + "/corpus/dev.jsonl", prov, "corpus", utt_records(corpus.dev));
  save_jsonl(dir + "/corpus/test.jsonl", prov, "corpus", utt_records(corpus.test));
  std::vector<nlohmann::json> mono;
  for (const auto& m : corpus.mono) {
    mono.push_back({{"src", join_words(m.source_tokens)}, {"tgt", join_words(m.target_tokens)}});
  }
  save_jsonl(dir + "/corpus/mono.jsonl", prov, "corpus", mono);
}

void Session::stage_extract_units(const ExperimentConfig& cfg) {
  StageSeeds seeds = stage_seeds(cfg.seed);
  Provenance world_prov{config_hash(cfg, HashScope::world), cfg.seed};
  Provenance prov{config_hash(cfg, HashScope::units), cfg.seed};
  const std::string dir = cfg.out_dir;
  const int d = cfg.world.frame_dim;
  auto train =
      utterances_from_jsonl(load_jsonl(dir + "/corpus/train.jsonl", "corpus", &world_prov), d);
  auto dev =
      utterances_from_jsonl(load_jsonl(dir + "/corpus/dev.jsonl", "corpus", &world_prov), d);
  auto test =
      utterances_from_jsonl(load_jsonl(dir + "/corpus/test.jsonl", "corpus", &world_prov), d);

  const bool norm = cfg.mixture.use_speaker_norm;
  SpeakerStats stats;
  if (norm) {
    std::vector<std::pair<int, const FrameList*>> by_utt;
    for (const auto& u : train) by_utt.emplace_back(u.speaker_id, &u.frames);
    stats = estimate_speaker_stats(by_utt);
  }
  FrameList fit_frames;
  for (const auto& u : train) {
    FrameList normed;
    const FrameList* frames = &u.frames;
    if (norm) {
      normed = normalize_speaker(u.frames, stats, u.speaker_id);
      frames = &normed;
    }
    fit_frames.insert(fit_frames.end(), frames->begin(), frames->end());
  }
  Codebook cb = fit_kmeans(fit_frames, cfg.quantizer.clusters, cfg.quantizer.max_iters,
                           seeds.kmeans);
  save_json_artifact(dir + "/codebook.json", prov, "codebook", codebook_to_json(cb));

  nlohmann::json unit_meta = {{"normalized", norm}};
  int skipped = 0;
  auto dump = [&](const std::vector<Utterance>& utts, const std::string& name) {
    auto pairs = prepare_unit_corpus(cb, utts, norm, norm ? &stats : nullptr, &skipped);
    save_jsonl(dir + "/corpus/units_" + name + ".jsonl", prov, "units",
               unit_pairs_to_records(pairs), unit_meta);
  };
  dump(train, "train");
  dump(dev, "dev");
  dump(test, "test");
}

void Session::stage_learn_vocab(const ExperimentConfig& cfg) {
  Provenance units_prov{config_hash(cfg, HashScope::units), cfg.seed};
  Provenance prov{config_hash(cfg, HashScope::vocab), cfg.seed};
  const std::string dir = cfg.out_dir;
  auto pairs =
      unit_pairs_from_jsonl(load_jsonl(dir + "/corpus/units_train.jsonl", "units", &units_prov));
  std::vector<std::vector<std::string>> targets;
  for (const auto& p : pairs) targets.push_back(p.target);
  Vocabulary vocab = learn_vocab(targets, cfg.quantizer.clusters, cfg.vocab_target_size());
  save_json_artifact(dir + "/vocab.json", prov, "vocab", vocab_to_json(vocab));
}

void Session::stage_train_u2tt(const ExperimentConfig& cfg) {
  StageSeeds seeds = stage_seeds(cfg.seed);
  Provenance units_prov{config_hash(cfg, HashScope::units), cfg.seed};
  Provenance vocab_prov{config_hash(cfg, HashScope::vocab), cfg.seed};
  Provenance prov{config_hash(cfg, HashScope::model), cfg.seed};
  const std::string dir = cfg.out_dir;
  Vocabulary vocab =
      vocab_from_json(load_json_artifact(dir + "/vocab.json", "vocab", &vocab_prov));
  Codebook cb =
      codebook_from_json(load_json_artifact(dir + "/codebook.json", "codebook", &units_prov));
  auto train_pairs =
      unit_pairs_from_jsonl(load_jsonl(dir + "/corpus/units_train.jsonl", "units", &units_prov));
  auto dev_pairs =
      unit_pairs_from_jsonl(load_jsonl(dir + "/corpus/units_dev.jsonl", "units", &units_prov));

  if (cfg.model.input_mode == InputMode::continuous_frames) {
    Provenance world_prov{config_hash(cfg, HashScope::world), cfg.seed};
    const int d = cfg.world.frame_dim;
    auto train_utts =
        utterances_from_jsonl(load_jsonl(dir + "/corpus/train.jsonl", "corpus", &world_prov), d);
    auto dev_utts =
        utterances_from_jsonl(load_jsonl(dir + "/corpus/dev.jsonl", "corpus", &world_prov), d);
    ModelConfig mc = cfg.model;
    mc.direction = Direction::unit_to_text;
    mc.input_dim = d;
    std::vector<TrainingExample> train_data, dev_data;
    for (const auto& u : train_utts) {
      TrainingExample ex;
      ex.frames = u.frames;
      ex.tgt_ids = encode_text(vocab, u.target_tokens);
      train_data.push_back(std::move(ex));
    }
    for (const auto& u : dev_utts) {
      TrainingExample ex;
      ex.frames = u.frames;
      ex.tgt_ids = encode_text(vocab, u.target_tokens);
      dev_data.push_back(std::move(ex));
    }
    Parameters<float> model = train_model(cfg, mc, vocab, train_data, dev_data, seeds.init_cont,
                                          seeds.train_cont, nullptr, false, nullptr, 0);
    save_checkpoint(dir + "/ckpt/u2tt_baseline.bin", model, prov);
    return;
  }

  std::vector<ParallelPair> stream = build_mixture(train_pairs, {}, 1, seeds.mixture);
  Parameters<float> model = train_direction(
      cfg, vocab, cb, stream, dev_pairs, Direction::unit_to_text, seeds.init_u2tt,
      seeds.train_u2tt, cfg.model.use_pretrained_embedding, nullptr);
  save_checkpoint(dir + "/ckpt/u2tt_baseline.bin", model, prov);
}

void Session::stage_train_t2ut(const ExperimentConfig& cfg) {
  StageSeeds seeds = stage_seeds(cfg.seed);
  Provenance units_prov{config_hash(cfg, HashScope::units), cfg.seed};
  Provenance vocab_prov{config_hash(cfg, HashScope::vocab), cfg.seed};
  Provenance prov{config_hash(cfg, HashScope::model), cfg.seed};
  const std::string dir = cfg.out_dir;
  Vocabulary vocab =
      vocab_from_json(load_json_artifact(dir + "/vocab.json", "vocab", &vocab_prov));
  Codebook cb =
      codebook_from_json(load_json_artifact(dir + "/codebook.json", "codebook", &units_prov));
  auto train_pairs =
      unit_pairs_from_jsonl(load_jsonl(dir + "/corpus/units_train.jsonl", "units", &units_prov));
  auto dev_pairs =
      unit_pairs_from_jsonl(load_jsonl(dir + "/corpus/units_dev.jsonl", "units", &units_prov));
  Parameters<float> model =
      train_direction(cfg, vocab, cb, train_pairs, dev_pairs, Direction::text_to_unit,
                      seeds.init_t2ut, seeds.train_t2ut, false, nullptr,
                      cfg.train.t2ut_max_steps);
  save_checkpoint(dir + "/ckpt/t2ut.bin", model, prov);
}

void Session::stage_generate_bt(const ExperimentConfig& cfg) {
  StageSeeds seeds = stage_seeds(cfg.seed);
  Provenance world_prov{config_hash(cfg, HashScope::world), cfg.seed};
  Provenance units_prov{config_hash(cfg, HashScope::units), cfg.seed};
  Provenance vocab_prov{config_hash(cfg, HashScope::vocab), cfg.seed};
  Provenance model_prov{config_hash(cfg, HashScope::model), cfg.seed};
  Provenance prov{config_hash(cfg, HashScope::bt), cfg.seed};
  const std::string dir = cfg.out_dir;
  Vocabulary vocab =
      vocab_from_json(load_json_artifact(dir + "/vocab.json", "vocab", &vocab_prov));
  Parameters<float> t2ut =
      load_checkpoint(dir + "/ckpt/t2ut.bin", &model_prov, vocab_hash(vocab));
  auto train_pairs =
      unit_pairs_from_jsonl(load_jsonl(dir + "/corpus/units_train.jsonl", "units", &units_prov));
  JsonlFile mono_file = load_jsonl(dir + "/corpus/mono.jsonl", "corpus", &world_prov);

  std::set<std::string> train_targets;
  for (const auto& p : train_pairs) train_targets.insert(join_words(p.target));
  std::vector<std::vector<std::string>> mono_text;
  for (const auto& r : mono_file.records) {
    std::string tgt = r.at("tgt").get<std::string>();
    if (!train_targets.count(tgt)) mono_text.push_back(split_words(tgt));
  }
  int max_amount = 0;
  for (int a : cfg.mixture.bt_amounts) max_amount = std::max(max_amount, a);
  if (max_amount < static_cast<int>(mono_text.size())) mono_text.resize(max_amount);

  DecodeConfig decode = cfg.bt_decode;
  decode.seed = seeds.bt;
  BtStats stats;
  std::vector<ParallelPair> synthetic = generate_bt(t2ut, vocab, mono_text, decode, &stats);
  nlohmann::json meta = {{"method", decode_method_name(decode.method)},
                         {"k", decode.k},
                         {"beam_size", decode.beam_size},
                         {"requested", stats.requested},
                         {"generated", stats.generated},
                         {"dropped_empty", stats.dropped_empty},
                         {"truncated", stats.truncated}};
  save_jsonl(dir + "/corpus/bt.jsonl", prov, "bt_units", unit_pairs_to_records(synthetic), meta);
}

void Session::stage_report(const ExperimentConfig& cfg) {
  const std::string dir = cfg.out_dir;
  nlohmann::json report = load_json_artifact(dir + "/report.json", "report", nullptr);
  write_file_atomic(dir + "/report.md", render_report_markdown(report));
  write_file_atomic(dir + "/curve.csv", render_curve_csv(report));
}

double Session::evaluate_files(const std::string& hyp_path, const std::string& ref_path,
                               const std::string& metric) {
  std::istringstream hyp_in(read_file(hyp_path));
  std::istringstream ref_in(read_file(ref_path));
  std::vector<std::string> hyp_lines, ref_lines;
  std::string line;
  while (std::getline(hyp_in, line)) hyp_lines.push_back(line);
  while (std::getline(ref_in, line)) ref_lines.push_back(line);
  while (!hyp_lines.empty() && hyp_lines.back().empty()) hyp_lines.pop_back();
  while (!ref_lines.empty() && ref_lines.back().empty()) ref_lines.pop_back();
  if (hyp_lines.size() != ref_lines.size()) {
    throw ValidationError("evaluate: hypothesis and reference line counts differ");
  }
  if (metric == "bleu") {
    std::vector<std::vector<std::string>> hyps, refs;
    for (const auto& l : hyp_lines) hyps.push_back(split_words(l));
    for (const auto& l : ref_lines) refs.push_back(split_words(l));
    return corpus_bleu(hyps, refs).bleu;
  }
  if (metric == "uer") {
    std::vector<std::vector<int>> hyps, refs;
    for (const auto& l : hyp_lines) hyps.push_back(parse_units_field(l));
    for (const auto& l : ref_lines) refs.push_back(parse_units_field(l));
    return corpus_uer(hyps, refs);
  }
  throw ValidationError("evaluate: unknown metric '" + metric + "' (expected bleu or uer)");
}

}  // namespace dub
