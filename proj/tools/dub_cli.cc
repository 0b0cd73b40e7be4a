// dub_cli.cc
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
// Command line front end. Links only the C API; every subcommand maps to
// one pipeline stage plus config overrides.

#include <cstdint>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dub.h"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;  // key=value
  uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonOpts* opts) {
  cmd->add_option("--config", opts->config_path, "Experiment config (.toml or .json)");
  cmd->add_option("--out-dir", opts->out_dir, "Output directory (overrides config)");
  cmd->add_option("--set", opts->overrides, "Config override key=value (repeatable)");
  cmd->add_option("--threads", opts->threads, "Worker threads (overrides config)");
  cmd->add_option("--seed", opts->seed, "Root seed (overrides everything)")
      ->each([opts](const std::string&) { opts->seed_set = true; });
}

int fail(dub_pipeline* p, const char* what) {
  const char* msg = p ? dub_pipeline_last_error(p) : dub_last_error();
  std::fprintf(stderr, "error: %s: %s\n", what, msg && *msg ? msg : "unknown failure");
  return 0;  // caller uses the status code
}

int run_stage(const CommonOpts& opts, const std::string& stage,
              const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  dub_pipeline* p = nullptr;
  dub_status st =
      dub_pipeline_open(opts.config_path.empty() ? nullptr : opts.config_path.c_str(), &p);
  if (st != DUB_OK) {
    fail(nullptr, "open config");
    return st;
  }
  auto set = [&](const std::string& key, const std::string& value) -> dub_status {
    dub_status s = dub_pipeline_set(p, key.c_str(), value.c_str());
    if (s != DUB_OK) fail(p, ("set " + key).c_str());
    return s;
  };
  for (const auto& kv : opts.overrides) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
      dub_pipeline_close(p);
      return DUB_ERR_VALIDATION;
    }
    if ((st = set(kv.substr(0, eq), kv.substr(eq + 1))) != DUB_OK) break;
  }
  if (st == DUB_OK && !opts.out_dir.empty()) st = set("out_dir", "\"" + opts.out_dir + "\"");
  if (st == DUB_OK && opts.threads > 0) st = set("threads", std::to_string(opts.threads));
  for (const auto& [key, value] : extra) {
    if (st != DUB_OK) break;
    st = set(key, value);
  }
  if (st == DUB_OK && opts.seed_set) st = dub_pipeline_set_seed(p, opts.seed);
  if (st == DUB_OK) {
    st = dub_pipeline_run(p, stage.c_str());
    if (st != DUB_OK) fail(p, stage.c_str());
  }
  dub_pipeline_close(p);
  return st;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete unit back-translation pipeline"};
  app.require_subcommand(1);

  CommonOpts opts;

  auto* gen_world = app.add_subcommand("gen-world", "Build the synthetic world and corpus");
  add_common(gen_world, &opts);

  auto* extract = app.add_subcommand("extract-units",
                                     "Fit the k-means codebook and extract unit corpora");
  add_common(extract, &opts);

  auto* learn_vocab = app.add_subcommand("learn-vocab", "Learn the joint subword vocabulary");
  add_common(learn_vocab, &opts);

  auto* train_u2tt = app.add_subcommand("train-u2tt", "Train the unit-to-text model");
  add_common(train_u2tt, &opts);
  bool pretrained = false;
  std::string input_mode;
  train_u2tt->add_flag("--use-pretrained-embedding", pretrained,
                       "Initialize unit embeddings from cluster centroids");
  train_u2tt->add_option("--input-mode", input_mode,
                         "unit_ids or continuous_frames (default unit_ids)");

  auto* train_t2ut = app.add_subcommand("train-t2ut", "Train the text-to-unit model");
  add_common(train_t2ut, &opts);

  auto* generate_bt =
      app.add_subcommand("generate-bt", "Back-translate monolingual text into pseudo-units");
  add_common(generate_bt, &opts);
  std::string method;
  int topk = 0, beam = 0;
  generate_bt->add_option("--method", method, "greedy | beam | sample | topk");
  generate_bt->add_option("--k", topk, "Top-k cutoff for method=topk");
  generate_bt->add_option("--beam", beam, "Beam size for method=beam");

  auto* dub_run = app.add_subcommand("dub-run", "Run the full experiment and write the report");
  add_common(dub_run, &opts);

  auto* evaluate = app.add_subcommand("evaluate", "Score a hypothesis file against a reference");
  std::string hyp, ref, metric = "bleu";
  evaluate->add_option("--hyp", hyp, "Hypothesis file, one sentence per line")->required();
  evaluate->add_option("--ref", ref, "Reference file, one sentence per line")->required();
  evaluate->add_option("--metric", metric, "bleu (default) or uer");

  auto* report = app.add_subcommand("report", "Re-render report.md and curve.csv");
  add_common(report, &opts);

  CLI11_PARSE(app, argc, argv);

  if (gen_world->parsed()) return run_stage(opts, "gen-world");
  if (extract->parsed()) return run_stage(opts, "extract-units");
  if (learn_vocab->parsed()) return run_stage(opts, "learn-vocab");
  if (train_u2tt->parsed()) {
    std::vector<std::pair<std::string, std::string>> extra;
    if (pretrained) extra.emplace_back("model.use_pretrained_embedding", "true");
    if (!input_mode.empty()) extra.emplace_back("model.input_mode", "\"" + input_mode + "\"");
    return run_stage(opts, "train-u2tt", extra);
  }
  if (train_t2ut->parsed()) return run_stage(opts, "train-t2ut");
  if (generate_bt->parsed()) {
    std::vector<std::pair<std::string, std::string>> extra;
    if (!method.empty()) extra.emplace_back("bt_decode.method", "\"" + method + "\"");
    if (topk > 0) extra.emplace_back("bt_decode.k", std::to_string(topk));
    if (beam > 0) extra.emplace_back("bt_decode.beam_size", std::to_string(beam));
    return run_stage(opts, "generate-bt", extra);
  }
  if (dub_run->parsed()) return run_stage(opts, "dub-run");
  if (evaluate->parsed()) {
    double value = 0.0;
    dub_status st = dub_evaluate_files(hyp.c_str(), ref.c_str(), metric.c_str(), &value);
    if (st != DUB_OK) {
      const char* msg = dub_last_error();
      std::fprintf(stderr, "error: evaluate: %s\n", msg && *msg ? msg : "unknown failure");
      return st;
    }
    std::string name = metric;
    for (auto& c : name) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    std::printf("%s = %.4f\n", name.c_str(), value);
    return 0;
  }
  if (report->parsed()) {
    int st = run_stage(opts, "report");
    return st;
  }
  return DUB_ERR_VALIDATION;
}
