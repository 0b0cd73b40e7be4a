// config.cc
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

#include "config.hh"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "errors.hh"

namespace dub {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Strip a trailing comment that is not inside a string literal.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

nlohmann::json parse_scalar(const std::string& raw, int lineno) {
  std::string v = trim(raw);
  if (v.empty()) throw ValidationError("config line " + std::to_string(lineno) + ": empty value");
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') {
      throw ValidationError("config line " + std::to_string(lineno) + ": unterminated string");
    }
    return v.substr(1, v.size() - 2);
  }
  if (v == "true") return true;
  if (v == "false") return false;
  bool looks_float = v.find_first_of(".eE") != std::string::npos;
  try {
    size_t pos = 0;
    if (looks_float) {
      double d = std::stod(v, &pos);
      if (pos == v.size()) return d;
    } else {
      long long i = std::stoll(v, &pos);
      if (pos == v.size()) return i;
    }
  } catch (const std::exception&) {
  }
  throw ValidationError("config line " + std::to_string(lineno) + ": cannot parse value '" + v +
                        "'");
}

nlohmann::json parse_value(const std::string& raw, int lineno) {
  std::string v = trim(raw);
  if (!v.empty() && v.front() == '[') {
    if (v.back() != ']') {
      throw ValidationError("config line " + std::to_string(lineno) + ": unterminated array");
    }
    nlohmann::json arr = nlohmann::json::array();
    std::string body = v.substr(1, v.size() - 2);
    std::string item;
    bool in_string = false;
    for (char c : body) {
      if (c == '"') in_string = !in_string;
      if (c == ',' && !in_string) {
        if (!trim(item).empty()) arr.push_back(parse_scalar(item, lineno));
        item.clear();
      } else {
        item += c;
      }
    }
    if (!trim(item).empty()) arr.push_back(parse_scalar(item, lineno));
    return arr;
  }
  return parse_scalar(v, lineno);
}

// --- typed field readers with unknown-key rejection -----------------------

class Section {
 public:
  Section(const nlohmann::json& j, std::string name) : name_(std::move(name)) {
    if (!j.is_object()) throw ValidationError("config: section '" + name_ + "' must be a table");
    j_ = &j;
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    auto it = j_->find(key);
    if (it == j_->end()) return;
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("config: field '" + name_ + "." + key + "' has the wrong type");
    }
  }

  void get_method(const char* key, DecodeMethod& out) {
    seen_.push_back(key);
    auto it = j_->find(key);
    if (it == j_->end()) return;
    out = decode_method_from_name(it->get<std::string>());
  }

  void finish() {
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        throw ValidationError("config: unknown field '" + name_ + "." + it.key() + "'");
      }
    }
  }

 private:
  const nlohmann::json* j_;
  std::string name_;
  std::vector<std::string> seen_;
};

void read_decode(const nlohmann::json& j, const std::string& name, DecodeConfig& out) {
  Section s(j, name);
  s.get_method("method", out.method);
  s.get("beam_size", out.beam_size);
  s.get("k", out.k);
  s.get("max_len", out.max_len);
  s.finish();
}

nlohmann::json decode_to_json(const DecodeConfig& d) {
  return {{"method", decode_method_name(d.method)},
          {"beam_size", d.beam_size},
          {"k", d.k},
          {"max_len", d.max_len}};
}

}  // namespace

nlohmann::json parse_toml(const std::string& text) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* current = &root;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') {
        throw ValidationError("config line " + std::to_string(lineno) + ": bad section header");
      }
      std::string name = trim(s.substr(1, s.size() - 2));
      if (name.empty()) {
        throw ValidationError("config line " + std::to_string(lineno) + ": empty section name");
      }
      current = &root[name];
      if (current->is_null()) *current = nlohmann::json::object();
      continue;
    }
    size_t eq = std::string::npos;
    bool in_string = false;
    for (size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') in_string = !in_string;
      if (s[i] == '=' && !in_string) {
        eq = i;
        break;
      }
    }
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(s.substr(0, eq));
    if (key.empty()) {
      throw ValidationError("config line " + std::to_string(lineno) + ": empty key");
    }
    (*current)[key] = parse_value(s.substr(eq + 1), lineno);
  }
  return root;
}

void ExperimentConfig::validate() const {
  ModelConfig mc = model;
  mc.vocab_size = vocab_target_size();  // filled from the learned table at runtime
  mc.validate();
  train.validate();
  bt_decode.validate(std::max(2, vocab_target_size()));
  eval_decode.validate(std::max(2, vocab_target_size()));
  if (train.t2ut_max_steps < 0) {
    throw ValidationError("config: train.t2ut_max_steps must be >= 0");
  }
  if (quantizer.clusters < 1) throw ValidationError("config: quantizer.clusters must be >= 1");
  if (quantizer.max_iters < 1) throw ValidationError("config: quantizer.max_iters must be >= 1");
  if (vocab.text_entries < 0) throw ValidationError("config: vocab.text_entries must be >= 0");
  if (mixture.upsample_rate < 0) throw ValidationError("config: mixture.upsample_rate must be >= 0");
  if (mixture.upsample_cap < 1) throw ValidationError("config: mixture.upsample_cap must be >= 1");
  for (int a : mixture.bt_amounts) {
    if (a < 0 || a > corpus.mono) {
      throw ValidationError("config: mixture.bt_amounts entries must be in [0, corpus.mono]");
    }
  }
  if (threads < 1) throw ValidationError("config: threads must be >= 1");
  if (corpus.train < 1) throw ValidationError("config: corpus.train must be >= 1");
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["threads"] = c.threads;
  j["world"] = {{"phonemes", c.world.phonemes},
                {"frame_dim", c.world.frame_dim},
                {"lexicon_words", c.world.lexicon_words},
                {"duration_lo", c.world.duration_lo},
                {"duration_hi", c.world.duration_hi},
                {"noise_sigma", c.world.noise_sigma},
                {"speakers", c.world.speakers},
                {"speaker_offset_norm", c.world.speaker_offset_norm},
                {"target_tokens", c.world.target_tokens},
                {"sentence_len_lo", c.world.sentence_len_lo},
                {"sentence_len_hi", c.world.sentence_len_hi}};
  j["corpus"] = {{"train", c.corpus.train},
                 {"dev", c.corpus.dev},
                 {"test", c.corpus.test},
                 {"mono", c.corpus.mono}};
  j["quantizer"] = {{"clusters", c.quantizer.clusters}, {"max_iters", c.quantizer.max_iters}};
  j["vocab"] = {{"text_entries", c.vocab.text_entries}};
  j["model"] = {{"layers_enc", c.model.layers_enc},
                {"layers_dec", c.model.layers_dec},
                {"hidden", c.model.hidden},
                {"heads", c.model.heads},
                {"ffn", c.model.ffn},
                {"dropout", c.model.dropout},
                {"label_smoothing", c.model.label_smoothing},
                {"max_len", c.model.max_len},
                {"use_pretrained_embedding", c.model.use_pretrained_embedding},
                {"input_mode",
                 c.model.input_mode == InputMode::unit_ids ? "unit_ids" : "continuous_frames"}};
  j["train"] = {{"peak_lr", c.train.peak_lr},
                {"warmup_steps", c.train.warmup_steps},
                {"adam_beta1", c.train.adam_beta1},
                {"adam_beta2", c.train.adam_beta2},
                {"batch_tokens", c.train.batch_tokens},
                {"max_steps", c.train.max_steps},
                {"t2ut_max_steps", c.train.t2ut_max_steps},
                {"checkpoint_avg_n", c.train.checkpoint_avg_n},
                {"eval_interval", c.train.eval_interval}};
  j["mixture"] = {{"upsample_rate", c.mixture.upsample_rate},
                  {"upsample_cap", c.mixture.upsample_cap},
                  {"bt_amounts", c.mixture.bt_amounts},
                  {"use_speaker_norm", c.mixture.use_speaker_norm}};
  j["bt_decode"] = decode_to_json(c.bt_decode);
  j["eval_decode"] = decode_to_json(c.eval_decode);
  j["report"] = {{"uer_study", c.report.uer_study},
                 {"input_mode_study", c.report.input_mode_study},
                 {"input_mode_steps", c.report.input_mode_steps}};
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j, bool validate_ranges) {
  ExperimentConfig c = default_config();
  if (!j.is_object()) throw ValidationError("config: root must be a table");
  static const char* kSections[] = {"seed",  "out_dir",   "threads", "world",
                                    "corpus", "quantizer", "vocab",   "model",
                                    "train", "mixture",   "bt_decode", "eval_decode", "report"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* s : kSections) known = known || it.key() == s;
    if (!known) throw ValidationError("config: unknown field '" + it.key() + "'");
  }
  if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("threads")) c.threads = j.at("threads").get<int>();
  if (j.contains("world")) {
    Section s(j["world"], "world");
    s.get("phonemes", c.world.phonemes);
    s.get("frame_dim", c.world.frame_dim);
    s.get("lexicon_words", c.world.lexicon_words);
    s.get("duration_lo", c.world.duration_lo);
    s.get("duration_hi", c.world.duration_hi);
    s.get("noise_sigma", c.world.noise_sigma);
    s.get("speakers", c.world.speakers);
    s.get("speaker_offset_norm", c.world.speaker_offset_norm);
    s.get("target_tokens", c.world.target_tokens);
    s.get("sentence_len_lo", c.world.sentence_len_lo);
    s.get("sentence_len_hi", c.world.sentence_len_hi);
    s.finish();
  }
  if (j.contains("corpus")) {
    Section s(j["corpus"], "corpus");
    s.get("train", c.corpus.train);
    s.get("dev", c.corpus.dev);
    s.get("test", c.corpus.test);
    s.get("mono", c.corpus.mono);
    s.finish();
  }
  if (j.contains("quantizer")) {
    Section s(j["quantizer"], "quantizer");
    s.get("clusters", c.quantizer.clusters);
    s.get("max_iters", c.quantizer.max_iters);
    s.finish();
  }
  if (j.contains("vocab")) {
    Section s(j["vocab"], "vocab");
    s.get("text_entries", c.vocab.text_entries);
    s.finish();
  }
  if (j.contains("model")) {
    Section s(j["model"], "model");
    s.get("layers_enc", c.model.layers_enc);
    s.get("layers_dec", c.model.layers_dec);
    s.get("hidden", c.model.hidden);
    s.get("heads", c.model.heads);
    s.get("ffn", c.model.ffn);
    s.get("dropout", c.model.dropout);
    s.get("label_smoothing", c.model.label_smoothing);
    s.get("max_len", c.model.max_len);
    s.get("use_pretrained_embedding", c.model.use_pretrained_embedding);
    std::string mode = "unit_ids";
    s.get("input_mode", mode);
    if (mode == "unit_ids") {
      c.model.input_mode = InputMode::unit_ids;
    } else if (mode == "continuous_frames") {
      c.model.input_mode = InputMode::continuous_frames;
    } else {
      throw ValidationError("config: model.input_mode must be unit_ids or continuous_frames");
    }
    s.finish();
  }
  c.model.input_dim = c.world.frame_dim;
  if (j.contains("train")) {
    Section s(j["train"], "train");
    s.get("peak_lr", c.train.peak_lr);
    s.get("warmup_steps", c.train.warmup_steps);
    s.get("adam_beta1", c.train.adam_beta1);
    s.get("adam_beta2", c.train.adam_beta2);
    s.get("batch_tokens", c.train.batch_tokens);
    s.get("max_steps", c.train.max_steps);
    s.get("t2ut_max_steps", c.train.t2ut_max_steps);
    s.get("checkpoint_avg_n", c.train.checkpoint_avg_n);
    s.get("eval_interval", c.train.eval_interval);
    s.finish();
  }
  if (j.contains("mixture")) {
    Section s(j["mixture"], "mixture");
    s.get("upsample_rate", c.mixture.upsample_rate);
    s.get("upsample_cap", c.mixture.upsample_cap);
    s.get("bt_amounts", c.mixture.bt_amounts);
    s.get("use_speaker_norm", c.mixture.use_speaker_norm);
    s.finish();
  }
  if (j.contains("bt_decode")) read_decode(j["bt_decode"], "bt_decode", c.bt_decode);
  if (j.contains("eval_decode")) read_decode(j["eval_decode"], "eval_decode", c.eval_decode);
  if (j.contains("report")) {
    Section s(j["report"], "report");
    s.get("uer_study", c.report.uer_study);
    s.get("input_mode_study", c.report.input_mode_study);
    s.get("input_mode_steps", c.report.input_mode_steps);
    s.finish();
  }
  if (validate_ranges) c.validate();
  return c;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::string text = read_file(path);
  nlohmann::json j;
  if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0) {
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ": invalid JSON: " + e.what());
    }
  } else {
    j = parse_toml(text);
  }
  return config_from_json(j);
}

void set_config_field(nlohmann::json& config_json, const std::string& key,
                      const std::string& value) {
  nlohmann::json* node = &config_json;
  size_t begin = 0;
  for (;;) {
    size_t dot = key.find('.', begin);
    std::string part = key.substr(begin, dot == std::string::npos ? dot : dot - begin);
    if (part.empty()) throw ValidationError("override: empty key segment in '" + key + "'");
    if (dot == std::string::npos) {
      nlohmann::json parsed;
      try {
        parsed = nlohmann::json::parse(value);
      } catch (const nlohmann::json::exception&) {
        parsed = value;  // bare string
      }
      (*node)[part] = parsed;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    begin = dot + 1;
  }
}

std::string config_hash(const ExperimentConfig& config, HashScope scope) {
  nlohmann::json full = config_to_json(config);
  nlohmann::json j;
  j["world"] = full["world"];
  j["corpus"] = full["corpus"];
  if (scope >= HashScope::units) {
    j["quantizer"] = full["quantizer"];
    j["use_speaker_norm"] = full["mixture"]["use_speaker_norm"];
  }
  if (scope >= HashScope::vocab) j["vocab"] = full["vocab"];
  if (scope >= HashScope::model) {
    j["model"] = full["model"];
    j["train"] = full["train"];
  }
  if (scope >= HashScope::bt) {
    j["bt_decode"] = full["bt_decode"];
    j["mixture"] = full["mixture"];
  }
  if (scope >= HashScope::full) {
    j["eval_decode"] = full["eval_decode"];
    j["report"] = full["report"];
  }
  return hash_hex(fnv1a64_bytes(j.dump()));
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.bt_decode.method = DecodeMethod::sample;
  c.bt_decode.k = 10;
  c.bt_decode.beam_size = 5;
  c.eval_decode.method = DecodeMethod::beam;
  c.eval_decode.beam_size = 5;
  return c;
}

}  // namespace dub
