// session.hh
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

#include "pipeline.hh"

namespace dub {

// One configured pipeline run. Stages read their declared input artifacts
// from the output directory, verify provenance, and write their outputs
// atomically; dub-run executes everything in memory end to end.
class Session {
 public:
  Session();
  explicit Session(const std::string& config_path);

  void set_field(const std::string& key, const std::string& value);
  void set_seed(uint64_t seed);

  ExperimentConfig config() const;  // validates

  void run_stage(const std::string& stage);

  static double evaluate_files(const std::string& hyp_path, const std::string& ref_path,
                               const std::string& metric);

 private:
  void stage_gen_world(const ExperimentConfig& config);
  void stage_extract_units(const ExperimentConfig& config);
  void stage_learn_vocab(const ExperimentConfig& config);
  void stage_train_u2tt(const ExperimentConfig& config);
  void stage_train_t2ut(const ExperimentConfig& config);
  void stage_generate_bt(const ExperimentConfig& config);
  void stage_report(const ExperimentConfig& config);

  nlohmann::json config_json_;
};

}  // namespace dub
