// capi.cc
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

#include "dub.h"

#include <string>

#include "errors.hh"
#include "session.hh"

struct dub_pipeline {
  dub::Session session;
  std::string last_error;

  explicit dub_pipeline(dub::Session s) : session(std::move(s)) {}
};

namespace {

thread_local std::string g_last_error;

dub_status classify(const std::exception& e, std::string* message) {
  *message = e.what();
  g_last_error = e.what();
  if (dynamic_cast<const dub::ValidationError*>(&e)) return DUB_ERR_VALIDATION;
  if (dynamic_cast<const dub::IoError*>(&e)) return DUB_ERR_IO;
  return DUB_ERR_NUMERIC;
}

template <typename Fn>
dub_status guarded(dub_pipeline* p, Fn&& fn) {
  if (!p) return DUB_ERR_VALIDATION;
  p->last_error.clear();
  try {
    fn();
    return DUB_OK;
  } catch (const std::exception& e) {
    return classify(e, &p->last_error);
  }
}

}  // namespace

extern "C" {

const char* dub_version(void) { return "0.1.0"; }

dub_status dub_pipeline_open(const char* config_path, dub_pipeline** out) {
  if (!out) return DUB_ERR_VALIDATION;
  *out = nullptr;
  try {
    dub::Session session = config_path ? dub::Session(std::string(config_path)) : dub::Session();
    *out = new dub_pipeline(std::move(session));
    return DUB_OK;
  } catch (const std::exception& e) {
    std::string message;
    return classify(e, &message);
  }
}

void dub_pipeline_close(dub_pipeline* p) { delete p; }

const char* dub_pipeline_last_error(const dub_pipeline* p) {
  return p ? p->last_error.c_str() : "null pipeline handle";
}

const char* dub_last_error(void) { return g_last_error.c_str(); }

dub_status dub_pipeline_set(dub_pipeline* p, const char* key, const char* value) {
  return guarded(p, [&] {
    if (!key || !value) throw dub::ValidationError("set: key and value must be non-null");
    p->session.set_field(key, value);
  });
}

dub_status dub_pipeline_set_seed(dub_pipeline* p, uint64_t seed) {
  return guarded(p, [&] { p->session.set_seed(seed); });
}

dub_status dub_pipeline_run(dub_pipeline* p, const char* stage) {
  return guarded(p, [&] {
    if (!stage) throw dub::ValidationError("run: stage must be non-null");
    p->session.run_stage(stage);
  });
}

dub_status dub_evaluate_files(const char* hyp_path, const char* ref_path, const char* metric,
                              double* out_value) {
  if (!hyp_path || !ref_path || !metric || !out_value) return DUB_ERR_VALIDATION;
  try {
    *out_value = dub::Session::evaluate_files(hyp_path, ref_path, metric);
    return DUB_OK;
  } catch (const std::exception& e) {
    std::string message;
    return classify(e, &message);
  }
}

}  // extern "C"
