// test_model.cc
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

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "errors.hh"
#include "model.hh"
#include "model_io.hh"
#include "train.hh"

using namespace dub;

namespace {

ModelConfig tiny_config(int vocab = 7) {
  ModelConfig mc;
  mc.layers_enc = 1;
  mc.layers_dec = 1;
  mc.hidden = 4;
  mc.heads = 2;
  mc.ffn = 4;
  mc.dropout = 0.0;
  mc.label_smoothing = 0.1;
  mc.max_len = 16;
  mc.vocab_size = vocab;
  return mc;
}

std::vector<TrainingExample> tiny_dataset(uint64_t seed, int vocab, int n) {
  Rng rng(seed);
  std::vector<TrainingExample> data(n);
  for (auto& ex : data) {
    int src_len = static_cast<int>(rng.uniform_int(1, 4));
    int tgt_len = static_cast<int>(rng.uniform_int(1, 3));
    ex.src_ids.push_back(Vocabulary::kBos);
    for (int i = 0; i < src_len; ++i) {
      ex.src_ids.push_back(static_cast<int>(rng.uniform_int(Vocabulary::kNumSpecials, vocab - 1)));
    }
    ex.src_ids.push_back(Vocabulary::kEos);
    for (int i = 0; i < tgt_len; ++i) {
      ex.tgt_ids.push_back(static_cast<int>(rng.uniform_int(Vocabulary::kNumSpecials, vocab - 1)));
    }
  }
  return data;
}

ModelBatch batch_of(const std::vector<TrainingExample>& data, InputMode mode) {
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < data.size(); ++i) order[i] = i;
  return pack_batch(data, order.begin(), order.end(), mode);
}

// Central finite differences over every coordinate.
double max_gradient_rel_error(Parameters<double>& params, const ModelBatch& batch) {
  Rng rng(0);
  ForwardTape<double> tape = forward_loss(params, batch, false, rng);
  Parameters<double> grad = make_gradients(params);
  backward(params, tape, grad);

  std::vector<Mat<double>*> ps, gs;
  visit_params(params, [&](const std::string&, Mat<double>& m) { ps.push_back(&m); });
  visit_params(grad, [&](const std::string&, Mat<double>& m) { gs.push_back(&m); });
  const double step = 1e-4;
  double worst = 0.0;
  for (size_t t = 0; t < ps.size(); ++t) {
    for (int64_t j = 0; j < ps[t]->size(); ++j) {
      double orig = ps[t]->data[j];
      ps[t]->data[j] = orig + step;
      double lp = forward_loss(params, batch, false, rng).loss;
      ps[t]->data[j] = orig - step;
      double lm = forward_loss(params, batch, false, rng).loss;
      ps[t]->data[j] = orig;
      double fd = (lp - lm) / (2.0 * step);
      double an = gs[t]->data[j];
      if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) continue;
      worst = std::max(worst, std::abs(fd - an) / std::max({1e-8, std::abs(fd), std::abs(an)}));
    }
  }
  return worst;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("tiny models stay under 500 parameters and pass the gradient check") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    auto params = init_model<double>(tiny_config(), seed);
    REQUIRE(count_params(params) <= 500);
    auto data = tiny_dataset(seed * 13 + 1, 7, 2);
    ModelBatch batch = batch_of(data, InputMode::unit_ids);
    CHECK(max_gradient_rel_error(params, batch) < 1e-3);
  }
}

TEST_CASE("continuous-frame input passes the gradient check too") {
  ModelConfig mc = tiny_config();
  mc.input_mode = InputMode::continuous_frames;
  mc.input_dim = 3;
  auto params = init_model<double>(mc, 5);
  std::vector<TrainingExample> data(2);
  Rng rng(3);
  for (auto& ex : data) {
    int frames = static_cast<int>(rng.uniform_int(2, 4));
    for (int f = 0; f < frames; ++f) {
      std::vector<double> frame(3);
      for (double& v : frame) v = rng.gaussian();
      ex.frames.push_back(frame);
    }
    ex.tgt_ids = {5, 6};
  }
  ModelBatch batch = batch_of(data, InputMode::continuous_frames);
  CHECK(max_gradient_rel_error(params, batch) < 1e-3);
}

TEST_CASE("uniform logits give loss ln V for any smoothing") {
  for (double eps : {0.0, 0.1, 0.4}) {
    ModelConfig mc = tiny_config(11);
    mc.label_smoothing = eps;
    auto params = init_model<double>(mc, 2);
    // zero everything reachable: uniform logits regardless of input
    visit_params(params, [](const std::string&, Mat<double>& m) { m.fill(0.0); });
    auto data = tiny_dataset(4, 11, 3);
    ModelBatch batch = batch_of(data, InputMode::unit_ids);
    Rng rng(0);
    ForwardTape<double> tape = forward_loss(params, batch, false, rng);
    CHECK(tape.loss == doctest::Approx(std::log(11.0)).epsilon(1e-9));
  }
}

TEST_CASE("forcing the reference logit drives unsmoothed loss to zero") {
  ModelConfig mc = tiny_config(6);
  mc.label_smoothing = 0.0;
  auto params = init_model<double>(mc, 3);
  // All weights zero: every position's logits reduce to the shared output
  // bias. An empty target makes EOS the only reference, so a one-hot bias
  // on EOS forces the reference probability to 1.
  visit_params(params, [](const std::string&, Mat<double>& m) { m.fill(0.0); });
  params.out_b.fill(-1e4);
  params.out_b.at(0, Vocabulary::kEos) = 1e4;
  std::vector<TrainingExample> data(1);
  data[0].src_ids = {Vocabulary::kBos, 5, Vocabulary::kEos};
  ModelBatch batch = batch_of(data, InputMode::unit_ids);
  Rng rng(0);
  ForwardTape<double> tape = forward_loss(params, batch, false, rng);
  CHECK(tape.loss == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("all-PAD target batch yields zero loss and zero gradients") {
  auto params = init_model<double>(tiny_config(), 7);
  std::vector<TrainingExample> data(2);
  data[0].src_ids = {Vocabulary::kBos, 5, Vocabulary::kEos};
  data[1].src_ids = {Vocabulary::kBos, 6, Vocabulary::kEos};
  ModelBatch batch = batch_of(data, InputMode::unit_ids);
  std::fill(batch.tgt_mask.begin(), batch.tgt_mask.end(), 0);
  Rng rng(0);
  ForwardTape<double> tape = forward_loss(params, batch, false, rng);
  CHECK(tape.loss == 0.0);
  Parameters<double> grad = make_gradients(params);
  backward(params, tape, grad);
  visit_params(grad, [](const std::string&, Mat<double>& m) {
    for (double v : m.data) CHECK(v == 0.0);
  });
}

TEST_CASE("duplicating the single example leaves the averaged gradient unchanged") {
  auto params = init_model<double>(tiny_config(), 9);
  auto one = tiny_dataset(11, 7, 1);
  auto two = one;
  two.push_back(one[0]);
  Rng rng(0);
  ModelBatch b1 = batch_of(one, InputMode::unit_ids);
  ModelBatch b2 = batch_of(two, InputMode::unit_ids);
  ForwardTape<double> t1 = forward_loss(params, b1, false, rng);
  ForwardTape<double> t2 = forward_loss(params, b2, false, rng);
  CHECK(t1.loss == doctest::Approx(t2.loss).epsilon(1e-12));
  Parameters<double> g1 = make_gradients(params);
  Parameters<double> g2 = make_gradients(params);
  backward(params, t1, g1);
  backward(params, t2, g2);
  std::vector<Mat<double>*> v1, v2;
  visit_params(g1, [&](const std::string&, Mat<double>& m) { v1.push_back(&m); });
  visit_params(g2, [&](const std::string&, Mat<double>& m) { v2.push_back(&m); });
  for (size_t i = 0; i < v1.size(); ++i) {
    for (int64_t j = 0; j < v1[i]->size(); ++j) {
      CHECK(v1[i]->data[j] == doctest::Approx(v2[i]->data[j]).epsilon(1e-9));
    }
  }
}

TEST_CASE("batch-averaged loss is invariant to example permutation") {
  auto params = init_model<double>(tiny_config(), 13);
  auto data = tiny_dataset(17, 7, 4);
  Rng rng(0);
  double forward = forward_loss(params, batch_of(data, InputMode::unit_ids), false, rng).loss;
  std::reverse(data.begin(), data.end());
  double reversed = forward_loss(params, batch_of(data, InputMode::unit_ids), false, rng).loss;
  CHECK(forward == doctest::Approx(reversed).epsilon(1e-12));
}

TEST_CASE("learning rate schedule: warmup junction and inverse-sqrt decay") {
  TrainConfig tc;
  tc.peak_lr = 3e-3;
  tc.warmup_steps = 200;
  CHECK(lr_at_step(tc, 200) == doctest::Approx(3e-3).epsilon(1e-12));
  CHECK(lr_at_step(tc, 800) == doctest::Approx(1.5e-3).epsilon(1e-12));
  CHECK(lr_at_step(tc, 100) == doctest::Approx(1.5e-3).epsilon(1e-12));
  CHECK(lr_at_step(tc, 50) < lr_at_step(tc, 100));
}

TEST_CASE("same seed twice gives bit-identical parameters") {
  ModelConfig mc = tiny_config(9);
  auto a = init_model<float>(mc, 42);
  auto b = init_model<float>(mc, 42);
  std::vector<Mat<float>*> va, vb;
  visit_params(a, [&](const std::string&, Mat<float>& m) { va.push_back(&m); });
  visit_params(b, [&](const std::string&, Mat<float>& m) { vb.push_back(&m); });
  bool all_equal = true;
  for (size_t i = 0; i < va.size(); ++i) all_equal = all_equal && (va[i]->data == vb[i]->data);
  CHECK(all_equal);
  auto c = init_model<float>(mc, 43);
  std::vector<Mat<float>*> vc;
  visit_params(c, [&](const std::string&, Mat<float>& m) { vc.push_back(&m); });
  bool any_diff = false;
  for (size_t i = 0; i < va.size(); ++i) any_diff = any_diff || (va[i]->data != vc[i]->data);
  CHECK(any_diff);
}

TEST_CASE("pretrained embedding copies centroids into the first coordinates") {
  Codebook cb;
  cb.k = 3;
  cb.dim = 2;
  cb.centroids = {{0.5, -1.5}, {2.0, 0.25}, {-3.0, 1.0}};
  ModelConfig mc = tiny_config(Vocabulary::kNumSpecials + 3 + 2);
  auto with = init_model<float>(mc, 4, &cb, true);
  auto without = init_model<float>(mc, 4, &cb, false);
  for (int u = 0; u < 3; ++u) {
    int row = Vocabulary::kNumSpecials + u;
    for (int j = 0; j < mc.hidden; ++j) {
      float expect = j < cb.dim ? static_cast<float>(cb.centroids[u][j]) : 0.0f;
      CHECK(with.src_embed.at(row, j) == expect);
    }
  }
  // flag unset leaves unit rows random like any other row
  bool any_nonzero_tail = false;
  for (int u = 0; u < 3; ++u) {
    int row = Vocabulary::kNumSpecials + u;
    for (int j = cb.dim; j < mc.hidden; ++j) {
      any_nonzero_tail = any_nonzero_tail || without.src_embed.at(row, j) != 0.0f;
    }
  }
  CHECK(any_nonzero_tail);

  Codebook wide = cb;
  wide.dim = 99;
  CHECK_THROWS_AS(init_model<float>(mc, 4, &wide, true), ValidationError);
  ModelConfig cont = mc;
  cont.input_mode = InputMode::continuous_frames;
  cont.input_dim = 2;
  CHECK_THROWS_AS(init_model<float>(cont, 4, &cb, true), ValidationError);
}

TEST_CASE("averaging identical checkpoints returns the checkpoint") {
  auto params = init_model<float>(tiny_config(), 21);
  std::vector<Parameters<float>> identical{params, params, params};
  auto avg = average_checkpoints(identical);
  std::vector<Mat<float>*> va, vp;
  visit_params(avg, [&](const std::string&, Mat<float>& m) { va.push_back(&m); });
  visit_params(params, [&](const std::string&, Mat<float>& m) { vp.push_back(&m); });
  for (size_t i = 0; i < va.size(); ++i) {
    for (int64_t j = 0; j < va[i]->size(); ++j) {
      CHECK(va[i]->data[j] == doctest::Approx(vp[i]->data[j]).epsilon(1e-7));
    }
  }
}

TEST_CASE("training determinism: identical seeds give identical dev losses") {
  ModelConfig mc = tiny_config(12);
  mc.dropout = 0.1;  // exercise the dropout rng path as well
  auto data = tiny_dataset(31, 12, 6);
  TrainConfig tc;
  tc.max_steps = 40;
  tc.eval_interval = 10;
  tc.batch_tokens = 64;
  tc.warmup_steps = 10;
  tc.seed = 77;
  TrainLog log_a, log_b;
  auto a = train(init_model<float>(mc, 5), data, data, tc, &log_a);
  auto b = train(init_model<float>(mc, 5), data, data, tc, &log_b);
  CHECK(log_a.final_dev == log_b.final_dev);
  CHECK(log_a.dev_loss == log_b.dev_loss);
  std::vector<Mat<float>*> va, vb;
  visit_params(a, [&](const std::string&, Mat<float>& m) { va.push_back(&m); });
  visit_params(b, [&](const std::string&, Mat<float>& m) { vb.push_back(&m); });
  bool identical = true;
  for (size_t i = 0; i < va.size(); ++i) identical = identical && va[i]->data == vb[i]->data;
  CHECK(identical);
}

TEST_CASE("memorization: eight pairs drive the unsmoothed loss below 0.1") {
  ModelConfig mc;
  mc.layers_enc = 1;
  mc.layers_dec = 1;
  mc.hidden = 32;
  mc.heads = 4;
  mc.ffn = 64;
  mc.dropout = 0.0;
  mc.label_smoothing = 0.0;
  mc.max_len = 32;
  mc.vocab_size = 16;
  auto data = tiny_dataset(41, 16, 8);
  TrainConfig tc;
  tc.max_steps = 400;
  tc.eval_interval = 50;
  tc.batch_tokens = 256;
  tc.warmup_steps = 40;
  tc.peak_lr = 3e-3;
  tc.seed = 5;
  TrainLog log;
  auto trained = train(init_model<float>(mc, 6), data, data, tc, &log);
  CHECK(log.final_dev < 0.1);
  CHECK(log.best_dev < 0.1);
}

TEST_CASE("dev-loss selection: best checkpoint improves on the first evaluation") {
  ModelConfig mc = tiny_config(10);
  auto data = tiny_dataset(51, 10, 6);
  TrainConfig tc;
  tc.max_steps = 120;
  tc.eval_interval = 20;
  tc.batch_tokens = 128;
  tc.warmup_steps = 20;
  tc.seed = 3;
  TrainLog log;
  train(init_model<float>(mc, 8), data, data, tc, &log);
  REQUIRE(!log.dev_loss.empty());
  CHECK(log.best_dev <= log.dev_loss.front().second);
}

TEST_CASE("checkpoint save/load round trip is bit exact") {
  auto params = init_model<float>(tiny_config(8), 61);
  params.vocab_hash = 0xabcdef12u;
  params.step = 321;
  Provenance prov{"deadbeefdeadbeef", 9};
  std::string path =
      (std::filesystem::temp_directory_path() / "dub_test_ckpt.bin").string();
  save_checkpoint(path, params, prov);
  auto loaded = load_checkpoint(path, &prov, params.vocab_hash);
  CHECK(loaded.step == 321);
  CHECK(loaded.vocab_hash == params.vocab_hash);
  std::vector<Mat<float>*> va, vb;
  visit_params(params, [&](const std::string&, Mat<float>& m) { va.push_back(&m); });
  visit_params(loaded, [&](const std::string&, Mat<float>& m) { vb.push_back(&m); });
  bool identical = true;
  for (size_t i = 0; i < va.size(); ++i) identical = identical && va[i]->data == vb[i]->data;
  CHECK(identical);

  Provenance wrong{"0000000000000000", 9};
  CHECK_THROWS_AS(load_checkpoint(path, &wrong, 0), ValidationError);
  CHECK_THROWS_AS(load_checkpoint(path, &prov, 0x1234), ValidationError);
  std::filesystem::remove(path);
}

TEST_CASE("sequences beyond max_len and out-of-range ids are rejected") {
  auto params = init_model<float>(tiny_config(), 3);
  std::vector<TrainingExample> data(1);
  data[0].src_ids.assign(40, 5);  // exceeds max_len 16
  data[0].tgt_ids = {5};
  ModelBatch batch = batch_of(data, InputMode::unit_ids);
  Rng rng(0);
  CHECK_THROWS_AS(forward_loss(params, batch, false, rng), ValidationError);

  data[0].src_ids = {Vocabulary::kBos, 99, Vocabulary::kEos};
  batch = batch_of(data, InputMode::unit_ids);
  CHECK_THROWS_AS(forward_loss(params, batch, false, rng), ValidationError);
}

TEST_SUITE_END();
