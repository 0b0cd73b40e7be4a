// train.hh
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

#include <algorithm>
#include <vector>

#include "model.hh"

namespace dub {

// One source/target pair ready for the model. src_ids already carries BOS,
// the optional <BT> tag, and EOS; tgt_ids is the bare target (BOS/EOS are
// added when the batch is packed). frames is used instead of src_ids in
// continuous input mode.
struct TrainingExample {
  std::vector<int> src_ids;
  std::vector<std::vector<double>> frames;
  std::vector<int> tgt_ids;
};

inline int64_t example_cost(const TrainingExample& ex, InputMode mode) {
  int64_t src = mode == InputMode::unit_ids ? static_cast<int64_t>(ex.src_ids.size())
                                            : static_cast<int64_t>(ex.frames.size());
  return src + static_cast<int64_t>(ex.tgt_ids.size()) + 2;
}

// Packs examples [begin, end) of `order` into one padded batch.
template <typename It>
ModelBatch pack_batch(const std::vector<TrainingExample>& data, It begin, It end,
                      InputMode mode) {
  ModelBatch b;
  b.batch = static_cast<int>(end - begin);
  for (It it = begin; it != end; ++it) {
    const TrainingExample& ex = data[*it];
    int src = mode == InputMode::unit_ids ? static_cast<int>(ex.src_ids.size())
                                          : static_cast<int>(ex.frames.size());
    b.src_len = std::max(b.src_len, src);
    b.tgt_len = std::max(b.tgt_len, static_cast<int>(ex.tgt_ids.size()) + 1);  // +EOS
  }
  const int64_t src_total = static_cast<int64_t>(b.batch) * b.src_len;
  const int64_t tgt_total = static_cast<int64_t>(b.batch) * b.tgt_len;
  b.src_mask.assign(src_total, 0);
  b.tgt_in.assign(tgt_total, Vocabulary::kPad);
  b.tgt_out.assign(tgt_total, Vocabulary::kPad);
  b.tgt_mask.assign(tgt_total, 0);
  if (mode == InputMode::unit_ids) {
    b.src_ids.assign(src_total, Vocabulary::kPad);
  } else {
    b.src_frames.assign(src_total, {});
  }

  int row = 0;
  for (It it = begin; it != end; ++it, ++row) {
    const TrainingExample& ex = data[*it];
    const int64_t sbase = static_cast<int64_t>(row) * b.src_len;
    if (mode == InputMode::unit_ids) {
      for (size_t i = 0; i < ex.src_ids.size(); ++i) {
        b.src_ids[sbase + i] = ex.src_ids[i];
        b.src_mask[sbase + i] = 1;
      }
    } else {
      int dim = ex.frames.empty() ? 1 : static_cast<int>(ex.frames[0].size());
      for (size_t i = 0; i < ex.frames.size(); ++i) {
        b.src_frames[sbase + i] = ex.frames[i];
        b.src_mask[sbase + i] = 1;
      }
      for (int64_t i = static_cast<int64_t>(ex.frames.size()); i < b.src_len; ++i) {
        b.src_frames[sbase + i].assign(dim, 0.0);
      }
    }
    const int64_t tbase = static_cast<int64_t>(row) * b.tgt_len;
    b.tgt_in[tbase] = Vocabulary::kBos;
    for (size_t i = 0; i < ex.tgt_ids.size(); ++i) {
      b.tgt_in[tbase + i + 1] = ex.tgt_ids[i];
      b.tgt_out[tbase + i] = ex.tgt_ids[i];
      b.tgt_mask[tbase + i] = 1;
    }
    b.tgt_out[tbase + ex.tgt_ids.size()] = Vocabulary::kEos;
    b.tgt_mask[tbase + ex.tgt_ids.size()] = 1;
  }
  // Fill pad rows of src_frames that belong to no example (none: rows == batch).
  if (mode == InputMode::continuous_frames) {
    int dim = 1;
    for (const auto& f : b.src_frames) {
      if (!f.empty()) {
        dim = static_cast<int>(f.size());
        break;
      }
    }
    for (auto& f : b.src_frames) {
      if (f.empty()) f.assign(dim, 0.0);
    }
  }
  return b;
}

// Deterministic epoch stream: re-shuffles the example order each epoch and
// emits consecutive batches under the token budget.
class BatchStream {
 public:
  BatchStream(const std::vector<TrainingExample>& data, InputMode mode, int batch_tokens,
              Rng rng)
      : data_(data), mode_(mode), batch_tokens_(batch_tokens), rng_(rng) {
    if (data.empty()) throw ValidationError("batch stream: empty dataset");
    order_.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) order_[i] = i;
    start_epoch();
  }

  ModelBatch next() {
    if (cursor_ >= order_.size()) start_epoch();
    size_t begin = cursor_;
    int max_src = 0, max_tgt = 0, count = 0;
    while (cursor_ < order_.size()) {
      const TrainingExample& ex = data_[order_[cursor_]];
      int src = mode_ == InputMode::unit_ids ? static_cast<int>(ex.src_ids.size())
                                             : static_cast<int>(ex.frames.size());
      int tgt = static_cast<int>(ex.tgt_ids.size()) + 1;
      int ns = std::max(max_src, src);
      int nt = std::max(max_tgt, tgt);
      int64_t cost = static_cast<int64_t>(count + 1) * (ns + nt);
      if (count > 0 && cost > batch_tokens_) break;
      max_src = ns;
      max_tgt = nt;
      ++count;
      ++cursor_;
    }
    return pack_batch(data_, order_.begin() + begin, order_.begin() + cursor_, mode_);
  }

  int64_t epoch() const { return epoch_; }

 private:
  void start_epoch() {
    Rng shuffle = rng_.substream(static_cast<uint64_t>(epoch_));
    for (size_t i = order_.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(shuffle.uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(order_[i - 1], order_[j]);
    }
    cursor_ = 0;
    ++epoch_;
  }

  const std::vector<TrainingExample>& data_;
  InputMode mode_;
  int batch_tokens_;
  Rng rng_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
  int64_t epoch_ = 0;
};

struct TrainLog {
  std::vector<std::pair<int64_t, double>> train_loss;  // sampled (step, loss)
  std::vector<std::pair<int64_t, double>> dev_loss;    // (step, loss)
  double best_dev = 0.0;
  int64_t best_dev_step = 0;
  double final_dev = 0.0;
  int64_t steps = 0;
};

template <typename T>
double evaluate_loss(const Parameters<T>& params, const std::vector<TrainingExample>& data,
                     int batch_tokens) {
  Rng dummy(0);
  double total = 0.0;
  int64_t tokens = 0;
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < data.size(); ++i) order[i] = i;
  size_t cursor = 0;
  while (cursor < order.size()) {
    size_t begin = cursor;
    int max_src = 0, max_tgt = 0, count = 0;
    while (cursor < order.size()) {
      const TrainingExample& ex = data[order[cursor]];
      int src = params.config.input_mode == InputMode::unit_ids
                    ? static_cast<int>(ex.src_ids.size())
                    : static_cast<int>(ex.frames.size());
      int tgt = static_cast<int>(ex.tgt_ids.size()) + 1;
      int ns = std::max(max_src, src);
      int nt = std::max(max_tgt, tgt);
      if (count > 0 && static_cast<int64_t>(count + 1) * (ns + nt) > batch_tokens) break;
      max_src = ns;
      max_tgt = nt;
      ++count;
      ++cursor;
    }
    ModelBatch batch = pack_batch(data, order.begin() + begin, order.begin() + cursor,
                                  params.config.input_mode);
    ForwardTape<T> tape = forward_loss(params, batch, /*training=*/false, dummy);
    total += tape.loss * tape.loss_tokens;
    tokens += tape.loss_tokens;
  }
  return tokens > 0 ? total / tokens : 0.0;
}

// Adam training with warmup + inverse-sqrt schedule. Keeps the best-dev
// step on record and returns the average of the last checkpoint_avg_n
// periodic snapshots (the snapshot cadence is eval_interval).
template <typename T>
Parameters<T> train(Parameters<T> params, const std::vector<TrainingExample>& train_data,
                    const std::vector<TrainingExample>& dev_data, const TrainConfig& tc,
                    TrainLog* log = nullptr) {
  tc.validate();
  Rng root(tc.seed);
  BatchStream stream(train_data, params.config.input_mode, tc.batch_tokens,
                     root.substream("shuffle"));
  Rng dropout_rng = root.substream("dropout");

  Parameters<T> grad = make_gradients(params);
  AdamState<T> adam;
  adam.m = make_gradients(params);
  adam.v = make_gradients(params);

  std::vector<Parameters<T>> snapshots;
  double best_dev = std::numeric_limits<double>::infinity();
  int64_t best_step = 0;

  const int eval_interval = std::max(1, tc.eval_interval);
  for (int64_t step = 1; step <= tc.max_steps; ++step) {
    ModelBatch batch = stream.next();
    ForwardTape<T> tape = forward_loss(params, batch, /*training=*/true, dropout_rng);
    zero_grad(grad);
    backward(params, tape, grad);
    adam_step(params, grad, adam, tc);

    if (log && (step % std::max<int64_t>(1, tc.max_steps / 50) == 0 || step == 1)) {
      log->train_loss.emplace_back(step, tape.loss);
    }
    if (step % eval_interval == 0 || step == tc.max_steps) {
      double dev = dev_data.empty() ? tape.loss
                                    : evaluate_loss(params, dev_data, tc.batch_tokens);
      if (log) log->dev_loss.emplace_back(step, dev);
      if (dev < best_dev) {
        best_dev = dev;
        best_step = step;
      }
      snapshots.push_back(params);
      if (static_cast<int>(snapshots.size()) > tc.checkpoint_avg_n) {
        snapshots.erase(snapshots.begin());
      }
    }
  }

  Parameters<T> final_params =
      snapshots.empty() ? std::move(params) : average_checkpoints(snapshots);
  if (log) {
    log->best_dev = best_dev;
    log->best_dev_step = best_step;
    log->steps = tc.max_steps;
    log->final_dev = dev_data.empty()
                         ? 0.0
                         : evaluate_loss(final_params, dev_data, tc.batch_tokens);
  }
  return final_params;
}

}  // namespace dub
