// model.hh
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
// Encoder-decoder sequence model with multi-head attention and a
// hand-written backward pass. Templated on the scalar type: the pipeline
// instantiates float, the finite-difference tests instantiate double.
// Layer order is pre-norm with a final LayerNorm on each stack; the FFN
// activation is GELU (smooth, so numerical gradient checks are exact to
// first order).

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "errors.hh"
#include "quantizer.hh"
#include "rng.hh"
#include "tensor.hh"
#include "vocab.hh"

namespace dub {

enum class InputMode { unit_ids, continuous_frames };
enum class Direction { unit_to_text, text_to_unit };

struct ModelConfig {
  int layers_enc = 2;
  int layers_dec = 2;
  int hidden = 64;
  int heads = 4;
  int ffn = 128;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  int max_len = 256;
  Direction direction = Direction::unit_to_text;
  InputMode input_mode = InputMode::unit_ids;
  bool use_pretrained_embedding = false;  // centroid-initialized unit rows
  int input_dim = 0;    // frame dimension, continuous mode only
  int vocab_size = 0;

  void validate() const {
    if (hidden <= 0 || heads <= 0 || hidden % heads != 0) {
      throw ValidationError("model: hidden must be a positive multiple of heads");
    }
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
      throw ValidationError("model: label smoothing must be in [0, 1)");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
      throw ValidationError("model: dropout must be in [0, 1)");
    }
    if (layers_enc < 1 || layers_dec < 1) {
      throw ValidationError("model: need at least one layer per stack");
    }
    if (vocab_size < 4) {  // PAD, BOS, EOS and at least one payload token
      throw ValidationError("model: vocab size too small");
    }
    if (input_mode == InputMode::continuous_frames && input_dim <= 0) {
      throw ValidationError("model: continuous mode needs input_dim");
    }
  }
};

struct TrainConfig {
  double peak_lr = 3e-3;
  int warmup_steps = 200;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-8;
  int batch_tokens = 512;
  int max_steps = 5000;
  int t2ut_max_steps = 0;  // 0 = same as max_steps
  int checkpoint_avg_n = 5;
  int eval_interval = 200;
  uint64_t seed = 1;

  void validate() const {
    if (warmup_steps < 1) throw ValidationError("train: warmup_steps must be >= 1");
    if (adam_beta1 <= 0 || adam_beta1 >= 1 || adam_beta2 <= 0 || adam_beta2 >= 1) {
      throw ValidationError("train: betas must be in (0, 1)");
    }
    if (batch_tokens < 8) throw ValidationError("train: batch_tokens too small");
    if (max_steps < 1) throw ValidationError("train: max_steps must be >= 1");
    if (checkpoint_avg_n < 1) throw ValidationError("train: checkpoint_avg_n must be >= 1");
  }
};

// Linear warmup to peak_lr, then inverse square root decay.
inline double lr_at_step(const TrainConfig& tc, int64_t step) {
  double t = static_cast<double>(step);
  double w = static_cast<double>(tc.warmup_steps);
  return tc.peak_lr * std::min(t / w, std::sqrt(w / t));
}

template <typename T>
struct AttentionParams {
  Mat<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
struct EncoderLayerParams {
  Mat<T> ln1_g, ln1_b;
  AttentionParams<T> attn;
  Mat<T> ln2_g, ln2_b;
  Mat<T> w1, b1, w2, b2;
};

template <typename T>
struct DecoderLayerParams {
  Mat<T> ln1_g, ln1_b;
  AttentionParams<T> self_attn;
  Mat<T> ln2_g, ln2_b;
  AttentionParams<T> cross_attn;
  Mat<T> ln3_g, ln3_b;
  Mat<T> w1, b1, w2, b2;
};

template <typename T>
struct Parameters {
  ModelConfig config;
  uint64_t vocab_hash = 0;
  int64_t step = 0;

  Mat<T> src_embed;             // V x h (id input) — holds the unit embedding
  Mat<T> in_proj_w, in_proj_b;  // h x d, 1 x h (continuous input)
  Mat<T> tgt_embed;             // V x h
  std::vector<EncoderLayerParams<T>> enc;
  std::vector<DecoderLayerParams<T>> dec;
  Mat<T> enc_ln_g, enc_ln_b;
  Mat<T> dec_ln_g, dec_ln_b;
  Mat<T> out_w, out_b;          // V x h, 1 x V
};

// Enumerates every tensor in a fixed order shared by gradients, Adam
// state, checkpoint averaging and serialization.
template <typename T, typename F>
void visit_params(Parameters<T>& p, F&& fn) {
  auto attn = [&](const std::string& prefix, AttentionParams<T>& a) {
    fn(prefix + ".wq", a.wq);
    fn(prefix + ".bq", a.bq);
    fn(prefix + ".wk", a.wk);
    fn(prefix + ".bk", a.bk);
    fn(prefix + ".wv", a.wv);
    fn(prefix + ".bv", a.bv);
    fn(prefix + ".wo", a.wo);
    fn(prefix + ".bo", a.bo);
  };
  if (p.config.input_mode == InputMode::unit_ids) {
    fn("src_embed", p.src_embed);
  } else {
    fn("in_proj_w", p.in_proj_w);
    fn("in_proj_b", p.in_proj_b);
  }
  fn("tgt_embed", p.tgt_embed);
  for (size_t l = 0; l < p.enc.size(); ++l) {
    auto& e = p.enc[l];
    std::string pre = "enc." + std::to_string(l);
    fn(pre + ".ln1_g", e.ln1_g);
    fn(pre + ".ln1_b", e.ln1_b);
    attn(pre + ".attn", e.attn);
    fn(pre + ".ln2_g", e.ln2_g);
    fn(pre + ".ln2_b", e.ln2_b);
    fn(pre + ".w1", e.w1);
    fn(pre + ".b1", e.b1);
    fn(pre + ".w2", e.w2);
    fn(pre + ".b2", e.b2);
  }
  for (size_t l = 0; l < p.dec.size(); ++l) {
    auto& d = p.dec[l];
    std::string pre = "dec." + std::to_string(l);
    fn(pre + ".ln1_g", d.ln1_g);
    fn(pre + ".ln1_b", d.ln1_b);
    attn(pre + ".self", d.self_attn);
    fn(pre + ".ln2_g", d.ln2_g);
    fn(pre + ".ln2_b", d.ln2_b);
    attn(pre + ".cross", d.cross_attn);
    fn(pre + ".ln3_g", d.ln3_g);
    fn(pre + ".ln3_b", d.ln3_b);
    fn(pre + ".w1", d.w1);
    fn(pre + ".b1", d.b1);
    fn(pre + ".w2", d.w2);
    fn(pre + ".b2", d.b2);
  }
  fn("enc_ln_g", p.enc_ln_g);
  fn("enc_ln_b", p.enc_ln_b);
  fn("dec_ln_g", p.dec_ln_g);
  fn("dec_ln_b", p.dec_ln_b);
  fn("out_w", p.out_w);
  fn("out_b", p.out_b);
}

template <typename T>
int64_t count_params(Parameters<T>& p) {
  int64_t n = 0;
  visit_params(p, [&](const std::string&, Mat<T>& m) { n += m.size(); });
  return n;
}

// One training/evaluation batch. Target rows are right-padded; tgt_in is
// BOS + y, tgt_out is y + EOS with PAD beyond each sequence.
struct ModelBatch {
  int batch = 0;
  int src_len = 0;
  int tgt_len = 0;
  std::vector<int> src_ids;            // batch*src_len, id-input mode
  std::vector<std::vector<double>> src_frames;  // batch*src_len rows, continuous mode
  std::vector<uint8_t> src_mask;       // 1 = real position
  std::vector<int> tgt_in;             // batch*tgt_len
  std::vector<int> tgt_out;            // batch*tgt_len
  std::vector<uint8_t> tgt_mask;       // 1 = real target position
};

template <typename T>
struct LayerNormTape {
  Mat<T> input;
  std::vector<T> mean, rstd;
};

template <typename T>
struct AttentionTape {
  Mat<T> query_in;               // LN output feeding the q projection
  Mat<T> q, k, v;                // projected
  std::vector<Mat<T>> probs;     // per (batch, head): Lq x Lk
  Mat<T> ctx;                    // heads re-concatenated
  Mat<T> drop_mask;              // empty in eval mode
};

template <typename T>
struct FfnTape {
  LayerNormTape<T> ln;
  Mat<T> ln_out;
  Mat<T> pre_act;
  Mat<T> post_act;
  Mat<T> drop_mask;
};

template <typename T>
struct EncLayerTape {
  LayerNormTape<T> ln1;
  Mat<T> ln1_out;
  AttentionTape<T> attn;
  Mat<T> after_attn;  // residual stream entering the FFN block
  FfnTape<T> ffn;
};

template <typename T>
struct DecLayerTape {
  LayerNormTape<T> ln1;
  Mat<T> ln1_out;
  AttentionTape<T> self_attn;
  Mat<T> after_self;
  LayerNormTape<T> ln2;
  Mat<T> ln2_out;
  AttentionTape<T> cross_attn;
  Mat<T> after_cross;
  FfnTape<T> ffn;
};

template <typename T>
struct ForwardTape {
  const ModelBatch* batch = nullptr;
  bool training = false;

  Mat<T> enc_in;   // embedded + positional (pre-dropout)
  Mat<T> enc_in_drop_mask;
  Mat<T> enc_x;    // stream after input dropout
  std::vector<EncLayerTape<T>> enc_layers;
  LayerNormTape<T> enc_final_ln;
  Mat<T> enc_out;

  Mat<T> dec_in;
  Mat<T> dec_in_drop_mask;
  Mat<T> dec_x;
  std::vector<DecLayerTape<T>> dec_layers;
  LayerNormTape<T> dec_final_ln;
  Mat<T> dec_out;

  Mat<T> logits;   // (batch*tgt_len) x V
  double loss = 0.0;
  int64_t loss_tokens = 0;
};

template <typename T>
Mat<T> sinusoidal_positions(int max_len, int dim) {
  Mat<T> pe(max_len, dim);
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < dim; i += 2) {
      double angle = pos / std::pow(10000.0, static_cast<double>(i) / dim);
      pe.at(pos, i) = static_cast<T>(std::sin(angle));
      if (i + 1 < dim) pe.at(pos, i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Initialization

template <typename T>
Mat<T> xavier_uniform(int64_t rows, int64_t cols, Rng& rng) {
  Mat<T> m(rows, cols);
  double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (auto& v : m.data) v = static_cast<T>(rng.uniform(-a, a));
  return m;
}

template <typename T>
void init_attention(AttentionParams<T>& a, int h, Rng& rng) {
  a.wq = xavier_uniform<T>(h, h, rng);
  a.bq = Mat<T>(1, h);
  a.wk = xavier_uniform<T>(h, h, rng);
  a.bk = Mat<T>(1, h);
  a.wv = xavier_uniform<T>(h, h, rng);
  a.bv = Mat<T>(1, h);
  a.wo = xavier_uniform<T>(h, h, rng);
  a.bo = Mat<T>(1, h);
}

template <typename T>
Parameters<T> init_model(const ModelConfig& config, uint64_t seed,
                         const Codebook* codebook = nullptr,
                         bool use_pretrained_embedding = false) {
  config.validate();
  if (use_pretrained_embedding) {
    if (config.input_mode != InputMode::unit_ids) {
      throw ValidationError("init: pretrained embedding requires unit id input");
    }
    if (codebook == nullptr) {
      throw ValidationError("init: pretrained embedding requires a codebook");
    }
    if (codebook->dim > config.hidden) {
      throw ValidationError("init: centroid dim exceeds hidden size");
    }
  }

  Parameters<T> p;
  p.config = config;
  Rng rng = Rng(seed).substream("init");
  const int h = config.hidden;
  const int V = config.vocab_size;

  if (config.input_mode == InputMode::unit_ids) {
    p.src_embed = xavier_uniform<T>(V, h, rng);
  } else {
    p.in_proj_w = xavier_uniform<T>(h, config.input_dim, rng);
    p.in_proj_b = Mat<T>(1, h);
  }
  p.tgt_embed = xavier_uniform<T>(V, h, rng);
  p.enc.resize(config.layers_enc);
  for (auto& e : p.enc) {
    e.ln1_g = Mat<T>(1, h);
    e.ln1_g.fill(T(1));
    e.ln1_b = Mat<T>(1, h);
    init_attention(e.attn, h, rng);
    e.ln2_g = Mat<T>(1, h);
    e.ln2_g.fill(T(1));
    e.ln2_b = Mat<T>(1, h);
    e.w1 = xavier_uniform<T>(config.ffn, h, rng);
    e.b1 = Mat<T>(1, config.ffn);
    e.w2 = xavier_uniform<T>(h, config.ffn, rng);
    e.b2 = Mat<T>(1, h);
  }
  p.dec.resize(config.layers_dec);
  for (auto& d : p.dec) {
    d.ln1_g = Mat<T>(1, h);
    d.ln1_g.fill(T(1));
    d.ln1_b = Mat<T>(1, h);
    init_attention(d.self_attn, h, rng);
    d.ln2_g = Mat<T>(1, h);
    d.ln2_g.fill(T(1));
    d.ln2_b = Mat<T>(1, h);
    init_attention(d.cross_attn, h, rng);
    d.ln3_g = Mat<T>(1, h);
    d.ln3_g.fill(T(1));
    d.ln3_b = Mat<T>(1, h);
    d.w1 = xavier_uniform<T>(config.ffn, h, rng);
    d.b1 = Mat<T>(1, config.ffn);
    d.w2 = xavier_uniform<T>(h, config.ffn, rng);
    d.b2 = Mat<T>(1, h);
  }
  p.enc_ln_g = Mat<T>(1, h);
  p.enc_ln_g.fill(T(1));
  p.enc_ln_b = Mat<T>(1, h);
  p.dec_ln_g = Mat<T>(1, h);
  p.dec_ln_g.fill(T(1));
  p.dec_ln_b = Mat<T>(1, h);
  p.out_w = xavier_uniform<T>(V, h, rng);
  p.out_b = Mat<T>(1, V);

  // Unit rows carry the centroid as prior knowledge: first d coordinates
  // are the centroid, the rest are zero.
  if (use_pretrained_embedding) {
    for (int u = 0; u < codebook->k; ++u) {
      int row = Vocabulary::kNumSpecials + u;
      if (row >= V) break;
      for (int j = 0; j < h; ++j) {
        p.src_embed.at(row, j) =
            j < codebook->dim ? static_cast<T>(codebook->centroids[u][j]) : T(0);
      }
    }
  }
  return p;
}

template <typename T>
Parameters<T> make_gradients(const Parameters<T>& p) {
  Parameters<T> g = p;
  visit_params(g, [](const std::string&, Mat<T>& m) { m.fill(T(0)); });
  g.step = 0;
  return g;
}

// ---------------------------------------------------------------------------
// Layer primitives (forward + backward)

template <typename T>
void linear_fwd(Mat<T>& y, const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
  y = Mat<T>(x.rows, w.rows);
  matmul_nt(y, x, w);
  ThreadPool::instance().parallel_for(y.rows, [&](int64_t r0, int64_t r1) {
    for (int64_t i = r0; i < r1; ++i) {
      T* yi = y.row(i);
      const T* bb = b.row(0);
      for (int64_t j = 0; j < y.cols; ++j) yi[j] += bb[j];
    }
  });
}

template <typename T>
void linear_bwd(Mat<T>& dx, Mat<T>& dw, Mat<T>& db, const Mat<T>& dy, const Mat<T>& x,
                const Mat<T>& w) {
  dx = Mat<T>(x.rows, x.cols);
  matmul_nn(dx, dy, w);
  matmul_tn(dw, dy, x, /*accumulate=*/true);
  T* dbp = db.row(0);
  for (int64_t i = 0; i < dy.rows; ++i) {
    const T* dyi = dy.row(i);
    for (int64_t j = 0; j < dy.cols; ++j) dbp[j] += dyi[j];
  }
}

template <typename T>
void layernorm_fwd(Mat<T>& y, LayerNormTape<T>& tape, const Mat<T>& x, const Mat<T>& g,
                   const Mat<T>& b) {
  const T eps = T(1e-5);
  const int64_t n = x.cols;
  y = Mat<T>(x.rows, n);
  tape.input = x;
  tape.mean.resize(x.rows);
  tape.rstd.resize(x.rows);
  ThreadPool::instance().parallel_for(x.rows, [&](int64_t r0, int64_t r1) {
    for (int64_t i = r0; i < r1; ++i) {
      const T* xi = x.row(i);
      T mean = T(0);
      for (int64_t j = 0; j < n; ++j) mean += xi[j];
      mean /= static_cast<T>(n);
      T var = T(0);
      for (int64_t j = 0; j < n; ++j) {
        T d = xi[j] - mean;
        var += d * d;
      }
      var /= static_cast<T>(n);
      T rstd = T(1) / std::sqrt(var + eps);
      tape.mean[i] = mean;
      tape.rstd[i] = rstd;
      T* yi = y.row(i);
      const T* gg = g.row(0);
      const T* bb = b.row(0);
      for (int64_t j = 0; j < n; ++j) yi[j] = (xi[j] - mean) * rstd * gg[j] + bb[j];
    }
  });
}

template <typename T>
void layernorm_bwd(Mat<T>& dx, Mat<T>& dg, Mat<T>& db, const Mat<T>& dy,
                   const LayerNormTape<T>& tape, const Mat<T>& g) {
  const Mat<T>& x = tape.input;
  const int64_t n = x.cols;
  dx = Mat<T>(x.rows, n);
  ThreadPool::instance().parallel_for(x.rows, [&](int64_t r0, int64_t r1) {
    for (int64_t i = r0; i < r1; ++i) {
      const T* xi = x.row(i);
      const T* dyi = dy.row(i);
      const T* gg = g.row(0);
      T mean = tape.mean[i];
      T rstd = tape.rstd[i];
      T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
      for (int64_t j = 0; j < n; ++j) {
        T xhat = (xi[j] - mean) * rstd;
        T dxhat = dyi[j] * gg[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
      }
      T* dxi = dx.row(i);
      for (int64_t j = 0; j < n; ++j) {
        T xhat = (xi[j] - mean) * rstd;
        T dxhat = dyi[j] * gg[j];
        dxi[j] = (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / static_cast<T>(n)) * rstd;
      }
    }
  });
  // Parameter gradients accumulate serially in row order.
  T* dgp = dg.row(0);
  T* dbp = db.row(0);
  for (int64_t i = 0; i < x.rows; ++i) {
    const T* xi = x.row(i);
    const T* dyi = dy.row(i);
    T mean = tape.mean[i];
    T rstd = tape.rstd[i];
    for (int64_t j = 0; j < n; ++j) {
      dgp[j] += dyi[j] * (xi[j] - mean) * rstd;
      dbp[j] += dyi[j];
    }
  }
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <typename T>
T gelu_grad(T x) {
  const T kInvSqrt2Pi = T(0.39894228040143267794);
  return T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440))) +
         x * kInvSqrt2Pi * std::exp(T(-0.5) * x * x);
}

// Inverted dropout; the mask already folds in the 1/(1-p) scale.
template <typename T>
void dropout_fwd(Mat<T>& x, Mat<T>& mask, double p, bool training, Rng& rng) {
  if (!training || p <= 0.0) {
    mask = Mat<T>();
    return;
  }
  mask = Mat<T>(x.rows, x.cols);
  const T scale = T(1.0 / (1.0 - p));
  for (int64_t i = 0; i < x.size(); ++i) {
    T keep = rng.uniform() >= p ? scale : T(0);
    mask.data[i] = keep;
    x.data[i] *= keep;
  }
}

template <typename T>
void dropout_bwd(Mat<T>& dx, const Mat<T>& mask) {
  if (mask.size() == 0) return;
  for (int64_t i = 0; i < dx.size(); ++i) dx.data[i] *= mask.data[i];
}

// Multi-head attention over flattened (batch*len) x hidden activations.
// kv_in may be the same matrix as q_in (self-attention) or the encoder
// output (cross-attention). key_mask marks real key positions; causal
// additionally hides keys beyond the query position.
template <typename T>
void attention_fwd(Mat<T>& out, AttentionTape<T>& tape, const Mat<T>& q_in, const Mat<T>& kv_in,
                   const AttentionParams<T>& ap, int batch, int q_len, int kv_len, int heads,
                   const std::vector<uint8_t>& key_mask, bool causal) {
  const int h = static_cast<int>(ap.wq.rows);
  const int dk = h / heads;
  const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dk)));
  const T neg = T(-1e30);

  linear_fwd(tape.q, q_in, ap.wq, ap.bq);
  linear_fwd(tape.k, kv_in, ap.wk, ap.bk);
  linear_fwd(tape.v, kv_in, ap.wv, ap.bv);
  tape.query_in = q_in;
  tape.probs.assign(static_cast<size_t>(batch) * heads, Mat<T>());
  tape.ctx = Mat<T>(static_cast<int64_t>(batch) * q_len, h);

  ThreadPool::instance().parallel_for(static_cast<int64_t>(batch) * heads,
                                      [&](int64_t i0, int64_t i1) {
    for (int64_t bh = i0; bh < i1; ++bh) {
      const int b = static_cast<int>(bh / heads);
      const int hd = static_cast<int>(bh % heads);
      const int64_t q_base = static_cast<int64_t>(b) * q_len;
      const int64_t k_base = static_cast<int64_t>(b) * kv_len;
      Mat<T>& probs = tape.probs[bh];
      probs = Mat<T>(q_len, kv_len);
      for (int i = 0; i < q_len; ++i) {
        const T* qi = tape.q.row(q_base + i) + hd * dk;
        T* pi = probs.row(i);
        T row_max = neg;
        for (int j = 0; j < kv_len; ++j) {
          T s = neg;
          bool visible = key_mask[k_base + j] != 0 && (!causal || j <= i);
          if (visible) {
            const T* kj = tape.k.row(k_base + j) + hd * dk;
            T acc = T(0);
            for (int c = 0; c < dk; ++c) acc += qi[c] * kj[c];
            s = acc * scale;
          }
          pi[j] = s;
          if (s > row_max) row_max = s;
        }
        // Softmax; a fully masked row falls back to uniform but its output
        // is never consumed by the loss.
        T denom = T(0);
        for (int j = 0; j < kv_len; ++j) {
          T e = std::exp(pi[j] - row_max);
          pi[j] = e;
          denom += e;
        }
        for (int j = 0; j < kv_len; ++j) pi[j] /= denom;
        T* ctx_i = tape.ctx.row(q_base + i) + hd * dk;
        for (int c = 0; c < dk; ++c) ctx_i[c] = T(0);
        for (int j = 0; j < kv_len; ++j) {
          const T pj = pi[j];
          if (pj == T(0)) continue;
          const T* vj = tape.v.row(k_base + j) + hd * dk;
          for (int c = 0; c < dk; ++c) ctx_i[c] += pj * vj[c];
        }
      }
    }
  });
  linear_fwd(out, tape.ctx, ap.wo, ap.bo);
}

// Backward for attention_fwd. d_q_in receives the query-side gradient;
// d_kv_in is accumulated (+=) so self-attention can pass the same buffer
// and cross-attention can collect the encoder gradient across layers.
template <typename T>
void attention_bwd(Mat<T>& d_q_in, Mat<T>& d_kv_in, const Mat<T>& d_out,
                   const AttentionTape<T>& tape, const Mat<T>& kv_in,
                   const AttentionParams<T>& ap, AttentionParams<T>& grad, int batch, int q_len,
                   int kv_len, int heads) {
  const int h = static_cast<int>(ap.wq.rows);
  const int dk = h / heads;
  const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dk)));

  Mat<T> d_ctx;
  linear_bwd(d_ctx, grad.wo, grad.bo, d_out, tape.ctx, ap.wo);

  Mat<T> dq(tape.q.rows, h), dkm(tape.k.rows, h), dvm(tape.v.rows, h);
  ThreadPool::instance().parallel_for(static_cast<int64_t>(batch) * heads,
                                      [&](int64_t i0, int64_t i1) {
    for (int64_t bh = i0; bh < i1; ++bh) {
      const int b = static_cast<int>(bh / heads);
      const int hd = static_cast<int>(bh % heads);
      const int64_t q_base = static_cast<int64_t>(b) * q_len;
      const int64_t k_base = static_cast<int64_t>(b) * kv_len;
      const Mat<T>& probs = tape.probs[bh];
      std::vector<T> dp(kv_len);
      for (int i = 0; i < q_len; ++i) {
        const T* pi = probs.row(i);
        const T* dctx_i = d_ctx.row(q_base + i) + hd * dk;
        // dV += p^T dctx ; dp = dctx V^T
        T dot = T(0);
        for (int j = 0; j < kv_len; ++j) {
          const T* vj = tape.v.row(k_base + j) + hd * dk;
          T acc = T(0);
          for (int c = 0; c < dk; ++c) acc += dctx_i[c] * vj[c];
          dp[j] = acc;
          dot += acc * pi[j];
        }
        for (int j = 0; j < kv_len; ++j) {
          const T pj = pi[j];
          if (pj == T(0)) continue;
          T* dvj = dvm.row(k_base + j) + hd * dk;
          for (int c = 0; c < dk; ++c) dvj[c] += pj * dctx_i[c];
          // softmax backward: ds = p * (dp - sum(dp*p))
          T ds = pj * (dp[j] - dot) * scale;
          const T* kj = tape.k.row(k_base + j) + hd * dk;
          const T* qi = tape.q.row(q_base + i) + hd * dk;
          T* dqi = dq.row(q_base + i) + hd * dk;
          T* dkj = dkm.row(k_base + j) + hd * dk;
          for (int c = 0; c < dk; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
          }
        }
      }
    }
  });

  Mat<T> d_tmp;
  linear_bwd(d_tmp, grad.wq, grad.bq, dq, tape.query_in, ap.wq);
  d_q_in = std::move(d_tmp);
  linear_bwd(d_tmp, grad.wk, grad.bk, dkm, kv_in, ap.wk);
  for (int64_t i = 0; i < d_kv_in.size(); ++i) d_kv_in.data[i] += d_tmp.data[i];
  linear_bwd(d_tmp, grad.wv, grad.bv, dvm, kv_in, ap.wv);
  for (int64_t i = 0; i < d_kv_in.size(); ++i) d_kv_in.data[i] += d_tmp.data[i];
}

// ---------------------------------------------------------------------------
// Full forward / backward

template <typename T>
void embed_ids(Mat<T>& out, const std::vector<int>& ids, const Mat<T>& table, int vocab_size) {
  out = Mat<T>(static_cast<int64_t>(ids.size()), table.cols);
  for (size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0 || id >= vocab_size) throw ValidationError("embed: id out of range");
    const T* src = table.row(id);
    T* dst = out.row(static_cast<int64_t>(i));
    for (int64_t j = 0; j < table.cols; ++j) dst[j] = src[j];
  }
}

template <typename T>
void add_positions(Mat<T>& x, int batch, int len, const Mat<T>& pe) {
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < len; ++t) {
      T* xi = x.row(static_cast<int64_t>(b) * len + t);
      const T* pi = pe.row(t);
      for (int64_t j = 0; j < x.cols; ++j) xi[j] += pi[j];
    }
  }
}

template <typename T>
void ffn_block_fwd(Mat<T>& x, FfnTape<T>& tape, const Mat<T>& ln_g, const Mat<T>& ln_b,
                   const Mat<T>& w1, const Mat<T>& b1, const Mat<T>& w2, const Mat<T>& b2,
                   double dropout, bool training, Rng& rng) {
  layernorm_fwd(tape.ln_out, tape.ln, x, ln_g, ln_b);
  linear_fwd(tape.pre_act, tape.ln_out, w1, b1);
  tape.post_act = tape.pre_act;
  ThreadPool::instance().parallel_for(tape.post_act.size(), [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      tape.post_act.data[i] = gelu_value(tape.post_act.data[i]);
    }
  });
  Mat<T> out;
  linear_fwd(out, tape.post_act, w2, b2);
  dropout_fwd(out, tape.drop_mask, dropout, training, rng);
  for (int64_t i = 0; i < x.size(); ++i) x.data[i] += out.data[i];
}

template <typename T>
void ffn_block_bwd(Mat<T>& dx, FfnTape<T>& tape, const Mat<T>& ln_g, Mat<T>& d_ln_g,
                   Mat<T>& d_ln_b, const Mat<T>& w1, Mat<T>& dw1, Mat<T>& db1, const Mat<T>& w2,
                   Mat<T>& dw2, Mat<T>& db2) {
  // dx is simultaneously the upstream residual gradient and the output.
  Mat<T> d_out = dx;
  dropout_bwd(d_out, tape.drop_mask);
  Mat<T> d_post;
  linear_bwd(d_post, dw2, db2, d_out, tape.post_act, w2);
  ThreadPool::instance().parallel_for(d_post.size(), [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      d_post.data[i] *= gelu_grad(tape.pre_act.data[i]);
    }
  });
  Mat<T> d_ln_out;
  linear_bwd(d_ln_out, dw1, db1, d_post, tape.ln_out, w1);
  Mat<T> d_ln_in;
  layernorm_bwd(d_ln_in, d_ln_g, d_ln_b, d_ln_out, tape.ln, ln_g);
  for (int64_t i = 0; i < dx.size(); ++i) dx.data[i] += d_ln_in.data[i];
}

template <typename T>
const Mat<T>& position_table(const ModelConfig& cfg) {
  static thread_local Mat<T> pe_cache;
  if (pe_cache.rows < cfg.max_len || pe_cache.cols != cfg.hidden) {
    pe_cache = sinusoidal_positions<T>(cfg.max_len, cfg.hidden);
  }
  return pe_cache;
}

// Runs the encoder stack only, filling the enc_* fields of the tape.
template <typename T>
void encoder_forward(const Parameters<T>& params, const ModelBatch& batch, bool training,
                     Rng& rng, ForwardTape<T>& tape) {
  const ModelConfig& cfg = params.config;
  const int B = batch.batch;
  const int Ls = batch.src_len;
  if (Ls > cfg.max_len) throw ValidationError("forward: source exceeds max_len");
  const Mat<T>& pe = position_table<T>(cfg);

  if (cfg.input_mode == InputMode::unit_ids) {
    embed_ids(tape.enc_in, batch.src_ids, params.src_embed, cfg.vocab_size);
  } else {
    Mat<T> frames(static_cast<int64_t>(B) * Ls, cfg.input_dim);
    for (int64_t i = 0; i < frames.rows; ++i) {
      const auto& f = batch.src_frames[i];
      for (int j = 0; j < cfg.input_dim; ++j) frames.at(i, j) = static_cast<T>(f[j]);
    }
    linear_fwd(tape.enc_in, frames, params.in_proj_w, params.in_proj_b);
  }
  add_positions(tape.enc_in, B, Ls, pe);
  tape.enc_x = tape.enc_in;
  dropout_fwd(tape.enc_x, tape.enc_in_drop_mask, cfg.dropout, training, rng);

  tape.enc_layers.resize(cfg.layers_enc);
  for (int l = 0; l < cfg.layers_enc; ++l) {
    auto& lt = tape.enc_layers[l];
    const auto& lp = params.enc[l];
    layernorm_fwd(lt.ln1_out, lt.ln1, tape.enc_x, lp.ln1_g, lp.ln1_b);
    Mat<T> attn_out;
    attention_fwd(attn_out, lt.attn, lt.ln1_out, lt.ln1_out, lp.attn, B, Ls, Ls, cfg.heads,
                  batch.src_mask, /*causal=*/false);
    dropout_fwd(attn_out, lt.attn.drop_mask, cfg.dropout, training, rng);
    for (int64_t i = 0; i < tape.enc_x.size(); ++i) tape.enc_x.data[i] += attn_out.data[i];
    lt.after_attn = tape.enc_x;
    ffn_block_fwd(tape.enc_x, lt.ffn, lp.ln2_g, lp.ln2_b, lp.w1, lp.b1, lp.w2, lp.b2,
                  cfg.dropout, training, rng);
  }
  layernorm_fwd(tape.enc_out, tape.enc_final_ln, tape.enc_x, params.enc_ln_g, params.enc_ln_b);
}

template <typename T>
ForwardTape<T> forward_loss(const Parameters<T>& params, const ModelBatch& batch, bool training,
                            Rng& rng) {
  const ModelConfig& cfg = params.config;
  const int B = batch.batch;
  const int Ls = batch.src_len;
  const int Lt = batch.tgt_len;
  if (Ls > cfg.max_len || Lt > cfg.max_len) {
    throw ValidationError("forward: sequence exceeds max_len");
  }

  ForwardTape<T> tape;
  tape.batch = &batch;
  tape.training = training;
  encoder_forward(params, batch, training, rng, tape);
  const Mat<T>& pe_cache = position_table<T>(cfg);

  // Decoder
  embed_ids(tape.dec_in, batch.tgt_in, params.tgt_embed, cfg.vocab_size);
  add_positions(tape.dec_in, B, Lt, pe_cache);
  tape.dec_x = tape.dec_in;
  dropout_fwd(tape.dec_x, tape.dec_in_drop_mask, cfg.dropout, training, rng);

  std::vector<uint8_t> tgt_in_mask(static_cast<size_t>(B) * Lt, 1);  // causal handles the rest
  tape.dec_layers.resize(cfg.layers_dec);
  for (int l = 0; l < cfg.layers_dec; ++l) {
    auto& lt = tape.dec_layers[l];
    const auto& lp = params.dec[l];
    layernorm_fwd(lt.ln1_out, lt.ln1, tape.dec_x, lp.ln1_g, lp.ln1_b);
    Mat<T> self_out;
    attention_fwd(self_out, lt.self_attn, lt.ln1_out, lt.ln1_out, lp.self_attn, B, Lt, Lt,
                  cfg.heads, tgt_in_mask, /*causal=*/true);
    dropout_fwd(self_out, lt.self_attn.drop_mask, cfg.dropout, training, rng);
    for (int64_t i = 0; i < tape.dec_x.size(); ++i) tape.dec_x.data[i] += self_out.data[i];
    lt.after_self = tape.dec_x;

    layernorm_fwd(lt.ln2_out, lt.ln2, tape.dec_x, lp.ln2_g, lp.ln2_b);
    Mat<T> cross_out;
    attention_fwd(cross_out, lt.cross_attn, lt.ln2_out, tape.enc_out, lp.cross_attn, B, Lt, Ls,
                  cfg.heads, batch.src_mask, /*causal=*/false);
    dropout_fwd(cross_out, lt.cross_attn.drop_mask, cfg.dropout, training, rng);
    for (int64_t i = 0; i < tape.dec_x.size(); ++i) tape.dec_x.data[i] += cross_out.data[i];
    lt.after_cross = tape.dec_x;
    ffn_block_fwd(tape.dec_x, lt.ffn, lp.ln3_g, lp.ln3_b, lp.w1, lp.b1, lp.w2, lp.b2,
                  cfg.dropout, training, rng);
  }
  layernorm_fwd(tape.dec_out, tape.dec_final_ln, tape.dec_x, params.dec_ln_g, params.dec_ln_b);
  linear_fwd(tape.logits, tape.dec_out, params.out_w, params.out_b);

  // Label-smoothed cross entropy averaged over real target positions.
  const int V = cfg.vocab_size;
  const double eps = cfg.label_smoothing;
  double total = 0.0;
  int64_t tokens = 0;
  for (int64_t i = 0; i < tape.logits.rows; ++i) {
    if (!batch.tgt_mask[i]) continue;
    const T* li = tape.logits.row(i);
    T mx = li[0];
    for (int v = 1; v < V; ++v) mx = std::max(mx, li[v]);
    double denom = 0.0;
    double sum_logits = 0.0;
    for (int v = 0; v < V; ++v) {
      denom += std::exp(static_cast<double>(li[v] - mx));
      sum_logits += static_cast<double>(li[v] - mx);
    }
    double log_denom = std::log(denom);
    int ref = batch.tgt_out[i];
    // -sum_v q_v log p_v with q = (1-eps) one_hot + eps/V
    double ref_logit = static_cast<double>(li[ref] - mx);
    total += (1.0 - eps) * (log_denom - ref_logit) +
             eps * (log_denom - sum_logits / V);
    ++tokens;
  }
  tape.loss_tokens = tokens;
  tape.loss = tokens > 0 ? total / tokens : 0.0;
  if (!std::isfinite(tape.loss)) throw NumericError("forward: non-finite loss");
  return tape;
}

template <typename T>
void backward(const Parameters<T>& params, ForwardTape<T>& tape, Parameters<T>& grad) {
  const ModelConfig& cfg = params.config;
  const ModelBatch& batch = *tape.batch;
  const int B = batch.batch;
  const int Ls = batch.src_len;
  const int Lt = batch.tgt_len;
  const int V = cfg.vocab_size;
  const double eps = cfg.label_smoothing;

  // d logits from the fused label-smoothed softmax cross entropy.
  Mat<T> d_logits(tape.logits.rows, V);
  if (tape.loss_tokens > 0) {
    const T inv_tokens = T(1.0 / static_cast<double>(tape.loss_tokens));
    for (int64_t i = 0; i < tape.logits.rows; ++i) {
      if (!batch.tgt_mask[i]) continue;
      const T* li = tape.logits.row(i);
      T* di = d_logits.row(i);
      T mx = li[0];
      for (int v = 1; v < V; ++v) mx = std::max(mx, li[v]);
      T denom = T(0);
      for (int v = 0; v < V; ++v) denom += std::exp(li[v] - mx);
      const T uniform = T(eps) / static_cast<T>(V);
      int ref = batch.tgt_out[i];
      for (int v = 0; v < V; ++v) {
        T p = std::exp(li[v] - mx) / denom;
        T q = uniform + (v == ref ? T(1.0 - eps) : T(0));
        di[v] = (p - q) * inv_tokens;
      }
    }
  }

  Mat<T> d_dec_out;
  linear_bwd(d_dec_out, grad.out_w, grad.out_b, d_logits, tape.dec_out, params.out_w);

  Mat<T> d_dec_x;
  layernorm_bwd(d_dec_x, grad.dec_ln_g, grad.dec_ln_b, d_dec_out, tape.dec_final_ln,
                params.dec_ln_g);

  Mat<T> d_enc_out(static_cast<int64_t>(B) * Ls, cfg.hidden);  // accumulated over layers

  for (int l = cfg.layers_dec - 1; l >= 0; --l) {
    auto& lt = tape.dec_layers[l];
    const auto& lp = params.dec[l];
    auto& lg = grad.dec[l];
    ffn_block_bwd(d_dec_x, lt.ffn, lp.ln3_g, lg.ln3_g, lg.ln3_b, lp.w1, lg.w1, lg.b1, lp.w2,
                  lg.w2, lg.b2);

    Mat<T> d_cross = d_dec_x;
    dropout_bwd(d_cross, lt.cross_attn.drop_mask);
    Mat<T> d_ln2_out;
    attention_bwd(d_ln2_out, d_enc_out, d_cross, lt.cross_attn, tape.enc_out, lp.cross_attn,
                  lg.cross_attn, B, Lt, Ls, cfg.heads);
    Mat<T> d_ln2_in;
    layernorm_bwd(d_ln2_in, lg.ln2_g, lg.ln2_b, d_ln2_out, lt.ln2, lp.ln2_g);
    for (int64_t i = 0; i < d_dec_x.size(); ++i) d_dec_x.data[i] += d_ln2_in.data[i];

    Mat<T> d_self = d_dec_x;
    dropout_bwd(d_self, lt.self_attn.drop_mask);
    Mat<T> d_ln1_out;
    Mat<T> d_ln1_kv(static_cast<int64_t>(B) * Lt, cfg.hidden);
    attention_bwd(d_ln1_out, d_ln1_kv, d_self, lt.self_attn, lt.ln1_out, lp.self_attn,
                  lg.self_attn, B, Lt, Lt, cfg.heads);
    for (int64_t i = 0; i < d_ln1_out.size(); ++i) d_ln1_out.data[i] += d_ln1_kv.data[i];
    Mat<T> d_ln1_in;
    layernorm_bwd(d_ln1_in, lg.ln1_g, lg.ln1_b, d_ln1_out, lt.ln1, lp.ln1_g);
    for (int64_t i = 0; i < d_dec_x.size(); ++i) d_dec_x.data[i] += d_ln1_in.data[i];
  }

  dropout_bwd(d_dec_x, tape.dec_in_drop_mask);
  for (size_t i = 0; i < batch.tgt_in.size(); ++i) {
    const T* di = d_dec_x.row(static_cast<int64_t>(i));
    T* gi = grad.tgt_embed.row(batch.tgt_in[i]);
    for (int j = 0; j < cfg.hidden; ++j) gi[j] += di[j];
  }

  // Encoder backward: final LN consumes the enc_out gradient collected
  // from every cross-attention.
  Mat<T> d_enc_x;
  layernorm_bwd(d_enc_x, grad.enc_ln_g, grad.enc_ln_b, d_enc_out, tape.enc_final_ln,
                params.enc_ln_g);
  for (int l = cfg.layers_enc - 1; l >= 0; --l) {
    auto& lt = tape.enc_layers[l];
    const auto& lp = params.enc[l];
    auto& lg = grad.enc[l];
    ffn_block_bwd(d_enc_x, lt.ffn, lp.ln2_g, lg.ln2_g, lg.ln2_b, lp.w1, lg.w1, lg.b1, lp.w2,
                  lg.w2, lg.b2);
    Mat<T> d_attn = d_enc_x;
    dropout_bwd(d_attn, lt.attn.drop_mask);
    Mat<T> d_ln1_out;
    Mat<T> d_ln1_kv(static_cast<int64_t>(B) * Ls, cfg.hidden);
    attention_bwd(d_ln1_out, d_ln1_kv, d_attn, lt.attn, lt.ln1_out, lp.attn, lg.attn, B, Ls, Ls,
                  cfg.heads);
    for (int64_t i = 0; i < d_ln1_out.size(); ++i) d_ln1_out.data[i] += d_ln1_kv.data[i];
    Mat<T> d_ln1_in;
    layernorm_bwd(d_ln1_in, lg.ln1_g, lg.ln1_b, d_ln1_out, lt.ln1, lp.ln1_g);
    for (int64_t i = 0; i < d_enc_x.size(); ++i) d_enc_x.data[i] += d_ln1_in.data[i];
  }

  dropout_bwd(d_enc_x, tape.enc_in_drop_mask);
  if (cfg.input_mode == InputMode::unit_ids) {
    for (size_t i = 0; i < batch.src_ids.size(); ++i) {
      const T* di = d_enc_x.row(static_cast<int64_t>(i));
      T* gi = grad.src_embed.row(batch.src_ids[i]);
      for (int j = 0; j < cfg.hidden; ++j) gi[j] += di[j];
    }
  } else {
    Mat<T> frames(static_cast<int64_t>(B) * Ls, cfg.input_dim);
    for (int64_t i = 0; i < frames.rows; ++i) {
      const auto& f = batch.src_frames[i];
      for (int j = 0; j < cfg.input_dim; ++j) frames.at(i, j) = static_cast<T>(f[j]);
    }
    Mat<T> d_frames;
    linear_bwd(d_frames, grad.in_proj_w, grad.in_proj_b, d_enc_x, frames, params.in_proj_w);
  }
}

// ---------------------------------------------------------------------------
// Optimizer and training loop

template <typename T>
struct AdamState {
  Parameters<T> m, v;
  int64_t t = 0;
};

template <typename T>
void adam_step(Parameters<T>& params, Parameters<T>& grad, AdamState<T>& state,
               const TrainConfig& tc) {
  ++state.t;
  const double lr = lr_at_step(tc, state.t);
  const double b1 = tc.adam_beta1, b2 = tc.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));

  std::vector<Mat<T>*> ps, gs, ms, vs;
  visit_params(params, [&](const std::string&, Mat<T>& m) { ps.push_back(&m); });
  visit_params(grad, [&](const std::string&, Mat<T>& m) { gs.push_back(&m); });
  visit_params(state.m, [&](const std::string&, Mat<T>& m) { ms.push_back(&m); });
  visit_params(state.v, [&](const std::string&, Mat<T>& m) { vs.push_back(&m); });
  for (size_t i = 0; i < ps.size(); ++i) {
    T* p = ps[i]->data.data();
    T* g = gs[i]->data.data();
    T* m = ms[i]->data.data();
    T* v = vs[i]->data.data();
    const int64_t n = ps[i]->size();
    for (int64_t j = 0; j < n; ++j) {
      double gj = static_cast<double>(g[j]);
      double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
      double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + tc.adam_eps);
      p[j] = static_cast<T>(static_cast<double>(p[j]) - update);
      if (!std::isfinite(static_cast<double>(p[j]))) {
        throw NumericError("adam: non-finite parameter after update");
      }
    }
  }
  params.step = state.t;
}

template <typename T>
void zero_grad(Parameters<T>& grad) {
  visit_params(grad, [](const std::string&, Mat<T>& m) { m.fill(T(0)); });
}

// Mean of parameter snapshots; averaging n identical snapshots returns the
// snapshot unchanged.
template <typename T>
Parameters<T> average_checkpoints(const std::vector<Parameters<T>>& checkpoints) {
  if (checkpoints.empty()) throw ValidationError("average: no checkpoints");
  Parameters<T> avg = checkpoints[0];
  std::vector<Mat<T>*> out;
  visit_params(avg, [&](const std::string&, Mat<T>& m) { out.push_back(&m); });
  for (size_t c = 1; c < checkpoints.size(); ++c) {
    std::vector<const Mat<T>*> in;
    auto& cp = const_cast<Parameters<T>&>(checkpoints[c]);
    visit_params(cp, [&](const std::string&, Mat<T>& m) { in.push_back(&m); });
    for (size_t i = 0; i < out.size(); ++i) {
      for (int64_t j = 0; j < out[i]->size(); ++j) out[i]->data[j] += in[i]->data[j];
    }
  }
  const T inv = T(1) / static_cast<T>(checkpoints.size());
  for (auto* m : out) {
    for (auto& v : m->data) v *= inv;
  }
  avg.step = checkpoints.back().step;
  return avg;
}

}  // namespace dub
