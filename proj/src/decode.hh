// decode.hh
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
// Autoregressive generation. The two sampling variants share one core that
// consumes exactly one uniform draw per generated token and walks the
// candidate set in ascending id order, which makes topk(V) bit-identical
// to plain sampling under the same seed. Beam scores are unnormalized
// sums of token log-probabilities; finished hypotheses are retired at EOS.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "train.hh"

namespace dub {

enum class DecodeMethod { greedy, beam, sample, topk };

struct DecodeConfig {
  DecodeMethod method = DecodeMethod::beam;
  int beam_size = 5;
  int k = 10;
  int max_len = 128;
  uint64_t seed = 1;

  void validate(int vocab_size) const {
    if (beam_size < 1) throw ValidationError("decode: beam_size must be >= 1");
    if (method == DecodeMethod::topk && (k < 1 || k > vocab_size)) {
      throw ValidationError("decode: k out of range");
    }
    if (max_len < 1) throw ValidationError("decode: max_len must be >= 1");
  }
};

inline std::string decode_method_name(DecodeMethod m) {
  switch (m) {
    case DecodeMethod::greedy: return "greedy";
    case DecodeMethod::beam: return "beam";
    case DecodeMethod::sample: return "sample";
    case DecodeMethod::topk: return "topk";
  }
  return "?";
}

inline DecodeMethod decode_method_from_name(const std::string& name) {
  if (name == "greedy") return DecodeMethod::greedy;
  if (name == "beam") return DecodeMethod::beam;
  if (name == "sample") return DecodeMethod::sample;
  if (name == "topk") return DecodeMethod::topk;
  throw ValidationError("decode: unknown method '" + name + "'");
}

struct GenResult {
  std::vector<int> ids;   // emitted tokens, EOS excluded
  double logprob = 0.0;   // sum of chosen-token log probabilities (EOS included)
  bool truncated = false; // hit the length cap before EOS
};

template <typename T>
struct EncodedSource {
  Mat<T> out;                  // (batch*len) x hidden
  std::vector<uint8_t> mask;
  int batch = 0;
  int len = 0;
};

template <typename T>
EncodedSource<T> encode_sources(const Parameters<T>& params,
                                const std::vector<TrainingExample>& sources) {
  std::vector<size_t> order(sources.size());
  for (size_t i = 0; i < sources.size(); ++i) order[i] = i;
  ModelBatch batch = pack_batch(sources, order.begin(), order.end(), params.config.input_mode);
  ForwardTape<T> tape;
  tape.batch = &batch;
  Rng dummy(0);
  encoder_forward(params, batch, /*training=*/false, dummy, tape);
  EncodedSource<T> enc;
  enc.out = std::move(tape.enc_out);
  enc.mask = batch.src_mask;
  enc.batch = batch.batch;
  enc.len = batch.src_len;
  return enc;
}

// Last-position logits of the decoder run over each prefix. enc_rows maps
// every prefix to its row in the encoded source batch.
template <typename T>
Mat<T> decoder_last_logits(const Parameters<T>& params, const EncodedSource<T>& enc,
                           const std::vector<int>& enc_rows,
                           const std::vector<std::vector<int>>& prefixes) {
  const ModelConfig& cfg = params.config;
  const int B = static_cast<int>(prefixes.size());
  const int Ls = enc.len;
  int Lt = 1;
  for (const auto& p : prefixes) Lt = std::max(Lt, static_cast<int>(p.size()));
  if (Lt > cfg.max_len) throw ValidationError("decode: prefix exceeds max_len");

  // Expand the encoder rows so prefix i attends to its own source.
  Mat<T> enc_out(static_cast<int64_t>(B) * Ls, cfg.hidden);
  std::vector<uint8_t> enc_mask(static_cast<size_t>(B) * Ls);
  for (int b = 0; b < B; ++b) {
    const int64_t src_base = static_cast<int64_t>(enc_rows[b]) * Ls;
    const int64_t dst_base = static_cast<int64_t>(b) * Ls;
    for (int t = 0; t < Ls; ++t) {
      const T* src = enc.out.row(src_base + t);
      T* dst = enc_out.row(dst_base + t);
      for (int j = 0; j < cfg.hidden; ++j) dst[j] = src[j];
      enc_mask[dst_base + t] = enc.mask[src_base + t];
    }
  }

  std::vector<int> tgt_in(static_cast<size_t>(B) * Lt, Vocabulary::kPad);
  for (int b = 0; b < B; ++b) {
    for (size_t t = 0; t < prefixes[b].size(); ++t) {
      tgt_in[static_cast<size_t>(b) * Lt + t] = prefixes[b][t];
    }
  }

  const Mat<T>& pe = position_table<T>(cfg);
  Rng dummy(0);
  Mat<T> x;
  embed_ids(x, tgt_in, params.tgt_embed, cfg.vocab_size);
  add_positions(x, B, Lt, pe);

  std::vector<uint8_t> all_ones(static_cast<size_t>(B) * Lt, 1);
  for (int l = 0; l < cfg.layers_dec; ++l) {
    const auto& lp = params.dec[l];
    LayerNormTape<T> ln_tape;
    Mat<T> ln_out;
    layernorm_fwd(ln_out, ln_tape, x, lp.ln1_g, lp.ln1_b);
    AttentionTape<T> at;
    Mat<T> self_out;
    attention_fwd(self_out, at, ln_out, ln_out, lp.self_attn, B, Lt, Lt, cfg.heads, all_ones,
                  /*causal=*/true);
    for (int64_t i = 0; i < x.size(); ++i) x.data[i] += self_out.data[i];

    layernorm_fwd(ln_out, ln_tape, x, lp.ln2_g, lp.ln2_b);
    AttentionTape<T> ct;
    Mat<T> cross_out;
    attention_fwd(cross_out, ct, ln_out, enc_out, lp.cross_attn, B, Lt, Ls, cfg.heads, enc_mask,
                  /*causal=*/false);
    for (int64_t i = 0; i < x.size(); ++i) x.data[i] += cross_out.data[i];

    FfnTape<T> ft;
    ffn_block_fwd(x, ft, lp.ln3_g, lp.ln3_b, lp.w1, lp.b1, lp.w2, lp.b2, 0.0, false, dummy);
  }
  LayerNormTape<T> fl;
  Mat<T> x_norm;
  layernorm_fwd(x_norm, fl, x, params.dec_ln_g, params.dec_ln_b);

  // Only the last real position of each prefix is projected.
  Mat<T> last(B, cfg.hidden);
  for (int b = 0; b < B; ++b) {
    int64_t rowidx = static_cast<int64_t>(b) * Lt +
                     static_cast<int64_t>(prefixes[b].size()) - 1;
    const T* src = x_norm.row(rowidx);
    T* dst = last.row(b);
    for (int j = 0; j < cfg.hidden; ++j) dst[j] = src[j];
  }
  Mat<T> logits;
  linear_fwd(logits, last, params.out_w, params.out_b);
  return logits;
}

// Incremental decoding state: cached self-attention K/V per layer plus the
// fixed cross-attention projections of the encoder output. Appending one
// position computes exactly the same dot products as a full re-run of the
// prefix, so cached and uncached decoding are bit-identical.
template <typename T>
struct GenCache {
  int batch = 0;
  int cap = 0;   // maximum positions
  int t = 0;     // positions filled so far
  std::vector<Mat<T>> self_k, self_v;    // per layer: (batch*cap) x hidden
  std::vector<Mat<T>> cross_k, cross_v;  // per layer: (batch*src_len) x hidden
};

template <typename T>
GenCache<T> init_gen_cache(const Parameters<T>& params, const EncodedSource<T>& enc, int cap) {
  const ModelConfig& cfg = params.config;
  GenCache<T> cache;
  cache.batch = enc.batch;
  cache.cap = cap;
  cache.self_k.resize(cfg.layers_dec);
  cache.self_v.resize(cfg.layers_dec);
  cache.cross_k.resize(cfg.layers_dec);
  cache.cross_v.resize(cfg.layers_dec);
  for (int l = 0; l < cfg.layers_dec; ++l) {
    cache.self_k[l] = Mat<T>(static_cast<int64_t>(enc.batch) * cap, cfg.hidden);
    cache.self_v[l] = Mat<T>(static_cast<int64_t>(enc.batch) * cap, cfg.hidden);
    linear_fwd(cache.cross_k[l], enc.out, params.dec[l].cross_attn.wk,
               params.dec[l].cross_attn.bk);
    linear_fwd(cache.cross_v[l], enc.out, params.dec[l].cross_attn.wv,
               params.dec[l].cross_attn.bv);
  }
  return cache;
}

// Runs one decoder step for every batch row (token_ids has batch entries,
// the position is cache.t) and returns the next-token logits.
template <typename T>
Mat<T> gen_step(const Parameters<T>& params, const EncodedSource<T>& enc, GenCache<T>& cache,
                const std::vector<int>& token_ids) {
  const ModelConfig& cfg = params.config;
  const int B = cache.batch;
  const int h = cfg.hidden;
  const int heads = cfg.heads;
  const int dk = h / heads;
  const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dk)));
  if (cache.t >= cache.cap) throw ValidationError("decode: generation cache overflow");
  const int pos = cache.t;

  Mat<T> x;
  embed_ids(x, token_ids, params.tgt_embed, cfg.vocab_size);
  const Mat<T>& pe = position_table<T>(cfg);
  for (int b = 0; b < B; ++b) {
    T* xb = x.row(b);
    const T* pp = pe.row(pos);
    for (int j = 0; j < h; ++j) xb[j] += pp[j];
  }

  LayerNormTape<T> ln_tape;
  for (int l = 0; l < cfg.layers_dec; ++l) {
    const auto& lp = params.dec[l];
    Mat<T> ln_out;
    layernorm_fwd(ln_out, ln_tape, x, lp.ln1_g, lp.ln1_b);
    Mat<T> q, k, v;
    linear_fwd(q, ln_out, lp.self_attn.wq, lp.self_attn.bq);
    linear_fwd(k, ln_out, lp.self_attn.wk, lp.self_attn.bk);
    linear_fwd(v, ln_out, lp.self_attn.wv, lp.self_attn.bv);
    Mat<T>& ck = cache.self_k[l];
    Mat<T>& cv = cache.self_v[l];
    Mat<T> ctx(B, h);
    ThreadPool::instance().parallel_for(B, [&](int64_t b0, int64_t b1) {
      for (int64_t b = b0; b < b1; ++b) {
        T* ck_row = ck.row(b * cache.cap + pos);
        T* cv_row = cv.row(b * cache.cap + pos);
        const T* kb = k.row(b);
        const T* vb = v.row(b);
        for (int j = 0; j < h; ++j) {
          ck_row[j] = kb[j];
          cv_row[j] = vb[j];
        }
        for (int hd = 0; hd < heads; ++hd) {
          const T* qb = q.row(b) + hd * dk;
          T row_max = T(-1e30);
          std::vector<T> scores(pos + 1);
          for (int j = 0; j <= pos; ++j) {
            const T* kj = ck.row(b * cache.cap + j) + hd * dk;
            T acc = T(0);
            for (int c = 0; c < dk; ++c) acc += qb[c] * kj[c];
            scores[j] = acc * scale;
            if (scores[j] > row_max) row_max = scores[j];
          }
          T denom = T(0);
          for (int j = 0; j <= pos; ++j) {
            scores[j] = std::exp(scores[j] - row_max);
            denom += scores[j];
          }
          T* ctx_b = ctx.row(b) + hd * dk;
          for (int c = 0; c < dk; ++c) ctx_b[c] = T(0);
          for (int j = 0; j <= pos; ++j) {
            T p = scores[j] / denom;
            if (p == T(0)) continue;
            const T* vj = cv.row(b * cache.cap + j) + hd * dk;
            for (int c = 0; c < dk; ++c) ctx_b[c] += p * vj[c];
          }
        }
      }
    });
    Mat<T> self_out;
    linear_fwd(self_out, ctx, lp.self_attn.wo, lp.self_attn.bo);
    for (int64_t i = 0; i < x.size(); ++i) x.data[i] += self_out.data[i];

    layernorm_fwd(ln_out, ln_tape, x, lp.ln2_g, lp.ln2_b);
    Mat<T> q2;
    linear_fwd(q2, ln_out, lp.cross_attn.wq, lp.cross_attn.bq);
    const Mat<T>& xk = cache.cross_k[l];
    const Mat<T>& xv = cache.cross_v[l];
    Mat<T> cross_ctx(B, h);
    ThreadPool::instance().parallel_for(B, [&](int64_t b0, int64_t b1) {
      for (int64_t b = b0; b < b1; ++b) {
        for (int hd = 0; hd < heads; ++hd) {
          const T* qb = q2.row(b) + hd * dk;
          T row_max = T(-1e30);
          std::vector<T> scores(enc.len);
          for (int j = 0; j < enc.len; ++j) {
            T s = T(-1e30);
            if (enc.mask[b * enc.len + j]) {
              const T* kj = xk.row(b * enc.len + j) + hd * dk;
              T acc = T(0);
              for (int c = 0; c < dk; ++c) acc += qb[c] * kj[c];
              s = acc * scale;
            }
            scores[j] = s;
            if (s > row_max) row_max = s;
          }
          T denom = T(0);
          for (int j = 0; j < enc.len; ++j) {
            scores[j] = std::exp(scores[j] - row_max);
            denom += scores[j];
          }
          T* ctx_b = cross_ctx.row(b) + hd * dk;
          for (int c = 0; c < dk; ++c) ctx_b[c] = T(0);
          for (int j = 0; j < enc.len; ++j) {
            T p = scores[j] / denom;
            if (p == T(0)) continue;
            const T* vj = xv.row(b * enc.len + j) + hd * dk;
            for (int c = 0; c < dk; ++c) ctx_b[c] += p * vj[c];
          }
        }
      }
    });
    Mat<T> cross_out;
    linear_fwd(cross_out, cross_ctx, lp.cross_attn.wo, lp.cross_attn.bo);
    for (int64_t i = 0; i < x.size(); ++i) x.data[i] += cross_out.data[i];

    FfnTape<T> ft;
    Rng dummy(0);
    ffn_block_fwd(x, ft, lp.ln3_g, lp.ln3_b, lp.w1, lp.b1, lp.w2, lp.b2, 0.0, false, dummy);
  }
  Mat<T> x_norm;
  layernorm_fwd(x_norm, ln_tape, x, params.dec_ln_g, params.dec_ln_b);
  Mat<T> logits;
  linear_fwd(logits, x_norm, params.out_w, params.out_b);
  ++cache.t;
  return logits;
}

template <typename T>
std::vector<T> softmax_row(const T* logits, int n) {
  T mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  std::vector<T> p(n);
  T denom = T(0);
  for (int i = 0; i < n; ++i) {
    p[i] = std::exp(logits[i] - mx);
    denom += p[i];
  }
  for (int i = 0; i < n; ++i) p[i] /= denom;
  return p;
}

template <typename T>
GenResult beam_search(const Parameters<T>& params, const TrainingExample& source, int beam_size,
                      int max_len);

// Restrict to the k most probable ids (ties to the lowest id), renormalize
// and sample with a single uniform draw, walking candidates in ascending
// id order. k == V reduces exactly to ancestral sampling.
template <typename T>
int sample_restricted(const std::vector<T>& probs, int k, Rng& rng) {
  const int v = static_cast<int>(probs.size());
  std::vector<int> ids(v);
  for (int i = 0; i < v; ++i) ids[i] = i;
  if (k < v) {
    std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), [&](int a, int b) {
      if (probs[a] != probs[b]) return probs[a] > probs[b];
      return a < b;
    });
    ids.resize(k);
    std::sort(ids.begin(), ids.end());
  }
  T total = T(0);
  for (int id : ids) total += probs[id];
  const T threshold = static_cast<T>(rng.uniform()) * total;
  T cum = T(0);
  for (int id : ids) {
    cum += probs[id];
    if (threshold < cum) return id;
  }
  return ids.back();
}

// Batched lockstep generation for greedy/sample/topk. Each item draws from
// its own substream of config.seed indexed by item_index_base + i, so the
// result is independent of how items are grouped into batches.
template <typename T>
std::vector<GenResult> generate_batch(const Parameters<T>& params,
                                      const std::vector<TrainingExample>& sources,
                                      const DecodeConfig& config,
                                      uint64_t item_index_base = 0,
                                      const std::vector<int>* per_item_cap = nullptr) {
  config.validate(params.config.vocab_size);
  const int V = params.config.vocab_size;
  const int n = static_cast<int>(sources.size());
  std::vector<GenResult> results(n);
  if (n == 0) return results;

  if (config.method == DecodeMethod::beam) {
    for (int i = 0; i < n; ++i) {
      int cap = per_item_cap ? (*per_item_cap)[i] : config.max_len;
      results[i] = beam_search(params, sources[i], config.beam_size, cap);
    }
    return results;
  }

  EncodedSource<T> enc = encode_sources(params, sources);
  std::vector<Rng> rngs;
  rngs.reserve(n);
  Rng root(config.seed);
  for (int i = 0; i < n; ++i) rngs.push_back(root.substream(item_index_base + i));

  int cap_max = 0;
  for (int i = 0; i < n; ++i) {
    cap_max = std::max(cap_max, per_item_cap ? (*per_item_cap)[i] : config.max_len);
  }
  if (cap_max + 1 > params.config.max_len) {
    throw ValidationError("decode: generation cap exceeds model max_len");
  }

  GenCache<T> cache = init_gen_cache(params, enc, cap_max + 1);
  std::vector<int> current(n, Vocabulary::kBos);
  std::vector<uint8_t> done(n, 0);
  int remaining = n;

  const int k = config.method == DecodeMethod::topk   ? config.k
                : config.method == DecodeMethod::sample ? V
                                                        : 1;
  while (remaining > 0) {
    Mat<T> logits = gen_step(params, enc, cache, current);
    for (int i = 0; i < n; ++i) {
      if (done[i]) {
        current[i] = Vocabulary::kPad;
        continue;
      }
      std::vector<T> probs = softmax_row(logits.row(i), V);
      int tok;
      if (config.method == DecodeMethod::greedy) {
        tok = 0;
        for (int v = 1; v < V; ++v) {
          if (probs[v] > probs[tok]) tok = v;
        }
      } else {
        tok = sample_restricted(probs, k, rngs[i]);
      }
      results[i].logprob += std::log(static_cast<double>(probs[tok]));
      if (tok == Vocabulary::kEos) {
        done[i] = 1;
        --remaining;
        current[i] = Vocabulary::kPad;
        continue;
      }
      results[i].ids.push_back(tok);
      current[i] = tok;
      int cap = per_item_cap ? (*per_item_cap)[i] : config.max_len;
      if (static_cast<int>(results[i].ids.size()) >= cap) {
        results[i].truncated = true;
        done[i] = 1;
        --remaining;
      }
    }
  }
  return results;
}

template <typename T>
GenResult beam_search(const Parameters<T>& params, const TrainingExample& source, int beam_size,
                      int max_len) {
  if (beam_size < 1) throw ValidationError("beam: beam_size must be >= 1");
  const int V = params.config.vocab_size;
  EncodedSource<T> enc = encode_sources(params, {source});

  struct Hyp {
    std::vector<int> prefix;  // including BOS
    double score = 0.0;
  };
  auto hyp_less = [](const Hyp& a, const Hyp& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.prefix < b.prefix;  // deterministic, lowest ids first
  };

  std::vector<Hyp> live{{std::vector<int>{Vocabulary::kBos}, 0.0}};
  std::vector<Hyp> finished;

  for (int step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<std::vector<int>> prefixes;
    std::vector<int> enc_rows(live.size(), 0);
    for (const auto& h : live) prefixes.push_back(h.prefix);
    Mat<T> logits = decoder_last_logits(params, enc, enc_rows, prefixes);

    std::vector<Hyp> candidates;
    candidates.reserve(live.size() * V);
    for (size_t b = 0; b < live.size(); ++b) {
      std::vector<T> probs = softmax_row(logits.row(static_cast<int64_t>(b)), V);
      for (int v = 0; v < V; ++v) {
        Hyp h = live[b];
        h.score += std::log(static_cast<double>(probs[v]));
        h.prefix.push_back(v);
        candidates.push_back(std::move(h));
      }
    }
    // Keep the top beam_size extensions; those ending at EOS retire, the
    // rest stay live. An EOS outside the top slots is pruned like any
    // other extension, which makes beam(1) coincide with greedy.
    std::sort(candidates.begin(), candidates.end(), hyp_less);
    if (static_cast<int>(candidates.size()) > beam_size) candidates.resize(beam_size);
    live.clear();
    for (auto& h : candidates) {
      if (h.prefix.back() == Vocabulary::kEos) {
        h.prefix.pop_back();
        finished.push_back(std::move(h));
      } else {
        live.push_back(std::move(h));
      }
    }

    // Token log-probs are <= 0, so no live hypothesis can end above the
    // best finished score once it falls below it.
    if (!finished.empty()) {
      double best_finished = -std::numeric_limits<double>::infinity();
      for (const auto& f : finished) best_finished = std::max(best_finished, f.score);
      bool live_can_win = false;
      for (const auto& h : live) {
        if (h.score > best_finished) {
          live_can_win = true;
          break;
        }
      }
      if (!live_can_win) break;
    }
  }

  // Hypotheses still live at the cap are terminal too; the result is the
  // best-scoring terminal of either kind.
  GenResult res;
  const Hyp* best = nullptr;
  bool best_truncated = false;
  for (const auto& f : finished) {
    if (!best || hyp_less(f, *best)) best = &f;
  }
  for (const auto& h : live) {
    if (!best || hyp_less(h, *best)) {
      best = &h;
      best_truncated = true;
    }
  }
  res.ids.assign(best->prefix.begin() + 1, best->prefix.end());
  res.logprob = best->score;
  res.truncated = best_truncated;
  return res;
}

template <typename T>
GenResult greedy_decode(const Parameters<T>& params, const TrainingExample& source, int max_len) {
  DecodeConfig cfg;
  cfg.method = DecodeMethod::greedy;
  cfg.max_len = max_len;
  return generate_batch(params, {source}, cfg)[0];
}

}  // namespace dub
