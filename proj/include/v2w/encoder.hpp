#pragma once

// Bidirectional transformer encoder built on the autodiff tape. Pre-norm
// blocks: x += Attn(LN(x)); x += FFN(LN(x)); final layer norm on top. Pad
// positions are excluded from attention through the masked softmax, and from
// MEAN/MAX pooling through the valid-position list, so padding can never
// influence content activations.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "v2w/autodiff.hpp"
#include "v2w/common.hpp"
#include "v2w/tokenizer.hpp"

namespace v2w {

enum class Pooling { kCls, kMean, kMax };

inline std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::kCls: return "cls";
    case Pooling::kMean: return "mean";
    case Pooling::kMax: return "max";
  }
  throw Error("bad pooling value");
}

inline Pooling pooling_from_string(const std::string& s) {
  if (s == "cls") return Pooling::kCls;
  if (s == "mean") return Pooling::kMean;
  if (s == "max") return Pooling::kMax;
  throw Error("unknown pooling kind: " + s);
}

struct EncoderConfig {
  int layers = 4;
  int hidden = 128;
  int heads = 4;
  int seq_len = 256;
  int vocab_size = 4000;
  int frozen_layers = 2;
  int ffn_mult = 4;
  double dropout = 0.1;

  void validate() const {
    if (layers < 1) throw Error("config: layers must be >= 1");
    if (hidden < 1 || heads < 1) throw Error("config: hidden/heads must be >= 1");
    if (hidden % heads != 0) throw Error("config: hidden must be divisible by heads");
    if (seq_len < 3) throw Error("config: seq_len must be >= 3");
    if (vocab_size <= Vocabulary::kNumSpecials) throw Error("config: vocab_size too small");
    if (frozen_layers < 0 || frozen_layers > layers)
      throw Error("config: frozen_layers must be within [0, layers]");
    if (ffn_mult < 1) throw Error("config: ffn_mult must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw Error("config: dropout must be in [0,1)");
  }

  bool operator==(const EncoderConfig&) const = default;
};

struct EncoderLayerParams {
  Param ln1_gain, ln1_bias;
  Param wq, bq, wk, bk, wv, bv, wo, bo;
  Param ln2_gain, ln2_bias;
  Param ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

class EncoderModel {
 public:
  EncoderConfig cfg;
  Param tok_embed;  // vocab x H
  Param pos_embed;  // T x H
  Param emb_gain, emb_bias;  // layer norm over the embedding sum
  std::vector<EncoderLayerParams> layers;
  Param final_gain, final_bias;
  Param pooler_w, pooler_b;  // the transformation applied after pooling

  explicit EncoderModel(const EncoderConfig& config) : cfg(config) {
    cfg.validate();
    layers.resize(static_cast<std::size_t>(cfg.layers));
    name_params();
  }

  void register_params(ParamSet& set) {
    set.add(tok_embed);
    set.add(pos_embed);
    set.add(emb_gain);
    set.add(emb_bias);
    for (auto& l : layers) {
      set.add(l.ln1_gain);
      set.add(l.ln1_bias);
      set.add(l.wq);
      set.add(l.bq);
      set.add(l.wk);
      set.add(l.bk);
      set.add(l.wv);
      set.add(l.bv);
      set.add(l.wo);
      set.add(l.bo);
      set.add(l.ln2_gain);
      set.add(l.ln2_bias);
      set.add(l.ffn_w1);
      set.add(l.ffn_b1);
      set.add(l.ffn_w2);
      set.add(l.ffn_b2);
    }
    set.add(final_gain);
    set.add(final_bias);
    set.add(pooler_w);
    set.add(pooler_b);
  }

  // normal(0, 0.02) matrices, zero biases, unit layer-norm gains.
  void init(std::mt19937_64& rng) {
    const int H = cfg.hidden, F = cfg.hidden * cfg.ffn_mult;
    auto normal = [&rng](Eigen::Index r, Eigen::Index c) {
      std::normal_distribution<double> dist(0.0, 0.02);
      Mat m(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
      return m;
    };
    tok_embed.value = normal(cfg.vocab_size, H);
    pos_embed.value = normal(cfg.seq_len, H);
    emb_gain.value = Mat::Ones(1, H);
    emb_bias.value = Mat::Zero(1, H);
    for (auto& l : layers) {
      l.ln1_gain.value = Mat::Ones(1, H);
      l.ln1_bias.value = Mat::Zero(1, H);
      l.wq.value = normal(H, H);
      l.bq.value = Mat::Zero(1, H);
      l.wk.value = normal(H, H);
      l.bk.value = Mat::Zero(1, H);
      l.wv.value = normal(H, H);
      l.bv.value = Mat::Zero(1, H);
      l.wo.value = normal(H, H);
      l.bo.value = Mat::Zero(1, H);
      l.ln2_gain.value = Mat::Ones(1, H);
      l.ln2_bias.value = Mat::Zero(1, H);
      l.ffn_w1.value = normal(H, F);
      l.ffn_b1.value = Mat::Zero(1, F);
      l.ffn_w2.value = normal(F, H);
      l.ffn_b2.value = Mat::Zero(1, H);
    }
    final_gain.value = Mat::Ones(1, H);
    final_bias.value = Mat::Zero(1, H);
    pooler_w.value = normal(H, H);
    pooler_b.value = Mat::Zero(1, H);
  }

  // Freezes the embeddings and the bottom f layers; everything above stays
  // trainable (pooler included).
  void set_trainable(int f) {
    if (f < 0 || f > cfg.layers)
      throw Error("set_trainable: frozen layer count " + std::to_string(f) +
                  " outside [0, " + std::to_string(cfg.layers) + "]");
    cfg.frozen_layers = f;
    bool embed_trainable = f == 0;
    tok_embed.trainable = embed_trainable;
    pos_embed.trainable = embed_trainable;
    emb_gain.trainable = embed_trainable;
    emb_bias.trainable = embed_trainable;
    for (int i = 0; i < cfg.layers; ++i) {
      bool trainable = i >= f;
      auto& l = layers[static_cast<std::size_t>(i)];
      for (Param* p : {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv,
                       &l.bv, &l.wo, &l.bo, &l.ln2_gain, &l.ln2_bias, &l.ffn_w1,
                       &l.ffn_b1, &l.ffn_w2, &l.ffn_b2})
        p->trainable = trainable;
    }
    final_gain.trainable = true;
    final_bias.trainable = true;
    pooler_w.trainable = true;
    pooler_b.trainable = true;
  }

 private:
  void name_params() {
    tok_embed.name = "tok_embed";
    pos_embed.name = "pos_embed";
    emb_gain.name = "emb_ln.gain";
    emb_bias.name = "emb_ln.bias";
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& l = layers[i];
      std::string p = "layer" + std::to_string(i) + ".";
      l.ln1_gain.name = p + "ln1.gain";
      l.ln1_bias.name = p + "ln1.bias";
      l.wq.name = p + "attn.wq";
      l.bq.name = p + "attn.bq";
      l.wk.name = p + "attn.wk";
      l.bk.name = p + "attn.bk";
      l.wv.name = p + "attn.wv";
      l.bv.name = p + "attn.bv";
      l.wo.name = p + "attn.wo";
      l.bo.name = p + "attn.bo";
      l.ln2_gain.name = p + "ln2.gain";
      l.ln2_bias.name = p + "ln2.bias";
      l.ffn_w1.name = p + "ffn.w1";
      l.ffn_b1.name = p + "ffn.b1";
      l.ffn_w2.name = p + "ffn.w2";
      l.ffn_b2.name = p + "ffn.b2";
    }
    final_gain.name = "final_ln.gain";
    final_bias.name = "final_ln.bias";
    pooler_w.name = "pooler.w";
    pooler_b.name = "pooler.b";
  }
};

inline std::vector<int> valid_positions(const TokenSequence& seq) {
  std::vector<int> out;
  for (std::size_t i = 0; i < seq.attention_mask.size(); ++i)
    if (seq.attention_mask[i] == 1) out.push_back(static_cast<int>(i));
  return out;
}

// Full encoder pass; returns the T x H final hidden states node.
inline Tape::Node* encoder_forward(Tape& tape, EncoderModel& m, const TokenSequence& seq,
                                   bool train, std::mt19937_64& dropout_rng) {
  if (static_cast<int>(seq.ids.size()) != m.cfg.seq_len)
    throw Error("encoder: sequence length " + std::to_string(seq.ids.size()) +
                " does not match configured " + std::to_string(m.cfg.seq_len));
  std::vector<int> valid = valid_positions(seq);
  if (valid.empty()) throw Error("encoder: attention mask is all-zero");

  const int H = m.cfg.hidden, A = m.cfg.heads, d = H / A;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Tape::Node* tok = tape.select_rows(tape.param(m.tok_embed), seq.ids);
  Tape::Node* x = tape.add(tok, tape.param(m.pos_embed));
  x = tape.layer_norm(x, tape.param(m.emb_gain), tape.param(m.emb_bias));
  x = tape.dropout(x, m.cfg.dropout, dropout_rng, train);

  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    auto& l = m.layers[li];
    Tape::Node* h = tape.layer_norm(x, tape.param(l.ln1_gain), tape.param(l.ln1_bias));
    Tape::Node* q = tape.add_rowvec(tape.matmul(h, tape.param(l.wq)), tape.param(l.bq));
    Tape::Node* k = tape.add_rowvec(tape.matmul(h, tape.param(l.wk)), tape.param(l.bk));
    Tape::Node* v = tape.add_rowvec(tape.matmul(h, tape.param(l.wv)), tape.param(l.bv));
    std::vector<Tape::Node*> heads;
    heads.reserve(static_cast<std::size_t>(A));
    for (int a = 0; a < A; ++a) {
      Tape::Node* qa = tape.slice_cols(q, a * d, d);
      Tape::Node* ka = tape.slice_cols(k, a * d, d);
      Tape::Node* va = tape.slice_cols(v, a * d, d);
      Tape::Node* scores = tape.scale(tape.matmul_bt(qa, ka), inv_sqrt_d);
      Tape::Node* probs = tape.masked_softmax_rows(scores, valid);
      heads.push_back(tape.matmul(probs, va));
    }
    Tape::Node* ctx = tape.concat_cols(heads);
    Tape::Node* attn = tape.add_rowvec(tape.matmul(ctx, tape.param(l.wo)), tape.param(l.bo));
    attn = tape.dropout(attn, m.cfg.dropout, dropout_rng, train);
    x = tape.add(x, attn);

    Tape::Node* h2 = tape.layer_norm(x, tape.param(l.ln2_gain), tape.param(l.ln2_bias));
    Tape::Node* f = tape.add_rowvec(tape.matmul(h2, tape.param(l.ffn_w1)), tape.param(l.ffn_b1));
    f = tape.gelu(f);
    f = tape.add_rowvec(tape.matmul(f, tape.param(l.ffn_w2)), tape.param(l.ffn_b2));
    f = tape.dropout(f, m.cfg.dropout, dropout_rng, train);
    x = tape.add(x, f);

    if (!x->val().allFinite())
      throw Error("encoder: non-finite activations in layer " + std::to_string(li + 1));
  }
  return tape.layer_norm(x, tape.param(m.final_gain), tape.param(m.final_bias));
}

// Reduction half of pooling, before the transformation layer. Exposed
// separately so the reductions stay directly checkable.
inline Tape::Node* pool_reduce(Tape& tape, Tape::Node* hidden, const TokenSequence& seq,
                               Pooling kind) {
  std::vector<int> valid = valid_positions(seq);
  if (valid.empty()) throw Error("pool: attention mask is all-zero");
  switch (kind) {
    case Pooling::kCls: return tape.row(hidden, 0);
    case Pooling::kMean: return tape.mean_rows(hidden, valid);
    case Pooling::kMax: return tape.max_rows(hidden, valid);
  }
  throw Error("bad pooling value");
}

// pooled = tanh(reduce(hidden) W + b), a 1 x H row.
inline Tape::Node* encoder_pool(Tape& tape, EncoderModel& m, Tape::Node* hidden,
                                const TokenSequence& seq, Pooling kind) {
  Tape::Node* reduced = pool_reduce(tape, hidden, seq, kind);
  Tape::Node* z = tape.add_rowvec(tape.matmul(reduced, tape.param(m.pooler_w)),
                                  tape.param(m.pooler_b));
  return tape.tanh_op(z);
}

}  // namespace v2w
