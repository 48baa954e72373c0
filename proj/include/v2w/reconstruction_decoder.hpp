#pragma once

// Masked-LM head: dense (H,H) -> GELU -> layer norm -> output (H, N_vocab).
// Consumes the same hidden states the link path pools from, so one backward
// pass carries both objectives into the shared encoder.

#include <random>
#include <vector>

#include "v2w/autodiff.hpp"
#include "v2w/common.hpp"
#include "v2w/tokenizer.hpp"

namespace v2w {

struct DecoderHead {
  Param dense_w, dense_b;  // H x H, 1 x H
  Param ln_gain, ln_bias;  // 1 x H
  Param out_w, out_b;      // H x V, 1 x V

  DecoderHead() {
    dense_w.name = "decoder.dense.w";
    dense_b.name = "decoder.dense.b";
    ln_gain.name = "decoder.ln.gain";
    ln_bias.name = "decoder.ln.bias";
    out_w.name = "decoder.out.w";
    out_b.name = "decoder.out.b";
  }

  void init(int hidden, int vocab_size, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 0.02);
    auto normal = [&](Eigen::Index r, Eigen::Index c) {
      Mat m(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
      return m;
    };
    dense_w.value = normal(hidden, hidden);
    dense_b.value = Mat::Zero(1, hidden);
    ln_gain.value = Mat::Ones(1, hidden);
    ln_bias.value = Mat::Zero(1, hidden);
    out_w.value = normal(hidden, vocab_size);
    out_b.value = Mat::Zero(1, vocab_size);
  }

  void register_params(ParamSet& set) {
    set.add(dense_w);
    set.add(dense_b);
    set.add(ln_gain);
    set.add(ln_bias);
    set.add(out_w);
    set.add(out_b);
  }
};

// Logits over the vocabulary for each requested position; shape
// (|positions|, N_vocab). Positions must lie inside the sequence.
inline Tape::Node* reconstruct(Tape& tape, DecoderHead& head, Tape::Node* hidden,
                               const std::vector<int>& positions) {
  for (int p : positions)
    if (p < 0 || p >= hidden->val().rows())
      throw Error("reconstruct: position " + std::to_string(p) + " out of range");
  Tape::Node* rows = tape.select_rows(hidden, positions);
  Tape::Node* h = tape.add_rowvec(tape.matmul(rows, tape.param(head.dense_w)),
                                  tape.param(head.dense_b));
  h = tape.gelu(h);
  h = tape.layer_norm(h, tape.param(head.ln_gain), tape.param(head.ln_bias));
  return tape.add_rowvec(tape.matmul(h, tape.param(head.out_w)), tape.param(head.out_b));
}

struct ReconstructionLossResult {
  Tape::Node* loss = nullptr;  // 1x1 scalar node
  bool empty = false;          // true when the sequence had no targets
};

// Mean cross-entropy over the corrupted positions against the original
// tokens. A sequence without targets contributes a constant zero.
inline ReconstructionLossResult reconstruction_loss(Tape& tape, DecoderHead& head,
                                                    Tape::Node* hidden,
                                                    const MaskedSequence& masked) {
  ReconstructionLossResult result;
  if (masked.targets.empty()) {
    result.loss = tape.input(Mat::Zero(1, 1));
    result.empty = true;
    return result;
  }
  std::vector<int> positions;
  std::vector<int> originals;
  for (const auto& [pos, original] : masked.targets) {
    positions.push_back(pos);
    originals.push_back(original);
  }
  Tape::Node* logits = reconstruct(tape, head, hidden, positions);
  result.loss = tape.softmax_cross_entropy(logits, originals, /*mean=*/true);
  return result;
}

}  // namespace v2w
