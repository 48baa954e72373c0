#pragma once

// Combination of two pooled vectors plus the two-neuron link/unlink softmax
// head. Index 0 is unlink, index 1 is link; a pair counts as associated only
// when link > unlink strictly, a tie stays unlink.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "v2w/autodiff.hpp"
#include "v2w/common.hpp"

namespace v2w {

enum class Combination {
  kConcat,            // (x, y)            2H
  kAbsDiff,           // |x - y|           H
  kMul,               // x * y             H
  kAbsDiffMul,        // (|x-y|, x*y)      2H
  kConcatMul,         // (x, y, x*y)       3H
  kConcatAbsDiff,     // (x, y, |x-y|)     3H
  kConcatAbsDiffMul,  // (x, y, |x-y|, x*y) 4H
};

inline std::string to_string(Combination c) {
  switch (c) {
    case Combination::kConcat: return "concat";
    case Combination::kAbsDiff: return "absdiff";
    case Combination::kMul: return "mul";
    case Combination::kAbsDiffMul: return "absdiff_mul";
    case Combination::kConcatMul: return "concat_mul";
    case Combination::kConcatAbsDiff: return "concat_absdiff";
    case Combination::kConcatAbsDiffMul: return "concat_absdiff_mul";
  }
  throw Error("bad combination value");
}

inline Combination combination_from_string(const std::string& s) {
  if (s == "concat") return Combination::kConcat;
  if (s == "absdiff") return Combination::kAbsDiff;
  if (s == "mul") return Combination::kMul;
  if (s == "absdiff_mul") return Combination::kAbsDiffMul;
  if (s == "concat_mul") return Combination::kConcatMul;
  if (s == "concat_absdiff") return Combination::kConcatAbsDiff;
  if (s == "concat_absdiff_mul") return Combination::kConcatAbsDiffMul;
  throw Error("unknown combination kind: " + s);
}

inline int combined_dim(Combination c, int hidden) {
  switch (c) {
    case Combination::kConcat: return 2 * hidden;
    case Combination::kAbsDiff: return hidden;
    case Combination::kMul: return hidden;
    case Combination::kAbsDiffMul: return 2 * hidden;
    case Combination::kConcatMul: return 3 * hidden;
    case Combination::kConcatAbsDiff: return 3 * hidden;
    case Combination::kConcatAbsDiffMul: return 4 * hidden;
  }
  throw Error("bad combination value");
}

// x, y are 1 x H nodes on the same tape.
inline Tape::Node* combine(Tape& tape, Tape::Node* x, Tape::Node* y, Combination kind) {
  if (x->val().cols() != y->val().cols() || x->val().rows() != 1 || y->val().rows() != 1)
    throw Error("combine: inputs must be equal-length row vectors");
  switch (kind) {
    case Combination::kConcat: return tape.concat_cols({x, y});
    case Combination::kAbsDiff: return tape.abs(tape.sub(x, y));
    case Combination::kMul: return tape.hadamard(x, y);
    case Combination::kAbsDiffMul:
      return tape.concat_cols({tape.abs(tape.sub(x, y)), tape.hadamard(x, y)});
    case Combination::kConcatMul: return tape.concat_cols({x, y, tape.hadamard(x, y)});
    case Combination::kConcatAbsDiff: return tape.concat_cols({x, y, tape.abs(tape.sub(x, y))});
    case Combination::kConcatAbsDiffMul:
      return tape.concat_cols({x, y, tape.abs(tape.sub(x, y)), tape.hadamard(x, y)});
  }
  throw Error("bad combination value");
}

// Plain (tape-free) combination for evaluation paths.
inline Eigen::RowVectorXd combine_values(const Eigen::RowVectorXd& x,
                                         const Eigen::RowVectorXd& y, Combination kind) {
  if (x.size() != y.size()) throw Error("combine: dimension mismatch");
  auto absdiff = [&] { return Eigen::RowVectorXd((x - y).cwiseAbs()); };
  auto mul = [&] { return Eigen::RowVectorXd(x.cwiseProduct(y)); };
  Eigen::RowVectorXd out;
  switch (kind) {
    case Combination::kConcat:
      out.resize(2 * x.size());
      out << x, y;
      return out;
    case Combination::kAbsDiff: return absdiff();
    case Combination::kMul: return mul();
    case Combination::kAbsDiffMul:
      out.resize(2 * x.size());
      out << absdiff(), mul();
      return out;
    case Combination::kConcatMul:
      out.resize(3 * x.size());
      out << x, y, mul();
      return out;
    case Combination::kConcatAbsDiff:
      out.resize(3 * x.size());
      out << x, y, absdiff();
      return out;
    case Combination::kConcatAbsDiffMul:
      out.resize(4 * x.size());
      out << x, y, absdiff(), mul();
      return out;
  }
  throw Error("bad combination value");
}

struct LinkScore {
  double unlink = 0.0;
  double link = 0.0;
  bool is_link() const { return link > unlink; }  // tie counts as unlink
};

struct LinkHead {
  Combination kind = Combination::kAbsDiffMul;
  Param weight;  // D x 2
  Param bias;    // 1 x 2

  LinkHead() {
    weight.name = "link_head.weight";
    bias.name = "link_head.bias";
  }

  void init(int hidden, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 0.02);
    int dim = combined_dim(kind, hidden);
    weight.value.resize(dim, 2);
    for (Eigen::Index i = 0; i < weight.value.rows(); ++i)
      for (Eigen::Index j = 0; j < 2; ++j) weight.value(i, j) = dist(rng);
    bias.value = Mat::Zero(1, 2);
  }

  void register_params(ParamSet& set) {
    set.add(weight);
    set.add(bias);
  }
};

// (unlink, link) logits for a combined row vector.
inline Tape::Node* link_logits(Tape& tape, LinkHead& head, Tape::Node* combined) {
  if (combined->val().cols() != head.weight.value.rows())
    throw Error("classify: combined vector length " + std::to_string(combined->val().cols()) +
                " does not match head dimension " + std::to_string(head.weight.value.rows()));
  return tape.add_rowvec(tape.matmul(combined, tape.param(head.weight)), tape.param(head.bias));
}

inline LinkScore softmax2(double unlink_logit, double link_logit) {
  double mx = std::max(unlink_logit, link_logit);
  double eu = std::exp(unlink_logit - mx), el = std::exp(link_logit - mx);
  double z = eu + el;
  return {eu / z, el / z};
}

// Evaluation-path classification: softmax over the affine map.
inline LinkScore classify(const LinkHead& head, const Eigen::RowVectorXd& combined) {
  if (combined.size() != head.weight.value.rows())
    throw Error("classify: combined vector length " + std::to_string(combined.size()) +
                " does not match head dimension " + std::to_string(head.weight.value.rows()));
  if (!combined.allFinite()) throw Error("classify: non-finite input");
  Eigen::RowVectorXd logits = combined * head.weight.value + head.bias.value.row(0);
  return softmax2(logits(0), logits(1));
}

// Cross-entropy of one link decision, computed from logits in log-sum-exp
// form. Returns a 1x1 scalar node.
inline Tape::Node* link_loss(Tape& tape, Tape::Node* logits, bool is_link) {
  return tape.softmax_cross_entropy(logits, {is_link ? 1 : 0}, /*mean=*/false);
}

}  // namespace v2w
