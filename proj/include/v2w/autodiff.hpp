#pragma once

// Reverse-mode differentiation over dense double matrices. A Tape owns the
// nodes of one computation; backward() sweeps them in reverse creation order
// (parents always precede children, so that order is a valid topological
// order). Parameter gradients land in a GradStore indexed by parameter id so
// several tapes -- possibly evaluated on different workers -- can be merged
// in a fixed order afterwards.
//
// Parameter leaves reference the parameter matrix instead of copying it;
// embedding tables and vocabulary projections are far larger than everything
// else on a tape.

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "v2w/common.hpp"

namespace v2w {

using Mat = Eigen::MatrixXd;

struct Param {
  std::string name;
  Mat value;
  bool trainable = true;
  int id = -1;
};

// Fixed-order registry of the parameters of one model. The registration
// order defines checkpoint layout, optimizer state layout and gradient
// reduction order.
class ParamSet {
 public:
  void add(Param& p) {
    p.id = static_cast<int>(params_.size());
    params_.push_back(&p);
  }
  std::size_t size() const { return params_.size(); }
  Param& at(std::size_t i) { return *params_[i]; }
  const Param& at(std::size_t i) const { return *params_[i]; }
  const std::vector<Param*>& all() const { return params_; }

 private:
  std::vector<Param*> params_;
};

class GradStore {
 public:
  explicit GradStore(std::size_t n_params = 0) { resize(n_params); }
  void resize(std::size_t n_params) { grads_.assign(n_params, Mat()); }
  std::size_t size() const { return grads_.size(); }

  void accumulate(const Param& p, const Mat& g) {
    Mat& slot = grads_.at(static_cast<std::size_t>(p.id));
    if (slot.size() == 0) slot = g;
    else slot += g;
  }

  bool has(const Param& p) const {
    return grads_.at(static_cast<std::size_t>(p.id)).size() != 0;
  }
  const Mat& grad(const Param& p) const { return grads_.at(static_cast<std::size_t>(p.id)); }

  // Merge another store into this one; call in a fixed worker order.
  void add_from(const GradStore& other) {
    for (std::size_t i = 0; i < grads_.size(); ++i) {
      if (other.grads_[i].size() == 0) continue;
      if (grads_[i].size() == 0) grads_[i] = other.grads_[i];
      else grads_[i] += other.grads_[i];
    }
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& g : grads_) s += g.squaredNorm();
    return s;
  }

  void scale(double f) {
    for (auto& g : grads_) g *= f;
  }

  void clear() {
    for (auto& g : grads_) g.resize(0, 0);
  }

 private:
  std::vector<Mat> grads_;
};

class Tape {
 public:
  struct Node {
    Mat owned;                      // value storage for computed nodes
    const Mat* external = nullptr;  // set for parameter leaves
    Mat grad;
    bool needs_grad = false;
    bool grad_ready = false;
    Param* param = nullptr;
    std::function<void()> back;  // empty for leaves

    const Mat& val() const { return external ? *external : owned; }
  };

  explicit Tape(GradStore* store = nullptr) : store_(store) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Node* input(Mat v, bool needs_grad = false) { return make(std::move(v), needs_grad); }

  Node* param(Param& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    nodes_.emplace_back();
    Node* n = &nodes_.back();
    n->external = &p.value;
    n->needs_grad = p.trainable;
    n->param = &p;
    param_nodes_.emplace(&p, n);
    return n;
  }

  // ---- arithmetic ----

  Node* matmul(Node* a, Node* b) {
    Node* out = make(a->val() * b->val(), a->needs_grad || b->needs_grad);
    out->back = [this, a, b, out] {
      if (a->needs_grad) accum(a, out->grad * b->val().transpose());
      if (b->needs_grad) accum(b, a->val().transpose() * out->grad);
    };
    return out;
  }

  // a * b^T
  Node* matmul_bt(Node* a, Node* b) {
    Node* out = make(a->val() * b->val().transpose(), a->needs_grad || b->needs_grad);
    out->back = [this, a, b, out] {
      if (a->needs_grad) accum(a, out->grad * b->val());
      if (b->needs_grad) accum(b, out->grad.transpose() * a->val());
    };
    return out;
  }

  Node* add(Node* a, Node* b) {
    Node* out = make(a->val() + b->val(), a->needs_grad || b->needs_grad);
    out->back = [this, a, b, out] {
      if (a->needs_grad) accum(a, out->grad);
      if (b->needs_grad) accum(b, out->grad);
    };
    return out;
  }

  Node* sub(Node* a, Node* b) {
    Node* out = make(a->val() - b->val(), a->needs_grad || b->needs_grad);
    out->back = [this, a, b, out] {
      if (a->needs_grad) accum(a, out->grad);
      if (b->needs_grad) accum(b, -out->grad);
    };
    return out;
  }

  // r is a 1 x C row vector broadcast over the rows of a.
  Node* add_rowvec(Node* a, Node* r) {
    Mat v = a->val();
    v.rowwise() += Eigen::RowVectorXd(r->val().row(0));
    Node* out = make(std::move(v), a->needs_grad || r->needs_grad);
    out->back = [this, a, r, out] {
      if (a->needs_grad) accum(a, out->grad);
      if (r->needs_grad) accum(r, out->grad.colwise().sum());
    };
    return out;
  }

  Node* hadamard(Node* a, Node* b) {
    Node* out = make(a->val().cwiseProduct(b->val()), a->needs_grad || b->needs_grad);
    out->back = [this, a, b, out] {
      if (a->needs_grad) accum(a, out->grad.cwiseProduct(b->val()));
      if (b->needs_grad) accum(b, out->grad.cwiseProduct(a->val()));
    };
    return out;
  }

  Node* abs(Node* a) {
    Node* out = make(a->val().cwiseAbs(), a->needs_grad);
    out->back = [this, a, out] {
      if (!a->needs_grad) return;
      Mat sign = a->val().unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
      accum(a, out->grad.cwiseProduct(sign));
    };
    return out;
  }

  Node* scale(Node* a, double c) {
    Node* out = make(a->val() * c, a->needs_grad);
    out->back = [this, a, out, c] {
      if (a->needs_grad) accum(a, out->grad * c);
    };
    return out;
  }

  Node* tanh_op(Node* a) {
    Node* out = make(a->val().array().tanh().matrix(), a->needs_grad);
    out->back = [this, a, out] {
      if (!a->needs_grad) return;
      Mat one_minus = (1.0 - out->val().array().square()).matrix();
      accum(a, out->grad.cwiseProduct(one_minus));
    };
    return out;
  }

  // Exact GELU: x * Phi(x) with the Gaussian CDF.
  Node* gelu(Node* a) {
    Mat v = a->val().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); });
    Node* out = make(std::move(v), a->needs_grad);
    out->back = [this, a, out] {
      if (!a->needs_grad) return;
      Mat d = a->val().unaryExpr([](double x) {
        double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        double Phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
        return Phi + x * phi;
      });
      accum(a, out->grad.cwiseProduct(d));
    };
    return out;
  }

  // Row-wise layer normalization with learned gain/bias (1 x C each).
  Node* layer_norm(Node* x, Node* gain, Node* bias, double eps = 1e-5) {
    const Eigen::Index rows = x->val().rows(), cols = x->val().cols();
    Mat xhat(rows, cols);
    Eigen::VectorXd inv_std(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
      double mu = x->val().row(i).mean();
      double var = (x->val().row(i).array() - mu).square().mean();
      double is = 1.0 / std::sqrt(var + eps);
      inv_std(i) = is;
      xhat.row(i) = (x->val().row(i).array() - mu) * is;
    }
    Mat y = xhat;
    y.array().rowwise() *= gain->val().row(0).array();
    y.rowwise() += Eigen::RowVectorXd(bias->val().row(0));
    Node* out = make(std::move(y), x->needs_grad || gain->needs_grad || bias->needs_grad);
    out->back = [this, x, gain, bias, out, xhat, inv_std] {
      const Eigen::Index rows = x->val().rows(), cols = x->val().cols();
      if (gain->needs_grad) accum(gain, (out->grad.cwiseProduct(xhat)).colwise().sum());
      if (bias->needs_grad) accum(bias, out->grad.colwise().sum());
      if (!x->needs_grad) return;
      Mat dx(rows, cols);
      const double n = static_cast<double>(cols);
      for (Eigen::Index i = 0; i < rows; ++i) {
        Eigen::RowVectorXd dxhat = out->grad.row(i).cwiseProduct(gain->val().row(0));
        double sum_dxhat = dxhat.sum();
        double sum_dxhat_xhat = dxhat.cwiseProduct(xhat.row(i)).sum();
        dx.row(i) = (dxhat.array() - sum_dxhat / n -
                     xhat.row(i).array() * (sum_dxhat_xhat / n)) *
                    inv_std(i);
      }
      accum(x, dx);
    };
    return out;
  }

  // Softmax over selected columns of each row; other columns are exactly 0,
  // so masked positions can never influence unmasked ones.
  Node* masked_softmax_rows(Node* scores, const std::vector<int>& valid_cols) {
    if (valid_cols.empty()) throw Error("masked_softmax: no valid columns");
    const Eigen::Index rows = scores->val().rows(), cols = scores->val().cols();
    Mat p = Mat::Zero(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j : valid_cols) mx = std::max(mx, scores->val()(i, j));
      double denom = 0.0;
      for (int j : valid_cols) denom += std::exp(scores->val()(i, j) - mx);
      for (int j : valid_cols) p(i, j) = std::exp(scores->val()(i, j) - mx) / denom;
    }
    Node* out = make(std::move(p), scores->needs_grad);
    out->back = [this, scores, out, valid_cols] {
      if (!scores->needs_grad) return;
      const Eigen::Index rows = out->val().rows(), cols = out->val().cols();
      Mat ds = Mat::Zero(rows, cols);
      for (Eigen::Index i = 0; i < rows; ++i) {
        double dot = 0.0;
        for (int j : valid_cols) dot += out->grad(i, j) * out->val()(i, j);
        for (int j : valid_cols) ds(i, j) = out->val()(i, j) * (out->grad(i, j) - dot);
      }
      accum(scores, ds);
    };
    return out;
  }

  Node* concat_cols(const std::vector<Node*>& parts) {
    if (parts.empty()) throw Error("concat_cols: empty");
    Eigen::Index rows = parts[0]->val().rows(), cols = 0;
    bool needs = false;
    for (Node* p : parts) {
      if (p->val().rows() != rows) throw Error("concat_cols: row mismatch");
      cols += p->val().cols();
      needs = needs || p->needs_grad;
    }
    Mat v(rows, cols);
    Eigen::Index off = 0;
    for (Node* p : parts) {
      v.middleCols(off, p->val().cols()) = p->val();
      off += p->val().cols();
    }
    Node* out = make(std::move(v), needs);
    std::vector<Node*> parts_copy = parts;
    out->back = [this, parts_copy, out] {
      Eigen::Index off = 0;
      for (Node* p : parts_copy) {
        if (p->needs_grad) accum(p, out->grad.middleCols(off, p->val().cols()));
        off += p->val().cols();
      }
    };
    return out;
  }

  Node* slice_cols(Node* a, Eigen::Index off, Eigen::Index n) {
    Node* out = make(a->val().middleCols(off, n), a->needs_grad);
    out->back = [this, a, out, off, n] {
      if (!a->needs_grad) return;
      Mat g = Mat::Zero(a->val().rows(), a->val().cols());
      g.middleCols(off, n) = out->grad;
      accum(a, g);
    };
    return out;
  }

  // Gather rows (indices may repeat; backward scatter-adds).
  Node* select_rows(Node* a, const std::vector<int>& idx) {
    Mat v(static_cast<Eigen::Index>(idx.size()), a->val().cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
      v.row(static_cast<Eigen::Index>(i)) = a->val().row(idx[i]);
    Node* out = make(std::move(v), a->needs_grad);
    out->back = [this, a, out, idx] {
      if (!a->needs_grad) return;
      Mat g = Mat::Zero(a->val().rows(), a->val().cols());
      for (std::size_t i = 0; i < idx.size(); ++i)
        g.row(idx[i]) += out->grad.row(static_cast<Eigen::Index>(i));
      accum(a, g);
    };
    return out;
  }

  Node* row(Node* a, int r) { return select_rows(a, {r}); }

  Node* mean_rows(Node* a, const std::vector<int>& rows) {
    if (rows.empty()) throw Error("mean_rows: empty row set");
    Mat v = Mat::Zero(1, a->val().cols());
    for (int r : rows) v.row(0) += a->val().row(r);
    v /= static_cast<double>(rows.size());
    Node* out = make(std::move(v), a->needs_grad);
    out->back = [this, a, out, rows] {
      if (!a->needs_grad) return;
      Mat g = Mat::Zero(a->val().rows(), a->val().cols());
      for (int r : rows) g.row(r) += out->grad.row(0) / static_cast<double>(rows.size());
      accum(a, g);
    };
    return out;
  }

  // Element-wise max over the listed rows; ties resolve to the first listed
  // row so backward is deterministic.
  Node* max_rows(Node* a, const std::vector<int>& rows) {
    if (rows.empty()) throw Error("max_rows: empty row set");
    Mat v(1, a->val().cols());
    std::vector<int> argmax(static_cast<std::size_t>(a->val().cols()));
    for (Eigen::Index j = 0; j < a->val().cols(); ++j) {
      int best = rows[0];
      for (int r : rows)
        if (a->val()(r, j) > a->val()(best, j)) best = r;
      v(0, j) = a->val()(best, j);
      argmax[static_cast<std::size_t>(j)] = best;
    }
    Node* out = make(std::move(v), a->needs_grad);
    out->back = [this, a, out, argmax] {
      if (!a->needs_grad) return;
      Mat g = Mat::Zero(a->val().rows(), a->val().cols());
      for (Eigen::Index j = 0; j < a->val().cols(); ++j)
        g(argmax[static_cast<std::size_t>(j)], j) += out->grad(0, j);
      accum(a, g);
    };
    return out;
  }

  // Inverted dropout; identity when train is false.
  Node* dropout(Node* a, double p, std::mt19937_64& rng, bool train) {
    if (!train || p <= 0.0) return a;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Mat mask(a->val().rows(), a->val().cols());
    const double keep = 1.0 - p;
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
      for (Eigen::Index j = 0; j < mask.cols(); ++j)
        mask(i, j) = u(rng) < p ? 0.0 : 1.0 / keep;
    Node* out = make(a->val().cwiseProduct(mask), a->needs_grad);
    out->back = [this, a, out, mask] {
      if (a->needs_grad) accum(a, out->grad.cwiseProduct(mask));
    };
    return out;
  }

  // Mean (or sum) cross-entropy between rows of logits and target indices.
  Node* softmax_cross_entropy(Node* logits, const std::vector<int>& targets, bool mean = true) {
    const Eigen::Index n = logits->val().rows();
    if (n == 0) throw Error("cross_entropy: no rows");
    if (static_cast<std::size_t>(n) != targets.size())
      throw Error("cross_entropy: row/target count mismatch");
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double mx = logits->val().row(i).maxCoeff();
      double lse = std::log((logits->val().row(i).array() - mx).exp().sum()) + mx;
      total += lse - logits->val()(i, targets[static_cast<std::size_t>(i)]);
    }
    const double w = mean ? 1.0 / static_cast<double>(n) : 1.0;
    Mat v(1, 1);
    v(0, 0) = total * w;
    Node* out = make(std::move(v), logits->needs_grad);
    out->back = [this, logits, out, targets, w] {
      if (!logits->needs_grad) return;
      const Eigen::Index n = logits->val().rows();
      Mat g(n, logits->val().cols());
      for (Eigen::Index i = 0; i < n; ++i) {
        double mx = logits->val().row(i).maxCoeff();
        Eigen::RowVectorXd e = (logits->val().row(i).array() - mx).exp();
        g.row(i) = e / e.sum();
        g(i, targets[static_cast<std::size_t>(i)]) -= 1.0;
      }
      accum(logits, g * (w * out->grad(0, 0)));
    };
    return out;
  }

  // Weighted sum of 1x1 scalar nodes.
  Node* weighted_sum(const std::vector<Node*>& scalars, const std::vector<double>& weights) {
    if (scalars.size() != weights.size()) throw Error("weighted_sum: size mismatch");
    double total = 0.0;
    bool needs = false;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      total += scalars[i]->val()(0, 0) * weights[i];
      needs = needs || scalars[i]->needs_grad;
    }
    Mat v(1, 1);
    v(0, 0) = total;
    Node* out = make(std::move(v), needs);
    std::vector<Node*> sc = scalars;
    std::vector<double> ws = weights;
    out->back = [this, sc, ws, out] {
      for (std::size_t i = 0; i < sc.size(); ++i) {
        if (!sc[i]->needs_grad) continue;
        Mat g(1, 1);
        g(0, 0) = out->grad(0, 0) * ws[i];
        accum(sc[i], g);
      }
    };
    return out;
  }

  // ---- backward ----

  void seed(Node* n, const Mat& g) {
    if (!n->needs_grad) return;
    if (n->grad_ready) n->grad += g;
    else {
      n->grad = g;
      n->grad_ready = true;
    }
  }

  void backward(Node* root) {
    Mat one(1, 1);
    one(0, 0) = 1.0;
    seed(root, one);
    run_backward();
  }

  // Sweeps all nodes in reverse creation order using whatever seeds are set,
  // then flushes parameter-leaf gradients into the GradStore.
  void run_backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node& n = *it;
      if (!n.grad_ready || !n.back) continue;
      n.back();
    }
    if (store_) {
      for (Node& n : nodes_) {
        if (n.param && n.grad_ready && n.param->trainable) store_->accumulate(*n.param, n.grad);
      }
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  Node* make(Mat v, bool needs_grad) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.owned = std::move(v);
    n.needs_grad = needs_grad;
    return &n;
  }

  void accum(Node* n, const Mat& g) {
    if (!n->needs_grad) return;
    if (n->grad_ready) n->grad += g;
    else {
      n->grad = g;
      n->grad_ready = true;
    }
  }

  std::deque<Node> nodes_;
  std::unordered_map<Param*, Node*> param_nodes_;
  GradStore* store_;
};

}  // namespace v2w
