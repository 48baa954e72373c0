#pragma once

// TF-IDF comparison models: a link-prediction variant that swaps the pooled
// encoder outputs for a trainable projection of TF-IDF vectors but keeps the
// combination, classification head and training links identical, and a flat
// one-hidden-layer classifier. Both evaluate through the same PairScorer
// pipeline as the encoder model.

#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "v2w/autodiff.hpp"
#include "v2w/checkpoint.hpp"
#include "v2w/common.hpp"
#include "v2w/corpus.hpp"
#include "v2w/cwe_hierarchy.hpp"
#include "v2w/inference_eval.hpp"
#include "v2w/link_predictor.hpp"
#include "v2w/optimizer.hpp"
#include "v2w/trainer.hpp"

namespace v2w {

class TfidfVectorizer {
 public:
  // tf = raw count, idf = ln((1+D)/(1+df)) + 1, vectors L2-normalized.
  void fit(const std::vector<std::string>& texts) {
    if (texts.empty()) throw Error("tfidf: empty training corpus");
    std::map<std::string, std::size_t> df;
    for (const auto& t : texts) {
      auto tokens = tokenize(t);
      std::set<std::string> distinct(tokens.begin(), tokens.end());
      for (const auto& tok : distinct) ++df[tok];
    }
    vocab_.clear();
    idf_.clear();
    const double d = static_cast<double>(texts.size());
    for (const auto& [term, count] : df) {
      vocab_.emplace(term, static_cast<int>(idf_.size()));
      idf_.push_back(std::log((1.0 + d) / (1.0 + static_cast<double>(count))) + 1.0);
    }
    if (vocab_.empty()) throw Error("tfidf: corpus produced no terms");
  }

  // Sparse (index, weight) pairs sorted by index; unseen terms ignored.
  std::vector<std::pair<int, double>> transform(const std::string& text) const {
    std::map<int, double> counts;
    for (const auto& tok : tokenize(text)) {
      auto it = vocab_.find(tok);
      if (it != vocab_.end()) counts[it->second] += 1.0;
    }
    std::vector<std::pair<int, double>> out;
    double norm2 = 0.0;
    for (auto& [idx, tf] : counts) {
      double w = tf * idf_[static_cast<std::size_t>(idx)];
      out.emplace_back(idx, w);
      norm2 += w * w;
    }
    if (norm2 > 0.0) {
      double inv = 1.0 / std::sqrt(norm2);
      for (auto& [idx, w] : out) w *= inv;
    }
    return out;
  }

  Eigen::RowVectorXd transform_dense(const std::string& text) const {
    Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(idf_.size()));
    for (const auto& [idx, w] : transform(text)) v(idx) = w;
    return v;
  }

  std::size_t dim() const { return idf_.size(); }
  const std::map<std::string, int>& vocabulary() const { return vocab_; }
  const std::vector<double>& idf() const { return idf_; }

  void restore(std::vector<std::string> terms, std::vector<double> idf) {
    vocab_.clear();
    for (std::size_t i = 0; i < terms.size(); ++i) vocab_.emplace(terms[i], static_cast<int>(i));
    idf_ = std::move(idf);
  }

  static std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char raw : to_lower(text)) {
      unsigned char c = static_cast<unsigned char>(raw);
      if (std::isalnum(c)) {
        cur.push_back(static_cast<char>(c));
      } else if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  }

 private:
  std::map<std::string, int> vocab_;
  std::vector<double> idf_;
};

// ---- link-prediction baseline ----

class TfidfLinkModel {
 public:
  TfidfVectorizer vectorizer;
  int hidden = 128;
  Param projection;  // |terms| x H
  LinkHead head;
  ParamSet params;

  explicit TfidfLinkModel(Combination combination = Combination::kAbsDiffMul) {
    head.kind = combination;
    projection.name = "tfidf.projection";
  }
  TfidfLinkModel(const TfidfLinkModel&) = delete;
  TfidfLinkModel& operator=(const TfidfLinkModel&) = delete;

  void init(const std::vector<std::string>& train_texts, int hidden_dim, std::uint64_t seed) {
    vectorizer.fit(train_texts);
    hidden = hidden_dim;
    auto rng = make_rng(derive_seed(seed, "tfidf_link_init"));
    std::normal_distribution<double> dist(0.0, 0.02);
    projection.value.resize(static_cast<Eigen::Index>(vectorizer.dim()), hidden);
    for (Eigen::Index i = 0; i < projection.value.rows(); ++i)
      for (Eigen::Index j = 0; j < projection.value.cols(); ++j)
        projection.value(i, j) = dist(rng);
    head.init(hidden, rng);
    params = ParamSet();
    params.add(projection);
    head.register_params(params);
  }

  Eigen::RowVectorXd project(const std::string& text) const {
    Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(hidden);
    for (const auto& [idx, w] : vectorizer.transform(text)) out += w * projection.value.row(idx);
    return out;
  }
};

// Same training links, balancing, loss shape and optimizer recipe as the
// encoder path; the projection replaces the pooled encoder output and there
// is no reconstruction term.
inline std::vector<EpochLogRow> train_tfidf_link(TfidfLinkModel& model,
                                                 const std::vector<CveRecord>& train,
                                                 const CweHierarchy& h,
                                                 const std::set<std::string>& u,
                                                 const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw Error("tfidf link: no training records");
  std::map<std::string, Eigen::RowVectorXd> features;
  for (const auto& r : train) features[r.id] = model.vectorizer.transform_dense(r.description);
  for (const auto& w : u) features[w] = model.vectorizer.transform_dense(h.node(w).description);

  const std::size_t n = train.size();
  const std::size_t n_batches = (n + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                static_cast<std::size_t>(cfg.batch_size);
  OptimizerConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.total_steps = static_cast<long>(n_batches) * cfg.epochs_link;
  ocfg.warmup_steps = static_cast<long>(cfg.warmup_frac * static_cast<double>(ocfg.total_steps));
  AdamW opt(model.params, ocfg);

  std::vector<EpochLogRow> log;
  for (int epoch = 0; epoch < cfg.epochs_link; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto order_rng = make_rng(derive_seed(cfg.seed, "tfidf_order", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), order_rng);

    double epoch_loss = 0.0;
    double lr_now = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::size_t lo = b * static_cast<std::size_t>(cfg.batch_size);
      std::size_t hi = std::min(n, lo + static_cast<std::size_t>(cfg.batch_size));
      std::vector<CveRecord> batch;
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(train[order[i]]);
      auto link_rng = make_rng(derive_seed(cfg.seed, "tfidf_links", static_cast<std::uint64_t>(epoch), b));
      LinkBatch lb = generate_links(batch, h, u, cfg.k_neg, link_rng);
      lb = balance(lb, cfg.balance);

      GradStore grads(model.params.size());
      Tape tape(&grads);
      std::map<std::string, Tape::Node*> projected;
      auto get = [&](const std::string& key) {
        auto it = projected.find(key);
        if (it != projected.end()) return it->second;
        Tape::Node* raw = tape.input(features.at(key));
        Tape::Node* proj = tape.matmul(raw, tape.param(model.projection));
        projected.emplace(key, proj);
        return proj;
      };
      std::vector<Tape::Node*> losses;
      std::vector<double> weights;
      auto add_side = [&](const std::vector<std::pair<std::string, std::string>>& links,
                          const std::vector<double>& ws, double gamma, bool is_link) {
        for (std::size_t i = 0; i < links.size(); ++i) {
          Tape::Node* combined =
              combine(tape, get(links[i].first), get(links[i].second), model.head.kind);
          losses.push_back(link_loss(tape, link_logits(tape, model.head, combined), is_link));
          weights.push_back(gamma * ws[i]);
        }
      };
      add_side(lb.positives, lb.pos_weights, cfg.gamma1, true);
      add_side(lb.negatives, lb.neg_weights, cfg.gamma2, false);
      Tape::Node* total = tape.weighted_sum(losses, weights);
      if (!std::isfinite(total->val()(0, 0)))
        throw Error("tfidf link: loss diverged at step " + std::to_string(opt.step_index()));
      tape.backward(total);
      clip_global_norm(grads, cfg.clip_norm);
      lr_now = opt.current_lr();
      opt.step(grads);
      epoch_loss += total->val()(0, 0);
    }
    EpochLogRow row;
    row.epoch = epoch + 1;
    row.split = "train";
    row.loss_lp = epoch_loss / static_cast<double>(n_batches);
    row.loss_rd = 0.0;
    row.lr = lr_now;
    log.push_back(row);
  }
  return log;
}

class TfidfLinkScorer : public PairScorer {
 public:
  TfidfLinkScorer(const TfidfLinkModel& model, const CweHierarchy& h) : model_(model), h_(h) {}

  void prime(const CweHierarchy& h, int threads) override {
    (void)threads;
    for (const auto& [id, node] : h.nodes())
      if (!cache_.count(id)) cache_[id] = model_.project(node.description);
  }

  std::map<std::string, LinkScore> score_all(
      const std::string& cve_text, const std::vector<std::string>& candidates) const override {
    Eigen::RowVectorXd x = model_.project(cve_text);
    std::map<std::string, LinkScore> out;
    for (const auto& id : candidates) {
      auto it = cache_.find(id);
      Eigen::RowVectorXd y = it != cache_.end() ? it->second : model_.project(h_.node(id).description);
      out[id] = classify(model_.head, combine_values(x, y, model_.head.kind));
    }
    return out;
  }

 private:
  const TfidfLinkModel& model_;
  const CweHierarchy& h_;
  std::map<std::string, Eigen::RowVectorXd> cache_;
};

// ---- flat classifier baseline ----

class TfidfClassModel {
 public:
  TfidfVectorizer vectorizer;
  std::vector<std::string> classes;  // training CWE set, sorted
  int hidden = 256;
  Param w1, b1, w2, b2;
  ParamSet params;

  TfidfClassModel() {
    w1.name = "tfidf_nn.w1";
    b1.name = "tfidf_nn.b1";
    w2.name = "tfidf_nn.w2";
    b2.name = "tfidf_nn.b2";
  }
  TfidfClassModel(const TfidfClassModel&) = delete;
  TfidfClassModel& operator=(const TfidfClassModel&) = delete;

  void init(const std::vector<std::string>& train_texts, const std::set<std::string>& u,
            int hidden_dim, std::uint64_t seed) {
    vectorizer.fit(train_texts);
    classes.assign(u.begin(), u.end());
    if (classes.empty()) throw Error("tfidf classifier: empty class set");
    hidden = hidden_dim;
    auto rng = make_rng(derive_seed(seed, "tfidf_class_init"));
    std::normal_distribution<double> dist(0.0, 0.02);
    auto normal = [&](Eigen::Index r, Eigen::Index c) {
      Mat m(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
      return m;
    };
    w1.value = normal(static_cast<Eigen::Index>(vectorizer.dim()), hidden);
    b1.value = Mat::Zero(1, hidden);
    w2.value = normal(hidden, static_cast<Eigen::Index>(classes.size()));
    b2.value = Mat::Zero(1, static_cast<Eigen::Index>(classes.size()));
    params = ParamSet();
    params.add(w1);
    params.add(b1);
    params.add(w2);
    params.add(b2);
  }

  Eigen::RowVectorXd logits(const Eigen::RowVectorXd& features) const {
    Eigen::RowVectorXd h = features * w1.value + b1.value.row(0);
    for (Eigen::Index i = 0; i < h.size(); ++i)
      h(i) = 0.5 * h(i) * (1.0 + std::erf(h(i) * M_SQRT1_2));
    return h * w2.value + b2.value.row(0);
  }

  // Probability distribution over the training classes.
  Eigen::RowVectorXd predict_proba(const std::string& text) const {
    Eigen::RowVectorXd l = logits(vectorizer.transform_dense(text));
    double mx = l.maxCoeff();
    Eigen::RowVectorXd e = (l.array() - mx).exp();
    return e / e.sum();
  }
};

// Cross-entropy over the class set; a record contributes one example per
// positive-closure member so ancestor classes receive mass too.
inline std::vector<EpochLogRow> train_tfidf_class(TfidfClassModel& model,
                                                  const std::vector<CveRecord>& train,
                                                  const CweHierarchy& h, const TrainConfig& cfg) {
  cfg.validate();
  std::map<std::string, int> class_index;
  for (std::size_t i = 0; i < model.classes.size(); ++i)
    class_index[model.classes[i]] = static_cast<int>(i);

  std::vector<std::pair<const CveRecord*, int>> examples;
  for (const auto& r : train) {
    std::set<std::string> labels;
    for (const auto& l : r.labels)
      if (h.contains(l)) labels.insert(l);
    for (const auto& w : h.positive_closure(labels)) {
      auto it = class_index.find(w);
      if (it != class_index.end()) examples.emplace_back(&r, it->second);
    }
  }
  if (examples.empty()) throw Error("tfidf classifier: no training examples");

  std::map<std::string, Eigen::RowVectorXd> features;
  for (const auto& r : train) features[r.id] = model.vectorizer.transform_dense(r.description);

  const std::size_t n = examples.size();
  const std::size_t n_batches = (n + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                static_cast<std::size_t>(cfg.batch_size);
  OptimizerConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.total_steps = static_cast<long>(n_batches) * cfg.epochs_link;
  ocfg.warmup_steps = static_cast<long>(cfg.warmup_frac * static_cast<double>(ocfg.total_steps));
  AdamW opt(model.params, ocfg);

  std::vector<EpochLogRow> log;
  for (int epoch = 0; epoch < cfg.epochs_link; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto rng = make_rng(derive_seed(cfg.seed, "tfidf_class_order", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    double lr_now = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::size_t lo = b * static_cast<std::size_t>(cfg.batch_size);
      std::size_t hi = std::min(n, lo + static_cast<std::size_t>(cfg.batch_size));
      Mat x(static_cast<Eigen::Index>(hi - lo), static_cast<Eigen::Index>(model.vectorizer.dim()));
      std::vector<int> targets;
      for (std::size_t i = lo; i < hi; ++i) {
        x.row(static_cast<Eigen::Index>(i - lo)) = features.at(examples[order[i]].first->id);
        targets.push_back(examples[order[i]].second);
      }
      GradStore grads(model.params.size());
      Tape tape(&grads);
      Tape::Node* input = tape.input(std::move(x));
      Tape::Node* hid = tape.gelu(
          tape.add_rowvec(tape.matmul(input, tape.param(model.w1)), tape.param(model.b1)));
      Tape::Node* logits =
          tape.add_rowvec(tape.matmul(hid, tape.param(model.w2)), tape.param(model.b2));
      Tape::Node* loss = tape.softmax_cross_entropy(logits, targets, /*mean=*/true);
      if (!std::isfinite(loss->val()(0, 0)))
        throw Error("tfidf classifier: loss diverged at step " + std::to_string(opt.step_index()));
      tape.backward(loss);
      clip_global_norm(grads, cfg.clip_norm);
      lr_now = opt.current_lr();
      opt.step(grads);
      epoch_loss += loss->val()(0, 0);
    }
    EpochLogRow row;
    row.epoch = epoch + 1;
    row.split = "train";
    row.loss_lp = epoch_loss / static_cast<double>(n_batches);
    row.lr = lr_now;
    log.push_back(row);
  }
  return log;
}

// Candidate score = class probability (0 for CWEs outside the training output
// space, which is exactly the documented zero-shot limitation).
class TfidfClassScorer : public PairScorer {
 public:
  explicit TfidfClassScorer(const TfidfClassModel& model) : model_(model) {
    for (std::size_t i = 0; i < model.classes.size(); ++i)
      index_[model.classes[i]] = static_cast<int>(i);
  }

  std::map<std::string, LinkScore> score_all(
      const std::string& cve_text, const std::vector<std::string>& candidates) const override {
    Eigen::RowVectorXd proba = model_.predict_proba(cve_text);
    std::map<std::string, LinkScore> out;
    for (const auto& id : candidates) {
      auto it = index_.find(id);
      double p = it == index_.end() ? 0.0 : proba(it->second);
      out[id] = LinkScore{1.0 - p, p};
    }
    return out;
  }

 private:
  const TfidfClassModel& model_;
  std::map<std::string, int> index_;
};

// ---- persistence (same container as the encoder checkpoints) ----

inline void save_tfidf_link(const TfidfLinkModel& model, const std::string& path) {
  Checkpoint ckpt;
  std::vector<std::string> terms(model.vectorizer.dim());
  for (const auto& [term, idx] : model.vectorizer.vocabulary())
    terms[static_cast<std::size_t>(idx)] = term;
  ckpt.config = {{"format_version", 1},
                 {"model_kind", "tfidf_link"},
                 {"hidden", model.hidden},
                 {"combination", to_string(model.head.kind)},
                 {"terms", terms}};
  Mat idf(1, static_cast<Eigen::Index>(model.vectorizer.idf().size()));
  for (Eigen::Index i = 0; i < idf.cols(); ++i) idf(0, i) = model.vectorizer.idf()[static_cast<std::size_t>(i)];
  ckpt.tensors.emplace_back("tfidf.idf", idf);
  ckpt.tensors.emplace_back(model.projection.name, model.projection.value);
  ckpt.tensors.emplace_back(model.head.weight.name, model.head.weight.value);
  ckpt.tensors.emplace_back(model.head.bias.name, model.head.bias.value);
  save_checkpoint(path, ckpt);
}

inline std::unique_ptr<TfidfLinkModel> load_tfidf_link(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config.value("model_kind", "") != "tfidf_link")
    throw Error("checkpoint: kind is not tfidf_link");
  auto model = std::make_unique<TfidfLinkModel>(
      combination_from_string(ckpt.config.at("combination").get<std::string>()));
  model->hidden = ckpt.config.at("hidden").get<int>();
  auto terms = ckpt.config.at("terms").get<std::vector<std::string>>();
  const Mat& idf = ckpt.tensor("tfidf.idf");
  std::vector<double> idf_values(static_cast<std::size_t>(idf.cols()));
  for (Eigen::Index i = 0; i < idf.cols(); ++i) idf_values[static_cast<std::size_t>(i)] = idf(0, i);
  model->vectorizer.restore(std::move(terms), std::move(idf_values));
  model->projection.value = ckpt.tensor(model->projection.name);
  model->head.weight.value = ckpt.tensor(model->head.weight.name);
  model->head.bias.value = ckpt.tensor(model->head.bias.name);
  model->params = ParamSet();
  model->params.add(model->projection);
  model->head.register_params(model->params);
  return model;
}

inline void save_tfidf_class(const TfidfClassModel& model, const std::string& path) {
  Checkpoint ckpt;
  std::vector<std::string> terms(model.vectorizer.dim());
  for (const auto& [term, idx] : model.vectorizer.vocabulary())
    terms[static_cast<std::size_t>(idx)] = term;
  ckpt.config = {{"format_version", 1},
                 {"model_kind", "tfidf_class"},
                 {"hidden", model.hidden},
                 {"classes", model.classes},
                 {"terms", terms}};
  Mat idf(1, static_cast<Eigen::Index>(model.vectorizer.idf().size()));
  for (Eigen::Index i = 0; i < idf.cols(); ++i) idf(0, i) = model.vectorizer.idf()[static_cast<std::size_t>(i)];
  ckpt.tensors.emplace_back("tfidf.idf", idf);
  for (const Param* p : {&model.w1, &model.b1, &model.w2, &model.b2})
    ckpt.tensors.emplace_back(p->name, p->value);
  save_checkpoint(path, ckpt);
}

inline std::unique_ptr<TfidfClassModel> load_tfidf_class(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config.value("model_kind", "") != "tfidf_class")
    throw Error("checkpoint: kind is not tfidf_class");
  auto model = std::make_unique<TfidfClassModel>();
  model->hidden = ckpt.config.at("hidden").get<int>();
  model->classes = ckpt.config.at("classes").get<std::vector<std::string>>();
  auto terms = ckpt.config.at("terms").get<std::vector<std::string>>();
  const Mat& idf = ckpt.tensor("tfidf.idf");
  std::vector<double> idf_values(static_cast<std::size_t>(idf.cols()));
  for (Eigen::Index i = 0; i < idf.cols(); ++i) idf_values[static_cast<std::size_t>(i)] = idf(0, i);
  model->vectorizer.restore(std::move(terms), std::move(idf_values));
  model->w1.value = ckpt.tensor(model->w1.name);
  model->b1.value = ckpt.tensor(model->b1.name);
  model->w2.value = ckpt.tensor(model->w2.name);
  model->b2.value = ckpt.tensor(model->b2.name);
  model->params = ParamSet();
  model->params.add(model->w1);
  model->params.add(model->b1);
  model->params.add(model->w2);
  model->params.add(model->b2);
  return model;
}

}  // namespace v2w
