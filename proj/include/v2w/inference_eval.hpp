#pragma once

// Hierarchical prediction and every evaluation surface: path accuracy at the
// (k1,k2,k3) budgets, link F1, the analytically computed random baseline with
// its Monte Carlo cross-check, beta-threshold novelty detection and the
// zero-shot protocol. All scorers go through one PairScorer interface so the
// encoder model and the TF-IDF baselines share the exact same metric code.

#include <array>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "v2w/common.hpp"
#include "v2w/corpus.hpp"
#include "v2w/cwe_hierarchy.hpp"
#include "v2w/model.hpp"
#include "v2w/trainer.hpp"

namespace v2w {

struct KTriple {
  int k1 = 1, k2 = 1, k3 = 1;
  std::string label() const {
    return "(" + std::to_string(k1) + "," + std::to_string(k2) + "," + std::to_string(k3) + ")";
  }
};

// The three budgets every report carries: precise, moderate, relaxed.
inline const std::array<KTriple, 3>& report_triples() {
  static const std::array<KTriple, 3> t = {KTriple{1, 1, 1}, KTriple{3, 2, 1}, KTriple{5, 2, 2}};
  return t;
}

class PairScorer {
 public:
  virtual ~PairScorer() = default;
  // Precompute whatever per-candidate state scoring needs; after priming,
  // score_all must be safe to call from several threads.
  virtual void prime(const CweHierarchy& h, int threads) { (void)h; (void)threads; }
  virtual std::map<std::string, LinkScore> score_all(
      const std::string& cve_text, const std::vector<std::string>& candidates) const = 0;
};

// Siamese encoder scorer: one encoder pass for the CVE, cached pooled vectors
// for the CWE descriptions, combine + classify per pair. Evaluation mode
// throughout: no dropout, no masking.
class EncoderPairScorer : public PairScorer {
 public:
  EncoderPairScorer(V2wModel& model, const CweHierarchy& h) : model_(model), h_(h) {}

  Eigen::RowVectorXd pooled(const std::string& text) const {
    Tape tape;
    TokenSequence seq = model_.vocab.encode(text, model_.encoder.cfg.seq_len);
    auto rng = make_rng(0);  // dropout disabled in eval mode
    Tape::Node* hidden = encoder_forward(tape, model_.encoder, seq, /*train=*/false, rng);
    Tape::Node* p = encoder_pool(tape, model_.encoder, hidden, seq, model_.pooling);
    return p->val().row(0);
  }

  void prime(const CweHierarchy& h, int threads) override {
    std::vector<std::string> ids;
    for (const auto& [id, node] : h.nodes())
      if (!cache_.count(id)) ids.push_back(id);
    std::vector<Eigen::RowVectorXd> vecs(ids.size());
    parallel_for(ids.size(), threads, [&](std::size_t begin, std::size_t end, int) {
      for (std::size_t i = begin; i < end; ++i) vecs[i] = pooled(h.node(ids[i]).description);
    });
    for (std::size_t i = 0; i < ids.size(); ++i) cache_[ids[i]] = vecs[i];
  }

  std::map<std::string, LinkScore> score_all(
      const std::string& cve_text, const std::vector<std::string>& candidates) const override {
    Eigen::RowVectorXd x = pooled(cve_text);
    std::map<std::string, LinkScore> out;
    for (const auto& id : candidates) {
      auto it = cache_.find(id);
      Eigen::RowVectorXd y;
      if (it != cache_.end()) {
        y = it->second;
      } else {
        const std::string& desc = h_.node(id).description;
        if (desc.empty()) throw Error("score_all: candidate " + id + " has no description");
        y = pooled(desc);
      }
      out[id] = classify(model_.link_head, combine_values(x, y, model_.link_head.kind));
    }
    return out;
  }

 private:
  V2wModel& model_;
  const CweHierarchy& h_;
  std::map<std::string, Eigen::RowVectorXd> cache_;
};

// Scores a CVE against every node, then walks the hierarchy.
inline std::vector<PredictionPath> predict_paths(const PairScorer& scorer, const std::string& cve_text,
                                                 const CweHierarchy& h, const KTriple& k) {
  std::vector<std::string> candidates;
  for (const auto& [id, node] : h.nodes()) candidates.push_back(id);
  auto scores = scorer.score_all(cve_text, candidates);
  std::map<std::string, double> link_values;
  for (const auto& [id, s] : scores) link_values[id] = s.link;
  return enumerate_paths(h, link_values, k.k1, k.k2, k.k3);
}

struct PathAccuracy {
  std::size_t correct = 0;
  std::size_t evaluated = 0;
  std::size_t excluded_unlabeled = 0;
  double accuracy() const {
    return evaluated == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(evaluated);
  }
};

// A CVE counts correct iff any of its true CWE ids appears anywhere on any
// predicted path; unlabeled CVEs are excluded and tallied.
inline PathAccuracy path_accuracy(const std::vector<std::vector<PredictionPath>>& predictions,
                                  const std::vector<std::set<std::string>>& truths) {
  if (predictions.size() != truths.size())
    throw Error("path_accuracy: prediction/truth count mismatch");
  PathAccuracy out;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (truths[i].empty()) {
      ++out.excluded_unlabeled;
      continue;
    }
    ++out.evaluated;
    bool hit = false;
    for (const auto& path : predictions[i]) {
      for (const auto& node : path.nodes)
        if (truths[i].count(node)) {
          hit = true;
          break;
        }
      if (hit) break;
    }
    if (hit) ++out.correct;
  }
  return out;
}

struct LinkF1 {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  bool zero_predicted_links = false;
  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
  double f1() const {
    double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
};

inline LinkF1 f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn = 0) {
  LinkF1 out;
  out.tp = tp;
  out.fp = fp;
  out.fn = fn;
  out.tn = tn;
  out.zero_predicted_links = tp + fp == 0;
  return out;
}

// Every (CVE, CWE in u) pair is classified; gold positives are the CVE's
// positive closure. F1 is over the link class.
inline LinkF1 link_f1(const PairScorer& scorer, const std::vector<CveRecord>& test,
                      const CweHierarchy& h, const std::set<std::string>& u, int threads = 1) {
  std::vector<std::string> candidates(u.begin(), u.end());
  std::vector<std::array<std::size_t, 4>> partial(test.size(), {0, 0, 0, 0});
  parallel_for(test.size(), threads, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      const CveRecord& rec = test[i];
      std::set<std::string> labels;
      for (const auto& l : rec.labels)
        if (h.contains(l)) labels.insert(l);
      if (labels.empty()) continue;
      auto gold = h.positive_closure(labels);
      auto scores = scorer.score_all(rec.description, candidates);
      for (const auto& id : candidates) {
        bool predicted = scores.at(id).is_link();
        bool actual = gold.count(id) != 0;
        if (predicted && actual) ++partial[i][0];
        else if (predicted && !actual) ++partial[i][1];
        else if (!predicted && actual) ++partial[i][2];
        else ++partial[i][3];
      }
    }
  });
  LinkF1 out;
  for (const auto& p : partial) {
    out.tp += p[0];
    out.fp += p[1];
    out.fn += p[2];
    out.tn += p[3];
  }
  out.zero_predicted_links = out.tp + out.fp == 0;
  return out;
}

// ---- random baseline ----

namespace detail {

// E[prod over a uniformly chosen m-subset] of the given per-element values:
// the m-th elementary symmetric polynomial over C(n, m).
inline double expected_subset_product(const std::vector<double>& values, int m) {
  const int n = static_cast<int>(values.size());
  if (m <= 0 || m > n) throw Error("expected_subset_product: bad subset size");
  std::vector<double> e(static_cast<std::size_t>(m) + 1, 0.0);
  e[0] = 1.0;
  for (double v : values)
    for (int j = m; j >= 1; --j)  // descending update uses each value at most once
      e[static_cast<std::size_t>(j)] += e[static_cast<std::size_t>(j - 1)] * v;
  double binom = 1.0;
  for (int i = 0; i < m; ++i)
    binom = binom * static_cast<double>(n - i) / static_cast<double>(i + 1);
  return e[static_cast<std::size_t>(m)] / binom;
}

// P(the sub-paths under `id` miss the truth set entirely | id was selected).
inline double subtree_miss_probability(const CweHierarchy& h, const std::string& id, int depth,
                                       const KTriple& k, const std::set<std::string>& truth) {
  if (truth.count(id)) return 0.0;
  if (depth >= 3) return 1.0;
  const auto& children = h.node(id).children;
  if (children.empty()) return 1.0;
  int budget = depth == 1 ? k.k2 : k.k3;
  std::vector<double> vals;
  vals.reserve(children.size());
  for (const auto& c : children)
    vals.push_back(subtree_miss_probability(h, c, depth + 1, k, truth));
  int m = std::min<int>(budget, static_cast<int>(vals.size()));
  return expected_subset_product(vals, m);
}

}  // namespace detail

// Exact expected accuracy of uniformly random top-k selection for one truth
// set: 1 - P(every selected path misses every truth node).
inline double random_hit_probability(const CweHierarchy& h, const KTriple& k,
                                     const std::set<std::string>& truth) {
  if (truth.empty()) throw Error("random_hit_probability: empty truth set");
  auto level1 = h.nodes_at_level(1);
  if (level1.empty()) throw Error("random_hit_probability: no level-1 nodes");
  std::vector<double> vals;
  vals.reserve(level1.size());
  for (const auto& id : level1)
    vals.push_back(detail::subtree_miss_probability(h, id, 1, k, truth));
  int m = std::min<int>(k.k1, static_cast<int>(vals.size()));
  return 1.0 - detail::expected_subset_product(vals, m);
}

// Mean hit probability over a truth distribution (one truth set per test
// CVE), computed exactly.
inline double random_baseline_accuracy(const CweHierarchy& h, const KTriple& k,
                                       const std::vector<std::set<std::string>>& truths) {
  if (truths.empty()) throw Error("random_baseline_accuracy: empty truth distribution");
  std::map<std::set<std::string>, double> cache;
  double sum = 0.0;
  for (const auto& s : truths) {
    auto it = cache.find(s);
    if (it == cache.end()) it = cache.emplace(s, random_hit_probability(h, k, s)).first;
    sum += it->second;
  }
  return sum / static_cast<double>(truths.size());
}

// Monte Carlo estimate of the same quantity.
inline double random_baseline_monte_carlo(const CweHierarchy& h, const KTriple& k,
                                          const std::vector<std::set<std::string>>& truths,
                                          std::size_t trials, std::uint64_t seed) {
  if (truths.empty()) throw Error("random_baseline_monte_carlo: empty truth distribution");
  auto level1 = h.nodes_at_level(1);
  auto rng = make_rng(derive_seed(seed, "mc_baseline"));
  std::uniform_int_distribution<std::size_t> pick_truth(0, truths.size() - 1);

  auto sample_subset = [&rng](std::vector<const std::string*>& pool, int m) {
    for (int i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), pool.size() - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[pick(rng)]);
    }
  };

  std::size_t hits = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::set<std::string>& truth = truths[pick_truth(rng)];
    bool hit = false;
    std::vector<const std::string*> roots;
    roots.reserve(level1.size());
    for (const auto& id : level1) roots.push_back(&id);
    int m1 = std::min<int>(k.k1, static_cast<int>(roots.size()));
    sample_subset(roots, m1);
    for (int i = 0; i < m1 && !hit; ++i) {
      const std::string& n1 = *roots[static_cast<std::size_t>(i)];
      if (truth.count(n1)) {
        hit = true;
        break;
      }
      const auto& c1set = h.node(n1).children;
      if (c1set.empty()) continue;
      std::vector<const std::string*> c1;
      c1.reserve(c1set.size());
      for (const auto& id : c1set) c1.push_back(&id);
      int m2 = std::min<int>(k.k2, static_cast<int>(c1.size()));
      sample_subset(c1, m2);
      for (int j = 0; j < m2 && !hit; ++j) {
        const std::string& n2 = *c1[static_cast<std::size_t>(j)];
        if (truth.count(n2)) {
          hit = true;
          break;
        }
        const auto& c2set = h.node(n2).children;
        if (c2set.empty()) continue;
        std::vector<const std::string*> c2;
        c2.reserve(c2set.size());
        for (const auto& id : c2set) c2.push_back(&id);
        int m3 = std::min<int>(k.k3, static_cast<int>(c2.size()));
        sample_subset(c2, m3);
        for (int l = 0; l < m3; ++l) {
          if (truth.count(*c2[static_cast<std::size_t>(l)])) {
            hit = true;
            break;
          }
        }
      }
    }
    if (hit) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(trials);
}

// Novel iff every link confidence against the known CWE set stays below beta.
inline bool detect_new_cwe(const PairScorer& scorer, const std::string& cve_text,
                           const std::set<std::string>& u, double beta) {
  std::vector<std::string> candidates(u.begin(), u.end());
  auto scores = scorer.score_all(cve_text, candidates);
  double best = 0.0;
  for (const auto& [id, s] : scores) best = std::max(best, s.link);
  return best < beta;
}

// ---- aggregated evaluation ----

struct BucketReport {
  std::size_t count = 0;
  std::array<double, 3> accuracy{};
};

struct TestSetReport {
  std::string name;
  std::size_t evaluated = 0;
  std::size_t excluded_unlabeled = 0;
  std::array<double, 3> accuracy{};
  std::array<double, 3> random_baseline{};
  std::map<std::string, BucketReport> buckets;
  LinkF1 f1;
  bool monotonic = true;
};

struct EvalReport {
  std::vector<TestSetReport> sections;
  nlohmann::json config;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config"] = config;
    j["sections"] = nlohmann::json::array();
    for (const auto& s : sections) {
      nlohmann::json sec;
      sec["name"] = s.name;
      sec["evaluated"] = s.evaluated;
      sec["excluded_unlabeled"] = s.excluded_unlabeled;
      for (std::size_t i = 0; i < 3; ++i) {
        sec["accuracy"][report_triples()[i].label()] = s.accuracy[i];
        sec["random_baseline"][report_triples()[i].label()] = s.random_baseline[i];
      }
      for (const auto& [name, b] : s.buckets) {
        nlohmann::json bucket;
        bucket["count"] = b.count;
        for (std::size_t i = 0; i < 3; ++i)
          bucket["accuracy"][report_triples()[i].label()] = b.accuracy[i];
        sec["buckets"][name] = bucket;
      }
      sec["link_f1"] = {{"tp", s.f1.tp},
                        {"fp", s.f1.fp},
                        {"fn", s.f1.fn},
                        {"tn", s.f1.tn},
                        {"precision", s.f1.precision()},
                        {"recall", s.f1.recall()},
                        {"f1", s.f1.f1()},
                        {"zero_predicted_links", s.f1.zero_predicted_links}};
      sec["monotonic"] = s.monotonic;
      j["sections"].push_back(sec);
    }
    return j;
  }

  std::string to_text() const {
    std::string out;
    char buf[256];
    for (const auto& s : sections) {
      out += "== " + s.name + " ==\n";
      std::snprintf(buf, sizeof(buf), "  evaluated %zu  excluded(unlabeled) %zu\n", s.evaluated,
                    s.excluded_unlabeled);
      out += buf;
      std::snprintf(buf, sizeof(buf), "  %-12s %10s %10s %10s\n", "metric", "(1,1,1)", "(3,2,1)",
                    "(5,2,2)");
      out += buf;
      std::snprintf(buf, sizeof(buf), "  %-12s %10.4f %10.4f %10.4f\n", "accuracy", s.accuracy[0],
                    s.accuracy[1], s.accuracy[2]);
      out += buf;
      std::snprintf(buf, sizeof(buf), "  %-12s %10.4f %10.4f %10.4f\n", "random", s.random_baseline[0],
                    s.random_baseline[1], s.random_baseline[2]);
      out += buf;
      for (const auto& [name, b] : s.buckets) {
        if (b.count == 0) continue;
        std::snprintf(buf, sizeof(buf), "  %-12s %10.4f %10.4f %10.4f  (n=%zu)\n", name.c_str(),
                      b.accuracy[0], b.accuracy[1], b.accuracy[2], b.count);
        out += buf;
      }
      std::snprintf(buf, sizeof(buf), "  link F1 %.4f (P %.4f R %.4f, tp %zu fp %zu fn %zu)\n",
                    s.f1.f1(), s.f1.precision(), s.f1.recall(), s.f1.tp, s.f1.fp, s.f1.fn);
      out += buf;
    }
    return out;
  }
};

// Scores one test list: per-CVE paths at all three budgets from a single
// score map, overall and per-bucket accuracy, link F1.
inline TestSetReport evaluate_test_set(const PairScorer& scorer, const std::string& name,
                                       const std::vector<CveRecord>& test,
                                       const std::vector<CveRecord>& train,
                                       const CweHierarchy& h, const std::set<std::string>& u,
                                       int threads = 1) {
  TestSetReport report;
  report.name = name;

  std::vector<std::string> candidates;
  for (const auto& [id, node] : h.nodes()) candidates.push_back(id);

  struct PerCve {
    bool labeled = false;
    std::array<bool, 3> hit{};
  };
  std::vector<PerCve> results(test.size());

  parallel_for(test.size(), threads, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      const CveRecord& rec = test[i];
      std::set<std::string> truth;
      for (const auto& l : rec.labels)
        if (h.contains(l)) truth.insert(l);
      if (truth.empty()) continue;
      results[i].labeled = true;
      auto scores = scorer.score_all(rec.description, candidates);
      std::map<std::string, double> link_values;
      for (const auto& [id, s] : scores) link_values[id] = s.link;
      for (std::size_t t = 0; t < 3; ++t) {
        const KTriple& k = report_triples()[t];
        auto paths = enumerate_paths(h, link_values, k.k1, k.k2, k.k3);
        bool hit = false;
        for (const auto& p : paths) {
          for (const auto& n : p.nodes)
            if (truth.count(n)) {
              hit = true;
              break;
            }
          if (hit) break;
        }
        results[i].hit[t] = hit;
      }
    }
  });

  std::array<std::size_t, 3> correct{};
  std::vector<std::set<std::string>> truth_distribution;
  std::map<std::string, std::array<bool, 3>> hit_by_id;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (!results[i].labeled) {
      ++report.excluded_unlabeled;
      continue;
    }
    ++report.evaluated;
    for (std::size_t t = 0; t < 3; ++t)
      if (results[i].hit[t]) ++correct[t];
    std::set<std::string> truth;
    for (const auto& l : test[i].labels)
      if (h.contains(l)) truth.insert(l);
    truth_distribution.push_back(truth);
    hit_by_id[test[i].id] = results[i].hit;
  }
  for (std::size_t t = 0; t < 3; ++t)
    report.accuracy[t] = report.evaluated == 0
                             ? 0.0
                             : static_cast<double>(correct[t]) / static_cast<double>(report.evaluated);
  report.monotonic = correct[0] <= correct[1] && correct[1] <= correct[2];

  if (!truth_distribution.empty())
    for (std::size_t t = 0; t < 3; ++t)
      report.random_baseline[t] = random_baseline_accuracy(h, report_triples()[t], truth_distribution);

  auto buckets = bucket_by_training_count(test, train, h);
  for (const auto& [bucket_name, members] : buckets) {
    BucketReport b;
    std::array<std::size_t, 3> bucket_correct{};
    for (const auto& rec : members) {
      auto it = hit_by_id.find(rec.id);
      if (it == hit_by_id.end()) continue;
      ++b.count;
      for (std::size_t t = 0; t < 3; ++t)
        if (it->second[t]) ++bucket_correct[t];
    }
    for (std::size_t t = 0; t < 3; ++t)
      b.accuracy[t] =
          b.count == 0 ? 0.0 : static_cast<double>(bucket_correct[t]) / static_cast<double>(b.count);
    report.buckets[bucket_name] = b;
  }

  report.f1 = link_f1(scorer, test, h, u, threads);
  return report;
}

struct ZeroShotOutcome {
  TestSetReport report;
  std::set<std::string> training_set;      // u after filtering
  std::size_t filtered_train_size = 0;
  std::vector<CveRecord> eval_records;     // test CVEs whose truth is held out
  std::vector<CveRecord> train_records;    // the filtered training records
};

// Removes every CVE labeled with a held-out CWE or any of its ancestors or
// descendants from training, trains the model, and evaluates on the test
// CVEs whose truth lies in the held-out set.
inline ZeroShotOutcome zero_shot_protocol(V2wModel& model, const DatasetSplit& split,
                                          const CweHierarchy& h,
                                          const std::set<std::string>& held_out,
                                          const TrainConfig& cfg) {
  if (held_out.empty()) throw Error("zero_shot: held-out CWE set is empty");
  std::set<std::string> banned = held_out;
  for (const auto& w : held_out) {
    if (!h.contains(w)) throw Error("zero_shot: unknown CWE " + w);
    auto anc = h.ancestors(w);
    auto desc = h.descendants(w);
    banned.insert(anc.begin(), anc.end());
    banned.insert(desc.begin(), desc.end());
  }

  ZeroShotOutcome out;
  for (const auto& rec : split.train) {
    bool clean = true;
    for (const auto& l : rec.labels)
      if (banned.count(l)) clean = false;
    if (clean && !rec.labels.empty()) out.train_records.push_back(rec);
  }
  out.filtered_train_size = out.train_records.size();
  if (out.train_records.empty()) throw Error("zero_shot: filtering removed every training record");

  out.training_set = training_cwe_set(out.train_records, h);
  train_link(model, out.train_records, h, out.training_set, cfg);

  auto collect = [&](const std::vector<CveRecord>& test) {
    for (const auto& rec : test)
      for (const auto& l : rec.labels)
        if (held_out.count(l)) {
          out.eval_records.push_back(rec);
          break;
        }
  };
  collect(split.test1);
  collect(split.test2);

  EncoderPairScorer scorer(model, h);
  scorer.prime(h, cfg.threads);
  out.report = evaluate_test_set(scorer, "zero-shot", out.eval_records, out.train_records, h,
                                 out.training_set, cfg.threads);
  return out;
}

}  // namespace v2w
