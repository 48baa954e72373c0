#pragma once

// Training-link generation, positive/negative balancing and the two
// optimization stages: masked-LM pretraining over all descriptions, then
// joint link + reconstruction training.
//
// Per mini-batch the pooled representation of every distinct CVE and CWE is
// computed once on its own tape and the links combine those afterwards. The
// per-sequence tapes can run on several workers; gradients accumulate into
// per-worker stores that merge in worker order, so a fixed seed and thread
// count reproduce results bit for bit.

#include <algorithm>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "v2w/autodiff.hpp"
#include "v2w/common.hpp"
#include "v2w/corpus.hpp"
#include "v2w/cwe_hierarchy.hpp"
#include "v2w/model.hpp"
#include "v2w/optimizer.hpp"

namespace v2w {

enum class BalanceMode { kRepeat, kWeight };

inline std::string to_string(BalanceMode m) {
  return m == BalanceMode::kRepeat ? "repeat" : "weight";
}

inline BalanceMode balance_from_string(const std::string& s) {
  if (s == "repeat") return BalanceMode::kRepeat;
  if (s == "weight") return BalanceMode::kWeight;
  throw Error("unknown balance mode: " + s);
}

// How the link path sees a sequence while the reconstruction head trains.
// kShared: one corrupted pass feeds both heads. kSeparate: the link path
// pools a clean pass and the decoder consumes its own corrupted pass.
enum class RdInput { kShared, kSeparate };

inline std::string to_string(RdInput m) {
  return m == RdInput::kShared ? "shared" : "separate";
}

inline RdInput rd_input_from_string(const std::string& s) {
  if (s == "shared") return RdInput::kShared;
  if (s == "separate") return RdInput::kSeparate;
  throw Error("unknown rd input mode: " + s);
}

struct TrainConfig {
  int batch_size = 32;
  int k_neg = 32;
  double gamma1 = 1.0;
  double gamma2 = 1.0;
  double lr = 2e-5;
  double warmup_frac = 0.1;
  double weight_decay = 0.01;
  int epochs_pretrain = 25;
  int epochs_link = 20;
  std::uint64_t seed = 42;
  bool rd_enabled = true;
  RdInput rd_input = RdInput::kShared;
  BalanceMode balance = BalanceMode::kRepeat;
  // 0 disables clipping. The loss is a sum over links, so a tight global
  // clip would mostly rescale the whole gradient; leave it off unless a run
  // diverges.
  double clip_norm = 0.0;
  int threads = 1;
  bool debug_checks = false;

  void validate() const {
    if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
    if (k_neg < 1) throw Error("train config: k_neg must be >= 1");
    if (gamma1 <= 0.0 || gamma2 <= 0.0) throw Error("train config: gammas must be > 0");
    if (warmup_frac < 0.0 || warmup_frac >= 1.0)
      throw Error("train config: warmup_frac must be in [0,1)");
    if (epochs_pretrain < 0 || epochs_link < 0) throw Error("train config: negative epochs");
  }
};

struct LinkBatch {
  std::vector<std::pair<std::string, std::string>> positives;  // (cve id, cwe id)
  std::vector<std::pair<std::string, std::string>> negatives;
  std::vector<double> pos_weights;
  std::vector<double> neg_weights;
  std::size_t neg_shortfall = 0;
};

// The CWE ids available to training: the union of positive closures over the
// training records.
inline std::set<std::string> training_cwe_set(const std::vector<CveRecord>& train,
                                              const CweHierarchy& h) {
  std::set<std::string> u;
  for (const auto& r : train) {
    std::set<std::string> labels;
    for (const auto& l : r.labels)
      if (h.contains(l)) labels.insert(l);
    auto closure = h.positive_closure(labels);
    u.insert(closure.begin(), closure.end());
  }
  return u;
}

// Positives: every labeled CWE of each CVE plus all its ancestors. Negatives:
// k_neg CWEs per CVE sampled uniformly without replacement from u minus that
// CVE's positive closure; when fewer are available they are all taken and the
// shortfall tallied.
inline LinkBatch generate_links(const std::vector<CveRecord>& batch, const CweHierarchy& h,
                                const std::set<std::string>& u, int k_neg,
                                std::mt19937_64& rng) {
  LinkBatch lb;
  for (const auto& rec : batch) {
    std::set<std::string> labels;
    for (const auto& l : rec.labels)
      if (h.contains(l)) labels.insert(l);
    bool any_in_u = false;
    for (const auto& l : labels)
      if (u.count(l)) any_in_u = true;
    if (!any_in_u)
      throw Error("generate_links: record " + rec.id + " has no label inside the training CWE set");

    auto closure = h.positive_closure(labels);
    for (const auto& w : closure) lb.positives.emplace_back(rec.id, w);

    std::vector<std::string> candidates;
    candidates.reserve(u.size());
    for (const auto& w : u)
      if (!closure.count(w)) candidates.push_back(w);
    std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k_neg), candidates.size());
    if (take < static_cast<std::size_t>(k_neg)) lb.neg_shortfall += static_cast<std::size_t>(k_neg) - take;
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
      std::swap(candidates[i], candidates[pick(rng)]);
      lb.negatives.emplace_back(rec.id, candidates[i]);
    }
  }
  lb.pos_weights.assign(lb.positives.size(), 1.0);
  lb.neg_weights.assign(lb.negatives.size(), 1.0);
  return lb;
}

// Repeat mode cycles the smaller side until both sides have equal count;
// weight mode leaves counts alone and scales the weights so both sides carry
// the same total. Either way sum(pos weights) == sum(neg weights) afterwards.
inline LinkBatch balance(LinkBatch lb, BalanceMode mode) {
  if (lb.positives.empty()) throw Error("balance: batch has no positive links");
  if (lb.negatives.empty()) return lb;
  if (mode == BalanceMode::kRepeat) {
    auto repeat = [](auto& links, auto& weights, std::size_t target) {
      std::size_t original = links.size();
      for (std::size_t i = links.size(); i < target; ++i) {
        links.push_back(links[i % original]);
        weights.push_back(1.0);
      }
    };
    if (lb.positives.size() < lb.negatives.size())
      repeat(lb.positives, lb.pos_weights, lb.negatives.size());
    else if (lb.negatives.size() < lb.positives.size())
      repeat(lb.negatives, lb.neg_weights, lb.positives.size());
  } else {
    double w = static_cast<double>(lb.negatives.size()) / static_cast<double>(lb.positives.size());
    lb.pos_weights.assign(lb.positives.size(), w);
    lb.neg_weights.assign(lb.negatives.size(), 1.0);
  }
  return lb;
}

struct EpochLogRow {
  int epoch = 0;
  std::string split;
  double loss_lp = 0.0;
  double loss_rd = 0.0;
  double lr = 0.0;
};

inline std::string train_log_to_csv(const std::vector<EpochLogRow>& rows) {
  std::string out = "epoch,split,loss_lp,loss_rd,lr\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.8g,%.8g,%.8g\n", r.epoch, r.split.c_str(),
                  r.loss_lp, r.loss_rd, r.lr);
    out += buf;
  }
  return out;
}

namespace detail {

// One encoded sequence's tape and the handles the batch loss needs.
struct SeqGraph {
  std::unique_ptr<Tape> tape;
  Tape::Node* pooled = nullptr;
  Tape::Node* rd_loss = nullptr;
};

struct BatchResult {
  double loss_lp = 0.0;
  double loss_rd = 0.0;
  double loss_total = 0.0;
};

// Builds per-sequence graphs (phase A, parallel), combines pooled vectors on
// a head tape (phase B, serial), then backpropagates each sequence tape from
// its seeds (phase C, parallel). Gradients land in `grads`.
inline BatchResult run_link_batch(V2wModel& model, const LinkBatch& lb,
                                  const std::map<std::string, std::string>& texts,
                                  const TrainConfig& cfg, std::uint64_t epoch,
                                  std::uint64_t batch_index, GradStore& grads,
                                  bool compute_grads) {
  // Distinct sequence keys in a fixed order: CVE ids first, then CWE ids.
  std::vector<std::string> keys;
  {
    std::set<std::string> cves, cwes;
    for (const auto& [u, v] : lb.positives) {
      cves.insert(u);
      cwes.insert(v);
    }
    for (const auto& [u, v] : lb.negatives) {
      cves.insert(u);
      cwes.insert(v);
    }
    keys.assign(cves.begin(), cves.end());
    keys.insert(keys.end(), cwes.begin(), cwes.end());
  }
  std::map<std::string, std::size_t> key_index;
  for (std::size_t i = 0; i < keys.size(); ++i) key_index[keys[i]] = i;

  int threads = cfg.threads < 1 ? 1 : cfg.threads;
  std::vector<GradStore> worker_stores(static_cast<std::size_t>(threads));
  for (auto& s : worker_stores) s.resize(model.params.size());

  std::vector<SeqGraph> graphs(keys.size());
  const int T = model.encoder.cfg.seq_len;

  // Phase A: forward every distinct sequence on its own tape.
  parallel_for(keys.size(), threads, [&](std::size_t begin, std::size_t end, int worker) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::string& key = keys[i];
      auto it = texts.find(key);
      if (it == texts.end()) throw Error("trainer: no text for " + key);
      SeqGraph& g = graphs[i];
      g.tape = std::make_unique<Tape>(compute_grads ? &worker_stores[static_cast<std::size_t>(worker)]
                                                    : nullptr);
      TokenSequence clean = model.vocab.encode(it->second, T);
      TokenSequence input = clean;
      MaskedSequence masked;
      if (cfg.rd_enabled) {
        auto mask_rng = make_rng(derive_seed(cfg.seed, "mask", epoch,
                                             batch_index * 100003ULL + i));
        masked = mask_sequence(clean, model.vocab, mask_rng);
        if (cfg.rd_input == RdInput::kShared) input = masked.corrupted;
      }
      auto drop_rng = make_rng(derive_seed(cfg.seed, "dropout", epoch,
                                           batch_index * 100003ULL + i));
      Tape::Node* hidden = encoder_forward(*g.tape, model.encoder, input,
                                           /*train=*/compute_grads, drop_rng);
      g.pooled = encoder_pool(*g.tape, model.encoder, hidden, input, model.pooling);
      if (cfg.rd_enabled) {
        Tape::Node* rd_hidden = hidden;
        if (cfg.rd_input == RdInput::kSeparate) {
          auto drop_rng2 = make_rng(derive_seed(cfg.seed, "dropout_rd", epoch,
                                                batch_index * 100003ULL + i));
          rd_hidden = encoder_forward(*g.tape, model.encoder, masked.corrupted,
                                      /*train=*/compute_grads, drop_rng2);
        }
        g.rd_loss = reconstruction_loss(*g.tape, model.decoder, rd_hidden, masked).loss;
      }
    }
  });

  // Phase B: link losses over pooled vectors on one head tape.
  GradStore head_store(model.params.size());
  Tape head_tape(compute_grads ? &head_store : nullptr);
  std::vector<Tape::Node*> pooled_inputs(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i)
    pooled_inputs[i] = head_tape.input(graphs[i].pooled->val(), /*needs_grad=*/compute_grads);

  std::vector<Tape::Node*> losses;
  std::vector<double> loss_weights;
  std::vector<double> rd_coeff(keys.size(), 0.0);
  auto add_side = [&](const std::vector<std::pair<std::string, std::string>>& links,
                      const std::vector<double>& weights, double gamma, bool is_link) {
    for (std::size_t i = 0; i < links.size(); ++i) {
      std::size_t ui = key_index.at(links[i].first);
      std::size_t vi = key_index.at(links[i].second);
      Tape::Node* combined =
          combine(head_tape, pooled_inputs[ui], pooled_inputs[vi], model.link_head.kind);
      Tape::Node* logits = link_logits(head_tape, model.link_head, combined);
      losses.push_back(link_loss(head_tape, logits, is_link));
      double w = gamma * weights[i];
      loss_weights.push_back(w);
      rd_coeff[ui] += w;
      rd_coeff[vi] += w;
    }
  };
  add_side(lb.positives, lb.pos_weights, cfg.gamma1, true);
  add_side(lb.negatives, lb.neg_weights, cfg.gamma2, false);

  Tape::Node* lp_loss = head_tape.weighted_sum(losses, loss_weights);

  BatchResult result;
  result.loss_lp = lp_loss->val()(0, 0);
  if (cfg.rd_enabled) {
    for (std::size_t i = 0; i < keys.size(); ++i)
      result.loss_rd += rd_coeff[i] * graphs[i].rd_loss->val()(0, 0);
  }
  result.loss_total = result.loss_lp + result.loss_rd;

  if (!compute_grads) return result;

  head_tape.backward(lp_loss);

  // Phase C: push pooled-vector and reconstruction seeds through each
  // sequence tape; free tapes as soon as they are consumed.
  parallel_for(keys.size(), threads, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      SeqGraph& g = graphs[i];
      if (pooled_inputs[i]->grad_ready) g.tape->seed(g.pooled, pooled_inputs[i]->grad);
      if (cfg.rd_enabled && rd_coeff[i] != 0.0) {
        Mat seed(1, 1);
        seed(0, 0) = rd_coeff[i];
        g.tape->seed(g.rd_loss, seed);
      }
      g.tape->run_backward();
      g.tape.reset();
    }
  });

  grads.clear();
  grads.add_from(head_store);
  for (const auto& s : worker_stores) grads.add_from(s);
  return result;
}

}  // namespace detail

// Masked-LM pretraining over every supplied text (CVE and CWE descriptions,
// labeled or not). All encoder layers and the decoder head train; the link
// head is untouched. Returns per-epoch log rows.
inline std::vector<EpochLogRow> pretrain(V2wModel& model, const std::vector<std::string>& texts,
                                         const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.epochs_pretrain == 0) return {};
  std::vector<std::string> usable;
  for (const auto& t : texts)
    if (!collapse_whitespace(t).empty()) usable.push_back(t);
  if (usable.empty()) throw Error("pretrain: no usable texts");

  model.encoder.set_trainable(0);
  const int T = model.encoder.cfg.seq_len;
  const std::size_t n = usable.size();
  const std::size_t n_batches = (n + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                static_cast<std::size_t>(cfg.batch_size);
  OptimizerConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.total_steps = static_cast<long>(n_batches) * cfg.epochs_pretrain;
  ocfg.warmup_steps = static_cast<long>(cfg.warmup_frac * static_cast<double>(ocfg.total_steps));
  AdamW opt(model.params, ocfg);

  int threads = cfg.threads < 1 ? 1 : cfg.threads;
  std::vector<EpochLogRow> log;
  for (int epoch = 0; epoch < cfg.epochs_pretrain; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto order_rng = make_rng(derive_seed(cfg.seed, "pretrain_order", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), order_rng);

    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::size_t lo = b * static_cast<std::size_t>(cfg.batch_size);
      std::size_t hi = std::min(n, lo + static_cast<std::size_t>(cfg.batch_size));
      std::size_t count = hi - lo;

      std::vector<GradStore> worker_stores(static_cast<std::size_t>(threads));
      for (auto& s : worker_stores) s.resize(model.params.size());
      std::vector<double> losses(count, 0.0);
      std::vector<std::unique_ptr<Tape>> tapes(count);
      std::vector<Tape::Node*> loss_nodes(count, nullptr);

      parallel_for(count, threads, [&](std::size_t begin, std::size_t end, int worker) {
        for (std::size_t i = begin; i < end; ++i) {
          const std::string& text = usable[order[lo + i]];
          tapes[i] = std::make_unique<Tape>(&worker_stores[static_cast<std::size_t>(worker)]);
          TokenSequence clean = model.vocab.encode(text, T);
          auto mask_rng = make_rng(derive_seed(cfg.seed, "pretrain_mask",
                                               static_cast<std::uint64_t>(epoch),
                                               b * 100003ULL + i));
          MaskedSequence masked = mask_sequence(clean, model.vocab, mask_rng);
          auto drop_rng = make_rng(derive_seed(cfg.seed, "pretrain_dropout",
                                               static_cast<std::uint64_t>(epoch),
                                               b * 100003ULL + i));
          Tape::Node* hidden =
              encoder_forward(*tapes[i], model.encoder, masked.corrupted, true, drop_rng);
          auto rl = reconstruction_loss(*tapes[i], model.decoder, hidden, masked);
          loss_nodes[i] = rl.loss;
          losses[i] = rl.loss->val()(0, 0);
        }
      });

      double batch_loss = 0.0;
      for (double l : losses) batch_loss += l;
      batch_loss /= static_cast<double>(count);
      if (!std::isfinite(batch_loss))
        throw Error("pretrain: loss diverged at step " + std::to_string(opt.step_index()));

      Mat seed(1, 1);
      seed(0, 0) = 1.0 / static_cast<double>(count);
      parallel_for(count, threads, [&](std::size_t begin, std::size_t end, int) {
        for (std::size_t i = begin; i < end; ++i) {
          tapes[i]->seed(loss_nodes[i], seed);
          tapes[i]->run_backward();
          tapes[i].reset();
        }
      });

      GradStore grads(model.params.size());
      for (const auto& s : worker_stores) grads.add_from(s);
      clip_global_norm(grads, cfg.clip_norm);
      double lr_now = opt.current_lr();
      opt.step(grads);
      epoch_loss += batch_loss;
      ++epoch_batches;
      if (epoch_batches == n_batches) {
        EpochLogRow row;
        row.epoch = epoch + 1;
        row.split = "pretrain";
        row.loss_lp = 0.0;
        row.loss_rd = epoch_loss / static_cast<double>(epoch_batches);
        row.lr = lr_now;
        log.push_back(row);
      }
    }
  }
  return log;
}

// Joint link + reconstruction training (Siamese encoder, shared weights).
// Records must carry at least one label inside u.
inline std::vector<EpochLogRow> train_link(V2wModel& model, const std::vector<CveRecord>& train,
                                           const CweHierarchy& h, const std::set<std::string>& u,
                                           const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.epochs_link == 0) return {};
  if (train.empty()) throw Error("train_link: no training records");
  if (u.empty()) throw Error("train_link: empty training CWE set");

  model.encoder.set_trainable(model.encoder.cfg.frozen_layers);

  std::map<std::string, std::string> texts;
  for (const auto& r : train) texts[r.id] = r.description;
  for (const auto& w : u) texts[w] = h.node(w).description;

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
    auto order_rng = make_rng(derive_seed(cfg.seed, "link_order", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), order_rng);

    double epoch_lp = 0.0, epoch_rd = 0.0;
    double lr_now = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::size_t lo = b * static_cast<std::size_t>(cfg.batch_size);
      std::size_t hi = std::min(n, lo + static_cast<std::size_t>(cfg.batch_size));
      std::vector<CveRecord> batch;
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(train[order[i]]);

      auto link_rng = make_rng(derive_seed(cfg.seed, "links", static_cast<std::uint64_t>(epoch), b));
      LinkBatch lb = generate_links(batch, h, u, cfg.k_neg, link_rng);
      lb = balance(lb, cfg.balance);

      if (cfg.debug_checks) {
        for (const auto& rec : batch) {
          std::set<std::string> labels;
          for (const auto& l : rec.labels)
            if (h.contains(l)) labels.insert(l);
          auto closure = h.positive_closure(labels);
          for (const auto& [cve, cwe] : lb.negatives)
            if (cve == rec.id && closure.count(cwe))
              throw Error("train_link: negative link collides with positive closure: " + cve +
                          " / " + cwe);
        }
      }

      GradStore grads(model.params.size());
      auto result = detail::run_link_batch(model, lb, texts, cfg,
                                           static_cast<std::uint64_t>(epoch), b, grads, true);
      if (!std::isfinite(result.loss_total))
        throw Error("train_link: loss diverged at step " + std::to_string(opt.step_index()));
      clip_global_norm(grads, cfg.clip_norm);
      lr_now = opt.current_lr();
      opt.step(grads);
      epoch_lp += result.loss_lp;
      epoch_rd += result.loss_rd;
    }
    EpochLogRow row;
    row.epoch = epoch + 1;
    row.split = "train";
    row.loss_lp = epoch_lp / static_cast<double>(n_batches);
    row.loss_rd = epoch_rd / static_cast<double>(n_batches);
    row.lr = lr_now;
    log.push_back(row);
  }
  return log;
}

}  // namespace v2w
