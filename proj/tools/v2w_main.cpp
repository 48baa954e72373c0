// v2w command-line driver: ingest feeds, build vocabularies, pretrain, train
// link models, evaluate and predict. Every command emits its full run
// configuration next to its primary output so a run can be replayed
// bit-for-bit with --config.
//
// Exit codes: 0 success, 1 usage/parse/runtime error, 2 missing checkpoint,
// 3 checkpoint/flag configuration mismatch.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "v2w/baseline_tfidf.hpp"
#include "v2w/inference_eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace v2w;

namespace {

constexpr int kExitError = 1;
constexpr int kExitMissingCheckpoint = 2;
constexpr int kExitConfigMismatch = 3;

struct MissingCheckpoint : Error {
  using Error::Error;
};
struct ConfigMismatch : Error {
  using Error::Error;
};

// Everything a run needs; serialized as the run record.
struct RunConfig {
  // paths
  std::string nvd_dir, corpus, cwe_defs, cwe_edges, out, vocab_path, init_ckpt, model_ckpt;
  std::string log_path, report_path, config_path, text;
  std::vector<std::string> nvd_files;
  bool strict = false;

  // model shape
  int layers = 4, hidden = 128, heads = 4, seq_len = 256, ffn_mult = 4;
  int frozen = 2, vocab_size = 4000;
  double dropout = 0.1;
  std::string pooling = "mean";
  std::string combination = "absdiff_mul";
  std::string model_kind = "encoder";  // encoder | tfidf-link | tfidf-class

  // training
  int batch_size = 32, k_neg = 32, epochs = 0;  // 0 = per-command default
  double lr = 2e-5, warmup_frac = 0.1, weight_decay = 0.01;
  double gamma1 = 1.0, gamma2 = 1.0;
  double clip_norm = 0.0;
  std::string balance = "repeat";
  std::string rd = "on";
  std::string rd_input = "shared";
  std::uint64_t seed = 42;
  int threads = 0;  // 0 = V2W_THREADS env or 1

  // evaluation / prediction
  std::string split = "temporal";
  std::string protocol = "standard";
  std::vector<std::string> hold_out;
  std::string k_string = "1,1,1";
  int tfidf_hidden = 256;

  json to_json() const {
    return json{{"nvd_dir", nvd_dir},
                {"nvd_files", nvd_files},
                {"corpus", corpus},
                {"cwe_defs", cwe_defs},
                {"cwe_edges", cwe_edges},
                {"out", out},
                {"vocab_path", vocab_path},
                {"init_ckpt", init_ckpt},
                {"model_ckpt", model_ckpt},
                {"log_path", log_path},
                {"report_path", report_path},
                {"text", text},
                {"strict", strict},
                {"layers", layers},
                {"hidden", hidden},
                {"heads", heads},
                {"seq_len", seq_len},
                {"ffn_mult", ffn_mult},
                {"frozen", frozen},
                {"vocab_size", vocab_size},
                {"dropout", dropout},
                {"pooling", pooling},
                {"combination", combination},
                {"model_kind", model_kind},
                {"batch_size", batch_size},
                {"k_neg", k_neg},
                {"epochs", epochs},
                {"lr", lr},
                {"warmup_frac", warmup_frac},
                {"weight_decay", weight_decay},
                {"gamma1", gamma1},
                {"gamma2", gamma2},
                {"clip_norm", clip_norm},
                {"balance", balance},
                {"rd", rd},
                {"rd_input", rd_input},
                {"seed", seed},
                {"threads", threads},
                {"split", split},
                {"protocol", protocol},
                {"hold_out", hold_out},
                {"k", k_string},
                {"tfidf_hidden", tfidf_hidden}};
  }

  static void from_json_into(const json& j, RunConfig& c) {
    auto s = [&](const char* key, std::string& field) {
      if (j.contains(key)) field = j.at(key).get<std::string>();
    };
    auto i = [&](const char* key, int& field) {
      if (j.contains(key)) field = j.at(key).get<int>();
    };
    auto d = [&](const char* key, double& field) {
      if (j.contains(key)) field = j.at(key).get<double>();
    };
    s("nvd_dir", c.nvd_dir);
    if (j.contains("nvd_files")) c.nvd_files = j.at("nvd_files").get<std::vector<std::string>>();
    s("corpus", c.corpus);
    s("cwe_defs", c.cwe_defs);
    s("cwe_edges", c.cwe_edges);
    s("out", c.out);
    s("vocab_path", c.vocab_path);
    s("init_ckpt", c.init_ckpt);
    s("model_ckpt", c.model_ckpt);
    s("log_path", c.log_path);
    s("report_path", c.report_path);
    s("text", c.text);
    if (j.contains("strict")) c.strict = j.at("strict").get<bool>();
    i("layers", c.layers);
    i("hidden", c.hidden);
    i("heads", c.heads);
    i("seq_len", c.seq_len);
    i("ffn_mult", c.ffn_mult);
    i("frozen", c.frozen);
    i("vocab_size", c.vocab_size);
    d("dropout", c.dropout);
    s("pooling", c.pooling);
    s("combination", c.combination);
    s("model_kind", c.model_kind);
    i("batch_size", c.batch_size);
    i("k_neg", c.k_neg);
    i("epochs", c.epochs);
    d("lr", c.lr);
    d("warmup_frac", c.warmup_frac);
    d("weight_decay", c.weight_decay);
    d("gamma1", c.gamma1);
    d("gamma2", c.gamma2);
    d("clip_norm", c.clip_norm);
    s("balance", c.balance);
    s("rd", c.rd);
    s("rd_input", c.rd_input);
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    i("threads", c.threads);
    s("split", c.split);
    s("protocol", c.protocol);
    if (j.contains("hold_out")) c.hold_out = j.at("hold_out").get<std::vector<std::string>>();
    s("k", c.k_string);
    i("tfidf_hidden", c.tfidf_hidden);
  }
};

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("V2W_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

void write_run_record(const RunConfig& cfg, const std::string& anchor_path) {
  if (anchor_path.empty()) return;
  json j = cfg.to_json();
  j["threads"] = resolve_threads(cfg.threads);
  csv::write_file(anchor_path + ".run.json", j.dump(2) + "\n");
}

TrainConfig train_config_from(const RunConfig& cfg, int default_epochs) {
  TrainConfig tc;
  tc.batch_size = cfg.batch_size;
  tc.k_neg = cfg.k_neg;
  tc.gamma1 = cfg.gamma1;
  tc.gamma2 = cfg.gamma2;
  tc.lr = cfg.lr;
  tc.warmup_frac = cfg.warmup_frac;
  tc.weight_decay = cfg.weight_decay;
  tc.epochs_pretrain = cfg.epochs > 0 ? cfg.epochs : default_epochs;
  tc.epochs_link = cfg.epochs > 0 ? cfg.epochs : default_epochs;
  tc.seed = cfg.seed;
  tc.rd_enabled = cfg.rd == "on";
  tc.rd_input = rd_input_from_string(cfg.rd_input);
  tc.balance = balance_from_string(cfg.balance);
  tc.clip_norm = cfg.clip_norm;
  tc.threads = resolve_threads(cfg.threads);
  tc.validate();
  return tc;
}

CweHierarchy load_hierarchy_or_die(const RunConfig& cfg) {
  if (cfg.cwe_defs.empty() || cfg.cwe_edges.empty())
    throw Error("--cwe-defs and --cwe-edges are required");
  return CweHierarchy::from_files(cfg.cwe_defs, cfg.cwe_edges);
}

std::vector<CveRecord> load_corpus_or_die(const RunConfig& cfg) {
  if (cfg.corpus.empty()) throw Error("--corpus is required");
  return corpus_from_csv(csv::read_file(cfg.corpus));
}

struct SplitData {
  DatasetSplit split;
  std::vector<CveRecord> pretrain_only;
};

SplitData make_split(const std::vector<CveRecord>& records, const CweHierarchy& h,
                     const RunConfig& cfg) {
  auto filtered = filter_labels_to_hierarchy(records, h);
  SplitData out;
  if (cfg.split == "temporal") {
    auto s = temporal_split(filtered);
    out.split = std::move(s.split);
    out.pretrain_only = std::move(s.pretrain_only);
  } else if (cfg.split == "random") {
    auto s = random_split(filtered, cfg.seed);
    out.split = std::move(s.split);
    out.pretrain_only = std::move(s.pretrain_only);
  } else if (cfg.split == "all") {
    for (const auto& r : filtered) {
      if (r.labels.empty()) out.pretrain_only.push_back(r);
      else out.split.train.push_back(r);
    }
  } else {
    throw Error("unknown --split mode: " + cfg.split);
  }
  return out;
}

KTriple parse_k(const std::string& s) {
  KTriple k;
  if (std::sscanf(s.c_str(), "%d,%d,%d", &k.k1, &k.k2, &k.k3) != 3)
    throw Error("--k expects three comma-separated integers, got: " + s);
  return k;
}

void require_file(const std::string& path, const char* what, bool checkpoint = false) {
  if (path.empty()) {
    if (checkpoint) throw MissingCheckpoint(std::string(what) + " is required");
    throw Error(std::string(what) + " is required");
  }
  if (!fs::exists(path)) {
    if (checkpoint) throw MissingCheckpoint(std::string(what) + " not found: " + path);
    throw Error(std::string(what) + " not found: " + path);
  }
}

// ---- commands ----

int cmd_ingest(const RunConfig& cfg) {
  auto h = load_hierarchy_or_die(cfg);
  if (cfg.out.empty()) throw Error("--out directory is required");
  fs::create_directories(cfg.out);

  std::vector<std::string> files = cfg.nvd_files;
  if (!cfg.nvd_dir.empty()) {
    for (const auto& entry : fs::directory_iterator(cfg.nvd_dir))
      if (entry.is_regular_file() && entry.path().extension() == ".json")
        files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
  }
  if (files.empty()) throw Error("no NVD feed files given (--nvd-dir / --nvd-file)");

  int threads = resolve_threads(cfg.threads);
  std::vector<std::vector<CveRecord>> partial(files.size());
  std::vector<IngestTally> tallies(files.size());
  std::vector<std::string> errors(files.size());
  parallel_for(files.size(), threads, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        partial[i] = ingest_nvd(csv::read_file(files[i]), &tallies[i], cfg.strict);
      } catch (const Error& e) {
        errors[i] = e.what();
      }
    }
  });
  for (std::size_t i = 0; i < files.size(); ++i)
    if (!errors[i].empty()) throw Error(files[i] + ": " + errors[i]);

  std::vector<CveRecord> all;
  IngestTally tally;
  for (std::size_t i = 0; i < files.size(); ++i) {
    all.insert(all.end(), partial[i].begin(), partial[i].end());
    tally.items += tallies[i].items;
    tally.kept += tallies[i].kept;
    tally.labeled += tallies[i].labeled;
    tally.dropped_missing_description += tallies[i].dropped_missing_description;
    tally.dropped_empty_description += tallies[i].dropped_empty_description;
    tally.dropped_reject_placeholder += tallies[i].dropped_reject_placeholder;
    tally.sentinel_labels += tallies[i].sentinel_labels;
  }
  std::sort(all.begin(), all.end(),
            [](const CveRecord& a, const CveRecord& b) { return a.id < b.id; });

  csv::write_file((fs::path(cfg.out) / "corpus.csv").string(), corpus_to_csv(all));

  // validated hierarchy bundle, normalized
  std::string defs = "id,name,description\n";
  std::string edges = "child_id,parent_id\n";
  for (const auto& [id, node] : h.nodes()) {
    defs += csv::format_row({id, node.name, node.description});
    for (const auto& p : node.parents) edges += csv::format_row({id, p});
  }
  csv::write_file((fs::path(cfg.out) / "cwe_nodes.csv").string(), defs);
  csv::write_file((fs::path(cfg.out) / "cwe_edges.csv").string(), edges);
  write_run_record(cfg, (fs::path(cfg.out) / "ingest").string());

  std::printf("records=%zu labeled=%zu\n", tally.kept, tally.labeled);
  std::printf("dropped: missing_description=%zu empty_description=%zu reject=%zu sentinel_labels=%zu\n",
              tally.dropped_missing_description, tally.dropped_empty_description,
              tally.dropped_reject_placeholder, tally.sentinel_labels);
  return 0;
}

int cmd_build_vocab(const RunConfig& cfg) {
  auto h = load_hierarchy_or_die(cfg);
  auto records = load_corpus_or_die(cfg);
  if (cfg.out.empty()) throw Error("--out vocabulary path is required");
  auto data = make_split(filter_labels_to_hierarchy(records, h), h, cfg);

  std::vector<std::string> texts;
  for (const auto& r : data.split.train) texts.push_back(r.description);
  for (const auto& r : data.pretrain_only) texts.push_back(r.description);
  for (const auto& [id, node] : h.nodes()) texts.push_back(node.description);

  auto vocab = Vocabulary::build(texts, cfg.vocab_size);
  vocab.save(cfg.out);
  write_run_record(cfg, cfg.out);
  std::printf("vocab tokens=%d texts=%zu\n", vocab.size(), texts.size());
  return 0;
}

// Default frozen-layer count follows the bottom-half ratio when the flag is
// absent and the layer count makes the desk default impossible.
int effective_frozen(const RunConfig& cfg, const std::set<std::string>& explicit_flags) {
  if (explicit_flags.count("frozen")) return cfg.frozen;
  return std::min(cfg.frozen, cfg.layers / 2);
}

std::unique_ptr<V2wModel> model_from_flags(const RunConfig& cfg, const Vocabulary& vocab) {
  EncoderConfig ecfg;
  ecfg.layers = cfg.layers;
  ecfg.hidden = cfg.hidden;
  ecfg.heads = cfg.heads;
  ecfg.seq_len = cfg.seq_len;
  ecfg.vocab_size = vocab.size();
  ecfg.frozen_layers = cfg.frozen;
  ecfg.ffn_mult = cfg.ffn_mult;
  ecfg.dropout = cfg.dropout;
  ecfg.validate();
  auto model = std::make_unique<V2wModel>(ecfg, pooling_from_string(cfg.pooling),
                                          combination_from_string(cfg.combination), vocab);
  model->init(cfg.seed);
  return model;
}

// Loads a checkpoint and rejects explicitly-set model flags that contradict it.
std::unique_ptr<V2wModel> load_model_checked(const std::string& path, const RunConfig& cfg,
                                             const std::set<std::string>& explicit_flags) {
  require_file(path, "checkpoint", /*checkpoint=*/true);
  std::unique_ptr<V2wModel> model;
  try {
    model = V2wModel::load(path);
  } catch (const Error& e) {
    throw Error(std::string("cannot load checkpoint: ") + e.what());
  }
  auto conflict = [&](const std::string& flag, auto actual, auto expected) {
    if (explicit_flags.count(flag) && actual != expected)
      throw ConfigMismatch("flag --" + flag + " conflicts with checkpoint " + path);
  };
  const EncoderConfig& e = model->config();
  conflict("layers", cfg.layers, e.layers);
  conflict("hidden", cfg.hidden, e.hidden);
  conflict("heads", cfg.heads, e.heads);
  conflict("seq-len", cfg.seq_len, e.seq_len);
  conflict("ffn-mult", cfg.ffn_mult, e.ffn_mult);
  conflict("pooling", cfg.pooling, to_string(model->pooling));
  conflict("combination", cfg.combination, to_string(model->link_head.kind));
  return model;
}

int cmd_pretrain(const RunConfig& cfg_in, const std::set<std::string>& explicit_flags) {
  RunConfig cfg = cfg_in;
  cfg.frozen = effective_frozen(cfg, explicit_flags);
  auto h = load_hierarchy_or_die(cfg);
  auto records = load_corpus_or_die(cfg);
  if (cfg.out.empty()) throw Error("--out checkpoint path is required");
  require_file(cfg.vocab_path, "--vocab");
  auto vocab = Vocabulary::load(cfg.vocab_path);

  auto data = make_split(records, h, cfg);
  std::vector<std::string> texts;
  for (const auto& r : data.split.train) texts.push_back(r.description);
  for (const auto& r : data.pretrain_only) texts.push_back(r.description);
  for (const auto& [id, node] : h.nodes()) texts.push_back(node.description);

  auto model = model_from_flags(cfg, vocab);
  auto tc = train_config_from(cfg, /*default_epochs=*/25);
  auto log = pretrain(*model, texts, tc);
  model->save(cfg.out);
  if (!cfg.log_path.empty()) csv::write_file(cfg.log_path, train_log_to_csv(log));
  write_run_record(cfg, cfg.out);
  std::printf("pretrained on %zu texts for %d epochs; checkpoint %s\n", texts.size(),
              tc.epochs_pretrain, cfg.out.c_str());
  if (!log.empty()) std::printf("mlm loss %.4f -> %.4f\n", log.front().loss_rd, log.back().loss_rd);
  return 0;
}

std::vector<CveRecord> filter_hold_out_relatives(const std::vector<CveRecord>& train,
                                                 const CweHierarchy& h,
                                                 const std::set<std::string>& held_out) {
  std::set<std::string> banned = held_out;
  for (const auto& w : held_out) {
    auto anc = h.ancestors(w);
    auto desc = h.descendants(w);
    banned.insert(anc.begin(), anc.end());
    banned.insert(desc.begin(), desc.end());
  }
  std::vector<CveRecord> out;
  for (const auto& r : train) {
    bool clean = true;
    for (const auto& l : r.labels)
      if (banned.count(l)) clean = false;
    if (clean && !r.labels.empty()) out.push_back(r);
  }
  return out;
}

int cmd_train(const RunConfig& cfg_in, const std::set<std::string>& explicit_flags) {
  RunConfig cfg = cfg_in;
  cfg.frozen = effective_frozen(cfg, explicit_flags);
  auto h = load_hierarchy_or_die(cfg);
  auto records = load_corpus_or_die(cfg);
  if (cfg.out.empty()) throw Error("--out checkpoint path is required");
  auto data = make_split(records, h, cfg);
  std::vector<CveRecord> train = data.split.train;
  for (auto it = train.begin(); it != train.end();)
    it = it->labels.empty() ? train.erase(it) : it + 1;
  if (!cfg.hold_out.empty())
    train = filter_hold_out_relatives(train, h,
                                      std::set<std::string>(cfg.hold_out.begin(), cfg.hold_out.end()));
  if (train.empty()) throw Error("no labeled training records after filtering");
  auto u = training_cwe_set(train, h);
  auto tc = train_config_from(cfg, /*default_epochs=*/20);

  if (cfg.model_kind == "encoder") {
    std::unique_ptr<V2wModel> model;
    if (!cfg.init_ckpt.empty()) {
      model = load_model_checked(cfg.init_ckpt, cfg, explicit_flags);
      model->encoder.set_trainable(explicit_flags.count("frozen") ? cfg.frozen
                                                                  : model->config().frozen_layers);
    } else {
      require_file(cfg.vocab_path, "--vocab (or --init)");
      model = model_from_flags(cfg, Vocabulary::load(cfg.vocab_path));
    }
    auto log = train_link(*model, train, h, u, tc);
    model->save(cfg.out);
    if (!cfg.log_path.empty()) csv::write_file(cfg.log_path, train_log_to_csv(log));
    write_run_record(cfg, cfg.out);
    std::printf("trained on %zu records, %zu training CWEs; checkpoint %s\n", train.size(), u.size(),
                cfg.out.c_str());
    if (!log.empty())
      std::printf("final epoch loss: lp=%.4f rd=%.4f\n", log.back().loss_lp, log.back().loss_rd);
  } else if (cfg.model_kind == "tfidf-link") {
    std::vector<std::string> texts;
    for (const auto& r : train) texts.push_back(r.description);
    for (const auto& w : u) texts.push_back(h.node(w).description);
    TfidfLinkModel model(combination_from_string(cfg.combination));
    model.init(texts, cfg.hidden, cfg.seed);
    auto log = train_tfidf_link(model, train, h, u, tc);
    save_tfidf_link(model, cfg.out);
    if (!cfg.log_path.empty()) csv::write_file(cfg.log_path, train_log_to_csv(log));
    write_run_record(cfg, cfg.out);
    std::printf("trained tfidf link baseline on %zu records; checkpoint %s\n", train.size(),
                cfg.out.c_str());
  } else if (cfg.model_kind == "tfidf-class") {
    std::vector<std::string> texts;
    for (const auto& r : train) texts.push_back(r.description);
    TfidfClassModel model;
    model.init(texts, u, cfg.tfidf_hidden, cfg.seed);
    auto log = train_tfidf_class(model, train, h, tc);
    save_tfidf_class(model, cfg.out);
    if (!cfg.log_path.empty()) csv::write_file(cfg.log_path, train_log_to_csv(log));
    write_run_record(cfg, cfg.out);
    std::printf("trained tfidf classifier baseline on %zu records; checkpoint %s\n", train.size(),
                cfg.out.c_str());
  } else {
    throw Error("unknown --model-kind: " + cfg.model_kind);
  }
  return 0;
}

std::unique_ptr<PairScorer> scorer_for_checkpoint(const std::string& path, const RunConfig& cfg,
                                                  const std::set<std::string>& explicit_flags,
                                                  const CweHierarchy& h,
                                                  std::unique_ptr<V2wModel>& model_holder,
                                                  std::unique_ptr<TfidfLinkModel>& tfidf_link_holder,
                                                  std::unique_ptr<TfidfClassModel>& tfidf_class_holder) {
  require_file(path, "--model", /*checkpoint=*/true);
  Checkpoint ckpt = load_checkpoint(path);
  std::string kind = ckpt.config.value("model_kind", "");
  if (kind == "encoder_link") {
    model_holder = load_model_checked(path, cfg, explicit_flags);
    return std::make_unique<EncoderPairScorer>(*model_holder, h);
  }
  if (kind == "tfidf_link") {
    tfidf_link_holder = load_tfidf_link(path);
    return std::make_unique<TfidfLinkScorer>(*tfidf_link_holder, h);
  }
  if (kind == "tfidf_class") {
    tfidf_class_holder = load_tfidf_class(path);
    return std::make_unique<TfidfClassScorer>(*tfidf_class_holder);
  }
  throw Error("unknown model kind in checkpoint: " + kind);
}

int cmd_evaluate(const RunConfig& cfg, const std::set<std::string>& explicit_flags) {
  auto h = load_hierarchy_or_die(cfg);
  auto records = load_corpus_or_die(cfg);
  if (cfg.report_path.empty()) throw Error("--report output path is required");
  auto data = make_split(records, h, cfg);
  int threads = resolve_threads(cfg.threads);

  EvalReport report;
  report.config = cfg.to_json();

  if (cfg.protocol == "zero-shot") {
    if (cfg.hold_out.empty()) throw Error("--protocol zero-shot requires --hold-out");
    std::set<std::string> held(cfg.hold_out.begin(), cfg.hold_out.end());
    std::unique_ptr<V2wModel> model;
    if (!cfg.init_ckpt.empty()) model = load_model_checked(cfg.init_ckpt, cfg, explicit_flags);
    else if (!cfg.model_ckpt.empty()) model = load_model_checked(cfg.model_ckpt, cfg, explicit_flags);
    else throw MissingCheckpoint("--model (or --init) checkpoint is required");
    auto tc = train_config_from(cfg, /*default_epochs=*/20);
    auto outcome = zero_shot_protocol(*model, data.split, h, held, tc);
    report.sections.push_back(outcome.report);
  } else if (cfg.protocol == "standard") {
    std::unique_ptr<V2wModel> model;
    std::unique_ptr<TfidfLinkModel> tfidf_link;
    std::unique_ptr<TfidfClassModel> tfidf_class;
    auto scorer = scorer_for_checkpoint(cfg.model_ckpt, cfg, explicit_flags, h, model, tfidf_link,
                                        tfidf_class);
    scorer->prime(h, threads);
    auto u = training_cwe_set(data.split.train, h);
    if (!data.split.test1.empty())
      report.sections.push_back(evaluate_test_set(*scorer, cfg.split == "temporal" ? "test1 (2018)"
                                                                                   : "test",
                                                  data.split.test1, data.split.train, h, u, threads));
    if (!data.split.test2.empty())
      report.sections.push_back(evaluate_test_set(*scorer, "test2 (2019-2020)", data.split.test2,
                                                  data.split.train, h, u, threads));
    if (!data.split.validation.empty())
      report.sections.push_back(evaluate_test_set(*scorer, "validation", data.split.validation,
                                                  data.split.train, h, u, threads));
    if (report.sections.empty()) throw Error("split contains no test records to evaluate");
  } else {
    throw Error("unknown --protocol: " + cfg.protocol);
  }

  csv::write_file(cfg.report_path, report.to_json().dump(2) + "\n");
  write_run_record(cfg, cfg.report_path);
  std::fputs(report.to_text().c_str(), stdout);
  for (const auto& s : report.sections)
    if (!s.monotonic) throw Error("accuracy monotonicity violated in section " + s.name);
  std::printf("report written to %s\n", cfg.report_path.c_str());
  return 0;
}

int cmd_predict(const RunConfig& cfg, const std::set<std::string>& explicit_flags) {
  auto h = load_hierarchy_or_die(cfg);
  KTriple k = parse_k(cfg.k_string);
  if (k.k1 < 1 || k.k2 < 1 || k.k3 < 1) throw Error("--k values must be >= 1");

  std::string text = cfg.text;
  if (text.empty()) {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    text = ss.str();
  }
  text = collapse_whitespace(text);
  if (text.empty()) throw Error("no description given (--text or stdin)");

  std::unique_ptr<V2wModel> model;
  std::unique_ptr<TfidfLinkModel> tfidf_link;
  std::unique_ptr<TfidfClassModel> tfidf_class;
  auto scorer = scorer_for_checkpoint(cfg.model_ckpt, cfg, explicit_flags, h, model, tfidf_link,
                                      tfidf_class);
  scorer->prime(h, resolve_threads(cfg.threads));

  auto paths = predict_paths(*scorer, text, h, k);
  for (std::size_t i = 0; i < paths.size(); ++i) {
    std::printf("%2zu.", i + 1);
    for (std::size_t d = 0; d < paths[i].nodes.size(); ++d) {
      if (d) std::printf(" ->");
      const std::string& id = paths[i].nodes[d];
      std::printf(" %s (%.4f)", id.c_str(), paths[i].scores[d]);
    }
    std::printf("\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"v2w: CVE-to-CWE hierarchical link prediction"};
  app.require_subcommand(1);

  RunConfig cfg;
  // --config preloads every field; explicit flags then override.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      try {
        RunConfig::from_json_into(json::parse(csv::read_file(argv[i + 1])), cfg);
        cfg.config_path = argv[i + 1];
      } catch (const std::exception& e) {
        std::fprintf(stderr, "error: cannot load --config %s: %s\n", argv[i + 1], e.what());
        return kExitError;
      }
    }
  }

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", cfg.config_path, "JSON run-config to replay (flags override)");
    cmd->add_option("--threads", cfg.threads, "worker threads (default: V2W_THREADS or 1)");
    cmd->add_option("--seed", cfg.seed, "master RNG seed");
    cmd->add_option("--cwe-defs", cfg.cwe_defs, "CWE definitions CSV (id,name,description)");
    cmd->add_option("--cwe-edges", cfg.cwe_edges, "CWE edges CSV (child_id,parent_id)");
  };
  auto add_model_shape = [&](CLI::App* cmd) {
    cmd->add_option("--layers", cfg.layers, "transformer blocks");
    cmd->add_option("--hidden", cfg.hidden, "hidden size");
    cmd->add_option("--heads", cfg.heads, "attention heads");
    cmd->add_option("--seq-len", cfg.seq_len, "token sequence length");
    cmd->add_option("--ffn-mult", cfg.ffn_mult, "feed-forward expansion factor");
    cmd->add_option("--frozen", cfg.frozen, "frozen bottom layers during link training");
    cmd->add_option("--dropout", cfg.dropout, "dropout probability");
    cmd->add_option("--pooling", cfg.pooling, "cls|mean|max");
    cmd->add_option("--combination", cfg.combination,
                    "concat|absdiff|mul|absdiff_mul|concat_mul|concat_absdiff|concat_absdiff_mul");
  };
  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--batch-size", cfg.batch_size, "CVEs per mini-batch");
    cmd->add_option("--k-neg", cfg.k_neg, "negative links per CVE");
    cmd->add_option("--epochs", cfg.epochs, "training epochs");
    cmd->add_option("--lr", cfg.lr, "learning rate");
    cmd->add_option("--warmup", cfg.warmup_frac, "warmup fraction of total steps");
    cmd->add_option("--weight-decay", cfg.weight_decay, "decoupled weight decay");
    cmd->add_option("--gamma1", cfg.gamma1, "positive-side loss weight");
    cmd->add_option("--gamma2", cfg.gamma2, "negative-side loss weight");
    cmd->add_option("--balance", cfg.balance, "repeat|weight");
    cmd->add_option("--rd", cfg.rd, "reconstruction decoder: on|off");
    cmd->add_option("--rd-input", cfg.rd_input, "link input under RD: shared|separate");
    cmd->add_option("--clip-norm", cfg.clip_norm, "global gradient norm cap (0 = off)");
    cmd->add_option("--split", cfg.split, "temporal|random|all");
    cmd->add_option("--log", cfg.log_path, "training log CSV path");
  };

  auto* ingest = app.add_subcommand("ingest", "parse NVD feeds into the corpus CSV");
  add_common(ingest);
  ingest->add_option("--nvd-dir", cfg.nvd_dir, "directory of NVD JSON feed files");
  ingest->add_option("--nvd-file", cfg.nvd_files, "individual NVD JSON feed file(s)");
  ingest->add_option("--out", cfg.out, "output directory");
  ingest->add_flag("--strict", cfg.strict, "fail on any skippable item");

  auto* build_vocab = app.add_subcommand("build-vocab", "build the subword vocabulary");
  add_common(build_vocab);
  build_vocab->add_option("--corpus", cfg.corpus, "corpus CSV");
  build_vocab->add_option("--size", cfg.vocab_size, "target vocabulary size");
  build_vocab->add_option("--out", cfg.out, "vocabulary file path");
  build_vocab->add_option("--split", cfg.split, "temporal|random|all (which texts feed the builder)");

  auto* pre = app.add_subcommand("pretrain", "masked-LM pretraining over CVE/CWE descriptions");
  add_common(pre);
  add_model_shape(pre);
  add_train_flags(pre);
  pre->add_option("--corpus", cfg.corpus, "corpus CSV");
  pre->add_option("--vocab", cfg.vocab_path, "vocabulary file");
  pre->add_option("--out", cfg.out, "output checkpoint");

  auto* train = app.add_subcommand("train", "joint link + reconstruction training");
  add_common(train);
  add_model_shape(train);
  add_train_flags(train);
  train->add_option("--corpus", cfg.corpus, "corpus CSV");
  train->add_option("--vocab", cfg.vocab_path, "vocabulary file (for random init)");
  train->add_option("--init", cfg.init_ckpt, "initial checkpoint (e.g. pretrained)");
  train->add_option("--out", cfg.out, "output checkpoint");
  train->add_option("--model-kind", cfg.model_kind, "encoder|tfidf-link|tfidf-class");
  train->add_option("--tfidf-hidden", cfg.tfidf_hidden, "hidden size of the tfidf classifier");
  train->add_option("--hold-out", cfg.hold_out,
                    "CWE ids whose relatives are removed from training (zero-shot)");

  auto* eval = app.add_subcommand("evaluate", "score a model and write the report");
  add_common(eval);
  add_model_shape(eval);
  add_train_flags(eval);
  eval->add_option("--corpus", cfg.corpus, "corpus CSV");
  eval->add_option("--model", cfg.model_ckpt, "model checkpoint");
  eval->add_option("--init", cfg.init_ckpt, "initial checkpoint for zero-shot retraining");
  eval->add_option("--report", cfg.report_path, "report JSON output path");
  eval->add_option("--protocol", cfg.protocol, "standard|zero-shot");
  eval->add_option("--hold-out", cfg.hold_out, "held-out CWE ids for --protocol zero-shot");

  auto* predict = app.add_subcommand("predict", "rank weakness paths for one description");
  add_common(predict);
  predict->add_option("--model", cfg.model_ckpt, "model checkpoint");
  predict->add_option("--k", cfg.k_string, "k1,k2,k3 per-level budgets");
  predict->add_option("--text", cfg.text, "description (stdin when omitted)");

  CLI11_PARSE(app, argc, argv);

  auto explicit_flags = [&](CLI::App* cmd) {
    std::set<std::string> set;
    for (const auto* opt : cmd->get_options())
      if (opt->count() > 0 && !opt->get_lnames().empty()) set.insert(opt->get_lnames()[0]);
    return set;
  };

  try {
    if (ingest->parsed()) return cmd_ingest(cfg);
    if (build_vocab->parsed()) return cmd_build_vocab(cfg);
    if (pre->parsed()) return cmd_pretrain(cfg, explicit_flags(pre));
    if (train->parsed()) return cmd_train(cfg, explicit_flags(train));
    if (eval->parsed()) return cmd_evaluate(cfg, explicit_flags(eval));
    if (predict->parsed()) return cmd_predict(cfg, explicit_flags(predict));
  } catch (const MissingCheckpoint& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitMissingCheckpoint;
  } catch (const ConfigMismatch& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfigMismatch;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return kExitError;
}
