#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "support/fixtures.hpp"
#include "v2w/baseline_tfidf.hpp"

using namespace v2w;

TEST_CASE("tfidf: idf closed form for ubiquitous terms") {
  TfidfVectorizer v;
  v.fit({"alpha beta", "alpha gamma", "alpha delta"});
  // alpha appears in every document: idf = ln((1+3)/(1+3)) + 1 = 1
  auto vocab = v.vocabulary();
  REQUIRE(vocab.count("alpha") == 1);
  CHECK(v.idf()[static_cast<std::size_t>(vocab.at("alpha"))] == Catch::Approx(1.0));
}

TEST_CASE("tfidf: transformed vectors are unit length or zero") {
  TfidfVectorizer v;
  v.fit({"one two three", "two three four", "five six"});
  auto t = v.transform("two three five");
  double norm2 = 0;
  for (const auto& [idx, w] : t) norm2 += w * w;
  CHECK(std::sqrt(norm2) == Catch::Approx(1.0));
  CHECK(v.transform("nothing matches here at all").empty());
  CHECK(v.transform_dense("totally unseen words").norm() == 0.0);
}

TEST_CASE("tfidf: two-document toy corpus matches hand arithmetic") {
  TfidfVectorizer v;
  v.fit({"a b a", "b c"});
  // D=2; df(a)=1, df(b)=2, df(c)=1
  double idf_a = std::log(3.0 / 2.0) + 1.0;
  double idf_b = std::log(3.0 / 3.0) + 1.0;
  double idf_c = std::log(3.0 / 2.0) + 1.0;
  auto vocab = v.vocabulary();
  CHECK(v.idf()[static_cast<std::size_t>(vocab.at("a"))] == Catch::Approx(idf_a));
  CHECK(v.idf()[static_cast<std::size_t>(vocab.at("b"))] == Catch::Approx(idf_b));
  CHECK(v.idf()[static_cast<std::size_t>(vocab.at("c"))] == Catch::Approx(idf_c));

  // "a b a": tf(a)=2, tf(b)=1 -> raw (2*idf_a, idf_b), L2-normalized
  Eigen::RowVectorXd d1 = v.transform_dense("a b a");
  double ra = 2 * idf_a, rb = idf_b;
  double norm = std::sqrt(ra * ra + rb * rb);
  CHECK(d1(vocab.at("a")) == Catch::Approx(ra / norm));
  CHECK(d1(vocab.at("b")) == Catch::Approx(rb / norm));
  CHECK(d1(vocab.at("c")) == 0.0);
}

TEST_CASE("tfidf: rejects an empty training corpus and unknown-only corpora") {
  TfidfVectorizer v;
  CHECK_THROWS_AS(v.fit({}), Error);
}

TEST_CASE("tfidf link baseline overfits a small corpus through the shared pipeline") {
  auto corpus = testing::make_keyword_corpus(3, 2, 0, 8, 41);
  auto h = CweHierarchy::from_csv(corpus.definitions_csv, corpus.edges_csv);
  auto u = training_cwe_set(corpus.records, h);

  std::vector<std::string> texts;
  for (const auto& r : corpus.records) texts.push_back(r.description);
  for (const auto& w : u) texts.push_back(h.node(w).description);

  TfidfLinkModel model(Combination::kAbsDiffMul);
  model.init(texts, 32, 7);
  TrainConfig cfg;
  cfg.epochs_link = 30;
  cfg.batch_size = 16;
  cfg.k_neg = 4;
  cfg.lr = 5e-3;
  cfg.seed = 13;
  auto log = train_tfidf_link(model, corpus.records, h, u, cfg);
  REQUIRE(log.size() == 30);
  CHECK(log.back().loss_lp < log.front().loss_lp);

  TfidfLinkScorer scorer(model, h);
  scorer.prime(h, 1);
  auto report = evaluate_test_set(scorer, "train-set", corpus.records, corpus.records, h, u);
  INFO("precise accuracy " << report.accuracy[0]);
  CHECK(report.accuracy[0] >= 0.9);
  CHECK(report.monotonic);
}

TEST_CASE("tfidf classifier: distribution sums to one; unseen CWE has no mass") {
  auto corpus = testing::make_keyword_corpus(2, 2, 0, 6, 43);
  auto h = CweHierarchy::from_csv(corpus.definitions_csv, corpus.edges_csv);
  auto u = training_cwe_set(corpus.records, h);

  std::vector<std::string> texts;
  for (const auto& r : corpus.records) texts.push_back(r.description);

  TfidfClassModel model;
  model.init(texts, u, 16, 3);
  TrainConfig cfg;
  cfg.epochs_link = 5;
  cfg.batch_size = 16;
  cfg.lr = 5e-3;
  cfg.seed = 4;
  train_tfidf_class(model, corpus.records, h, cfg);

  auto proba = model.predict_proba(corpus.records[0].description);
  CHECK(proba.sum() == Catch::Approx(1.0));

  TfidfClassScorer scorer(model);
  auto scores = scorer.score_all(corpus.records[0].description, {"CWE-M11", "CWE-UNSEEN"});
  CHECK(scores.at("CWE-UNSEEN").link == 0.0);  // outside the training output space
}

TEST_CASE("tfidf class and link baselines land close on an easy corpus") {
  auto corpus = testing::make_keyword_corpus(3, 2, 0, 8, 47);
  auto h = CweHierarchy::from_csv(corpus.definitions_csv, corpus.edges_csv);
  auto u = training_cwe_set(corpus.records, h);
  std::vector<std::string> texts;
  for (const auto& r : corpus.records) texts.push_back(r.description);
  std::vector<std::string> texts_with_cwes = texts;
  for (const auto& w : u) texts_with_cwes.push_back(h.node(w).description);

  TfidfLinkModel link_model(Combination::kAbsDiffMul);
  link_model.init(texts_with_cwes, 32, 7);
  TrainConfig cfg;
  cfg.epochs_link = 30;
  cfg.batch_size = 16;
  cfg.k_neg = 4;
  cfg.lr = 5e-3;
  cfg.seed = 13;
  train_tfidf_link(link_model, corpus.records, h, u, cfg);

  TfidfClassModel class_model;
  class_model.init(texts, u, 32, 7);
  TrainConfig ccfg = cfg;
  ccfg.epochs_link = 30;
  train_tfidf_class(class_model, corpus.records, h, ccfg);

  TfidfLinkScorer link_scorer(link_model, h);
  link_scorer.prime(h, 1);
  TfidfClassScorer class_scorer(class_model);
  auto link_report = evaluate_test_set(link_scorer, "t", corpus.records, corpus.records, h, u);
  auto class_report = evaluate_test_set(class_scorer, "t", corpus.records, corpus.records, h, u);
  INFO("link " << link_report.accuracy[0] << " class " << class_report.accuracy[0]);
  CHECK(std::abs(link_report.accuracy[0] - class_report.accuracy[0]) <= 0.1);
}

TEST_CASE("tfidf models round trip through the checkpoint container") {
  auto corpus = testing::make_keyword_corpus(2, 2, 0, 3, 53);
  auto h = CweHierarchy::from_csv(corpus.definitions_csv, corpus.edges_csv);
  auto u = training_cwe_set(corpus.records, h);
  std::vector<std::string> texts;
  for (const auto& r : corpus.records) texts.push_back(r.description);

  auto dir = std::filesystem::temp_directory_path();

  TfidfLinkModel link_model(Combination::kAbsDiffMul);
  link_model.init(texts, 8, 7);
  auto link_path = (dir / "v2w_tfidf_link.ckpt").string();
  save_tfidf_link(link_model, link_path);
  auto link_loaded = load_tfidf_link(link_path);
  CHECK(link_loaded->hidden == link_model.hidden);
  CHECK(link_loaded->vectorizer.dim() == link_model.vectorizer.dim());
  // float32 storage: compare to 1e-6
  CHECK(link_loaded->projection.value.isApprox(link_model.projection.value, 1e-5));

  TfidfClassModel class_model;
  class_model.init(texts, u, 8, 7);
  auto class_path = (dir / "v2w_tfidf_class.ckpt").string();
  save_tfidf_class(class_model, class_path);
  auto class_loaded = load_tfidf_class(class_path);
  CHECK(class_loaded->classes == class_model.classes);
  CHECK(class_loaded->w1.value.isApprox(class_model.w1.value, 1e-5));

  std::filesystem::remove(link_path);
  std::filesystem::remove(class_path);
}
