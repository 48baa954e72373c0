#include <catch2/catch_amalgamated.hpp>

#include "support/fixtures.hpp"
#include "v2w/corpus.hpp"
#include "v2w/csv.hpp"

using namespace v2w;

#ifndef V2W_SOURCE_DIR
#define V2W_SOURCE_DIR "."
#endif

static std::string data_path(const std::string& rel) {
  return std::string(V2W_SOURCE_DIR) + "/" + rel;
}

TEST_CASE("nvd ingest maps the classic record") {
  std::string feed = csv::read_file(data_path("tests/data/nvd_fixture.json"));
  IngestTally tally;
  auto records = ingest_nvd(feed, &tally);
  auto it = std::find_if(records.begin(), records.end(),
                         [](const CveRecord& r) { return r.id == "CVE-2004-0366"; });
  REQUIRE(it != records.end());
  CHECK(it->labels == std::set<std::string>{"CWE-89"});
  CHECK(it->year == 2004);
  CHECK(it->description.find("libpam-pgsql") != std::string::npos);
}

TEST_CASE("nvd ingest handles sentinels, rejects and missing descriptions") {
  std::string feed = csv::read_file(data_path("tests/data/nvd_fixture.json"));
  IngestTally tally;
  auto records = ingest_nvd(feed, &tally);
  CHECK(tally.items == 50);
  CHECK(tally.dropped_reject_placeholder == 1);
  CHECK(tally.dropped_missing_description == 1);
  CHECK(tally.dropped_empty_description == 1);  // non-English-only item
  CHECK(tally.sentinel_labels == 2);
  // sentinel-only labels leave the record unlabeled but present
  auto it = std::find_if(records.begin(), records.end(),
                         [](const CveRecord& r) { return r.id == "CVE-2013-9001"; });
  REQUIRE(it != records.end());
  CHECK(it->labels.empty());
  // rejected placeholder is gone
  CHECK(std::none_of(records.begin(), records.end(),
                     [](const CveRecord& r) { return r.id == "CVE-2016-9003"; }));
}

TEST_CASE("nvd ingest reproduces the golden corpus exactly") {
  std::string feed = csv::read_file(data_path("tests/data/nvd_fixture.json"));
  auto records = ingest_nvd(feed, nullptr);
  std::string golden = csv::read_file(data_path("tests/data/nvd_fixture_golden.csv"));
  CHECK(corpus_to_csv(records) == golden);
}

TEST_CASE("nvd ingest determinism: same bytes in, identical records out") {
  std::string feed = csv::read_file(data_path("tests/data/nvd_fixture.json"));
  auto a = ingest_nvd(feed, nullptr);
  auto b = ingest_nvd(feed, nullptr);
  CHECK(corpus_to_csv(a) == corpus_to_csv(b));
}

TEST_CASE("nvd ingest reports byte offsets for malformed json") {
  try {
    ingest_nvd("{\"CVE_Items\": [ {broken", nullptr);
    FAIL("expected parse failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
}

TEST_CASE("nvd strict mode names the offending item") {
  std::string feed = csv::read_file(data_path("tests/data/nvd_fixture.json"));
  try {
    ingest_nvd(feed, nullptr, /*strict=*/true);
    FAIL("expected strict failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("CVE-2017-9004") != std::string::npos);
  }
}

TEST_CASE("corpus csv round trip") {
  std::string feed = csv::read_file(data_path("tests/data/nvd_fixture.json"));
  auto records = ingest_nvd(feed, nullptr);
  auto back = corpus_from_csv(corpus_to_csv(records));
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == records[i].id);
    CHECK(back[i].description == records[i].description);
    CHECK(back[i].year == records[i].year);
    CHECK(back[i].labels == records[i].labels);
  }
}

static std::vector<CveRecord> make_records(
    const std::vector<std::tuple<std::string, int, std::string>>& specs) {
  std::vector<CveRecord> out;
  for (const auto& [id, year, label] : specs) {
    CveRecord r;
    r.id = id;
    r.year = year;
    r.description = "description of " + id;
    if (!label.empty()) r.labels = {label};
    out.push_back(r);
  }
  return out;
}

TEST_CASE("temporal split boundaries") {
  auto records = make_records({{"CVE-1", 2017, "CWE-A"},
                               {"CVE-2", 2018, "CWE-A"},
                               {"CVE-3", 2019, "CWE-A"},
                               {"CVE-4", 2020, "CWE-A"},
                               {"CVE-5", 2021, "CWE-A"},
                               {"CVE-6", 1999, "CWE-A"},
                               {"CVE-7", 2010, ""}});
  auto out = temporal_split(records);
  auto ids = [](const std::vector<CveRecord>& v) {
    std::set<std::string> s;
    for (const auto& r : v) s.insert(r.id);
    return s;
  };
  CHECK(ids(out.split.train) == std::set<std::string>{"CVE-1", "CVE-6"});
  CHECK(ids(out.split.test1) == std::set<std::string>{"CVE-2"});
  CHECK(ids(out.split.test2) == std::set<std::string>{"CVE-3", "CVE-4"});
  CHECK(out.excluded_out_of_range == 1);  // 2021
  CHECK(ids(out.pretrain_only) == std::set<std::string>{"CVE-7"});

  // disjointness by id
  for (const auto& r : out.split.train) {
    CHECK(ids(out.split.test1).count(r.id) == 0);
    CHECK(ids(out.split.test2).count(r.id) == 0);
  }
}

TEST_CASE("random split: proportions, determinism, small categories") {
  std::vector<CveRecord> records;
  for (int i = 0; i < 10; ++i) {
    CveRecord r;
    r.id = "CVE-A" + std::to_string(i);
    r.year = 2010;
    r.description = "text";
    r.labels = {"CWE-A"};
    records.push_back(r);
  }
  for (int i = 0; i < 2; ++i) {
    CveRecord r;
    r.id = "CVE-B" + std::to_string(i);
    r.year = 2011;
    r.description = "text";
    r.labels = {"CWE-B"};
    records.push_back(r);
  }
  auto out = random_split(records, 7);
  std::size_t a_train = 0, a_val = 0, a_test = 0;
  for (const auto& r : out.split.train)
    if (r.labels.count("CWE-A")) ++a_train;
  for (const auto& r : out.split.validation)
    if (r.labels.count("CWE-A")) ++a_val;
  for (const auto& r : out.split.test1)
    if (r.labels.count("CWE-A")) ++a_test;
  CHECK(a_train == 7);
  CHECK(a_val == 1);
  CHECK(a_test == 2);
  CHECK(out.small_category_count == 1);  // CWE-B went wholly to train

  auto again = random_split(records, 7);
  CHECK(corpus_to_csv(out.split.train) == corpus_to_csv(again.split.train));
  CHECK(corpus_to_csv(out.split.test1) == corpus_to_csv(again.split.test1));
  auto different = random_split(records, 8);
  bool same = corpus_to_csv(out.split.train) == corpus_to_csv(different.split.train);
  CHECK_FALSE(same);
}

TEST_CASE("random split proportions within one of proportional allocation") {
  std::vector<CveRecord> records;
  auto rng = make_rng(5);
  for (int c = 0; c < 6; ++c) {
    std::uniform_int_distribution<int> n(3, 57);
    int count = n(rng);
    for (int i = 0; i < count; ++i) {
      CveRecord r;
      r.id = "CVE-" + std::to_string(c) + "-" + std::to_string(i);
      r.year = 2010;
      r.description = "text";
      r.labels = {"CWE-" + std::to_string(c)};
      records.push_back(r);
    }
  }
  auto out = random_split(records, 11);
  std::map<std::string, std::array<std::size_t, 3>> counts;
  for (const auto& r : out.split.train) counts[*r.labels.begin()][0]++;
  for (const auto& r : out.split.validation) counts[*r.labels.begin()][1]++;
  for (const auto& r : out.split.test1) counts[*r.labels.begin()][2]++;
  for (const auto& [cwe, c] : counts) {
    double n = static_cast<double>(c[0] + c[1] + c[2]);
    // independent allocation oracle: floor fractions, remainder to train
    CHECK(std::abs(static_cast<double>(c[1]) - 0.1 * n) <= 1.0);
    CHECK(std::abs(static_cast<double>(c[2]) - 0.2 * n) <= 1.0);
    CHECK(std::abs(static_cast<double>(c[0]) - 0.7 * n) <= 2.0);
  }
}

TEST_CASE("bucket_by_training_count boundaries and zero-shot bucket") {
  auto h = testing::chain_hierarchy();
  std::vector<CveRecord> train;
  auto push = [&](std::vector<CveRecord>& v, const std::string& id, const std::string& label) {
    CveRecord r;
    r.id = id;
    r.year = 2010;
    r.description = "d";
    r.labels = {label};
    v.push_back(r);
  };
  for (int i = 0; i < 30; ++i) push(train, "T-A" + std::to_string(i), "CWE-A");
  for (int i = 0; i < 120; ++i) push(train, "T-B" + std::to_string(i), "CWE-B");
  std::vector<CveRecord> test;
  push(test, "E-1", "CWE-A");  // freq 30 -> [1,50] and [1,100]
  push(test, "E-2", "CWE-B");  // freq 120 -> >100
  push(test, "E-3", "CWE-C");  // freq 0 -> zero-shot
  for (int i = 0; i < 4; ++i) push(test, "E-C" + std::to_string(i), "CWE-C");

  auto buckets = bucket_by_training_count(test, train, h);
  CHECK(buckets["zero-shot"].size() == 5);
  CHECK(buckets["[1,50]"].size() == 1);
  CHECK(buckets["[1,100]"].size() == 1);
  CHECK(buckets[">100"].size() == 1);
  CHECK(buckets["[101,150]"].size() == 1);  // 120 sits in both [101,150] and >100
  CHECK(buckets["[51,100]"].empty());
}

TEST_CASE("label filtering keeps stray-labeled records for pretraining") {
  auto h = testing::chain_hierarchy();
  auto records = make_records({{"CVE-1", 2010, "CWE-A"}, {"CVE-2", 2010, "CWE-ZZZ"}});
  LabelFilterTally tally;
  auto filtered = filter_labels_to_hierarchy(records, h, &tally);
  CHECK(filtered[0].labels == std::set<std::string>{"CWE-A"});
  CHECK(filtered[1].labels.empty());
  CHECK(tally.dropped_labels == 1);
  CHECK(tally.records_left_unlabeled == 1);
}

TEST_CASE("sentence splitting on period-space-uppercase") {
  auto s = split_sentences("First part. Second bit v1.2 runs. third stays. Last one.");
  REQUIRE(s.size() == 3);
  CHECK(s[0] == "First part.");
  CHECK(s[1] == "Second bit v1.2 runs. third stays.");
  CHECK(s[2] == "Last one.");
}

TEST_CASE("augment fills rare categories and labels synthetics with the source") {
  auto h = testing::chain_hierarchy();
  std::vector<CveRecord> train;
  CveRecord r1;
  r1.id = "CVE-1";
  r1.year = 2012;
  r1.description =
      "The parser allows remote attackers to execute code. The flaw is a buffer overflow. Crafted input triggers it.";
  r1.labels = {"CWE-C"};
  CveRecord r2 = r1;
  r2.id = "CVE-2";
  r2.description =
      "A memory issue lets attackers read data. The bug allows information disclosure. Versions before 2.0 are vulnerable.";
  train = {r1, r2};

  auto lex = load_synonyms(csv::read_file(data_path("data/synonyms.csv")));
  AugmentTally tally;
  auto synthetic = augment(train, h, 10, lex, 99, &tally);
  CHECK(synthetic.size() == 8);  // 2 existing + 8 synthetic = limit 10
  CHECK(tally.synthetic_records == 8);
  for (const auto& s : synthetic) {
    CHECK(s.labels == std::set<std::string>{"CWE-C"});
    CHECK_FALSE(s.description.empty());
  }

  // substitution really replaced at least one covered token somewhere
  bool any_diff = false;
  for (const auto& s : synthetic) {
    if (s.description.find("adversaries") != std::string::npos ||
        s.description.find("permits") != std::string::npos ||
        s.description.find("enables") != std::string::npos ||
        s.description.find("run") != std::string::npos ||
        s.description.find("instructions") != std::string::npos)
      any_diff = true;
  }
  CHECK(any_diff);

  // above the limit: nothing generated
  auto none = augment(train, h, 2, lex, 99, nullptr);
  CHECK(none.empty());

  // determinism
  auto synthetic2 = augment(train, h, 10, lex, 99, nullptr);
  REQUIRE(synthetic2.size() == synthetic.size());
  for (std::size_t i = 0; i < synthetic.size(); ++i)
    CHECK(synthetic[i].description == synthetic2[i].description);

  // augmentation never invents labels outside the source pool
  for (const auto& s : synthetic) CHECK(h.contains(*s.labels.begin()));
}
