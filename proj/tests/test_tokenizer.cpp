#include <catch2/catch_amalgamated.hpp>

#include "support/fixtures.hpp"
#include "v2w/csv.hpp"
#include "v2w/tokenizer.hpp"

#include <filesystem>

using namespace v2w;

#ifndef V2W_SOURCE_DIR
#define V2W_SOURCE_DIR "."
#endif

TEST_CASE("vocab build: specials, characters, one greedy merge") {
  auto v = Vocabulary::build({"aaab"}, 8);
  REQUIRE(v.size() == 8);
  CHECK(v.token(0) == "[PAD]");
  CHECK(v.token(1) == "[UNK]");
  CHECK(v.token(2) == "[CLS]");
  CHECK(v.token(3) == "[SEP]");
  CHECK(v.token(4) == "[MASK]");
  CHECK(v.has("a"));
  CHECK(v.has("b"));
  CHECK(v.has("aa"));  // (a,a) is the most frequent adjacent pair
}

TEST_CASE("vocab build is deterministic") {
  std::vector<std::string> corpus = {"the cat sat", "the dog sat", "cats and dogs"};
  auto a = Vocabulary::build(corpus, 40);
  auto b = Vocabulary::build(corpus, 40);
  CHECK(a.tokens() == b.tokens());
}

TEST_CASE("vocab build rejects bad inputs") {
  CHECK_THROWS_AS(Vocabulary::build({}, 100), Error);
  CHECK_THROWS_AS(Vocabulary::build({"abc"}, 6), Error);  // below chars + specials
}

TEST_CASE("encode: control tokens, padding, boundary, truncation") {
  auto v = Vocabulary::build({"abcdef abc"}, 32);
  SECTION("empty text") {
    auto seq = v.encode("", 8);
    CHECK(seq.ids[0] == Vocabulary::kCls);
    CHECK(seq.ids[1] == Vocabulary::kSep);
    for (std::size_t i = 2; i < 8; ++i) CHECK(seq.ids[i] == Vocabulary::kPad);
    CHECK(seq.attention_mask == std::vector<int>{1, 1, 0, 0, 0, 0, 0, 0});
  }
  SECTION("content of exactly T-2 tokens leaves no padding") {
    auto va = Vocabulary::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "x"});
    auto seq = va.encode("xxxx", 6);
    CHECK(seq.ids == std::vector<int>{2, 5, 5, 5, 5, 3});
    CHECK(seq.attention_mask == std::vector<int>{1, 1, 1, 1, 1, 1});
  }
  SECTION("overlong content keeps the head") {
    auto va = Vocabulary::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "x", "y"});
    auto seq = va.encode("xyxyxyxy", 6);
    CHECK(seq.ids == std::vector<int>{2, 5, 6, 5, 6, 3});
  }
}

TEST_CASE("encode falls back to [UNK] for unseen characters") {
  auto v = Vocabulary::build({"abc abc"}, 16);
  auto seq = v.encode("aZc", 8);
  CHECK(seq.ids[1] == v.id_of("a"));
  CHECK(seq.ids[2] == Vocabulary::kUnk);
}

TEST_CASE("round trip recovers text up to case and whitespace normalization") {
  std::vector<std::string> corpus;
  auto rng = make_rng(20240601);
  const std::vector<std::string> words = {"buffer",  "overflow", "remote", "attacker", "allows",
                                          "execute", "code",     "via",    "crafted",  "packet",
                                          "the",     "sql",      "query",  "in",       "service"};
  std::uniform_int_distribution<std::size_t> wpick(0, words.size() - 1);
  std::uniform_int_distribution<int> len(3, 12);
  for (int i = 0; i < 100; ++i) {
    std::string line;
    int n = len(rng);
    for (int w = 0; w < n; ++w) {
      if (w) line += " ";
      line += words[wpick(rng)];
    }
    corpus.push_back(line);
  }
  auto v = Vocabulary::build(corpus, 220);
  for (const auto& line : corpus) {
    auto seq = v.encode(line, 128);
    CHECK(v.detokenize(seq) == collapse_whitespace(to_lower(line)));
  }
}

TEST_CASE("vocabulary file round trip preserves ids") {
  auto v = Vocabulary::build({"hello world"}, 24);
  auto path = std::filesystem::temp_directory_path() / "v2w_vocab_test.txt";
  v.save(path.string());
  auto loaded = Vocabulary::load(path.string());
  CHECK(loaded.tokens() == v.tokens());
  std::filesystem::remove(path);
}

TEST_CASE("masking statistics approach 0.15 and the 80/10/10 action split") {
  auto v = Vocabulary::build({"abcdefghijklmnopqrstuvwxyz etaoin shrdlu"}, 64);
  std::string text;
  for (int i = 0; i < 60; ++i) text += "etaoin shrdlu ";
  auto seq = v.encode(text, 256);
  std::vector<int> content;
  for (std::size_t i = 1; i < seq.ids.size(); ++i) {
    if (seq.ids[i] == Vocabulary::kSep) break;
    content.push_back(static_cast<int>(i));
  }
  REQUIRE(content.size() > 50);

  auto rng = make_rng(42);
  std::size_t total = 0, selected = 0, masked = 0, random = 0, kept = 0;
  while (total < 200000) {
    auto m = mask_sequence(seq, v, rng);
    total += content.size();
    selected += m.targets.size();
    for (const auto& [pos, original] : m.targets) {
      int now = m.corrupted.ids[static_cast<std::size_t>(pos)];
      if (now == Vocabulary::kMask) ++masked;
      else if (now == original) ++kept;
      else ++random;
    }
  }
  double sel_rate = static_cast<double>(selected) / static_cast<double>(total);
  CHECK(sel_rate > 0.14);
  CHECK(sel_rate < 0.16);
  double m_rate = static_cast<double>(masked) / static_cast<double>(selected);
  double r_rate = static_cast<double>(random) / static_cast<double>(selected);
  double k_rate = static_cast<double>(kept) / static_cast<double>(selected);
  CHECK(std::abs(m_rate - 0.8) < 0.02);
  CHECK(std::abs(r_rate - 0.1) < 0.02);
  CHECK(std::abs(k_rate - 0.1) < 0.02);
}

TEST_CASE("masking never touches control tokens or length") {
  auto v = Vocabulary::build({"some words to mask here"}, 48);
  auto seq = v.encode("some words to mask", 16);
  auto rng = make_rng(7);
  for (int i = 0; i < 200; ++i) {
    auto m = mask_sequence(seq, v, rng);
    REQUIRE(m.corrupted.ids.size() == seq.ids.size());
    CHECK(m.corrupted.attention_mask == seq.attention_mask);
    CHECK(m.corrupted.ids[0] == Vocabulary::kCls);
    REQUIRE_FALSE(m.targets.empty());
    for (const auto& [pos, original] : m.targets) {
      CHECK(pos >= 1);
      CHECK(seq.ids[static_cast<std::size_t>(pos)] != Vocabulary::kSep);
      CHECK(seq.ids[static_cast<std::size_t>(pos)] != Vocabulary::kPad);
      CHECK(original == seq.ids[static_cast<std::size_t>(pos)]);
    }
  }
}

TEST_CASE("masking is bit-identical under a fixed seed") {
  auto v = Vocabulary::build({"deterministic masking check"}, 48);
  auto seq = v.encode("deterministic masking check", 24);
  auto rng1 = make_rng(123);
  auto rng2 = make_rng(123);
  for (int i = 0; i < 50; ++i) {
    auto a = mask_sequence(seq, v, rng1);
    auto b = mask_sequence(seq, v, rng2);
    CHECK(a.corrupted.ids == b.corrupted.ids);
    CHECK(a.targets == b.targets);
  }
}

TEST_CASE("masking a sequence with no content is rejected") {
  auto v = Vocabulary::build({"xy"}, 12);
  auto seq = v.encode("", 8);
  auto rng = make_rng(1);
  CHECK_THROWS_AS(mask_sequence(seq, v, rng), Error);
}
