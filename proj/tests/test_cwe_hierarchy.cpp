#include <catch2/catch_amalgamated.hpp>

#include "support/fixtures.hpp"
#include "v2w/csv.hpp"
#include "v2w/cwe_hierarchy.hpp"

using namespace v2w;

#ifndef V2W_SOURCE_DIR
#define V2W_SOURCE_DIR "."
#endif

TEST_CASE("single chain levels and roots") {
  auto h = testing::chain_hierarchy();
  CHECK(h.roots() == std::vector<std::string>{"CWE-A"});
  CHECK(h.levels("CWE-A") == std::set<int>{1});
  CHECK(h.levels("CWE-B") == std::set<int>{2});
  CHECK(h.levels("CWE-C") == std::set<int>{3});
}

TEST_CASE("node with parents on two levels carries both level indices") {
  auto h = CweHierarchy::from_csv(
      "id,name,description\n"
      "CWE-A,A,desc a\nCWE-B,B,desc b\nCWE-C,C,desc c\n",
      "child_id,parent_id\nCWE-B,CWE-A\nCWE-C,CWE-A\nCWE-C,CWE-B\n");
  CHECK(h.levels("CWE-C") == std::set<int>{2, 3});
}

TEST_CASE("bundled 124-node hierarchy has the expected level distribution") {
  auto h = CweHierarchy::from_files(std::string(V2W_SOURCE_DIR) + "/data/cwe/definitions.csv",
                                    std::string(V2W_SOURCE_DIR) + "/data/cwe/edges.csv");
  CHECK(h.nodes().size() == 124);
  CHECK(h.nodes_at_level(1).size() == 34);
  CHECK(h.nodes_at_level(2).size() == 78);
  CHECK(h.nodes_at_level(3).size() == 16);
  // parent/children symmetry holds everywhere
  for (const auto& [id, node] : h.nodes()) {
    for (const auto& p : node.parents) CHECK(h.node(p).children.count(id) == 1);
    for (const auto& c : node.children) CHECK(h.node(c).parents.count(id) == 1);
  }
}

TEST_CASE("load rejects cycles naming offending edges") {
  try {
    CweHierarchy::from_csv(
        "id,name,description\nCWE-A,A,da\nCWE-B,B,db\n",
        "child_id,parent_id\nCWE-A,CWE-B\nCWE-B,CWE-A\n");
    FAIL("expected cycle rejection");
  } catch (const Error& e) {
    std::string msg = e.what();
    CHECK(msg.find("cycle") != std::string::npos);
    CHECK(msg.find("CWE-A") != std::string::npos);
  }
}

TEST_CASE("load rejects dangling edge endpoints naming the id") {
  try {
    CweHierarchy::from_csv("id,name,description\nCWE-A,A,da\n",
                           "child_id,parent_id\nCWE-A,CWE-X\n");
    FAIL("expected dangling endpoint rejection");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("CWE-X") != std::string::npos);
  }
}

TEST_CASE("load rejects empty descriptions") {
  CHECK_THROWS_AS(CweHierarchy::from_csv("id,name,description\nCWE-A,A,\n", "child_id,parent_id\n"),
                  Error);
}

TEST_CASE("ancestors: chain closure and empty root set") {
  auto h = testing::chain_hierarchy();
  CHECK(h.ancestors("CWE-C") == std::set<std::string>{"CWE-A", "CWE-B"});
  CHECK(h.ancestors("CWE-A").empty());
  CHECK_THROWS_AS(h.ancestors("CWE-missing"), Error);
}

TEST_CASE("ancestors match the brute-force oracle on random DAGs") {
  auto rng = make_rng(314159);
  for (int trial = 0; trial < 40; ++trial) {
    std::uniform_int_distribution<int> size(2, 50);
    auto h = testing::random_dag(size(rng), rng);
    for (const auto& [id, node] : h.nodes())
      REQUIRE(h.ancestors(id) == testing::ancestors_oracle(h, id));
  }
}

TEST_CASE("enumerate_paths: single greedy descent") {
  auto h = testing::chain_hierarchy();
  std::map<std::string, double> scores = {{"CWE-A", 0.9}, {"CWE-B", 0.8}, {"CWE-C", 0.7}};
  auto paths = enumerate_paths(h, scores, 1, 1, 1);
  REQUIRE(paths.size() == 1);
  CHECK(paths[0].nodes == std::vector<std::string>{"CWE-A", "CWE-B", "CWE-C"});
  CHECK(paths[0].scores == std::vector<double>{0.9, 0.8, 0.7});
}

TEST_CASE("enumerate_paths: bounds at the three budgets") {
  auto h = testing::fig3_hierarchy();
  std::map<std::string, double> scores;
  double v = 0.99;
  for (const auto& [id, node] : h.nodes()) {
    scores[id] = v;
    v -= 0.01;
  }
  CHECK(enumerate_paths(h, scores, 1, 1, 1).size() == 1);
  CHECK(enumerate_paths(h, scores, 3, 2, 1).size() <= 6);
  CHECK(enumerate_paths(h, scores, 5, 2, 2).size() <= 20);
}

TEST_CASE("enumerate_paths rejects bad arguments") {
  auto h = testing::chain_hierarchy();
  CHECK_THROWS_AS(enumerate_paths(h, {}, 1, 1, 1), Error);
  std::map<std::string, double> scores = {{"CWE-A", 0.5}, {"CWE-B", 0.5}, {"CWE-C", 0.5}};
  CHECK_THROWS_AS(enumerate_paths(h, scores, 0, 1, 1), Error);
  CHECK_THROWS_AS(enumerate_paths(h, scores, 1, 0, 1), Error);
}

TEST_CASE("enumerate_paths: descent follows the best scores") {
  auto h = testing::fig3_hierarchy();
  // highest level-1 score on CWE-668, then CWE-200 among its children
  std::map<std::string, double> scores;
  for (const auto& [id, node] : h.nodes()) scores[id] = 0.10;
  scores["CWE-668"] = 0.95;
  scores["CWE-200"] = 0.90;
  scores["CWE-532"] = 0.60;
  auto paths = enumerate_paths(h, scores, 1, 1, 1);
  REQUIRE(paths.size() == 1);
  REQUIRE(paths[0].nodes.size() == 3);
  CHECK(paths[0].nodes[0] == "CWE-668");
  CHECK(paths[0].nodes[1] == "CWE-200");
  std::set<std::string> third = {"CWE-203", "CWE-532", "CWE-209"};
  CHECK(third.count(paths[0].nodes[2]) == 1);
  CHECK(paths[0].nodes[2] == "CWE-532");  // the best-scored grandchild
}

TEST_CASE("enumerate_paths: ties break to ascending id") {
  auto h = CweHierarchy::from_csv(
      "id,name,description\nCWE-A,A,da\nCWE-B,B,db\nCWE-C,C,dc\n",
      "child_id,parent_id\n");
  std::map<std::string, double> scores = {{"CWE-A", 0.5}, {"CWE-B", 0.5}, {"CWE-C", 0.5}};
  auto paths = enumerate_paths(h, scores, 2, 1, 1);
  REQUIRE(paths.size() == 2);
  CHECK(paths[0].nodes == std::vector<std::string>{"CWE-A"});
  CHECK(paths[1].nodes == std::vector<std::string>{"CWE-B"});
}

TEST_CASE("enumerate_paths: monotone selection on random hierarchies") {
  auto rng = make_rng(987);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> size(1, 40);
    auto h = testing::random_dag(size(rng), rng);
    std::map<std::string, double> scores;
    for (const auto& [id, node] : h.nodes()) scores[id] = u(rng);
    std::uniform_int_distribution<int> kd(1, 5);
    int k1 = kd(rng), k2 = kd(rng), k3 = kd(rng);
    auto paths = enumerate_paths(h, scores, k1, k2, k3);
    CHECK(paths.size() <= static_cast<std::size_t>(k1) * static_cast<std::size_t>(k2) *
                              static_cast<std::size_t>(k3));

    // every selected node outranks unselected same-parent siblings
    for (const auto& p : paths) {
      for (std::size_t d = 1; d < p.nodes.size(); ++d) {
        const auto& parent = p.nodes[d - 1];
        int budget = d == 1 ? k2 : k3;
        std::size_t selected_better = 0;
        for (const auto& sib : h.node(parent).children)
          if (scores[sib] > scores[p.nodes[d]] ||
              (scores[sib] == scores[p.nodes[d]] && sib < p.nodes[d]))
            ++selected_better;
        CHECK(selected_better < static_cast<std::size_t>(budget));
      }
    }
  }
}

TEST_CASE("enumerate_paths result ordering is by per-level scores") {
  auto h = testing::fig3_hierarchy();
  std::map<std::string, double> scores;
  double v = 0.3;
  for (const auto& [id, node] : h.nodes()) scores[id] = v;
  scores["CWE-20"] = 0.9;
  scores["CWE-119"] = 0.8;
  scores["CWE-129"] = 0.7;
  scores["CWE-668"] = 0.85;
  auto paths = enumerate_paths(h, scores, 2, 2, 2);
  REQUIRE(paths.size() >= 2);
  CHECK(paths[0].nodes[0] == "CWE-20");  // best level-1 score first
  for (std::size_t i = 1; i < paths.size(); ++i)
    CHECK(paths[i - 1].scores[0] >= paths[i].scores[0]);
}
