#pragma once

// Shared test fixtures: tiny hierarchies, random DAGs with an independent
// ancestor oracle, and keyword-planted synthetic corpora for training runs.

#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "v2w/corpus.hpp"
#include "v2w/cwe_hierarchy.hpp"

namespace v2w::testing {

inline CweHierarchy chain_hierarchy() {
  return CweHierarchy::from_csv(
      "id,name,description\n"
      "CWE-A,Alpha,Top level weakness alpha description\n"
      "CWE-B,Bravo,Mid level weakness bravo description\n"
      "CWE-C,Charlie,Leaf weakness charlie description\n",
      "child_id,parent_id\nCWE-B,CWE-A\nCWE-C,CWE-B\n");
}

// The partial hierarchy used for the guided-descent checks: three level-1
// nodes, their children and grandchildren.
inline CweHierarchy fig3_hierarchy() {
  std::string defs = "id,name,description\n";
  for (const char* id : {"CWE-668", "CWE-200", "CWE-426", "CWE-427", "CWE-203", "CWE-532",
                         "CWE-209", "CWE-404", "CWE-459", "CWE-772", "CWE-401", "CWE-20",
                         "CWE-119", "CWE-129", "CWE-120", "CWE-125", "CWE-787"})
    defs += std::string(id) + ",Name of " + id + ",Weakness description for " + id + "\n";
  std::string edges =
      "child_id,parent_id\n"
      "CWE-200,CWE-668\nCWE-426,CWE-668\nCWE-427,CWE-668\n"
      "CWE-203,CWE-200\nCWE-532,CWE-200\nCWE-209,CWE-200\n"
      "CWE-459,CWE-404\nCWE-772,CWE-404\nCWE-401,CWE-772\n"
      "CWE-119,CWE-20\nCWE-129,CWE-20\n"
      "CWE-120,CWE-119\nCWE-125,CWE-119\nCWE-787,CWE-119\n";
  return CweHierarchy::from_csv(defs, edges);
}

// Random DAG: node i>0 draws up to two parents among nodes < i. Acyclic by
// construction.
inline CweHierarchy random_dag(int n, std::mt19937_64& rng) {
  std::string defs = "id,name,description\n";
  std::string edges = "child_id,parent_id\n";
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    defs += "CWE-N" + std::to_string(i) + ",Node " + std::to_string(i) + ",Description for node " +
            std::to_string(i) + "\n";
    if (i == 0) continue;
    std::uniform_int_distribution<int> pick(0, i - 1);
    int p1 = pick(rng);
    if (u(rng) < 0.85) edges += "CWE-N" + std::to_string(i) + ",CWE-N" + std::to_string(p1) + "\n";
    if (u(rng) < 0.30) {
      int p2 = pick(rng);
      if (p2 != p1)
        edges += "CWE-N" + std::to_string(i) + ",CWE-N" + std::to_string(p2) + "\n";
    }
  }
  return CweHierarchy::from_csv(defs, edges);
}

// Brute-force oracle: repeated parent expansion to a fixpoint.
inline std::set<std::string> ancestors_oracle(const CweHierarchy& h, const std::string& w) {
  std::set<std::string> anc(h.node(w).parents.begin(), h.node(w).parents.end());
  bool changed = true;
  while (changed) {
    changed = false;
    std::set<std::string> next = anc;
    for (const auto& a : anc)
      for (const auto& p : h.node(a).parents)
        if (next.insert(p).second) changed = true;
    anc = next;
  }
  return anc;
}

// Brute-force path-accuracy oracle: enumerate every possible candidate path
// by exhaustive top-k selection (same ordering rule), check membership.
// Kept independent of enumerate_paths by a direct recursive walk.
inline bool path_hit_oracle(const CweHierarchy& h, const std::map<std::string, double>& scores,
                            int k1, int k2, int k3, const std::set<std::string>& truth) {
  auto top = [&](const std::vector<std::string>& ids, int k) {
    std::vector<std::string> sorted = ids;
    std::sort(sorted.begin(), sorted.end(), [&](const std::string& a, const std::string& b) {
      if (scores.at(a) != scores.at(b)) return scores.at(a) > scores.at(b);
      return a < b;
    });
    if (static_cast<int>(sorted.size()) > k) sorted.resize(static_cast<std::size_t>(k));
    return sorted;
  };
  for (const auto& n1 : top(h.nodes_at_level(1), k1)) {
    if (truth.count(n1)) return true;
    std::vector<std::string> c1(h.node(n1).children.begin(), h.node(n1).children.end());
    if (c1.empty()) continue;
    for (const auto& n2 : top(c1, k2)) {
      if (truth.count(n2)) return true;
      std::vector<std::string> c2(h.node(n2).children.begin(), h.node(n2).children.end());
      if (c2.empty()) continue;
      for (const auto& n3 : top(c2, k3))
        if (truth.count(n3)) return true;
    }
  }
  return false;
}

// ---- keyword-planted synthetic corpora ----

struct SyntheticCorpus {
  std::string definitions_csv;
  std::string edges_csv;
  std::vector<CveRecord> records;
  std::vector<std::string> labeled_ids;  // nodes that carry CVEs
};

inline const std::vector<std::string>& keyword_pool() {
  static const std::vector<std::string> pool = {
      "quartz",  "falcon",  "ember",   "lattice", "drift",   "copper",  "sable",  "onyx",
      "harbor",  "juniper", "cobalt",  "marble",  "ripple",  "saffron", "tundra", "velvet",
      "willow",  "zephyr",  "basalt",  "cinder",  "dahlia",  "echo",    "fjord",  "garnet",
      "hazel",   "indigo",  "jasper",  "krill",   "lumen",   "mica",    "nectar", "ochre",
      "pewter",  "quill",   "raven",   "sepia",   "talon",   "umber",   "vortex", "wren",
      "xenon",   "yarrow",  "zodiac",  "amber",   "birch",   "coral",   "dune",   "elm",
      "flint",   "grove",   "heron",   "iris",    "kelp",    "larch",   "moss",   "nimbus",
      "opal",    "pine",    "quince",  "reed",    "slate",   "thistle", "urchin", "vale",
  };
  return pool;
}

// A hierarchy whose node descriptions embed three distinctive keywords; CVE
// descriptions for a node sample from the same keyword set, so pair scoring
// is learnable from lexical overlap.
inline SyntheticCorpus make_keyword_corpus(int n_roots, int children_per_root,
                                           int leaves, int cves_per_labeled_node,
                                           std::uint64_t seed) {
  SyntheticCorpus out;
  const auto& pool = keyword_pool();
  auto rng = make_rng(derive_seed(seed, "synthetic_corpus"));

  struct NodeSpec {
    std::string id;
    std::string parent;  // empty for roots
    std::vector<std::string> keywords;
  };
  std::vector<NodeSpec> nodes;
  int word = 0;
  auto next_words = [&](int n) {
    std::vector<std::string> w;
    for (int i = 0; i < n; ++i) w.push_back(pool[static_cast<std::size_t>(word++) % pool.size()]);
    return w;
  };
  for (int r = 0; r < n_roots; ++r) {
    std::string rid = "CWE-R" + std::to_string(r + 1);
    nodes.push_back({rid, "", next_words(3)});
    for (int c = 0; c < children_per_root; ++c) {
      std::string cid = "CWE-M" + std::to_string(r + 1) + std::to_string(c + 1);
      nodes.push_back({cid, rid, next_words(3)});
    }
  }
  // attach leaves under the first child of the first `leaves` roots
  for (int l = 0; l < leaves; ++l) {
    std::string pid = "CWE-M" + std::to_string(l + 1) + "1";
    std::string lid = "CWE-L" + std::to_string(l + 1);
    nodes.push_back({lid, pid, next_words(3)});
  }

  out.definitions_csv = "id,name,description\n";
  out.edges_csv = "child_id,parent_id\n";
  std::map<std::string, std::vector<std::string>> keywords_of;
  for (const auto& n : nodes) {
    keywords_of[n.id] = n.keywords;
    out.definitions_csv += n.id + ",Synthetic weakness " + n.id + ",Weakness where " + n.keywords[0] +
                           " and " + n.keywords[1] + " expose " + n.keywords[2] +
                           " handling to attackers\n";
    if (!n.parent.empty()) out.edges_csv += n.id + "," + n.parent + "\n";
  }

  // every non-root node carries CVEs
  for (const auto& n : nodes) {
    if (n.parent.empty()) continue;
    out.labeled_ids.push_back(n.id);
    for (int i = 0; i < cves_per_labeled_node; ++i) {
      CveRecord rec;
      rec.id = "CVE-" + n.id.substr(4) + "-" + std::to_string(1000 + i);
      rec.year = 2000 + static_cast<int>((static_cast<std::size_t>(i) * 7) % 18);
      std::uniform_int_distribution<std::size_t> pick(0, 2);
      const auto& kw = n.keywords;
      std::string extra = kw[pick(rng)];
      rec.description = "A flaw involving " + kw[0] + " " + kw[1] + " lets attackers abuse " +
                        kw[2] + " through crafted " + extra + " requests";
      rec.labels = {n.id};
      out.records.push_back(rec);
    }
  }
  return out;
}

// Like make_keyword_corpus but with shared filler words and one parent
// keyword mixed into every CVE, so pair scoring is learnable yet top-1
// selection stays non-trivial. Used by the zero-shot ordering runs.
inline SyntheticCorpus make_distractor_corpus(int n_roots, int children_per_root,
                                              int cves_per_node, std::uint64_t seed) {
  SyntheticCorpus out;
  auto rng = make_rng(derive_seed(seed, "tuned_corpus"));
  const auto& pool = keyword_pool();
  int word = 0;
  auto next_words = [&](int n) {
    std::vector<std::string> w;
    for (int i = 0; i < n; ++i) {
      int idx = word++;
      w.push_back(pool[static_cast<std::size_t>(idx) % pool.size()] +
                  std::to_string(idx / static_cast<int>(pool.size())));
    }
    return w;
  };
  const std::vector<std::string> filler = {
      "a", "flaw", "in", "the", "product", "allows", "remote", "attackers", "to", "trigger",
      "issues", "via", "crafted", "requests", "and", "cause", "problems", "before", "version"};
  struct Node {
    std::string id, parent;
    std::vector<std::string> kw;
  };
  std::vector<Node> nodes;
  for (int r = 0; r < n_roots; ++r) {
    std::string rid = "CWE-R" + std::to_string(r + 1);
    nodes.push_back({rid, "", next_words(3)});
    for (int c = 0; c < children_per_root; ++c)
      nodes.push_back(
          {"CWE-M" + std::to_string(r + 1) + "x" + std::to_string(c + 1), rid, next_words(3)});
  }
  out.definitions_csv = "id,name,description\n";
  out.edges_csv = "child_id,parent_id\n";
  std::map<std::string, std::vector<std::string>> kw_of;
  for (const auto& n : nodes) {
    kw_of[n.id] = n.kw;
    out.definitions_csv += n.id + ",Synthetic weakness " + n.id + ",A weakness where " + n.kw[0] +
                           " and " + n.kw[1] + " handling exposes " + n.kw[2] + " to attackers\n";
    if (!n.parent.empty()) out.edges_csv += n.id + "," + n.parent + "\n";
  }
  std::uniform_int_distribution<std::size_t> f(0, filler.size() - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& n : nodes) {
    if (n.parent.empty()) continue;
    out.labeled_ids.push_back(n.id);
    const auto& pk = kw_of[n.parent];
    for (int i = 0; i < cves_per_node; ++i) {
      CveRecord rec;
      rec.id = "CVE-" + n.id.substr(4) + "-" + std::to_string(1000 + i);
      rec.year = 2001 + (i * 5) % 17;
      std::vector<std::string> words;
      for (int w2 = 0; w2 < 3; ++w2) words.push_back(filler[f(rng)]);
      for (const auto& kw : n.kw) words.push_back(kw);
      words.push_back(pk[static_cast<std::size_t>(u(rng) * 3.0)]);
      for (int w2 = 0; w2 < 2; ++w2) words.push_back(filler[f(rng)]);
      std::string text;
      for (const auto& w2 : words) {
        if (!text.empty()) text += " ";
        text += w2;
      }
      rec.description = text;
      rec.labels = {n.id};
      out.records.push_back(rec);
    }
  }
  return out;
}

}  // namespace v2w::testing
