#pragma once

// The CWE weakness dictionary as a multi-parent DAG. Nodes carry the weakness
// description text used for pair scoring; levels follow the parent relation
// (roots are level 1, a node takes level p+1 for each parent level p, so a
// node with parents on different levels carries several level indices).

#include <algorithm>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "v2w/common.hpp"
#include "v2w/csv.hpp"

namespace v2w {

struct CweNode {
  std::string id;
  std::string name;
  std::string description;
  std::set<std::string> parents;
  std::set<std::string> children;
};

struct PredictionPath {
  std::vector<std::string> nodes;  // level 1 downward, 1..3 entries
  std::vector<double> scores;      // link confidence per node
};

class CweHierarchy {
 public:
  // definitions CSV: header id,name,description; edges CSV: header
  // child_id,parent_id. Rejects cycles, dangling edge endpoints and nodes
  // with empty descriptions.
  static CweHierarchy from_csv(const std::string& definitions_csv,
                               const std::string& edges_csv) {
    CweHierarchy h;
    auto defs = csv::parse(definitions_csv);
    if (defs.empty()) throw Error("hierarchy: empty definitions table");
    std::size_t first = 0;
    if (!defs[0].empty() && defs[0][0] == "id") first = 1;  // header
    for (std::size_t r = first; r < defs.size(); ++r) {
      const auto& row = defs[r];
      if (row.size() == 1 && row[0].empty()) continue;
      if (row.size() != 3)
        throw Error("hierarchy: definitions row " + std::to_string(r + 1) +
                    " needs 3 fields, got " + std::to_string(row.size()));
      CweNode node;
      node.id = row[0];
      node.name = row[1];
      node.description = collapse_whitespace(row[2]);
      if (node.id.empty()) throw Error("hierarchy: empty id in definitions row " + std::to_string(r + 1));
      if (node.description.empty())
        throw Error("hierarchy: node " + node.id + " has no description");
      if (!h.nodes_.emplace(node.id, node).second)
        throw Error("hierarchy: duplicate node id " + node.id);
    }

    auto edges = csv::parse(edges_csv);
    std::size_t efirst = 0;
    if (!edges.empty() && !edges[0].empty() && edges[0][0] == "child_id") efirst = 1;
    for (std::size_t r = efirst; r < edges.size(); ++r) {
      const auto& row = edges[r];
      if (row.size() == 1 && row[0].empty()) continue;
      if (row.size() != 2)
        throw Error("hierarchy: edges row " + std::to_string(r + 1) + " needs 2 fields");
      const std::string& child = row[0];
      const std::string& parent = row[1];
      if (!h.nodes_.count(child)) throw Error("hierarchy: edge references unknown id " + child);
      if (!h.nodes_.count(parent)) throw Error("hierarchy: edge references unknown id " + parent);
      if (child == parent) throw Error("hierarchy: self edge on " + child);
      h.nodes_[child].parents.insert(parent);
      h.nodes_[parent].children.insert(child);
    }
    h.finalize();
    return h;
  }

  static CweHierarchy from_files(const std::string& definitions_path,
                                 const std::string& edges_path) {
    return from_csv(csv::read_file(definitions_path), csv::read_file(edges_path));
  }

  bool contains(const std::string& id) const { return nodes_.count(id) != 0; }

  const CweNode& node(const std::string& id) const {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw Error("hierarchy: unknown id " + id);
    return it->second;
  }

  const std::map<std::string, CweNode>& nodes() const { return nodes_; }
  const std::vector<std::string>& roots() const { return roots_; }

  const std::set<int>& levels(const std::string& id) const {
    auto it = level_of_.find(id);
    if (it == level_of_.end()) throw Error("hierarchy: unknown id " + id);
    return it->second;
  }

  // All ids carrying the given level index, in id order.
  std::vector<std::string> nodes_at_level(int level) const {
    std::vector<std::string> out;
    for (const auto& [id, levels] : level_of_)
      if (levels.count(level)) out.push_back(id);
    return out;
  }

  // Transitive closure of parents, excluding w itself.
  std::set<std::string> ancestors(const std::string& w) const {
    const CweNode& start = node(w);
    std::set<std::string> seen;
    std::queue<std::string> frontier;
    for (const auto& p : start.parents) frontier.push(p);
    while (!frontier.empty()) {
      std::string cur = frontier.front();
      frontier.pop();
      if (!seen.insert(cur).second) continue;
      for (const auto& p : node(cur).parents) frontier.push(p);
    }
    return seen;
  }

  std::set<std::string> descendants(const std::string& w) const {
    const CweNode& start = node(w);
    std::set<std::string> seen;
    std::queue<std::string> frontier;
    for (const auto& c : start.children) frontier.push(c);
    while (!frontier.empty()) {
      std::string cur = frontier.front();
      frontier.pop();
      if (!seen.insert(cur).second) continue;
      for (const auto& c : node(cur).children) frontier.push(c);
    }
    return seen;
  }

  // A label set plus every ancestor of each label.
  std::set<std::string> positive_closure(const std::set<std::string>& labels) const {
    std::set<std::string> out;
    for (const auto& w : labels) {
      out.insert(w);
      auto anc = ancestors(w);
      out.insert(anc.begin(), anc.end());
    }
    return out;
  }

 private:
  void finalize() {
    // Kahn's algorithm over parent->child edges; leftovers expose a cycle.
    std::map<std::string, int> indegree;
    for (const auto& [id, n] : nodes_) indegree[id] = static_cast<int>(n.parents.size());
    std::queue<std::string> ready;
    for (const auto& [id, d] : indegree)
      if (d == 0) ready.push(id);
    std::vector<std::string> topo;
    while (!ready.empty()) {
      std::string cur = ready.front();
      ready.pop();
      topo.push_back(cur);
      for (const auto& c : nodes_[cur].children)
        if (--indegree[c] == 0) ready.push(c);
    }
    if (topo.size() != nodes_.size()) {
      std::string offending;
      for (const auto& [id, d] : indegree) {
        if (d <= 0) continue;
        for (const auto& p : nodes_[id].parents)
          if (indegree[p] > 0) offending += " " + id + "<-" + p;
      }
      throw Error("hierarchy: cycle detected; offending edges:" + offending);
    }
    roots_.clear();
    level_of_.clear();
    for (const auto& id : topo) {
      const CweNode& n = nodes_[id];
      if (n.parents.empty()) {
        roots_.push_back(id);
        level_of_[id].insert(1);
      } else {
        for (const auto& p : n.parents)
          for (int pl : level_of_[p]) level_of_[id].insert(pl + 1);
      }
    }
    std::sort(roots_.begin(), roots_.end());
  }

  std::map<std::string, CweNode> nodes_;
  std::vector<std::string> roots_;
  std::map<std::string, std::set<int>> level_of_;
};

namespace detail {

// Top-k by (score descending, id ascending); requires a score for every
// candidate.
inline std::vector<std::string> top_k(const std::vector<std::string>& candidates,
                                      const std::map<std::string, double>& scores,
                                      int k, const char* stage) {
  std::vector<std::string> sorted = candidates;
  for (const auto& id : sorted)
    if (!scores.count(id))
      throw Error(std::string("enumerate_paths: missing score for ") + stage + " candidate " + id);
  std::sort(sorted.begin(), sorted.end(), [&](const std::string& a, const std::string& b) {
    double sa = scores.at(a), sb = scores.at(b);
    if (sa != sb) return sa > sb;
    return a < b;
  });
  if (static_cast<int>(sorted.size()) > k) sorted.resize(static_cast<std::size_t>(k));
  return sorted;
}

}  // namespace detail

// Walk the hierarchy top down, keeping the k1 best level-1 nodes by link
// confidence, then the k2 best children of each, then the k3 best of each of
// those. A path stops early at a leaf. Result is ordered by per-level scores,
// descending (missing levels rank below any real score), ties by node ids.
inline std::vector<PredictionPath> enumerate_paths(
    const CweHierarchy& h, const std::map<std::string, double>& scores,
    int k1, int k2, int k3) {
  if (scores.empty()) throw Error("enumerate_paths: empty scores");
  if (k1 < 1 || k2 < 1 || k3 < 1) throw Error("enumerate_paths: k values must be >= 1");

  std::vector<std::string> level1 = h.nodes_at_level(1);
  if (level1.empty()) throw Error("enumerate_paths: hierarchy has no level-1 nodes");

  std::vector<PredictionPath> paths;
  auto children_of = [&](const std::string& id) {
    const auto& set = h.node(id).children;
    return std::vector<std::string>(set.begin(), set.end());
  };

  for (const auto& n1 : detail::top_k(level1, scores, k1, "level-1")) {
    auto c1 = children_of(n1);
    if (c1.empty()) {
      paths.push_back({{n1}, {scores.at(n1)}});
      continue;
    }
    for (const auto& n2 : detail::top_k(c1, scores, k2, "level-2")) {
      auto c2 = children_of(n2);
      if (c2.empty()) {
        paths.push_back({{n1, n2}, {scores.at(n1), scores.at(n2)}});
        continue;
      }
      for (const auto& n3 : detail::top_k(c2, scores, k3, "level-3"))
        paths.push_back({{n1, n2, n3}, {scores.at(n1), scores.at(n2), scores.at(n3)}});
    }
  }

  auto level_score = [](const PredictionPath& p, std::size_t i) {
    return i < p.scores.size() ? p.scores[i] : -1.0;
  };
  std::sort(paths.begin(), paths.end(), [&](const PredictionPath& a, const PredictionPath& b) {
    for (std::size_t i = 0; i < 3; ++i) {
      double sa = level_score(a, i), sb = level_score(b, i);
      if (sa != sb) return sa > sb;
    }
    return a.nodes < b.nodes;
  });
  return paths;
}

}  // namespace v2w
