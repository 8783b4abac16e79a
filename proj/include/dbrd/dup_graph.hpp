#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "dbrd/common.hpp"
#include "dbrd/corpus.hpp"
#include "json.hpp"

namespace dbrd {

// Disjoint sets over [0, n) with path compression and union by size.
class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }

  std::size_t find(std::size_t x) {
    std::size_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {
      std::size_t next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return true;
  }

  std::size_t set_size(std::size_t x) { return size_[find(x)]; }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

struct Cluster {
  int cluster_id = 0;
  std::vector<std::string> members;  // sorted, size >= 2

  friend bool operator==(const Cluster&, const Cluster&) = default;
};

// Duplicate clusters (transitive closure of the relations) plus the bugs that
// have no duplicate at all. Clusters are ordered by smallest member and
// cluster_id equals the position in that order.
class ClusterSet {
 public:
  static constexpr int kIndependent = -1;

  ClusterSet() = default;
  ClusterSet(std::vector<Cluster> clusters, std::vector<std::string> independents)
      : clusters_(std::move(clusters)), independents_(std::move(independents)) {
    for (const auto& c : clusters_) {
      for (const auto& m : c.members) {
        if (!owner_.emplace(m, c.cluster_id).second)
          throw InputError("bug '" + m + "' appears in more than one cluster");
      }
    }
    for (const auto& b : independents_) {
      if (!owner_.emplace(b, kIndependent).second)
        throw InputError("bug '" + b + "' is both clustered and independent");
    }
  }

  const std::vector<Cluster>& clusters() const { return clusters_; }
  const std::vector<std::string>& independents() const { return independents_; }
  const Cluster& cluster(int id) const { return clusters_.at(static_cast<std::size_t>(id)); }

  // kIndependent for independents; throws for unknown ids.
  int cluster_of(const std::string& bug) const {
    auto it = owner_.find(bug);
    if (it == owner_.end()) throw InputError("bug '" + bug + "' not in cluster set");
    return it->second;
  }
  bool contains(const std::string& bug) const { return owner_.count(bug) != 0; }

  bool same_cluster(const std::string& a, const std::string& b) const {
    int ca = cluster_of(a);
    return ca != kIndependent && ca == cluster_of(b);
  }

  std::size_t bug_count() const { return owner_.size(); }

  friend bool operator==(const ClusterSet& a, const ClusterSet& b) {
    return a.clusters_ == b.clusters_ && a.independents_ == b.independents_;
  }

 private:
  std::vector<Cluster> clusters_;
  std::vector<std::string> independents_;
  std::unordered_map<std::string, int> owner_;
};

inline ClusterSet build_clusters(const Corpus& corpus) {
  const auto& reports = corpus.reports();
  UnionFind uf(reports.size());
  std::vector<bool> touched(reports.size(), false);
  for (const auto& [a, b] : corpus.relations()) {
    auto ia = corpus.position(a);
    auto ib = corpus.position(b);
    touched[ia] = touched[ib] = true;
    uf.unite(ia, ib);
  }
  std::map<std::size_t, std::vector<std::string>> by_root;
  std::vector<std::string> independents;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (touched[i])
      by_root[uf.find(i)].push_back(reports[i].bug_id);
    else
      independents.push_back(reports[i].bug_id);
  }
  std::vector<std::vector<std::string>> groups;
  groups.reserve(by_root.size());
  for (auto& [root, members] : by_root) {
    std::sort(members.begin(), members.end());
    groups.push_back(std::move(members));
  }
  std::sort(groups.begin(), groups.end(),
            [](const auto& x, const auto& y) { return x.front() < y.front(); });
  std::vector<Cluster> clusters;
  clusters.reserve(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i)
    clusters.push_back({static_cast<int>(i), std::move(groups[i])});
  std::sort(independents.begin(), independents.end());
  return ClusterSet(std::move(clusters), std::move(independents));
}

struct ClusterStats {
  std::size_t count = 0;
  double mean_size = 0.0;
  bool empty = false;  // no clusters; mean_size reported as 0
};

inline ClusterStats cluster_stats(const ClusterSet& set) {
  ClusterStats s;
  s.count = set.clusters().size();
  if (s.count == 0) {
    s.empty = true;
    return s;
  }
  std::size_t total = 0;
  for (const auto& c : set.clusters()) total += c.members.size();
  s.mean_size = double(total) / double(s.count);
  return s;
}

inline nlohmann::ordered_json to_json(const ClusterSet& set) {
  nlohmann::ordered_json j;
  j["clusters"] = nlohmann::ordered_json::array();
  for (const auto& c : set.clusters()) j["clusters"].push_back(c.members);
  j["independents"] = set.independents();
  return j;
}

// Re-canonicalizes the input so hand-written files get the same ids.
inline ClusterSet cluster_set_from_json(const nlohmann::json& j) {
  if (!j.contains("clusters") || !j.contains("independents"))
    throw InputError("cluster file needs 'clusters' and 'independents'");
  std::vector<std::vector<std::string>> groups;
  for (const auto& g : j["clusters"]) {
    auto members = g.get<std::vector<std::string>>();
    if (members.size() < 2) throw InputError("cluster with fewer than two members");
    std::sort(members.begin(), members.end());
    groups.push_back(std::move(members));
  }
  std::sort(groups.begin(), groups.end(),
            [](const auto& x, const auto& y) { return x.front() < y.front(); });
  std::vector<Cluster> clusters;
  for (std::size_t i = 0; i < groups.size(); ++i)
    clusters.push_back({static_cast<int>(i), std::move(groups[i])});
  auto independents = j["independents"].get<std::vector<std::string>>();
  std::sort(independents.begin(), independents.end());
  return ClusterSet(std::move(clusters), std::move(independents));
}

}  // namespace dbrd
