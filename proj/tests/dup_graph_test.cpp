#include <gtest/gtest.h>

#include "dbrd/dup_graph.hpp"
#include "test_support.hpp"

using namespace dbrd;
using dbrd::testing::bfs_components;
using dbrd::testing::corpus_with_edges;

TEST(BuildClusters, TransitiveChainFormsOneCluster) {
  // A-B, B-C: A and C are duplicates by transitivity.
  auto c = corpus_with_edges(3, {{1, 0}, {2, 1}});
  auto cs = build_clusters(c);
  ASSERT_EQ(cs.clusters().size(), 1u);
  EXPECT_EQ(cs.clusters()[0].members, (std::vector<std::string>{"b000", "b001", "b002"}));
  EXPECT_TRUE(cs.same_cluster("b000", "b002"));
  EXPECT_TRUE(cs.independents().empty());
}

TEST(BuildClusters, NoRelationsAllIndependent) {
  auto cs = build_clusters(corpus_with_edges(2, {}));
  EXPECT_TRUE(cs.clusters().empty());
  EXPECT_EQ(cs.independents(), (std::vector<std::string>{"b000", "b001"}));
  EXPECT_EQ(cs.cluster_of("b000"), ClusterSet::kIndependent);
}

TEST(BuildClusters, MatchesBfsOracleOnRandomGraphs) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    const auto ne = rng.below(150);
    for (std::uint64_t e = 0; e < ne; ++e) {
      auto a = rng.below(200), b = rng.below(200);
      if (a != b) edges.emplace_back(a, b);
    }
    auto corpus = corpus_with_edges(200, edges);
    auto cs = build_clusters(corpus);
    std::set<std::set<std::string>> got;
    for (const auto& c : cs.clusters()) got.insert({c.members.begin(), c.members.end()});
    EXPECT_EQ(got, bfs_components(corpus));

    // Partition: every bug in exactly one place.
    std::multiset<std::string> all(cs.independents().begin(), cs.independents().end());
    for (const auto& c : cs.clusters()) all.insert(c.members.begin(), c.members.end());
    EXPECT_EQ(all.size(), corpus.size());
    for (const auto& r : corpus.reports()) EXPECT_EQ(all.count(r.bug_id), 1u);
    // Closure: every relation lies inside one cluster.
    for (const auto& [a, b] : corpus.relations()) EXPECT_TRUE(cs.same_cluster(a, b));
    // Stats agree with recomputation from the oracle.
    auto st = cluster_stats(cs);
    auto oracle = bfs_components(corpus);
    EXPECT_EQ(st.count, oracle.size());
    if (!oracle.empty()) {
      double total = 0;
      for (const auto& comp : oracle) total += double(comp.size());
      EXPECT_DOUBLE_EQ(st.mean_size, total / double(oracle.size()));
    }
  }
}

TEST(BuildClusters, CanonicalIdsAndDeterminism) {
  auto corpus = corpus_with_edges(8, {{7, 6}, {1, 0}, {4, 2}, {3, 4}});
  auto a = build_clusters(corpus);
  auto b = build_clusters(corpus);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.clusters().size(), 3u);
  for (std::size_t i = 0; i < a.clusters().size(); ++i) {
    EXPECT_EQ(a.clusters()[i].cluster_id, int(i));
    EXPECT_TRUE(std::is_sorted(a.clusters()[i].members.begin(), a.clusters()[i].members.end()));
    if (i > 0) {
      EXPECT_LT(a.clusters()[i - 1].members.front(), a.clusters()[i].members.front());
    }
  }
  EXPECT_EQ(a.clusters()[1].members, (std::vector<std::string>{"b002", "b003", "b004"}));
}

TEST(ClusterStats, TwoClusters) {
  ClusterSet cs({{0, {"a", "b", "c"}}, {1, {"d", "e"}}}, {"f"});
  auto s = cluster_stats(cs);
  EXPECT_EQ(s.count, 2u);
  EXPECT_DOUBLE_EQ(s.mean_size, 2.5);
  EXPECT_FALSE(s.empty);
}

TEST(ClusterStats, EmptySetIsFlagged) {
  auto s = cluster_stats(ClusterSet({}, {"a"}));
  EXPECT_EQ(s.count, 0u);
  EXPECT_EQ(s.mean_size, 0.0);
  EXPECT_TRUE(s.empty);
}

TEST(ClusterSet, JsonRoundTrip) {
  auto cs = build_clusters(corpus_with_edges(10, {{1, 0}, {5, 3}, {9, 5}}));
  EXPECT_EQ(cluster_set_from_json(to_json(cs)), cs);
}

TEST(ClusterSet, RejectsOverlap) {
  EXPECT_THROW(ClusterSet({{0, {"a", "b"}}, {1, {"b", "c"}}}, {}), InputError);
  EXPECT_THROW(ClusterSet({{0, {"a", "b"}}}, {"a"}), InputError);
}

TEST(UnionFind, UnionBySizeTracksSets) {
  UnionFind uf(6);
  EXPECT_TRUE(uf.unite(0, 1));
  EXPECT_TRUE(uf.unite(2, 3));
  EXPECT_TRUE(uf.unite(1, 3));
  EXPECT_FALSE(uf.unite(0, 2));
  EXPECT_EQ(uf.find(0), uf.find(3));
  EXPECT_NE(uf.find(0), uf.find(4));
  EXPECT_EQ(uf.set_size(2), 4u);
}
