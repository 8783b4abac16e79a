#pragma once

// Leakage-free dataset construction. Whole clusters are assigned to
// train/dev/test, so no bug (and therefore no pair member) is shared across
// splits. Pairs, triplets and retrieval groups are then derived per split.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "dbrd/common.hpp"
#include "dbrd/dup_graph.hpp"
#include "json.hpp"

namespace dbrd {

enum class Split { kTrain = 0, kDev = 1, kTest = 2 };
inline constexpr std::array<Split, 3> kAllSplits = {Split::kTrain, Split::kDev, Split::kTest};

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "dev") return Split::kDev;
  if (s == "test") return Split::kTest;
  throw InputError("unknown split '" + s + "'");
}

inline std::size_t idx(Split s) { return static_cast<std::size_t>(s); }

struct SplitRatios {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;

  double operator[](Split s) const {
    return s == Split::kTrain ? train : s == Split::kDev ? dev : test;
  }
  void validate() const {
    if (!(train > 0 && dev > 0 && test > 0))
      throw PreconditionError("split ratios must all be positive");
    if (std::abs(train + dev + test - 1.0) > 1e-9)
      throw PreconditionError("split ratios must sum to 1");
  }
  friend bool operator==(const SplitRatios&, const SplitRatios&) = default;
};

// Maximum number of duplicate pairs kept per split; negatives follow from it.
using PairCaps = std::array<std::optional<std::size_t>, 3>;

struct LabeledPair {
  std::string bug_a;
  std::string bug_b;
  bool duplicate = false;

  friend bool operator==(const LabeledPair&, const LabeledPair&) = default;
};

struct TripletExample {
  std::string anchor;
  std::string positive;
  std::string negative;

  friend bool operator==(const TripletExample&, const TripletExample&) = default;
};

struct RetrievalGroup {
  std::string query;
  std::vector<std::string> relevant;  // same-cluster peers, sorted

  friend bool operator==(const RetrievalGroup&, const RetrievalGroup&) = default;
};

struct SplitManifest {
  std::uint64_t seed = 0;
  SplitRatios ratios;
  PairCaps caps{};
  double target_dup_ratio = 0.1564;

  std::vector<Split> cluster_split;      // indexed by cluster_id
  std::vector<Split> independent_split;  // aligned with ClusterSet::independents()

  std::array<std::vector<LabeledPair>, 3> pairs;
  std::vector<TripletExample> triplets;
  std::array<std::vector<RetrievalGroup>, 3> groups;

  friend bool operator==(const SplitManifest&, const SplitManifest&) = default;
};

// Sorted bug ids of one split.
inline std::vector<std::string> split_bugs(const SplitManifest& m, const ClusterSet& cs, Split s) {
  std::vector<std::string> out;
  for (const auto& c : cs.clusters()) {
    if (m.cluster_split.at(static_cast<std::size_t>(c.cluster_id)) == s)
      out.insert(out.end(), c.members.begin(), c.members.end());
  }
  for (std::size_t i = 0; i < cs.independents().size(); ++i) {
    if (m.independent_split.at(i) == s) out.push_back(cs.independents()[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<int> split_clusters_of(const SplitManifest& m, Split s) {
  std::vector<int> out;
  for (std::size_t i = 0; i < m.cluster_split.size(); ++i)
    if (m.cluster_split[i] == s) out.push_back(static_cast<int>(i));
  return out;
}

constexpr std::uint64_t count_dup_pairs(std::uint64_t n) { return n * (n - (n > 0 ? 1 : 0)) / 2; }

namespace detail {

// Items are laid out along [0, total) by weight in the given order; each goes
// to the split holding its midpoint. Boundaries are then clamped so every
// split receives at least one item when min_each is set.
inline std::vector<Split> partition_by_mass(const std::vector<std::size_t>& weights,
                                            const SplitRatios& r, bool min_each) {
  const std::size_t n = weights.size();
  double total = 0;
  for (auto w : weights) total += double(w);
  std::size_t b1 = 0, b2 = 0;  // [0,b1) train, [b1,b2) dev, [b2,n) test
  double cum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double mid = (cum + double(weights[i]) / 2.0) / total;
    if (mid < r.train) b1 = i + 1;
    if (mid < r.train + r.dev) b2 = i + 1;
    cum += double(weights[i]);
  }
  if (min_each) {
    b1 = std::clamp<std::size_t>(b1, 1, n - 2);
    b2 = std::clamp<std::size_t>(b2, b1 + 1, n - 1);
  }
  b2 = std::max(b2, b1);
  std::vector<Split> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = i < b1 ? Split::kTrain : i < b2 ? Split::kDev : Split::kTest;
  return out;
}

}  // namespace detail

// Assigns whole clusters to splits. Ratios apply to duplicate-bug mass (the
// summed cluster sizes), after a seeded shuffle. Independents are shuffled
// and partitioned by the same ratios.
inline SplitManifest split_clusters(const ClusterSet& cs, const SplitRatios& ratios,
                                    std::uint64_t seed) {
  ratios.validate();
  const auto& clusters = cs.clusters();
  if (clusters.size() < 3)
    throw PreconditionError("need at least 3 duplicate clusters to populate train/dev/test, got " +
                            std::to_string(clusters.size()));
  SplitManifest m;
  m.seed = seed;
  m.ratios = ratios;

  std::vector<std::size_t> order(clusters.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = Rng::substream(seed, "split.clusters");
  rng.shuffle(order);
  std::vector<std::size_t> weights;
  weights.reserve(order.size());
  for (auto c : order) weights.push_back(clusters[c].members.size());
  auto placed = detail::partition_by_mass(weights, ratios, true);
  m.cluster_split.resize(clusters.size());
  for (std::size_t i = 0; i < order.size(); ++i) m.cluster_split[order[i]] = placed[i];

  const std::size_t ni = cs.independents().size();
  m.independent_split.assign(ni, Split::kTrain);
  if (ni > 0) {
    std::vector<std::size_t> iorder(ni);
    std::iota(iorder.begin(), iorder.end(), std::size_t{0});
    auto irng = Rng::substream(seed, "split.independents");
    irng.shuffle(iorder);
    auto iplaced = detail::partition_by_mass(std::vector<std::size_t>(ni, 1), ratios, false);
    for (std::size_t i = 0; i < ni; ++i) m.independent_split[iorder[i]] = iplaced[i];
  }
  return m;
}

// Eligible cross-group pairs among `groups` where each entry is the group
// size and independents count as groups of one.
inline std::uint64_t nondup_pool_size(const std::vector<std::size_t>& group_sizes) {
  std::uint64_t total = 0, sq = 0;
  for (auto g : group_sizes) {
    total += g;
    sq += std::uint64_t(g) * g;
  }
  return (total * total - sq) / 2;
}

// round(dup * (1 - r) / r)
inline std::size_t nondup_count_for_ratio(std::size_t dup, double r) {
  if (!(r > 0 && r <= 1)) throw PreconditionError("target duplicate ratio must be in (0, 1]");
  return static_cast<std::size_t>(std::llround(double(dup) * (1.0 - r) / r));
}

namespace detail {

inline std::vector<LabeledPair> sample_nondup(const std::vector<std::string>& bugs,
                                              const std::vector<long>& group, std::size_t count,
                                              Rng& rng, Split s) {
  std::vector<std::size_t> sizes;
  {
    std::map<long, std::size_t> g;
    for (auto x : group) ++g[x];
    for (auto& [k, v] : g) sizes.push_back(v);
  }
  const std::uint64_t pool = nondup_pool_size(sizes);
  if (count > pool)
    throw PreconditionError(std::string("split '") + split_name(s) + "' has only " +
                            std::to_string(pool) + " non-duplicate pairs, " +
                            std::to_string(count) + " requested");
  std::vector<std::pair<std::size_t, std::size_t>> chosen;
  chosen.reserve(count);
  const std::size_t n = bugs.size();
  if (pool <= 2'000'000) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> all;
    all.reserve(pool);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (group[i] != group[j]) all.emplace_back(i, j);
    for (auto k : rng.sample_indices(all.size(), count)) chosen.emplace_back(all[k]);
  } else {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    while (chosen.size() < count) {
      std::size_t i = rng.below(n), j = rng.below(n);
      if (i == j || group[i] == group[j]) continue;
      if (j < i) std::swap(i, j);
      if (seen.emplace(i, j).second) chosen.emplace_back(i, j);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<LabeledPair> out;
  out.reserve(count);
  for (auto [i, j] : chosen) out.push_back({bugs[i], bugs[j], false});
  return out;
}

}  // namespace detail

// Duplicate pairs are every within-cluster pair of the split (seeded
// subsample when capped). Train gets as many negatives as positives; dev and
// test get round(dup * (1 - r) / r) negatives for target ratio r. Negatives
// are drawn uniformly without replacement from cross-cluster pairs of the
// same split, independents included.
inline std::array<std::vector<LabeledPair>, 3> generate_pairs(const SplitManifest& m,
                                                              const ClusterSet& cs,
                                                              const PairCaps& caps,
                                                              double target_dup_ratio,
                                                              std::uint64_t seed) {
  std::array<std::vector<LabeledPair>, 3> out;
  for (Split s : kAllSplits) {
    std::vector<LabeledPair> dups;
    for (int cid : split_clusters_of(m, s)) {
      const auto& mem = cs.cluster(cid).members;
      for (std::size_t i = 0; i < mem.size(); ++i)
        for (std::size_t j = i + 1; j < mem.size(); ++j) dups.push_back({mem[i], mem[j], true});
    }
    if (dups.empty())
      throw PreconditionError(std::string("split '") + split_name(s) +
                              "' has no cluster with two or more bugs");
    const auto& cap = caps[idx(s)];
    if (cap && dups.size() > *cap) {
      auto rng = Rng::substream(seed, std::string("pairs.dup.") + split_name(s));
      auto keep = rng.sample_indices(dups.size(), *cap);
      std::sort(keep.begin(), keep.end());
      std::vector<LabeledPair> kept;
      kept.reserve(keep.size());
      for (auto k : keep) kept.push_back(std::move(dups[k]));
      dups = std::move(kept);
    }
    const std::size_t want = s == Split::kTrain ? dups.size()
                                                : nondup_count_for_ratio(dups.size(), target_dup_ratio);
    auto bugs = split_bugs(m, cs, s);
    std::vector<long> group(bugs.size());
    long next_singleton = -1;
    for (std::size_t i = 0; i < bugs.size(); ++i) {
      int c = cs.cluster_of(bugs[i]);
      group[i] = c == ClusterSet::kIndependent ? next_singleton-- : c;
    }
    auto rng = Rng::substream(seed, std::string("pairs.nondup.") + split_name(s));
    auto neg = detail::sample_nondup(bugs, group, want, rng, s);
    auto& dst = out[idx(s)];
    dst = std::move(dups);
    dst.insert(dst.end(), std::make_move_iterator(neg.begin()), std::make_move_iterator(neg.end()));
  }
  return out;
}

// One triplet per ordered train duplicate pair; the negative is uniform over
// train bugs outside the anchor's cluster.
inline std::vector<TripletExample> generate_triplets(const SplitManifest& m, const ClusterSet& cs,
                                                     std::uint64_t seed) {
  auto train = split_bugs(m, cs, Split::kTrain);
  std::vector<int> owner(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) owner[i] = cs.cluster_of(train[i]);
  auto rng = Rng::substream(seed, "triplets");
  std::vector<TripletExample> out;
  for (const auto& p : m.pairs[idx(Split::kTrain)]) {
    if (!p.duplicate) continue;
    for (int dir = 0; dir < 2; ++dir) {
      const auto& anchor = dir == 0 ? p.bug_a : p.bug_b;
      const auto& positive = dir == 0 ? p.bug_b : p.bug_a;
      const int c = cs.cluster_of(anchor);
      const std::size_t own = c == ClusterSet::kIndependent ? 1 : cs.cluster(c).members.size();
      if (train.size() <= own)
        throw PreconditionError("no eligible negative for anchor '" + anchor + "'");
      std::size_t i;
      do {
        i = rng.below(train.size());
      } while (owner[i] == c);
      out.push_back({anchor, positive, train[i]});
    }
  }
  if (out.empty()) throw PreconditionError("train split has no duplicate pairs for triplets");
  return out;
}

inline std::vector<RetrievalGroup> generate_retrieval_groups(const SplitManifest& m,
                                                             const ClusterSet& cs, Split s) {
  std::vector<RetrievalGroup> out;
  for (int cid : split_clusters_of(m, s)) {
    const auto& mem = cs.cluster(cid).members;
    for (std::size_t i = 0; i < mem.size(); ++i) {
      RetrievalGroup g{mem[i], {}};
      for (std::size_t j = 0; j < mem.size(); ++j)
        if (j != i) g.relevant.push_back(mem[j]);
      out.push_back(std::move(g));
    }
  }
  return out;
}

// split_clusters + generate_pairs + generate_triplets + retrieval groups.
inline SplitManifest build_manifest(const ClusterSet& cs, const SplitRatios& ratios,
                                    std::uint64_t seed, const PairCaps& caps,
                                    double target_dup_ratio) {
  auto m = split_clusters(cs, ratios, seed);
  m.caps = caps;
  m.target_dup_ratio = target_dup_ratio;
  m.pairs = generate_pairs(m, cs, caps, target_dup_ratio, seed);
  m.triplets = generate_triplets(m, cs, seed);
  for (Split s : kAllSplits) m.groups[idx(s)] = generate_retrieval_groups(m, cs, s);
  return m;
}

struct SplitStats {
  std::size_t bugs = 0;
  std::size_t clusters = 0;
  std::size_t dup_pairs = 0;
  std::size_t nondup_pairs = 0;
};

inline SplitStats split_stats(const SplitManifest& m, const ClusterSet& cs, Split s) {
  SplitStats st;
  st.bugs = split_bugs(m, cs, s).size();
  st.clusters = split_clusters_of(m, s).size();
  for (const auto& p : m.pairs[idx(s)]) (p.duplicate ? st.dup_pairs : st.nondup_pairs)++;
  return st;
}

inline nlohmann::ordered_json to_json(const SplitManifest& m, const ClusterSet& cs) {
  using oj = nlohmann::ordered_json;
  oj j;
  oj cfg;
  cfg["seed"] = m.seed;
  cfg["ratios"] = {m.ratios.train, m.ratios.dev, m.ratios.test};
  oj caps;
  for (Split s : kAllSplits) {
    if (m.caps[idx(s)])
      caps[split_name(s)] = *m.caps[idx(s)];
    else
      caps[split_name(s)] = nullptr;
  }
  cfg["caps"] = caps;
  cfg["target_dup_ratio"] = m.target_dup_ratio;
  j["config"] = cfg;

  oj assignment;
  for (Split s : kAllSplits) {
    oj part;
    part["clusters"] = split_clusters_of(m, s);
    std::vector<std::string> ind;
    for (std::size_t i = 0; i < cs.independents().size(); ++i)
      if (m.independent_split[i] == s) ind.push_back(cs.independents()[i]);
    part["independents"] = ind;
    assignment[split_name(s)] = part;
  }
  j["assignment"] = assignment;

  oj stats;
  for (Split s : kAllSplits) {
    auto st = split_stats(m, cs, s);
    stats[split_name(s)] = {{"bugs", st.bugs},
                            {"clusters", st.clusters},
                            {"dup", st.dup_pairs},
                            {"nondup", st.nondup_pairs}};
  }
  j["stats"] = stats;

  oj pairs;
  for (Split s : kAllSplits) {
    oj arr = oj::array();
    for (const auto& p : m.pairs[idx(s)]) arr.push_back({p.bug_a, p.bug_b, p.duplicate ? 1 : 0});
    pairs[split_name(s)] = arr;
  }
  j["pairs"] = pairs;

  oj trip = oj::array();
  for (const auto& t : m.triplets) trip.push_back({t.anchor, t.positive, t.negative});
  j["triplets"] = trip;

  oj groups;
  for (Split s : kAllSplits) {
    oj arr = oj::array();
    for (const auto& g : m.groups[idx(s)]) arr.push_back({{"query", g.query}, {"relevant", g.relevant}});
    groups[split_name(s)] = arr;
  }
  j["groups"] = groups;
  return j;
}

inline SplitManifest manifest_from_json(const nlohmann::json& j, const ClusterSet& cs) {
  SplitManifest m;
  try {
    const auto& cfg = j.at("config");
    m.seed = cfg.at("seed").get<std::uint64_t>();
    auto r = cfg.at("ratios").get<std::vector<double>>();
    if (r.size() != 3) throw InputError("manifest ratios must have three entries");
    m.ratios = {r[0], r[1], r[2]};
    for (Split s : kAllSplits) {
      const auto& c = cfg.at("caps").at(split_name(s));
      if (!c.is_null()) m.caps[idx(s)] = c.get<std::size_t>();
    }
    m.target_dup_ratio = cfg.at("target_dup_ratio").get<double>();

    m.cluster_split.assign(cs.clusters().size(), Split::kTrain);
    std::vector<bool> seen(cs.clusters().size(), false);
    std::unordered_map<std::string, Split> ind;
    for (Split s : kAllSplits) {
      const auto& part = j.at("assignment").at(split_name(s));
      for (int cid : part.at("clusters").get<std::vector<int>>()) {
        if (cid < 0 || std::size_t(cid) >= seen.size() || seen[std::size_t(cid)])
          throw InputError("manifest assigns an invalid or repeated cluster id");
        seen[std::size_t(cid)] = true;
        m.cluster_split[std::size_t(cid)] = s;
      }
      for (const auto& b : part.at("independents").get<std::vector<std::string>>()) ind[b] = s;
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end())
      throw InputError("manifest leaves clusters unassigned");
    m.independent_split.resize(cs.independents().size());
    for (std::size_t i = 0; i < cs.independents().size(); ++i) {
      auto it = ind.find(cs.independents()[i]);
      if (it == ind.end()) throw InputError("manifest leaves independent bugs unassigned");
      m.independent_split[i] = it->second;
    }
    for (Split s : kAllSplits) {
      for (const auto& p : j.at("pairs").at(split_name(s)))
        m.pairs[idx(s)].push_back({p.at(0).get<std::string>(), p.at(1).get<std::string>(),
                                   p.at(2).get<int>() != 0});
      for (const auto& g : j.at("groups").at(split_name(s)))
        m.groups[idx(s)].push_back(
            {g.at("query").get<std::string>(), g.at("relevant").get<std::vector<std::string>>()});
    }
    for (const auto& t : j.at("triplets"))
      m.triplets.push_back(
          {t.at(0).get<std::string>(), t.at(1).get<std::string>(), t.at(2).get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed manifest: ") + e.what());
  }
  // Pairs must stay inside their split and carry the cluster-derived label.
  for (Split s : kAllSplits) {
    auto bugs = split_bugs(m, cs, s);
    auto in_split = [&](const std::string& b) { return std::binary_search(bugs.begin(), bugs.end(), b); };
    for (const auto& p : m.pairs[idx(s)]) {
      if (!cs.contains(p.bug_a) || !cs.contains(p.bug_b) || !in_split(p.bug_a) || !in_split(p.bug_b))
        throw InputError(std::string("manifest pair (") + p.bug_a + ", " + p.bug_b + ") is not inside split '" +
                         split_name(s) + "'");
      if (p.duplicate != cs.same_cluster(p.bug_a, p.bug_b))
        throw InputError("manifest pair (" + p.bug_a + ", " + p.bug_b + ") has a label that contradicts the clusters");
    }
  }
  return m;
}

}  // namespace dbrd
