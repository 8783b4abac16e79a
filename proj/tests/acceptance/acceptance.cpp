// End-to-end acceptance checks. One PASS/FAIL line per criterion; the exit
// code is the number of failing criteria. Tolerances are fixed here.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "dbrd/cascade.hpp"
#include "dbrd/synth.hpp"
#include "test_support.hpp"

using namespace dbrd;

namespace {

constexpr double kMetricTol = 1e-12;
constexpr double kGradTol = 1e-4;
constexpr double kSplitBudgetSeconds = 60.0;
constexpr double kCascadeSpeedup = 0.5;
constexpr std::size_t kSplitCorpora = 500;
constexpr std::size_t kMetricInstances = 1000;
constexpr std::size_t kIndexInstances = 200;
constexpr std::size_t kGradDraws = 100;
constexpr std::size_t kGradMaxDim = 8;
constexpr int kSeeds = 5;
constexpr int kProjectionSeedsNeeded = 4;
constexpr int kSandwichSeedsNeeded = 4;
// Projection settings for the improvement check; library defaults are lower.
constexpr double kProjectionLr = 0.1;
constexpr std::size_t kProjectionEpochs = 20;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

// Empty string when the manifest is clean, otherwise the first problem found.
std::string leakage_problem(const SplitManifest& m, const ClusterSet& cs) {
  std::unordered_map<std::string, Split> where;
  for (Split s : kAllSplits)
    for (const auto& b : split_bugs(m, cs, s))
      if (!where.emplace(b, s).second) return "bug " + b + " in two splits";
  if (where.size() != cs.bug_count()) return "not every bug assigned";
  for (Split s : kAllSplits) {
    if (split_clusters_of(m, s).empty()) return std::string("split ") + split_name(s) + " has no cluster";
    for (const auto& p : m.pairs[idx(s)]) {
      if (where.at(p.bug_a) != s || where.at(p.bug_b) != s) return "pair crosses splits";
      if (p.duplicate != cs.same_cluster(p.bug_a, p.bug_b)) return "pair label wrong";
    }
  }
  for (const auto& c : cs.clusters())
    for (const auto& b : c.members)
      if (where.at(b) != where.at(c.members.front())) return "cluster spans splits";
  for (const auto& t : m.triplets) {
    if (where.at(t.anchor) != Split::kTrain || where.at(t.positive) != Split::kTrain ||
        where.at(t.negative) != Split::kTrain)
      return "triplet outside train";
    if (!cs.same_cluster(t.anchor, t.positive) || cs.same_cluster(t.anchor, t.negative)) return "triplet label wrong";
  }
  return {};
}

SynthConfig random_synth(Rng& rng, std::uint64_t seed) {
  SynthConfig c;
  c.clusters = 50 + rng.below(451);
  c.independents = rng.below(300);
  c.mean_size = rng.uniform(2.0, 4.0);
  c.seed = seed;
  return c;
}

Verdict leakage_free_splits() {
  Rng rng(1001);
  const auto t0 = Clock::now();
  std::size_t without_pairs = 0;
  for (std::size_t i = 0; i < kSplitCorpora; ++i) {
    auto cfg = random_synth(rng, i);
    auto cs = build_clusters(synth_corpus(cfg));
    auto m = split_clusters(cs, {}, i);
    // Pairs and triplets are checked too whenever the negative pool can supply them.
    try {
      m = build_manifest(cs, {}, i, {}, 0.1564);
    } catch (const PreconditionError&) {
      ++without_pairs;
    }
    if (auto p = leakage_problem(m, cs); !p.empty())
      return {false, "corpus " + std::to_string(i) + ": " + p};
  }
  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "%zu corpora with 50-500 clusters in %.1f s (budget %.0f s), %zu too small for pair generation",
                kSplitCorpora, secs, kSplitBudgetSeconds, without_pairs);
  return {secs < kSplitBudgetSeconds, buf};
}

Verdict pair_counts() {
  Rng rng(2002);
  std::size_t checked = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto cfg = random_synth(rng, 5000 + i);
    auto cs = build_clusters(synth_corpus(cfg));
    const double r = rng.uniform(0.05, 0.5);
    PairCaps caps;
    if (i % 3 == 0) caps = {std::nullopt, std::size_t(5 + rng.below(40)), std::size_t(5 + rng.below(40))};
    auto m = build_manifest(cs, {}, i, caps, r);
    for (Split s : kAllSplits) {
      std::uint64_t all_dup = 0;
      for (int c : split_clusters_of(m, s)) all_dup += count_dup_pairs(cs.cluster(c).members.size());
      const auto cap = caps[idx(s)];
      const std::uint64_t want_dup = cap ? std::min<std::uint64_t>(*cap, all_dup) : all_dup;
      auto st = split_stats(m, cs, s);
      if (st.dup_pairs != want_dup)
        return {false, "manifest " + std::to_string(i) + " split " + split_name(s) + ": dup " +
                           std::to_string(st.dup_pairs) + " != " + std::to_string(want_dup)};
      if (s == Split::kTrain) {
        if (st.nondup_pairs != st.dup_pairs) return {false, "train negatives differ from positives"};
      } else {
        const double total = double(st.dup_pairs + st.nondup_pairs);
        if (std::abs(double(st.dup_pairs) / total - r) > 1.0 / total)
          return {false, "dev/test duplicate share off target in manifest " + std::to_string(i)};
      }
      ++checked;
    }
  }
  return {true, std::to_string(checked) + " split pair sets exact, ratio within 1/total"};
}

struct BigCorpus {
  Corpus corpus;
  ClusterSet cs;
  std::shared_ptr<TfidfEmbedder> tfidf;
  std::vector<const BugReport*> reports;
};

BigCorpus big_corpus(std::size_t dim) {
  SynthConfig cfg;
  cfg.clusters = 500;
  cfg.independents = 700;
  cfg.seed = 77;
  BigCorpus b;
  b.corpus = synth_corpus(cfg);
  b.cs = build_clusters(b.corpus);
  std::vector<std::string> texts;
  for (const auto& r : b.corpus.reports()) {
    texts.push_back(r.clean_text);
    b.reports.push_back(&r);
  }
  b.tfidf = std::make_shared<TfidfEmbedder>(TfidfEmbedder::fitted(texts, dim));
  return b;
}

Verdict ledger_grid(const BigCorpus& b) {
  ConstantClassifier yes(1.0);
  std::size_t runs = 0;
  for (std::size_t n : {1, 2, 10, 100}) {
    for (std::size_t m : {10, 100, 2000}) {
      if (n + m > b.reports.size()) return {false, "corpus too small for the grid"};
      std::vector<const BugReport*> q(b.reports.begin(), b.reports.begin() + std::ptrdiff_t(n));
      std::vector<const BugReport*> db(b.reports.begin() + std::ptrdiff_t(n), b.reports.begin() + std::ptrdiff_t(n + m));
      for (std::size_t k : {1, 3, 20, 100}) {
        for (Method method : {Method::kRetrievalOnly, Method::kClassificationOnly, Method::kCascade}) {
          ScenarioConfig sc;
          sc.method = method;
          sc.k = k;
          auto r = run_scenario(sc, q, db, b.cs, b.tfidf.get(), &yes);
          // Written out independently of predict_cost; a query can have at most m candidates.
          const std::uint64_t topk = std::min(k, m);
          LedgerCounts want;
          if (method == Method::kRetrievalOnly) want = {n + m, 0, n * m};
          if (method == Method::kClassificationOnly) want = {0, n * m, 0};
          if (method == Method::kCascade) want = {n + m, n * topk, n * m};
          if (!(r.ledger == r.predicted) || !(r.ledger == want))
            return {false, std::string(method_name(method)) + " n=" + std::to_string(n) + " m=" + std::to_string(m) +
                               " k=" + std::to_string(k) + ": ledger differs from prediction"};
          ++runs;
        }
      }
    }
  }
  for (std::size_t m : {10, 100}) {
    std::vector<const BugReport*> pool(b.reports.begin(), b.reports.begin() + std::ptrdiff_t(m));
    for (std::size_t k : {1, 3, 20, 100}) {
      for (Method method : {Method::kRetrievalOnly, Method::kClassificationOnly, Method::kCascade}) {
        ScenarioConfig sc;
        sc.mode = ScenarioMode::kAllVsAll;
        sc.method = method;
        sc.k = k;
        auto r = run_scenario(sc, pool, pool, b.cs, b.tfidf.get(), &yes);
        if (!(r.ledger == predict_cost_all_vs_all(method, m, k)))
          return {false, std::string("all-vs-all ") + method_name(method) + " m=" + std::to_string(m) +
                             " k=" + std::to_string(k) + ": ledger differs from prediction"};
        sc.dedup_pairs = true;
        auto d = run_scenario(sc, pool, pool, b.cs, b.tfidf.get(), &yes);
        if (d.ledger.pair_classifications > r.ledger.pair_classifications)
          return {false, "dedup increased classifications"};
        runs += 2;
      }
    }
  }
  return {true, std::to_string(runs) + " runs, every ledger equals its prediction"};
}

Verdict cascade_speed(const BigCorpus& b) {
  // Logistic classifier on TF-IDF features, trained on a quick split of the same corpus.
  auto m = build_manifest(b.cs, {}, 3, {std::size_t{2000}, std::size_t{200}, std::size_t{200}}, 0.1564);
  ClassifierTrainConfig cc;
  cc.epochs = 20;
  auto model = train_classifier(m.pairs[0], m.pairs[1], b.corpus, *b.tfidf, cc);
  LogisticPairClassifier cls(b.tfidf, model);
  std::vector<const BugReport*> q(b.reports.begin(), b.reports.begin() + 100);
  std::vector<const BugReport*> db(b.reports.begin() + 100, b.reports.begin() + 2100);
  ScenarioConfig sc;
  sc.k = 20;
  sc.method = Method::kClassificationOnly;
  auto full = run_scenario(sc, q, db, b.cs, nullptr, &cls);
  sc.method = Method::kCascade;
  auto cas = run_scenario(sc, q, db, b.cs, b.tfidf.get(), &cls);
  const double tf = full.timings_ms.at("total"), tc = cas.timings_ms.at("total");
  char buf[160];
  std::snprintf(buf, sizeof buf, "n=100 m=2000 k=20: cascade %.0f ms vs classification %.0f ms (ratio %.4f, limit %.2f)",
                tc, tf, tc / tf, kCascadeSpeedup);
  return {tc <= kCascadeSpeedup * tf, buf};
}

Verdict metric_oracle() {
  Rng rng(4004);
  double worst = 0;
  for (std::size_t t = 0; t < kMetricInstances; ++t) {
    std::vector<QueryOutcome> qs;
    const bool kind = rng.bernoulli(0.3);
    const auto n = 1 + rng.below(12);
    for (std::uint64_t i = 0; i < n; ++i) qs.push_back(testing::random_outcome(rng, i, kind));
    const std::size_t k = 1 + rng.below(30);
    auto got = aggregate_at(qs, k);
    auto want = testing::oracle_row(qs, k);
    for (auto [a, b] : {std::pair{got.precision, want.precision}, {got.recall, want.recall},
                        {got.recall_micro, want.recall_micro}, {got.f1, want.f1}, {got.accuracy, want.accuracy}})
      worst = std::max(worst, std::abs(a - b));
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu random instances, max deviation %.2e (tolerance %.0e)", kMetricInstances, worst,
                kMetricTol);
  return {worst <= kMetricTol, buf};
}

Verdict retrieval_properties(const BigCorpus& b) {
  // Exact top-k against a full sort, with heavy ties on half the instances.
  Rng rng(5005);
  for (std::size_t t = 0; t < kIndexInstances; ++t) {
    const bool ties = t % 2 == 1;
    const std::size_t n = 1 + rng.below(300), dim = 1 + rng.below(8);
    VectorIndex idx(dim);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> v(dim);
      for (auto& x : v) x = ties ? double(rng.below(3)) : rng.uniform(-1, 1);
      idx.add("v" + std::to_string(100000 + rng.below(900000)) + "_" + std::to_string(i), {v, false});
    }
    std::vector<double> qv(dim);
    for (auto& x : qv) x = ties ? double(rng.below(3)) : rng.uniform(-1, 1);
    EmbeddingVector q{qv, false};
    const std::size_t k = 1 + rng.below(kMaxK);
    std::vector<ScoredId> all;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = norm(q.values), c = norm(idx.vector(i).values);
      double s = -std::numeric_limits<double>::infinity();
      if (a > 0 && c > 0) s = std::clamp(dot(q.values, idx.vector(i).values) / (a * c), -1.0, 1.0);
      all.push_back({idx.ids()[i], s});
    }
    std::sort(all.begin(), all.end(), [](const ScoredId& x, const ScoredId& y) {
      return x.score != y.score ? x.score > y.score : x.bug_id < y.bug_id;
    });
    all.resize(std::min(k, n));
    auto got = top_k(idx, q, k);
    if (got.ranked != all) return {false, "top-k differs from full sort on index " + std::to_string(t)};
    if (got.truncated_k != (k > n)) return {false, "k > size flag wrong"};
  }
  // Real corpus: identity ranks first, rebuilds are byte-identical, recall is monotone in k.
  std::vector<const BugReport*> pool(b.reports.begin(), b.reports.begin() + 400);
  CostLedger ledger;
  auto idx = build_index(*b.tfidf, pool, &ledger);
  if (ledger.counts().embed_calls != pool.size()) return {false, "index build embed count"};
  if (idx.serialize() != build_index(*b.tfidf, pool).serialize()) return {false, "index rebuild differs"};
  std::size_t full_recall_checked = 0;
  const std::set<std::string> indexed(idx.ids().begin(), idx.ids().end());
  for (std::size_t i = 0; i < 50; ++i) {
    auto r = top_k(idx, idx.vector(i), kMaxK);
    if (!pool[i]->clean_text.empty() && r.ranked.front().score < 1.0 - 1e-12) return {false, "self not at score 1"};
    auto rel_cluster = b.cs.cluster_of(pool[i]->bug_id);
    if (rel_cluster == ClusterSet::kIndependent) continue;
    std::set<std::string> rel;
    for (const auto& m : b.cs.cluster(rel_cluster).members)
      if (m != pool[i]->bug_id) rel.insert(m);
    auto rx = top_k(idx, idx.vector(i), kMaxK, pool[i]->bug_id);
    double prev = 0;
    for (std::size_t k = 1; k <= kMaxK; ++k) {
      const double rec = recall_at_k(rx, rel, k);
      if (rec < prev) return {false, "recall decreased with k"};
      prev = rec;
    }
    bool all_indexed = true;
    for (const auto& m : rel) all_indexed = all_indexed && indexed.count(m) > 0;
    if (all_indexed) {
      auto everything = top_k(idx, idx.vector(i), idx.size(), pool[i]->bug_id);
      if (recall_at_k(everything, rel, idx.size()) != 1.0) return {false, "recall@|db| below 1"};
      ++full_recall_checked;
    }
  }
  return {full_recall_checked > 0,
          std::to_string(kIndexInstances) + " indexes match a full sort; self-match, rebuild and monotonicity hold; "
                                            "recall@|db| = 1 on " + std::to_string(full_recall_checked) + " queries"};
}

struct SeedSetup {
  Corpus corpus;
  ClusterSet cs;
  SplitManifest manifest;
  std::shared_ptr<TfidfEmbedder> tfidf;
};

SeedSetup seed_setup(std::uint64_t seed) {
  SynthConfig c;
  c.clusters = 200;
  c.independents = 300;
  c.seed = seed;
  SeedSetup s;
  s.corpus = synth_corpus(c);
  s.cs = build_clusters(s.corpus);
  s.manifest = build_manifest(s.cs, {}, seed, {}, 0.1564);
  std::vector<std::string> train;
  for (const auto& id : split_bugs(s.manifest, s.cs, Split::kTrain)) train.push_back(s.corpus.at(id).clean_text);
  s.tfidf = std::make_shared<TfidfEmbedder>(TfidfEmbedder::fitted(train));
  return s;
}

Verdict sandwich() {
  std::size_t violations = 0, checks = 0, oracle_fp = 0;
  int precision_seeds = 0;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    auto s = seed_setup(std::uint64_t(seed));
    ClassifierTrainConfig cc;
    cc.seed = std::uint64_t(seed);
    LogisticPairClassifier cls(s.tfidf, train_classifier(s.manifest.pairs[0], s.manifest.pairs[1], s.corpus, *s.tfidf, cc));
    ScenarioConfig sc;
    sc.seed = std::uint64_t(seed);
    sc.k = kMaxK;
    sc.method = Method::kRetrievalOnly;
    auto ret = run_one_vs_all(sc, s.manifest, s.cs, s.corpus, s.tfidf.get(), nullptr);
    sc.method = Method::kClassificationOnly;
    auto all = run_one_vs_all(sc, s.manifest, s.cs, s.corpus, nullptr, &cls);
    sc.method = Method::kCascade;
    auto cas = run_one_vs_all(sc, s.manifest, s.cs, s.corpus, s.tfidf.get(), &cls);
    bool precision_holds = true;
    for (std::size_t k = 1; k <= kMaxK; ++k, ++checks) {
      violations += testing::sandwich_violations(ret, all, cas, k);
      if (aggregate_at(cas.outcomes, k).precision + kMetricTol < aggregate_at(ret.outcomes, k).precision_at_k)
        precision_holds = false;
    }
    precision_seeds += precision_holds;
    OracleClassifier oracle(s.cs);
    auto oc = run_one_vs_all(sc, s.manifest, s.cs, s.corpus, s.tfidf.get(), &oracle);
    for (std::size_t k = 1; k <= kMaxK; ++k) oracle_fp += aggregate_at(oc.outcomes, k).confusion.fp;
  }
  return {violations == 0 && oracle_fp == 0 && precision_seeds >= kSandwichSeedsNeeded,
          std::to_string(kSeeds) + " seeds x k=1..100: " + std::to_string(violations) + " recall violations in " +
              std::to_string(checks) + " checks, cascade precision >= retrieval precision@k on " +
              std::to_string(precision_seeds) + "/" + std::to_string(kSeeds) + " seeds, oracle false positives " +
              std::to_string(oracle_fp)};
}

Verdict training() {
  Rng rng(8008);
  double worst = 0, worst_ce = 0;
  for (std::size_t i = 0; i < kGradDraws; ++i) {
    worst = std::max(worst, testing::projection_gradient_error(rng, kGradMaxDim));
    worst_ce = std::max(worst_ce, testing::ce_gradient_error(rng));
  }
  if (worst >= kGradTol || worst_ce >= kGradTol)
    return {false, "gradient relative error triplet " + std::to_string(worst) + ", ce " + std::to_string(worst_ce)};

  int improved = 0;
  std::string per_seed;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    auto s = seed_setup(std::uint64_t(seed));
    auto vecs = triplet_vectors(s.manifest.triplets, s.corpus, *s.tfidf);
    ProjectionTrainConfig pc;
    pc.seed = std::uint64_t(seed);
    pc.epochs = 0;
    ProjectedEmbedder untrained(s.tfidf, train_projection(vecs, pc));
    pc.epochs = kProjectionEpochs;
    pc.learning_rate = kProjectionLr;
    ProjectedEmbedder trained(s.tfidf, train_projection(vecs, pc));
    auto pool = scenario_pool(s.manifest, s.cs, s.corpus, true);
    ScenarioConfig sc;
    sc.mode = ScenarioMode::kAllVsAll;
    sc.method = Method::kRetrievalOnly;
    sc.k = 10;
    const double r0 = run_scenario(sc, pool, pool, s.cs, &untrained, nullptr).rows[0].recall;
    const double r1 = run_scenario(sc, pool, pool, s.cs, &trained, nullptr).rows[0].recall;
    improved += r1 > r0;
    char buf[64];
    std::snprintf(buf, sizeof buf, " %.3f->%.3f", r0, r1);
    per_seed += buf;
  }

  // Logistic regression on linearly separable features.
  std::vector<FeatureRow> xs;
  std::vector<int> ys;
  for (int i = 0; i < 400; ++i) {
    FeatureRow x;
    const int y = i % 2;
    x[0] = y ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.4);
    for (std::size_t f = 1; f < kNumPairFeatures; ++f) x[f] = rng.uniform(0, 1);
    xs.push_back(x);
    ys.push_back(y);
  }
  auto lm = train_logistic(xs, ys, ClassifierTrainConfig{});
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) correct += (lm.probability(xs[i]) >= 0.5) == (ys[i] == 1);
  const double acc = double(correct) / double(xs.size());

  char buf[384];
  std::snprintf(buf, sizeof buf,
                "gradient relative error triplet %.2e, ce %.2e (<%.0e); projection recall@10 improved on %d/%d "
                "seeds:%s; separable accuracy %.3f",
                worst, worst_ce, kGradTol, improved, kSeeds, per_seed.c_str(), acc);
  return {improved >= kProjectionSeedsNeeded && acc == 1.0, buf};
}

Verdict cli_determinism() {
  testing::TempDir a("accept_a"), b("accept_b");
  auto ra = testing::run_pipeline(a.path, 12, 80, 60);
  if (ra.code != 0) return {false, "pipeline failed: " + ra.err};
  auto rb = testing::run_pipeline(b.path, 12, 80, 60);
  if (rb.code != 0) return {false, "pipeline failed: " + rb.err};
  std::size_t compared = 0;
  for (const char* name : {"corpus.jsonl", "clusters.json", "manifest.json", "projection.json", "classifier.json",
                           "retrieval.csv", "classification.csv", "scenario.json"}) {
    if (testing::read_file(a.path / name) != testing::read_file(b.path / name))
      return {false, std::string(name) + " differs between runs"};
    ++compared;
  }
  return {true, std::to_string(compared) + " artifacts byte-identical across two runs"};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int n, const char* what, const std::function<Verdict()>& fn) {
    Verdict v;
    const auto t0 = Clock::now();
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d: %s -- %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", n, what, v.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
    failed += !v.pass;
  };

  report(1, "leakage-free splits at scale", leakage_free_splits);
  report(2, "exact pair counts and duplicate share", pair_counts);
  auto big = big_corpus(256);
  report(3, "inference ledger equals the cost model", [&] { return ledger_grid(big); });
  auto big_full = big_corpus(TfidfEmbedder::kDefaultDim);
  report(4, "cascade is at least twice as fast as exhaustive classification", [&] { return cascade_speed(big_full); });
  report(5, "metrics agree with an independent oracle", metric_oracle);
  report(6, "exact top-k retrieval", [&] { return retrieval_properties(big_full); });
  report(7, "cascade sits between retrieval and classification", sandwich);
  report(8, "training gradients and learning", training);
  report(9, "CLI pipeline is byte-reproducible", cli_determinism);
  std::printf("%d of 9 criteria failed\n", failed);
  return failed;
}
