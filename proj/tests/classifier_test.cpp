#include <gtest/gtest.h>

#include <cmath>

#include "dbrd/classifier.hpp"
#include "test_support.hpp"

using namespace dbrd;

namespace {

std::shared_ptr<TfidfEmbedder> embedder_for(const std::vector<BugReport>& rs) {
  std::vector<std::string> texts;
  for (const auto& r : rs) texts.push_back(r.clean_text);
  return std::make_shared<TfidfEmbedder>(TfidfEmbedder::fitted(texts, 512));
}

// Labels split by the first feature; the rest is noise.
void separable(Rng& rng, std::size_t n, std::vector<FeatureRow>& xs, std::vector<int>& ys) {
  for (std::size_t i = 0; i < n; ++i) {
    const int y = int(i % 2);
    FeatureRow x;
    x[0] = y ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.4);
    for (std::size_t f = 1; f < kNumPairFeatures; ++f) x[f] = rng.uniform(0, 1);
    xs.push_back(x);
    ys.push_back(y);
  }
}

}  // namespace

TEST(PairFeatures, IdenticalReports) {
  auto a = BugReport::make("a", "sync view crash", "view is stale after sync", std::nullopt);
  auto b = BugReport::make("b", "sync view crash", "view is stale after sync", std::nullopt);
  auto e = embedder_for({a, b});
  auto f = pair_features(*e, a, b);
  EXPECT_NEAR(f.cosine_all, 1.0, 1e-12);
  EXPECT_NEAR(f.cosine_title, 1.0, 1e-12);
  EXPECT_NEAR(f.cosine_description, 1.0, 1e-12);
  EXPECT_NEAR(f.euclidean, 0.0, 1e-12);
  EXPECT_EQ(f.token_jaccard, 1.0);
}

TEST(PairFeatures, DisjointVocabulary) {
  auto a = BugReport::make("a", "alpha", "beta", std::nullopt);
  auto b = BugReport::make("b", "gamma", "delta", std::nullopt);
  auto e = embedder_for({a, b});
  EXPECT_EQ(pair_features(*e, a, b).token_jaccard, 0.0);
}

TEST(PairFeatures, JaccardByHand) {
  // {crash, save, dialog} vs {crash, open, dialog, menu}: 2 shared of 5.
  auto a = BugReport::make("a", "crash save", "dialog", std::nullopt);
  auto b = BugReport::make("b", "crash open", "dialog menu", std::nullopt);
  auto e = embedder_for({a, b});
  EXPECT_DOUBLE_EQ(pair_features(*e, a, b).token_jaccard, 2.0 / 5.0);
}

TEST(PairFeatures, SymmetricBitForBit) {
  std::vector<BugReport> rs = {
      BugReport::make("a", "sync view crash", "after switching perspectives the view is stale", std::nullopt),
      BugReport::make("b", "editor freeze", "typing in the editor freezes the view", std::nullopt),
      BugReport::make("c", "", "only a description here", std::nullopt)};
  auto e = embedder_for(rs);
  for (const auto& x : rs)
    for (const auto& y : rs) EXPECT_EQ(pair_features(*e, x, y), pair_features(*e, y, x));
}

TEST(PairFeatures, BothEmptyIsError) {
  auto a = BugReport::make("a", "", "", std::nullopt);
  auto b = BugReport::make("b", "the", "!!!", std::nullopt);
  auto e = embedder_for({a, b});
  EXPECT_THROW(pair_features(*e, a, b), PreconditionError);
}

TEST(CeLoss, Examples) {
  EXPECT_NEAR(ce_loss(1, 0.5), std::log(2.0), 1e-15);
  EXPECT_NEAR(ce_loss(0, 0.25), -std::log(0.75), 1e-15);
  EXPECT_NEAR(ce_loss(1, 0.0), -std::log(1e-12), 1e-9);
  EXPECT_TRUE(std::isfinite(ce_loss(0, 1.0)));
}

TEST(Sigmoid, StableAtExtremes) {
  EXPECT_EQ(sigmoid(0), 0.5);
  EXPECT_EQ(sigmoid(-1000), 0.0);
  EXPECT_EQ(sigmoid(1000), 1.0);
  EXPECT_NEAR(sigmoid(2) + sigmoid(-2), 1.0, 1e-15);
}

TEST(CeGradient, MatchesFiniteDifferences) {
  Rng rng(13);
  for (int t = 0; t < 100; ++t) {
    LogisticPairModel m;
    for (auto& w : m.weights) w = rng.uniform(-2, 2);
    m.bias = rng.uniform(-1, 1);
    std::vector<FeatureRow> xs(1 + rng.below(10));
    std::vector<int> ys;
    for (auto& x : xs) {
      for (auto& v : x) v = rng.uniform(-1, 1);
      ys.push_back(int(rng.below(2)));
    }
    auto g = ce_gradient(m, xs, ys);
    const double h = 1e-6;
    for (std::size_t f = 0; f <= kNumPairFeatures; ++f) {
      auto plus = m, minus = m;
      double& wp = f < kNumPairFeatures ? plus.weights[f] : plus.bias;
      double& wm = f < kNumPairFeatures ? minus.weights[f] : minus.bias;
      wp += h;
      wm -= h;
      const double numeric = (ce_gradient(plus, xs, ys).loss - ce_gradient(minus, xs, ys).loss) / (2 * h);
      const double analytic = f < kNumPairFeatures ? g.dw[f] : g.db;
      EXPECT_NEAR(numeric, analytic, 1e-6);
    }
  }
}

TEST(TrainLogistic, ZeroEpochsEqualsInit) {
  Rng rng(1);
  std::vector<FeatureRow> xs;
  std::vector<int> ys;
  separable(rng, 20, xs, ys);
  ClassifierTrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 4;
  auto m = train_logistic(xs, ys, cfg);
  auto init = init_logistic(cfg);
  EXPECT_EQ(m.weights, init.weights);
  EXPECT_EQ(m.bias, init.bias);
  EXPECT_EQ(m.loss_curve.size(), 1u);
}

TEST(TrainLogistic, SeparableDataReachesFullAccuracy) {
  Rng rng(2);
  std::vector<FeatureRow> xs;
  std::vector<int> ys;
  separable(rng, 400, xs, ys);
  auto m = train_logistic(xs, ys, ClassifierTrainConfig{});
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) correct += (m.probability(xs[i]) >= 0.5) == (ys[i] == 1);
  EXPECT_EQ(correct, xs.size());
  EXPECT_LT(m.loss_curve.back(), m.loss_curve.front());
}

TEST(TrainLogistic, Deterministic) {
  Rng rng(3);
  std::vector<FeatureRow> xs;
  std::vector<int> ys;
  separable(rng, 100, xs, ys);
  ClassifierTrainConfig cfg;
  cfg.epochs = 20;
  auto a = train_logistic(xs, ys, cfg), b = train_logistic(xs, ys, cfg);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
}

TEST(TrainLogistic, Preconditions) {
  std::vector<FeatureRow> xs(2);
  std::vector<int> ys(1);
  EXPECT_THROW(train_logistic(xs, ys, {}), PreconditionError);
  EXPECT_THROW(train_logistic({}, {}, {}), PreconditionError);
}

TEST(TuneThreshold, MatchesGridOracle) {
  Rng rng(6);
  for (int t = 0; t < 200; ++t) {
    const auto n = 1 + rng.below(60);
    std::vector<double> p;
    std::vector<int> y;
    for (std::uint64_t i = 0; i < n; ++i) {
      p.push_back(double(rng.below(101)) / 100.0);
      y.push_back(int(rng.below(2)));
    }
    double best_t = 0.5, best = -1;
    for (int s = 1; s <= 99; ++s) {
      const double th = s / 100.0;
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool pred = p[i] >= th;
        tp += pred && y[i];
        fp += pred && !y[i];
        fn += !pred && y[i];
      }
      const double f1 = tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
      if (f1 > best) best = f1, best_t = th;
    }
    EXPECT_EQ(tune_threshold(p, y), best_t);
  }
}

TEST(Classify, BoundaryCountsAsDuplicate) {
  auto a = BugReport::make("a", "x", "y", std::nullopt);
  EXPECT_TRUE(classify(ConstantClassifier(0.5, 0.5), a, a).duplicate);
  EXPECT_FALSE(classify(ConstantClassifier(0.49, 0.5), a, a).duplicate);
}

TEST(Classify, OracleFollowsClusters) {
  auto corpus = dbrd::testing::corpus_with_edges(4, {{1, 0}});
  auto cs = build_clusters(corpus);
  OracleClassifier o(cs);
  EXPECT_TRUE(classify(o, corpus.at("b000"), corpus.at("b001")).duplicate);
  EXPECT_FALSE(classify(o, corpus.at("b000"), corpus.at("b002")).duplicate);
  EXPECT_FALSE(classify(o, corpus.at("b002"), corpus.at("b003")).duplicate);
}

TEST(Classify, LedgerCountsEveryPair) {
  auto corpus = dbrd::testing::corpus_with_edges(6, {});
  std::vector<PairClassifier::ReportPair> pairs;
  for (const auto& a : corpus.reports())
    for (const auto& b : corpus.reports())
      if (a.bug_id < b.bug_id) pairs.emplace_back(&a, &b);
  CostLedger ledger;
  ConstantClassifier c(0.7);
  auto d = classify_batch(c, pairs, &ledger);
  classify(c, corpus.at("b000"), corpus.at("b001"), &ledger);
  EXPECT_EQ(d.size(), 15u);
  EXPECT_EQ(ledger.counts().pair_classifications, 16u);
  EXPECT_EQ(ledger.counts().embed_calls, 0u);
}

TEST(LogisticModel, JsonRoundTrip) {
  Rng rng(7);
  std::vector<FeatureRow> xs;
  std::vector<int> ys;
  separable(rng, 40, xs, ys);
  ClassifierTrainConfig cfg;
  cfg.epochs = 5;
  auto m = train_logistic(xs, ys, cfg);
  m.threshold = 0.37;
  auto back = logistic_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.weights, m.weights);
  EXPECT_EQ(back.bias, m.bias);
  EXPECT_EQ(back.threshold, m.threshold);
  auto j = to_json(m);
  j["threshold"] = 1.5;
  EXPECT_THROW(logistic_from_json(j), InputError);
}
