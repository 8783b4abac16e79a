#pragma once

// Pair classification: a logistic model over symmetric pair features trained
// with binary cross-entropy, a cosine-threshold rule, and a cluster-lookup
// oracle used only to verify the pipeline.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dbrd/common.hpp"
#include "dbrd/corpus.hpp"
#include "dbrd/cost_ledger.hpp"
#include "dbrd/dup_graph.hpp"
#include "dbrd/embedder.hpp"
#include "dbrd/metrics.hpp"
#include "dbrd/splitter.hpp"
#include "json.hpp"

namespace dbrd {

inline constexpr std::size_t kNumPairFeatures = 5;

struct PairFeatures {
  double cosine_all = 0;
  double cosine_title = 0;
  double cosine_description = 0;
  double euclidean = 0;
  double token_jaccard = 0;

  std::array<double, kNumPairFeatures> as_array() const {
    return {cosine_all, cosine_title, cosine_description, euclidean, token_jaccard};
  }
  friend bool operator==(const PairFeatures&, const PairFeatures&) = default;
};

namespace detail {

// Cosine with the zero-vector case mapped to 0 (an empty field says nothing).
inline double cosine_or_zero(const EmbeddingVector& u, const EmbeddingVector& v) {
  double nu = norm(u.values), nv = norm(v.values);
  if (nu == 0 || nv == 0) return 0.0;
  return std::clamp(dot(u.values, v.values) / (nu * nv), -1.0, 1.0);
}

inline std::set<std::string> term_set(std::string_view text) {
  auto ts = terms(text);
  return {ts.begin(), ts.end()};
}

}  // namespace detail

// Symmetric in (a, b) bit for bit: every feature is built from commutative
// per-coordinate operations summed in index order.
inline PairFeatures pair_features(const Embedder& embedder, const BugReport& a, const BugReport& b) {
  if (a.clean_text.empty() && b.clean_text.empty())
    throw PreconditionError("pair features of two empty reports ('" + a.bug_id + "', '" + b.bug_id +
                            "')");
  PairFeatures f;
  auto ea = embedder.embed(a.clean_text);
  auto eb = embedder.embed(b.clean_text);
  f.cosine_all = detail::cosine_or_zero(ea, eb);
  f.euclidean = euclidean(ea.values, eb.values);
  f.cosine_title =
      detail::cosine_or_zero(embedder.embed(a.clean_title), embedder.embed(b.clean_title));
  f.cosine_description = detail::cosine_or_zero(embedder.embed(a.clean_description),
                                                embedder.embed(b.clean_description));
  auto ta = detail::term_set(a.clean_text);
  auto tb = detail::term_set(b.clean_text);
  std::size_t inter = 0;
  for (const auto& t : ta) inter += tb.count(t);
  const std::size_t uni = ta.size() + tb.size() - inter;
  f.token_jaccard = uni == 0 ? 0.0 : double(inter) / double(uni);
  return f;
}

inline constexpr double kProbClamp = 1e-12;

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// -(y ln p + (1 - y) ln(1 - p)) with p clamped to [1e-12, 1 - 1e-12].
inline double ce_loss(int y, double p) {
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
}

struct ClassifierTrainConfig {
  double learning_rate = 0.5;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct LogisticPairModel {
  std::array<double, kNumPairFeatures> weights{};
  double bias = 0.0;
  double threshold = 0.5;
  ClassifierTrainConfig config;
  std::vector<double> loss_curve;  // [0] before training, [e] after epoch e

  double logit(const std::array<double, kNumPairFeatures>& x) const {
    double z = bias;
    for (std::size_t i = 0; i < kNumPairFeatures; ++i) z += weights[i] * x[i];
    return z;
  }
  double probability(const std::array<double, kNumPairFeatures>& x) const { return sigmoid(logit(x)); }
};

using FeatureRow = std::array<double, kNumPairFeatures>;

// Mean CE over a batch and its gradient: d/dw = mean((p - y) x), d/db = mean(p - y).
struct CeGradient {
  double loss = 0;
  FeatureRow dw{};
  double db = 0;
};

inline CeGradient ce_gradient(const LogisticPairModel& m, std::span<const FeatureRow> xs,
                              std::span<const int> ys) {
  CeGradient g;
  if (xs.empty()) return g;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double p = m.probability(xs[i]);
    g.loss += ce_loss(ys[i], p);
    const double r = p - ys[i];
    for (std::size_t f = 0; f < kNumPairFeatures; ++f) g.dw[f] += r * xs[i][f];
    g.db += r;
  }
  const double inv = 1.0 / double(xs.size());
  g.loss *= inv;
  for (auto& w : g.dw) w *= inv;
  g.db *= inv;
  return g;
}

inline LogisticPairModel init_logistic(const ClassifierTrainConfig& cfg) {
  LogisticPairModel m;
  m.config = cfg;
  auto rng = Rng::substream(cfg.seed, "classifier.init");
  for (auto& w : m.weights) w = rng.uniform(-0.01, 0.01);
  m.bias = 0.0;
  return m;
}

// Mini-batch gradient descent on mean CE; threshold stays at 0.5 until tuned.
inline LogisticPairModel train_logistic(std::span<const FeatureRow> xs, std::span<const int> ys,
                                        const ClassifierTrainConfig& cfg) {
  if (xs.size() != ys.size()) throw PreconditionError("feature and label counts differ");
  if (xs.empty()) throw PreconditionError("classifier training needs at least one pair");
  if (cfg.batch_size == 0) throw PreconditionError("batch size must be positive");
  auto m = init_logistic(cfg);
  auto full_loss = [&] { return ce_gradient(m, xs, ys).loss; };
  m.loss_curve.push_back(full_loss());
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = Rng::substream(cfg.seed, "classifier.shuffle");
  std::vector<FeatureRow> bx;
  std::vector<int> by;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      bx.clear();
      by.clear();
      for (std::size_t i = start; i < end; ++i) {
        bx.push_back(xs[order[i]]);
        by.push_back(ys[order[i]]);
      }
      auto g = ce_gradient(m, bx, by);
      if (!std::isfinite(g.loss))
        throw NumericError("non-finite CE loss at epoch " + std::to_string(epoch));
      for (std::size_t f = 0; f < kNumPairFeatures; ++f) m.weights[f] -= cfg.learning_rate * g.dw[f];
      m.bias -= cfg.learning_rate * g.db;
    }
    const double loss = full_loss();
    if (!std::isfinite(loss)) throw NumericError("non-finite CE loss after epoch " + std::to_string(epoch));
    m.loss_curve.push_back(loss);
  }
  return m;
}

// Grid t = 0.01, 0.02, ..., 0.99; the first t with the highest F1 wins.
inline double tune_threshold(std::span<const double> probabilities, std::span<const int> labels) {
  if (probabilities.size() != labels.size()) throw PreconditionError("probability and label counts differ");
  double best_t = 0.5, best_f1 = -1.0;
  for (int step = 1; step <= 99; ++step) {
    const double t = step / 100.0;
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) cm.add(probabilities[i] >= t, labels[i] == 1);
    // Count form keeps equal-F1 thresholds exactly tied.
    const double f1 = cm.tp ? 2.0 * double(cm.tp) / double(2 * cm.tp + cm.fp + cm.fn) : 0.0;
    if (f1 > best_f1) {
      best_f1 = f1;
      best_t = t;
    }
  }
  return best_t;
}

struct Decision {
  double probability = 0.0;
  bool duplicate = false;
};

class PairClassifier {
 public:
  virtual ~PairClassifier() = default;
  virtual std::string name() const = 0;
  virtual double threshold() const = 0;
  virtual double probability(const BugReport& a, const BugReport& b) const = 0;

  using ReportPair = std::pair<const BugReport*, const BugReport*>;
  virtual std::vector<double> probabilities(std::span<const ReportPair> pairs) const {
    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& [a, b] : pairs) out.push_back(probability(*a, *b));
    return out;
  }
};

// Each call is one ledger pair classification. Duplicate iff p >= threshold.
inline Decision classify(const PairClassifier& c, const BugReport& a, const BugReport& b,
                         CostLedger* ledger = nullptr) {
  const double p = c.probability(a, b);
  if (ledger) ledger->add_classifications(1);
  return {p, p >= c.threshold()};
}

inline std::vector<Decision> classify_batch(const PairClassifier& c,
                                            std::span<const PairClassifier::ReportPair> pairs,
                                            CostLedger* ledger = nullptr) {
  auto ps = c.probabilities(pairs);
  if (ps.size() != pairs.size())
    throw PreconditionError("classifier returned " + std::to_string(ps.size()) +
                            " probabilities for " + std::to_string(pairs.size()) + " pairs");
  if (ledger) ledger->add_classifications(pairs.size());
  std::vector<Decision> out;
  out.reserve(ps.size());
  for (double p : ps) out.push_back({p, p >= c.threshold()});
  return out;
}

class LogisticPairClassifier final : public PairClassifier {
 public:
  LogisticPairClassifier(std::shared_ptr<const Embedder> features, LogisticPairModel model)
      : features_(std::move(features)), model_(std::move(model)) {}
  std::string name() const override { return "logistic"; }
  double threshold() const override { return model_.threshold; }
  double probability(const BugReport& a, const BugReport& b) const override {
    return model_.probability(pair_features(*features_, a, b).as_array());
  }
  const LogisticPairModel& model() const { return model_; }

 private:
  std::shared_ptr<const Embedder> features_;
  LogisticPairModel model_;
};

// Cosine of the two report embeddings, clipped to [0, 1], against a fixed threshold.
class SimilarityThresholdClassifier final : public PairClassifier {
 public:
  SimilarityThresholdClassifier(std::shared_ptr<const Embedder> embedder, double threshold)
      : embedder_(std::move(embedder)), threshold_(threshold) {}
  std::string name() const override { return "threshold"; }
  double threshold() const override { return threshold_; }
  double probability(const BugReport& a, const BugReport& b) const override {
    auto c = detail::cosine_or_zero(embedder_->embed(a.clean_text), embedder_->embed(b.clean_text));
    return std::clamp(c, 0.0, 1.0);
  }
  void set_threshold(double t) { threshold_ = t; }

 private:
  std::shared_ptr<const Embedder> embedder_;
  double threshold_;
};

// Ground-truth lookup. Verification only; never a reported method.
class OracleClassifier final : public PairClassifier {
 public:
  explicit OracleClassifier(const ClusterSet& clusters) : clusters_(&clusters) {}
  std::string name() const override { return "oracle"; }
  double threshold() const override { return 0.5; }
  double probability(const BugReport& a, const BugReport& b) const override {
    return clusters_->same_cluster(a.bug_id, b.bug_id) ? 1.0 : 0.0;
  }

 private:
  const ClusterSet* clusters_;
};

// Always answers p; for tests of cascade plumbing.
class ConstantClassifier final : public PairClassifier {
 public:
  explicit ConstantClassifier(double p, double threshold = 0.5) : p_(p), threshold_(threshold) {}
  std::string name() const override { return "constant"; }
  double threshold() const override { return threshold_; }
  double probability(const BugReport&, const BugReport&) const override { return p_; }

 private:
  double p_;
  double threshold_;
};

struct PairDataset {
  std::vector<FeatureRow> features;
  std::vector<int> labels;
};

inline PairDataset pair_dataset(std::span<const LabeledPair> pairs, const Corpus& corpus,
                                const Embedder& embedder) {
  PairDataset d;
  d.features.reserve(pairs.size());
  d.labels.reserve(pairs.size());
  for (const auto& p : pairs) {
    d.features.push_back(pair_features(embedder, corpus.at(p.bug_a), corpus.at(p.bug_b)).as_array());
    d.labels.push_back(p.duplicate ? 1 : 0);
  }
  return d;
}

// Trains on the (balanced) train pairs, then picks the F1-maximizing
// threshold on the dev pairs when any are given.
inline LogisticPairModel train_classifier(std::span<const LabeledPair> train_pairs,
                                          std::span<const LabeledPair> dev_pairs,
                                          const Corpus& corpus, const Embedder& embedder,
                                          const ClassifierTrainConfig& cfg) {
  auto train = pair_dataset(train_pairs, corpus, embedder);
  auto m = train_logistic(train.features, train.labels, cfg);
  if (!dev_pairs.empty()) {
    auto dev = pair_dataset(dev_pairs, corpus, embedder);
    std::vector<double> probs;
    probs.reserve(dev.features.size());
    for (const auto& x : dev.features) probs.push_back(m.probability(x));
    m.threshold = tune_threshold(probs, dev.labels);
  }
  return m;
}

inline nlohmann::ordered_json to_json(const LogisticPairModel& m) {
  nlohmann::ordered_json j;
  j["kind"] = "logistic";
  j["features"] = {"cosine_all", "cosine_title", "cosine_description", "euclidean", "token_jaccard"};
  j["weights"] = m.weights;
  j["bias"] = m.bias;
  j["threshold"] = m.threshold;
  j["learning_rate"] = m.config.learning_rate;
  j["epochs"] = m.config.epochs;
  j["batch_size"] = m.config.batch_size;
  j["seed"] = m.config.seed;
  j["loss_curve"] = m.loss_curve;
  return j;
}

inline LogisticPairModel logistic_from_json(const nlohmann::json& j) {
  LogisticPairModel m;
  try {
    auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != kNumPairFeatures) throw InputError("logistic model needs 5 weights");
    std::copy(w.begin(), w.end(), m.weights.begin());
    m.bias = j.at("bias").get<double>();
    m.threshold = j.at("threshold").get<double>();
    m.config.learning_rate = j.at("learning_rate").get<double>();
    m.config.epochs = j.at("epochs").get<std::size_t>();
    m.config.batch_size = j.at("batch_size").get<std::size_t>();
    m.config.seed = j.at("seed").get<std::uint64_t>();
    m.loss_curve = j.at("loss_curve").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed classifier file: ") + e.what());
  }
  if (!(m.threshold > 0 && m.threshold < 1)) throw InputError("classifier threshold must be in (0, 1)");
  return m;
}

}  // namespace dbrd
