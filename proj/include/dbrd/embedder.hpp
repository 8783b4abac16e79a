#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dbrd/common.hpp"
#include "dbrd/corpus.hpp"
#include "dbrd/splitter.hpp"
#include "dbrd/text.hpp"
#include "json.hpp"

namespace dbrd {

struct EmbeddingVector {
  std::vector<double> values;
  bool normalized = false;

  std::size_t dim() const { return values.size(); }
  bool is_zero() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
  }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

class ZeroVectorError : public Error {
 public:
  ZeroVectorError() : Error("cosine similarity is undefined for a zero vector") {}
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// Scales to unit length; a zero vector stays zero and is flagged not normalized.
inline EmbeddingVector normalized(std::vector<double> v) {
  double n = norm(v);
  if (n == 0.0) return {std::move(v), false};
  for (auto& x : v) x /= n;
  return {std::move(v), true};
}

inline double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
  if (u.dim() != v.dim())
    throw PreconditionError("cosine of vectors with different dims " + std::to_string(u.dim()) +
                            " and " + std::to_string(v.dim()));
  double nu = norm(u.values), nv = norm(v.values);
  if (nu == 0.0 || nv == 0.0) throw ZeroVectorError();
  double c = dot(u.values, v.values) / (nu * nv);
  return std::clamp(c, -1.0, 1.0);
}

// Anything that turns cleaned report text into a vector.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dim() const = 0;
  virtual std::string name() const = 0;
  virtual EmbeddingVector embed(std::string_view clean_text) const = 0;

  virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed(t));
    return out;
  }
};

// Hashed bag-of-terms with smoothed IDF, L2-normalized. Term t lands in
// bucket fnv1a64(t) % dim; IDF = ln((1 + N) / (1 + df)) + 1 over the fitted
// documents, so unseen terms get the maximum weight.
class TfidfEmbedder final : public Embedder {
 public:
  static constexpr std::size_t kDefaultDim = 1024;

  explicit TfidfEmbedder(std::size_t dim = kDefaultDim) : dim_(dim) {
    if (dim == 0) throw PreconditionError("embedding dim must be positive");
  }

  // Fit document frequencies. Pass train-split texts only.
  void fit(std::span<const std::string> documents) {
    df_.clear();
    docs_ = documents.size();
    for (const auto& d : documents) {
      auto ts = terms(d);
      std::sort(ts.begin(), ts.end());
      ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
      for (auto& t : ts) ++df_[t];
    }
  }

  static TfidfEmbedder fitted(std::span<const std::string> documents,
                              std::size_t dim = kDefaultDim) {
    TfidfEmbedder e(dim);
    e.fit(documents);
    return e;
  }

  double idf(const std::string& term) const {
    auto it = df_.find(term);
    double df = it == df_.end() ? 0.0 : double(it->second);
    return std::log((1.0 + double(docs_)) / (1.0 + df)) + 1.0;
  }

  static std::size_t bucket(std::string_view term, std::size_t dim) {
    return static_cast<std::size_t>(fnv1a64(term) % dim);
  }

  std::size_t dim() const override { return dim_; }
  std::string name() const override { return "tfidf"; }
  std::size_t fitted_documents() const { return docs_; }

  EmbeddingVector embed(std::string_view clean_text) const override {
    std::map<std::string, int> tf;
    for (auto& t : terms(clean_text)) ++tf[t];
    std::vector<double> v(dim_, 0.0);
    for (const auto& [t, n] : tf) v[bucket(t, dim_)] += double(n) * idf(t);
    return normalized(std::move(v));
  }

 private:
  std::size_t dim_;
  std::size_t docs_ = 0;
  std::unordered_map<std::string, std::size_t> df_;
};

// max(||a - p|| - ||a - n|| + margin, 0) with Euclidean distance.
inline double triplet_loss(const EmbeddingVector& a, const EmbeddingVector& p,
                           const EmbeddingVector& n, double margin) {
  if (a.dim() != p.dim() || a.dim() != n.dim())
    throw PreconditionError("triplet members must share a dim");
  return std::max(euclidean(a.values, p.values) - euclidean(a.values, n.values) + margin, 0.0);
}

struct ProjectionTrainConfig {
  std::size_t dim_out = 256;
  double margin = 0.2;
  double learning_rate = 1e-2;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

// Linear map dim_in -> dim_out followed by L2 normalization. Weights are
// row-major: weights[i * dim_out + j] maps input i to output j.
struct ProjectionModel {
  std::size_t dim_in = 0;
  std::size_t dim_out = 0;
  std::vector<double> weights;
  ProjectionTrainConfig config;
  std::vector<double> loss_curve;  // [0] before training, [e] after epoch e

  double weight(std::size_t i, std::size_t j) const { return weights[i * dim_out + j]; }

  std::vector<double> project_raw(std::span<const double> x) const {
    std::vector<double> z(dim_out, 0.0);
    for (std::size_t i = 0; i < dim_in; ++i) {
      if (x[i] == 0.0) continue;
      const double* row = &weights[i * dim_out];
      for (std::size_t j = 0; j < dim_out; ++j) z[j] += x[i] * row[j];
    }
    return z;
  }

  EmbeddingVector project(const EmbeddingVector& x) const {
    if (x.dim() != dim_in)
      throw PreconditionError("projection expects dim " + std::to_string(dim_in) + ", got " +
                              std::to_string(x.dim()));
    return normalized(project_raw(x.values));
  }

  std::uint64_t checksum() const {
    std::uint64_t h = fnv1a64(std::to_string(dim_in) + "x" + std::to_string(dim_out));
    for (double w : weights) {
      std::uint64_t bits;
      std::memcpy(&bits, &w, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xff;
        h *= kFnvPrime;
      }
    }
    return h;
  }
};

inline ProjectionModel init_projection(std::size_t dim_in, const ProjectionTrainConfig& cfg) {
  if (dim_in == 0 || cfg.dim_out == 0) throw PreconditionError("projection dims must be positive");
  if (!(cfg.margin >= 0)) throw PreconditionError("triplet margin must be nonnegative");
  ProjectionModel m;
  m.dim_in = dim_in;
  m.dim_out = cfg.dim_out;
  m.config = cfg;
  const double a = std::sqrt(6.0 / double(dim_in + cfg.dim_out));
  auto rng = Rng::substream(cfg.seed, "projection.init");
  m.weights.resize(dim_in * cfg.dim_out);
  for (auto& w : m.weights) w = rng.uniform(-a, a);
  return m;
}

namespace detail {

struct SparseVec {
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  static SparseVec from_dense(std::span<const double> x) {
    SparseVec s;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] != 0.0) {
        s.index.push_back(static_cast<std::uint32_t>(i));
        s.value.push_back(x[i]);
      }
    return s;
  }
};

inline std::vector<double> project_sparse(const ProjectionModel& m, const SparseVec& x) {
  std::vector<double> z(m.dim_out, 0.0);
  for (std::size_t k = 0; k < x.index.size(); ++k) {
    const double* row = &m.weights[std::size_t(x.index[k]) * m.dim_out];
    const double xv = x.value[k];
    for (std::size_t j = 0; j < m.dim_out; ++j) z[j] += xv * row[j];
  }
  return z;
}

}  // namespace detail

// Loss of one triplet of base vectors under the projection, and the gradient
// with respect to each projected (pre-normalization) vector z = W^T x.
//   u = z / |z|,  du/dz = (I - u u^T) / |z|
//   dL/du_a = (u_a - u_p)/|u_a - u_p| - (u_a - u_n)/|u_a - u_n|
//   dL/du_p = -(u_a - u_p)/|u_a - u_p|,  dL/du_n = (u_a - u_n)/|u_a - u_n|
// A zero distance contributes a zero subgradient.
struct TripletGradient {
  double loss = 0.0;
  bool active = false;
  std::array<std::vector<double>, 3> dz;  // anchor, positive, negative
};

inline TripletGradient triplet_gradient(std::span<const double> za, std::span<const double> zp,
                                        std::span<const double> zn, double margin) {
  TripletGradient g;
  const std::size_t d = za.size();
  std::array<std::span<const double>, 3> z = {za, zp, zn};
  std::array<std::vector<double>, 3> u;
  std::array<double, 3> zn_len{};
  for (int k = 0; k < 3; ++k) {
    zn_len[k] = norm(z[k]);
    if (!std::isfinite(zn_len[k])) throw NumericError("projected vector norm is not finite");
    if (zn_len[k] == 0.0) return g;  // undefined direction; contributes nothing
    u[k].resize(d);
    for (std::size_t j = 0; j < d; ++j) u[k][j] = z[k][j] / zn_len[k];
  }
  const double dap = euclidean(u[0], u[1]);
  const double dan = euclidean(u[0], u[2]);
  const double raw = dap - dan + margin;
  g.loss = std::max(raw, 0.0);
  if (raw <= 0.0) return g;
  g.active = true;
  std::array<std::vector<double>, 3> du;
  for (auto& v : du) v.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    const double ep = dap > 0 ? (u[0][j] - u[1][j]) / dap : 0.0;
    const double en = dan > 0 ? (u[0][j] - u[2][j]) / dan : 0.0;
    du[0][j] = ep - en;
    du[1][j] = -ep;
    du[2][j] = en;
  }
  for (int k = 0; k < 3; ++k) {
    const double ug = dot(u[k], du[k]);
    g.dz[k].resize(d);
    for (std::size_t j = 0; j < d; ++j) g.dz[k][j] = (du[k][j] - u[k][j] * ug) / zn_len[k];
  }
  return g;
}

// Base vectors for each triplet member, as produced by the base embedder.
struct TripletVectors {
  EmbeddingVector anchor, positive, negative;
};

// Mini-batch gradient descent on mean triplet loss. The triplet order is
// reshuffled each epoch from the config seed.
inline ProjectionModel train_projection(std::span<const TripletVectors> triplets,
                                        const ProjectionTrainConfig& cfg) {
  if (triplets.empty()) throw PreconditionError("projection training needs at least one triplet");
  if (cfg.batch_size == 0) throw PreconditionError("batch size must be positive");
  if (!std::isfinite(cfg.learning_rate) || !std::isfinite(cfg.margin))
    throw PreconditionError("projection config must be finite");
  const std::size_t dim_in = triplets.front().anchor.dim();
  ProjectionModel m = init_projection(dim_in, cfg);

  std::vector<std::array<detail::SparseVec, 3>> xs;
  xs.reserve(triplets.size());
  for (const auto& t : triplets) {
    if (t.anchor.dim() != dim_in || t.positive.dim() != dim_in || t.negative.dim() != dim_in)
      throw PreconditionError("triplet vectors must share one dim");
    xs.push_back({detail::SparseVec::from_dense(t.anchor.values),
                  detail::SparseVec::from_dense(t.positive.values),
                  detail::SparseVec::from_dense(t.negative.values)});
  }

  auto mean_loss = [&] {
    double total = 0;
    for (const auto& x : xs) {
      auto za = detail::project_sparse(m, x[0]);
      auto zp = detail::project_sparse(m, x[1]);
      auto zn = detail::project_sparse(m, x[2]);
      total += triplet_gradient(za, zp, zn, cfg.margin).loss;
    }
    return total / double(xs.size());
  };

  m.loss_curve.push_back(mean_loss());
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = Rng::substream(cfg.seed, "projection.shuffle");
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double step = cfg.learning_rate / double(end - start);
      std::vector<std::pair<const detail::SparseVec*, std::vector<double>>> updates;
      for (std::size_t b = start; b < end; ++b) {
        const auto& x = xs[order[b]];
        auto za = detail::project_sparse(m, x[0]);
        auto zp = detail::project_sparse(m, x[1]);
        auto zn = detail::project_sparse(m, x[2]);
        auto g = triplet_gradient(za, zp, zn, cfg.margin);
        if (!std::isfinite(g.loss))
          throw NumericError("non-finite triplet loss at epoch " + std::to_string(epoch) +
                             ", batch starting at " + std::to_string(start));
        if (!g.active) continue;
        for (int k = 0; k < 3; ++k) updates.emplace_back(&x[k], std::move(g.dz[k]));
      }
      for (const auto& [x, dz] : updates) {
        for (std::size_t k = 0; k < x->index.size(); ++k) {
          double* row = &m.weights[std::size_t(x->index[k]) * m.dim_out];
          const double scale = step * x->value[k];
          for (std::size_t j = 0; j < m.dim_out; ++j) row[j] -= scale * dz[j];
        }
      }
    }
    for (double w : m.weights)
      if (!std::isfinite(w)) throw NumericError("non-finite projection weight after epoch " + std::to_string(epoch));
    const double loss = mean_loss();
    if (!std::isfinite(loss))
      throw NumericError("non-finite mean triplet loss after epoch " + std::to_string(epoch));
    m.loss_curve.push_back(loss);
  }
  return m;
}

// Embeds every distinct bug of the triplets once with the base embedder.
inline std::vector<TripletVectors> triplet_vectors(std::span<const TripletExample> triplets,
                                                   const Corpus& corpus, const Embedder& base) {
  std::unordered_map<std::string, EmbeddingVector> cache;
  auto get = [&](const std::string& id) -> const EmbeddingVector& {
    auto it = cache.find(id);
    if (it == cache.end()) it = cache.emplace(id, base.embed(corpus.at(id).clean_text)).first;
    return it->second;
  };
  std::vector<TripletVectors> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) out.push_back({get(t.anchor), get(t.positive), get(t.negative)});
  return out;
}

class ProjectedEmbedder final : public Embedder {
 public:
  ProjectedEmbedder(std::shared_ptr<const Embedder> base, ProjectionModel model)
      : base_(std::move(base)), model_(std::move(model)) {
    if (base_->dim() != model_.dim_in)
      throw PreconditionError("projection input dim does not match base embedder");
  }
  std::size_t dim() const override { return model_.dim_out; }
  std::string name() const override { return "projection"; }
  EmbeddingVector embed(std::string_view clean_text) const override {
    return model_.project(base_->embed(clean_text));
  }
  const ProjectionModel& model() const { return model_; }

 private:
  std::shared_ptr<const Embedder> base_;
  ProjectionModel model_;
};

inline nlohmann::ordered_json to_json(const ProjectionModel& m) {
  nlohmann::ordered_json j;
  j["kind"] = "projection";
  j["dim_in"] = m.dim_in;
  j["dim_out"] = m.dim_out;
  j["seed"] = m.config.seed;
  j["margin"] = m.config.margin;
  j["learning_rate"] = m.config.learning_rate;
  j["epochs"] = m.config.epochs;
  j["batch_size"] = m.config.batch_size;
  j["loss_curve"] = m.loss_curve;
  j["checksum"] = hex64(m.checksum());
  j["weights"] = m.weights;
  return j;
}

inline ProjectionModel projection_from_json(const nlohmann::json& j) {
  ProjectionModel m;
  try {
    m.dim_in = j.at("dim_in").get<std::size_t>();
    m.dim_out = j.at("dim_out").get<std::size_t>();
    m.config.dim_out = m.dim_out;
    m.config.seed = j.at("seed").get<std::uint64_t>();
    m.config.margin = j.at("margin").get<double>();
    m.config.learning_rate = j.at("learning_rate").get<double>();
    m.config.epochs = j.at("epochs").get<std::size_t>();
    m.config.batch_size = j.at("batch_size").get<std::size_t>();
    m.loss_curve = j.at("loss_curve").get<std::vector<double>>();
    m.weights = j.at("weights").get<std::vector<double>>();
    const auto expected = j.at("checksum").get<std::string>();
    if (m.weights.size() != m.dim_in * m.dim_out)
      throw InputError("projection weight count does not match dims");
    if (hex64(m.checksum()) != expected) throw InputError("projection checksum mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed projection file: ") + e.what());
  }
  for (double w : m.weights)
    if (!std::isfinite(w)) throw InputError("projection has non-finite weights");
  return m;
}

}  // namespace dbrd
