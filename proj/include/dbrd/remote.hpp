#pragma once

// Clients for external embedding and pair-classification services.
//
//   POST /embed     {"texts": ["...", ...]}           -> {"dim": D, "vectors": [[...], ...]}
//   POST /classify  {"pairs": [["a", "b"], ...]}      -> {"probabilities": [p, ...]}
//
// Requests are split into batches of `batch_size`; up to `max_in_flight`
// batches run concurrently and results are reassembled in request order.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <future>
#include <span>
#include <string>
#include <vector>

#include "dbrd/classifier.hpp"
#include "dbrd/common.hpp"
#include "dbrd/embedder.hpp"
#include "httplib.h"
#include "json.hpp"

namespace dbrd {

struct RemoteConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:8080 or http://host:port/prefix
  int timeout_ms = 30000;
  std::size_t batch_size = 64;
  int retries = 0;
  std::size_t max_in_flight = 1;
};

class RemoteError : public Error {
 public:
  enum class Kind { kTimeout, kTransport, kHttpStatus, kMalformed, kCountMismatch, kDimMismatch, kRange };

  RemoteError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

struct Endpoint {
  std::string base;    // scheme://host:port
  std::string prefix;  // path prefix without trailing slash
};

inline Endpoint parse_endpoint(const std::string& url) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw PreconditionError("endpoint must look like http://host:port, got '" + url + "'");
  auto slash = url.find('/', scheme + 3);
  Endpoint e;
  e.base = url.substr(0, slash);
  if (slash != std::string::npos) {
    e.prefix = url.substr(slash);
    while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  }
  return e;
}

inline nlohmann::json post_json(const RemoteConfig& cfg, const std::string& path,
                                const nlohmann::json& body) {
  const auto ep = parse_endpoint(cfg.endpoint);
  const std::string payload = body.dump();
  for (int attempt = 0;; ++attempt) {
    try {
      httplib::Client cli(ep.base);
      const auto sec = cfg.timeout_ms / 1000;
      const auto usec = (cfg.timeout_ms % 1000) * 1000;
      cli.set_connection_timeout(sec, usec);
      cli.set_read_timeout(sec, usec);
      cli.set_write_timeout(sec, usec);
      auto res = cli.Post(ep.prefix + path, payload, "application/json");
      if (!res) {
        const auto err = res.error();
        const bool timeout = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout;
        throw RemoteError(timeout ? RemoteError::Kind::kTimeout : RemoteError::Kind::kTransport,
                          cfg.endpoint + path + ": " + httplib::to_string(err));
      }
      if (res->status != 200)
        throw RemoteError(RemoteError::Kind::kHttpStatus,
                          cfg.endpoint + path + " returned HTTP " + std::to_string(res->status));
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::parse_error&) {
        throw RemoteError(RemoteError::Kind::kMalformed, cfg.endpoint + path + " returned invalid JSON");
      }
    } catch (const RemoteError& e) {
      const bool retryable = e.kind() == RemoteError::Kind::kTimeout ||
                             e.kind() == RemoteError::Kind::kTransport ||
                             e.kind() == RemoteError::Kind::kHttpStatus;
      if (!retryable || attempt >= cfg.retries) throw;
    }
  }
}

// Runs fn(batch_index) for every batch with bounded concurrency, preserving order.
template <typename R, typename Fn>
std::vector<R> run_batches(std::size_t batches, std::size_t max_in_flight, Fn&& fn) {
  std::vector<R> out(batches);
  const std::size_t window = std::max<std::size_t>(1, max_in_flight);
  for (std::size_t start = 0; start < batches; start += window) {
    const std::size_t end = std::min(batches, start + window);
    if (end - start == 1) {
      out[start] = fn(start);
      continue;
    }
    std::vector<std::future<R>> inflight;
    for (std::size_t b = start; b < end; ++b) inflight.push_back(std::async(std::launch::async, fn, b));
    for (std::size_t b = start; b < end; ++b) out[b] = inflight[b - start].get();
  }
  return out;
}

}  // namespace detail

// Vectors from an embedding service. The service declares its dim; every
// batch must agree with the first.
class RemoteEmbedder final : public Embedder {
 public:
  explicit RemoteEmbedder(RemoteConfig cfg, std::size_t expected_dim = 0)
      : cfg_(std::move(cfg)), dim_(expected_dim) {
    if (cfg_.batch_size == 0) throw PreconditionError("remote batch size must be positive");
  }

  std::size_t dim() const override { return dim_.load(); }
  std::string name() const override { return "service"; }

  EmbeddingVector embed(std::string_view clean_text) const override {
    std::vector<std::string> one{std::string(clean_text)};
    return std::move(embed_batch(one).front());
  }

  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const override {
    if (texts.empty()) return {};
    const std::size_t nb = (texts.size() + cfg_.batch_size - 1) / cfg_.batch_size;
    auto parts = detail::run_batches<std::vector<EmbeddingVector>>(nb, cfg_.max_in_flight, [&](std::size_t b) {
      const std::size_t lo = b * cfg_.batch_size;
      const std::size_t hi = std::min(texts.size(), lo + cfg_.batch_size);
      return request(texts.subspan(lo, hi - lo));
    });
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (auto& p : parts)
      for (auto& v : p) out.push_back(std::move(v));
    return out;
  }

 private:
  std::vector<EmbeddingVector> request(std::span<const std::string> texts) const {
    nlohmann::json body;
    body["texts"] = std::vector<std::string>(texts.begin(), texts.end());
    auto res = detail::post_json(cfg_, "/embed", body);
    if (!res.is_object() || !res.contains("dim") || !res.contains("vectors") ||
        !res["dim"].is_number_unsigned() || !res["vectors"].is_array())
      throw RemoteError(RemoteError::Kind::kMalformed, "embed response needs 'dim' and 'vectors'");
    const auto d = res["dim"].get<std::size_t>();
    const auto& vecs = res["vectors"];
    if (vecs.size() != texts.size())
      throw RemoteError(RemoteError::Kind::kCountMismatch,
                        "embed service returned " + std::to_string(vecs.size()) + " vectors, expected " +
                            std::to_string(texts.size()));
    std::size_t expected = 0;
    if (!dim_.compare_exchange_strong(expected, d) && expected != d)
      throw RemoteError(RemoteError::Kind::kDimMismatch,
                        "embed service dim changed from " + std::to_string(expected) + " to " + std::to_string(d));
    std::vector<EmbeddingVector> out;
    out.reserve(vecs.size());
    for (const auto& v : vecs) {
      if (!v.is_array() || v.size() != d)
        throw RemoteError(RemoteError::Kind::kDimMismatch, "embed service vector length differs from declared dim");
      std::vector<double> vals;
      vals.reserve(d);
      for (const auto& x : v) {
        if (!x.is_number()) throw RemoteError(RemoteError::Kind::kMalformed, "non-numeric vector entry");
        vals.push_back(x.get<double>());
      }
      const double n = norm(vals);
      out.push_back({std::move(vals), std::abs(n - 1.0) <= 1e-6});
    }
    return out;
  }

  RemoteConfig cfg_;
  mutable std::atomic<std::size_t> dim_;
};

// Probabilities from a pair-classification service; must lie in [0, 1].
class RemoteClassifier final : public PairClassifier {
 public:
  RemoteClassifier(RemoteConfig cfg, double threshold = 0.5) : cfg_(std::move(cfg)), threshold_(threshold) {
    if (cfg_.batch_size == 0) throw PreconditionError("remote batch size must be positive");
  }

  std::string name() const override { return "service"; }
  double threshold() const override { return threshold_; }

  double probability(const BugReport& a, const BugReport& b) const override {
    ReportPair p{&a, &b};
    return probabilities(std::span<const ReportPair>(&p, 1)).front();
  }

  std::vector<double> probabilities(std::span<const ReportPair> pairs) const override {
    if (pairs.empty()) return {};
    const std::size_t nb = (pairs.size() + cfg_.batch_size - 1) / cfg_.batch_size;
    auto parts = detail::run_batches<std::vector<double>>(nb, cfg_.max_in_flight, [&](std::size_t b) {
      const std::size_t lo = b * cfg_.batch_size;
      const std::size_t hi = std::min(pairs.size(), lo + cfg_.batch_size);
      return request(pairs.subspan(lo, hi - lo));
    });
    std::vector<double> out;
    out.reserve(pairs.size());
    for (auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
  }

 private:
  std::vector<double> request(std::span<const ReportPair> pairs) const {
    nlohmann::json body;
    body["pairs"] = nlohmann::json::array();
    for (const auto& [a, b] : pairs) body["pairs"].push_back({a->clean_text, b->clean_text});
    auto res = detail::post_json(cfg_, "/classify", body);
    if (!res.is_object() || !res.contains("probabilities") || !res["probabilities"].is_array())
      throw RemoteError(RemoteError::Kind::kMalformed, "classify response needs 'probabilities'");
    const auto& ps = res["probabilities"];
    if (ps.size() != pairs.size())
      throw RemoteError(RemoteError::Kind::kCountMismatch,
                        "classify service returned " + std::to_string(ps.size()) + " probabilities, expected " +
                            std::to_string(pairs.size()));
    std::vector<double> out;
    out.reserve(ps.size());
    for (const auto& p : ps) {
      if (!p.is_number()) throw RemoteError(RemoteError::Kind::kMalformed, "non-numeric probability");
      const double v = p.get<double>();
      if (!std::isfinite(v) || v < 0.0 || v > 1.0)
        throw RemoteError(RemoteError::Kind::kRange, "probability " + p.dump() + " outside [0, 1]");
      out.push_back(v);
    }
    return out;
  }

  RemoteConfig cfg_;
  double threshold_;
};

}  // namespace dbrd
