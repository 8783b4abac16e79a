#pragma once

// Exact top-k search by cosine similarity over an in-memory index, and the
// per-query retrieval metrics recall@k and precision@k.

#include <algorithm>
#include <cstring>
#include <limits>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "dbrd/common.hpp"
#include "dbrd/corpus.hpp"
#include "dbrd/cost_ledger.hpp"
#include "dbrd/embedder.hpp"

namespace dbrd {

inline constexpr std::size_t kMaxK = 100;

class VectorIndex {
 public:
  VectorIndex() = default;
  explicit VectorIndex(std::size_t dim) : dim_(dim) {}

  void add(std::string id, EmbeddingVector v) {
    if (dim_ == 0) dim_ = v.dim();
    if (v.dim() != dim_)
      throw PreconditionError("index dim " + std::to_string(dim_) + " but vector for '" + id +
                              "' has dim " + std::to_string(v.dim()));
    if (!seen_.insert(id).second) throw PreconditionError("duplicate id '" + id + "' in index");
    norms_.push_back(norm(v.values));
    ids_.push_back(std::move(id));
    vectors_.push_back(std::move(v));
  }

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const EmbeddingVector& vector(std::size_t i) const { return vectors_[i]; }
  double vector_norm(std::size_t i) const { return norms_[i]; }

  // Stable byte image of the index contents, for equality checks.
  std::string serialize() const {
    std::string out = "dim=" + std::to_string(dim_) + ";n=" + std::to_string(ids_.size()) + "\n";
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      out += ids_[i];
      out.push_back('\0');
      const auto& vals = vectors_[i].values;
      out.append(reinterpret_cast<const char*>(vals.data()), vals.size() * sizeof(double));
      out.push_back(vectors_[i].normalized ? '1' : '0');
    }
    return out;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<EmbeddingVector> vectors_;
  std::vector<double> norms_;
  std::unordered_set<std::string> seen_;
};

// Embeds every report once; each embedding is one ledger embed call.
inline VectorIndex build_index(const Embedder& embedder, std::span<const BugReport* const> reports,
                               CostLedger* ledger = nullptr) {
  VectorIndex index(embedder.dim());
  std::vector<std::string> texts;
  texts.reserve(reports.size());
  for (const auto* r : reports) texts.push_back(r->clean_text);
  auto vecs = embedder.embed_batch(texts);
  if (vecs.size() != reports.size())
    throw PreconditionError("embedder returned " + std::to_string(vecs.size()) + " vectors for " +
                            std::to_string(reports.size()) + " texts");
  if (ledger) ledger->add_embeds(reports.size());
  for (std::size_t i = 0; i < reports.size(); ++i) index.add(reports[i]->bug_id, std::move(vecs[i]));
  return index;
}

struct ScoredId {
  std::string bug_id;
  double score = 0.0;

  friend bool operator==(const ScoredId&, const ScoredId&) = default;
};

struct RankedCandidates {
  std::string query;
  std::vector<ScoredId> ranked;  // score descending, ties by ascending bug_id
  bool truncated_k = false;      // k exceeded the number of candidates

  friend bool operator==(const RankedCandidates&, const RankedCandidates&) = default;
};

// Ranking order: higher score first, then smaller bug_id.
inline bool ranks_before(double sa, const std::string& ia, double sb, const std::string& ib) {
  if (sa != sb) return sa > sb;
  return ia < ib;
}

// Bounded-heap scan. Zero vectors (query or entry) score -infinity. Each
// compared entry is one ledger similarity op.
inline RankedCandidates top_k(const VectorIndex& index, const EmbeddingVector& query,
                              std::size_t k, const std::optional<std::string>& exclude = std::nullopt,
                              CostLedger* ledger = nullptr, std::string query_id = {}) {
  if (k == 0) throw PreconditionError("k must be at least 1");
  if (index.empty()) throw PreconditionError("top_k on an empty index");
  if (query.dim() != index.dim())
    throw PreconditionError("query dim " + std::to_string(query.dim()) + " does not match index dim " +
                            std::to_string(index.dim()));
  const double qn = norm(query.values);
  const auto& ids = index.ids();
  struct Entry {
    double score;
    std::size_t pos;
  };
  auto better = [&](const Entry& a, const Entry& b) {
    return ranks_before(a.score, ids[a.pos], b.score, ids[b.pos]);
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(better)> heap(better);
  std::uint64_t compared = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (exclude && ids[i] == *exclude) continue;
    ++compared;
    double s = -std::numeric_limits<double>::infinity();
    const double en = index.vector_norm(i);
    if (qn > 0 && en > 0) s = std::clamp(dot(query.values, index.vector(i).values) / (qn * en), -1.0, 1.0);
    Entry e{s, i};
    if (heap.size() < k) {
      heap.push(e);
    } else if (better(e, heap.top())) {
      heap.pop();
      heap.push(e);
    }
  }
  if (ledger) ledger->add_similarities(compared);
  RankedCandidates out;
  out.query = std::move(query_id);
  out.truncated_k = k > compared;
  out.ranked.resize(heap.size());
  for (std::size_t i = heap.size(); i > 0; --i) {
    out.ranked[i - 1] = {ids[heap.top().pos], heap.top().score};
    heap.pop();
  }
  return out;
}

inline std::size_t hits_in_top(const RankedCandidates& r, const std::set<std::string>& relevant,
                               std::size_t k) {
  std::size_t hits = 0;
  const std::size_t n = std::min(k, r.ranked.size());
  for (std::size_t i = 0; i < n; ++i) hits += relevant.count(r.ranked[i].bug_id);
  return hits;
}

inline double recall_at_k(const RankedCandidates& r, const std::set<std::string>& relevant,
                          std::size_t k) {
  if (relevant.empty()) throw PreconditionError("recall@k is undefined for an empty relevant set");
  return double(hits_in_top(r, relevant, k)) / double(relevant.size());
}

inline double precision_at_k(const RankedCandidates& r, const std::set<std::string>& relevant,
                             std::size_t k) {
  if (k == 0) throw PreconditionError("k must be at least 1");
  return double(hits_in_top(r, relevant, k)) / double(k);
}

}  // namespace dbrd
