#pragma once

// The retrieve-then-classify system and its two evaluation scenarios.
//
// One-vs-all: test bugs are split into queries and a database; each query
// is matched against the database. All-vs-all: every test bug is matched
// against all other test bugs.
//
// Methods and their inference counts (n queries, m database bugs):
//   retrieval_only      n + m embeddings, n*m similarities, top-k are predictions
//   classification_only n*m pair classifications, positives are predictions
//   cascade             n + m embeddings, n*m similarities, n*min(k, m)
//                       classifications on the retrieved candidates
// Each text is embedded once per run; that cache is what makes n + m exact.

#include <algorithm>
#include <chrono>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "dbrd/classifier.hpp"
#include "dbrd/common.hpp"
#include "dbrd/corpus.hpp"
#include "dbrd/cost_ledger.hpp"
#include "dbrd/dup_graph.hpp"
#include "dbrd/embedder.hpp"
#include "dbrd/metrics.hpp"
#include "dbrd/retrieval.hpp"
#include "dbrd/splitter.hpp"
#include "json.hpp"

namespace dbrd {

enum class ScenarioMode { kOneVsAll, kAllVsAll };
enum class Method { kRetrievalOnly, kClassificationOnly, kCascade };

inline const char* mode_name(ScenarioMode m) {
  return m == ScenarioMode::kOneVsAll ? "one-vs-all" : "all-vs-all";
}
inline ScenarioMode parse_mode(const std::string& s) {
  if (s == "one-vs-all") return ScenarioMode::kOneVsAll;
  if (s == "all-vs-all") return ScenarioMode::kAllVsAll;
  throw InputError("unknown scenario mode '" + s + "'");
}
inline const char* method_name(Method m) {
  switch (m) {
    case Method::kRetrievalOnly: return "retrieval";
    case Method::kClassificationOnly: return "classification";
    case Method::kCascade: return "cascade";
  }
  return "?";
}
inline Method parse_method(const std::string& s) {
  if (s == "retrieval") return Method::kRetrievalOnly;
  if (s == "classification") return Method::kClassificationOnly;
  if (s == "cascade") return Method::kCascade;
  throw InputError("unknown method '" + s + "'");
}

struct ScenarioConfig {
  ScenarioMode mode = ScenarioMode::kOneVsAll;
  Method method = Method::kCascade;
  std::size_t k = 20;
  std::size_t k_cap = kMaxK;
  double query_fraction = 0.2;
  std::uint64_t seed = 0;
  bool dedup_pairs = false;            // all-vs-all: classify each unordered pair once
  bool independents_in_pool = true;    // keep bugs without duplicates as queries/distractors
  std::vector<std::size_t> k_list;     // metric rows; defaults to {k}

  void validate() const {
    if (k == 0) throw PreconditionError("k must be at least 1");
    if (k > k_cap) throw PreconditionError("k = " + std::to_string(k) + " exceeds the cap of " + std::to_string(k_cap));
    if (mode == ScenarioMode::kOneVsAll && !(query_fraction > 0 && query_fraction < 1))
      throw PreconditionError("query fraction must be in (0, 1)");
  }
};

// Predicted ledger counters for one-vs-all with n queries and m database bugs.
inline LedgerCounts predict_cost(Method method, std::uint64_t n, std::uint64_t m, std::uint64_t k) {
  if (n == 0 || m == 0) throw PreconditionError("predict_cost needs n, m >= 1");
  switch (method) {
    case Method::kRetrievalOnly: return {n + m, 0, n * m};
    case Method::kClassificationOnly: return {0, n * m, 0};
    case Method::kCascade:
      if (k == 0) throw PreconditionError("cascade needs k >= 1");
      return {n + m, n * std::min(k, m), n * m};
  }
  return {};
}

// All-vs-all over m bugs without pair dedup: each bug is embedded once and
// compared with the other m - 1.
inline LedgerCounts predict_cost_all_vs_all(Method method, std::uint64_t m, std::uint64_t k) {
  if (m < 2) throw PreconditionError("all-vs-all needs at least two bugs");
  const std::uint64_t others = m - 1;
  switch (method) {
    case Method::kRetrievalOnly: return {m, 0, m * others};
    case Method::kClassificationOnly: return {0, m * others, 0};
    case Method::kCascade:
      if (k == 0) throw PreconditionError("cascade needs k >= 1");
      return {m, m * std::min(k, others), m * others};
  }
  return {};
}

struct ScenarioResult {
  ScenarioConfig config;
  std::vector<QueryOutcome> outcomes;  // ordered by query id
  std::vector<CurveRow> rows;
  LedgerCounts ledger;
  LedgerCounts predicted;
  bool predicted_exact = true;  // false when dedup makes the prediction an upper bound
  std::map<std::string, double> timings_ms;  // embed, search, classify, total
  std::size_t queries = 0;
  std::size_t database = 0;
  std::size_t queries_without_relevant = 0;
};

namespace detail {

inline std::set<std::string> relevant_in(const BugReport& q, const std::vector<const BugReport*>& db,
                                         const ClusterSet& cs) {
  std::set<std::string> rel;
  const int c = cs.cluster_of(q.bug_id);
  if (c == ClusterSet::kIndependent) return rel;
  for (const auto* d : db)
    if (d->bug_id != q.bug_id && cs.cluster_of(d->bug_id) == c) rel.insert(d->bug_id);
  return rel;
}

// Memo of unordered-pair decisions for dedup mode.
class PairMemo {
 public:
  std::optional<Decision> find(const std::string& a, const std::string& b) const {
    auto it = memo_.find(unordered_pair(a, b));
    if (it == memo_.end()) return std::nullopt;
    return it->second;
  }
  void put(const std::string& a, const std::string& b, Decision d) { memo_[unordered_pair(a, b)] = d; }

 private:
  std::map<BugPair, Decision> memo_;
};

}  // namespace detail

// Core runner over explicit query and database sets. In all-vs-all mode the
// database is the query set itself and each query excludes its own id.
inline ScenarioResult run_scenario(const ScenarioConfig& cfg, std::vector<const BugReport*> queries,
                                   std::vector<const BugReport*> database, const ClusterSet& cs,
                                   const Embedder* embedder, const PairClassifier* classifier) {
  cfg.validate();
  const bool avsa = cfg.mode == ScenarioMode::kAllVsAll;
  if (queries.empty()) throw PreconditionError("scenario has no queries");
  if (database.empty()) throw PreconditionError("scenario has an empty database");
  if (avsa && database.size() < 2) throw PreconditionError("all-vs-all needs at least two bugs");
  const bool needs_embedder = cfg.method != Method::kClassificationOnly;
  const bool needs_classifier = cfg.method != Method::kRetrievalOnly;
  if (needs_embedder && !embedder) throw PreconditionError(std::string(method_name(cfg.method)) + " needs an embedder");
  if (needs_classifier && !classifier)
    throw PreconditionError(std::string(method_name(cfg.method)) + " needs a classifier");
  auto by_id = [](const BugReport* a, const BugReport* b) { return a->bug_id < b->bug_id; };
  std::sort(queries.begin(), queries.end(), by_id);
  std::sort(database.begin(), database.end(), by_id);

  CostLedger ledger;
  ScenarioResult res;
  res.config = cfg;
  res.queries = queries.size();
  res.database = database.size();
  {
    PhaseTimer total(&ledger, "total");
    VectorIndex index;
    std::unordered_map<std::string, EmbeddingVector> query_vecs;
    if (needs_embedder) {
      PhaseTimer t(&ledger, "embed");
      index = build_index(*embedder, database, &ledger);
      if (avsa) {
        for (std::size_t i = 0; i < index.size(); ++i) query_vecs.emplace(index.ids()[i], index.vector(i));
      } else {
        std::vector<std::string> texts;
        texts.reserve(queries.size());
        for (const auto* q : queries) texts.push_back(q->clean_text);
        auto vecs = embedder->embed_batch(texts);
        if (vecs.size() != queries.size()) throw PreconditionError("embedder returned the wrong number of vectors");
        ledger.add_embeds(queries.size());
        for (std::size_t i = 0; i < queries.size(); ++i) query_vecs.emplace(queries[i]->bug_id, std::move(vecs[i]));
      }
    }
    std::unordered_map<std::string, const BugReport*> db_by_id;
    for (const auto* d : database) db_by_id.emplace(d->bug_id, d);
    detail::PairMemo memo;

    auto decide = [&](const BugReport& q, const std::vector<const BugReport*>& cands) {
      std::vector<Decision> out(cands.size());
      std::vector<PairClassifier::ReportPair> todo;
      std::vector<std::size_t> slots;
      for (std::size_t i = 0; i < cands.size(); ++i) {
        if (cfg.dedup_pairs) {
          if (auto d = memo.find(q.bug_id, cands[i]->bug_id)) {
            out[i] = *d;
            continue;
          }
        }
        todo.emplace_back(&q, cands[i]);
        slots.push_back(i);
      }
      PhaseTimer t(&ledger, "classify");
      auto ds = classify_batch(*classifier, todo, &ledger);
      for (std::size_t j = 0; j < ds.size(); ++j) {
        out[slots[j]] = ds[j];
        if (cfg.dedup_pairs) memo.put(q.bug_id, cands[slots[j]]->bug_id, ds[j]);
      }
      return out;
    };

    res.outcomes.reserve(queries.size());
    for (const auto* q : queries) {
      QueryOutcome o;
      o.query = q->bug_id;
      o.relevant = detail::relevant_in(*q, database, cs);
      o.database_size = avsa ? database.size() - 1 : database.size();
      std::optional<std::string> exclude;
      if (avsa) exclude = q->bug_id;
      if (cfg.method == Method::kClassificationOnly) {
        std::vector<const BugReport*> cands;
        cands.reserve(database.size());
        for (const auto* d : database)
          if (!avsa || d->bug_id != q->bug_id) cands.push_back(d);
        auto ds = decide(*q, cands);
        for (std::size_t i = 0; i < cands.size(); ++i)
          if (ds[i].duplicate) o.ranked.push_back({cands[i]->bug_id, ds[i].probability, true});
        std::sort(o.ranked.begin(), o.ranked.end(), [](const Candidate& a, const Candidate& b) {
          return ranks_before(a.score, a.bug_id, b.score, b.bug_id);
        });
        o.k_independent = true;
      } else {
        RankedCandidates ranked;
        {
          PhaseTimer t(&ledger, "search");
          ranked = top_k(index, query_vecs.at(q->bug_id), cfg.k, exclude, &ledger, q->bug_id);
        }
        for (const auto& s : ranked.ranked) o.ranked.push_back({s.bug_id, s.score, true});
        if (cfg.method == Method::kCascade) {
          std::vector<const BugReport*> cands;
          cands.reserve(ranked.ranked.size());
          for (const auto& s : ranked.ranked) cands.push_back(db_by_id.at(s.bug_id));
          auto ds = decide(*q, cands);
          for (std::size_t i = 0; i < ds.size(); ++i) o.ranked[i].accepted = ds[i].duplicate;
        }
      }
      if (o.relevant.empty()) ++res.queries_without_relevant;
      res.outcomes.push_back(std::move(o));
    }
  }
  res.ledger = ledger.counts();
  res.timings_ms = ledger.timings_ms();
  for (const char* phase : {"embed", "search", "classify"}) res.timings_ms.try_emplace(phase, 0.0);
  if (avsa) {
    res.predicted = predict_cost_all_vs_all(cfg.method, database.size(), cfg.k);
    res.predicted_exact = !(cfg.dedup_pairs && cfg.method != Method::kRetrievalOnly);
  } else {
    res.predicted = predict_cost(cfg.method, queries.size(), database.size(), cfg.k);
  }
  std::vector<std::size_t> ks = cfg.k_list.empty() ? std::vector<std::size_t>{cfg.k} : cfg.k_list;
  for (auto k : ks)
    if (cfg.method == Method::kClassificationOnly || k <= cfg.k) res.rows.push_back(aggregate_at(res.outcomes, k));
  return res;
}

// Test-split bugs, optionally without independents, sorted by id.
inline std::vector<const BugReport*> scenario_pool(const SplitManifest& m, const ClusterSet& cs,
                                                   const Corpus& corpus, bool with_independents) {
  std::vector<const BugReport*> pool;
  for (const auto& id : split_bugs(m, cs, Split::kTest)) {
    if (!with_independents && cs.cluster_of(id) == ClusterSet::kIndependent) continue;
    pool.push_back(&corpus.at(id));
  }
  return pool;
}

// Seeded query/database partition of the test split.
inline std::pair<std::vector<const BugReport*>, std::vector<const BugReport*>> partition_queries(
    std::vector<const BugReport*> pool, double query_fraction, std::uint64_t seed) {
  if (pool.size() < 2) throw PreconditionError("need at least two test bugs to form queries and a database");
  auto rng = Rng::substream(seed, "scenario.partition");
  rng.shuffle(pool);
  auto nq = static_cast<std::size_t>(std::llround(query_fraction * double(pool.size())));
  nq = std::clamp<std::size_t>(nq, 1, pool.size() - 1);
  std::vector<const BugReport*> q(pool.begin(), pool.begin() + std::ptrdiff_t(nq));
  std::vector<const BugReport*> d(pool.begin() + std::ptrdiff_t(nq), pool.end());
  return {std::move(q), std::move(d)};
}

inline ScenarioResult run_one_vs_all(const ScenarioConfig& cfg, const SplitManifest& m, const ClusterSet& cs,
                                     const Corpus& corpus, const Embedder* embedder,
                                     const PairClassifier* classifier) {
  if (cfg.mode != ScenarioMode::kOneVsAll) throw PreconditionError("config mode is not one-vs-all");
  auto [q, d] = partition_queries(scenario_pool(m, cs, corpus, cfg.independents_in_pool), cfg.query_fraction, cfg.seed);
  return run_scenario(cfg, std::move(q), std::move(d), cs, embedder, classifier);
}

inline ScenarioResult run_all_vs_all(const ScenarioConfig& cfg, const SplitManifest& m, const ClusterSet& cs,
                                     const Corpus& corpus, const Embedder* embedder,
                                     const PairClassifier* classifier) {
  if (cfg.mode != ScenarioMode::kAllVsAll) throw PreconditionError("config mode is not all-vs-all");
  auto pool = scenario_pool(m, cs, corpus, cfg.independents_in_pool);
  return run_scenario(cfg, pool, pool, cs, embedder, classifier);
}

inline nlohmann::ordered_json to_json(const LedgerCounts& c) {
  return {{"embed_calls", c.embed_calls},
          {"pair_classifications", c.pair_classifications},
          {"similarity_ops", c.similarity_ops}};
}

inline nlohmann::ordered_json to_json(const CurveRow& r) {
  nlohmann::ordered_json j;
  j["k"] = r.k;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["accuracy"] = r.accuracy;
  j["recall_macro"] = r.recall_macro;
  j["recall_micro"] = r.recall_micro;
  j["precision_macro"] = r.precision_macro;
  j["precision_micro"] = r.precision_micro;
  j["precision_at_k"] = r.precision_at_k;
  j["precision_undefined"] = r.precision_undefined;
  j["recall_undefined"] = r.recall_undefined;
  j["queries"] = r.queries;
  j["queries_without_relevant"] = r.queries_without_relevant;
  j["queries_without_predictions"] = r.queries_without_predictions;
  j["confusion"] = {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}, {"tn", r.confusion.tn}};
  return j;
}

inline nlohmann::ordered_json config_json(const ScenarioConfig& c) {
  nlohmann::ordered_json j;
  j["mode"] = mode_name(c.mode);
  j["method"] = method_name(c.method);
  j["k"] = c.k;
  j["k_cap"] = c.k_cap;
  j["query_fraction"] = c.query_fraction;
  j["seed"] = c.seed;
  j["dedup_pairs"] = c.dedup_pairs;
  j["independents_in_pool"] = c.independents_in_pool;
  j["k_list"] = c.k_list;
  return j;
}

// Deterministic part of a result: everything except wall-clock timings.
inline nlohmann::ordered_json to_json(const ScenarioResult& r) {
  nlohmann::ordered_json j;
  j["config"] = config_json(r.config);
  j["queries"] = r.queries;
  j["database"] = r.database;
  j["queries_without_relevant"] = r.queries_without_relevant;
  j["ledger"] = to_json(r.ledger);
  j["predicted"] = to_json(r.predicted);
  j["predicted_exact"] = r.predicted_exact;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) j["rows"].push_back(to_json(row));
  j["outcomes"] = nlohmann::ordered_json::array();
  for (const auto& o : r.outcomes) {
    nlohmann::ordered_json q;
    q["query"] = o.query;
    q["relevant"] = o.relevant;
    q["ranked"] = nlohmann::ordered_json::array();
    for (const auto& c : o.ranked) q["ranked"].push_back({c.bug_id, c.score, c.accepted});
    j["outcomes"].push_back(std::move(q));
  }
  return j;
}

inline nlohmann::ordered_json timing_json(const ScenarioResult& r) {
  nlohmann::ordered_json j;
  for (const auto& [phase, ms] : r.timings_ms) j[phase] = ms;
  const double per = r.queries ? r.timings_ms.at("total") / double(r.queries) : 0.0;
  j["per_query_ms"] = per;
  return j;
}

}  // namespace dbrd
