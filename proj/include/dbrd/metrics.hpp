#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dbrd/common.hpp"

namespace dbrd {

struct ConfusionMatrix {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  void add(bool predicted, bool actual) {
    if (predicted) (actual ? tp : fp)++;
    else (actual ? fn : tn)++;
  }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct MetricRow {
  std::optional<std::size_t> k;
  double precision = 0, recall = 0, f1 = 0, accuracy = 0;
  // Set when the metric's denominator was zero and 0 was reported instead.
  bool precision_undefined = false;
  bool recall_undefined = false;
  ConfusionMatrix support;
};

// 2PR / (P + R), or 0 when P + R = 0.
inline double f1_score(double precision, double recall) {
  return precision + recall == 0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

// Precision TP/(TP+FP), recall TP/(TP+FN), F1, and accuracy read as
// (TP+TN)/(TP+TN+FP+FN).
inline MetricRow classification_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw PreconditionError("classification metrics of an empty confusion matrix");
  MetricRow r;
  r.support = cm;
  if (cm.tp + cm.fp == 0) r.precision_undefined = true;
  else r.precision = double(cm.tp) / double(cm.tp + cm.fp);
  if (cm.tp + cm.fn == 0) r.recall_undefined = true;
  else r.recall = double(cm.tp) / double(cm.tp + cm.fn);
  r.f1 = f1_score(r.precision, r.recall);
  r.accuracy = double(cm.tp + cm.tn) / double(cm.total());
  return r;
}

// One query's scored candidates. `accepted` marks candidates predicted as
// duplicates; for ranked methods the prediction at cutoff k is the accepted
// subset of the first k candidates. k_independent outcomes (exhaustive
// classification) ignore the cutoff.
struct Candidate {
  std::string bug_id;
  double score = 0.0;
  bool accepted = true;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct QueryOutcome {
  std::string query;
  std::set<std::string> relevant;  // true duplicates present in the database
  std::vector<Candidate> ranked;
  std::size_t database_size = 0;   // candidates the query was compared against
  bool k_independent = false;

  friend bool operator==(const QueryOutcome&, const QueryOutcome&) = default;
};

// Confusion counts of one query at cutoff k, over all database items.
inline ConfusionMatrix outcome_confusion(const QueryOutcome& q, std::size_t k) {
  ConfusionMatrix cm;
  const std::size_t n = q.k_independent ? q.ranked.size() : std::min(k, q.ranked.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (!q.ranked[i].accepted) continue;
    (q.relevant.count(q.ranked[i].bug_id) ? cm.tp : cm.fp)++;
  }
  cm.fn = q.relevant.size() - cm.tp;
  cm.tn = q.database_size - cm.tp - cm.fp - cm.fn;
  return cm;
}

// Relevant accepted candidates among the first k ranked, whatever the cutoff mode.
inline std::size_t accepted_hits_in_top(const QueryOutcome& q, std::size_t k) {
  std::size_t hits = 0;
  const std::size_t n = std::min(k, q.ranked.size());
  for (std::size_t i = 0; i < n; ++i) hits += q.ranked[i].accepted && q.relevant.count(q.ranked[i].bug_id);
  return hits;
}

struct CurveRow {
  std::size_t k = 0;
  // Headline columns: precision is micro (pooled decisions), recall is
  // macro over queries with at least one relevant item, f1 combines the two.
  double precision = 0, recall = 0, f1 = 0, accuracy = 0;
  double recall_macro = 0, recall_micro = 0;
  double precision_macro = 0, precision_micro = 0;
  double precision_at_k = 0;  // relevant accepted in top-k over k, averaged over queries
  bool precision_undefined = false;
  bool recall_undefined = false;
  std::size_t queries = 0;
  std::size_t queries_without_relevant = 0;
  std::size_t queries_without_predictions = 0;
  ConfusionMatrix confusion;
};

inline CurveRow aggregate_at(const std::vector<QueryOutcome>& outcomes, std::size_t k) {
  if (k == 0) throw PreconditionError("k must be at least 1");
  CurveRow row;
  row.k = k;
  row.queries = outcomes.size();
  double recall_sum = 0, precision_sum = 0, pak_sum = 0;
  std::size_t recall_n = 0, precision_n = 0;
  std::uint64_t relevant_total = 0;
  for (const auto& q : outcomes) {
    auto cm = outcome_confusion(q, k);
    row.confusion += cm;
    relevant_total += q.relevant.size();
    pak_sum += double(accepted_hits_in_top(q, k)) / double(k);
    if (q.relevant.empty()) {
      ++row.queries_without_relevant;
    } else {
      recall_sum += double(cm.tp) / double(q.relevant.size());
      ++recall_n;
    }
    if (cm.tp + cm.fp == 0) {
      ++row.queries_without_predictions;
    } else {
      precision_sum += double(cm.tp) / double(cm.tp + cm.fp);
      ++precision_n;
    }
  }
  const auto& c = row.confusion;
  row.recall_macro = recall_n ? recall_sum / double(recall_n) : 0.0;
  row.recall_micro = relevant_total ? double(c.tp) / double(relevant_total) : 0.0;
  row.recall_undefined = recall_n == 0;
  row.precision_macro = precision_n ? precision_sum / double(precision_n) : 0.0;
  row.precision_undefined = c.tp + c.fp == 0;
  row.precision_micro = row.precision_undefined ? 0.0 : double(c.tp) / double(c.tp + c.fp);
  row.precision_at_k = outcomes.empty() ? 0.0 : pak_sum / double(outcomes.size());
  row.precision = row.precision_micro;
  row.recall = row.recall_macro;
  row.f1 = f1_score(row.precision, row.recall);
  row.accuracy = c.total() ? double(c.tp + c.tn) / double(c.total()) : 0.0;
  return row;
}

inline std::vector<CurveRow> aggregate_curves(const std::vector<QueryOutcome>& outcomes,
                                              const std::vector<std::size_t>& k_list) {
  if (outcomes.empty()) throw PreconditionError("no query outcomes to aggregate");
  std::vector<CurveRow> rows;
  rows.reserve(k_list.size());
  for (auto k : k_list) rows.push_back(aggregate_at(outcomes, k));
  return rows;
}

}  // namespace dbrd
