#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dbrd/common.hpp"
#include "dbrd/text.hpp"
#include "json.hpp"

namespace dbrd {

struct BugReport {
  std::string bug_id;
  std::string title;
  std::string description;
  std::optional<std::string> dup_of;

  // Derived by clean(); clean_text is the cleaned title followed by the
  // cleaned description.
  std::string clean_title;
  std::string clean_description;
  std::string clean_text;

  static BugReport make(std::string id, std::string title, std::string description,
                        std::optional<std::string> dup_of = std::nullopt) {
    BugReport r{std::move(id), std::move(title), std::move(description), std::move(dup_of),
                {}, {}, {}};
    r.clean_title = clean(r.title);
    r.clean_description = clean(r.description);
    r.clean_text = r.clean_title;
    if (!r.clean_text.empty() && !r.clean_description.empty()) r.clean_text.push_back(' ');
    r.clean_text += r.clean_description;
    return r;
  }

  friend bool operator==(const BugReport&, const BugReport&) = default;
};

using BugPair = std::pair<std::string, std::string>;

inline BugPair unordered_pair(std::string a, std::string b) {
  if (b < a) std::swap(a, b);
  return {std::move(a), std::move(b)};
}

class Corpus {
 public:
  Corpus() = default;

  // Throws InputError on a duplicate bug_id. Relations whose endpoints are
  // unknown are dropped and counted in dropped_relations().
  explicit Corpus(std::vector<BugReport> reports) : reports_(std::move(reports)) {
    for (std::size_t i = 0; i < reports_.size(); ++i) {
      const auto& id = reports_[i].bug_id;
      if (id.empty()) throw InputError("empty bug_id at record " + std::to_string(i));
      if (!index_.emplace(id, i).second) throw InputError("duplicate bug_id '" + id + "'");
    }
    std::set<BugPair> rel;
    for (auto& r : reports_) {
      if (!r.dup_of) continue;
      if (*r.dup_of == r.bug_id || !index_.count(*r.dup_of)) {
        ++dropped_;
        r.dup_of.reset();
        continue;
      }
      rel.insert(unordered_pair(r.bug_id, *r.dup_of));
    }
    relations_.assign(rel.begin(), rel.end());
  }

  const std::vector<BugReport>& reports() const { return reports_; }
  // Sorted, canonical (first < second), no duplicates.
  const std::vector<BugPair>& relations() const { return relations_; }
  std::size_t dropped_relations() const { return dropped_; }
  std::size_t size() const { return reports_.size(); }
  bool empty() const { return reports_.empty(); }

  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  const BugReport& at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw InputError("unknown bug_id '" + id + "'");
    return reports_[it->second];
  }
  std::size_t position(const std::string& id) const { return index_.at(id); }

  friend bool operator==(const Corpus& a, const Corpus& b) {
    return a.reports_ == b.reports_ && a.relations_ == b.relations_;
  }

 private:
  std::vector<BugReport> reports_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<BugPair> relations_;
  std::size_t dropped_ = 0;
};

enum class CorpusFormat { kJsonl, kCsv };

inline CorpusFormat parse_format(const std::string& s) {
  if (s == "jsonl") return CorpusFormat::kJsonl;
  if (s == "csv") return CorpusFormat::kCsv;
  throw InputError("unknown corpus format '" + s + "' (expected jsonl or csv)");
}

struct CsvColumns {
  std::string bug_id = "bug_id";
  std::string title = "title";
  std::string description = "description";
  std::string dup_of = "dup_of";
};

struct RecordError {
  std::size_t line = 0;
  std::string message;
};

struct IngestResult {
  Corpus corpus;
  std::vector<RecordError> record_errors;  // skipped records
  std::size_t dropped_relations = 0;       // dup_of links to unknown or self ids
};

namespace detail {

// Accepts strings and integers (bugrepo dumps use numeric ids).
inline std::optional<std::string> json_id(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
  return std::nullopt;
}

// RFC 4180 records; quoted fields may span lines. Returns (first line, fields).
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> parse_csv(std::istream& in) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  bool row_has_content = false;
  std::size_t line = 1;
  std::size_t row_line = 1;
  char c;
  auto end_row = [&] {
    if (row_has_content || !field.empty() || !fields.empty()) {
      fields.push_back(std::move(field));
      rows.emplace_back(row_line, std::move(fields));
    }
    fields.clear();
    field.clear();
    row_has_content = false;
  };
  while (in.get(c)) {
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      in_quotes = true;
      row_has_content = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      row_has_content = true;
    } else if (c == '\r') {
      // CRLF: the '\n' ends the row.
    } else if (c == '\n') {
      end_row();
      ++line;
      row_line = line;
    } else {
      field.push_back(c);
    }
  }
  if (in_quotes) throw InputError("unterminated quoted field starting at line " + std::to_string(row_line));
  end_row();
  return rows;
}

}  // namespace detail

inline IngestResult ingest_jsonl(std::istream& in) {
  IngestResult result;
  std::vector<BugReport> reports;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      result.record_errors.push_back({lineno, std::string("malformed JSON: ") + e.what()});
      continue;
    }
    if (!rec.is_object()) {
      result.record_errors.push_back({lineno, "record is not a JSON object"});
      continue;
    }
    std::optional<std::string> id;
    if (rec.contains("bug_id")) id = detail::json_id(rec["bug_id"]);
    if (!id || id->empty()) {
      result.record_errors.push_back({lineno, "missing bug_id"});
      continue;
    }
    auto text_field = [&](const char* key) -> std::optional<std::string> {
      if (!rec.contains(key)) return std::nullopt;
      const auto& v = rec[key];
      if (v.is_null()) return std::string();
      if (!v.is_string()) return std::nullopt;
      return v.get<std::string>();
    };
    auto title = text_field("title");
    auto description = text_field("description");
    if (!title || !description) {
      result.record_errors.push_back(
          {lineno, std::string("missing or non-string ") + (title ? "description" : "title")});
      continue;
    }
    std::optional<std::string> dup_of;
    if (rec.contains("dup_of") && !rec["dup_of"].is_null()) {
      dup_of = detail::json_id(rec["dup_of"]);
      if (dup_of && dup_of->empty()) dup_of.reset();
    }
    reports.push_back(BugReport::make(*id, std::move(*title), std::move(*description), dup_of));
  }
  result.corpus = Corpus(std::move(reports));
  result.dropped_relations = result.corpus.dropped_relations();
  return result;
}

inline IngestResult ingest_csv(std::istream& in, const CsvColumns& cols = {}) {
  IngestResult result;
  auto rows = detail::parse_csv(in);
  if (rows.empty()) return result;
  const auto& header = rows.front().second;
  auto find_col = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  auto id_col = find_col(cols.bug_id);
  auto title_col = find_col(cols.title);
  auto desc_col = find_col(cols.description);
  auto dup_col = find_col(cols.dup_of);
  if (!id_col || !title_col || !desc_col) {
    throw InputError("CSV header must contain columns '" + cols.bug_id + "', '" + cols.title +
                     "', '" + cols.description + "'");
  }
  std::vector<BugReport> reports;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& [lineno, f] = rows[r];
    auto get = [&](std::size_t c) -> std::optional<std::string> {
      if (c >= f.size()) return std::nullopt;
      return f[c];
    };
    auto id = get(*id_col);
    if (!id || id->empty()) {
      result.record_errors.push_back({lineno, "missing bug_id"});
      continue;
    }
    auto title = get(*title_col);
    auto desc = get(*desc_col);
    if (!title || !desc) {
      result.record_errors.push_back({lineno, "record has too few columns"});
      continue;
    }
    std::optional<std::string> dup_of;
    if (dup_col) {
      auto d = get(*dup_col);
      if (d && !d->empty()) dup_of = *d;
    }
    reports.push_back(BugReport::make(*id, std::move(*title), std::move(*desc), dup_of));
  }
  result.corpus = Corpus(std::move(reports));
  result.dropped_relations = result.corpus.dropped_relations();
  return result;
}

inline IngestResult ingest(const std::string& path, CorpusFormat format,
                           const CsvColumns& cols = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open corpus file '" + path + "'");
  return format == CorpusFormat::kJsonl ? ingest_jsonl(in) : ingest_csv(in, cols);
}

// Canonical JSONL: fixed key order, dup_of omitted when absent.
inline void write_jsonl(const Corpus& corpus, std::ostream& out) {
  for (const auto& r : corpus.reports()) {
    nlohmann::ordered_json rec;
    rec["bug_id"] = r.bug_id;
    rec["title"] = r.title;
    rec["description"] = r.description;
    if (r.dup_of) rec["dup_of"] = *r.dup_of;
    out << rec.dump() << '\n';
  }
}

inline std::string to_jsonl(const Corpus& corpus) {
  std::ostringstream out;
  write_jsonl(corpus, out);
  return out.str();
}

struct CorpusStats {
  std::size_t bugs = 0;
  std::size_t dup_pairs = 0;
  std::size_t separate_bugs = 0;
  double dup_bug_ratio = 0.0;
};

inline CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats s;
  s.bugs = corpus.size();
  s.dup_pairs = corpus.relations().size();
  std::set<std::string> involved;
  for (const auto& [a, b] : corpus.relations()) {
    involved.insert(a);
    involved.insert(b);
  }
  s.separate_bugs = s.bugs - involved.size();
  s.dup_bug_ratio = s.bugs == 0 ? 0.0 : double(involved.size()) / double(s.bugs);
  return s;
}

}  // namespace dbrd
