// dbrd: command-line driver for the duplicate-detection pipeline.
//
//   synth | ingest -> cluster -> split -> train-projection / train-classifier
//   -> eval-retrieval / eval-classification / run-cascade -> report
//
// Every JSON artifact carries the producer's run_config and its checksum;
// JSONL corpora get a <out>.config.json sidecar instead. Exit codes: 0 ok,
// 2 usage or input errors (the JSON error names the flag), 1 anything else.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dbrd/cascade.hpp"
#include "dbrd/classifier.hpp"
#include "dbrd/corpus.hpp"
#include "dbrd/dup_graph.hpp"
#include "dbrd/embedder.hpp"
#include "dbrd/metrics.hpp"
#include "dbrd/remote.hpp"
#include "dbrd/splitter.hpp"
#include "dbrd/synth.hpp"

using nlohmann::ordered_json;

namespace {

struct UsageError : std::runtime_error {
  UsageError(std::string f, const std::string& msg) : std::runtime_error(msg), flag(std::move(f)) {}
  std::string flag;
};

std::string read_file(const std::string& path, const std::string& flag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError(flag, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("--out", "cannot write '" + path + "'");
  out << data;
  if (!out) throw UsageError("--out", "write failed for '" + path + "'");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string checksum_of(const std::string& bytes) { return dbrd::hex64(dbrd::fnv1a64(bytes)); }

// Flag values of one subcommand, in declaration order, plus input file checksums.
class RunConfig {
 public:
  RunConfig(const CLI::App& sub, std::vector<std::string> file_flags) : sub_(sub), file_flags_(std::move(file_flags)) {}

  void note_env(const std::string& name, const std::string& value) { env_[name] = value; }

  ordered_json json() const {
    ordered_json j;
    j["command"] = sub_.get_name();
    ordered_json opts = ordered_json::object();
    for (const auto* o : sub_.get_options()) {
      const auto name = o->get_name();
      if (name == "--help" || name.empty()) continue;
      if (o->count() > 0) {
        const auto& r = o->results();
        opts[name] = r.size() == 1 ? ordered_json(r.front()) : ordered_json(r);
      } else {
        opts[name] = o->get_default_str();
      }
    }
    j["options"] = opts;
    if (!env_.empty()) j["env"] = env_;
    ordered_json inputs = ordered_json::object();
    for (const auto& f : file_flags_) {
      const auto* o = sub_.get_option_no_throw(f);
      if (!o || o->count() == 0) continue;
      for (const auto& path : o->results()) inputs[path] = checksum_of(read_file(path, f));
    }
    j["inputs"] = inputs;
    return j;
  }

 private:
  const CLI::App& sub_;
  std::vector<std::string> file_flags_;
  std::map<std::string, std::string> env_;
};

void write_artifact(const std::string& path, const RunConfig& rc, const ordered_json& body) {
  ordered_json j;
  const auto cfg = rc.json();
  j["run_config"] = cfg;
  j["run_config_checksum"] = checksum_of(cfg.dump());
  for (const auto& [k, v] : body.items()) j[k] = v;
  write_file(path, j.dump(2) + "\n");
}

// CSV outputs carry their run config in a <out>.config.json sidecar.
void emit(const std::string& path, const RunConfig& rc, const ordered_json& body, const std::string& csv) {
  const bool as_csv = path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
  if (!as_csv) return write_artifact(path, rc, body);
  write_file(path, csv);
  write_artifact(path + ".config.json", rc, body);
}

ordered_json load_json(const std::string& path, const std::string& flag) {
  try {
    return ordered_json::parse(read_file(path, flag));
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(flag, "'" + path + "' is not valid JSON: " + e.what());
  }
}

dbrd::Corpus load_corpus(const std::string& path, const std::string& flag) {
  std::istringstream in(read_file(path, flag));
  try {
    auto res = dbrd::ingest_jsonl(in);
    if (!res.record_errors.empty())
      throw UsageError(flag, "'" + path + "' line " + std::to_string(res.record_errors.front().line) + ": " +
                                 res.record_errors.front().message + " (run ingest first)");
    return std::move(res.corpus);
  } catch (const dbrd::InputError& e) {
    throw UsageError(flag, e.what());
  }
}

dbrd::ClusterSet load_clusters(const std::string& path, const dbrd::Corpus& corpus) {
  auto j = load_json(path, "--clusters");
  try {
    auto cs = dbrd::cluster_set_from_json(j);
    if (cs.bug_count() != corpus.size()) throw dbrd::InputError("cluster file covers a different number of bugs");
    for (const auto& r : corpus.reports())
      if (!cs.contains(r.bug_id)) throw dbrd::InputError("bug '" + r.bug_id + "' missing from cluster file");
    return cs;
  } catch (const dbrd::Error& e) {
    throw UsageError("--clusters", e.what());
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("--clusters", e.what());
  }
}

dbrd::SplitManifest load_manifest(const std::string& path, const dbrd::ClusterSet& cs) {
  auto j = load_json(path, "--manifest");
  try {
    return dbrd::manifest_from_json(j, cs);
  } catch (const dbrd::Error& e) {
    throw UsageError("--manifest", e.what());
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("--manifest", e.what());
  }
}

std::vector<std::size_t> parse_size_list(const std::string& s, const std::string& flag) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto dash = item.find("..");
    std::size_t skip = 2;
    if (dash == std::string::npos) {
      dash = item.find('-');
      skip = 1;
    }
    try {
      if (dash != std::string::npos) {
        const auto lo = std::stoul(item.substr(0, dash)), hi = std::stoul(item.substr(dash + skip));
        if (lo > hi) throw UsageError(flag, "bad range '" + item + "'");
        for (auto k = lo; k <= hi; ++k) out.push_back(k);
      } else {
        out.push_back(std::stoul(item));
      }
    } catch (const std::logic_error&) {
      throw UsageError(flag, "cannot parse '" + item + "' as a positive integer");
    }
  }
  if (out.empty()) throw UsageError(flag, "list is empty");
  for (auto k : out)
    if (k == 0) throw UsageError(flag, "values must be at least 1");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::string env_or(const char* name, const std::string& flag_value, RunConfig& rc) {
  if (!flag_value.empty()) return flag_value;
  if (const char* v = std::getenv(name)) {
    rc.note_env(name, v);
    return v;
  }
  return {};
}

std::vector<std::string> split_texts(const dbrd::SplitManifest& m, const dbrd::ClusterSet& cs,
                                     const dbrd::Corpus& corpus, dbrd::Split s) {
  std::vector<std::string> texts;
  for (const auto& id : dbrd::split_bugs(m, cs, s)) texts.push_back(corpus.at(id).clean_text);
  return texts;
}

// ---- shared option groups --------------------------------------------------

struct Inputs {
  std::string corpus, clusters, manifest;
  std::uint64_t seed = 0;
  std::size_t dim = dbrd::TfidfEmbedder::kDefaultDim;
};

void add_inputs(CLI::App* sub, Inputs& in, bool manifest = true) {
  sub->add_option("--corpus", in.corpus, "canonical corpus JSONL")->required();
  sub->add_option("--clusters", in.clusters, "cluster file")->required();
  if (manifest) sub->add_option("--manifest", in.manifest, "split manifest")->required();
  sub->add_option("--seed", in.seed, "run seed")->required();
  sub->add_option("--dim", in.dim, "TF-IDF hash dimension")->capture_default_str()->check(CLI::PositiveNumber);
}

struct Loaded {
  dbrd::Corpus corpus;
  dbrd::ClusterSet clusters;
  dbrd::SplitManifest manifest;
  std::shared_ptr<const dbrd::TfidfEmbedder> tfidf;
};

Loaded load_inputs(const Inputs& in) {
  auto corpus = load_corpus(in.corpus, "--corpus");
  auto cs = load_clusters(in.clusters, corpus);
  auto m = load_manifest(in.manifest, cs);
  auto tfidf = std::make_shared<dbrd::TfidfEmbedder>(
      dbrd::TfidfEmbedder::fitted(split_texts(m, cs, corpus, dbrd::Split::kTrain), in.dim));
  return {std::move(corpus), std::move(cs), std::move(m), std::move(tfidf)};
}

struct RemoteOpts {
  int timeout_ms = 30000;
  std::size_t batch = 64;
  int retries = 0;
  std::size_t in_flight = 1;
};

void add_remote(CLI::App* sub, RemoteOpts& r) {
  sub->add_option("--remote-timeout-ms", r.timeout_ms)->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--remote-batch", r.batch)->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--remote-retries", r.retries)->capture_default_str()->check(CLI::NonNegativeNumber);
  sub->add_option("--remote-in-flight", r.in_flight)->capture_default_str()->check(CLI::PositiveNumber);
}

dbrd::RemoteConfig remote_config(const RemoteOpts& r, std::string endpoint) {
  return {std::move(endpoint), r.timeout_ms, r.batch, r.retries, r.in_flight};
}

struct EmbedOpts {
  std::string kind = "tfidf";
  std::string projection;
  std::string endpoint;
};

void add_embedder(CLI::App* sub, EmbedOpts& e) {
  sub->add_option("--embedder,--backend", e.kind, "tfidf | projection | service")
      ->capture_default_str()
      ->check(CLI::IsMember({"tfidf", "projection", "service"}));
  sub->add_option("--projection", e.projection, "trained projection file");
  sub->add_option("--embed-endpoint", e.endpoint, "embedding service URL (or DBRD_EMBED_ENDPOINT)");
}

std::shared_ptr<const dbrd::Embedder> make_embedder(const EmbedOpts& e, const RemoteOpts& r, const Loaded& in,
                                                    RunConfig& rc) {
  if (e.kind == "tfidf") return in.tfidf;
  if (e.kind == "projection") {
    if (e.projection.empty()) throw UsageError("--projection", "--embedder projection needs --projection");
    auto j = load_json(e.projection, "--projection");
    try {
      if (j.at("base").at("dim").get<std::size_t>() != in.tfidf->dim())
        throw dbrd::InputError("projection was trained on a different --dim");
      return std::make_shared<dbrd::ProjectedEmbedder>(in.tfidf, dbrd::projection_from_json(j.at("model")));
    } catch (const dbrd::Error& ex) {
      throw UsageError("--projection", ex.what());
    } catch (const nlohmann::json::exception& ex) {
      throw UsageError("--projection", ex.what());
    }
  }
  const auto url = env_or("DBRD_EMBED_ENDPOINT", e.endpoint, rc);
  if (url.empty()) throw UsageError("--embed-endpoint", "--embedder service needs --embed-endpoint or DBRD_EMBED_ENDPOINT");
  return std::make_shared<dbrd::RemoteEmbedder>(remote_config(r, url));
}

struct ClassifierOpts {
  std::string kind = "logistic";
  std::string model;
  std::string endpoint;
  double threshold = 0.5;
};

void add_classifier(CLI::App* sub, ClassifierOpts& c) {
  sub->add_option("--classifier", c.kind, "logistic | threshold | service")
      ->capture_default_str()
      ->check(CLI::IsMember({"logistic", "threshold", "service"}));
  sub->add_option("--classifier-model", c.model, "trained classifier file");
  sub->add_option("--classify-endpoint", c.endpoint, "classification service URL (or DBRD_CLASSIFY_ENDPOINT)");
  sub->add_option("--threshold", c.threshold, "decision threshold for threshold/service classifiers")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
}

std::shared_ptr<const dbrd::PairClassifier> make_classifier(const ClassifierOpts& c, const RemoteOpts& r,
                                                            const Loaded& in, RunConfig& rc) {
  if (c.kind == "logistic") {
    if (c.model.empty()) throw UsageError("--classifier-model", "--classifier logistic needs --classifier-model");
    auto j = load_json(c.model, "--classifier-model");
    try {
      if (j.at("feature_embedder").at("dim").get<std::size_t>() != in.tfidf->dim())
        throw dbrd::InputError("classifier was trained on a different --dim");
      return std::make_shared<dbrd::LogisticPairClassifier>(in.tfidf, dbrd::logistic_from_json(j.at("model")));
    } catch (const dbrd::Error& ex) {
      throw UsageError("--classifier-model", ex.what());
    } catch (const nlohmann::json::exception& ex) {
      throw UsageError("--classifier-model", ex.what());
    }
  }
  if (c.kind == "threshold") return std::make_shared<dbrd::SimilarityThresholdClassifier>(in.tfidf, c.threshold);
  const auto url = env_or("DBRD_CLASSIFY_ENDPOINT", c.endpoint, rc);
  if (url.empty())
    throw UsageError("--classify-endpoint", "--classifier service needs --classify-endpoint or DBRD_CLASSIFY_ENDPOINT");
  return std::make_shared<dbrd::RemoteClassifier>(remote_config(r, url), c.threshold);
}

ordered_json metric_row_json(const dbrd::MetricRow& r) {
  return {{"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"accuracy", r.accuracy},
          {"precision_undefined", r.precision_undefined},
          {"recall_undefined", r.recall_undefined},
          {"confusion", {{"tp", r.support.tp}, {"fp", r.support.fp}, {"fn", r.support.fn}, {"tn", r.support.tn}}}};
}

void print_ok(const std::string& command, const std::string& out) {
  std::cout << ordered_json{{"status", "ok"}, {"command", command}, {"out", out}}.dump() << "\n";
}

// ---- report ------------------------------------------------------------------

struct ReportRow {
  std::string method;
  std::size_t k;
  ordered_json metrics;
  double wall_ms;
  ordered_json ledger;
};

int method_rank(const std::string& m) {
  if (m == "retrieval") return 0;
  if (m == "classification") return 1;
  if (m == "cascade") return 2;
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Duplicate bug report detection pipeline"};
  app.require_subcommand(1);
  app.allow_extras(false);

  // synth
  dbrd::SynthConfig synth_cfg;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate a planted-cluster corpus");
  synth->add_option("--clusters", synth_cfg.clusters)->capture_default_str();
  synth->add_option("--mean-size", synth_cfg.mean_size)->capture_default_str();
  synth->add_option("--independents", synth_cfg.independents)->capture_default_str();
  synth->add_option("--topics", synth_cfg.topics)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_cfg.seed)->required();
  synth->add_option("--out", synth_out)->required();

  // ingest
  std::string ingest_in, ingest_format, ingest_out;
  dbrd::CsvColumns csv_cols;
  auto* ingest = app.add_subcommand("ingest", "normalize a raw corpus to canonical JSONL");
  ingest->add_option("--corpus,--input", ingest_in, "raw corpus file")->required()->check(CLI::ExistingFile);
  ingest->add_option("--format", ingest_format, "jsonl | csv (default: by extension)")
      ->check(CLI::IsMember({"jsonl", "csv"}));
  ingest->add_option("--csv-id", csv_cols.bug_id)->capture_default_str();
  ingest->add_option("--csv-title", csv_cols.title)->capture_default_str();
  ingest->add_option("--csv-description", csv_cols.description)->capture_default_str();
  ingest->add_option("--csv-dup-of", csv_cols.dup_of)->capture_default_str();
  ingest->add_option("--out", ingest_out)->required();

  // cluster
  std::string cluster_corpus, cluster_out;
  auto* cluster = app.add_subcommand("cluster", "build duplicate clusters");
  cluster->add_option("--corpus", cluster_corpus)->required();
  cluster->add_option("--out", cluster_out)->required();

  // split
  std::string split_corpus, split_clusters, ratios_str = "0.8,0.1,0.1", caps_str, split_out;
  std::uint64_t split_seed = 0;
  double target_ratio = 0.1564;
  auto* split = app.add_subcommand("split", "leakage-free train/dev/test split with pairs and triplets");
  split->add_option("--clusters", split_clusters, "cluster file")->required();
  split->add_option("--corpus", split_corpus, "corpus to cross-check the cluster file against");
  split->add_option("--seed", split_seed, "run seed")->required();
  split->add_option("--ratios", ratios_str, "train,dev,test")->capture_default_str();
  split->add_option("--caps", caps_str, "max duplicate pairs per split, e.g. train=5000,dev=300,test=300");
  split->add_option("--dup-ratio,--target-dup-ratio", target_ratio, "dev/test duplicate share")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  split->add_option("--out", split_out)->required();

  // train-projection
  Inputs tp_in;
  dbrd::ProjectionTrainConfig tp_cfg;
  std::string tp_out;
  auto* train_proj = app.add_subcommand("train-projection", "fine-tune a linear projection with triplet loss");
  add_inputs(train_proj, tp_in);
  train_proj->add_option("--dim-out", tp_cfg.dim_out)->capture_default_str()->check(CLI::PositiveNumber);
  train_proj->add_option("--epochs", tp_cfg.epochs)->capture_default_str();
  train_proj->add_option("--lr", tp_cfg.learning_rate)->capture_default_str();
  train_proj->add_option("--margin", tp_cfg.margin)->capture_default_str();
  train_proj->add_option("--batch-size", tp_cfg.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  train_proj->add_option("--out", tp_out)->required();

  // train-classifier
  Inputs tc_in;
  dbrd::ClassifierTrainConfig tc_cfg;
  std::string tc_out;
  auto* train_cls = app.add_subcommand("train-classifier", "train the logistic pair classifier");
  add_inputs(train_cls, tc_in);
  train_cls->add_option("--epochs", tc_cfg.epochs)->capture_default_str();
  train_cls->add_option("--lr", tc_cfg.learning_rate)->capture_default_str();
  train_cls->add_option("--batch-size", tc_cfg.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  train_cls->add_option("--out", tc_out)->required();

  // eval-retrieval
  Inputs er_in;
  EmbedOpts er_embed;
  RemoteOpts er_remote;
  std::string er_split = "test", er_klist = "1,5,10,20,50,100", er_out;
  auto* eval_ret = app.add_subcommand("eval-retrieval", "recall@k of every split bug against its split");
  add_inputs(eval_ret, er_in);
  add_embedder(eval_ret, er_embed);
  add_remote(eval_ret, er_remote);
  eval_ret->add_option("--split", er_split)->capture_default_str()->check(CLI::IsMember({"train", "dev", "test"}));
  eval_ret->add_option("--k-list,--k", er_klist, "e.g. 1,5,10 or 1..100")->capture_default_str();
  eval_ret->add_option("--out", er_out)->required();

  // eval-classification
  Inputs ec_in;
  ClassifierOpts ec_cls;
  RemoteOpts ec_remote;
  std::string ec_split = "test", ec_out;
  auto* eval_cls = app.add_subcommand("eval-classification", "classifier metrics on a split's labeled pairs");
  add_inputs(eval_cls, ec_in);
  add_classifier(eval_cls, ec_cls);
  add_remote(eval_cls, ec_remote);
  eval_cls->add_option("--split", ec_split)->capture_default_str()->check(CLI::IsMember({"train", "dev", "test"}));
  eval_cls->add_option("--out", ec_out)->required();

  // run-cascade
  Inputs rc_in;
  EmbedOpts rc_embed;
  ClassifierOpts rc_cls;
  RemoteOpts rc_remote;
  std::string rc_mode = "one-vs-all", rc_method = "all", rc_klist = "1,5,10,20,50,100", rc_out;
  double rc_qfrac = 0.2;
  bool rc_dedup = false, rc_no_indep = false;
  auto* run = app.add_subcommand("run-cascade", "run a scenario for one or all methods over a k grid");
  add_inputs(run, rc_in);
  add_embedder(run, rc_embed);
  add_classifier(run, rc_cls);
  add_remote(run, rc_remote);
  run->add_option("--mode", rc_mode)->capture_default_str()->check(CLI::IsMember({"one-vs-all", "all-vs-all"}));
  run->add_option("--method", rc_method)
      ->capture_default_str()
      ->check(CLI::IsMember({"retrieval", "classification", "cascade", "all"}));
  run->add_option("--k-list,--k", rc_klist, "e.g. 20, 1,5,10 or 1..100 (each value <= 100)")->capture_default_str();
  run->add_option("--query-fraction", rc_qfrac)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  run->add_flag("--dedup-pairs", rc_dedup, "all-vs-all: classify each unordered pair once");
  run->add_flag("--exclude-independents", rc_no_indep, "drop bugs without duplicates from the pool");
  run->add_option("--out", rc_out)->required();

  // report
  std::vector<std::string> report_in;
  std::string report_out;
  auto* report = app.add_subcommand("report", "merge scenario outputs into one CSV");
  report->add_option("--input", report_in, "scenario.json (repeatable)")->required()->check(CLI::ExistingFile);
  report->add_option("--out", report_out)->required();

  auto fail = [](const std::string& kind, const std::string& flag, const std::string& msg, int code) {
    ordered_json e{{"error", kind}};
    if (!flag.empty()) e["flag"] = flag;
    e["message"] = msg;
    std::cerr << e.dump() << "\n";
    return code;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::smatch m;
    const std::string msg = e.what();
    std::string flag;
    if (std::regex_search(msg, m, std::regex("--[a-z][a-z0-9-]*"))) flag = m.str();
    return fail("usage", flag, msg, 2);
  }

  try {
    if (*synth) {
      RunConfig rc(*synth, {});
      auto corpus = dbrd::synth_corpus(synth_cfg);
      write_file(synth_out, dbrd::to_jsonl(corpus));
      auto stats = dbrd::corpus_stats(corpus);
      write_artifact(synth_out + ".config.json", rc,
                     {{"artifact", "corpus"},
                      {"corpus_checksum", checksum_of(dbrd::to_jsonl(corpus))},
                      {"stats", {{"bugs", stats.bugs}, {"dup_pairs", stats.dup_pairs}, {"separate_bugs", stats.separate_bugs},
                                 {"dup_bug_ratio", stats.dup_bug_ratio}}}});
      print_ok("synth", synth_out);
    } else if (*ingest) {
      RunConfig rc(*ingest, {"--corpus"});
      std::string fmt_name = ingest_format;
      if (fmt_name.empty()) fmt_name = ingest_in.size() >= 4 && ingest_in.substr(ingest_in.size() - 4) == ".csv" ? "csv" : "jsonl";
      dbrd::IngestResult res = [&] {
        try {
          return dbrd::ingest(ingest_in, dbrd::parse_format(fmt_name), csv_cols);
        } catch (const dbrd::InputError& e) {
          throw UsageError("--corpus", e.what());
        }
      }();
      const auto jsonl = dbrd::to_jsonl(res.corpus);
      write_file(ingest_out, jsonl);
      ordered_json errors = ordered_json::array();
      for (const auto& e : res.record_errors) {
        errors.push_back({{"line", e.line}, {"message", e.message}});
        std::cerr << ordered_json{{"warning", "record skipped"}, {"line", e.line}, {"message", e.message}}.dump() << "\n";
      }
      auto stats = dbrd::corpus_stats(res.corpus);
      write_artifact(ingest_out + ".config.json", rc,
                     {{"artifact", "corpus"},
                      {"corpus_checksum", checksum_of(jsonl)},
                      {"stats", {{"bugs", stats.bugs}, {"dup_pairs", stats.dup_pairs}, {"separate_bugs", stats.separate_bugs},
                                 {"dup_bug_ratio", stats.dup_bug_ratio}}},
                      {"dropped_relations", res.dropped_relations},
                      {"record_errors", errors}});
      print_ok("ingest", ingest_out);
    } else if (*cluster) {
      RunConfig rc(*cluster, {"--corpus"});
      auto corpus = load_corpus(cluster_corpus, "--corpus");
      auto cs = dbrd::build_clusters(corpus);
      auto st = dbrd::cluster_stats(cs);
      ordered_json body{{"artifact", "clusters"},
                        {"stats", {{"clusters", st.count}, {"mean_size", st.mean_size}, {"independents", cs.independents().size()}}}};
      const auto cj = dbrd::to_json(cs);
      for (const auto& [k, v] : cj.items()) body[k] = v;
      write_artifact(cluster_out, rc, body);
      print_ok("cluster", cluster_out);
    } else if (*split) {
      RunConfig rc(*split, {"--corpus", "--clusters"});
      dbrd::ClusterSet cs = [&] {
        if (!split_corpus.empty()) return load_clusters(split_clusters, load_corpus(split_corpus, "--corpus"));
        try {
          return dbrd::cluster_set_from_json(load_json(split_clusters, "--clusters"));
        } catch (const dbrd::Error& e) {
          throw UsageError("--clusters", e.what());
        } catch (const nlohmann::json::exception& e) {
          throw UsageError("--clusters", e.what());
        }
      }();
      dbrd::SplitRatios ratios;
      {
        std::vector<double> v;
        std::stringstream ss(ratios_str);
        std::string item;
        try {
          while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
        } catch (const std::logic_error&) {
          throw UsageError("--ratios", "cannot parse '" + item + "'");
        }
        if (v.size() != 3) throw UsageError("--ratios", "expected three comma-separated ratios");
        ratios = {v[0], v[1], v[2]};
        try {
          ratios.validate();
        } catch (const dbrd::Error& e) {
          throw UsageError("--ratios", e.what());
        }
      }
      dbrd::PairCaps caps{};
      {
        std::stringstream ss(caps_str);
        std::string item;
        while (std::getline(ss, item, ',')) {
          const auto eq = item.find('=');
          if (eq == std::string::npos) throw UsageError("--caps", "expected split=count, got '" + item + "'");
          try {
            caps[dbrd::idx(dbrd::parse_split(item.substr(0, eq)))] = std::stoull(item.substr(eq + 1));
          } catch (const dbrd::Error& e) {
            throw UsageError("--caps", e.what());
          } catch (const std::logic_error&) {
            throw UsageError("--caps", "cannot parse count in '" + item + "'");
          }
        }
      }
      auto m = dbrd::build_manifest(cs, ratios, split_seed, caps, target_ratio);
      ordered_json body{{"artifact", "manifest"}};
      const auto mj = dbrd::to_json(m, cs);
      for (const auto& [k, v] : mj.items()) body[k] = v;
      write_artifact(split_out, rc, body);
      print_ok("split", split_out);
    } else if (*train_proj) {
      RunConfig rc(*train_proj, {"--corpus", "--clusters", "--manifest"});
      auto in = load_inputs(tp_in);
      tp_cfg.seed = tp_in.seed;
      auto vecs = dbrd::triplet_vectors(in.manifest.triplets, in.corpus, *in.tfidf);
      auto model = dbrd::train_projection(vecs, tp_cfg);
      write_artifact(tp_out, rc,
                     {{"artifact", "projection"},
                      {"base", {{"kind", "tfidf"}, {"dim", in.tfidf->dim()}, {"fit_split", "train"}}},
                      {"triplets", vecs.size()},
                      {"model", dbrd::to_json(model)}});
      print_ok("train-projection", tp_out);
    } else if (*train_cls) {
      RunConfig rc(*train_cls, {"--corpus", "--clusters", "--manifest"});
      auto in = load_inputs(tc_in);
      tc_cfg.seed = tc_in.seed;
      const auto& pairs = in.manifest.pairs;
      auto model = dbrd::train_classifier(pairs[dbrd::idx(dbrd::Split::kTrain)], pairs[dbrd::idx(dbrd::Split::kDev)],
                                          in.corpus, *in.tfidf, tc_cfg);
      write_artifact(tc_out, rc,
                     {{"artifact", "classifier"},
                      {"feature_embedder", {{"kind", "tfidf"}, {"dim", in.tfidf->dim()}, {"fit_split", "train"}}},
                      {"train_pairs", pairs[dbrd::idx(dbrd::Split::kTrain)].size()},
                      {"dev_pairs", pairs[dbrd::idx(dbrd::Split::kDev)].size()},
                      {"model", dbrd::to_json(model)}});
      print_ok("train-classifier", tc_out);
    } else if (*eval_ret) {
      RunConfig rc(*eval_ret, {"--corpus", "--clusters", "--manifest", "--projection"});
      auto in = load_inputs(er_in);
      auto ks = parse_size_list(er_klist, "--k-list");
      if (ks.back() > dbrd::kMaxK) throw UsageError("--k-list", "k above the cap of 100");
      auto embedder = make_embedder(er_embed, er_remote, in, rc);
      std::vector<const dbrd::BugReport*> pool;
      for (const auto& id : dbrd::split_bugs(in.manifest, in.clusters, dbrd::parse_split(er_split)))
        pool.push_back(&in.corpus.at(id));
      dbrd::ScenarioConfig sc;
      sc.mode = dbrd::ScenarioMode::kAllVsAll;
      sc.method = dbrd::Method::kRetrievalOnly;
      sc.k = ks.back();
      sc.seed = er_in.seed;
      sc.k_list = ks;
      auto res = dbrd::run_scenario(sc, pool, pool, in.clusters, embedder.get(), nullptr);
      ordered_json rows = ordered_json::array();
      std::string csv = "backend,k,recall,recall_micro,precision_at_k\n";
      for (const auto& row : res.rows) {
        rows.push_back({{"k", row.k}, {"recall", row.recall_macro}, {"recall_micro", row.recall_micro},
                        {"precision_at_k", row.precision_at_k}});
        csv += embedder->name() + "," + std::to_string(row.k) + "," + fmt(row.recall_macro) + "," +
               fmt(row.recall_micro) + "," + fmt(row.precision_at_k) + "\n";
      }
      emit(er_out, rc,
                     {{"artifact", "retrieval-eval"},
                      {"split", er_split},
                      {"embedder", embedder->name()},
                      {"bugs", pool.size()},
                      {"queries_with_duplicates", res.queries - res.queries_without_relevant},
                      {"ledger", dbrd::to_json(res.ledger)},
                      {"rows", rows}},
           csv);
      print_ok("eval-retrieval", er_out);
    } else if (*eval_cls) {
      RunConfig rc(*eval_cls, {"--corpus", "--clusters", "--manifest", "--classifier-model"});
      auto in = load_inputs(ec_in);
      auto cls = make_classifier(ec_cls, ec_remote, in, rc);
      const auto& pairs = in.manifest.pairs[dbrd::idx(dbrd::parse_split(ec_split))];
      std::vector<dbrd::PairClassifier::ReportPair> rp;
      rp.reserve(pairs.size());
      for (const auto& p : pairs) rp.emplace_back(&in.corpus.at(p.bug_a), &in.corpus.at(p.bug_b));
      dbrd::CostLedger ledger;
      auto ds = dbrd::classify_batch(*cls, rp, &ledger);
      dbrd::ConfusionMatrix cm;
      for (std::size_t i = 0; i < pairs.size(); ++i) cm.add(ds[i].duplicate, pairs[i].duplicate);
      const auto row = dbrd::classification_metrics(cm);
      const std::string csv = "backend,threshold,precision,recall,f1,accuracy,tp,fp,fn,tn\n" + cls->name() + "," +
                              fmt(cls->threshold()) + "," + fmt(row.precision) + "," + fmt(row.recall) + "," +
                              fmt(row.f1) + "," + fmt(row.accuracy) + "," + std::to_string(cm.tp) + "," +
                              std::to_string(cm.fp) + "," + std::to_string(cm.fn) + "," + std::to_string(cm.tn) + "\n";
      emit(ec_out, rc,
                     {{"artifact", "classification-eval"},
                      {"split", ec_split},
                      {"classifier", cls->name()},
                      {"threshold", cls->threshold()},
                      {"pairs", pairs.size()},
                      {"ledger", dbrd::to_json(ledger.counts())},
                      {"metrics", metric_row_json(row)}},
           csv);
      print_ok("eval-classification", ec_out);
    } else if (*run) {
      RunConfig rc(*run, {"--corpus", "--clusters", "--manifest", "--projection", "--classifier-model"});
      auto in = load_inputs(rc_in);
      auto ks = parse_size_list(rc_klist, "--k-list");
      if (ks.back() > dbrd::kMaxK) throw UsageError("--k-list", "k above the cap of 100");
      std::vector<dbrd::Method> methods;
      if (rc_method == "all")
        methods = {dbrd::Method::kRetrievalOnly, dbrd::Method::kClassificationOnly, dbrd::Method::kCascade};
      else
        methods = {dbrd::parse_method(rc_method)};
      std::shared_ptr<const dbrd::Embedder> embedder;
      std::shared_ptr<const dbrd::PairClassifier> cls;
      for (auto m : methods) {
        if (m != dbrd::Method::kClassificationOnly && !embedder) embedder = make_embedder(rc_embed, rc_remote, in, rc);
        if (m != dbrd::Method::kRetrievalOnly && !cls) cls = make_classifier(rc_cls, rc_remote, in, rc);
      }
      dbrd::ScenarioConfig base;
      base.mode = dbrd::parse_mode(rc_mode);
      base.query_fraction = rc_qfrac;
      base.seed = rc_in.seed;
      base.dedup_pairs = rc_dedup;
      base.independents_in_pool = !rc_no_indep;
      auto run_one = [&](dbrd::ScenarioConfig sc) {
        return sc.mode == dbrd::ScenarioMode::kOneVsAll
                   ? dbrd::run_one_vs_all(sc, in.manifest, in.clusters, in.corpus, embedder.get(), cls.get())
                   : dbrd::run_all_vs_all(sc, in.manifest, in.clusters, in.corpus, embedder.get(), cls.get());
      };
      ordered_json runs = ordered_json::array(), timings = ordered_json::array();
      for (auto m : methods) {
        // Classification does not depend on k: one run, reported at every k.
        std::vector<std::size_t> run_ks = m == dbrd::Method::kClassificationOnly ? std::vector<std::size_t>{ks.back()} : ks;
        for (auto k : run_ks) {
          auto sc = base;
          sc.method = m;
          sc.k = k;
          sc.k_list = m == dbrd::Method::kClassificationOnly ? ks : std::vector<std::size_t>{k};
          auto res = run_one(sc);
          auto j = dbrd::to_json(res);
          j["embedder"] = embedder && m != dbrd::Method::kClassificationOnly ? embedder->name() : "";
          j["classifier"] = cls && m != dbrd::Method::kRetrievalOnly ? cls->name() : "";
          runs.push_back(j);
          timings.push_back({{"method", dbrd::method_name(m)}, {"k", k}, {"timings_ms", dbrd::timing_json(res)}});
        }
      }
      write_artifact(rc_out, rc, {{"artifact", "scenario"}, {"runs", runs}});
      write_artifact(rc_out + ".timing.json", rc, {{"artifact", "scenario-timing"}, {"runs", timings}});
      print_ok("run-cascade", rc_out);
    } else if (*report) {
      RunConfig rc(*report, {"--input"});
      std::vector<ReportRow> rows;
      std::optional<ordered_json> shared;
      std::string shared_from;
      for (const auto& path : report_in) {
        auto j = load_json(path, "--input");
        auto t = load_json(path + ".timing.json", "--input");
        try {
          if (j.at("artifact") != "scenario") throw UsageError("--input", "'" + path + "' is not a scenario output");
          const auto& runs = j.at("runs");
          const auto& truns = t.at("runs");
          if (runs.size() != truns.size()) throw UsageError("--input", "timing sidecar of '" + path + "' does not match");
          for (std::size_t i = 0; i < runs.size(); ++i) {
            const auto& r = runs[i];
            auto cfg = r.at("config");
            // Settings that must agree across every merged run.
            ordered_json common{{"mode", cfg.at("mode")},
                                {"query_fraction", cfg.at("query_fraction")},
                                {"seed", cfg.at("seed")},
                                {"dedup_pairs", cfg.at("dedup_pairs")},
                                {"independents_in_pool", cfg.at("independents_in_pool")},
                                {"queries", r.at("queries")},
                                {"database", r.at("database")}};
            if (!shared) {
              shared = common;
              shared_from = path;
            } else if (*shared != common) {
              throw UsageError("--input", "scenario settings in '" + path + "' conflict with '" + shared_from +
                                              "': " + common.dump() + " vs " + shared->dump());
            }
            const double wall = truns[i].at("timings_ms").at("total").get<double>();
            for (const auto& row : r.at("rows")) {
              ReportRow rr{cfg.at("method").get<std::string>(), row.at("k").get<std::size_t>(), row, wall, r.at("ledger")};
              for (const auto& prev : rows)
                if (prev.method == rr.method && prev.k == rr.k)
                  throw UsageError("--input", "duplicate row for method " + rr.method + " at k=" + std::to_string(rr.k));
              rows.push_back(std::move(rr));
            }
          }
        } catch (const nlohmann::json::exception& e) {
          throw UsageError("--input", "'" + path + "': " + e.what());
        }
      }
      std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
        if (method_rank(a.method) != method_rank(b.method)) return method_rank(a.method) < method_rank(b.method);
        return a.k < b.k;
      });
      std::string csv = "method,k,precision,recall,f1,accuracy,wall_clock_ms,embed_calls,pair_classifications\n";
      for (const auto& r : rows) {
        csv += r.method + "," + std::to_string(r.k) + "," + fmt(r.metrics.at("precision").get<double>()) + "," +
               fmt(r.metrics.at("recall").get<double>()) + "," + fmt(r.metrics.at("f1").get<double>()) + "," +
               fmt(r.metrics.at("accuracy").get<double>()) + "," + fmt(r.wall_ms) + "," +
               std::to_string(r.ledger.at("embed_calls").get<std::uint64_t>()) + "," +
               std::to_string(r.ledger.at("pair_classifications").get<std::uint64_t>()) + "\n";
      }
      write_file(report_out, csv);
      write_artifact(report_out + ".config.json", rc, {{"artifact", "report"}, {"rows", rows.size()}});
      print_ok("report", report_out);
    }
  } catch (const UsageError& e) {
    return fail("usage", e.flag, e.what(), 2);
  } catch (const dbrd::InputError& e) {
    return fail("input", "", e.what(), 2);
  } catch (const dbrd::Error& e) {
    return fail("runtime", "", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", "", e.what(), 1);
  }
  return 0;
}
