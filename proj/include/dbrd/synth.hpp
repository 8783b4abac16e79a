#pragma once

// Planted-cluster corpus generator.
//
// Each cluster owns a few signature words and belongs to one topic; its
// reports are paraphrases built from those words plus topic and filler
// vocabulary. Raw text carries the noise the cleaner is meant to remove.

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "dbrd/common.hpp"
#include "dbrd/corpus.hpp"
#include "dbrd/text.hpp"

namespace dbrd {

struct SynthConfig {
  std::size_t clusters = 50;
  double mean_size = 3.0;          // mean cluster size, >= 2
  std::size_t independents = 0;    // reports outside every cluster
  std::size_t topics = 2;
  std::size_t topic_words = 40;    // per topic
  std::size_t filler_words = 300;  // shared by every report
  std::size_t signature_words = 8; // per cluster or independent
  std::size_t title_words = 5;
  std::size_t description_words = 30;
  double signature_rate = 0.15;    // share of description slots filled from the signature
  double topic_rate = 0.35;        // share filled from the topic vocabulary
  double noise_rate = 0.1;         // chance per slot of a noise token
  std::uint64_t seed = 0;
  std::uint64_t first_id = 100000;

  void validate() const {
    if (clusters == 0 && independents == 0) throw PreconditionError("synth needs at least one report");
    if (!(mean_size >= 2.0)) throw PreconditionError("mean cluster size must be at least 2");
    if (topics == 0) throw PreconditionError("synth needs at least one topic");
    if (signature_words == 0 || title_words == 0 || description_words == 0)
      throw PreconditionError("synth word counts must be positive");
    if (signature_rate < 0 || topic_rate < 0 || signature_rate + topic_rate > 1 || noise_rate < 0 || noise_rate > 1)
      throw PreconditionError("synth rates must be probabilities");
  }
};

namespace detail {

// Unique pronounceable lowercase words that survive cleaning unchanged.
class WordMaker {
 public:
  explicit WordMaker(Rng& rng) : rng_(rng) {}

  std::vector<std::string> take(std::size_t n) {
    static constexpr std::string_view kOnset[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
                                                  "s", "t", "v", "z", "br", "dr", "gl", "kr", "pl", "st"};
    static constexpr std::string_view kVowel[] = {"a", "e", "i", "o", "u", "ai", "ou"};
    std::vector<std::string> out;
    out.reserve(n);
    while (out.size() < n) {
      std::string w;
      const auto syllables = 2 + rng_.below(2);
      for (std::uint64_t s = 0; s < syllables; ++s) {
        w += kOnset[rng_.below(std::size(kOnset))];
        w += kVowel[rng_.below(std::size(kVowel))];
      }
      if (is_stopword(w) || !used_.insert(w).second) continue;
      out.push_back(std::move(w));
    }
    return out;
  }

 private:
  Rng& rng_;
  std::set<std::string> used_;
};

inline std::string noise_token(Rng& rng) {
  static constexpr std::string_view kPlain[] = {"the", "is", "and", "when", "after", "it", "was", "to", "of"};
  switch (rng.below(5)) {
    case 0:
    case 1: return std::string(kPlain[rng.below(std::size(kPlain))]);
    case 2: return std::to_string(rng.below(10)) + "." + std::to_string(rng.below(20)) + "." + std::to_string(rng.below(10));
    case 3: return "\xe5\x90\x8c\xe6\xad\xa5";  // non-ASCII, dropped by the cleaner
    default: return "!!!";
  }
}

inline std::string decorate(std::string w, Rng& rng) {
  if (rng.bernoulli(0.1) && !w.empty()) w[0] = char(w[0] - 'a' + 'A');
  if (rng.bernoulli(0.05)) w += ',';
  return w;
}

}  // namespace detail

inline std::vector<BugReport> synth_reports(const SynthConfig& cfg) {
  cfg.validate();
  auto rng = Rng::substream(cfg.seed, "synth");
  detail::WordMaker words(rng);
  std::vector<std::vector<std::string>> topic_vocab;
  for (std::size_t t = 0; t < cfg.topics; ++t) topic_vocab.push_back(words.take(cfg.topic_words));
  const auto filler = words.take(cfg.filler_words);

  struct Owner {
    std::vector<std::string> signature;
    std::size_t topic;
  };
  auto make_owner = [&] { return Owner{words.take(cfg.signature_words), std::size_t(rng.below(cfg.topics))}; };

  auto sentence = [&](const Owner& o, std::size_t len, double sig_rate, double topic_rate) {
    std::string out;
    const auto& tv = topic_vocab[o.topic];
    for (std::size_t i = 0; i < len; ++i) {
      if (rng.bernoulli(cfg.noise_rate)) {
        out += detail::noise_token(rng) + " ";
      }
      const double u = rng.uniform();
      std::string w;
      if (u < sig_rate) w = o.signature[rng.below(o.signature.size())];
      else if (u < sig_rate + topic_rate) w = tv[rng.below(tv.size())];
      else w = filler[rng.below(filler.size())];
      out += detail::decorate(std::move(w), rng);
      if (i + 1 < len) out += ' ';
    }
    return out;
  };
  auto report = [&](const Owner& o) {
    // Titles lean on the signature; descriptions are noisier paraphrases.
    std::string title = sentence(o, cfg.title_words, std::min(1.0, cfg.signature_rate * 2), cfg.topic_rate / 2);
    std::string desc = sentence(o, cfg.description_words, cfg.signature_rate, cfg.topic_rate);
    return std::pair{std::move(title), std::move(desc)};
  };

  std::vector<BugReport> out;
  std::uint64_t next_id = cfg.first_id;
  const double extra = 2.0 * (cfg.mean_size - 2.0);
  for (std::size_t c = 0; c < cfg.clusters; ++c) {
    const auto owner = make_owner();
    const auto size = 2 + static_cast<std::size_t>(std::floor(rng.uniform() * (extra + 1.0)));
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < size; ++i) {
      auto [title, desc] = report(owner);
      std::string id = std::to_string(next_id++);
      std::optional<std::string> dup_of;
      if (!ids.empty()) dup_of = ids[rng.below(ids.size())];  // chains through earlier members
      out.push_back(BugReport::make(id, std::move(title), std::move(desc), std::move(dup_of)));
      ids.push_back(std::move(id));
    }
  }
  for (std::size_t i = 0; i < cfg.independents; ++i) {
    auto [title, desc] = report(make_owner());
    out.push_back(BugReport::make(std::to_string(next_id++), std::move(title), std::move(desc), std::nullopt));
  }
  return out;
}

inline Corpus synth_corpus(const SynthConfig& cfg) { return Corpus(synth_reports(cfg)); }

}  // namespace dbrd
