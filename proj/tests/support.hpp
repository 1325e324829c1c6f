// Shared fixtures for the test binaries.
#pragma once

#include <unistd.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "slurej/pipeline.hpp"

namespace slurej::testing {

inline DomainSpec books_domain() {
  DomainSpec d;
  d.name = "Books";
  d.prior = 0.5;
  d.intents = {"ReadBookIntent", "BuyBookIntent"};
  d.slot_labels = {"BookName", "PageNumber"};
  d.lexicons = {{"BookName", {"moana", "dune", "the hobbit", "emma"}},
                {"PageNumber", {"one", "two", "ten"}}};
  d.templates = {{"ReadBookIntent", {"read [BookName]", "read [BookName] from page [PageNumber]"}},
                 {"BuyBookIntent", {"buy [BookName]", "buy the book [BookName]"}}};
  return d;
}

inline DomainSpec music_domain() {
  DomainSpec d;
  d.name = "Music";
  d.prior = 0.5;
  d.intents = {"PlaySongIntent", "PlayArtistIntent"};
  d.slot_labels = {"SongName", "ArtistName"};
  d.lexicons = {{"SongName", {"thriller", "hello", "let it be", "halo"}},
                {"ArtistName", {"adele", "queen", "drake"}}};
  d.templates = {{"PlaySongIntent", {"play [SongName]", "play [SongName] by [ArtistName]"}},
                 {"PlayArtistIntent", {"play music by [ArtistName]", "play some [ArtistName]"}}};
  return d;
}

/// Two small domains with a little cross-domain noise.
inline CatalogSpec tiny_catalog(double confusability = 0.1, std::uint64_t seed = 11) {
  CatalogSpec c;
  c.domains = {books_domain(), music_domain()};
  c.confusability = confusability;
  c.seed = seed;
  return c;
}

inline DomainModels tiny_models(std::uint64_t seed = 5, std::size_t n = 400) {
  auto spec = tiny_catalog(0.1, seed);
  auto data = generate_corpus(spec, n);
  LogisticOptions o;
  o.seed = seed;
  return train_domain_models(data, spec, o);
}

inline RejectionHyperparams tiny_hyper(const FeatureFlags& f, std::uint64_t seed = 3) {
  RejectionHyperparams hp;
  hp.word_dim = 4;
  hp.hyp_dim = 3;
  hp.widths = {1, 2};
  hp.channels = 3;
  hp.epochs = 3;
  hp.batch_size = 8;
  hp.learning_rate = 0.1;
  hp.features = f;
  hp.seed = seed;
  return hp;
}

inline Utterance make_utterance(std::string id, std::vector<std::string> tokens,
                                std::string domain, std::string intent,
                                std::vector<SlotSpan> slots = {}) {
  Utterance u;
  u.id = std::move(id);
  u.tokens = std::move(tokens);
  u.annotation = {std::move(domain), std::move(intent), std::move(slots)};
  return u;
}

inline SluHypothesis make_hypothesis(std::string domain, std::string intent,
                                     std::vector<std::string> tagging, double score) {
  SluHypothesis h;
  h.domain = std::move(domain);
  h.intent = std::move(intent);
  h.tagging = std::move(tagging);
  h.dc_score = h.ic_score = h.ner_score = score;
  h.slu_score = score;
  return h;
}

/// Temporary directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("slurej-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str(const std::string& leaf = "") const { return (path / leaf).string(); }
};

// ---------------------------------------------------------------------------
// Randomized rejection fixtures with a brute-force tally that does not use
// the metrics module.

struct RawCandidate {
  std::string domain;
  double score = 0.0;
  double accept_prob = 0.0;
  bool correct = false;
};

struct RawUtterance {
  std::string id;
  std::string gold_domain;
  std::vector<RawCandidate> candidates;  // one per domain, sorted by name
};

struct Tally {
  std::size_t fa = 0, fr = 0, ta = 0, tr = 0, discarded = 0;
  std::map<std::string, std::array<std::size_t, 4>> module;  // fa, fr, ta, tr
};

inline const std::vector<std::string>& fixture_domains() {
  static const std::vector<std::string> d{"Books", "Music", "Shopping", "Video"};
  return d;
}

/// n utterances; every utterance's gold-domain candidate is correct with
/// probability p_correct, other domains are always incorrect. The first two
/// utterances are forced into the two R1 corner cases.
inline std::vector<RawUtterance> random_fixture(std::uint64_t seed, std::size_t n,
                                                double p_correct = 0.6) {
  Rng rng(seed);
  std::vector<RawUtterance> out;
  for (std::size_t i = 0; i < n; ++i) {
    RawUtterance u;
    u.id = "f" + std::to_string(i);
    u.gold_domain = fixture_domains()[rng.index(fixture_domains().size())];
    for (const auto& d : fixture_domains()) {
      RawCandidate c;
      c.domain = d;
      c.score = rng.uniform(0.05, 0.95);
      c.accept_prob = rng.uniform();
      c.correct = d == u.gold_domain && rng.bernoulli(p_correct);
      u.candidates.push_back(c);
    }
    out.push_back(std::move(u));
  }
  if (n >= 2) {
    // correct candidate rejected along with every other one
    auto& a = out[0];
    for (auto& c : a.candidates) {
      c.correct = c.domain == a.gold_domain;
      c.accept_prob = rng.uniform(0.0, 0.2);
    }
    // correct candidate rejected, an incorrect other-domain accept wins pooling
    auto& b = out[1];
    for (auto& c : b.candidates) {
      c.correct = c.domain == b.gold_domain;
      c.accept_prob = rng.uniform(0.0, 0.2);
    }
    for (auto& c : b.candidates) {
      if (!c.correct) {
        c.accept_prob = rng.uniform(0.8, 1.0);
        break;
      }
    }
  }
  return out;
}

/// Gold utterance and hypotheses that realize the fixture's correctness flags.
inline Utterance fixture_gold(const RawUtterance& r) {
  return make_utterance(r.id, {"w0", "w1"}, r.gold_domain, "Gold");
}

inline SluHypothesis fixture_hypothesis(const RawCandidate& c) {
  return make_hypothesis(c.domain, c.correct ? "Gold" : "Other", {"O", "O"}, c.score);
}

inline ScoredUtterance fixture_scored(const RawUtterance& r, Scheme s) {
  ScoredUtterance out;
  out.id = r.id;
  out.scheme = s;
  if (s == Scheme::R1) {
    for (const auto& c : r.candidates) {
      out.candidates.push_back({fixture_hypothesis(c), c.accept_prob, c.correct});
    }
  } else {
    // R2 sees the pooled top only
    const RawCandidate* top = &r.candidates.front();
    for (const auto& c : r.candidates) {
      if (c.score > top->score) top = &c;
    }
    out.candidates.push_back({fixture_hypothesis(*top), top->accept_prob, top->correct});
  }
  return out;
}

inline Tally brute_force_r1(const std::vector<RawUtterance>& fx, double tau) {
  Tally t;
  for (const auto& u : fx) {
    const RawCandidate* winner = nullptr;
    bool any_correct = false;
    for (const auto& c : u.candidates) {
      const bool accepted = c.accept_prob >= tau;
      any_correct |= c.correct;
      auto& m = t.module[c.domain];
      if (accepted && !c.correct) ++m[0];
      if (!accepted && c.correct) ++m[1];
      if (accepted && c.correct) ++m[2];
      if (!accepted && !c.correct) ++m[3];
      if (accepted && (!winner || c.score > winner->score)) winner = &c;
    }
    if (winner) {
      if (winner->correct) ++t.ta;
      else ++t.fa;
    } else if (any_correct) {
      ++t.fr;
    } else {
      ++t.discarded;
    }
  }
  return t;
}

inline Tally brute_force_r2(const std::vector<RawUtterance>& fx, double tau) {
  Tally t;
  for (const auto& u : fx) {
    const RawCandidate* top = &u.candidates.front();
    for (const auto& c : u.candidates) {
      if (c.score > top->score) top = &c;
    }
    const bool accepted = top->accept_prob >= tau;
    if (accepted && top->correct) ++t.ta;
    else if (accepted) ++t.fa;
    else if (top->correct) ++t.fr;
    else ++t.tr;
  }
  return t;
}

}  // namespace slurej::testing
