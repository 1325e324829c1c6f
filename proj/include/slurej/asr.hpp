#ifndef SLUREJ_ASR_HPP_
#define SLUREJ_ASR_HPP_

#include <array>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "slurej/common.hpp"
#include "slurej/rejection.hpp"
#include "slurej/types.hpp"

namespace slurej {

struct CorruptionRates {
  double substitution = 0.0;
  double insertion = 0.0;
  double deletion = 0.0;

  void validate() const {
    for (double r : {substitution, insertion, deletion}) {
      if (!(r >= 0.0 && r <= 1.0)) {
        throw ValidationError("asr rates: each must lie in [0,1]");
      }
    }
    if (substitution + deletion > 1.0 + 1e-12) {
      throw ValidationError("asr rates: substitution + deletion exceeds 1");
    }
  }
};

/// Frames emitted per reference token, before jitter.
inline constexpr int kFramesPerToken = 30;

/// Simulates a recognizer on the reference tokens: independent per-token
/// substitution/deletion, insertions between tokens, and a confusion network
/// whose 1-best path is the corrupted string. Corrupted slots get lower
/// confidences and posteriors and their frames explore more arcs.
inline AsrObservation corrupt(const Utterance& u, const CorruptionRates& rates,
                              std::uint64_t seed,
                              std::span<const std::string> vocabulary) {
  rates.validate();
  Rng rng(seed);
  AsrObservation obs;
  obs.n_frames = 0;

  auto random_other = [&](const std::string& avoid) -> std::string {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const auto& cand = vocabulary[rng.index(vocabulary.size())];
      if (cand != avoid) return cand;
    }
    throw ValidationError("asr: vocabulary has no substitute for '" + avoid + "'");
  };
  auto emit_frames = [&](int count, bool noisy) {
    for (int f = 0; f < count; ++f) {
      int arcs = 2 + static_cast<int>(rng.index(4));
      if (noisy) arcs += 3 + static_cast<int>(rng.index(6));
      obs.arcs_per_frame.push_back(arcs);
    }
    obs.n_frames += count;
  };
  // best arc first; one competing alternative with a strictly lower posterior
  auto make_slot = [&](const std::string& best, const std::string& alt, bool noisy) {
    const double post = noisy ? rng.uniform(0.5, 0.75) : rng.uniform(0.9, 0.99);
    const double conf = noisy ? rng.uniform(0.25, 0.75) : rng.uniform(0.9, 1.0);
    const double alt_post = (1.0 - post) * rng.uniform(0.3, 0.9);
    const double alt_conf = noisy ? rng.uniform(0.2, 0.6) : rng.uniform(0.05, 0.3);
    obs.confnet.push_back({{best, conf, post}, {alt, alt_conf, alt_post}});
    if (best != kEps) obs.onebest.push_back(best);
  };

  const bool needs_vocab = rates.substitution > 0 || rates.insertion > 0;
  if (needs_vocab && vocabulary.empty()) {
    throw ValidationError("asr: substitution/insertion needs a vocabulary");
  }

  for (std::size_t i = 0; i < u.tokens.size(); ++i) {
    const std::string& tok = u.tokens[i];
    const int frames = kFramesPerToken - 5 + static_cast<int>(rng.index(11));
    const double r = rng.uniform();
    if (r < rates.deletion) {
      make_slot(kEps, tok, true);
      emit_frames(frames, true);
    } else if (r < rates.deletion + rates.substitution) {
      make_slot(random_other(tok), tok, true);
      emit_frames(frames, true);
    } else {
      make_slot(tok, kEps, false);
      emit_frames(frames, false);
    }
    if (rates.insertion > 0 && rng.bernoulli(rates.insertion)) {
      make_slot(random_other(tok), kEps, true);
      emit_frames(kFramesPerToken / 2, true);
    }
  }
  // A recognizer always emits something for speech: if every token was
  // deleted, the first slot keeps its reference word as the 1-best arc.
  if (obs.onebest.empty() && !obs.confnet.empty()) {
    std::swap(obs.confnet[0][0].token, obs.confnet[0][1].token);
    obs.onebest.push_back(obs.confnet[0][0].token);
  }
  obs.n_frames = std::max(obs.n_frames, 1);
  if (obs.arcs_per_frame.empty()) obs.arcs_per_frame.push_back(1);
  return obs;
}

/// Attaches an ASR observation to every utterance; stream i uses
/// derive_seed(seed, i).
inline void attach_asr(std::vector<Utterance>& data, const CorruptionRates& rates,
                       std::uint64_t seed, std::span<const std::string> vocabulary) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i].asr = corrupt(data[i], rates, derive_seed(seed, i), vocabulary);
  }
}

inline bool asr_errorful(const Utterance& u) {
  return u.asr && u.asr->onebest != u.tokens;
}

/// The five recognizer scalars fed to the rejection model.
struct AsrFeatures {
  double onebest_confidence = 1.0;  // product over 1-best arcs, eps included
  double onebest_posterior = 1.0;   // product over 1-best arcs, eps included
  double log_frames = 0.0;
  double log_words = 0.0;           // eps arcs are not words
  double log_mean_arcs = 0.0;

  AsrVector as_vector() const {
    return {onebest_confidence, onebest_posterior, log_frames, log_words,
            log_mean_arcs};
  }
};

inline AsrFeatures extract_asr_features(const AsrObservation& obs) {
  if (obs.confnet.empty()) throw ValidationError("asr: empty confusion network");
  if (obs.n_frames < 1) throw ValidationError("asr: n_frames must be positive");
  if (obs.arcs_per_frame.empty()) throw ValidationError("asr: no arcs per frame");
  AsrFeatures f;
  std::size_t words = 0;
  for (const auto& slot : obs.confnet) {
    if (slot.empty()) throw ValidationError("asr: empty confusion-network slot");
    const ConfNetArc* best = &slot.front();
    for (const auto& arc : slot) {
      if (arc.posterior > best->posterior) best = &arc;
    }
    f.onebest_confidence *= best->confidence;
    f.onebest_posterior *= best->posterior;
    if (best->token != kEps) ++words;
  }
  if (words == 0) throw ValidationError("asr: 1-best has no words; log word count undefined");
  double arcs = 0.0;
  for (int a : obs.arcs_per_frame) arcs += a;
  f.log_frames = std::log(static_cast<double>(obs.n_frames));
  f.log_words = std::log(static_cast<double>(words));
  f.log_mean_arcs = std::log(arcs / static_cast<double>(obs.arcs_per_frame.size()));
  return f;
}

// ---------------------------------------------------------------------------
// Error-case taxonomy

/// A: clean text, correct hypothesis.  B: errorful text, correct hypothesis.
/// C: errorful text, incorrect hypothesis.  D: clean text, incorrect hypothesis.
enum class ErrorCaseKind { A = 0, B = 1, C = 2, D = 3 };

inline char to_char(ErrorCaseKind k) { return static_cast<char>('A' + static_cast<int>(k)); }

inline ErrorCaseKind error_case_kind(bool asr_errorful, bool hypothesis_correct) {
  if (hypothesis_correct) return asr_errorful ? ErrorCaseKind::B : ErrorCaseKind::A;
  return asr_errorful ? ErrorCaseKind::C : ErrorCaseKind::D;
}

struct ErrorCase {
  std::string utterance_id;
  ErrorCaseKind kind = ErrorCaseKind::A;
  bool asr_errorful = false;
  bool hypothesis_correct = false;
  Decision with_asr = Decision::Reject;
  Decision without_asr = Decision::Reject;
};

struct CaseSummary {
  std::size_t cases = 0;
  std::size_t errors_without_asr = 0;
  std::size_t errors_with_asr = 0;
  std::size_t fixed_by_asr = 0;    // error without, right with
  std::size_t broken_by_asr = 0;   // right without, error with
};

struct ErrorCaseReport {
  std::vector<ErrorCase> cases;
  std::array<CaseSummary, 4> summary{};
  std::size_t uninteresting = 0;
};

/// Pairs decisions on the same utterances with and without ASR features and
/// keeps every utterance that is an error under at least one configuration.
inline ErrorCaseReport classify_error_cases(
    std::span<const DecisionRecord> without_asr,
    std::span<const DecisionRecord> with_asr,
    const std::map<std::string, bool>& asr_errorful_by_id) {
  if (without_asr.size() != with_asr.size()) {
    throw ValidationError("error cases: record lists differ in length");
  }
  std::map<std::string, const DecisionRecord*> paired;
  for (const auto& r : with_asr) paired[r.utterance_id] = &r;
  if (paired.size() != with_asr.size()) {
    throw ValidationError("error cases: duplicate utterance id");
  }
  ErrorCaseReport rep;
  for (const auto& r : without_asr) {
    auto it = paired.find(r.utterance_id);
    if (it == paired.end()) {
      throw ValidationError("error cases: '" + r.utterance_id + "' is unpaired");
    }
    const DecisionRecord& w = *it->second;
    if (w.hypothesis_correct != r.hypothesis_correct) {
      throw ValidationError("error cases: '" + r.utterance_id +
                            "' has different hypotheses in the two configurations");
    }
    auto flag = asr_errorful_by_id.find(r.utterance_id);
    if (flag == asr_errorful_by_id.end()) {
      throw ValidationError("error cases: no ASR flag for '" + r.utterance_id + "'");
    }
    const Decision right = r.hypothesis_correct ? Decision::Accept : Decision::Reject;
    const bool err_without = r.decision != right;
    const bool err_with = w.decision != right;
    if (!err_without && !err_with) {
      ++rep.uninteresting;
      continue;
    }
    ErrorCase c;
    c.utterance_id = r.utterance_id;
    c.asr_errorful = flag->second;
    c.hypothesis_correct = r.hypothesis_correct;
    c.kind = error_case_kind(c.asr_errorful, c.hypothesis_correct);
    c.without_asr = r.decision;
    c.with_asr = w.decision;
    auto& s = rep.summary[static_cast<int>(c.kind)];
    ++s.cases;
    s.errors_without_asr += err_without;
    s.errors_with_asr += err_with;
    s.fixed_by_asr += err_without && !err_with;
    s.broken_by_asr += !err_without && err_with;
    rep.cases.push_back(std::move(c));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const ErrorCaseReport& r) {
  nlohmann::json cases = nlohmann::json::object();
  for (int k = 0; k < 4; ++k) {
    const auto& s = r.summary[k];
    cases[std::string(1, static_cast<char>('A' + k))] = {
        {"cases", s.cases},
        {"errors_without_asr", s.errors_without_asr},
        {"errors_with_asr", s.errors_with_asr},
        {"fixed_by_asr", s.fixed_by_asr},
        {"broken_by_asr", s.broken_by_asr}};
  }
  return {{"summary", cases}, {"uninteresting", r.uninteresting}};
}

}  // namespace slurej

#endif  // SLUREJ_ASR_HPP_
