#ifndef SLUREJ_SCHEMES_HPP_
#define SLUREJ_SCHEMES_HPP_

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slurej/asr.hpp"
#include "slurej/common.hpp"
#include "slurej/rejection.hpp"
#include "slurej/slu.hpp"
#include "slurej/types.hpp"

namespace slurej {

enum class Scheme { R1, R2 };

inline const char* to_string(Scheme s) { return s == Scheme::R1 ? "r1" : "r2"; }

inline Scheme parse_scheme(const std::string& s) {
  if (s == "r1" || s == "R1") return Scheme::R1;
  if (s == "r2" || s == "R2") return Scheme::R2;
  throw ValidationError("scheme: expected r1 or r2, got '" + s + "'");
}

struct SchemeConfig {
  Scheme scheme = Scheme::R2;
  /// R1: one threshold per domain.
  std::map<std::string, double> domain_thresholds;
  /// R2: the single system-level threshold.
  double threshold = 0.5;
  FeatureFlags features;
  NBestConfig nbest;
  TextSource text = TextSource::Transcript;

  static SchemeConfig r1(const std::vector<std::string>& domains, double tau = 0.5) {
    SchemeConfig c;
    c.scheme = Scheme::R1;
    for (const auto& d : domains) c.domain_thresholds[d] = tau;
    return c;
  }
  static SchemeConfig r2(double tau = 0.5) {
    SchemeConfig c;
    c.scheme = Scheme::R2;
    c.threshold = tau;
    return c;
  }

  double threshold_for(const std::string& domain) const {
    auto it = domain_thresholds.find(domain);
    if (it == domain_thresholds.end()) {
      throw ValidationError("scheme: no R1 threshold for domain '" + domain + "'");
    }
    return it->second;
  }

  void validate(const DomainModels& models) const {
    auto check = [](double t) {
      if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("scheme: threshold outside [0,1]");
    };
    if (scheme == Scheme::R1) {
      if (domain_thresholds.size() != models.domains.size()) {
        throw ValidationError("scheme: R1 needs exactly one threshold per domain");
      }
      for (const auto& d : models.domains) check(threshold_for(d.domain));
    } else {
      check(threshold);
    }
    nbest.validate();
    features.validate();
  }
};

/// SLU decoding of one utterance before any rejection.
struct DecodedUtterance {
  std::string id;
  std::vector<std::string> tokens;
  /// Reranked top hypothesis of every domain, in model order.
  std::vector<SluHypothesis> domain_tops;
  /// Best of domain_tops under ranks_before().
  SluHypothesis pooled_top;
  std::optional<AsrVector> asr_features;
};

inline DecodedUtterance decode_slu(const DomainModels& models, const Utterance& u,
                                   const NBestConfig& nbest, TextSource text) {
  DecodedUtterance d;
  d.id = u.id;
  d.tokens = decoded_tokens(u, text);
  for (auto& hyps : generate_hypotheses(models, d.tokens, nbest)) {
    d.domain_tops.push_back(rerank(std::move(hyps)).front());
  }
  d.pooled_top = *std::min_element(d.domain_tops.begin(), d.domain_tops.end(),
                                   ranks_before);
  if (text == TextSource::AsrOneBest && u.asr) {
    d.asr_features = extract_asr_features(*u.asr).as_vector();
  }
  return d;
}

inline HypothesisSample make_sample(const DecodedUtterance& d, const SluHypothesis& h,
                                    const Utterance& gold) {
  HypothesisSample s;
  s.utterance_id = d.id;
  s.tokens = d.tokens;
  s.hypothesis = h;
  s.asr_features = d.asr_features;
  s.hypothesis_correct = hypothesis_matches(h, gold);
  return s;
}

/// Every utterance, whatever its annotated domain, paired with this domain's
/// top hypothesis; Accept iff it equals the annotation.
inline std::vector<HypothesisSample> build_r1_training_set(
    const std::string& domain, const std::vector<Utterance>& data,
    const DomainModels& models, const NBestConfig& nbest = {},
    TextSource text = TextSource::Transcript) {
  std::size_t di = 0;
  while (di < models.domains.size() && models.domains[di].domain != domain) ++di;
  if (di == models.domains.size()) {
    throw ValidationError("r1 training set: unknown domain '" + domain + "'");
  }
  std::vector<HypothesisSample> out;
  out.reserve(data.size());
  for (const auto& u : data) {
    auto d = decode_slu(models, u, nbest, text);
    out.push_back(make_sample(d, d.domain_tops[di], u));
  }
  return out;
}

/// Every utterance paired with the pooled top hypothesis.
inline std::vector<HypothesisSample> build_r2_training_set(
    const std::vector<Utterance>& data, const DomainModels& models,
    const NBestConfig& nbest = {}, TextSource text = TextSource::Transcript) {
  std::vector<HypothesisSample> out;
  out.reserve(data.size());
  for (const auto& u : data) {
    auto d = decode_slu(models, u, nbest, text);
    out.push_back(make_sample(d, d.pooled_top, u));
  }
  return out;
}

/// All per-domain R1 sets from a single decoding pass.
inline std::map<std::string, std::vector<HypothesisSample>> build_r1_training_sets(
    const std::vector<Utterance>& data, const DomainModels& models,
    const NBestConfig& nbest = {}, TextSource text = TextSource::Transcript) {
  std::map<std::string, std::vector<HypothesisSample>> out;
  for (const auto& u : data) {
    auto d = decode_slu(models, u, nbest, text);
    for (std::size_t di = 0; di < models.domains.size(); ++di) {
      out[models.domains[di].domain].push_back(make_sample(d, d.domain_tops[di], u));
    }
  }
  return out;
}

struct SluOutput {
  std::string utterance_id;
  std::optional<SluHypothesis> final_hypothesis;
  /// R1 only.
  std::map<std::string, DecisionRecord> per_domain;
  /// Whether a correct hypothesis was among the candidates the rejection
  /// stage saw (R1: any domain top; R2: the pooled top).
  bool candidate_had_correct = false;
};

/// A candidate with its Accept probability, independent of any threshold.
struct ScoredCandidate {
  SluHypothesis hypothesis;
  double accept_prob = 1.0;
  bool correct = false;
};

/// Rejection-model outputs for one utterance. R1: one candidate per domain
/// in model order; R2: the pooled top only.
struct ScoredUtterance {
  std::string id;
  Scheme scheme = Scheme::R2;
  std::vector<ScoredCandidate> candidates;
};

inline ScoredUtterance score_r1(const Utterance& u, const DomainModels& models,
                                const std::map<std::string, RejectionModel>& r1_models,
                                const SchemeConfig& cfg) {
  auto d = decode_slu(models, u, cfg.nbest, cfg.text);
  ScoredUtterance s;
  s.id = u.id;
  s.scheme = Scheme::R1;
  for (const auto& h : d.domain_tops) {
    auto it = r1_models.find(h.domain);
    if (it == r1_models.end()) {
      throw ValidationError("r1: no rejection model for domain '" + h.domain + "'");
    }
    auto sample = make_sample(d, h, u);
    ScoredCandidate c;
    c.hypothesis = h;
    c.correct = sample.hypothesis_correct;
    c.accept_prob = forward(it->second, encode(it->second.vocab, sample, false));
    s.candidates.push_back(std::move(c));
  }
  return s;
}

inline ScoredUtterance score_r2(const Utterance& u, const DomainModels& models,
                                const RejectionModel& r2_model, const SchemeConfig& cfg) {
  auto d = decode_slu(models, u, cfg.nbest, cfg.text);
  ScoredUtterance s;
  s.id = u.id;
  s.scheme = Scheme::R2;
  auto sample = make_sample(d, d.pooled_top, u);
  ScoredCandidate c;
  c.hypothesis = d.pooled_top;
  c.correct = sample.hypothesis_correct;
  c.accept_prob = forward(r2_model, encode(r2_model.vocab, sample, false));
  s.candidates.push_back(std::move(c));
  return s;
}

/// The system without rejection: the pooled top, always accepted.
inline ScoredUtterance score_no_rejection(const Utterance& u, const DomainModels& models,
                                          const NBestConfig& nbest, TextSource text) {
  auto d = decode_slu(models, u, nbest, text);
  ScoredUtterance s;
  s.id = u.id;
  s.scheme = Scheme::R2;
  s.candidates.push_back({d.pooled_top, 1.0, hypothesis_matches(d.pooled_top, u)});
  return s;
}

/// Per-domain decisions, pooling of accepted candidates, max slu_score wins.
inline SluOutput finalize_r1(const ScoredUtterance& s,
                             const std::function<double(const std::string&)>& threshold_of) {
  SluOutput out;
  out.utterance_id = s.id;
  const SluHypothesis* best = nullptr;
  for (const auto& c : s.candidates) {
    DecisionRecord r;
    r.utterance_id = s.id;
    r.hypothesis = c.hypothesis;
    r.accept_prob = c.accept_prob;
    r.decision = threshold_decision(c.accept_prob, threshold_of(c.hypothesis.domain));
    r.hypothesis_correct = c.correct;
    out.candidate_had_correct = out.candidate_had_correct || c.correct;
    if (r.decision == Decision::Accept && (!best || ranks_before(c.hypothesis, *best))) {
      best = &c.hypothesis;
    }
    out.per_domain.emplace(c.hypothesis.domain, std::move(r));
  }
  if (best) out.final_hypothesis = *best;
  return out;
}

inline SluOutput finalize_r1(const ScoredUtterance& s, const SchemeConfig& cfg) {
  return finalize_r1(s, [&](const std::string& d) { return cfg.threshold_for(d); });
}

inline SluOutput finalize_r1(const ScoredUtterance& s, double tau) {
  return finalize_r1(s, [tau](const std::string&) { return tau; });
}

/// The pooled top survives iff accepted.
inline SluOutput finalize_r2(const ScoredUtterance& s, double tau) {
  SluOutput out;
  out.utterance_id = s.id;
  const auto& c = s.candidates.front();
  out.candidate_had_correct = c.correct;
  if (threshold_decision(c.accept_prob, tau) == Decision::Accept) {
    out.final_hypothesis = c.hypothesis;
  }
  return out;
}

inline SluOutput r1_decode(const Utterance& u, const DomainModels& models,
                           const std::map<std::string, RejectionModel>& r1_models,
                           const SchemeConfig& cfg) {
  return finalize_r1(score_r1(u, models, r1_models, cfg), cfg);
}

inline SluOutput r2_decode(const Utterance& u, const DomainModels& models,
                           const RejectionModel& r2_model, const SchemeConfig& cfg) {
  return finalize_r2(score_r2(u, models, r2_model, cfg), cfg.threshold);
}

/// Decision records of one utterance as the error-case analyzer consumes
/// them: the record of the domain holding the pre-rejection pooled top.
inline DecisionRecord pooled_top_record(const ScoredUtterance& s, double tau) {
  const ScoredCandidate* top = &s.candidates.front();
  for (const auto& c : s.candidates) {
    if (ranks_before(c.hypothesis, top->hypothesis)) top = &c;
  }
  DecisionRecord r;
  r.utterance_id = s.id;
  r.hypothesis = top->hypothesis;
  r.accept_prob = top->accept_prob;
  r.decision = threshold_decision(top->accept_prob, tau);
  r.hypothesis_correct = top->correct;
  return r;
}

// ---------------------------------------------------------------------------
// JSONL

inline nlohmann::json to_json(const SluHypothesis& h) {
  nlohmann::json j = {{"domain", h.domain},   {"intent", h.intent},
                      {"tagging", h.tagging}, {"tokens", h.tokens},
                      {"dc", h.dc_score},     {"ic", h.ic_score},
                      {"ner", h.ner_score}};
  j["slu"] = h.slu_score ? nlohmann::json(*h.slu_score) : nlohmann::json(nullptr);
  return j;
}

inline SluHypothesis hypothesis_from_json(const nlohmann::json& j) {
  SluHypothesis h;
  h.domain = j.at("domain").get<std::string>();
  h.intent = j.at("intent").get<std::string>();
  h.tagging = j.at("tagging").get<std::vector<std::string>>();
  h.tokens = j.value("tokens", std::vector<std::string>{});
  h.dc_score = j.at("dc").get<double>();
  h.ic_score = j.at("ic").get<double>();
  h.ner_score = j.at("ner").get<double>();
  if (j.contains("slu") && !j.at("slu").is_null()) h.slu_score = j.at("slu").get<double>();
  return h;
}

inline nlohmann::json to_json(const SluOutput& o) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [d, r] : o.per_domain) {
    per[d] = {{"accept_prob", r.accept_prob},
              {"decision", to_string(r.decision)},
              {"correct", r.hypothesis_correct},
              {"hypothesis", r.hypothesis ? to_json(*r.hypothesis) : nlohmann::json(nullptr)}};
  }
  return {{"id", o.utterance_id},
          {"final", o.final_hypothesis ? to_json(*o.final_hypothesis) : nlohmann::json(nullptr)},
          {"candidate_had_correct", o.candidate_had_correct},
          {"per_domain", per}};
}

inline SluOutput slu_output_from_json(const nlohmann::json& j) {
  SluOutput o;
  o.utterance_id = j.at("id").get<std::string>();
  if (!j.at("final").is_null()) o.final_hypothesis = hypothesis_from_json(j.at("final"));
  o.candidate_had_correct = j.at("candidate_had_correct").get<bool>();
  const auto per = j.value("per_domain", nlohmann::json::object());
  for (const auto& [d, rj] : per.items()) {
    DecisionRecord r;
    r.utterance_id = o.utterance_id;
    r.accept_prob = rj.at("accept_prob").get<double>();
    r.decision = rj.at("decision") == "accept" ? Decision::Accept : Decision::Reject;
    r.hypothesis_correct = rj.at("correct").get<bool>();
    if (!rj.at("hypothesis").is_null()) r.hypothesis = hypothesis_from_json(rj.at("hypothesis"));
    o.per_domain.emplace(d, std::move(r));
  }
  return o;
}

inline void save_outputs(const std::vector<SluOutput>& outs, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path);
  for (const auto& o : outs) f << to_json(o).dump() << '\n';
}

inline std::vector<SluOutput> load_outputs(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingPrerequisite("cannot open " + path);
  std::vector<SluOutput> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(slu_output_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return out;
}

}  // namespace slurej

#endif  // SLUREJ_SCHEMES_HPP_
