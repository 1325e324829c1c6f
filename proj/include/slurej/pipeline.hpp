#ifndef SLUREJ_PIPELINE_HPP_
#define SLUREJ_PIPELINE_HPP_

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slurej/asr.hpp"
#include "slurej/corpus.hpp"
#include "slurej/default_catalog.hpp"
#include "slurej/metrics.hpp"
#include "slurej/rejection.hpp"
#include "slurej/schemes.hpp"
#include "slurej/slu.hpp"

namespace slurej {

/// Everything one experiment needs, loaded from a single config file.
struct RunConfig {
  std::uint64_t seed = 1;
  CatalogSpec catalog = default_catalog();
  std::size_t corpus_size = 25000;
  std::array<double, 4> fractions{0.15, 0.69, 0.08, 0.08};
  std::optional<CorruptionRates> asr;
  NBestConfig nbest;
  LogisticOptions slu;
  RejectionHyperparams rejection;
  std::vector<Scheme> schemes{Scheme::R1, Scheme::R2};
  double threshold = 0.5;
  std::map<std::string, double> domain_thresholds;
  std::vector<FeatureFlags> ablation{FeatureFlags::parse("score"),
                                     FeatureFlags::parse("score,utt"),
                                     FeatureFlags::parse("score,utt,hyp")};
  std::size_t sweep_points = 101;
  std::string out_dir = "run";

  TextSource text() const { return asr ? TextSource::AsrOneBest : TextSource::Transcript; }

  std::uint64_t stream(std::uint64_t k) const { return derive_seed(seed, k); }

  SchemeConfig scheme_config(Scheme s, const FeatureFlags& f) const {
    SchemeConfig c;
    c.scheme = s;
    c.threshold = threshold;
    for (const auto& d : catalog.domains) {
      auto it = domain_thresholds.find(d.name);
      c.domain_thresholds[d.name] = it == domain_thresholds.end() ? threshold : it->second;
    }
    c.features = f;
    c.nbest = nbest;
    c.text = text();
    return c;
  }

  void validate() const {
    slurej::validate(catalog);
    if (corpus_size < 4) throw ValidationError("corpus.size: must be at least 4");
    if (asr) asr->validate();
    nbest.validate();
    rejection.validate();
    if (schemes.empty()) throw ValidationError("scheme.schemes: empty");
    if (ablation.empty()) throw ValidationError("features: empty");
    for (const auto& f : ablation) {
      f.validate();
      if (f.asr && !asr) throw ValidationError("features: 'asr' requires asr.enabled");
    }
    if (!(threshold >= 0.0 && threshold <= 1.0)) {
      throw ValidationError("scheme.threshold: must lie in [0,1]");
    }
    for (const auto& [d, t] : domain_thresholds) {
      if (!catalog.find(d)) throw ValidationError("scheme.domain_thresholds: unknown domain " + d);
      if (!(t >= 0.0 && t <= 1.0)) {
        throw ValidationError("scheme.domain_thresholds." + d + ": must lie in [0,1]");
      }
    }
    if (sweep_points < 2) throw ValidationError("sweep_points: must be at least 2");
  }
};

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("corpus")) {
      const auto& cj = j.at("corpus");
      if (cj.contains("catalog")) c.catalog = catalog_from_json(cj.at("catalog"));
      c.catalog.confusability = cj.value("confusability", c.catalog.confusability);
      c.corpus_size = cj.value("size", c.corpus_size);
      if (cj.contains("fractions")) {
        auto v = cj.at("fractions").get<std::vector<double>>();
        if (v.size() != 4) throw ValidationError("corpus.fractions: need four values");
        std::copy(v.begin(), v.end(), c.fractions.begin());
      }
    }
    if (j.contains("asr") && j.at("asr").value("enabled", false)) {
      const auto& aj = j.at("asr");
      CorruptionRates r;
      r.substitution = aj.value("substitution", 0.08);
      r.insertion = aj.value("insertion", 0.02);
      r.deletion = aj.value("deletion", 0.02);
      c.asr = r;
    }
    if (j.contains("nbest")) {
      const auto& nj = j.at("nbest");
      c.nbest.k_dc = nj.value("k_dc", c.nbest.k_dc);
      c.nbest.k_ic = nj.value("k_ic", c.nbest.k_ic);
      c.nbest.k_ner = nj.value("k_ner", c.nbest.k_ner);
    }
    if (j.contains("slu")) {
      c.slu.epochs = j.at("slu").value("epochs", c.slu.epochs);
      c.slu.learning_rate = j.at("slu").value("learning_rate", c.slu.learning_rate);
    }
    if (j.contains("rejection")) c.rejection = hyperparams_from_json(j.at("rejection"), c.rejection);
    if (j.contains("scheme")) {
      const auto& sj = j.at("scheme");
      if (sj.contains("schemes")) {
        c.schemes.clear();
        for (const auto& s : sj.at("schemes")) c.schemes.push_back(parse_scheme(s.get<std::string>()));
      }
      c.threshold = sj.value("threshold", c.threshold);
      c.domain_thresholds = sj.value("domain_thresholds", c.domain_thresholds);
    }
    if (j.contains("features")) {
      c.ablation.clear();
      for (const auto& f : j.at("features")) c.ablation.push_back(FeatureFlags::parse(f.get<std::string>()));
    }
    c.sweep_points = j.value("sweep_points", c.sweep_points);
    if (j.contains("paths")) c.out_dir = j.at("paths").value("out", c.out_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json ablation = nlohmann::json::array();
  for (const auto& f : c.ablation) ablation.push_back(f.key());
  nlohmann::json schemes = nlohmann::json::array();
  for (auto s : c.schemes) schemes.push_back(to_string(s));
  nlohmann::json j = {
      {"seed", c.seed},
      {"corpus",
       {{"size", c.corpus_size},
        {"fractions", c.fractions},
        {"confusability", c.catalog.confusability},
        {"catalog", to_json(c.catalog)}}},
      {"nbest", {{"k_dc", c.nbest.k_dc}, {"k_ic", c.nbest.k_ic}, {"k_ner", c.nbest.k_ner}}},
      {"slu", {{"epochs", c.slu.epochs}, {"learning_rate", c.slu.learning_rate}}},
      {"rejection", to_json(c.rejection)},
      {"scheme",
       {{"schemes", schemes},
        {"threshold", c.threshold},
        {"domain_thresholds", c.domain_thresholds}}},
      {"features", ablation},
      {"sweep_points", c.sweep_points},
      {"paths", {{"out", c.out_dir}}}};
  j["asr"] = c.asr ? nlohmann::json{{"enabled", true},
                                    {"substitution", c.asr->substitution},
                                    {"insertion", c.asr->insertion},
                                    {"deletion", c.asr->deletion}}
                   : nlohmann::json{{"enabled", false}};
  return j;
}

using Logger = std::function<void(const std::string&)>;

/// Every word the catalog can produce, sorted. Used as the substitution
/// inventory of the simulated recognizer.
inline std::vector<std::string> catalog_vocabulary(const CatalogSpec& c) {
  std::set<std::string> words;
  for (const auto& d : c.domains) {
    for (const auto& [intent, tmpls] : d.templates) {
      for (const auto& t : tmpls) {
        for (const auto& p : detail::parse_template(t)) {
          if (!p.placeholder) words.insert(p.text);
        }
      }
    }
    for (const auto& [label, values] : d.lexicons) {
      for (const auto& v : values) {
        for (auto& w : tokenize(v)) words.insert(std::move(w));
      }
    }
  }
  return {words.begin(), words.end()};
}

/// Generates and splits the corpus. With ASR enabled, every split except the
/// SLU training split carries a simulated recognizer observation.
inline DatasetSplit build_corpus(const RunConfig& cfg) {
  cfg.validate();
  CatalogSpec spec = cfg.catalog;
  spec.seed = cfg.stream(1);
  auto data = generate_corpus(spec, cfg.corpus_size);
  auto split = split_dataset(data, cfg.fractions, cfg.stream(2));
  if (cfg.asr) {
    const auto vocab = catalog_vocabulary(cfg.catalog);
    attach_asr(split.reject_train, *cfg.asr, cfg.stream(51), vocab);
    attach_asr(split.dev, *cfg.asr, cfg.stream(52), vocab);
    attach_asr(split.test, *cfg.asr, cfg.stream(53), vocab);
  }
  return split;
}

inline DomainModels train_slu(const RunConfig& cfg, const DatasetSplit& split) {
  LogisticOptions o = cfg.slu;
  o.seed = cfg.stream(3);
  return train_domain_models(split.slu_train, cfg.catalog, o);
}

/// Decoded rejection-training material shared by every feature configuration.
struct RejectionData {
  std::map<std::string, std::vector<HypothesisSample>> r1_train, r1_dev;
  std::vector<HypothesisSample> r2_train, r2_dev;
};

inline RejectionData prepare_rejection_data(const RunConfig& cfg, const DatasetSplit& split,
                                            const DomainModels& models) {
  RejectionData d;
  d.r1_train = build_r1_training_sets(split.reject_train, models, cfg.nbest, cfg.text());
  d.r1_dev = build_r1_training_sets(split.dev, models, cfg.nbest, cfg.text());
  d.r2_train = build_r2_training_set(split.reject_train, models, cfg.nbest, cfg.text());
  d.r2_dev = build_r2_training_set(split.dev, models, cfg.nbest, cfg.text());
  return d;
}

inline std::string describe_epoch(const std::string& tag, const EpochReport& r) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%s epoch %d loss %.4f dev FAR %s FRR %s F1 %s%s", tag.c_str(),
                r.epoch, r.train_loss, format_pct(r.dev.far).c_str(), format_pct(r.dev.frr).c_str(),
                format_pct(r.dev.f1).c_str(), r.selected ? " *" : "");
  return buf;
}

inline RejectionModel train_rejection_module(const RunConfig& cfg,
                                             const std::vector<HypothesisSample>& train_set,
                                             const std::vector<HypothesisSample>& dev_set,
                                             const FeatureFlags& flags, VocabScope scope,
                                             std::span<const DomainLabels> labels,
                                             const std::string& domain, std::uint64_t seed,
                                             const Logger& log) {
  auto vocab = build_vocab(train_set, scope, labels);
  RejectionHyperparams hp = cfg.rejection;
  hp.features = flags;
  hp.seed = seed;
  auto model = make_model(hp, vocab, domain);
  auto train_b = encode_all(model.vocab, train_set);
  auto dev_b = encode_all(model.vocab, dev_set);
  const std::string tag = (domain.empty() ? std::string("r2") : "r1/" + domain) + " [" +
                          flags.key() + "]";
  return train(std::move(model), train_b, dev_b, [&](const EpochReport& r) {
    if (log) log(describe_epoch(tag, r));
  });
}

inline std::map<std::string, RejectionModel> train_r1_models(const RunConfig& cfg,
                                                             const RejectionData& data,
                                                             const DomainModels& models,
                                                             const FeatureFlags& flags,
                                                             const Logger& log = {}) {
  std::map<std::string, RejectionModel> out;
  auto labels = domain_labels(models);
  for (std::size_t di = 0; di < labels.size(); ++di) {
    const auto& name = labels[di].domain;
    std::span<const DomainLabels> one(&labels[di], 1);
    out.emplace(name, train_rejection_module(cfg, data.r1_train.at(name), data.r1_dev.at(name),
                                             flags, VocabScope::SingleDomain, one, name,
                                             cfg.stream(100 + di), log));
  }
  return out;
}

inline RejectionModel train_r2_model(const RunConfig& cfg, const RejectionData& data,
                                     const DomainModels& models, const FeatureFlags& flags,
                                     const Logger& log = {}) {
  auto labels = domain_labels(models);
  return train_rejection_module(cfg, data.r2_train, data.r2_dev, flags, VocabScope::AllDomains,
                                labels, "", cfg.stream(200), log);
}

// ---------------------------------------------------------------------------
// Evaluation

struct FeatureRow {
  FeatureFlags flags;
  Metrics metrics;
  std::map<std::string, Metrics> per_module;  // R1 only
  SweepCurve curve;
  std::vector<ScoredUtterance> scored;
};

inline FeatureRow evaluate_scored(std::vector<ScoredUtterance> scored,
                                  const std::vector<Utterance>& test, const SchemeConfig& sc,
                                  std::size_t sweep_points) {
  FeatureRow row;
  row.flags = sc.features;
  std::vector<SluOutput> outs;
  for (const auto& s : scored) {
    outs.push_back(sc.scheme == Scheme::R1 ? finalize_r1(s, sc) : finalize_r2(s, sc.threshold));
  }
  if (sc.scheme == Scheme::R1) {
    auto m = compute_metrics_r1(outs, test);
    row.metrics = m.overall;
    row.per_module = std::move(m.per_module);
  } else {
    row.metrics = compute_metrics_r2(outs, test);
  }
  auto grid = uniform_grid(sweep_points - 1);
  row.curve = sweep(scored, test, grid);
  row.scored = std::move(scored);
  return row;
}

inline FeatureRow evaluate_r1(const RunConfig& cfg, const std::vector<Utterance>& test,
                              const DomainModels& models,
                              const std::map<std::string, RejectionModel>& r1,
                              const FeatureFlags& flags) {
  auto sc = cfg.scheme_config(Scheme::R1, flags);
  std::vector<ScoredUtterance> scored;
  scored.reserve(test.size());
  for (const auto& u : test) scored.push_back(score_r1(u, models, r1, sc));
  return evaluate_scored(std::move(scored), test, sc, cfg.sweep_points);
}

inline FeatureRow evaluate_r2(const RunConfig& cfg, const std::vector<Utterance>& test,
                              const DomainModels& models, const RejectionModel& r2,
                              const FeatureFlags& flags) {
  auto sc = cfg.scheme_config(Scheme::R2, flags);
  std::vector<ScoredUtterance> scored;
  scored.reserve(test.size());
  for (const auto& u : test) scored.push_back(score_r2(u, models, r2, sc));
  return evaluate_scored(std::move(scored), test, sc, cfg.sweep_points);
}

inline Metrics evaluate_no_rejection(const RunConfig& cfg, const std::vector<Utterance>& test,
                                     const DomainModels& models) {
  std::vector<SluOutput> outs;
  for (const auto& u : test) {
    outs.push_back(finalize_r2(score_no_rejection(u, models, cfg.nbest, cfg.text()), 0.0));
  }
  return compute_metrics_r2(outs, test);
}

/// Error-case analysis between two R1 rows that differ only by ASR features.
inline ErrorCaseReport analyze_asr_cases(const FeatureRow& without_asr,
                                         const FeatureRow& with_asr,
                                         const std::vector<Utterance>& test, double tau) {
  std::vector<DecisionRecord> a, b;
  std::map<std::string, bool> flags;
  for (const auto& s : without_asr.scored) a.push_back(pooled_top_record(s, tau));
  for (const auto& s : with_asr.scored) b.push_back(pooled_top_record(s, tau));
  for (const auto& u : test) flags[u.id] = asr_errorful(u);
  return classify_error_cases(a, b, flags);
}

}  // namespace slurej

#endif  // SLUREJ_PIPELINE_HPP_
