#ifndef SLUREJ_SLU_HPP_
#define SLUREJ_SLU_HPP_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "slurej/common.hpp"
#include "slurej/corpus.hpp"
#include "slurej/types.hpp"

namespace slurej {

/// token -> dense index. Unknown tokens map to -1.
class Vocabulary {
 public:
  int add(const std::string& tok) {
    auto [it, inserted] = index_.try_emplace(tok, static_cast<int>(tokens_.size()));
    if (inserted) tokens_.push_back(tok);
    return it->second;
  }
  int lookup(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? -1 : it->second;
  }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::unordered_map<std::string, int> index_;
  std::vector<std::string> tokens_;
};

struct LogisticOptions {
  int epochs = 8;
  double learning_rate = 0.2;
  std::uint64_t seed = 1;
};

/// Multinomial logistic regression over sparse binary features.
class SoftmaxRegression {
 public:
  SoftmaxRegression() = default;
  SoftmaxRegression(std::size_t n_classes, std::size_t n_features)
      : n_classes_(n_classes),
        n_features_(n_features),
        weights_(n_classes * n_features, 0.0),
        bias_(n_classes, 0.0) {}

  std::size_t n_classes() const { return n_classes_; }
  std::size_t n_features() const { return n_features_; }

  std::vector<double> predict(std::span<const int> features) const {
    std::vector<double> z(bias_);
    for (int f : features) {
      for (std::size_t k = 0; k < n_classes_; ++k) {
        z[k] += weights_[k * n_features_ + static_cast<std::size_t>(f)];
      }
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) sum += (v = std::exp(v - mx));
    for (auto& v : z) v /= sum;
    return z;
  }

  void fit(const std::vector<std::vector<int>>& x, const std::vector<int>& y,
           const LogisticOptions& opt) {
    std::vector<std::size_t> order(x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(opt.seed);
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
      rng.shuffle(order);
      const double lr = opt.learning_rate / (1.0 + 0.5 * epoch);
      for (std::size_t i : order) {
        auto p = predict(x[i]);
        p[static_cast<std::size_t>(y[i])] -= 1.0;
        for (std::size_t k = 0; k < n_classes_; ++k) {
          const double g = lr * p[k];
          bias_[k] -= g;
          for (int f : x[i]) {
            weights_[k * n_features_ + static_cast<std::size_t>(f)] -= g;
          }
        }
      }
    }
  }

  nlohmann::json to_json() const {
    return {{"classes", n_classes_},
            {"features", n_features_},
            {"weights", weights_},
            {"bias", bias_}};
  }
  static SoftmaxRegression from_json(const nlohmann::json& j) {
    SoftmaxRegression m;
    m.n_classes_ = j.at("classes").get<std::size_t>();
    m.n_features_ = j.at("features").get<std::size_t>();
    m.weights_ = j.at("weights").get<std::vector<double>>();
    m.bias_ = j.at("bias").get<std::vector<double>>();
    if (m.weights_.size() != m.n_classes_ * m.n_features_ ||
        m.bias_.size() != m.n_classes_) {
      throw ParseError("logistic model: tensor size mismatch");
    }
    return m;
  }

 private:
  std::size_t n_classes_ = 0;
  std::size_t n_features_ = 0;
  std::vector<double> weights_;  // row-major [class][feature]
  std::vector<double> bias_;
};

/// DC, IC and NER for one domain.
struct DomainScorer {
  std::string domain;
  std::vector<std::string> intents;
  std::vector<std::string> tags;  // tags[0] == "O"
  SoftmaxRegression dc;           // class 1 = in-domain
  SoftmaxRegression ic;
  SoftmaxRegression ner;
};

struct DomainModels {
  Vocabulary vocab;
  std::vector<DomainScorer> domains;

  const DomainScorer* find(const std::string& name) const {
    for (const auto& d : domains) {
      if (d.domain == name) return &d;
    }
    return nullptr;
  }
};

struct SluHypothesis {
  std::string domain;
  std::string intent;
  std::vector<std::string> tagging;
  /// Tokens the tagging refers to (ASR 1-best when decoding ASR text).
  std::vector<std::string> tokens;
  double dc_score = 0.0;
  double ic_score = 0.0;
  double ner_score = 0.0;
  std::optional<double> slu_score;

  friend bool operator==(const SluHypothesis&, const SluHypothesis&) = default;
};

struct NBestConfig {
  int k_dc = 1;
  int k_ic = 3;
  int k_ner = 2;

  void validate() const {
    if (k_dc < 1 || k_ic < 1 || k_ner < 1) {
      throw ValidationError("nbest: k_dc, k_ic and k_ner must be >= 1");
    }
  }
};

namespace detail {

inline std::vector<int> bag_of_tokens(const Vocabulary& vocab,
                                      std::span<const std::string> tokens) {
  std::vector<int> f;
  for (const auto& t : tokens) {
    int id = vocab.lookup(t);
    if (id >= 0) f.push_back(id);
  }
  return f;
}

/// Window features (radius 1) for token i: identity of tokens i-1, i, i+1.
/// Position-specific blocks of size |V|+2 (BOS, EOS appended).
inline std::vector<int> window_features(const Vocabulary& vocab,
                                        std::span<const std::string> tokens,
                                        std::size_t i) {
  const int block = static_cast<int>(vocab.size()) + 2;
  const int bos = block - 2;
  const int eos = block - 1;
  std::vector<int> f;
  for (int off = -1; off <= 1; ++off) {
    const long pos = static_cast<long>(i) + off;
    int id;
    if (pos < 0) {
      id = bos;
    } else if (pos >= static_cast<long>(tokens.size())) {
      id = eos;
    } else {
      id = vocab.lookup(tokens[static_cast<std::size_t>(pos)]);
      if (id < 0) continue;
    }
    f.push_back((off + 1) * block + id);
  }
  return f;
}

inline std::size_t window_feature_count(const Vocabulary& vocab) {
  return 3 * (vocab.size() + 2);
}

}  // namespace detail

/// Trains DC/IC/NER for every catalog domain on the SLU training split.
inline DomainModels train_domain_models(const std::vector<Utterance>& slu_train,
                                        const CatalogSpec& catalog,
                                        const LogisticOptions& opt = {}) {
  validate(catalog);
  DomainModels m;
  for (const auto& u : slu_train) {
    validate_utterance(u, catalog);
    for (const auto& t : u.tokens) m.vocab.add(t);
  }
  const std::size_t V = m.vocab.size();

  std::vector<std::vector<int>> bags;
  bags.reserve(slu_train.size());
  for (const auto& u : slu_train) {
    bags.push_back(detail::bag_of_tokens(m.vocab, u.tokens));
  }

  for (std::size_t di = 0; di < catalog.domains.size(); ++di) {
    const auto& spec = catalog.domains[di];
    DomainScorer s;
    s.domain = spec.name;
    s.intents = spec.intents;
    s.tags.push_back(kOutsideTag);
    for (const auto& l : spec.slot_labels) s.tags.push_back(l);

    std::vector<int> dc_y;
    std::vector<std::vector<int>> ic_x, ner_x;
    std::vector<int> ic_y, ner_y;
    for (std::size_t i = 0; i < slu_train.size(); ++i) {
      const auto& u = slu_train[i];
      const bool in_domain = u.annotation.domain == spec.name;
      dc_y.push_back(in_domain ? 1 : 0);
      if (!in_domain) continue;
      auto it = std::find(s.intents.begin(), s.intents.end(),
                          u.annotation.intent);
      ic_x.push_back(bags[i]);
      ic_y.push_back(static_cast<int>(it - s.intents.begin()));
      auto tagging = tagging_of(u.annotation, u.tokens.size());
      for (std::size_t t = 0; t < u.tokens.size(); ++t) {
        ner_x.push_back(detail::window_features(m.vocab, u.tokens, t));
        auto tag = std::find(s.tags.begin(), s.tags.end(), tagging[t]);
        ner_y.push_back(static_cast<int>(tag - s.tags.begin()));
      }
    }
    if (ic_x.empty()) {
      throw ValidationError("domain '" + spec.name +
                            "' has no training utterances");
    }

    LogisticOptions o = opt;
    s.dc = SoftmaxRegression(2, V);
    o.seed = derive_seed(opt.seed, 3 * di);
    s.dc.fit(bags, dc_y, o);
    s.ic = SoftmaxRegression(s.intents.size(), V);
    o.seed = derive_seed(opt.seed, 3 * di + 1);
    s.ic.fit(ic_x, ic_y, o);
    s.ner = SoftmaxRegression(s.tags.size(), detail::window_feature_count(m.vocab));
    o.seed = derive_seed(opt.seed, 3 * di + 2);
    s.ner.fit(ner_x, ner_y, o);
    m.domains.push_back(std::move(s));
  }
  return m;
}

/// Probability that the tokens belong to the domain.
inline double domain_score(const DomainModels& m, const DomainScorer& d,
                           std::span<const std::string> tokens) {
  return d.dc.predict(detail::bag_of_tokens(m.vocab, tokens))[1];
}

inline std::vector<double> intent_distribution(
    const DomainModels& m, const DomainScorer& d,
    std::span<const std::string> tokens) {
  return d.ic.predict(detail::bag_of_tokens(m.vocab, tokens));
}

struct Tagging {
  std::vector<std::string> labels;
  double probability = 1.0;
};

/// Greedy per-token decode followed by single-token swaps to the second-best
/// label, lowest margin first. Returns at most k taggings.
inline std::vector<Tagging> ner_candidates(const DomainModels& m,
                                           const DomainScorer& d,
                                           std::span<const std::string> tokens,
                                           int k) {
  struct TokenChoice {
    std::size_t best, second;
    double p_best, p_second;
  };
  std::vector<TokenChoice> choice;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto p = d.ner.predict(detail::window_features(m.vocab, tokens, i));
    std::size_t best = 0, second = p.size() > 1 ? 1 : 0;
    if (p.size() > 1 && p[second] > p[best]) std::swap(best, second);
    for (std::size_t c = 2; c < p.size(); ++c) {
      if (p[c] > p[best]) {
        second = best;
        best = c;
      } else if (p[c] > p[second]) {
        second = c;
      }
    }
    choice.push_back({best, second, p[best], p[second]});
  }

  auto make = [&](long swapped) {
    Tagging t;
    for (std::size_t i = 0; i < choice.size(); ++i) {
      const bool sw = static_cast<long>(i) == swapped;
      t.labels.push_back(d.tags[sw ? choice[i].second : choice[i].best]);
      t.probability *= sw ? choice[i].p_second : choice[i].p_best;
    }
    t.probability = std::max(t.probability, std::numeric_limits<double>::min());
    return t;
  };

  std::vector<Tagging> out{make(-1)};
  if (d.tags.size() < 2) return out;
  std::vector<std::size_t> order(choice.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return choice[a].p_best - choice[a].p_second <
           choice[b].p_best - choice[b].p_second;
  });
  for (std::size_t j = 0; j < order.size() && out.size() < static_cast<std::size_t>(k); ++j) {
    out.push_back(make(static_cast<long>(order[j])));
  }
  return out;
}

/// Cartesian product of kept DC x IC x NER outputs, per catalog domain.
/// Hypotheses carry component scores only; see rerank().
inline std::vector<std::vector<SluHypothesis>> generate_hypotheses(
    const DomainModels& m, std::span<const std::string> tokens,
    const NBestConfig& cfg) {
  cfg.validate();
  if (tokens.empty()) throw ValidationError("utterance: no tokens");
  std::vector<std::vector<SluHypothesis>> out;
  const std::vector<std::string> token_copy(tokens.begin(), tokens.end());
  for (const auto& d : m.domains) {
    const double dc = domain_score(m, d, tokens);
    auto ic = intent_distribution(m, d, tokens);
    std::vector<std::size_t> intents(ic.size());
    for (std::size_t i = 0; i < intents.size(); ++i) intents[i] = i;
    std::stable_sort(intents.begin(), intents.end(),
                     [&](std::size_t a, std::size_t b) { return ic[a] > ic[b]; });
    intents.resize(std::min<std::size_t>(intents.size(), cfg.k_ic));
    auto taggings = ner_candidates(m, d, tokens, cfg.k_ner);

    std::vector<SluHypothesis> hyps;
    for (std::size_t ii : intents) {
      for (const auto& t : taggings) {
        SluHypothesis h;
        h.domain = d.domain;
        h.intent = d.intents[ii];
        h.tagging = t.labels;
        h.tokens = token_copy;
        h.dc_score = dc;
        h.ic_score = ic[ii];
        h.ner_score = t.probability;
        hyps.push_back(std::move(h));
      }
    }
    out.push_back(std::move(hyps));
  }
  return out;
}

inline std::vector<std::vector<SluHypothesis>> generate_hypotheses(
    const DomainModels& m, const Utterance& u, const NBestConfig& cfg,
    TextSource src = TextSource::Transcript) {
  return generate_hypotheses(m, decoded_tokens(u, src), cfg);
}

/// Geometric mean of the three component scores.
inline double reranker_score(double dc, double ic, double ner) {
  for (double v : {dc, ic, ner}) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValidationError("rerank: component score " + std::to_string(v) +
                            " outside [0,1]");
    }
  }
  return std::cbrt(dc * ic * ner);
}

/// Strict ordering: slu_score descending, then (domain, intent, tagging).
inline bool ranks_before(const SluHypothesis& a, const SluHypothesis& b) {
  const double sa = a.slu_score.value_or(-1.0);
  const double sb = b.slu_score.value_or(-1.0);
  if (sa != sb) return sa > sb;
  if (a.domain != b.domain) return a.domain < b.domain;
  if (a.intent != b.intent) return a.intent < b.intent;
  return a.tagging < b.tagging;
}

inline std::vector<SluHypothesis> rerank(std::vector<SluHypothesis> hyps) {
  for (auto& h : hyps) {
    h.slu_score = reranker_score(h.dc_score, h.ic_score, h.ner_score);
  }
  std::sort(hyps.begin(), hyps.end(), ranks_before);
  return hyps;
}

/// Exact match against the gold annotation. When the hypothesis was decoded
/// over the gold tokens, the per-token tagging must match; over ASR text the
/// slot (label, value) sequence must match instead.
inline bool hypothesis_matches(const SluHypothesis& h, const Utterance& gold) {
  if (h.domain != gold.annotation.domain || h.intent != gold.annotation.intent) {
    return false;
  }
  if (h.tokens.empty() || h.tokens == gold.tokens) {
    return h.tagging == tagging_of(gold.annotation, gold.tokens.size());
  }
  return slot_values(h.tokens, h.tagging) ==
         slot_values(gold.tokens, tagging_of(gold.annotation, gold.tokens.size()));
}

// ---------------------------------------------------------------------------
// Persistence

inline constexpr int kSluModelVersion = 1;

inline nlohmann::json to_json(const DomainModels& m) {
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : m.domains) {
    domains.push_back({{"domain", d.domain},
                       {"intents", d.intents},
                       {"tags", d.tags},
                       {"dc", d.dc.to_json()},
                       {"ic", d.ic.to_json()},
                       {"ner", d.ner.to_json()}});
  }
  return {{"format", "slurej-slu-models"},
          {"version", kSluModelVersion},
          {"vocab", m.vocab.tokens()},
          {"domains", domains}};
}

inline DomainModels slu_models_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "slurej-slu-models") {
      throw ParseError("not an SLU model file");
    }
    if (j.at("version").get<int>() != kSluModelVersion) {
      throw ParseError("unsupported SLU model version");
    }
    DomainModels m;
    for (const auto& t : j.at("vocab")) m.vocab.add(t.get<std::string>());
    for (const auto& dj : j.at("domains")) {
      DomainScorer d;
      d.domain = dj.at("domain").get<std::string>();
      d.intents = dj.at("intents").get<std::vector<std::string>>();
      d.tags = dj.at("tags").get<std::vector<std::string>>();
      d.dc = SoftmaxRegression::from_json(dj.at("dc"));
      d.ic = SoftmaxRegression::from_json(dj.at("ic"));
      d.ner = SoftmaxRegression::from_json(dj.at("ner"));
      m.domains.push_back(std::move(d));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("SLU model file: ") + e.what());
  }
}

inline void save_slu_models(const DomainModels& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << to_json(m).dump() << '\n';
}

inline DomainModels load_slu_models(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingPrerequisite("cannot open " + path);
  try {
    return slu_models_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace slurej

#endif  // SLUREJ_SLU_HPP_
