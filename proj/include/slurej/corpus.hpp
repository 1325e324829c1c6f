#ifndef SLUREJ_CORPUS_HPP_
#define SLUREJ_CORPUS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slurej/common.hpp"
#include "slurej/types.hpp"

namespace slurej {

struct DomainSpec {
  std::string name;
  double prior = 0.0;
  std::vector<std::string> intents;
  std::vector<std::string> slot_labels;
  /// label -> surface values; a value may span several words.
  std::map<std::string, std::vector<std::string>> lexicons;
  /// intent -> templates such as "read [BookName] from page [PageNumber]".
  std::map<std::string, std::vector<std::string>> templates;
};

struct CatalogSpec {
  std::vector<DomainSpec> domains;
  /// Probability that a slot value is drawn from another domain's lexicons.
  double confusability = 0.0;
  std::uint64_t seed = 1;

  const DomainSpec* find(const std::string& domain) const {
    for (const auto& d : domains) {
      if (d.name == domain) return &d;
    }
    return nullptr;
  }
};

/// Four disjoint partitions of a corpus.
struct DatasetSplit {
  std::vector<Utterance> slu_train;
  std::vector<Utterance> reject_train;
  std::vector<Utterance> dev;
  std::vector<Utterance> test;
};

namespace detail {

struct TemplatePiece {
  bool placeholder = false;
  std::string text;  // literal token or slot label
};

inline std::vector<TemplatePiece> parse_template(const std::string& tmpl) {
  std::vector<TemplatePiece> out;
  for (auto& tok : tokenize(tmpl)) {
    if (tok.size() >= 2 && tok.front() == '[' && tok.back() == ']') {
      out.push_back({true, tok.substr(1, tok.size() - 2)});
    } else {
      out.push_back({false, tok});
    }
  }
  return out;
}

/// tokenize() lowercases, so placeholders are matched case-insensitively.
inline std::string lower(std::string s) {
  for (auto& c : s) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return s;
}

}  // namespace detail

/// Throws ValidationError naming the first offending field.
inline void validate(const CatalogSpec& spec) {
  if (spec.domains.empty()) throw ValidationError("domains: empty");
  if (!(spec.confusability >= 0.0 && spec.confusability <= 1.0)) {
    throw ValidationError("confusability: must lie in [0,1]");
  }
  double prior_sum = 0.0;
  std::set<std::string> names;
  for (std::size_t di = 0; di < spec.domains.size(); ++di) {
    const auto& d = spec.domains[di];
    const std::string where = "domains[" + std::to_string(di) + "]";
    if (d.name.empty()) throw ValidationError(where + ".name: empty");
    if (!names.insert(d.name).second) {
      throw ValidationError(where + ".name: duplicate domain '" + d.name + "'");
    }
    if (!(d.prior >= 0.0)) {
      throw ValidationError(where + ".prior: must be non-negative");
    }
    prior_sum += d.prior;
    if (d.intents.empty()) throw ValidationError(where + ".intents: empty");
    std::map<std::string, std::string> labels;  // lowercase -> declared
    for (const auto& l : d.slot_labels) {
      if (l == kOutsideTag) {
        throw ValidationError(where + ".slot_labels: '" + l + "' is reserved");
      }
      labels[detail::lower(l)] = l;
      auto lex = d.lexicons.find(l);
      if (lex == d.lexicons.end() || lex->second.empty()) {
        throw ValidationError(where + ".slot_value_lexicons." + l + ": empty");
      }
      for (const auto& v : lex->second) {
        if (tokenize(v).empty()) {
          throw ValidationError(where + ".slot_value_lexicons." + l +
                                ": blank value");
        }
      }
    }
    for (const auto& [label, values] : d.lexicons) {
      if (!labels.count(detail::lower(label))) {
        throw ValidationError(where + ".slot_value_lexicons." + label +
                              ": not a declared slot label");
      }
    }
    if (d.templates.empty()) throw ValidationError(where + ".templates: empty");
    for (const auto& intent : d.intents) {
      auto it = d.templates.find(intent);
      if (it == d.templates.end() || it->second.empty()) {
        throw ValidationError(where + ".templates." + intent +
                              ": intent has no template");
      }
    }
    for (const auto& [intent, tmpls] : d.templates) {
      if (std::find(d.intents.begin(), d.intents.end(), intent) ==
          d.intents.end()) {
        throw ValidationError(where + ".templates." + intent +
                              ": unknown intent");
      }
      for (const auto& t : tmpls) {
        auto pieces = detail::parse_template(t);
        if (pieces.empty()) {
          throw ValidationError(where + ".templates." + intent +
                                ": blank template");
        }
        for (const auto& p : pieces) {
          if (p.placeholder && !labels.count(p.text)) {
            throw ValidationError(where + ".templates." + intent +
                                  ": placeholder [" + p.text +
                                  "] names no slot label of " + d.name);
          }
        }
      }
    }
  }
  if (std::abs(prior_sum - 1.0) > 1e-9) {
    throw ValidationError("domain_prior: priors sum to " +
                          std::to_string(prior_sum) + ", expected 1");
  }
}

/// Samples n utterances. Deterministic in (spec, n).
inline std::vector<Utterance> generate_corpus(const CatalogSpec& spec,
                                              std::size_t n) {
  if (n < 1) throw ValidationError("n: must be at least 1");
  validate(spec);

  struct PreparedDomain {
    std::vector<std::string> intents;
    std::vector<std::vector<std::vector<detail::TemplatePiece>>> templates;
    std::map<std::string, std::string> label_case;
    std::vector<std::string> foreign_values;
  };
  std::vector<PreparedDomain> prepared(spec.domains.size());
  for (std::size_t di = 0; di < spec.domains.size(); ++di) {
    const auto& d = spec.domains[di];
    auto& p = prepared[di];
    p.intents = d.intents;
    for (const auto& intent : d.intents) {
      std::vector<std::vector<detail::TemplatePiece>> parsed;
      for (const auto& t : d.templates.at(intent)) {
        parsed.push_back(detail::parse_template(t));
      }
      p.templates.push_back(std::move(parsed));
    }
    for (const auto& l : d.slot_labels) p.label_case[detail::lower(l)] = l;
    for (std::size_t dj = 0; dj < spec.domains.size(); ++dj) {
      if (dj == di) continue;
      for (const auto& [label, values] : spec.domains[dj].lexicons) {
        p.foreign_values.insert(p.foreign_values.end(), values.begin(),
                                values.end());
      }
    }
  }

  Rng rng(spec.seed);
  std::vector<Utterance> out;
  out.reserve(n);
  const int width = static_cast<int>(std::to_string(n).size());
  for (std::size_t i = 0; i < n; ++i) {
    double r = rng.uniform();
    std::size_t di = 0;
    for (; di + 1 < spec.domains.size(); ++di) {
      r -= spec.domains[di].prior;
      if (r < 0.0) break;
    }
    const auto& dom = spec.domains[di];
    const auto& p = prepared[di];
    const std::size_t ii = rng.index(p.intents.size());
    const auto& pieces = p.templates[ii][rng.index(p.templates[ii].size())];

    Utterance u;
    std::string num = std::to_string(i);
    u.id = "utt-" + std::string(width - num.size(), '0') + num;
    u.annotation.domain = dom.name;
    u.annotation.intent = p.intents[ii];
    for (const auto& piece : pieces) {
      if (!piece.placeholder) {
        u.tokens.push_back(piece.text);
        continue;
      }
      const std::string& label = p.label_case.at(piece.text);
      const auto& own = dom.lexicons.at(label);
      const bool borrow =
          !p.foreign_values.empty() && rng.bernoulli(spec.confusability);
      const std::string& value =
          borrow ? p.foreign_values[rng.index(p.foreign_values.size())]
                 : own[rng.index(own.size())];
      SlotSpan span;
      span.start = u.tokens.size();
      for (auto& t : tokenize(value)) u.tokens.push_back(std::move(t));
      span.end = u.tokens.size();
      span.label = label;
      u.annotation.slots.push_back(std::move(span));
    }
    out.push_back(std::move(u));
  }
  return out;
}

/// Checks that an utterance's annotation is consistent with the catalog.
inline void validate_utterance(const Utterance& u, const CatalogSpec& spec) {
  if (u.tokens.empty()) throw ValidationError(u.id + ": tokens empty");
  const DomainSpec* d = spec.find(u.annotation.domain);
  if (!d) {
    throw ValidationError(u.id + ": unknown domain '" + u.annotation.domain +
                          "'");
  }
  if (std::find(d->intents.begin(), d->intents.end(), u.annotation.intent) ==
      d->intents.end()) {
    throw ValidationError(u.id + ": unknown intent '" + u.annotation.intent +
                          "'");
  }
  std::size_t prev_end = 0;
  for (const auto& s : u.annotation.slots) {
    if (s.start >= s.end || s.end > u.tokens.size() || s.start < prev_end) {
      throw ValidationError(u.id + ": slot span [" + std::to_string(s.start) +
                            "," + std::to_string(s.end) + ") invalid");
    }
    prev_end = s.end;
    if (std::find(d->slot_labels.begin(), d->slot_labels.end(), s.label) ==
        d->slot_labels.end()) {
      throw ValidationError(u.id + ": unknown slot label '" + s.label + "'");
    }
  }
}

/// Deterministic shuffle then partition by cumulative fractions.
inline DatasetSplit split_dataset(const std::vector<Utterance>& data,
                                  const std::array<double, 4>& fractions,
                                  std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) {
      throw ValidationError("fractions: each must lie in [0,1]");
    }
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError("fractions: sum to " + std::to_string(sum) +
                          ", expected 1");
  }
  std::set<std::string> ids;
  for (const auto& u : data) {
    if (!ids.insert(u.id).second) {
      throw ValidationError("data: duplicate id '" + u.id + "'");
    }
  }

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x5EED5));
  rng.shuffle(order);

  const double n = static_cast<double>(data.size());
  std::array<std::size_t, 5> bounds{};
  double cum = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    cum += fractions[k];
    bounds[k + 1] = std::min<std::size_t>(
        data.size(), static_cast<std::size_t>(std::llround(n * cum)));
    bounds[k + 1] = std::max(bounds[k + 1], bounds[k]);
  }
  bounds[4] = data.size();

  DatasetSplit split;
  std::array<std::vector<Utterance>*, 4> parts{
      &split.slu_train, &split.reject_train, &split.dev, &split.test};
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t i = bounds[k]; i < bounds[k + 1]; ++i) {
      parts[k]->push_back(data[order[i]]);
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const AsrObservation& a) {
  nlohmann::json confnet = nlohmann::json::array();
  for (const auto& slot : a.confnet) {
    nlohmann::json arcs = nlohmann::json::array();
    for (const auto& arc : slot) {
      arcs.push_back(
          {{"tok", arc.token}, {"conf", arc.confidence}, {"post", arc.posterior}});
    }
    confnet.push_back(std::move(arcs));
  }
  return {{"onebest", a.onebest},
          {"confnet", std::move(confnet)},
          {"frames", a.n_frames},
          {"arcs", a.arcs_per_frame}};
}

inline nlohmann::json to_json(const Annotation& a) {
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& s : a.slots) {
    slots.push_back({{"start", s.start}, {"end", s.end}, {"label", s.label}});
  }
  return {{"domain", a.domain}, {"intent", a.intent}, {"slots", slots}};
}

inline nlohmann::json to_json(const Utterance& u) {
  nlohmann::json j = {{"id", u.id},
                      {"text", join(u.tokens)},
                      {"annotation", to_json(u.annotation)}};
  if (u.asr) j["asr"] = to_json(*u.asr);
  return j;
}

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& j,
                                   const std::string& name,
                                   const std::string& path) {
  if (!j.is_object() || !j.contains(name)) {
    throw ParseError("missing field '" + path + name + "'");
  }
  return j.at(name);
}

template <typename T>
T get_as(const nlohmann::json& j, const std::string& name,
         const std::string& path) {
  const auto& v = field(j, name, path);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError("field '" + path + name + "' has the wrong type");
  }
}

}  // namespace detail

inline AsrObservation asr_from_json(const nlohmann::json& j) {
  AsrObservation a;
  a.onebest = detail::get_as<std::vector<std::string>>(j, "onebest", "asr.");
  const auto& cn = detail::field(j, "confnet", "asr.");
  if (!cn.is_array()) throw ParseError("field 'asr.confnet' must be an array");
  for (const auto& slot : cn) {
    if (!slot.is_array()) throw ParseError("field 'asr.confnet' slot not array");
    std::vector<ConfNetArc> arcs;
    for (const auto& arc : slot) {
      arcs.push_back({detail::get_as<std::string>(arc, "tok", "asr.confnet."),
                      detail::get_as<double>(arc, "conf", "asr.confnet."),
                      detail::get_as<double>(arc, "post", "asr.confnet.")});
    }
    a.confnet.push_back(std::move(arcs));
  }
  a.n_frames = detail::get_as<int>(j, "frames", "asr.");
  a.arcs_per_frame = detail::get_as<std::vector<int>>(j, "arcs", "asr.");
  return a;
}

inline Utterance utterance_from_json(const nlohmann::json& j) {
  Utterance u;
  u.id = detail::get_as<std::string>(j, "id", "");
  u.tokens = tokenize(detail::get_as<std::string>(j, "text", ""));
  if (u.tokens.empty()) throw ParseError("field 'text' is empty");
  const auto& a = detail::field(j, "annotation", "");
  u.annotation.domain = detail::get_as<std::string>(a, "domain", "annotation.");
  u.annotation.intent = detail::get_as<std::string>(a, "intent", "annotation.");
  const auto& slots = detail::field(a, "slots", "annotation.");
  if (!slots.is_array()) {
    throw ParseError("field 'annotation.slots' must be an array");
  }
  for (const auto& s : slots) {
    SlotSpan span;
    span.start = detail::get_as<std::size_t>(s, "start", "annotation.slots.");
    span.end = detail::get_as<std::size_t>(s, "end", "annotation.slots.");
    span.label = detail::get_as<std::string>(s, "label", "annotation.slots.");
    if (span.start >= span.end || span.end > u.tokens.size()) {
      throw ParseError("field 'annotation.slots' span out of range");
    }
    u.annotation.slots.push_back(std::move(span));
  }
  if (j.contains("asr") && !j.at("asr").is_null()) {
    u.asr = asr_from_json(j.at("asr"));
  }
  return u;
}

inline void save_dataset(const std::vector<Utterance>& data,
                         const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  for (const auto& u : data) out << to_json(u).dump() << '\n';
  if (!out) throw Error("write failed: " + path);
}

inline std::vector<Utterance> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingPrerequisite("cannot open " + path);
  std::vector<Utterance> out;
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back(utterance_from_json(j));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), lineno);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    if (!ids.insert(out.back().id).second) {
      throw ParseError("duplicate id '" + out.back().id + "'", lineno);
    }
  }
  return out;
}

inline nlohmann::json to_json(const CatalogSpec& spec) {
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : spec.domains) {
    domains.push_back({{"name", d.name},
                       {"prior", d.prior},
                       {"intents", d.intents},
                       {"slot_labels", d.slot_labels},
                       {"slot_value_lexicons", d.lexicons},
                       {"utterance_templates", d.templates}});
  }
  return {{"domains", domains},
          {"confusability", spec.confusability},
          {"seed", spec.seed}};
}

inline CatalogSpec catalog_from_json(const nlohmann::json& j) {
  CatalogSpec spec;
  try {
    for (const auto& dj : j.at("domains")) {
      DomainSpec d;
      d.name = dj.at("name").get<std::string>();
      d.prior = dj.at("prior").get<double>();
      d.intents = dj.at("intents").get<std::vector<std::string>>();
      d.slot_labels = dj.value("slot_labels", std::vector<std::string>{});
      d.lexicons = dj.value("slot_value_lexicons",
                            std::map<std::string, std::vector<std::string>>{});
      d.templates = dj.at("utterance_templates")
                        .get<std::map<std::string, std::vector<std::string>>>();
      spec.domains.push_back(std::move(d));
    }
    spec.confusability = j.value("confusability", 0.0);
    spec.seed = j.value("seed", std::uint64_t{1});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("catalog: ") + e.what());
  }
  return spec;
}

}  // namespace slurej

#endif  // SLUREJ_CORPUS_HPP_
