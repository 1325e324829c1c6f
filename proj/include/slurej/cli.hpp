#ifndef SLUREJ_CLI_HPP_
#define SLUREJ_CLI_HPP_

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "slurej/pipeline.hpp"

namespace slurej::cli {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kInternal = 1, kInvalid = 2, kMissing = 3 };

/// Where every command reads and writes, rooted at the output directory.
struct Layout {
  fs::path root;

  fs::path corpus_dir() const { return root / "corpus"; }
  fs::path split(const std::string& name) const { return corpus_dir() / (name + ".jsonl"); }
  fs::path manifest() const { return corpus_dir() / "manifest.json"; }
  fs::path slu_model() const { return root / "models" / "slu.json"; }
  fs::path r1_dir(const FeatureFlags& f) const { return root / "models" / "r1" / f.key(); }
  fs::path r1_model(const FeatureFlags& f, const std::string& domain) const {
    return r1_dir(f) / (domain + ".json");
  }
  fs::path r2_model(const FeatureFlags& f) const {
    return root / "models" / "r2" / (f.key() + ".json");
  }
  fs::path reports() const { return root / "reports"; }
  fs::path report_json() const { return reports() / "report.json"; }
  fs::path report_txt() const { return reports() / "report.txt"; }
  fs::path sweep_csv(Scheme s, const FeatureFlags& f) const {
    return reports() / (std::string("sweep_") + to_string(s) + "_" + f.key() + ".csv");
  }
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scheme;
  std::optional<std::string> features;
  std::optional<std::string> out;
  std::string stage;
  std::optional<double> max_far, max_frr;
};

inline void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
  if (!out) throw Error("write failed: " + p.string());
}

inline nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingPrerequisite("missing " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

/// Config file plus command-line overrides.
inline RunConfig resolve_config(const Options& o) {
  RunConfig cfg;
  if (!o.config.empty()) {
    std::ifstream in(o.config, std::ios::binary);
    if (!in) throw ValidationError("config: cannot open " + o.config);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("config: " + std::string(e.what()));
    }
    cfg = run_config_from_json(j);
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.scheme) cfg.schemes = {parse_scheme(*o.scheme)};
  if (o.features) cfg.ablation = {FeatureFlags::parse(*o.features)};
  if (o.out) cfg.out_dir = *o.out;
  cfg.validate();
  return cfg;
}

inline std::vector<Utterance> load_split(const Layout& l, const std::string& name) {
  return load_dataset(l.split(name).string());
}

inline DomainModels load_slu(const Layout& l) {
  if (!fs::exists(l.slu_model())) {
    throw MissingPrerequisite("SLU models not found at " + l.slu_model().string() +
                              "; run 'train --stage slu' first");
  }
  return load_slu_models(l.slu_model().string());
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_gen_corpus(const RunConfig& cfg, std::ostream& out) {
  Layout l{cfg.out_dir};
  auto split = build_corpus(cfg);
  fs::create_directories(l.corpus_dir());
  const std::pair<const char*, const std::vector<Utterance>*> parts[] = {
      {"slu_train", &split.slu_train},
      {"reject_train", &split.reject_train},
      {"dev", &split.dev},
      {"test", &split.test}};
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [name, data] : parts) {
    save_dataset(*data, l.split(name).string());
    counts[name] = data->size();
  }
  nlohmann::json manifest = {{"seed", cfg.seed},
                             {"counts", counts},
                             {"confusability", cfg.catalog.confusability},
                             {"asr", cfg.asr.has_value()},
                             {"config", to_json(cfg)}};
  write_text(l.manifest(), manifest.dump(2) + "\n");
  out << "wrote " << split.slu_train.size() << "/" << split.reject_train.size() << "/"
      << split.dev.size() << "/" << split.test.size() << " utterances to "
      << l.corpus_dir().string() << "\n";
  return kOk;
}

inline int cmd_train(const RunConfig& cfg, const std::string& stage, std::ostream& out) {
  Layout l{cfg.out_dir};
  Logger log = [&](const std::string& s) { out << s << "\n"; };
  if (stage == "slu") {
    DatasetSplit split;
    split.slu_train = load_split(l, "slu_train");
    auto models = train_slu(cfg, split);
    fs::create_directories(l.slu_model().parent_path());
    save_slu_models(models, l.slu_model().string());
    out << "trained SLU models for " << models.domains.size() << " domains\n";
    return kOk;
  }
  if (stage != "reject-r1" && stage != "reject-r2") {
    throw ValidationError("--stage must be slu, reject-r1 or reject-r2");
  }
  auto models = load_slu(l);
  DatasetSplit split;
  split.reject_train = load_split(l, "reject_train");
  split.dev = load_split(l, "dev");
  auto data = prepare_rejection_data(cfg, split, models);
  for (const auto& f : cfg.ablation) {
    if (stage == "reject-r1") {
      auto r1 = train_r1_models(cfg, data, models, f, log);
      fs::create_directories(l.r1_dir(f));
      for (const auto& [d, m] : r1) save_rejection_model(m, l.r1_model(f, d).string());
      out << "saved " << r1.size() << " R1 modules [" << f.key() << "]\n";
    } else {
      auto r2 = train_r2_model(cfg, data, models, f, log);
      fs::create_directories(l.r2_model(f).parent_path());
      save_rejection_model(r2, l.r2_model(f).string());
      out << "saved R2 module [" << f.key() << "]\n";
    }
  }
  return kOk;
}

inline std::map<std::string, RejectionModel> load_r1(const Layout& l, const DomainModels& models,
                                                     const FeatureFlags& f) {
  std::map<std::string, RejectionModel> r1;
  for (const auto& d : models.domains) {
    auto p = l.r1_model(f, d.domain);
    if (!fs::exists(p)) {
      throw MissingPrerequisite("missing R1 module " + p.string() +
                                "; run 'train --stage reject-r1' first");
    }
    r1.emplace(d.domain, load_rejection_model(p.string()));
  }
  return r1;
}

inline RejectionModel load_r2(const Layout& l, const FeatureFlags& f) {
  auto p = l.r2_model(f);
  if (!fs::exists(p)) {
    throw MissingPrerequisite("missing R2 module " + p.string() +
                              "; run 'train --stage reject-r2' first");
  }
  return load_rejection_model(p.string());
}

/// Row label in the cumulative style of an ablation table.
inline std::string row_label(const FeatureFlags& f) {
  if (f.asr) return "+ ASR features";
  if (f.hypothesis) return "+ SLU hypothesis embedding";
  if (f.utterance) return "+ Utterance embedding";
  return "SLU score";
}

struct SchemeReport {
  Scheme scheme;
  std::vector<FeatureRow> rows;
};

inline nlohmann::json metrics_with_modules(const FeatureRow& r) {
  nlohmann::json j = to_json(r.metrics);
  j["features"] = r.flags.key();
  if (!r.per_module.empty()) {
    nlohmann::json mods = nlohmann::json::object();
    for (const auto& [d, m] : r.per_module) mods[d] = to_json(m);
    j["per_module"] = mods;
  }
  return j;
}

inline std::string render_report(const nlohmann::json& rep) {
  std::ostringstream s;
  char buf[160];
  auto cell = [](const nlohmann::json& v) {
    return v.is_null() ? std::string("-") : format_pct(v.get<double>());
  };
  s << "test utterances: " << rep.at("n").get<std::size_t>() << "\n";
  for (const auto& t : rep.at("tables")) {
    const bool r1 = t.at("scheme") == "r1";
    s << "\n" << (r1 ? "R1: Domain specific rejection" : "R2: System level rejection") << "\n";
    std::snprintf(buf, sizeof buf, "%-28s %6s %6s %6s\n", "Features", "FAR", "FRR", "F1");
    s << buf;
    const auto& b = rep.at("baseline");
    std::snprintf(buf, sizeof buf, "%-28s %6s %6s %6s\n", "-", cell(b.at("far")).c_str(),
                  cell(b.at("frr")).c_str(), cell(b.at("f1")).c_str());
    s << buf;
    for (const auto& r : t.at("rows")) {
      std::snprintf(buf, sizeof buf, "%-28s %6s %6s %6s\n",
                    r.at("label").get<std::string>().c_str(), cell(r.at("far")).c_str(),
                    cell(r.at("frr")).c_str(), cell(r.at("f1")).c_str());
      s << buf;
    }
    if (r1) {
      for (const auto& r : t.at("rows")) {
        s << "  per-module [" << r.at("features").get<std::string>() << "]\n";
        for (const auto& [d, m] : r.at("per_module").items()) {
          std::snprintf(buf, sizeof buf, "    %-24s %6s %6s %6s\n", d.c_str(),
                        cell(m.at("far")).c_str(), cell(m.at("frr")).c_str(),
                        cell(m.at("f1")).c_str());
          s << buf;
        }
      }
    }
  }
  if (rep.contains("cases")) {
    for (const auto& c : rep.at("cases")) {
      s << "\nASR error cases (" << c.at("scheme").get<std::string>() << ", "
        << c.at("without").get<std::string>() << " vs " << c.at("with").get<std::string>()
        << ")\n";
      std::snprintf(buf, sizeof buf, "%-6s %7s %10s %10s %7s %7s\n", "case", "count",
                    "err w/o", "err with", "fixed", "broken");
      s << buf;
      for (const auto& [k, v] : c.at("report").at("summary").items()) {
        std::snprintf(buf, sizeof buf, "%-6s %7zu %10zu %10zu %7zu %7zu\n", k.c_str(),
                      v.at("cases").get<std::size_t>(),
                      v.at("errors_without_asr").get<std::size_t>(),
                      v.at("errors_with_asr").get<std::size_t>(),
                      v.at("fixed_by_asr").get<std::size_t>(),
                      v.at("broken_by_asr").get<std::size_t>());
        s << buf;
      }
    }
  }
  return s.str();
}

/// Runs every configured scheme and feature row on the test split.
inline std::vector<SchemeReport> evaluate_all(const RunConfig& cfg, const Layout& l,
                                              const DomainModels& models,
                                              const std::vector<Utterance>& test) {
  std::vector<SchemeReport> out;
  for (auto s : cfg.schemes) {
    SchemeReport rep{s, {}};
    for (const auto& f : cfg.ablation) {
      if (s == Scheme::R1) {
        rep.rows.push_back(evaluate_r1(cfg, test, models, load_r1(l, models, f), f));
      } else {
        rep.rows.push_back(evaluate_r2(cfg, test, models, load_r2(l, f), f));
      }
    }
    out.push_back(std::move(rep));
  }
  return out;
}

inline int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  Layout l{cfg.out_dir};
  auto models = load_slu(l);
  auto test = load_split(l, "test");
  if (test.empty()) throw ValidationError("test split is empty");
  auto reports = evaluate_all(cfg, l, models, test);

  nlohmann::json rep;
  rep["n"] = test.size();
  rep["seed"] = cfg.seed;
  rep["threshold"] = cfg.threshold;
  rep["baseline"] = to_json(evaluate_no_rejection(cfg, test, models));
  rep["tables"] = nlohmann::json::array();
  for (const auto& sr : reports) {
    nlohmann::json t = {{"scheme", to_string(sr.scheme)}, {"rows", nlohmann::json::array()}};
    for (const auto& r : sr.rows) {
      auto row = metrics_with_modules(r);
      row["label"] = row_label(r.flags);
      t["rows"].push_back(row);
      write_text(l.sweep_csv(sr.scheme, r.flags), sweep_csv(r.curve));
    }
    rep["tables"].push_back(t);
  }
  if (cfg.asr) {
    rep["cases"] = nlohmann::json::array();
    for (const auto& sr : reports) {
      for (const auto& with : sr.rows) {
        if (!with.flags.asr) continue;
        FeatureFlags base = with.flags;
        base.asr = false;
        for (const auto& without : sr.rows) {
          if (!(without.flags == base)) continue;
          auto cases = analyze_asr_cases(without, with, test, cfg.threshold);
          rep["cases"].push_back({{"scheme", to_string(sr.scheme)},
                                  {"without", base.key()},
                                  {"with", with.flags.key()},
                                  {"report", to_json(cases)}});
        }
      }
    }
  }
  write_text(l.report_json(), rep.dump(2) + "\n");
  const auto text = render_report(rep);
  write_text(l.report_txt(), text);
  out << text;
  return kOk;
}

inline int cmd_sweep(const RunConfig& cfg, const Options& o, std::ostream& out) {
  Layout l{cfg.out_dir};
  auto models = load_slu(l);
  auto test = load_split(l, "test");
  if (test.empty()) throw ValidationError("test split is empty");
  for (const auto& sr : evaluate_all(cfg, l, models, test)) {
    for (const auto& r : sr.rows) {
      const auto path = l.sweep_csv(sr.scheme, r.flags);
      write_text(path, sweep_csv(r.curve));
      out << to_string(sr.scheme) << " [" << r.flags.key() << "] -> " << path.string() << "\n";
      if (o.max_far) {
        double t = select_operating_point(r.curve, OperatingTarget::max_far(*o.max_far));
        out << "  FAR <= " << format_pct(*o.max_far) << " at threshold " << t << "\n";
      }
      if (o.max_frr) {
        double t = select_operating_point(r.curve, OperatingTarget::max_frr(*o.max_frr));
        out << "  FRR <= " << format_pct(*o.max_frr) << " at threshold " << t << "\n";
      }
    }
  }
  return kOk;
}

inline int cmd_report(const RunConfig& cfg, std::ostream& out) {
  Layout l{cfg.out_dir};
  if (!fs::exists(l.report_json())) {
    throw MissingPrerequisite("no report at " + l.report_json().string() + "; run 'eval' first");
  }
  const auto text = render_report(read_json(l.report_json()));
  write_text(l.report_txt(), text);
  out << text;
  return kOk;
}

/// Parses argv and dispatches. Never throws; errors map to exit codes.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"SLU hypothesis rejection experiments"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "experiment config (JSON)");
    sub->add_option("--seed", o.seed, "override the config seed");
    sub->add_option("--scheme", o.scheme, "r1 or r2")->check(CLI::IsMember({"r1", "r2"}));
    sub->add_option("--features", o.features, "comma list from score,utt,hyp,asr");
    sub->add_option("--out", o.out, "output directory");
  };
  auto* gen = app.add_subcommand("gen-corpus", "generate and split the synthetic corpus");
  auto* trn = app.add_subcommand("train", "train SLU or rejection models");
  auto* evl = app.add_subcommand("eval", "evaluate and write the report");
  auto* swp = app.add_subcommand("sweep", "write threshold sweeps");
  auto* rpt = app.add_subcommand("report", "re-render the saved report");
  for (auto* s : {gen, trn, evl, swp, rpt}) common(s);
  trn->add_option("--stage", o.stage, "slu, reject-r1 or reject-r2")
      ->required()
      ->check(CLI::IsMember({"slu", "reject-r1", "reject-r2"}));
  swp->add_option("--max-far", o.max_far, "report the smallest threshold with FAR at most this");
  swp->add_option("--max-frr", o.max_frr, "report the largest threshold with FRR at most this");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kOk : kInvalid;
  }
  try {
    const RunConfig cfg = resolve_config(o);
    if (gen->parsed()) return cmd_gen_corpus(cfg, out);
    if (trn->parsed()) return cmd_train(cfg, o.stage, out);
    if (evl->parsed()) return cmd_eval(cfg, out);
    if (swp->parsed()) return cmd_sweep(cfg, o, out);
    return cmd_report(cfg, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const MissingPrerequisite& e) {
    err << "error: " << e.what() << "\n";
    return kMissing;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInternal;
  }
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"slurej"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace slurej::cli

#endif  // SLUREJ_CLI_HPP_
