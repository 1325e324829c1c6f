#ifndef SLUREJ_METRICS_HPP_
#define SLUREJ_METRICS_HPP_

#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slurej/common.hpp"
#include "slurej/rates.hpp"
#include "slurej/schemes.hpp"
#include "slurej/slu.hpp"

namespace slurej {

struct Counts {
  std::size_t false_accepts = 0;
  std::size_t false_rejects = 0;
  std::size_t true_accepts = 0;
  std::size_t true_rejects = 0;
  /// R1 overall only: every candidate rejected and none was correct.
  std::size_t discarded = 0;

  std::size_t total() const {
    return false_accepts + false_rejects + true_accepts + true_rejects + discarded;
  }
  Counts& operator+=(const Counts& o) {
    false_accepts += o.false_accepts;
    false_rejects += o.false_rejects;
    true_accepts += o.true_accepts;
    true_rejects += o.true_rejects;
    discarded += o.discarded;
    return *this;
  }
  friend bool operator==(const Counts&, const Counts&) = default;
};

/// Percentages over the full test-set size n.
struct Metrics {
  double far = 0.0;
  double frr = 0.0;
  std::optional<double> f1;
  std::size_t n = 0;
  Counts counts;
};

inline Metrics make_metrics(const Counts& c, std::size_t n) {
  Metrics m;
  m.n = n;
  m.counts = c;
  if (n > 0) {
    m.far = 100.0 * static_cast<double>(c.false_accepts) / static_cast<double>(n);
    m.frr = 100.0 * static_cast<double>(c.false_rejects) / static_cast<double>(n);
  }
  m.f1 = f1_error(m.far, m.frr);
  return m;
}

using GoldIndex = std::map<std::string, const Utterance*>;

namespace detail {

inline GoldIndex index_gold(std::span<const SluOutput> outputs,
                            std::span<const Utterance> gold) {
  GoldIndex idx;
  for (const auto& u : gold) {
    if (!idx.emplace(u.id, &u).second) {
      throw ValidationError("metrics: duplicate gold id '" + u.id + "'");
    }
  }
  if (outputs.size() != gold.size()) {
    throw ValidationError("metrics: " + std::to_string(outputs.size()) +
                          " outputs for " + std::to_string(gold.size()) + " gold utterances");
  }
  std::map<std::string, int> seen;
  for (const auto& o : outputs) {
    if (!idx.count(o.utterance_id)) {
      throw ValidationError("metrics: output id '" + o.utterance_id + "' not in gold");
    }
    if (seen[o.utterance_id]++) {
      throw ValidationError("metrics: output id '" + o.utterance_id + "' repeated");
    }
  }
  return idx;
}

}  // namespace detail

/// Accepted incorrect top = false accept; rejected correct top = false reject.
inline Metrics compute_metrics_r2(std::span<const SluOutput> outputs,
                                  std::span<const Utterance> gold) {
  auto idx = detail::index_gold(outputs, gold);
  Counts c;
  for (const auto& o : outputs) {
    const Utterance& g = *idx.at(o.utterance_id);
    if (o.final_hypothesis) {
      if (hypothesis_matches(*o.final_hypothesis, g)) ++c.true_accepts;
      else ++c.false_accepts;
    } else if (o.candidate_had_correct) {
      ++c.false_rejects;
    } else {
      ++c.true_rejects;
    }
  }
  return make_metrics(c, outputs.size());
}

struct R1Metrics {
  std::map<std::string, Metrics> per_module;
  Metrics overall;
};

/// Per-module metrics on each domain's top hypothesis, then system-level
/// metrics after pooling: a false accept is an incorrect final hypothesis; a
/// false reject is an utterance whose correct candidate was rejected along
/// with every other candidate.
inline R1Metrics compute_metrics_r1(std::span<const SluOutput> outputs,
                                    std::span<const Utterance> gold) {
  auto idx = detail::index_gold(outputs, gold);
  std::map<std::string, Counts> modules;
  std::vector<std::string> domain_names;
  if (!outputs.empty()) {
    for (const auto& [d, r] : outputs.front().per_domain) domain_names.push_back(d);
  }
  if (domain_names.empty() && !outputs.empty()) {
    throw ValidationError("metrics: R1 outputs carry no per-domain records");
  }
  Counts overall;
  for (const auto& o : outputs) {
    const Utterance& g = *idx.at(o.utterance_id);
    if (o.per_domain.size() != domain_names.size()) {
      throw ValidationError("metrics: '" + o.utterance_id + "' is missing per-domain records");
    }
    bool any_correct = false;
    for (const auto& d : domain_names) {
      auto it = o.per_domain.find(d);
      if (it == o.per_domain.end() || !it->second.hypothesis) {
        throw ValidationError("metrics: '" + o.utterance_id + "' has no record for " + d);
      }
      const bool correct = hypothesis_matches(*it->second.hypothesis, g);
      any_correct = any_correct || correct;
      const bool accepted = it->second.decision == Decision::Accept;
      auto& c = modules[d];
      if (accepted) ++(correct ? c.true_accepts : c.false_accepts);
      else ++(correct ? c.false_rejects : c.true_rejects);
    }
    if (o.final_hypothesis) {
      if (hypothesis_matches(*o.final_hypothesis, g)) ++overall.true_accepts;
      else ++overall.false_accepts;
    } else if (any_correct) {
      ++overall.false_rejects;
    } else {
      ++overall.discarded;
    }
  }
  R1Metrics m;
  for (const auto& [d, c] : modules) m.per_module[d] = make_metrics(c, outputs.size());
  m.overall = make_metrics(overall, outputs.size());
  return m;
}

// ---------------------------------------------------------------------------
// Threshold sweeps

struct SweepPoint {
  double threshold = 0.0;
  Metrics metrics;
  /// R1 only.
  std::map<std::string, Metrics> per_module;
};

struct SweepCurve {
  std::vector<SweepPoint> points;
};

/// k+1 evenly spaced thresholds i/k on [0,1].
inline std::vector<double> uniform_grid(std::size_t k = 100) {
  std::vector<double> g;
  for (std::size_t i = 0; i <= k; ++i) g.push_back(static_cast<double>(i) / static_cast<double>(k));
  return g;
}

inline void validate_grid(std::span<const double> grid) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0 && grid[i] <= 1.0)) {
      throw ValidationError("sweep: threshold outside [0,1]");
    }
    if (i && !(grid[i] > grid[i - 1])) {
      throw ValidationError("sweep: grid must be strictly increasing");
    }
  }
}

/// Re-thresholds fixed model outputs at every grid point.
inline SweepCurve sweep(std::span<const ScoredUtterance> scored,
                        std::span<const Utterance> gold, std::span<const double> grid) {
  validate_grid(grid);
  SweepCurve curve;
  for (double tau : grid) {
    std::vector<SluOutput> outs;
    outs.reserve(scored.size());
    bool r1 = !scored.empty() && scored.front().scheme == Scheme::R1;
    for (const auto& s : scored) outs.push_back(r1 ? finalize_r1(s, tau) : finalize_r2(s, tau));
    SweepPoint p;
    p.threshold = tau;
    if (r1) {
      auto m = compute_metrics_r1(outs, gold);
      p.metrics = m.overall;
      p.per_module = std::move(m.per_module);
    } else {
      p.metrics = compute_metrics_r2(outs, gold);
    }
    curve.points.push_back(std::move(p));
  }
  return curve;
}

struct OperatingTarget {
  enum class Kind { MaxFar, MaxFrr };
  Kind kind = Kind::MaxFar;
  double value = 0.0;

  static OperatingTarget max_far(double v) { return {Kind::MaxFar, v}; }
  static OperatingTarget max_frr(double v) { return {Kind::MaxFrr, v}; }
};

/// Smallest threshold meeting a FAR ceiling, or largest meeting an FRR ceiling.
inline double select_operating_point(const SweepCurve& curve, const OperatingTarget& target) {
  if (curve.points.empty()) throw ValidationError("operating point: empty curve");
  const bool far = target.kind == OperatingTarget::Kind::MaxFar;
  std::optional<double> chosen;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& p : curve.points) {
    const double v = far ? p.metrics.far : p.metrics.frr;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    if (v <= target.value) {
      if (far && !chosen) chosen = p.threshold;
      if (!far) chosen = p.threshold;
    }
  }
  if (!chosen) {
    throw ValidationError(std::string("operating point: no threshold reaches ") +
                          (far ? "FAR" : "FRR") + " <= " + format_pct(target.value) +
                          "; achievable range [" + format_pct(lo) + ", " + format_pct(hi) + "]");
  }
  return *chosen;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const Metrics& m) {
  return {{"far", m.far},
          {"frr", m.frr},
          {"f1", m.f1 ? nlohmann::json(*m.f1) : nlohmann::json(nullptr)},
          {"n", m.n},
          {"false_accepts", m.counts.false_accepts},
          {"false_rejects", m.counts.false_rejects},
          {"true_accepts", m.counts.true_accepts},
          {"true_rejects", m.counts.true_rejects},
          {"discarded", m.counts.discarded}};
}

inline std::string sweep_csv(const SweepCurve& c) {
  std::string out = "threshold,far,frr,f1,false_accepts,false_rejects\n";
  char buf[160];
  for (const auto& p : c.points) {
    char f1[32] = "";
    if (p.metrics.f1) std::snprintf(f1, sizeof f1, "%.4f", *p.metrics.f1);
    std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.4f,%s,%zu,%zu\n", p.threshold, p.metrics.far,
                  p.metrics.frr, f1, p.metrics.counts.false_accepts,
                  p.metrics.counts.false_rejects);
    out += buf;
  }
  return out;
}

}  // namespace slurej

#endif  // SLUREJ_METRICS_HPP_
