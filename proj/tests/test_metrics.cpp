#include <gtest/gtest.h>

#include "support.hpp"

using namespace slurej;
using namespace slurej::testing;

namespace {

std::vector<Utterance> golds(const std::vector<RawUtterance>& fx) {
  std::vector<Utterance> g;
  for (const auto& r : fx) g.push_back(fixture_gold(r));
  return g;
}

std::vector<ScoredUtterance> scored(const std::vector<RawUtterance>& fx, Scheme s) {
  std::vector<ScoredUtterance> out;
  for (const auto& r : fx) out.push_back(fixture_scored(r, s));
  return out;
}

std::vector<SluOutput> finalize(const std::vector<ScoredUtterance>& sc, double tau) {
  std::vector<SluOutput> out;
  for (const auto& s : sc) {
    out.push_back(s.scheme == Scheme::R1 ? finalize_r1(s, tau) : finalize_r2(s, tau));
  }
  return out;
}

SweepCurve far_curve(std::vector<std::pair<double, double>> points) {
  SweepCurve c;
  for (auto [tau, far] : points) {
    SweepPoint p;
    p.threshold = tau;
    p.metrics.far = far;
    p.metrics.frr = 10.0 * tau;
    c.points.push_back(p);
  }
  return c;
}

}  // namespace

TEST(MetricsR2, TenUtteranceExample) {
  std::vector<Utterance> gold;
  std::vector<SluOutput> outs;
  for (int i = 0; i < 10; ++i) {
    gold.push_back(make_utterance("u" + std::to_string(i), {"w"}, "Books", "Gold"));
    SluOutput o;
    o.utterance_id = gold.back().id;
    auto right = make_hypothesis("Books", "Gold", {"O"}, 0.5);
    auto wrong = make_hypothesis("Books", "Other", {"O"}, 0.5);
    if (i < 3) {
      o.final_hypothesis = wrong;
    } else if (i == 3) {
      o.candidate_had_correct = true;
    } else {
      o.final_hypothesis = right;
      o.candidate_had_correct = true;
    }
    outs.push_back(o);
  }
  auto m = compute_metrics_r2(outs, gold);
  EXPECT_DOUBLE_EQ(m.far, 30.0);
  EXPECT_DOUBLE_EQ(m.frr, 10.0);
  EXPECT_EQ(m.counts.true_accepts, 6u);
  EXPECT_EQ(m.n, 10u);
}

TEST(MetricsR2, IdMismatchIsAnError) {
  std::vector<Utterance> gold{make_utterance("a", {"w"}, "Books", "Gold")};
  SluOutput o;
  o.utterance_id = "b";
  EXPECT_THROW(compute_metrics_r2(std::vector<SluOutput>{o}, gold), ValidationError);
  EXPECT_THROW(compute_metrics_r2(std::vector<SluOutput>{}, gold), ValidationError);
}

TEST(MetricsR2, ZeroThresholdIsTheNoRejectionBaseline) {
  auto fx = random_fixture(3, 40);
  auto g = golds(fx);
  auto m = compute_metrics_r2(finalize(scored(fx, Scheme::R2), 0.0), g);
  EXPECT_EQ(m.frr, 0.0);
  std::size_t wrong_tops = 0;
  for (const auto& s : scored(fx, Scheme::R2)) wrong_tops += !s.candidates[0].correct;
  EXPECT_DOUBLE_EQ(m.far, 100.0 * wrong_tops / 40.0);
  EXPECT_FALSE(m.f1);
}

TEST(MetricsR2, MatchesBruteForceTally) {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    auto fx = random_fixture(seed, 20);
    for (double tau : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      auto m = compute_metrics_r2(finalize(scored(fx, Scheme::R2), tau), golds(fx));
      auto t = brute_force_r2(fx, tau);
      EXPECT_EQ(m.counts.false_accepts, t.fa);
      EXPECT_EQ(m.counts.false_rejects, t.fr);
      EXPECT_EQ(m.counts.true_accepts, t.ta);
      EXPECT_EQ(m.counts.true_rejects, t.tr);
    }
  }
}

TEST(MetricsR1, CornerCasesFromPooling) {
  auto fx = random_fixture(4, 2);
  auto outs = finalize(scored(fx, Scheme::R1), 0.5);
  auto g = golds(fx);
  auto m0 = compute_metrics_r1(std::vector<SluOutput>{outs[0]}, std::vector<Utterance>{g[0]});
  EXPECT_EQ(m0.overall.counts.false_rejects, 1u);
  EXPECT_EQ(m0.overall.counts.false_accepts, 0u);
  auto m1 = compute_metrics_r1(std::vector<SluOutput>{outs[1]}, std::vector<Utterance>{g[1]});
  EXPECT_EQ(m1.overall.counts.false_accepts, 1u);
  EXPECT_EQ(m1.overall.counts.false_rejects, 0u);
  // the upstream rejection is still a per-module false reject
  EXPECT_EQ(m1.per_module.at(fx[1].gold_domain).counts.false_rejects, 1u);
}

TEST(MetricsR1, MatchesBruteForceTallyAtBothStages) {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    auto fx = random_fixture(seed, 20);
    for (double tau : {0.0, 0.3, 0.5, 0.9}) {
      auto m = compute_metrics_r1(finalize(scored(fx, Scheme::R1), tau), golds(fx));
      auto t = brute_force_r1(fx, tau);
      EXPECT_EQ(m.overall.counts.false_accepts, t.fa);
      EXPECT_EQ(m.overall.counts.false_rejects, t.fr);
      EXPECT_EQ(m.overall.counts.true_accepts, t.ta);
      EXPECT_EQ(m.overall.counts.discarded, t.discarded);
      EXPECT_EQ(m.overall.counts.total(), 20u);
      for (const auto& [d, c] : t.module) {
        const auto& pm = m.per_module.at(d).counts;
        EXPECT_EQ(pm.false_accepts, c[0]);
        EXPECT_EQ(pm.false_rejects, c[1]);
        EXPECT_EQ(pm.true_accepts, c[2]);
        EXPECT_EQ(pm.true_rejects, c[3]);
        EXPECT_DOUBLE_EQ(m.per_module.at(d).far, 100.0 * c[0] / 20.0);
      }
    }
  }
}

TEST(MetricsR1, MissingRecordsAreAnError) {
  auto fx = random_fixture(5, 3);
  auto outs = finalize(scored(fx, Scheme::R1), 0.5);
  outs[2].per_domain.erase("Music");
  EXPECT_THROW(compute_metrics_r1(outs, golds(fx)), ValidationError);
}

// Raising the threshold can turn a true accept into a false accept after
// pooling, so the overall R1 FAR is not monotone.
TEST(MetricsR1, OverallFarNotMonotoneInThreshold) {
  RawUtterance r;
  r.id = "x";
  r.gold_domain = "Books";
  r.candidates = {{"Books", 0.9, 0.6, true}, {"Music", 0.5, 0.8, false}};
  std::vector<RawUtterance> fx{r};
  auto low = compute_metrics_r1(finalize(scored(fx, Scheme::R1), 0.5), golds(fx));
  auto high = compute_metrics_r1(finalize(scored(fx, Scheme::R1), 0.7), golds(fx));
  EXPECT_EQ(low.overall.far, 0.0);
  EXPECT_EQ(high.overall.far, 100.0);
}

TEST(F1Error, Examples) {
  EXPECT_NEAR(*f1_error(4.9, 5.0), 5.0, 0.1);
  EXPECT_EQ(format_pct(f1_error(7.1, 3.1)), "4.3");
  EXPECT_EQ(format_pct(f1_error(4.5, 2.5)), "3.2");
  for (double x : {0.1, 1.0, 3.7, 50.0}) EXPECT_NEAR(*f1_error(x, x), x, 1e-12);
  EXPECT_FALSE(f1_error(10.9, 0.0));
  EXPECT_FALSE(f1_error(0.0, 3.0));
  EXPECT_EQ(format_pct(f1_error(10.9, 0.0)), "-");
}

TEST(Sweep, EndpointsAndMonotonicity) {
  auto fx = random_fixture(6, 50);
  auto g = golds(fx);
  auto r2 = sweep(scored(fx, Scheme::R2), g, uniform_grid(100));
  ASSERT_EQ(r2.points.size(), 101u);
  EXPECT_EQ(r2.points.front().metrics.frr, 0.0);
  for (std::size_t i = 1; i < r2.points.size(); ++i) {
    EXPECT_LE(r2.points[i].metrics.far, r2.points[i - 1].metrics.far);
    EXPECT_GE(r2.points[i].metrics.frr, r2.points[i - 1].metrics.frr);
  }
  double max_p = 0.0;
  for (const auto& r : fx) {
    for (const auto& c : r.candidates) max_p = std::max(max_p, c.accept_prob);
  }
  const std::array<double, 1> above{std::nextafter(max_p, 2.0)};
  EXPECT_EQ(sweep(scored(fx, Scheme::R2), g, above).points[0].metrics.far, 0.0);
  EXPECT_EQ(sweep(scored(fx, Scheme::R1), g, above).points[0].metrics.far, 0.0);

  auto r1 = sweep(scored(fx, Scheme::R1), g, uniform_grid(100));
  EXPECT_EQ(r1.points.front().metrics.frr, 0.0);
  for (std::size_t i = 1; i < r1.points.size(); ++i) {
    EXPECT_GE(r1.points[i].metrics.frr, r1.points[i - 1].metrics.frr);
    for (const auto& [d, m] : r1.points[i].per_module) {
      const auto& prev = r1.points[i - 1].per_module.at(d);
      EXPECT_LE(m.far, prev.far);
      EXPECT_GE(m.frr, prev.frr);
    }
  }
}

TEST(Sweep, GridValidation) {
  auto fx = random_fixture(7, 5);
  const std::array<double, 2> backwards{0.5, 0.4};
  const std::array<double, 1> outside{1.5};
  EXPECT_THROW(sweep(scored(fx, Scheme::R2), golds(fx), backwards), ValidationError);
  EXPECT_THROW(sweep(scored(fx, Scheme::R2), golds(fx), outside), ValidationError);
}

TEST(OperatingPoint, Examples) {
  auto c = far_curve({{0.2, 10.0}, {0.5, 5.0}, {0.8, 2.0}});
  EXPECT_DOUBLE_EQ(select_operating_point(c, OperatingTarget::max_far(5.0)), 0.5);
  try {
    select_operating_point(c, OperatingTarget::max_far(0.0));
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("[2.0, 10.0]"), std::string::npos) << e.what();
  }
  auto fx = random_fixture(8, 30);
  auto curve = sweep(scored(fx, Scheme::R2), golds(fx), uniform_grid(20));
  const double tau = select_operating_point(curve, OperatingTarget::max_frr(0.0));
  for (const auto& p : curve.points) {
    if (p.threshold <= tau) EXPECT_EQ(p.metrics.frr, 0.0);
  }
  for (const auto& p : curve.points) {
    if (p.threshold > tau) EXPECT_GT(p.metrics.frr, 0.0);
  }
  EXPECT_THROW(select_operating_point(SweepCurve{}, OperatingTarget::max_far(1.0)),
               ValidationError);
}

TEST(Report, CsvAndJson) {
  auto fx = random_fixture(9, 10);
  auto curve = sweep(scored(fx, Scheme::R2), golds(fx), uniform_grid(4));
  auto csv = sweep_csv(curve);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_EQ(csv.rfind("threshold,far,frr,f1", 0), 0u);
  auto j = to_json(curve.points.front().metrics);
  EXPECT_EQ(j.at("n"), 10);
  EXPECT_TRUE(j.at("f1").is_null());
}
