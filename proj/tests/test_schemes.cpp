#include <gtest/gtest.h>

#include "support.hpp"

using namespace slurej;
using namespace slurej::testing;

namespace {

ScoredCandidate candidate(const std::string& domain, double score, double p, bool correct) {
  return {make_hypothesis(domain, correct ? "Gold" : "Other", {"O"}, score), p, correct};
}

ScoredUtterance r1_scored(std::vector<ScoredCandidate> c) {
  ScoredUtterance s;
  s.id = "u";
  s.scheme = Scheme::R1;
  s.candidates = std::move(c);
  return s;
}

struct Fixture {
  CatalogSpec spec = tiny_catalog(0.2, 21);
  DomainModels models;
  std::vector<Utterance> held_out;
  Fixture() {
    auto data = generate_corpus(spec, 900);
    std::vector<Utterance> slu(data.begin(), data.begin() + 600);
    held_out.assign(data.begin() + 600, data.end());
    LogisticOptions o;
    o.seed = 21;
    models = train_domain_models(slu, spec, o);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST(TrainingSets, R1LabelsEveryUtteranceAgainstDomainTop) {
  const auto& f = fixture();
  auto sets = build_r1_training_sets(f.held_out, f.models);
  ASSERT_EQ(sets.size(), 2u);
  for (const auto& [domain, samples] : sets) {
    ASSERT_EQ(samples.size(), f.held_out.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      EXPECT_EQ(s.hypothesis.domain, domain);
      EXPECT_EQ(s.hypothesis_correct, hypothesis_matches(s.hypothesis, f.held_out[i]));
      // an out-of-domain utterance can never be an Accept example
      if (f.held_out[i].annotation.domain != domain) EXPECT_FALSE(s.hypothesis_correct);
    }
    EXPECT_EQ(samples, build_r1_training_set(domain, f.held_out, f.models));
  }
}

TEST(TrainingSets, R2UsesPooledTopAndHasHigherAcceptShare) {
  const auto& f = fixture();
  auto r2 = build_r2_training_set(f.held_out, f.models);
  auto r1 = build_r1_training_sets(f.held_out, f.models);
  auto share = [](const std::vector<HypothesisSample>& v) {
    std::size_t a = 0;
    for (const auto& s : v) a += s.hypothesis_correct;
    return static_cast<double>(a) / static_cast<double>(v.size());
  };
  for (std::size_t i = 0; i < r2.size(); ++i) {
    for (const auto& [d, v] : r1) {
      EXPECT_FALSE(ranks_before(v[i].hypothesis, r2[i].hypothesis));
    }
  }
  for (const auto& [d, v] : r1) EXPECT_GT(share(r2), share(v)) << d;
}

TEST(TrainingSets, UnknownDomainIsAnError) {
  const auto& f = fixture();
  EXPECT_THROW(build_r1_training_set("Weather", f.held_out, f.models), ValidationError);
}

TEST(Pooling, HighestScoringAcceptedCandidateWins) {
  auto out = finalize_r1(r1_scored({candidate("Books", 0.35, 0.9, true),
                                    candidate("Music", 0.28, 0.8, false)}),
                         0.5);
  ASSERT_TRUE(out.final_hypothesis);
  EXPECT_EQ(out.final_hypothesis->domain, "Books");
  EXPECT_EQ(out.per_domain.at("Books").decision, Decision::Accept);
  EXPECT_EQ(out.per_domain.at("Music").decision, Decision::Accept);
}

TEST(Pooling, AllRejectedGivesNoHypothesis) {
  auto out = finalize_r1(r1_scored({candidate("Books", 0.35, 0.1, true),
                                    candidate("Music", 0.28, 0.2, false)}),
                         0.5);
  EXPECT_FALSE(out.final_hypothesis);
  EXPECT_TRUE(out.candidate_had_correct);
}

TEST(Pooling, FalseAcceptDespiteUpstreamFalseReject) {
  auto out = finalize_r1(r1_scored({candidate("Books", 0.60, 0.3, true),
                                    candidate("Music", 0.28, 0.7, false)}),
                         0.5);
  ASSERT_TRUE(out.final_hypothesis);
  EXPECT_EQ(out.final_hypothesis->domain, "Music");
  EXPECT_EQ(out.per_domain.at("Books").decision, Decision::Reject);
}

TEST(Pooling, PerDomainThresholds) {
  auto s = r1_scored({candidate("Books", 0.6, 0.55, true), candidate("Music", 0.3, 0.55, false)});
  auto cfg = SchemeConfig::r1({"Books", "Music"}, 0.5);
  cfg.domain_thresholds["Books"] = 0.6;
  auto out = finalize_r1(s, cfg);
  ASSERT_TRUE(out.final_hypothesis);
  EXPECT_EQ(out.final_hypothesis->domain, "Music");
  EXPECT_THROW(SchemeConfig::r1({"Books"}).threshold_for("Music"), ValidationError);
}

TEST(R2, OnlyThePooledTopIsExamined) {
  ScoredUtterance s;
  s.id = "u";
  s.candidates = {candidate("Books", 0.7, 0.3, false)};
  auto out = finalize_r2(s, 0.5);
  EXPECT_FALSE(out.final_hypothesis);
  EXPECT_FALSE(out.candidate_had_correct);
  s.candidates[0].accept_prob = 0.5;
  EXPECT_TRUE(finalize_r2(s, 0.5).final_hypothesis);
}

TEST(Schemes, SingleDomainR1EqualsR2) {
  CatalogSpec spec;
  auto d = books_domain();
  d.prior = 1.0;
  spec.domains = {d};
  auto data = generate_corpus(spec, 300);
  std::vector<Utterance> slu(data.begin(), data.begin() + 150);
  std::vector<Utterance> rest(data.begin() + 150, data.end());
  auto models = train_domain_models(slu, spec, {});

  auto samples = build_r2_training_set(rest, models);
  const auto labels = domain_labels(models);
  auto f = FeatureFlags::parse("score,utt,hyp");
  auto m = make_model(tiny_hyper(f), build_vocab(samples, VocabScope::SingleDomain, labels), "Books");
  std::map<std::string, RejectionModel> r1{{"Books", m}};
  auto cfg = SchemeConfig::r1({"Books"});
  for (const auto& u : rest) {
    for (double tau : {0.0, 0.3, 0.5, 0.51, 1.0}) {
      auto a = finalize_r1(score_r1(u, models, r1, cfg), tau);
      auto b = finalize_r2(score_r2(u, models, m, cfg), tau);
      EXPECT_EQ(a.final_hypothesis, b.final_hypothesis);
      EXPECT_EQ(a.candidate_had_correct, b.candidate_had_correct);
    }
  }
}

TEST(Schemes, ConfigValidation) {
  const auto& f = fixture();
  EXPECT_NO_THROW(SchemeConfig::r1({"Books", "Music"}).validate(f.models));
  EXPECT_THROW(SchemeConfig::r1({"Books"}).validate(f.models), ValidationError);
  EXPECT_THROW(SchemeConfig::r2(1.5).validate(f.models), ValidationError);
  EXPECT_EQ(parse_scheme("r1"), Scheme::R1);
  EXPECT_THROW(parse_scheme("r3"), ValidationError);
}

TEST(Schemes, MissingDomainModelIsAnError) {
  const auto& f = fixture();
  EXPECT_THROW(score_r1(f.held_out[0], f.models, {}, SchemeConfig::r1({"Books", "Music"})),
               ValidationError);
}

TEST(Schemes, OutputsRoundTripThroughJsonl) {
  TempDir dir("outputs");
  std::vector<SluOutput> outs{
      finalize_r1(r1_scored({candidate("Books", 0.35, 0.9, true),
                             candidate("Music", 0.28, 0.8, false)}),
                  0.5),
      finalize_r1(r1_scored({candidate("Books", 0.35, 0.1, true)}), 0.5)};
  save_outputs(outs, dir.str("o.jsonl"));
  auto back = load_outputs(dir.str("o.jsonl"));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].final_hypothesis, outs[0].final_hypothesis);
  EXPECT_FALSE(back[1].final_hypothesis);
  EXPECT_EQ(back[1].candidate_had_correct, true);
}
