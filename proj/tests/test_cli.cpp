#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "slurej/cli.hpp"
#include "support.hpp"

using namespace slurej;
using namespace slurej::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

/// A small end-to-end config rooted at dir.
std::string write_config(const TempDir& dir, nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json j = {
      {"seed", 4},
      {"corpus", {{"size", 700}, {"confusability", 0.3}, {"fractions", {0.5, 0.3, 0.1, 0.1}}}},
      {"rejection",
       {{"word_dim", 6}, {"hyp_dim", 4}, {"channels", 4}, {"epochs", 2}, {"batch_size", 16}}},
      {"features", {"score", "score,utt,hyp"}},
      {"sweep_points", 11},
      {"paths", {{"out", dir.str("run")}}}};
  j.merge_patch(extra);
  const auto path = dir.str("config.json");
  std::ofstream(path) << j.dump(2);
  return path;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(invoke({"--help"}).code, cli::kOk);
  EXPECT_EQ(invoke({}).code, cli::kInvalid);
  EXPECT_EQ(invoke({"train"}).code, cli::kInvalid);
  EXPECT_EQ(invoke({"train", "--stage", "bogus"}).code, cli::kInvalid);
  EXPECT_EQ(invoke({"eval", "--scheme", "r3"}).code, cli::kInvalid);
  EXPECT_EQ(invoke({"eval", "--features", "utt"}).code, cli::kInvalid);
}

TEST(Cli, GenCorpusWritesSplitsAndIsByteIdentical) {
  TempDir dir("cli-gen");
  const auto cfg = write_config(dir);
  ASSERT_EQ(invoke({"gen-corpus", "--config", cfg}).code, cli::kOk);
  cli::Layout l{dir.str("run")};
  std::map<std::string, std::string> first;
  for (const char* s : {"slu_train", "reject_train", "dev", "test"}) {
    ASSERT_TRUE(fs::exists(l.split(s))) << s;
    first[s] = slurp(l.split(s));
  }
  const auto manifest = nlohmann::json::parse(slurp(l.manifest()));
  EXPECT_EQ(manifest.at("seed"), 4);
  EXPECT_EQ(manifest.at("counts").at("slu_train"), 350);
  EXPECT_EQ(manifest.at("counts").at("test"), 70);

  ASSERT_EQ(invoke({"gen-corpus", "--config", cfg}).code, cli::kOk);
  for (const auto& [s, bytes] : first) EXPECT_EQ(slurp(l.split(s)), bytes) << s;
  EXPECT_NE(invoke({"gen-corpus", "--config", cfg, "--seed", "5", "--out", dir.str("other")}).code,
            cli::kInvalid);
  EXPECT_NE(slurp(cli::Layout{dir.str("other")}.split("test")), first["test"]);
}

TEST(Cli, BadCatalogIsAValidationFailure) {
  TempDir dir("cli-bad");
  auto catalog = to_json(tiny_catalog());
  catalog["domains"][0]["prior"] = 0.9;
  const auto cfg = write_config(dir, {{"corpus", {{"catalog", catalog}}}});
  auto r = invoke({"gen-corpus", "--config", cfg});
  EXPECT_EQ(r.code, cli::kInvalid);
  EXPECT_NE(r.err.find("prior"), std::string::npos) << r.err;

  std::ofstream(dir.str("broken.json")) << "{not json";
  EXPECT_EQ(invoke({"gen-corpus", "--config", dir.str("broken.json")}).code, cli::kInvalid);
  EXPECT_EQ(invoke({"gen-corpus", "--config", dir.str("absent.json")}).code, cli::kInvalid);
}

TEST(Cli, MissingPrerequisitesExitThree) {
  TempDir dir("cli-missing");
  const auto cfg = write_config(dir);
  EXPECT_EQ(invoke({"train", "--stage", "slu", "--config", cfg}).code, cli::kMissing);
  ASSERT_EQ(invoke({"gen-corpus", "--config", cfg}).code, cli::kOk);
  auto r = invoke({"train", "--stage", "reject-r1", "--config", cfg});
  EXPECT_EQ(r.code, cli::kMissing);
  EXPECT_NE(r.err.find("slu"), std::string::npos) << r.err;
  EXPECT_EQ(invoke({"eval", "--config", cfg}).code, cli::kMissing);
  EXPECT_EQ(invoke({"report", "--config", cfg}).code, cli::kMissing);
}

TEST(Cli, EndToEnd) {
  TempDir dir("cli-e2e");
  const auto cfg = write_config(dir);
  cli::Layout l{dir.str("run")};
  ASSERT_EQ(invoke({"gen-corpus", "--config", cfg}).code, cli::kOk);
  ASSERT_EQ(invoke({"train", "--stage", "slu", "--config", cfg}).code, cli::kOk);
  auto r1 = invoke({"train", "--stage", "reject-r1", "--config", cfg});
  ASSERT_EQ(r1.code, cli::kOk) << r1.err;
  EXPECT_NE(r1.out.find("epoch"), std::string::npos);
  auto r2 = invoke({"train", "--stage", "reject-r2", "--config", cfg});
  ASSERT_EQ(r2.code, cli::kOk) << r2.err;

  for (const auto* key : {"score", "score+utt+hyp"}) {
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(l.root / "models" / "r1" / key)) {
      files += e.path().extension() == ".json";
    }
    EXPECT_EQ(files, default_catalog().domains.size()) << key;
  }
  std::size_t r2_files = 0;
  for (const auto& e : fs::directory_iterator(l.root / "models" / "r2")) {
    r2_files += e.path().stem() == "score+utt+hyp";
  }
  EXPECT_EQ(r2_files, 1u);

  auto e1 = invoke({"eval", "--config", cfg});
  ASSERT_EQ(e1.code, cli::kOk) << e1.err;
  const auto json1 = slurp(l.report_json());
  const auto txt1 = slurp(l.report_txt());
  auto rep = nlohmann::json::parse(json1);
  ASSERT_EQ(rep.at("tables").size(), 2u);
  EXPECT_EQ(rep.at("baseline").at("frr"), 0.0);
  for (const auto& t : rep.at("tables")) EXPECT_EQ(t.at("rows").size(), 2u);
  EXPECT_NE(txt1.find("R1"), std::string::npos);
  EXPECT_TRUE(fs::exists(l.sweep_csv(Scheme::R2, FeatureFlags::parse("score"))));

  ASSERT_EQ(invoke({"eval", "--config", cfg}).code, cli::kOk);
  EXPECT_EQ(slurp(l.report_json()), json1);
  EXPECT_EQ(slurp(l.report_txt()), txt1);

  auto rr = invoke({"report", "--config", cfg});
  EXPECT_EQ(rr.code, cli::kOk);
  EXPECT_EQ(rr.out, txt1);

  auto sw = invoke({"sweep", "--config", cfg, "--scheme", "r2", "--max-frr", "0"});
  EXPECT_EQ(sw.code, cli::kOk) << sw.err;
  auto bad_sw = invoke({"sweep", "--config", cfg, "--scheme", "r2", "--max-far", "-1"});
  EXPECT_EQ(bad_sw.code, cli::kInvalid);
}

TEST(Cli, ShippedConfigsValidate) {
  std::size_t seen = 0;
  for (const auto& e : fs::directory_iterator(SLUREJ_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    ++seen;
    const auto cfg = run_config_from_json(nlohmann::json::parse(slurp(e.path())));
    EXPECT_NO_THROW(cfg.validate()) << e.path();
  }
  EXPECT_GE(seen, 3u);
}
