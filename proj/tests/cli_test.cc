#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "falcon/cli.h"

namespace falcon {
namespace {

namespace fs = std::filesystem;

struct Invocation {
  int status;
  std::string out;
  std::string err;
};

Invocation invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "falcon");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int status = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {status, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("falcon_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    config_ = root_ / "smooth.cfg";
    std::ofstream(config_) << "env.name = smooth_track\nrun.episodes = 10\n";
    unsetenv("FALCON_SEED");
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path root_;
  fs::path config_;
};

TEST_F(CliTest, RunWithFullExplorationMatchesBaseline) {
  const auto base = invoke({"run", "--config", config_.string(), "--out", (root_ / "base").string()});
  ASSERT_EQ(base.status, 0) << base.err;
  const auto fal = invoke({"run", "--config", config_.string(), "--set", "falcon.enabled=true",
                           "--set", "falcon.delta=1", "--out", (root_ / "fal").string()});
  ASSERT_EQ(fal.status, 0) << fal.err;
  // estimation still runs, so only the chain columns must agree
  std::istringstream a(slurp(root_ / "base" / "metrics.csv"));
  std::istringstream b(slurp(root_ / "fal" / "metrics.csv"));
  std::string la, lb;
  int rows = 0;
  while (std::getline(a, la) && std::getline(b, lb)) {
    auto cut = [](const std::string& s) {
      std::vector<std::string> f;
      std::stringstream ss(s);
      for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
      return f;
    };
    const auto fa = cut(la), fb = cut(lb);
    ASSERT_EQ(fa.size(), 7u);
    for (int c : {0, 1, 2, 3, 5, 6}) EXPECT_EQ(fa[c], fb[c]) << "row " << rows;
    ++rows;
  }
  EXPECT_EQ(rows, 11);
}

TEST_F(CliTest, UnknownFlagExitsTwoWithoutFiles) {
  const auto out = root_ / "never";
  const auto r = invoke({"run", "--config", config_.string(), "--out", out.string(), "--bogus"});
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_FALSE(fs::exists(out));
  EXPECT_EQ(invoke({"frobnicate"}).status, 2);
  EXPECT_EQ(invoke({}).status, 2);
}

TEST_F(CliTest, InvalidConfigReportsField) {
  std::ofstream(root_ / "bad.cfg") << "env.name = smooth_track\nfalcon.delta = 7\n";
  const auto r = invoke({"run", "--config", (root_ / "bad.cfg").string(), "--out",
                         (root_ / "o").string()});
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("falcon.delta"), std::string::npos);
  EXPECT_FALSE(fs::exists(root_ / "o"));
  EXPECT_NE(invoke({"run", "--config", (root_ / "missing.cfg").string()}).status, 0);
}

TEST_F(CliTest, SeedPrecedence) {
  auto seed_of = [&](const fs::path& dir) {
    std::istringstream in(slurp(dir / "metrics.csv"));
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    return row.substr(row.rfind(',') + 1);
  };
  std::ofstream(config_, std::ios::app) << "run.seed = 3\n";
  ASSERT_EQ(invoke({"run", "--config", config_.string(), "--out", (root_ / "c").string()}).status, 0);
  EXPECT_EQ(seed_of(root_ / "c"), "3");
  setenv("FALCON_SEED", "11", 1);
  ASSERT_EQ(invoke({"run", "--config", config_.string(), "--out", (root_ / "e").string()}).status, 0);
  EXPECT_EQ(seed_of(root_ / "e"), "11");
  ASSERT_EQ(invoke({"run", "--config", config_.string(), "--seed", "21", "--out",
                    (root_ / "f").string()}).status, 0);
  EXPECT_EQ(seed_of(root_ / "f"), "21");
  unsetenv("FALCON_SEED");
}

TEST_F(CliTest, EpisodesFlag) {
  ASSERT_EQ(invoke({"run", "--config", config_.string(), "--episodes", "3", "--out",
                    (root_ / "r").string()}).status, 0);
  const auto text = slurp(root_ / "r" / "metrics.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
}

TEST_F(CliTest, AblationsWriteOneRowPerPoint) {
  const std::pair<const char*, int> verbs[] = {
      {"ablate-epsilon", 8}, {"ablate-delta", 8}, {"ablate-selection", 3}};
  for (const auto& [verb, rows] : verbs) {
    const auto dir = root_ / verb;
    const auto r = invoke({verb, "--config", config_.string(), "--episodes", "2", "--out", dir.string()});
    ASSERT_EQ(r.status, 0) << r.err;
    const auto text = slurp(dir / "ablation.csv");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), rows + 1) << verb;
  }
  EXPECT_NE(slurp(root_ / "ablate-selection" / "ablation.csv").find("fixed_K_5,20,"),
            std::string::npos);
}

TEST_F(CliTest, ReportTabulatesRunsWithSpeedup) {
  ASSERT_EQ(invoke({"run", "--config", config_.string(), "--out", (root_ / "runs" / "base").string()}).status, 0);
  ASSERT_EQ(invoke({"run", "--config", config_.string(), "--set", "falcon.enabled=true", "--out",
                    (root_ / "runs" / "falcon").string()}).status, 0);
  const auto r = invoke({"report", "--out", (root_ / "runs").string()});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(r.out, slurp(root_ / "runs" / "report.csv"));
  std::istringstream in(r.out);
  std::string header, base, fal;
  std::getline(in, header);
  std::getline(in, base);
  std::getline(in, fal);
  EXPECT_EQ(base.rfind("base,smooth_track,ddpm,0,10,", 0), 0u);
  EXPECT_TRUE(base.ends_with(",1"));
  const double speedup = std::stod(fal.substr(fal.rfind(',') + 1));
  EXPECT_GT(speedup, 1.0);
}

TEST_F(CliTest, RerunIsByteIdentical) {
  for (const char* d : {"x", "y"}) {
    ASSERT_EQ(invoke({"run", "--config", config_.string(), "--set", "falcon.enabled=true",
                      "--out", (root_ / d).string()}).status, 0);
  }
  EXPECT_EQ(slurp(root_ / "x" / "metrics.csv"), slurp(root_ / "y" / "metrics.csv"));
  EXPECT_EQ(slurp(root_ / "x" / "summary.json"), slurp(root_ / "y" / "summary.json"));
}

#ifdef FALCON_CLI_PATH
TEST_F(CliTest, BinaryExitStatus) {
  const std::string bin = FALCON_CLI_PATH;
  const auto cmd = bin + " run --config " + config_.string() + " --nope >/dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(raw));
  EXPECT_EQ(WEXITSTATUS(raw), 2);
}
#endif

}  // namespace
}  // namespace falcon
