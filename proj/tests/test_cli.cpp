#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fei/diagnostics.hpp"
#include "fei/viz_io.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("fei_cli_" + std::string(info->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliResult fei(const std::string& args) {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string(FEI_CLI_PATH) + " " + args + " >/dev/null 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
  }

  std::string model() const { return fei::testing::fixture_model_path().string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(fei("").exit_code, 2);
  EXPECT_EQ(fei("frobnicate").exit_code, 2);
  EXPECT_EQ(fei("gen-data --no-such-flag 1").exit_code, 2);
  EXPECT_EQ(fei("gen-data --count many").exit_code, 2);
  EXPECT_EQ(fei("attribute --image x.pgm").exit_code, 2);  // --model missing
  EXPECT_EQ(fei("attribute --model m --image x --clip sometimes").exit_code, 2);
  EXPECT_EQ(fei("defense --model m --clip none,sometimes").exit_code, 2);
  EXPECT_EQ(fei("replay").exit_code, 2);
}

TEST_F(Cli, RuntimeErrorsExitOneWithJson) {
  const CliResult r = fei("attribute --model /nonexistent.feiw --image /nonexistent.pgm --out " +
                    (dir_ / "a").string());
  EXPECT_EQ(r.exit_code, 1);
  const json err = json::parse(r.err);
  EXPECT_EQ(err.at("error"), "io-error");
  EXPECT_TRUE(err.contains("message"));
}

TEST_F(Cli, GenDataWritesManifestAndCreatesDirectories) {
  const fs::path out = dir_ / "nested" / "data";
  ASSERT_EQ(fei("gen-data --count 6 --seed 4 --out " + out.string()).exit_code, 0);
  for (const char* f : {"images.idx", "labels.idx", "masks.idx", "dataset.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const json m = json::parse(slurp(out / "manifest.json"));
  for (const char* key : {"subcommand", "resolved_flags", "seeds", "tool_version", "input_hashes"})
    EXPECT_TRUE(m.contains(key)) << key;
  EXPECT_EQ(m["subcommand"], "gen-data");
  EXPECT_EQ(m["resolved_flags"]["count"], "6");
  const auto data = fei::load_idx(out / "images.idx", out / "labels.idx");
  EXPECT_EQ(data.labels.size(), 6u);
}

TEST_F(Cli, AttributeOutputs) {
  ASSERT_EQ(fei("gen-data --count 3 --out " + (dir_ / "data").string()).exit_code, 0);
  const fs::path out = dir_ / "attr";
  ASSERT_EQ(fei("attribute --model " + model() + " --image " + (dir_ / "data").string() +
                " --index 1 --fractions 0.7,0.3 --iters 5 --out " + out.string())
                .exit_code,
            0);
  for (const char* f : {"M.pgm", "heatmap.ppm", "alpha_0.pgm", "alpha_1.pgm", "attribution.json",
                        "preservation_curve.csv", "deletion_curve.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const fei::Tensor m = fei::read_pgm(out / "M.pgm");
  EXPECT_EQ(m.shape(), (fei::Shape{32, 32}));
  const json side = json::parse(slurp(out / "attribution.json"));
  EXPECT_EQ(side["fractions"].size(), 2u);
}

TEST_F(Cli, L1ModeUsesOneFraction) {
  ASSERT_EQ(fei("gen-data --count 3 --out " + (dir_ / "data").string()).exit_code, 0);
  const fs::path out = dir_ / "attr";
  ASSERT_EQ(fei("attribute --model " + model() + " --image " + (dir_ / "data").string() +
                " --mode l1 --iters 3 --out " + out.string())
                .exit_code,
            0);
  const json side = json::parse(slurp(out / "attribution.json"));
  EXPECT_EQ(side["fractions"], json::array({1.0}));
}

TEST_F(Cli, EvalReportLayoutAndDeterminism) {
  ASSERT_EQ(fei("gen-data --count 3 --out " + (dir_ / "data").string()).exit_code, 0);
  const std::string common = "eval --model " + model() + " --dataset " + (dir_ / "data").string() +
                             " --count 2 --methods ibm,none --seeds 1 --fractions 0.5 --iters 3";
  ASSERT_EQ(fei(common + " --out " + (dir_ / "a" / "report.csv").string()).exit_code, 0);
  ASSERT_EQ(fei(common + " --out " + (dir_ / "b" / "report.csv").string()).exit_code, 0);
  const std::string a = slurp(dir_ / "a" / "report.csv");
  EXPECT_EQ(a, slurp(dir_ / "b" / "report.csv"));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 1 + 2 * 2);
  const std::string summary = slurp(dir_ / "a" / "report_summary.csv");
  EXPECT_EQ(summary.substr(0, summary.find('\n')),
            "method,preservation_mean,preservation_std,deletion_mean,deletion_std");
}

TEST_F(Cli, ReconstructZeroItersIsTheSeededNoise) {
  ASSERT_EQ(fei("gen-data --count 3 --out " + (dir_ / "data").string()).exit_code, 0);
  const std::string base = "reconstruct --model " + model() + " --image " + (dir_ / "data").string() +
                           " --iters 0 --clip none";
  ASSERT_EQ(fei(base + " --seed 7 --out " + (dir_ / "r7").string()).exit_code, 0);
  ASSERT_EQ(fei(base + " --seed 8 --out " + (dir_ / "r8").string()).exit_code, 0);
  fei::ReconstructionConfig cfg;
  cfg.seed = 7;
  const fei::Tensor noise = fei::reconstruction_noise({1, 32, 32}, cfg);
  EXPECT_EQ(slurp(dir_ / "r7" / "reconstruction.pgm"), fei::encode_pgm(noise.reshaped({32, 32})));
  EXPECT_NE(slurp(dir_ / "r7" / "reconstruction.pgm"), slurp(dir_ / "r8" / "reconstruction.pgm"));
}

TEST_F(Cli, SanityStageZeroRow) {
  ASSERT_EQ(fei("gen-data --count 3 --out " + (dir_ / "data").string()).exit_code, 0);
  ASSERT_EQ(fei("sanity --model " + model() + " --image " + (dir_ / "data").string() +
                " --stages 0 --fractions 0.5 --iters 3 --out " + (dir_ / "s").string())
                .exit_code,
            0);
  const json report = json::parse(slurp(dir_ / "s" / "sanity.json"));
  ASSERT_EQ(report["stages"].size(), 1u);
  EXPECT_EQ(report["stages"][0]["spearman"], 1.0);
}

TEST_F(Cli, ReplayDetectsChangedInputs) {
  ASSERT_EQ(fei("gen-data --count 3 --out " + (dir_ / "data").string()).exit_code, 0);
  const fs::path image = dir_ / "x.pgm";
  fei::write_pgm(fei::Tensor({32, 32}, 0.25), image);
  ASSERT_EQ(fei("reconstruct --model " + model() + " --image " + image.string() +
                " --iters 2 --out " + (dir_ / "r").string())
                .exit_code,
            0);
  fei::write_pgm(fei::Tensor({32, 32}, 0.75), image);
  const CliResult r = fei("replay --manifest " + (dir_ / "r" / "manifest.json").string());
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_EQ(json::parse(r.err).at("error"), "input-changed");
}
