#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "survtx/checkpoint.hpp"
#include "survtx/cli.hpp"
#include "survtx/csv.hpp"

namespace fs = std::filesystem;
using namespace survtx;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("survtx_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    std::ofstream(root_ / "spec.conf") << "subjects = 160\ncn_fraction = 0.5\n";
    std::ofstream(root_ / "small.conf") << "d_model = 16\nheads = 2\nff_dim = 24\nexperts = 3\n"
                                           "cat_embed_dim = 4\nbatch_size = 32\n";
    const auto r = run({"synth", "-s", (root_ / "spec.conf").string(), "-o",
                        (root_ / "synth").string(), "--seed", "4"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path root_;
};

fs::path CliTest::root_;

}  // namespace

TEST_F(CliTest, SynthWritesTableAndTruth) {
  EXPECT_TRUE(fs::exists(root_ / "synth" / "cohort.csv"));
  EXPECT_TRUE(fs::exists(root_ / "synth" / "truth.csv"));
  const auto again = run({"synth", "-s", (root_ / "spec.conf").string(), "-o",
                          (root_ / "synth2").string(), "--seed", "4"});
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(slurp(root_ / "synth" / "cohort.csv"), slurp(root_ / "synth2" / "cohort.csv"));
  EXPECT_EQ(slurp(root_ / "synth" / "truth.csv"), slurp(root_ / "synth2" / "truth.csv"));
  EXPECT_EQ(lines(slurp(root_ / "synth" / "truth.csv")), 161u);
}

TEST_F(CliTest, MissingSpecIsConfigError) {
  const auto r = run({"synth", "-s", (root_ / "absent.conf").string(), "-o", (root_ / "x").string()});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_EQ(run({"synth"}).code, cli::kConfigError);
  EXPECT_EQ(run({}).code, cli::kConfigError);
  EXPECT_EQ(run({"train", "--csv", "x.csv", "-o", "y", "--set", "no_such_key=1"}).code,
            cli::kConfigError);
}

TEST_F(CliTest, BuildCohortIsDeterministicPerTask) {
  const auto csv = (root_ / "synth" / "cohort.csv").string();
  const auto a = run({"build-cohort", "--csv", csv, "--task", "mci-ad", "-o", (root_ / "ba").string()});
  const auto b = run({"build-cohort", "--csv", csv, "--task", "mci-ad", "-o", (root_ / "bb").string()});
  const auto c = run({"build-cohort", "--csv", csv, "--task", "cn-mci", "-o", (root_ / "bc").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0);
  ASSERT_EQ(c.code, 0) << c.err;
  const auto ma = slurp(root_ / "ba" / "manifest.csv");
  EXPECT_EQ(ma, slurp(root_ / "bb" / "manifest.csv"));
  EXPECT_NE(ma, slurp(root_ / "bc" / "manifest.csv"));
  EXPECT_GT(lines(ma), 20u);
  EXPECT_NE(a.out.find("task mci-ad"), std::string::npos);
}

TEST_F(CliTest, TrainCalibrateEvaluateInterpret) {
  const auto csv = (root_ / "synth" / "cohort.csv").string();
  const auto dir = root_ / "run";
  const auto tr = run({"train", "-c", (root_ / "small.conf").string(), "--csv", csv, "--seeds", "3",
                       "--max-epochs", "2", "--no-mixture", "-o", dir.string()});
  ASSERT_EQ(tr.code, 0) << tr.err;
  const auto ckpt = dir / "seed_3" / "model.ckpt";
  ASSERT_TRUE(fs::exists(ckpt));
  EXPECT_EQ(lines(slurp(dir / "seed_3" / "train_log.csv")), 5u);
  const auto loaded = checkpoint::load(ckpt);
  EXPECT_EQ(loaded.model_config().experts, 1u);
  EXPECT_EQ(loaded.seed, 3u);

  const auto manifest = (dir / "manifest.csv").string();
  const auto ev0 = run({"evaluate", "--checkpoint", ckpt.string(), "--csv", csv, "--manifest",
                        manifest, "-o", (root_ / "ev0").string()});
  ASSERT_EQ(ev0.code, 0) << ev0.err;
  EXPECT_NE(ev0.err.find("notice:"), std::string::npos);
  EXPECT_TRUE(fs::exists(root_ / "ev0" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(root_ / "ev0" / "km_groups.svg"));
  EXPECT_FALSE(fs::exists(root_ / "ev0" / "reliability.svg"));

  const auto cal = run({"calibrate", "--checkpoint", ckpt.string(), "--csv", csv, "--manifest",
                        manifest});
  ASSERT_EQ(cal.code, 0) << cal.err;
  EXPECT_TRUE(fs::exists(dir / "seed_3" / "calibration.csv"));
  EXPECT_TRUE(checkpoint::load(ckpt).calibration.has_value());

  const auto ev1 = run({"evaluate", "--checkpoint", ckpt.string(), "--csv", csv, "--manifest",
                        manifest, "-o", (root_ / "ev1").string()});
  ASSERT_EQ(ev1.code, 0) << ev1.err;
  EXPECT_TRUE(fs::exists(root_ / "ev1" / "reliability.svg"));
  const auto ev2 = run({"evaluate", "--checkpoint", ckpt.string(), "--csv", csv, "--manifest",
                        manifest, "-o", (root_ / "ev2").string()});
  EXPECT_EQ(slurp(root_ / "ev1" / "metrics.csv"), slurp(root_ / "ev2" / "metrics.csv"));
  EXPECT_EQ(slurp(root_ / "ev1" / "predictions.csv"), slurp(root_ / "ev2" / "predictions.csv"));

  const auto in = run({"interpret", "--checkpoint", ckpt.string(), "--csv", csv, "--manifest",
                       manifest, "-o", (root_ / "in").string()});
  ASSERT_EQ(in.code, 0) << in.err;
  const auto top = slurp(root_ / "in" / "top_features.csv");
  EXPECT_EQ(lines(top), 16u);
  EXPECT_TRUE(fs::exists(root_ / "in" / "attention_summary.csv"));
  const auto in5 = run({"interpret", "--checkpoint", ckpt.string(), "--csv", csv, "--manifest",
                        manifest, "-k", "5", "-o", (root_ / "in5").string()});
  ASSERT_EQ(in5.code, 0);
  EXPECT_EQ(lines(slurp(root_ / "in5" / "top_features.csv")), 6u);
}

TEST_F(CliTest, EvaluateSummarisesSeveralCheckpoints) {
  const auto csv = (root_ / "synth" / "cohort.csv").string();
  const auto dir = root_ / "multi";
  const auto tr = run({"train", "-c", (root_ / "small.conf").string(), "--csv", csv, "--seeds",
                       "0,1", "--max-epochs", "1", "-o", dir.string()});
  ASSERT_EQ(tr.code, 0) << tr.err;
  const auto ev = run({"evaluate", "--checkpoint", (dir / "seed_0" / "model.ckpt").string(),
                       "--checkpoint", (dir / "seed_1" / "model.ckpt").string(), "--csv", csv,
                       "--manifest", (dir / "manifest.csv").string(), "-o", (root_ / "mev").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_TRUE(fs::exists(root_ / "mev" / "summary.csv"));
  EXPECT_TRUE(fs::exists(root_ / "mev" / "model_1" / "metrics.csv"));
}
