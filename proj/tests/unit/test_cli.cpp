#include <gtest/gtest.h>

#include <fstream>
#include <string>
#include <vector>

#include "flint/archive.hpp"
#include "flint/cli.hpp"
#include "flint/model.hpp"
#include "json.hpp"
#include "support/fixtures.hpp"

using namespace flint;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "flint");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  return run_cli(static_cast<int>(args.size()), argv.data());
}

std::string s(const fs::path& p) { return p.string(); }

// The line of captured stdout that starts with `prefix`.
std::string line_starting(const std::string& out, const std::string& prefix) {
  std::size_t pos = 0;
  while (pos < out.size()) {
    const std::size_t end = out.find('\n', pos);
    const std::string line = out.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
    if (line.rfind(prefix, 0) == 0) return line.substr(prefix.size());
    if (end == std::string::npos) break;
    pos = end + 1;
  }
  return {};
}

std::vector<std::string> gen_args(const fs::path& out) {
  return {"gen", "--preset", "advect-const", "--members", "3", "--timesteps", "9", "--shape", "16,16", "--seed",
          "4", "--out", s(out)};
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({"gen", "--preset", "nope", "--out", s(fixtures::scratch("cli_bad"))}), 2);
  EXPECT_EQ(run({"bogus"}), 2);
  EXPECT_EQ(run({"eval", "--pred", "a", "--gt", "b", "--metrics", "psnr,ssim"}), 2);
  EXPECT_EQ(run({"infer", "--data", "a", "--checkpoint", "c", "--out", "o", "--rate", "0"}), 2);
  EXPECT_EQ(run({"--help"}), 0);
}

TEST(Cli, ExistingOutputNeedsOverwrite) {
  const fs::path out = fixtures::scratch("cli_exists");
  EXPECT_EQ(run(gen_args(out)), 0);
  EXPECT_EQ(run(gen_args(out)), 3);
  auto again = gen_args(out);
  again.push_back("--overwrite");
  EXPECT_EQ(run(again), 0);
  fs::remove_all(out);
}

TEST(Cli, GenIsDeterministic) {
  const fs::path a = fixtures::scratch("cli_det_a"), b = fixtures::scratch("cli_det_b");
  ASSERT_EQ(run(gen_args(a)), 0);
  ASSERT_EQ(run(gen_args(b)), 0);
  const auto x = EnsembleArchive::open(a), y = EnsembleArchive::open(b);
  for (const auto& m : x.manifest().members) {
    for (int t = 0; t < m.timesteps; ++t) EXPECT_EQ(x.read(m.id, "density", t).values(), y.read(m.id, "density", t).values());
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, MissingInputsAreIoErrors) {
  EXPECT_EQ(run({"baseline", "--data", s(fixtures::scratch("cli_nothing")), "--out", s(fixtures::scratch("cli_o")),
                 "--rate", "2"}),
            3);
}

TEST(Cli, SupervisedTrainingWithoutFlowExitsFour) {
  const fs::path data = fixtures::advect_archive("cli_noflow_src", 3, 9);
  const fs::path dens = fixtures::density_only(data, "cli_noflow");
  const fs::path out = fixtures::scratch("cli_noflow_run");
  EXPECT_EQ(run({"train", "--data", s(dens), "--out", s(out), "--mode", "flow-supervised", "--epochs", "1",
                 "--blocks", "2", "--channels", "8,8", "--teacher-channels", "8"}),
            4);
  fs::remove_all(data);
  fs::remove_all(dens);
  fs::remove_all(out);
}

TEST(Cli, TrainDefaultsAndBlockOverride) {
  const fs::path data = fixtures::advect_archive("cli_train_data", 3, 9);
  const fs::path out = fixtures::scratch("cli_train_run");
  ::testing::internal::CaptureStdout();
  const int code = run({"train", "--data", s(data), "--out", s(out), "--blocks", "3", "--channels", "4",
                        "--teacher-channels", "4", "--samples-per-epoch", "1", "--val-samples", "1", "--patience", "2"});
  const std::string captured = ::testing::internal::GetCapturedStdout();
  ASSERT_EQ(code, 0) << captured;
  const auto echo = nlohmann::json::parse(line_starting(captured, "config "));
  EXPECT_EQ(echo.at("train").at("epochs"), 120);
  EXPECT_EQ(echo.at("train").at("window"), 12);
  EXPECT_EQ(echo.at("train").at("batch_size"), 32);
  EXPECT_EQ(echo.at("train").at("lr"), 6e-4);
  EXPECT_EQ(echo.at("model").at("num_blocks"), 3);
  EXPECT_EQ(load_checkpoint(out / "checkpoint").model.config().num_blocks, 3);

  // A second run into the same directory is refused without --overwrite.
  EXPECT_EQ(run({"train", "--data", s(data), "--out", s(out), "--blocks", "3", "--channels", "4"}), 3);
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST(Cli, ConfigFileFillsOptionsAndFlagsWin) {
  const fs::path dir = fixtures::scratch("cli_config");
  fs::create_directories(dir);
  const fs::path cfg = dir / "gen.json";
  std::ofstream(cfg) << R"({"preset": "advect-const", "members": 2, "timesteps": 7, "shape": [16, 16]})";
  ASSERT_EQ(run({"gen", "--config", s(cfg), "--timesteps", "5", "--out", s(dir / "arc")}), 0);
  const auto arc = EnsembleArchive::open(dir / "arc");
  EXPECT_EQ(arc.manifest().members.size(), 2u);
  EXPECT_EQ(arc.manifest().members[0].timesteps, 5);
  std::ofstream(dir / "bad.json") << "{not json";
  EXPECT_EQ(run({"gen", "--config", s(dir / "bad.json"), "--out", s(dir / "arc2")}), 4);
  fs::remove_all(dir);
}

TEST(Cli, EvalExitCodesAndNullLpips) {
  const fs::path gt = fixtures::advect_archive("cli_eval_gt", 1, 9);
  const fs::path other = fixtures::advect_archive("cli_eval_small", 1, 5);
  const fs::path pred = fixtures::scratch("cli_eval_pred");
  ASSERT_EQ(run({"baseline", "--data", s(gt), "--out", s(pred), "--rate", "4"}), 0);

  const fs::path report = fixtures::scratch("cli_eval_report") / "r.json";
  ::testing::internal::CaptureStdout();
  const int code = run({"eval", "--pred", s(pred), "--gt", s(gt), "--metrics", "psnr,lpips", "--lpips-command", "",
                        "--out", s(report)});
  const std::string captured = ::testing::internal::GetCapturedStdout();
  EXPECT_EQ(code, 0);
  EXPECT_NE(captured.find("lpips: null"), std::string::npos);
  std::ifstream in(report);
  const auto j = nlohmann::json::parse(in);
  EXPECT_TRUE(j.at("lpips").is_null());
  EXPECT_GT(j.at("psnr").at("mean").get<double>(), 0.0);

  EXPECT_EQ(run({"eval", "--pred", s(pred), "--gt", s(other), "--out", s(report), "--overwrite"}), 5);
  for (const auto& p : {gt, other, pred, report.parent_path()}) fs::remove_all(p);
}

}  // namespace
