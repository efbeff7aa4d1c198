#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "flint/error.hpp"
#include "flint/evalviz.hpp"
#include "support/fixtures.hpp"

using namespace flint;
namespace fs = std::filesystem;

namespace {

TEST(Psnr, Examples) {
  const Grid g = Grid::make2d(8, 8);
  const FieldF a(1, g, 0.4f);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  FieldF b = a;
  for (auto& v : b.values()) v += 0.1f;
  EXPECT_NEAR(psnr(b, a), 20.0, 1e-5);
  EXPECT_THROW(psnr(a, FieldF(1, Grid::make2d(8, 9))), ContractError);
}

TEST(Epe, ThreeFourFive) {
  const Grid g = Grid::make2d(4, 4);
  FieldF p(2, g), q(2, g);
  for (std::size_t i = 0; i < 16; ++i) {
    p[i] = 3.f;
    p[16 + i] = 4.f;
  }
  EXPECT_NEAR(epe(p, q), 5.0, 1e-12);
  EXPECT_EQ(epe(p, p), 0.0);
}

TEST(Aggregate, QuartilesOfOneToFive) {
  std::vector<MetricsReport::Entry> e;
  for (int i = 1; i <= 5; ++i) e.push_back({"m", i, double(6 - i)});
  const MetricsReport r = aggregate(e, "psnr", 4);
  EXPECT_EQ(r.mean, 3.0);
  EXPECT_EQ(r.median, 3.0);
  EXPECT_EQ(r.q1, 2.0);
  EXPECT_EQ(r.q3, 4.0);
  EXPECT_EQ(r.min, 1.0);
  EXPECT_EQ(r.max, 5.0);
  const auto j = report_to_json(r);
  EXPECT_EQ(j.at("rate"), 4);
  EXPECT_EQ(j.at("per_timestep").size(), 5u);
}

TEST(Hsv, ZeroFlowIsWhiteAndUniformFlowHasOneHue) {
  const Grid g = Grid::make2d(6, 6);
  const RgbImage white = flow_to_hsv(FieldF(2, g));
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) EXPECT_EQ(white.at(y, x), (std::array<std::uint8_t, 3>{255, 255, 255}));

  FieldF f(2, g);
  for (std::size_t p = 0; p < 36; ++p) f[36 + p] = 1.f;  // pure +x
  const RgbImage img = flow_to_hsv(f);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) EXPECT_EQ(img.at(y, x), img.at(0, 0));
  EXPECT_EQ(img.at(0, 0), (std::array<std::uint8_t, 3>{255, 0, 0}));
}

TEST(Hsv, HueFollowsTheDirection) {
  for (int k = 0; k < 16; ++k) {
    const double a = 2 * std::numbers::pi * k / 16.0;
    double expected = std::atan2(std::sin(a), std::cos(a)) * 180.0 / std::numbers::pi;
    if (expected < 0) expected += 360.0;
    EXPECT_NEAR(flow_hue_degrees(std::sin(a), std::cos(a)), expected, 1e-9);
    EXPECT_NEAR(flow_hue_degrees(std::sin(a), std::cos(a)), 22.5 * k, 1e-9);
  }
}

TEST(Glyphs, OnePerStrideCell) {
  for (const auto& [h, w, s] : std::vector<std::array<int, 3>>{{16, 16, 4}, {17, 10, 4}, {5, 9, 2}, {3, 3, 5}}) {
    const auto glyphs = flow_to_glyphs(FieldF(2, Grid::make2d(h, w), 1.f), s, 1.0);
    EXPECT_EQ(glyphs.size(), std::size_t(((h + s - 1) / s) * ((w + s - 1) / s)));
  }
  const std::string svg = glyphs_to_svg(flow_to_glyphs(FieldF(2, Grid::make2d(8, 8), 1.f), 4, 1.0), 8, 8);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
}

FieldF constant_flow(const Grid& g, float dy, float dx) {
  FieldF f(2, g);
  for (std::size_t p = 0; p < g.cells(); ++p) {
    f[p] = dy;
    f[g.cells() + p] = dx;
  }
  return f;
}

TEST(Pathlines, ConstantFlowMovesOneCellPerStep) {
  const Grid g = Grid::make2d(16, 16);
  const std::vector<FieldF> flows(5, constant_flow(g, 1.f, 0.f));
  const auto lines = pathlines(flows, {{0.0, 2.0, 3.0}}, 5);
  ASSERT_EQ(lines.size(), 1u);
  const auto& end = lines[0].points.back();
  EXPECT_NEAR(end[1], 7.0, 1e-12);
  EXPECT_NEAR(end[2], 3.0, 1e-12);
  EXPECT_FALSE(lines[0].left_domain);
}

TEST(Pathlines, StopAtTheBoundary) {
  const Grid g = Grid::make2d(8, 8);
  const std::vector<FieldF> flows(10, constant_flow(g, 0.f, 2.f));
  const auto lines = pathlines(flows, {{0.0, 4.0, 1.0}}, 10);
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_TRUE(lines[0].left_domain);
  EXPECT_LE(lines[0].points.back()[2], 7.0 + 1e-12);
}

// Rigid rotation with angular rate w about (c, c): velocity w * (-(x - c), y - c)
// in (dy, dx) order.
FieldF rotation(const Grid& g, double w, double c) {
  FieldF f(2, g);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      f.at(0, 0, y, x) = float(w * (x - c));
      f.at(1, 0, y, x) = float(-w * (y - c));
    }
  }
  return f;
}

double rotation_error(int steps, double dt) {
  const Grid g = Grid::make2d(32, 32);
  const double w = 2 * std::numbers::pi / 48.0, c = 15.5, r = 8.0;
  const std::vector<FieldF> flows(64, rotation(g, w, c));
  const auto lines = pathlines(flows, {{0.0, c, c + r}}, steps, dt);
  const auto& p = lines.at(0).points.back();
  const double ang = w * steps * dt;
  const double ey = c + r * std::sin(ang), ex = c + r * std::cos(ang);
  return std::hypot(p[1] - ey, p[2] - ex);
}

TEST(Pathlines, RotationStaysOnTheCircle) {
  const Grid g = Grid::make2d(32, 32);
  const double w = 2 * std::numbers::pi / 48.0;
  const std::vector<FieldF> flows(48, rotation(g, w, 15.5));
  const auto lines = pathlines(flows, {{0.0, 15.5, 23.5}}, 48);
  for (const auto& p : lines.at(0).points) EXPECT_NEAR(std::hypot(p[1] - 15.5, p[2] - 15.5), 8.0, 0.02 * 8.0);
  EXPECT_LT(rotation_error(48, 1.0), 0.02 * 8.0);
}

TEST(Pathlines, MidpointRuleIsSecondOrder) {
  const double coarse = rotation_error(24, 1.0), fine = rotation_error(48, 0.5);
  EXPECT_GT(coarse / fine, 3.0);
  EXPECT_LT(coarse / fine, 5.0);
}

TEST(Diff, ScaledAndClamped) {
  const Grid g = Grid::make2d(2, 2);
  FieldF a(1, g, 0.5f), b(1, g, 0.5f);
  b[0] = 0.502f;
  b[1] = 0.9f;
  const FieldF d = diff_values(a, b, 100.0);
  EXPECT_NEAR(d[0], 0.2, 1e-4);
  EXPECT_EQ(d[1], 1.f);
  EXPECT_EQ(d[2], 0.f);
  const RgbImage img = diff_map(a, b, 100.0);
  EXPECT_EQ(img.width, 2);
}

TEST(Png, WritesAFile) {
  const fs::path p = fixtures::scratch("png") / "a.png";
  fs::create_directories(p.parent_path());
  write_png(p, render_scalar(FieldF(1, Grid::make2d(5, 7), 0.5f)));
  std::ifstream in(p, std::ios::binary);
  char sig[8];
  in.read(sig, 8);
  EXPECT_EQ(std::string(sig + 1, 3), "PNG");
  fs::remove_all(p.parent_path());
}

// Prediction archive that copies the ground truth.
fs::path copy_as_prediction(const fs::path& gt_root, const std::string& name, int rate) {
  const auto gt = EnsembleArchive::open(gt_root);
  Manifest m;
  m.dims = gt.manifest().dims;
  m.shape = gt.manifest().shape;
  m.fields["density_pred"] = FieldSpec{"f32", 1};
  m.fields["flow_pred"] = FieldSpec{"f32", m.dims};
  m.provenance = {{"rate", rate}, {"checkpoint", "copy"}};
  for (const auto& mi : gt.manifest().members) m.members.push_back(MemberInfo{mi.id, mi.timesteps});
  const fs::path out = fixtures::scratch(name);
  ArchiveWriter w(out, m);
  for (const auto& mi : m.members) {
    for (int t = 0; t < mi.timesteps; ++t) {
      w.write(mi.id, "density_pred", t, gt.read(mi.id, "density", t));
      w.write(mi.id, "flow_pred", t, gt.read(mi.id, "flow", t));
    }
  }
  w.finish();
  return out;
}

TEST(EvaluateRun, PerfectPredictionScoresTheCap) {
  const fs::path gt_root = fixtures::advect_archive("eval_gt", 2, 9);
  const fs::path pred_root = copy_as_prediction(gt_root, "eval_pred", 4);
  const auto report = evaluate_run(EnsembleArchive::open(pred_root), EnsembleArchive::open(gt_root), EvalOptions{});
  EXPECT_EQ(report.at("psnr").at("mean"), kPsnrCap);
  EXPECT_EQ(report.at("epe").at("mean"), 0.0);
  // Indices 1..3 and 5..7 of each member: the rate grid is excluded.
  EXPECT_EQ(report.at("psnr").at("per_timestep").size(), 12u);
  EXPECT_EQ(report.at("psnr").at("rate"), 4);
  EXPECT_EQ(report.at("psnr").at("meta").at("checkpoint"), "copy");

  EvalOptions with_lpips;
  with_lpips.metrics = {"psnr", "lpips"};
  const auto r2 = evaluate_run(EnsembleArchive::open(pred_root), EnsembleArchive::open(gt_root), with_lpips);
  EXPECT_TRUE(r2.at("lpips").is_null());
  fs::remove_all(gt_root);
  fs::remove_all(pred_root);
}

TEST(EvaluateRun, MisalignedArchivesAreRejected) {
  const fs::path gt_root = fixtures::advect_archive("eval_gt_short", 1, 6);
  const fs::path long_root = fixtures::advect_archive("eval_gt_long", 1, 9);
  const fs::path pred_root = copy_as_prediction(long_root, "eval_pred_long", 2);
  EXPECT_THROW(evaluate_run(EnsembleArchive::open(pred_root), EnsembleArchive::open(gt_root), EvalOptions{}),
               AlignmentError);
  const fs::path big = fixtures::advect_archive("eval_gt_big", 1, 9, 20);
  EXPECT_THROW(evaluate_run(EnsembleArchive::open(pred_root), EnsembleArchive::open(big), EvalOptions{}),
               AlignmentError);
  EvalOptions bogus;
  bogus.metrics = {"ssim"};
  EXPECT_THROW(evaluate_run(EnsembleArchive::open(pred_root), EnsembleArchive::open(long_root), bogus),
               ContractError);
  for (const auto& p : {gt_root, long_root, pred_root, big}) fs::remove_all(p);
}

}  // namespace
