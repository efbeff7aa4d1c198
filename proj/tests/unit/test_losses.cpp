#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "flint/losses.hpp"
#include "support/ablation.hpp"
#include "support/oracles.hpp"
#include "support/suites.hpp"

using namespace flint;

namespace {

using FD = Field<double>;

const Grid kG = Grid::make2d(6, 6);

FD constant(int ch, double v, const Grid& g = kG) { return FD(ch, g, v); }

TEST(LossRec, Examples) {
  const FD gt = constant(1, 0.4);
  EXPECT_EQ(loss_rec(gt, gt, gt), 0.0);
  EXPECT_NEAR(loss_rec(constant(1, 0.5), constant(1, 0.2), gt), 0.3, 1e-12);
}

TEST(LossFlow, Examples) {
  const FD gt = constant(2, 1.0);
  const std::vector<const FD*> exact(4, &gt);
  EXPECT_EQ(loss_flow(exact, gt, gt, 0.8), 0.0);

  const double e = 0.37;
  const FD off = constant(2, 1.0 + e);
  const std::vector<const FD*> four(4, &off);
  EXPECT_NEAR(loss_flow(four, off, gt, 0.8), 3.952 * e, 1e-9);
  EXPECT_NEAR(loss_flow(four, off, gt, 1.0), 5 * e, 1e-12);
  EXPECT_THROW(loss_flow(four, off, gt, 0.0), ContractError);
}

TEST(LossDis, Examples) {
  const FD t = constant(2, 0.0);
  EXPECT_EQ(loss_dis(t, t, t, t), 0.0);
  FD s(2, kG);
  for (std::size_t p = 0; p < kG.cells(); ++p) {
    s[p] = -3.0;
    s[kG.cells() + p] = -4.0;
  }
  EXPECT_NEAR(loss_dis(s, s, t, t), 10.0, 1e-12);
  FD one(2, kG);
  for (std::size_t p = 0; p < kG.cells(); ++p) one[kG.cells() + p] = 1.0;
  EXPECT_NEAR(loss_dis(t, one, t, t), 1.0, 1e-12);
}

TEST(LossDis, TeacherReceivesNoGradient) {
  std::mt19937_64 rng(1);
  const FD t = oracle::random_field<double>(2, kG, rng, -1, 1);
  const FD s = oracle::random_field<double>(2, kG, rng, -1, 1);
  FD gs(2, kG), gu(2, kG);
  loss_dis(s, s, t, t, 1.0, &gs, &gu);
  // The signature has no teacher gradient slot; the student gradient alone
  // equals the full derivative in the student.
  double norm = 0;
  for (double v : gs.values()) norm += std::abs(v);
  EXPECT_GT(norm, 0.0);
}

TEST(LossPhoto, Examples) {
  const FD d = constant(1, 0.3), zero = constant(2, 0.0);
  EXPECT_NEAR(loss_photo(zero, zero, d, d, d), kCharbonnierEps, 1e-18);

  const FD hat = constant(1, 0.3 - 0.003);
  EXPECT_NEAR(loss_photo(zero, zero, d, d, hat), 0.003, 1e-10);

  std::mt19937_64 rng(2);
  const FD ds = oracle::random_field<double>(1, kG, rng, 0, 1), du = oracle::random_field<double>(1, kG, rng, 0, 1);
  const FD base = oracle::random_field<double>(1, kG, rng, 0, 1);
  FD hat2 = base;
  // Residuals doubled: key frames stay, the interpolant moves twice as far
  // from them.
  FD ds2 = ds, du2 = du;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ds2[i] = base[i] + 2 * (ds[i] - base[i]);
    du2[i] = base[i] + 2 * (du[i] - base[i]);
  }
  const double l1 = loss_photo(zero, zero, ds, du, base);
  const double l2 = loss_photo(zero, zero, ds2, du2, hat2);
  EXPECT_NEAR(l2 / l1, 2.0, 2e-6);
}

TEST(LossPhoto, UsesReversedFlow) {
  // A key frame that is the interpolant shifted by +1 column is reproduced
  // exactly when F_{t->j} points +1 column toward it.
  FD hat(1, Grid::make2d(1, 8));
  for (int x = 0; x < 8; ++x) hat[x] = x * 0.1;
  FD key(1, hat.grid());
  for (int x = 0; x < 8; ++x) key[x] = std::max(0, x - 1) * 0.1;
  FD f(2, hat.grid());
  for (int x = 0; x < 8; ++x) f[8 + x] = 1.0;
  EXPECT_NEAR(loss_photo(f, f, key, key, hat), kCharbonnierEps, 1e-15);
}

TEST(LossSmooth, ConstantFlowIsZeroAndRampIsSlope) {
  EXPECT_EQ(loss_smooth(constant(2, 1.5)), 0.0);
  FD ramp(2, kG);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) ramp.at(1, 0, y, x) = 0.5 * x;
  // Only x differences of channel 1 are non-zero: 30 of them, 0.5 each,
  // divided by the 72 entries.
  EXPECT_NEAR(loss_smooth(ramp), 30 * 0.5 / 72.0, 1e-12);
}

TEST(LossReg, Examples) {
  nn::ParameterSet ps;
  const auto a = ps.add("student.w", {10}, nn::ParamKind::kWeight);
  const auto b = ps.add("teacher.w", {5}, nn::ParamKind::kWeight);
  EXPECT_EQ(loss_reg(ps, {a, b}), 0.0);
  std::fill(ps[a].value.begin(), ps[a].value.end(), 1.f);
  EXPECT_EQ(loss_reg(ps, {a, b}), 10.0);
  for (auto& v : ps[a].value) v *= 2.f;
  EXPECT_EQ(loss_reg(ps, {a, b}), 20.0);
}

TEST(LossTotal, Examples) {
  LossComponents sup;
  sup.rec = 1.0;
  sup.flow = 5.0;
  EXPECT_EQ(loss_total(TrainingMode::kFlowSupervised, sup, LossWeights{}), 2.0);

  LossComponents uns;
  uns.rec = 1.0;
  uns.dis = 1e4;
  uns.photo = 1e6;
  uns.reg = 1e8;
  EXPECT_EQ(loss_total(TrainingMode::kFlowUnsupervised, uns, LossWeights{}), 4.0);

  LossComponents zero;
  zero.rec = zero.flow = zero.dis = zero.photo = zero.reg = 0.0;
  EXPECT_EQ(loss_total(TrainingMode::kFlowSupervised, zero, LossWeights{}), 0.0);
  EXPECT_EQ(loss_total(TrainingMode::kFlowUnsupervised, zero, LossWeights{}), 0.0);
}

TEST(LossTotal, MissingActiveComponentIsAnError) {
  LossComponents only_rec;
  only_rec.rec = 1.0;
  EXPECT_THROW(loss_total(TrainingMode::kFlowSupervised, only_rec, LossWeights{}), ContractError);
  LossWeights no_flow;
  no_flow.lambda_flow = 0.0;
  EXPECT_EQ(loss_total(TrainingMode::kFlowSupervised, only_rec, no_flow), 1.0);
}

TEST(LossGradients, MatchFiniteDifferencesOn8x8And4Cubed) {
  for (const auto& c : suites::gradients(17)) EXPECT_LT(c.max_relative_error, 1e-3) << c.name;
}

// Each component on a 6x6 double instance, as a second seed and grid.
TEST(LossGradients, MatchFiniteDifferencesOn6x6) {
  std::mt19937_64 rng(23);
  const FD gt = oracle::random_field<double>(1, kG, rng, 0, 1);
  FD hat = gt, teach = gt;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    hat[i] += (i % 2 ? 0.2 : -0.15);
    teach[i] += (i % 3 ? -0.1 : 0.3);
  }
  FD gh(1, kG), gtch(1, kG);
  loss_rec(hat, teach, gt, 1.0, &gh, &gtch);
  auto f = [&] { return loss_rec(hat, teach, gt); };
  EXPECT_LT(oracle::max_relative_error(gh.values(), oracle::numeric_gradient(hat.values(), f, 1e-5)), 1e-3);
  EXPECT_LT(oracle::max_relative_error(gtch.values(), oracle::numeric_gradient(teach.values(), f, 1e-5)), 1e-3);

  FD flow(2, kG);
  for (std::size_t i = 0; i < flow.size(); ++i) flow[i] = 0.3 + 0.01 * double(i % 7);
  FD smooth_grad(2, kG);
  FD ramp = flow;
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] += 0.05 * double(i);  // no equal neighbours
  loss_smooth(ramp, 1.0, &smooth_grad);
  auto fs = [&] { return loss_smooth(ramp); };
  EXPECT_LT(oracle::max_relative_error(smooth_grad.values(), oracle::numeric_gradient(ramp.values(), fs, 1e-6)), 1e-3);
}

TEST(LossRecTeacherTerm, GradientOnlyIntoTeacherOutput) {
  const FD gt = constant(1, 0.4);
  FD gh(1, kG), gtch(1, kG);
  loss_rec(gt, constant(1, 0.6), gt, 1.0, &gh, &gtch);
  for (double v : gh.values()) EXPECT_EQ(v, 0.0);
  for (double v : gtch.values()) EXPECT_NE(v, 0.0);
}

TEST(Ablation, ZeroWeightsReproduceAblatedConfigurations) {
  for (const auto& o : ablation::run(3)) EXPECT_TRUE(o.ok) << o.name << ": " << o.detail;
}

TEST(Ablation, SmoothnessIsOffByDefault) {
  const auto comps = active_components(TrainingMode::kFlowUnsupervised, LossWeights{});
  EXPECT_EQ(std::count(comps.begin(), comps.end(), "smooth"), 0);
  LossWeights w;
  w.smoothness = true;
  const auto on = active_components(TrainingMode::kFlowUnsupervised, w);
  EXPECT_EQ(std::count(on.begin(), on.end(), "smooth"), 1);
}

}  // namespace
