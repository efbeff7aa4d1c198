#include <gtest/gtest.h>

#include "flint/error.hpp"
#include "flint/infer.hpp"
#include "support/fixtures.hpp"

using namespace flint;
namespace fs = std::filesystem;

namespace {

TEST(Plan, RateTwoOverThreeFrames) {
  const MemberInfo m{"a", 3};
  const auto avail = available_frames(m, 2);
  EXPECT_EQ(avail, (std::vector<int>{0, 2}));
  const PredictionPlan p = plan_prediction(avail, 1);
  EXPECT_EQ(p.s, 0);
  EXPECT_EQ(p.u, 2);
  EXPECT_EQ(p.tau, 0.5);
  EXPECT_FALSE(p.available);
  const PredictionPlan at0 = plan_prediction(avail, 0);
  EXPECT_TRUE(at0.available);
  EXPECT_EQ(at0.tau, 0.0);
  EXPECT_EQ(at0.u, 2);
}

TEST(Plan, RateSixGivesSixthsBetweenAvailableFrames) {
  MemberInfo m{"a", 4700};
  m.first = 3;
  const auto avail = available_frames(m, 6);
  ASSERT_TRUE(std::binary_search(avail.begin(), avail.end(), 4605));
  ASSERT_TRUE(std::binary_search(avail.begin(), avail.end(), 4611));
  for (int k = 1; k <= 5; ++k) {
    const PredictionPlan p = plan_prediction(avail, 4605 + k);
    EXPECT_EQ(p.s, 4605);
    EXPECT_EQ(p.u, 4611);
    EXPECT_NEAR(p.tau, k / 6.0, 1e-15);
  }
}

TEST(Plan, OutsideTheCoveredRangeThrows) {
  const MemberInfo m{"a", 10};
  const auto avail = available_frames(m, 4);  // 0, 4, 8
  EXPECT_THROW(plan_prediction(avail, 9), ContractError);
  EXPECT_THROW(plan_prediction(avail, -1), ContractError);
  EXPECT_THROW(plan_prediction(avail, 8), ContractError);  // no successor for the flow
  EXPECT_THROW(plan_prediction({0}, 0), ContractError);
  EXPECT_THROW(available_frames(m, 0), ContractError);
}

TEST(LinearBaseline, InterpolatesBetweenAvailableFrames) {
  const fs::path data = fixtures::advect_archive("infer_linear", 1, 5);
  const fs::path out = fixtures::scratch("infer_linear_out");
  const auto arc = EnsembleArchive::open(data);
  InferOptions o;
  o.rate = 2;
  const InferStats st = linear_baseline(arc, out, o);
  EXPECT_EQ(st.predictions, 2);
  const auto pred = EnsembleArchive::open(out);
  const FieldF d0 = arc.read("m000", "density", 0), d2 = arc.read("m000", "density", 2);
  EXPECT_EQ(pred.read("m000", "density_pred", 0).values(), d0.values());  // tau = 0
  const FieldF mid = pred.read("m000", "density_pred", 1);
  for (std::size_t i = 0; i < mid.size(); ++i) EXPECT_FLOAT_EQ(mid[i], 0.5f * (d0[i] + d2[i]));
  EXPECT_EQ(pred.manifest().provenance.at("rate"), 2);
  EXPECT_THROW(linear_baseline(arc, out, o), ConflictError);
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST(Interpolate, WritesDensityAndFlowForTheRange) {
  const fs::path data = fixtures::advect_archive("infer_model", 1, 7);
  const fs::path out = fixtures::scratch("infer_model_out");
  const auto arc = EnsembleArchive::open(data);
  const FlintModel model(fixtures::tiny_model(), 1);
  InferOptions o;
  o.rate = 3;
  o.checkpoint_id = "ck";
  const InferStats st = interpolate_range(model, std::nullopt, arc, out, o);
  EXPECT_EQ(st.predictions, 6);  // indices 0..5; 6 is the last available frame
  const auto pred = EnsembleArchive::open(out);
  pred.verify();
  EXPECT_EQ(pred.read("m000", "density_pred", 3).values(), arc.read("m000", "density", 3).values());
  EXPECT_TRUE(pred.has("m000", "flow_pred", 4));
  EXPECT_FALSE(pred.has("m000", "flow_pred", 6));
  EXPECT_EQ(pred.read("m000", "flow_pred", 1).channels(), 2);
  EXPECT_EQ(pred.manifest().provenance.at("checkpoint"), "ck");
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST(Interpolate, RejectsExtrapolationAndDimensionMismatch) {
  const fs::path data = fixtures::advect_archive("infer_bad", 1, 7);
  const auto arc = EnsembleArchive::open(data);
  InferOptions o;
  o.rate = 4;
  o.times = {5};  // beyond the last available frame 4
  EXPECT_THROW(interpolate_range(FlintModel(fixtures::tiny_model(), 1), std::nullopt, arc,
                                 fixtures::scratch("infer_bad_out"), o),
               ContractError);
  ModelConfig three = fixtures::tiny_model();
  three.dims = 3;
  o.times.clear();
  EXPECT_THROW(interpolate_range(FlintModel(three, 1), std::nullopt, arc, fixtures::scratch("infer_bad_out"), o),
               ConfigError);
  fs::remove_all(data);
}

}  // namespace
