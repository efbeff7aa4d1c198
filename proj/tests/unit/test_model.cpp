#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "flint/losses.hpp"
#include "flint/model.hpp"

namespace flint {
namespace {

ModelConfig tiny_config(int dims = 2) {
  ModelConfig c;
  c.dims = dims;
  c.num_blocks = 2;
  c.block_channels = {6, 4};
  c.teacher_channels = 4;
  return c;
}

FieldF random_field(int channels, const Grid& g, std::mt19937_64& rng, float lo = 0.f, float hi = 1.f) {
  std::uniform_real_distribution<float> d(lo, hi);
  FieldF f(channels, g);
  for (auto& v : f.values()) v = d(rng);
  return f;
}

TEST(Model, ParameterNamesCoverBlocksAndTeacher) {
  ModelConfig c;
  FlintModel m(c, 1);
  const auto& p = m.params();
  for (int b = 0; b < 4; ++b) {
    EXPECT_TRUE(p.contains("block" + std::to_string(b) + ".conv0.weight"));
    EXPECT_TRUE(p.contains("block" + std::to_string(b) + ".conv15.bias"));
  }
  EXPECT_TRUE(p.contains("teacher.conv15.weight"));
  EXPECT_EQ(p[p.index("block0.conv0.weight")].shape, (std::vector<int>{256, 10, 3, 3}));
  EXPECT_EQ(p[p.index("block3.conv15.weight")].shape, (std::vector<int>{5, 128, 3, 3}));
  EXPECT_EQ(p[p.index("teacher.conv0.weight")].shape, (std::vector<int>{128, 11, 3, 3}));
  EXPECT_EQ(p[p.index("block1.conv9.weight")].shape, (std::vector<int>{192, 192, 3, 3}));
}

TEST(Model, SameSeedSameParameters) {
  FlintModel a(tiny_config(), 42), b(tiny_config(), 42), c(tiny_config(), 43);
  bool differs = false;
  for (std::size_t i = 0; i < a.params().all().size(); ++i) {
    EXPECT_EQ(a.params()[i].value, b.params()[i].value);
    differs |= a.params()[i].value != c.params()[i].value;
  }
  EXPECT_TRUE(differs);
}

TEST(Model, ZeroHeadsAverageInputs) {
  FlintModel m(tiny_config(), 3);
  std::mt19937_64 rng(5);
  const Grid g = Grid::make2d(12, 16);
  const FieldF ds = random_field(1, g, rng), du = random_field(1, g, rng), gt = random_field(1, g, rng);
  const auto res = m.forward(ds, du, 0.3, &gt);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(res.d_hat[i], 0.5f * ds[i] + 0.5f * du[i]);
    EXPECT_EQ(res.mask[i], 0.5f);
  }
  for (float v : res.f_hat.values()) EXPECT_EQ(v, 0.f);
}

TEST(Model, OutputShapes) {
  ModelConfig c = tiny_config(3);
  FlintModel m(c, 1);
  std::mt19937_64 rng(1);
  const Grid g = Grid::make3d(8, 8, 12);
  const auto res = m.forward(random_field(1, g, rng), random_field(1, g, rng), 0.5);
  EXPECT_EQ(res.f_hat.channels(), 3);
  EXPECT_EQ(res.f_hat.grid(), g);
  EXPECT_EQ(res.d_hat.grid(), g);
  EXPECT_FALSE(res.teacher.has_value());
  EXPECT_EQ(res.blocks.size(), 2u);
}

TEST(Model, NonMultipleOfFourRejected) {
  FlintModel m(tiny_config(), 1);
  const Grid g = Grid::make2d(10, 16);
  EXPECT_THROW(m.forward(FieldF(1, g), FieldF(1, g), 0.5), ConfigError);
  const Grid g2 = Grid::make2d(12, 16);
  EXPECT_THROW(m.forward(FieldF(1, g2), FieldF(1, g2), 1.5), ContractError);
}

TEST(Model, OddIntermediateExtents) {
  // 100 -> 50 -> 25 -> 13 and back up.
  ModelConfig c = tiny_config();
  FlintModel m(c, 1);
  const Grid g = Grid::make2d(100, 20);
  const auto res = m.forward(FieldF(1, g, 0.2f), FieldF(1, g, 0.4f), 0.5);
  EXPECT_EQ(res.d_hat.grid(), g);
}

// Scalar probe loss over every output so all backward paths are exercised.
struct Probe {
  FieldF w_hat, w_teach, w_fts, w_ftu, w_logit;
  double operator()(const ForwardResult& r) const {
    double acc = 0.0;
    auto dot = [&](const FieldF& a, const FieldF& b) {
      for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    };
    dot(r.d_hat, w_hat);
    dot(r.teacher->d_hat, w_teach);
    dot(r.blocks[0].f_ts, w_fts);
    dot(r.blocks[1].f_tu, w_ftu);
    dot(r.blocks[0].mask_logit, w_logit);
    return acc;
  }
};

TEST(Model, BackwardMatchesFiniteDifferences) {
  FlintModel m(tiny_config(), 11);
  std::mt19937_64 rng(7);
  // Unit PReLU slopes and flows offset from the integer lattice keep the
  // network smooth around the evaluation point, so central differences are
  // meaningful.
  std::normal_distribution<float> nd(0.f, 0.05f);
  for (auto& p : m.params().all()) {
    if (p.kind == nn::ParamKind::kSlope) {
      std::fill(p.value.begin(), p.value.end(), 1.f);
    } else {
      const float scale = p.name.find("conv15") != std::string::npos ? 0.05f : 1.f;
      for (auto& v : p.value) v += scale * nd(rng);
    }
    if (p.name.ends_with("conv15.bias")) {
      for (int c = 0; c < 4; ++c) p.value[c] += 0.3f;
    }
  }
  const Grid g = Grid::make2d(8, 8);
  const FieldF ds = random_field(1, g, rng), du = random_field(1, g, rng), gt = random_field(1, g, rng);
  Probe probe{random_field(1, g, rng, -1, 1), random_field(1, g, rng, -1, 1), random_field(2, g, rng, -1, 1),
              random_field(2, g, rng, -1, 1), random_field(1, g, rng, -1, 1)};

  auto res = m.forward(ds, du, 0.4, &gt, true);
  OutputGrads og;
  og.d_hat = probe.w_hat;
  og.d_hat_teach = probe.w_teach;
  og.blocks.resize(2);
  og.blocks[0].f_ts = probe.w_fts;
  og.blocks[0].mask_logit = probe.w_logit;
  og.blocks[1].f_tu = probe.w_ftu;
  m.params().zero_grad();
  m.backward(res, og);

  int checked = 0, bad = 0;
  std::uniform_int_distribution<int> pick(0, 1 << 30);
  for (auto& p : m.params().all()) {
    for (int k = 0; k < 2; ++k) {
      const std::size_t i = pick(rng) % p.size();
      const float orig = p.value[i];
      const float h = 1e-2f;
      p.value[i] = orig + h;
      const double lp = probe(m.forward(ds, du, 0.4, &gt));
      p.value[i] = orig - h;
      const double lm = probe(m.forward(ds, du, 0.4, &gt));
      p.value[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = p.grad[i];
      ++checked;
      if (std::abs(fd - an) > 2e-2 * std::max(1.0, std::abs(fd))) {
        ++bad;
        ADD_FAILURE() << p.name << "[" << i << "] fd=" << fd << " analytic=" << an;
      }
    }
  }
  EXPECT_GT(checked, 50);
  EXPECT_EQ(bad, 0);
}

TEST(Model, TeacherIsolatedWithoutTarget) {
  FlintModel m(tiny_config(), 2);
  std::mt19937_64 rng(3);
  const Grid g = Grid::make2d(8, 8);
  auto res = m.forward(random_field(1, g, rng), random_field(1, g, rng), 0.5, nullptr, true);
  OutputGrads og;
  og.d_hat = random_field(1, g, rng, -1, 1);
  m.params().zero_grad();
  m.backward(res, og);
  for (std::size_t idx : m.teacher_params()) {
    for (float v : m.params()[idx].grad) ASSERT_EQ(v, 0.f) << m.params()[idx].name;
  }
}

TEST(Model, CheckpointRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "flint_ckpt_test";
  std::filesystem::remove_all(dir);
  FlintModel m(tiny_config(), 9);
  std::mt19937_64 rng(4);
  for (auto& p : m.params().all())
    for (auto& v : p.value) v += 0.01f * static_cast<float>(rng() % 100);
  CheckpointState st;
  st.epoch = 7;
  st.best_val = 0.125;
  save_checkpoint(m, st, dir);
  save_checkpoint(m, st, dir);  // replacing an existing checkpoint
  const Checkpoint ck = load_checkpoint(dir);
  EXPECT_EQ(ck.state.epoch, 7);
  EXPECT_EQ(ck.state.best_val, 0.125);
  const Grid g = Grid::make2d(8, 12);
  const FieldF ds = random_field(1, g, rng), du = random_field(1, g, rng);
  const auto a = m.forward(ds, du, 0.25), b = ck.model.forward(ds, du, 0.25);
  EXPECT_EQ(a.d_hat.values(), b.d_hat.values());
  EXPECT_EQ(a.f_hat.values(), b.f_hat.values());
  std::filesystem::remove_all(dir);
}

TEST(Model, CheckpointDefaultRecordsFourBlocks) {
  const auto dir = std::filesystem::temp_directory_path() / "flint_ckpt_default";
  std::filesystem::remove_all(dir);
  ModelConfig c;
  c.block_channels = {8, 8, 8, 8};
  c.teacher_channels = 8;
  save_checkpoint(FlintModel(c, 1), {}, dir);
  std::ifstream in(dir / "manifest.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("num_blocks"), 4);
  EXPECT_EQ(j.at("tau_convention"), "normalized");
  EXPECT_EQ(j.at("format"), kCheckpointFormat);
  std::filesystem::remove_all(dir);
}

TEST(Model, CheckpointShapeMismatch) {
  const auto dir = std::filesystem::temp_directory_path() / "flint_ckpt_bad";
  std::filesystem::remove_all(dir);
  save_checkpoint(FlintModel(tiny_config(), 1), {}, dir);
  std::filesystem::resize_file(dir / "params.bin", 16);
  try {
    load_checkpoint(dir);
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind(), LoadError::Kind::kShapeMismatch);
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace flint
