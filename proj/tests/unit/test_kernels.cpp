#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "flint/kernels/kernels.hpp"

using namespace flint::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::mt19937& rng, float lo = -1.f, float hi = 1.f) {
  std::uniform_real_distribution<float> d(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Plain triple loop in double.
std::vector<double> gemm_oracle(bool ta, bool tb, int m, int n, int k, float alpha, const std::vector<float>& a,
                                int lda, const std::vector<float>& b, int ldb, float beta, const std::vector<float>& c0,
                                int ldc) {
  std::vector<double> c(c0.begin(), c0.end());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (int p = 0; p < k; ++p) {
        const double av = ta ? a[p * lda + i] : a[i * lda + p];
        const double bv = tb ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      c[i * ldc + j] = alpha * acc + (beta == 0.f ? 0.0 : beta * c0[i * ldc + j]);
    }
  }
  return c;
}

class KernelIsa : public ::testing::TestWithParam<Isa> {
 protected:
  void SetUp() override {
    if (!isa_available(GetParam())) GTEST_SKIP() << isa_name(GetParam()) << " not available";
  }
  const KernelTable& k() const { return table(GetParam()); }
};

TEST_P(KernelIsa, SgemmMatchesOracleForAllTransposes) {
  std::mt19937 rng(1);
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      for (auto [m, n, kk] : {std::tuple{1, 1, 1}, {7, 13, 5}, {33, 17, 70}, {64, 129, 31}}) {
        const int lda = ta ? m : kk, ldb = tb ? kk : n, ldc = n;
        const auto a = random_vec(static_cast<std::size_t>(m) * kk, rng);
        const auto b = random_vec(static_cast<std::size_t>(kk) * n, rng);
        auto c = random_vec(static_cast<std::size_t>(m) * n, rng);
        for (float beta : {0.f, 1.f, 0.5f}) {
          auto cc = c;
          k().sgemm(ta, tb, m, n, kk, 1.25f, a.data(), lda, b.data(), ldb, beta, cc.data(), ldc);
          const auto ref = gemm_oracle(ta, tb, m, n, kk, 1.25f, a, lda, b, ldb, beta, c, ldc);
          for (std::size_t i = 0; i < cc.size(); ++i) ASSERT_NEAR(cc[i], ref[i], 1e-4 * (1 + std::abs(ref[i])));
        }
      }
    }
  }
}

TEST_P(KernelIsa, SgemmBetaZeroIgnoresNanInOutput) {
  std::vector<float> a{1, 2, 3, 4}, b{1, 0, 0, 1}, c(4, std::nanf(""));
  k().sgemm(false, false, 2, 2, 2, 1.f, a.data(), 2, b.data(), 2, 0.f, c.data(), 2);
  EXPECT_EQ(c, (std::vector<float>{1, 2, 3, 4}));
}

INSTANTIATE_TEST_SUITE_P(Isas, KernelIsa, ::testing::Values(Isa::kScalar, Isa::kAvx2),
                         [](const auto& info) { return std::string(isa_name(info.param)); });

// The remaining kernels must agree between the two ISAs: exactly where no
// reassociation happens, to rounding elsewhere.
class KernelEquivalence : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!isa_available(Isa::kAvx2)) GTEST_SKIP() << "avx2 not available";
  }
  const KernelTable& s = table(Isa::kScalar);
  const KernelTable& v = table(Isa::kAvx2);
};

TEST_F(KernelEquivalence, WarpIsBitIdentical) {
  std::mt19937 rng(7);
  for (auto [h, w] : {std::pair{1, 1}, {3, 5}, {17, 23}, {64, 64}, {9, 40}}) {
    const std::size_t n = static_cast<std::size_t>(h) * w;
    const auto src = random_vec(n, rng, 0.f, 1.f);
    const auto fy = random_vec(n, rng, -4.f, 4.f);
    const auto fx = random_vec(n, rng, -4.f, 4.f);
    std::vector<float> a(n), b(n);
    s.warp_bilinear_2d(src.data(), fy.data(), fx.data(), h, w, a.data());
    v.warp_bilinear_2d(src.data(), fy.data(), fx.data(), h, w, b.data());
    EXPECT_EQ(a, b) << h << "x" << w;
  }
}

TEST_F(KernelEquivalence, PreluForwardAndBackward) {
  std::mt19937 rng(3);
  for (std::size_t n : {1u, 7u, 8u, 9u, 1000u}) {
    const auto x = random_vec(n, rng);
    const auto gy = random_vec(n, rng);
    std::vector<float> ya(n), yb(n), ga(n), gb(n);
    s.prelu_forward(x.data(), n, 0.25f, ya.data());
    v.prelu_forward(x.data(), n, 0.25f, yb.data());
    EXPECT_EQ(ya, yb);
    const float sa = s.prelu_backward(x.data(), gy.data(), n, 0.25f, ga.data());
    const float sb = v.prelu_backward(x.data(), gy.data(), n, 0.25f, gb.data());
    EXPECT_EQ(ga, gb);
    EXPECT_NEAR(sa, sb, 1e-5 * (1 + std::abs(sa)));
  }
}

TEST_F(KernelEquivalence, AdamW) {
  std::mt19937 rng(5);
  const std::size_t n = 1031;
  const auto p0 = random_vec(n, rng), g = random_vec(n, rng);
  auto pa = p0, pb = p0;
  std::vector<float> ma(n, 0.f), va(n, 0.f), mb(n, 0.f), vb(n, 0.f);
  AdamWStep step;
  step.lr = 1e-3f;
  step.weight_decay = 1e-4f;
  for (int it = 1; it <= 5; ++it) {
    step.bias_correction1 = 1.f - std::pow(0.9f, float(it));
    step.bias_correction2 = 1.f - std::pow(0.999f, float(it));
    s.adamw(pa.data(), g.data(), ma.data(), va.data(), n, step);
    v.adamw(pb.data(), g.data(), mb.data(), vb.data(), n, step);
  }
  for (std::size_t i = 0; i < n; ++i) {
    ASSERT_NEAR(pa[i], pb[i], 1e-6f);
    ASSERT_NEAR(ma[i], mb[i], 1e-6f);
    ASSERT_NEAR(va[i], vb[i], 1e-6f);
  }
}

TEST(KernelDispatch, ScalarAlwaysAvailableAndOverrideWorks) {
  EXPECT_TRUE(isa_available(Isa::kScalar));
  const Isa before = active().isa;
  set_active(Isa::kScalar);
  EXPECT_EQ(active().isa, Isa::kScalar);
  set_active(before);
  EXPECT_EQ(active().isa, before);
}

}  // namespace
