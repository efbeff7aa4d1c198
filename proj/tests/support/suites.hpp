#pragma once

// Randomized check suites shared by the unit tests and the acceptance binary.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "flint/losses.hpp"
#include "flint/warp.hpp"
#include "support/oracles.hpp"

namespace suites {

struct WarpOracleResult {
  int cases = 0;
  double max_abs_error = 0.0;
  bool identity_exact = true;
};

// Random fields in [0,1] and flows with |components| <= 3. Flows sit on a
// 1/4096 lattice so p + v is exact in float and the comparison measures only
// the interpolation arithmetic.
inline WarpOracleResult warp_oracle(int cases_2d, int cases_3d, std::uint64_t seed) {
  WarpOracleResult r;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> ext2(1, 48), ext3(1, 12), chans(1, 2);
  std::uniform_int_distribution<int> lattice(-3 * 4096, 3 * 4096);
  for (int i = 0; i < cases_2d + cases_3d; ++i) {
    const bool three = i >= cases_2d;
    const flint::Grid g = three ? flint::Grid::make3d(ext3(rng), ext3(rng), ext3(rng))
                                : flint::Grid::make2d(ext2(rng), ext2(rng));
    const flint::FieldF src = oracle::random_field<float>(chans(rng), g, rng, 0.0, 1.0);
    flint::FieldF flow(g.dims, g);
    for (auto& v : flow.values()) v = static_cast<float>(lattice(rng) / 4096.0);
    const flint::FieldF out = flint::backward_warp(src, flow);
    const flint::Field<double> ref = oracle::warp(src, flow);
    for (std::size_t k = 0; k < out.size(); ++k) {
      r.max_abs_error = std::max(r.max_abs_error, std::abs(double(out[k]) - ref[k]));
    }
    const flint::FieldF same = flint::backward_warp(src, flint::FieldF(g.dims, g));
    if (same.values() != src.values()) r.identity_exact = false;
    ++r.cases;
  }
  return r;
}

struct GradientCheck {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

namespace detail {

using FD = flint::Field<double>;

inline GradientCheck check(const std::string& name, std::vector<double>& x, const std::vector<double>& analytic,
                           const std::function<double()>& f, double h = 1e-5) {
  const auto numeric = oracle::numeric_gradient(x, f, h);
  return {name, oracle::max_relative_error(analytic, numeric), x.size()};
}

// Target offset by +-[0.05, 0.5] from x so |.| and the per-cell norm stay
// away from their kinks.
inline FD offset_from(const FD& x, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.05, 0.5);
  FD t = x;
  for (auto& v : t.values()) v += (rng() & 1 ? 1.0 : -1.0) * mag(rng);
  return t;
}

}  // namespace detail

// Analytic versus central-difference gradients in double precision on 8x8
// and 4x4x4 instances.
inline std::vector<GradientCheck> gradients(std::uint64_t seed) {
  using detail::FD;
  std::vector<GradientCheck> out;
  std::mt19937_64 rng(seed);
  for (const flint::Grid g : {flint::Grid::make2d(8, 8), flint::Grid::make3d(4, 4, 4)}) {
    const std::string tag = g.dims == 2 ? " 8x8" : " 4x4x4";

    // backward_warp: L = sum(w * warp(src, flow)).
    {
      FD src = oracle::random_field<double>(1, g, rng, 0.0, 1.0);
      FD flow = oracle::smooth_flow(g, rng);
      const FD w = oracle::random_field<double>(1, g, rng, -1.0, 1.0);
      auto f = [&] {
        const FD o = flint::backward_warp(src, flow);
        double acc = 0;
        for (std::size_t i = 0; i < o.size(); ++i) acc += w[i] * o[i];
        return acc;
      };
      FD gs(1, g), gf(g.dims, g);
      flint::backward_warp_grad(src, flow, w, &gs, &gf);
      out.push_back(detail::check("backward_warp/source" + tag, src.values(), gs.values(), f));
      out.push_back(detail::check("backward_warp/flow" + tag, flow.values(), gf.values(), f));
    }
    // loss_rec
    {
      const FD gt = oracle::random_field<double>(1, g, rng, 0.0, 1.0);
      FD hat = detail::offset_from(gt, rng), teach = detail::offset_from(gt, rng);
      auto f = [&] { return flint::loss_rec(hat, teach, gt); };
      FD gh(1, g), gt2(1, g);
      flint::loss_rec(hat, teach, gt, 1.0, &gh, &gt2);
      out.push_back(detail::check("loss_rec/d_hat" + tag, hat.values(), gh.values(), f));
      out.push_back(detail::check("loss_rec/d_hat_teach" + tag, teach.values(), gt2.values(), f));
    }
    // loss_flow with N = 3 blocks, gamma 0.8
    {
      const FD gt = oracle::random_field<double>(g.dims, g, rng, -2.0, 2.0);
      std::vector<FD> blocks;
      for (int b = 0; b < 3; ++b) blocks.push_back(detail::offset_from(gt, rng));
      FD teach = detail::offset_from(gt, rng);
      auto ptrs = [&] {
        std::vector<const FD*> p;
        for (auto& b : blocks) p.push_back(&b);
        return p;
      };
      auto f = [&] { return flint::loss_flow(ptrs(), teach, gt, 0.8); };
      std::vector<FD> gb(3, FD(g.dims, g));
      std::vector<FD*> gbp{&gb[0], &gb[1], &gb[2]};
      FD gteach(g.dims, g);
      flint::loss_flow(ptrs(), teach, gt, 0.8, 1.0, &gbp, &gteach);
      for (int b = 0; b < 3; ++b) {
        out.push_back(detail::check("loss_flow/block" + std::to_string(b) + tag, blocks[b].values(), gb[b].values(), f));
      }
      out.push_back(detail::check("loss_flow/teacher" + tag, teach.values(), gteach.values(), f));
    }
    // loss_dis: gradient flows into the student only.
    {
      const FD t_ts = oracle::random_field<double>(g.dims, g, rng, -2.0, 2.0);
      const FD t_tu = oracle::random_field<double>(g.dims, g, rng, -2.0, 2.0);
      FD s_ts = detail::offset_from(t_ts, rng), s_tu = detail::offset_from(t_tu, rng);
      auto f = [&] { return flint::loss_dis(s_ts, s_tu, t_ts, t_tu); };
      FD g1(g.dims, g), g2(g.dims, g);
      flint::loss_dis(s_ts, s_tu, t_ts, t_tu, 1.0, &g1, &g2);
      out.push_back(detail::check("loss_dis/student_ts" + tag, s_ts.values(), g1.values(), f));
      out.push_back(detail::check("loss_dis/student_tu" + tag, s_tu.values(), g2.values(), f));
    }
    // loss_photo: gradients into both flows and the interpolant.
    {
      const FD d_s = oracle::random_field<double>(1, g, rng, 0.0, 1.0);
      const FD d_u = oracle::random_field<double>(1, g, rng, 0.0, 1.0);
      FD d_hat = oracle::random_field<double>(1, g, rng, 0.0, 1.0);
      FD f_ts = oracle::smooth_flow(g, rng), f_tu = oracle::smooth_flow(g, rng);
      for (auto& v : f_ts.values()) v = -v;  // the loss samples along -F
      for (auto& v : f_tu.values()) v = -v;
      auto f = [&] { return flint::loss_photo(f_ts, f_tu, d_s, d_u, d_hat); };
      FD g_ts(g.dims, g), g_tu(g.dims, g), g_hat(1, g);
      flint::loss_photo(f_ts, f_tu, d_s, d_u, d_hat, flint::kCharbonnierEps, 1.0, &g_ts, &g_tu, &g_hat);
      out.push_back(detail::check("loss_photo/flow_ts" + tag, f_ts.values(), g_ts.values(), f));
      out.push_back(detail::check("loss_photo/flow_tu" + tag, f_tu.values(), g_tu.values(), f));
      out.push_back(detail::check("loss_photo/d_hat" + tag, d_hat.values(), g_hat.values(), f));
    }
  }
  return out;
}

}  // namespace suites
