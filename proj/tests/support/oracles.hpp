#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the library's numerical code.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "flint/tensor.hpp"

namespace oracle {

// Sample of `src` (channel c) at a continuous position, written out as the
// explicit weighted sum over the 2 or 4 or 8 surrounding cells with every
// coordinate clamped to the grid first.
template <typename T>
double sample(const flint::Field<T>& src, int c, double z, double y, double x) {
  const flint::Grid& g = src.grid();
  auto clampd = [](double v, int n) { return std::min(std::max(v, 0.0), double(n - 1)); };
  z = g.dims == 3 ? clampd(z, g.depth) : 0.0;
  y = clampd(y, g.height);
  x = clampd(x, g.width);
  const int z0 = int(std::floor(z)), y0 = int(std::floor(y)), x0 = int(std::floor(x));
  double acc = 0.0;
  for (int dz = 0; dz <= (g.dims == 3 ? 1 : 0); ++dz) {
    for (int dy = 0; dy <= 1; ++dy) {
      for (int dx = 0; dx <= 1; ++dx) {
        const int zz = std::min(z0 + dz, g.depth - 1), yy = std::min(y0 + dy, g.height - 1),
                  xx = std::min(x0 + dx, g.width - 1);
        const double wz = g.dims == 3 ? (dz ? z - z0 : 1.0 - (z - z0)) : 1.0;
        const double wy = dy ? y - y0 : 1.0 - (y - y0);
        const double wx = dx ? x - x0 : 1.0 - (x - x0);
        const double w = wz * wy * wx;
        if (w != 0.0) acc += w * double(src.at(c, zz, yy, xx));
      }
    }
  }
  return acc;
}

// out(p) = src(p + flow(p)) evaluated cell by cell.
template <typename T>
flint::Field<double> warp(const flint::Field<T>& src, const flint::Field<T>& flow) {
  const flint::Grid& g = src.grid();
  flint::Field<double> out(src.channels(), g);
  const int base = g.dims == 3 ? 1 : 0;
  for (int z = 0; z < g.depth; ++z) {
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        const double fz = g.dims == 3 ? double(flow.at(0, z, y, x)) : 0.0;
        const double fy = flow.at(base, z, y, x), fx = flow.at(base + 1, z, y, x);
        for (int c = 0; c < src.channels(); ++c) out.at(c, z, y, x) = sample(src, c, z + fz, y + fy, x + fx);
      }
    }
  }
  return out;
}

template <typename T>
flint::Field<T> random_field(int channels, const flint::Grid& g, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  flint::Field<T> f(channels, g);
  for (auto& v : f.values()) v = static_cast<T>(d(rng));
  return f;
}

// Flow whose sample positions stay strictly inside the grid and whose
// fractional parts stay away from 0 and 1, so every coordinate is a point
// where the interpolant is differentiable.
inline flint::Field<double> smooth_flow(const flint::Grid& g, std::mt19937_64& rng, double max_abs = 2.0) {
  std::uniform_real_distribution<double> frac(0.15, 0.85);
  flint::Field<double> f(g.dims, g);
  const int extents[3] = {g.depth, g.height, g.width};
  const int first_axis = 3 - g.dims;
  for (int z = 0; z < g.depth; ++z) {
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        const int pos[3] = {z, y, x};
        for (int a = first_axis; a < 3; ++a) {
          // Target cell k in reach of pos, then a fractional offset inside it.
          double v = 0.0;
          if (extents[a] > 1) {
            const int m = std::max(1, int(max_abs));
            const int lo = std::max(0, pos[a] - m), hi = std::min(extents[a] - 2, pos[a] + m - 1);
            const int k = lo + int(rng() % std::uint64_t(hi - lo + 1));
            v = k + frac(rng) - pos[a];
          }
          f.at(a - first_axis, z, y, x) = v;
        }
      }
    }
  }
  return f;
}

// Central difference of a scalar function with respect to every entry of x.
inline std::vector<double> numeric_gradient(std::vector<double>& x, const std::function<double()>& f, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f();
    x[i] = keep - h;
    const double fm = f();
    x[i] = keep;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Largest |a - n| / max(|a|, |n|, floor) over all coordinates.
inline double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                 double floor = 1e-7) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double den = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / den);
  }
  return worst;
}

// Brute-force count of (s, u) pairs with 2 <= u - s <= window.
inline std::uint64_t enumerate_pairs(int frames, int window) {
  std::uint64_t n = 0;
  for (int s = 0; s < frames; ++s) {
    for (int u = s + 2; u < frames && u - s <= window; ++u) ++n;
  }
  return n;
}

}  // namespace oracle
