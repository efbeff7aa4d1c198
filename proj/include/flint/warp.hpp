#pragma once

// Backward warping (bilinear in 2D, trilinear in 3D), fusion blending and
// the constant time-conditioning plane. Everything here is templated on the
// value type so gradient checks can run in double precision; the float 2D
// forward path goes through the SIMD kernel table.

#include <algorithm>
#include <cmath>
#include <type_traits>

#include "flint/kernels/kernels.hpp"
#include "flint/tensor.hpp"

namespace flint {

namespace detail {

template <typename T>
struct AxisSample {
  int lo;
  int hi;
  T frac;
  T slope;  // d(clamped coordinate)/d(coordinate): 1 strictly inside, else 0
};

template <typename T>
inline AxisSample<T> axis_sample(T coord, int n) {
  const T last = static_cast<T>(n - 1);
  const T c = std::clamp(coord, T(0), last);
  const T f = std::floor(c);
  const int lo = static_cast<int>(f);
  return {lo, std::min(lo + 1, n - 1), c - f, (coord > T(0) && coord < last) ? T(1) : T(0)};
}

inline void check_warp_args(const Grid& src, const Grid& flow_grid, int flow_channels) {
  require_same_grid(src, flow_grid, "backward_warp");
  if (flow_channels != src.dims) {
    throw ContractError("backward_warp: flow has " + std::to_string(flow_channels) + " channels, grid is " +
                        std::to_string(src.dims) + "D");
  }
}

}  // namespace detail

// output(p) = source(p + flow(p)) with clamp-to-edge sampling. Flow channels
// are ordered like array axes: (dy, dx) in 2D, (dz, dy, dx) in 3D.
template <typename T>
Field<T> backward_warp(const Field<T>& source, const Field<T>& flow) {
  const Grid& g = source.grid();
  detail::check_warp_args(g, flow.grid(), flow.channels());
  Field<T> out(source.channels(), g);

  if constexpr (std::is_same_v<T, float>) {
    if (g.dims == 2) {
      const auto& k = kernels::active();
      for (int c = 0; c < source.channels(); ++c) {
        k.warp_bilinear_2d(source.channel(c).data(), flow.channel(0).data(), flow.channel(1).data(), g.height,
                           g.width, out.channel(c).data());
      }
      return out;
    }
  }

  const bool is3d = g.dims == 3;
  const std::size_t cells = g.cells();
  for (int z = 0; z < g.depth; ++z) {
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        const std::size_t p = (static_cast<std::size_t>(z) * g.height + y) * g.width + x;
        const int base = is3d ? 1 : 0;
        const auto sz = is3d ? detail::axis_sample<T>(T(z) + flow[p], g.depth) : detail::AxisSample<T>{0, 0, T(0), T(0)};
        const auto sy = detail::axis_sample<T>(T(y) + flow[base * cells + p], g.height);
        const auto sx = detail::axis_sample<T>(T(x) + flow[(base + 1) * cells + p], g.width);
        for (int c = 0; c < source.channels(); ++c) {
          auto at = [&](int zz, int yy, int xx) { return source.at(c, zz, yy, xx); };
          auto plane = [&](int zz) {
            const T top = at(zz, sy.lo, sx.lo) + sx.frac * (at(zz, sy.lo, sx.hi) - at(zz, sy.lo, sx.lo));
            const T bot = at(zz, sy.hi, sx.lo) + sx.frac * (at(zz, sy.hi, sx.hi) - at(zz, sy.hi, sx.lo));
            return top + sy.frac * (bot - top);
          };
          const T v0 = plane(sz.lo);
          out[static_cast<std::size_t>(c) * cells + p] = is3d ? v0 + sz.frac * (plane(sz.hi) - v0) : v0;
        }
      }
    }
  }
  return out;
}

// Accumulates d(sum grad_out * warp)/d(source) and /d(flow) into the given
// fields; either pointer may be null.
template <typename T>
void backward_warp_grad(const Field<T>& source, const Field<T>& flow, const Field<T>& grad_out, Field<T>* grad_source,
                        Field<T>* grad_flow) {
  const Grid& g = source.grid();
  detail::check_warp_args(g, flow.grid(), flow.channels());
  require_same_grid(g, grad_out.grid(), "backward_warp_grad");
  if (grad_source) require_same_grid(g, grad_source->grid(), "backward_warp_grad");
  if (grad_flow) require_same_grid(g, grad_flow->grid(), "backward_warp_grad");

  const bool is3d = g.dims == 3;
  const std::size_t cells = g.cells();
  const int base = is3d ? 1 : 0;
  for (int z = 0; z < g.depth; ++z) {
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        const std::size_t p = (static_cast<std::size_t>(z) * g.height + y) * g.width + x;
        const auto sz = is3d ? detail::axis_sample<T>(T(z) + flow[p], g.depth) : detail::AxisSample<T>{0, 0, T(0), T(0)};
        const auto sy = detail::axis_sample<T>(T(y) + flow[base * cells + p], g.height);
        const auto sx = detail::axis_sample<T>(T(x) + flow[(base + 1) * cells + p], g.width);
        const int zs[2] = {sz.lo, sz.hi};
        const T wz[2] = {T(1) - sz.frac, sz.frac};
        const int nz = is3d ? 2 : 1;
        const T wy[2] = {T(1) - sy.frac, sy.frac};
        const T wx[2] = {T(1) - sx.frac, sx.frac};
        const int ys[2] = {sy.lo, sy.hi};
        const int xs[2] = {sx.lo, sx.hi};
        T dz = 0, dy = 0, dx = 0;
        for (int c = 0; c < source.channels(); ++c) {
          const T go = grad_out[static_cast<std::size_t>(c) * cells + p];
          if (go == T(0)) continue;
          for (int a = 0; a < nz; ++a) {
            const T za = is3d ? wz[a] : T(1);
            const T dza = a == 0 ? T(-1) : T(1);
            for (int b = 0; b < 2; ++b) {
              const T dyb = b == 0 ? T(-1) : T(1);
              for (int e = 0; e < 2; ++e) {
                const T dxe = e == 0 ? T(-1) : T(1);
                const T s = source.at(c, zs[a], ys[b], xs[e]);
                if (grad_source) grad_source->at(c, zs[a], ys[b], xs[e]) += go * za * wy[b] * wx[e];
                if (grad_flow) {
                  if (is3d) dz += go * s * dza * wy[b] * wx[e];
                  dy += go * s * za * dyb * wx[e];
                  dx += go * s * za * wy[b] * dxe;
                }
              }
            }
          }
        }
        if (grad_flow) {
          if (is3d) (*grad_flow)[p] += dz * sz.slope;
          (*grad_flow)[base * cells + p] += dy * sy.slope;
          (*grad_flow)[(base + 1) * cells + p] += dx * sx.slope;
        }
      }
    }
  }
}

// output = warp_s * mask + warp_u * (1 - mask).
template <typename T>
Field<T> fuse(const Field<T>& warp_s, const Field<T>& warp_u, const Field<T>& mask) {
  require_same_grid(warp_s.grid(), warp_u.grid(), "fuse");
  require_same_grid(warp_s.grid(), mask.grid(), "fuse");
  if (warp_s.channels() != 1 || warp_u.channels() != 1 || mask.channels() != 1) {
    throw ContractError("fuse: expects single-channel fields");
  }
  Field<T> out(1, warp_s.grid());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T m = mask[i];
    if (!(m >= T(0) && m <= T(1))) throw ContractError("fuse: mask value outside [0,1]");
    out[i] = warp_s[i] * m + warp_u[i] * (T(1) - m);
  }
  return out;
}

// Accumulates gradients of fuse into the given fields (any may be null).
template <typename T>
void fuse_grad(const Field<T>& warp_s, const Field<T>& warp_u, const Field<T>& mask, const Field<T>& grad_out,
               Field<T>* grad_s, Field<T>* grad_u, Field<T>* grad_mask) {
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const T g = grad_out[i];
    if (grad_s) (*grad_s)[i] += g * mask[i];
    if (grad_u) (*grad_u)[i] += g * (T(1) - mask[i]);
    if (grad_mask) (*grad_mask)[i] += g * (warp_s[i] - warp_u[i]);
  }
}

template <typename T>
Field<T> make_tau_plane(T tau, const Grid& grid) {
  if (!(tau >= T(0) && tau <= T(1))) throw ContractError("tau must lie in [0,1]");
  return Field<T>(1, grid, tau);
}

}  // namespace flint
