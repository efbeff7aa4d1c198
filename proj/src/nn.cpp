#include "flint/nn.hpp"

#include <algorithm>
#include <cmath>

#include "flint/kernels/kernels.hpp"

namespace flint::nn {
namespace {

constexpr std::size_t kColBudget = std::size_t{1} << 22;  // floats per im2col tile

std::size_t tile_for(std::size_t patch, std::size_t n) {
  const std::size_t t = std::max<std::size_t>(64, kColBudget / std::max<std::size_t>(1, patch));
  return std::min(n, t);
}

std::vector<float>& scratch(std::size_t n) {
  thread_local std::vector<float> buf;
  if (buf.size() < n) buf.resize(n);
  return buf;
}

// Visits, for one patch row (channel ci, kernel offset kz/ky/kx), every run of
// output positions in [n0, n1) that shares (oz, oy).
template <typename Fn>
void for_each_segment(const ConvGeom& g, std::size_t n0, std::size_t n1, int ci, int kz, int ky, int kx, Fn&& fn) {
  const std::size_t plane = static_cast<std::size_t>(g.out.height) * g.out.width;
  const int s = g.stride, p = g.pad;
  std::size_t n = n0;
  while (n < n1) {
    const int oz = static_cast<int>(n / plane);
    const std::size_t rem = n % plane;
    const int oy = static_cast<int>(rem / g.out.width);
    const int ox0 = static_cast<int>(rem % g.out.width);
    const int seg = static_cast<int>(std::min<std::size_t>(g.out.width - ox0, n1 - n));
    const int iz = oz * g.sd() - g.pd() + kz;
    const int iy = oy * s - p + ky;
    const bool row_ok = iz >= 0 && iz < g.in.depth && iy >= 0 && iy < g.in.height;
    const std::size_t src_row =
        row_ok ? ((static_cast<std::size_t>(ci) * g.in.depth + iz) * g.in.height + iy) * g.in.width : 0;
    fn(n - n0, ox0, seg, row_ok, src_row, kx);
    n += static_cast<std::size_t>(seg);
  }
}

}  // namespace

std::size_t ParameterSet::add(std::string name, std::vector<int> shape, ParamKind kind) {
  if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  Parameter p;
  p.name = name;
  p.shape = std::move(shape);
  p.kind = kind;
  p.value.assign(n, 0.f);
  p.grad.assign(n, 0.f);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

std::size_t ParameterSet::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
  return it->second;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.f);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

Grid ConvGeom::conv_out(const Grid& in, int kernel, int stride, int pad) {
  Grid out = in;
  if (in.dims == 3) out.depth = out_extent(in.depth, kernel, stride, pad);
  out.height = out_extent(in.height, kernel, stride, pad);
  out.width = out_extent(in.width, kernel, stride, pad);
  return out;
}

void im2col(const float* x, const ConvGeom& g, std::size_t n0, std::size_t n1, float* col) {
  const std::size_t nt = n1 - n0;
  const int s = g.stride, p = g.pad;
  std::size_t row = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int kz = 0; kz < g.kd(); ++kz) {
      for (int ky = 0; ky < g.kernel; ++ky) {
        for (int kx = 0; kx < g.kernel; ++kx, ++row) {
          float* dst = col + row * nt;
          for_each_segment(g, n0, n1, ci, kz, ky, kx,
                           [&](std::size_t off, int ox0, int seg, bool row_ok, std::size_t src_row, int kxx) {
                             float* d = dst + off;
                             if (!row_ok) {
                               std::fill(d, d + seg, 0.f);
                               return;
                             }
                             const float* srow = x + src_row;
                             for (int i = 0; i < seg; ++i) {
                               const int ix = (ox0 + i) * s - p + kxx;
                               d[i] = (ix >= 0 && ix < g.in.width) ? srow[ix] : 0.f;
                             }
                           });
        }
      }
    }
  }
}

void col2im(const float* col, const ConvGeom& g, std::size_t n0, std::size_t n1, float* x) {
  const std::size_t nt = n1 - n0;
  const int s = g.stride, p = g.pad;
  std::size_t row = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int kz = 0; kz < g.kd(); ++kz) {
      for (int ky = 0; ky < g.kernel; ++ky) {
        for (int kx = 0; kx < g.kernel; ++kx, ++row) {
          const float* src = col + row * nt;
          for_each_segment(g, n0, n1, ci, kz, ky, kx,
                           [&](std::size_t off, int ox0, int seg, bool row_ok, std::size_t dst_row, int kxx) {
                             if (!row_ok) return;
                             const float* sp = src + off;
                             float* xrow = x + dst_row;
                             for (int i = 0; i < seg; ++i) {
                               const int ix = (ox0 + i) * s - p + kxx;
                               if (ix >= 0 && ix < g.in.width) xrow[ix] += sp[i];
                             }
                           });
        }
      }
    }
  }
}

Conv::Conv(ParameterSet& params, const std::string& name, int cin, int cout, int stride, bool transposed, int dims,
           std::mt19937_64* rng, int kernel)
    : cin_(cin), cout_(cout), stride_(stride), kernel_(kernel), dims_(dims), transposed_(transposed) {
  const int kvol = dims == 3 ? kernel * kernel * kernel : kernel * kernel;
  std::vector<int> wshape = transposed ? std::vector<int>{cin, cout} : std::vector<int>{cout, cin};
  for (int d = 0; d < dims; ++d) wshape.push_back(kernel);
  weight_ = params.add(name + ".weight", wshape, ParamKind::kWeight);
  bias_ = params.add(name + ".bias", {cout}, ParamKind::kBias);
  if (rng) {
    // Each output sums cin*kvol taps for a convolution; a stride-s
    // transposed convolution reaches about kvol/s^dims taps per input channel.
    double fan_in = static_cast<double>(cin) * kvol;
    if (transposed) fan_in /= std::pow(static_cast<double>(stride), dims);
    const double slope = 0.25;
    const double std_dev = std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in));
    std::normal_distribution<double> dist(0.0, std_dev);
    for (auto& w : params[weight_].value) w = static_cast<float>(dist(*rng));
  }
}

ConvGeom Conv::geometry(const Grid& in, const Grid& out) const {
  ConvGeom g;
  g.kernel = kernel_;
  g.stride = stride_;
  g.pad = kernel_ / 2;
  if (!transposed_) {
    g.cin = cin_;
    g.cout = cout_;
    g.in = in;
    g.out = out;
  } else {
    // A transposed layer is the adjoint of a convolution from its output grid
    // to its input grid.
    g.cin = cout_;
    g.cout = cin_;
    g.in = out;
    g.out = in;
  }
  return g;
}

Grid Conv::output_grid(const Grid& in, const Grid* out_grid) const {
  const int pad = kernel_ / 2;
  if (!transposed_) return ConvGeom::conv_out(in, kernel_, stride_, pad);
  Grid out;
  if (out_grid) {
    out = *out_grid;
  } else {
    out = in;
    if (in.dims == 3) out.depth *= stride_;
    out.height *= stride_;
    out.width *= stride_;
  }
  if (!(ConvGeom::conv_out(out, kernel_, stride_, pad) == in)) {
    throw ContractError("transposed convolution cannot map " + in.to_string() + " to " + out.to_string());
  }
  return out;
}

FieldF Conv::forward(const ParameterSet& params, const FieldF& x, const Grid* out_grid) const {
  if (x.channels() != cin_) {
    throw ContractError("convolution expects " + std::to_string(cin_) + " channels, got " + std::to_string(x.channels()));
  }
  const auto& k = kernels::active();
  const Grid out = output_grid(x.grid(), out_grid);
  const ConvGeom g = geometry(x.grid(), out);
  const float* w = params[weight_].value.data();
  const float* b = params[bias_].value.data();
  FieldF y(cout_, out);
  const std::size_t patch = static_cast<std::size_t>(g.patch());

  if (!transposed_) {
    const std::size_t n = out.cells();
    const std::size_t tile = tile_for(patch, n);
    std::vector<float>& col = scratch(patch * tile);
    for (std::size_t n0 = 0; n0 < n; n0 += tile) {
      const std::size_t n1 = std::min(n, n0 + tile);
      const int nt = static_cast<int>(n1 - n0);
      im2col(x.data(), g, n0, n1, col.data());
      k.sgemm(false, false, cout_, nt, static_cast<int>(patch), 1.f, w, static_cast<int>(patch), col.data(), nt, 0.f,
              y.data() + n0, static_cast<int>(n));
    }
  } else {
    const std::size_t n = x.grid().cells();
    const std::size_t tile = tile_for(patch, n);
    std::vector<float>& col = scratch(patch * tile);
    for (std::size_t n0 = 0; n0 < n; n0 += tile) {
      const std::size_t n1 = std::min(n, n0 + tile);
      const int nt = static_cast<int>(n1 - n0);
      k.sgemm(true, false, static_cast<int>(patch), nt, cin_, 1.f, w, static_cast<int>(patch), x.data() + n0,
              static_cast<int>(n), 0.f, col.data(), nt);
      col2im(col.data(), g, n0, n1, y.data());
    }
  }
  const std::size_t cells = out.cells();
  for (int c = 0; c < cout_; ++c) {
    float* row = y.data() + static_cast<std::size_t>(c) * cells;
    const float bc = b[c];
    for (std::size_t i = 0; i < cells; ++i) row[i] += bc;
  }
  return y;
}

FieldF Conv::backward(ParameterSet& params, const FieldF& x, const FieldF& grad_out, bool need_input_grad) const {
  const auto& k = kernels::active();
  const Grid out = grad_out.grid();
  const ConvGeom g = geometry(x.grid(), out);
  const float* w = params[weight_].value.data();
  float* gw = params[weight_].grad.data();
  float* gb = params[bias_].grad.data();
  const std::size_t patch = static_cast<std::size_t>(g.patch());
  FieldF gx;
  if (need_input_grad) gx = FieldF(cin_, x.grid());

  if (!transposed_) {
    const std::size_t n = out.cells();
    const std::size_t tile = tile_for(patch, n);
    std::vector<float>& buf = scratch(2 * patch * tile);
    float* col = buf.data();
    float* gcol = buf.data() + patch * tile;
    for (std::size_t n0 = 0; n0 < n; n0 += tile) {
      const std::size_t n1 = std::min(n, n0 + tile);
      const int nt = static_cast<int>(n1 - n0);
      im2col(x.data(), g, n0, n1, col);
      k.sgemm(false, true, cout_, static_cast<int>(patch), nt, 1.f, grad_out.data() + n0, static_cast<int>(n), col, nt,
              1.f, gw, static_cast<int>(patch));
      if (need_input_grad) {
        k.sgemm(true, false, static_cast<int>(patch), nt, cout_, 1.f, w, static_cast<int>(patch), grad_out.data() + n0,
                static_cast<int>(n), 0.f, gcol, nt);
        col2im(gcol, g, n0, n1, gx.data());
      }
    }
  } else {
    const std::size_t n = x.grid().cells();
    const std::size_t tile = tile_for(patch, n);
    std::vector<float>& buf = scratch(patch * tile);
    float* col = buf.data();
    for (std::size_t n0 = 0; n0 < n; n0 += tile) {
      const std::size_t n1 = std::min(n, n0 + tile);
      const int nt = static_cast<int>(n1 - n0);
      im2col(grad_out.data(), g, n0, n1, col);
      k.sgemm(false, true, cin_, static_cast<int>(patch), nt, 1.f, x.data() + n0, static_cast<int>(n), col, nt, 1.f, gw,
              static_cast<int>(patch));
      if (need_input_grad) {
        k.sgemm(false, false, cin_, nt, static_cast<int>(patch), 1.f, w, static_cast<int>(patch), col, nt, 0.f,
                gx.data() + n0, static_cast<int>(n));
      }
    }
  }
  const std::size_t cells = out.cells();
  for (int c = 0; c < cout_; ++c) {
    const float* row = grad_out.data() + static_cast<std::size_t>(c) * cells;
    double acc = 0.0;
    for (std::size_t i = 0; i < cells; ++i) acc += row[i];
    gb[c] += static_cast<float>(acc);
  }
  return gx;
}

Prelu::Prelu(ParameterSet& params, const std::string& name, int channels, float init) {
  slope_ = params.add(name + ".slope", {channels}, ParamKind::kSlope);
  std::fill(params[slope_].value.begin(), params[slope_].value.end(), init);
}

FieldF Prelu::forward(const ParameterSet& params, const FieldF& x) const {
  const auto& k = kernels::active();
  FieldF y(x.channels(), x.grid());
  const std::size_t cells = x.grid().cells();
  const auto& slopes = params[slope_].value;
  for (int c = 0; c < x.channels(); ++c) {
    k.prelu_forward(x.data() + c * cells, cells, slopes[c], y.data() + c * cells);
  }
  return y;
}

FieldF Prelu::backward(ParameterSet& params, const FieldF& x, const FieldF& grad_out) const {
  const auto& k = kernels::active();
  FieldF gx(x.channels(), x.grid());
  const std::size_t cells = x.grid().cells();
  auto& p = params[slope_];
  for (int c = 0; c < x.channels(); ++c) {
    p.grad[c] += k.prelu_backward(x.data() + c * cells, grad_out.data() + c * cells, cells, p.value[c],
                                  gx.data() + c * cells);
  }
  return gx;
}

}  // namespace flint::nn
