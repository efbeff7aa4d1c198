#include <cmath>
#include <numbers>

#include "flint/datagen.hpp"

namespace flint::datagen {
namespace {

// Direction q moves by (ey[q], ex[q]) cells per step.
constexpr int kEx[LbmSolver::kQ] = {0, 1, 0, -1, 0, 1, -1, -1, 1};
constexpr int kEy[LbmSolver::kQ] = {0, 0, 1, 0, -1, 1, 1, -1, -1};
constexpr int kOpp[LbmSolver::kQ] = {0, 3, 4, 1, 2, 7, 8, 5, 6};
// The rest weight sits one ulp below 4/9 so the weights sum to exactly 1.0 in
// index order; the uniform rest state is then a bit-exact fixed point.
constexpr double kW[LbmSolver::kQ] = {4.0 / 9 - 0x1p-54, 1.0 / 9,  1.0 / 9,  1.0 / 9, 1.0 / 9,
                                      1.0 / 36,          1.0 / 36, 1.0 / 36, 1.0 / 36};

}  // namespace

double lbm_equilibrium(int q, double rho, double uy, double ux) {
  const double eu = kEx[q] * ux + kEy[q] * uy;
  const double uu = ux * ux + uy * uy;
  return kW[q] * rho * (1.0 + 3.0 * eu + 4.5 * eu * eu - 1.5 * uu);
}

void LbmParams::validate() const {
  if (height < 3 || width < 3) throw ConfigError("LBM grid must be at least 3x3");
  if (!(tau > 0.5)) throw ConfigError("LBM relaxation time must exceed 0.5");
  if (!(u0 >= 0.0 && u0 < 0.3)) throw ConfigError("LBM inflow speed must lie in [0, 0.3)");
  if (radius < 0.0) throw ConfigError("cylinder radius must be non-negative");
  if (radius > 0.0 && (cy - radius < 0.0 || cy + radius > height - 1 || cx - radius < 1.0 || cx + radius > width - 2)) {
    throw ConfigError("cylinder must lie fully inside the grid");
  }
  if (steps < 0 || warmup < 0 || warmup > steps) throw ConfigError("LBM requires 0 <= warmup <= steps");
  if (record_stride < 1) throw ConfigError("record stride must be at least 1");
}

int LbmParams::frames() const { return static_cast<int>((steps - warmup) / record_stride) + 1; }

nlohmann::json LbmParams::to_json() const {
  return {{"generator", "lbm-d2q9-bgk"},
          {"height", height},
          {"width", width},
          {"cylinder_center", {cy, cx}},
          {"cylinder_radius", radius},
          {"tau_lbm", tau},
          {"viscosity", (tau - 0.5) / 3.0},
          {"u0", u0},
          {"perturbation", perturbation},
          {"steps", steps},
          {"warmup", warmup},
          {"record_stride", record_stride}};
}

LbmSolver::LbmSolver(const LbmParams& params, std::uint64_t seed)
    : params_(params), cells_(static_cast<std::size_t>(params.height) * params.width) {
  params_.validate();
  f_.assign(kQ * cells_, 0.0);
  scratch_.assign(kQ * cells_, 0.0);
  solid_.assign(cells_, 0);

  std::mt19937_64 rng(seed);
  const double phase = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const double r2 = params_.radius * params_.radius;
  for (int y = 0; y < params_.height; ++y) {
    for (int x = 0; x < params_.width; ++x) {
      const std::size_t c = idx(y, x);
      if (params_.radius > 0.0) {
        const double dy = y - params_.cy;
        const double dx = x - params_.cx;
        solid_[c] = dy * dy + dx * dx <= r2 ? 1 : 0;
      }
      if (solid_[c]) {
        set_equilibrium(c, 1.0, 0.0, 0.0);
      } else {
        const double uy = params_.perturbation * params_.u0 *
                          std::sin(2.0 * std::numbers::pi * (static_cast<double>(x) / params_.width + phase));
        set_equilibrium(c, 1.0, uy, params_.u0);
      }
    }
  }
}

void LbmSolver::set_equilibrium(std::size_t cell, double rho, double uy, double ux) {
  for (int q = 0; q < kQ; ++q) pop(q, cell) = lbm_equilibrium(q, rho, uy, ux);
}

void LbmSolver::collide() {
  const double omega = 1.0 / params_.tau;
  for (std::size_t c = 0; c < cells_; ++c) {
    if (solid_[c]) continue;
    double fq[kQ];
    double rho = 0.0, mx = 0.0, my = 0.0;
    for (int q = 0; q < kQ; ++q) {
      fq[q] = pop(q, c);
      rho += fq[q];
      mx += kEx[q] * fq[q];
      my += kEy[q] * fq[q];
    }
    const double ux = mx / rho;
    const double uy = my / rho;
    for (int q = 0; q < kQ; ++q) pop(q, c) = fq[q] - omega * (fq[q] - lbm_equilibrium(q, rho, uy, ux));
  }
}

void LbmSolver::stream() {
  const int h = params_.height;
  const int w = params_.width;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t src = idx(y, x);
      if (solid_[src]) continue;
      for (int q = 0; q < kQ; ++q) {
        const int xd = x + kEx[q];
        if (xd < 0 || xd >= w) continue;  // leaves through inflow/outflow; refilled by the boundaries
        int yd = y + kEy[q];
        yd = yd < 0 ? yd + h : (yd >= h ? yd - h : yd);
        const std::size_t dst = idx(yd, xd);
        if (solid_[dst]) {
          // Half-way bounce-back: returns to the source cell reversed.
          scratch_[static_cast<std::size_t>(kOpp[q]) * cells_ + src] = pop(q, src);
        } else {
          scratch_[static_cast<std::size_t>(q) * cells_ + dst] = pop(q, src);
        }
      }
    }
  }
  f_.swap(scratch_);
}

void LbmSolver::apply_boundaries() {
  const int h = params_.height;
  const int w = params_.width;
  for (int y = 0; y < h; ++y) {
    const std::size_t in = idx(y, 0);
    if (!solid_[in]) set_equilibrium(in, 1.0, 0.0, params_.u0);
    const std::size_t out = idx(y, w - 1);
    const std::size_t prev = idx(y, w - 2);
    if (!solid_[out]) {
      for (int q = 0; q < kQ; ++q) pop(q, out) = pop(q, prev);
    }
  }
  for (std::size_t c = 0; c < cells_; ++c) {
    if (solid_[c]) set_equilibrium(c, 1.0, 0.0, 0.0);
  }
}

void LbmSolver::step() {
  collide();
  stream();
  apply_boundaries();
  ++step_count_;
}

double LbmSolver::total_mass() const {
  double m = 0.0;
  for (std::size_t c = 0; c < cells_; ++c) {
    if (solid_[c]) continue;
    for (int q = 0; q < kQ; ++q) m += pop(q, c);
  }
  return m;
}

double LbmSolver::density(int y, int x) const {
  const std::size_t c = idx(y, x);
  double rho = 0.0;
  for (int q = 0; q < kQ; ++q) rho += pop(q, c);
  return rho;
}

std::array<double, 2> LbmSolver::velocity(int y, int x) const {
  const std::size_t c = idx(y, x);
  if (solid_[c]) return {0.0, 0.0};
  double rho = 0.0, mx = 0.0, my = 0.0;
  for (int q = 0; q < kQ; ++q) {
    const double fq = pop(q, c);
    rho += fq;
    mx += kEx[q] * fq;
    my += kEy[q] * fq;
  }
  return {my / rho, mx / rho};
}

bool LbmSolver::finite() const {
  for (double v : f_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

LbmFrame LbmSolver::snapshot() const {
  const Grid g = Grid::make2d(params_.height, params_.width);
  LbmFrame frame{FieldF(1, g), FieldF(2, g)};
  const double scale = params_.record_stride;
  for (int y = 0; y < params_.height; ++y) {
    for (int x = 0; x < params_.width; ++x) {
      const std::size_t c = idx(y, x);
      frame.density[c] = static_cast<float>(density(y, x));
      const auto u = velocity(y, x);
      frame.flow[c] = static_cast<float>(u[0] * scale);
      frame.flow[cells_ + c] = static_cast<float>(u[1] * scale);
    }
  }
  return frame;
}

std::vector<LbmFrame> lbm_simulate(const LbmParams& params, std::uint64_t seed) {
  LbmSolver solver(params, seed);
  std::vector<LbmFrame> frames;
  frames.reserve(static_cast<std::size_t>(params.frames()));
  for (long s = 0; s <= params.steps; ++s) {
    if (s > 0) {
      solver.step();
      // Scanned every 64 steps; the reported step is the first scan that failed.
      if (s % 64 == 0 && !solver.finite()) {
        throw DivergedError(s, "LBM simulation diverged at step " + std::to_string(s));
      }
    }
    if (s >= params.warmup && (s - params.warmup) % params.record_stride == 0) {
      if (!solver.finite()) throw DivergedError(s, "LBM simulation diverged at step " + std::to_string(s));
      frames.push_back(solver.snapshot());
    }
  }
  return frames;
}

}  // namespace flint::datagen
