#pragma once

// Ground-truth ensemble generators: a D2Q9 BGK lattice-Boltzmann solver for
// flow past a cylinder, analytic advection of Gaussian blobs with exact flow,
// and a Gaussian noise injector.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "flint/archive.hpp"
#include "flint/tensor.hpp"

namespace flint::datagen {

// ---------------------------------------------------------------------------
// Lattice Boltzmann
// ---------------------------------------------------------------------------

struct LbmParams {
  int height = 100;
  int width = 400;
  double cy = 50.0;      // cylinder center, cells
  double cx = 100.0;
  double radius = 10.0;  // 0 disables the cylinder
  double tau = 0.6;      // BGK relaxation time, > 0.5
  double u0 = 0.1;       // inflow speed, lattice units
  double perturbation = 0.01;  // relative amplitude of the seeded initial cross-flow
  long steps = 5000;
  long warmup = 0;
  int record_stride = 1;

  // Throws ConfigError when the parameters are outside the solver's validity range.
  void validate() const;
  // Frames recorded by lbm_simulate: steps warmup, warmup+stride, ... <= steps.
  int frames() const;
  nlohmann::json to_json() const;
};

struct LbmFrame {
  FieldF density;  // (1,H,W)
  FieldF flow;     // (2,H,W): lattice velocity x record stride, (uy, ux)
};

class LbmSolver {
 public:
  static constexpr int kQ = 9;

  LbmSolver(const LbmParams& params, std::uint64_t seed);

  // One full update: collide, stream with bounce-back, boundaries.
  void step();
  void collide();
  void stream();
  void apply_boundaries();

  long step_count() const { return step_count_; }
  double total_mass() const;
  bool solid(int y, int x) const { return solid_[idx(y, x)] != 0; }
  double density(int y, int x) const;
  // (uy, ux) at a cell; zero on solid cells.
  std::array<double, 2> velocity(int y, int x) const;
  bool finite() const;

  LbmFrame snapshot() const;
  const LbmParams& params() const { return params_; }

 private:
  std::size_t idx(int y, int x) const { return static_cast<std::size_t>(y) * params_.width + x; }
  double& pop(int q, std::size_t cell) { return f_[static_cast<std::size_t>(q) * cells_ + cell]; }
  double pop(int q, std::size_t cell) const { return f_[static_cast<std::size_t>(q) * cells_ + cell]; }
  void set_equilibrium(std::size_t cell, double rho, double uy, double ux);

  LbmParams params_;
  std::size_t cells_;
  std::vector<double> f_;
  std::vector<double> scratch_;
  std::vector<std::uint8_t> solid_;
  long step_count_ = 0;
};

// Runs a member simulation and returns the recorded frames. Throws
// DivergedError naming the step when populations become non-finite.
std::vector<LbmFrame> lbm_simulate(const LbmParams& params, std::uint64_t seed);

// D2Q9 equilibrium population for direction q.
double lbm_equilibrium(int q, double rho, double uy, double ux);

// ---------------------------------------------------------------------------
// Analytic advection
// ---------------------------------------------------------------------------

enum class VelocityKind { kConstant, kRotation, kShear };

struct Blob {
  std::array<double, 3> center{0, 0, 0};  // (z, y, x); z ignored in 2D
  double width = 4.0;
  double amplitude = 1.0;
};

struct AdvectParams {
  Grid grid = Grid::make2d(64, 64);
  std::vector<Blob> blobs;
  VelocityKind kind = VelocityKind::kConstant;
  std::array<double, 3> velocity{0, 0, 0};   // constant: cells per frame, (z, y, x)
  std::array<double, 3> rot_center{0, 0, 0};  // rotation in the (y, x) plane
  double angular_rate = 0.0;                  // radians per frame
  double shear_rate = 0.0;                    // ux = rate * (y - rot_center.y)
  int steps = 32;                             // recorded frames

  void validate() const;
  nlohmann::json to_json() const;
};

// Material position at time `t` of the particle that was at `p` at time 0.
std::array<double, 3> advect_flow_map(const AdvectParams& params, const std::array<double, 3>& p, double t);

// Exact one-frame displacement of the material at `p` (time independent).
std::array<double, 3> advect_displacement(const AdvectParams& params, const std::array<double, 3>& p);

// Analytic density at `p` and time `t`, clamped to [0,1].
double advect_density(const AdvectParams& params, const std::array<double, 3>& p, double t);

struct AdvectMember {
  std::vector<FieldF> density;
  std::vector<FieldF> flow;
  bool left_domain = false;  // some blob went more than 3 widths outside the grid
};

AdvectMember advect_generate(const AdvectParams& params, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

// values <- clamp(values + N(0, sigma^2), 0, 1)
void add_noise(FieldF& values, double sigma, std::mt19937_64& rng);

// Copies an archive, adding noise to the normalized `field`; other fields are
// copied byte for byte.
void add_noise(const EnsembleArchive& source, const std::filesystem::path& out, double sigma, std::uint64_t seed,
               const std::string& field = "density", bool overwrite = false);

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

struct PresetOptions {
  std::string preset;  // lbs-mini | advect-const | advect-rot | blob3d
  int members = 1;
  int timesteps = 64;
  std::uint64_t seed = 0;
  std::vector<int> shape;  // empty: preset default
  std::vector<double> velocity;  // advect-const / blob3d override, array axis order
  double noise_sigma = 0.0;
  int record_stride = 0;  // lbs-mini; 0 = preset default
  long warmup = -1;       // lbs-mini; <0 = preset default
  int jobs = 1;
};

const std::vector<std::string>& preset_names();

// Generates a whole archive. Throws ConfigError on an unknown preset.
void generate_preset(const PresetOptions& options, const std::filesystem::path& out, bool overwrite = false);

}  // namespace flint::datagen
