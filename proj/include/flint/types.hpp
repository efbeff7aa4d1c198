#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flint/tensor.hpp"

namespace flint {

// Single-channel scalar field (density) of one ensemble member at one frame.
struct ScalarField {
  FieldF values;
  std::string member_id;
  int time_index = 0;

  const Grid& grid() const { return values.grid(); }
};

// Displacement field in grid cells per frame interval; channels follow the
// array axes, (dy, dx) or (dz, dy, dx).
struct FlowField {
  FieldF values;
  int time_index = 0;

  const Grid& grid() const { return values.grid(); }
};

// One training unit: two key frames, the target in between and, in
// flow-supervised mode, the target flow.
struct SampleTriplet {
  std::string member_id;
  int s = 0;
  int t = 0;
  int u = 0;
  double tau = 0.5;  // (t - s) / (u - s)
  FieldF d_s;
  FieldF d_u;
  FieldF d_t_gt;
  std::optional<FieldF> f_t_gt;

  int gap() const { return u - s; }
};

enum class TrainingMode { kFlowSupervised, kFlowUnsupervised };

std::string to_string(TrainingMode mode);
TrainingMode training_mode_from_string(const std::string& s);

struct LossWeights {
  double lambda_rec = 1.0;
  double lambda_flow = 0.2;
  double lambda_dis = 1e-4;
  double lambda_photo = 1e-6;
  double lambda_reg = 1e-8;
  double gamma = 0.8;
  bool smoothness = false;
  double lambda_smooth = 1e-6;
};

struct ModelConfig {
  int dims = 2;
  int num_blocks = 4;
  std::vector<int> block_channels{256, 192, 192, 128};
  int teacher_channels = 128;
  int kernel_size = 3;
  TrainingMode mode = TrainingMode::kFlowSupervised;
  LossWeights loss;

  // Throws ConfigError when an invariant is violated.
  void validate() const;

  // Channels of the flow head: (dF_ts, dF_tu, dMask-logit).
  int head_channels() const { return 2 * dims + 1; }
  // Student block input: d_s, d_u, two warps, two flows, mask, tau.
  int block_input_channels() const { return 2 * dims + 6; }
};

// Summary statistics of one metric over all evaluated timesteps.
struct MetricsReport {
  struct Entry {
    std::string member_id;
    int t = 0;
    double value = 0.0;
  };
  std::string metric;
  int rate = 1;
  std::vector<Entry> per_timestep;
  double mean = 0, median = 0, q1 = 0, q3 = 0, min = 0, max = 0;
  std::string checkpoint;
  std::string data;
};

// (x - lo) / (hi - lo) clamped to [0,1].
FieldF normalize_field(const FieldF& field, double lo, double hi);
ScalarField normalize_field(const ScalarField& field, double lo, double hi);
FieldF denormalize_field(const FieldF& field, double lo, double hi);

}  // namespace flint
