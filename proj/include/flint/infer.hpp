#pragma once

// Batch inference over a temporally subsampled archive: every R-th frame
// (counted from the member's first frame) is treated as available, the frames
// in between are reconstructed, and flow is estimated at every index.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flint/archive.hpp"
#include "flint/model.hpp"

namespace flint {

struct InferOptions {
  int rate = 2;
  std::vector<std::string> members;  // empty: all members
  std::vector<int> times;            // empty: every index of the covered range
  bool overwrite = false;
  std::string checkpoint_id;         // recorded in the output provenance
};

// Frames of `member` that are available at `rate`: first, first + R, ...
std::vector<int> available_frames(const MemberInfo& member, int rate);

// (s, u, tau) used to predict index t. For available t the pair is t and its
// successor with tau = 0. Throws ContractError outside the covered range.
struct PredictionPlan {
  int s = 0;
  int u = 0;
  double tau = 0.0;
  bool available = false;
};
PredictionPlan plan_prediction(const std::vector<int>& available, int t);

struct InferStats {
  int predictions = 0;
  double seconds_per_timestep = 0.0;
};

// Writes `density_pred` and `flow_pred`. Flow at the last available frame has
// no successor and is declared missing.
InferStats interpolate_range(const FlintModel& model, const std::optional<std::pair<double, double>>& density_range,
                             const EnsembleArchive& archive, const std::filesystem::path& out,
                             const InferOptions& options);

// (1 - tau) D_s + tau D_u; writes `density_pred` only.
InferStats linear_baseline(const EnsembleArchive& archive, const std::filesystem::path& out,
                           const InferOptions& options);

}  // namespace flint
