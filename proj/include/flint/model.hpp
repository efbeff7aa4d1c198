#pragma once

// The student-teacher interpolation network. N refinement blocks each emit
// residual updates to two intermediate flows (t->s, t->u) and a fusion-mask
// logit; a teacher block that additionally sees the ground-truth frame
// refines the final student estimate during training.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "json.hpp"
#include "flint/nn.hpp"
#include "flint/tensor.hpp"
#include "flint/types.hpp"

namespace flint {

struct BlockOutput {
  FieldF f_ts;
  FieldF f_tu;
  FieldF mask_logit;
};

struct TeacherOutput {
  BlockOutput flows;
  FieldF warp_s;
  FieldF warp_u;
  FieldF mask;
  FieldF d_hat;
  FieldF f_hat;
};

struct ForwardTape;

struct ForwardResult {
  std::vector<BlockOutput> blocks;  // running estimates after each block
  // warps[i] are the warped inputs fed to block i (zero for block 0);
  // warps[N] are the warps of the final fusion.
  std::vector<std::array<FieldF, 2>> warps;
  FieldF mask;   // sigmoid of the last block's logit
  FieldF d_hat;  // student interpolant
  FieldF f_hat;  // student flow estimate (t->u of the last block)
  std::optional<TeacherOutput> teacher;
  std::shared_ptr<const ForwardTape> tape;  // only when recorded
};

// Gradients of a scalar loss with respect to the outputs of a forward pass.
// Empty fields count as zero.
struct OutputGrads {
  FieldF d_hat;
  std::vector<BlockOutput> blocks;
  FieldF d_hat_teach;
  BlockOutput teacher;
};

class RefineBlock {
 public:
  static constexpr int kLayers = 16;  // 15 activated layers and the head
  struct Tape {
    FieldF input;
    std::array<FieldF, kLayers - 1> pre;
    std::array<FieldF, kLayers - 1> act;
    FieldF skip_sum;
  };

  RefineBlock() = default;
  RefineBlock(nn::ParameterSet& params, const std::string& prefix, int in_channels, int width, int head_channels,
              int dims, std::mt19937_64& rng);

  FieldF forward(const nn::ParameterSet& params, const FieldF& x, Tape* tape) const;
  // Accumulates parameter gradients; returns d/d(input) when requested.
  FieldF backward(nn::ParameterSet& params, const Tape& tape, const FieldF& grad_head, bool need_input_grad) const;

  std::vector<std::size_t> weight_indices() const;
  std::vector<std::size_t> param_indices() const;

 private:
  std::array<nn::Conv, kLayers> convs_;
  std::array<nn::Prelu, kLayers - 1> acts_;
};

class FlintModel {
 public:
  FlintModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  // Runs the student blocks and, when `d_t_gt` is given, the teacher. With
  // `record` the activations needed by backward() are kept.
  ForwardResult forward(const FieldF& d_s, const FieldF& d_u, double tau, const FieldF* d_t_gt = nullptr,
                        bool record = false) const;

  // Accumulates parameter gradients for a recorded forward pass.
  void backward(const ForwardResult& result, const OutputGrads& grads);

  // Weight arrays of the last student block and of the teacher.
  std::vector<std::size_t> regularized_weights() const;
  std::vector<std::size_t> teacher_params() const;

  // Throws ConfigError unless `grid` can pass through the block's stride plan.
  void check_grid(const Grid& grid) const;

 private:
  ModelConfig config_;
  nn::ParameterSet params_;
  std::vector<RefineBlock> blocks_;
  RefineBlock teacher_;
};

FlintModel build_model(const ModelConfig& config, std::uint64_t seed);

struct CheckpointState {
  int epoch = 0;
  double best_val = 0.0;
  // Normalization range of the density the model was trained on.
  std::optional<std::pair<double, double>> density_range;
  nlohmann::json extra = nlohmann::json::object();
};

struct Checkpoint {
  FlintModel model;
  CheckpointState state;
};

inline constexpr const char* kCheckpointFormat = "flint-checkpoint-v1";

// Writes <path>/manifest.json and <path>/params.bin; replaces an existing
// checkpoint atomically.
void save_checkpoint(const FlintModel& model, const CheckpointState& state, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

}  // namespace flint
