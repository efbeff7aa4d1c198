#include "flint/types.hpp"

#include <algorithm>
#include <cmath>

namespace flint {

std::string to_string(TrainingMode mode) {
  return mode == TrainingMode::kFlowSupervised ? "flow-supervised" : "flow-unsupervised";
}

TrainingMode training_mode_from_string(const std::string& s) {
  if (s == "flow-supervised" || s == "supervised") return TrainingMode::kFlowSupervised;
  if (s == "flow-unsupervised" || s == "unsupervised") return TrainingMode::kFlowUnsupervised;
  throw ConfigError("unknown training mode '" + s + "'");
}

void ModelConfig::validate() const {
  if (dims != 2 && dims != 3) throw ConfigError("dims must be 2 or 3");
  if (num_blocks < 2) throw ConfigError("num_blocks must be at least 2");
  if (static_cast<int>(block_channels.size()) != num_blocks) {
    throw ConfigError("block_channels has " + std::to_string(block_channels.size()) + " entries for " +
                      std::to_string(num_blocks) + " blocks");
  }
  for (int c : block_channels) {
    if (c <= 0) throw ConfigError("block channel counts must be positive");
  }
  if (teacher_channels <= 0) throw ConfigError("teacher_channels must be positive");
  if (kernel_size != 3) throw ConfigError("only kernel_size 3 is supported");
  if (!(loss.gamma > 0.0 && loss.gamma < 1.0)) throw ConfigError("gamma must lie in (0,1)");
  for (double l : {loss.lambda_rec, loss.lambda_flow, loss.lambda_dis, loss.lambda_photo, loss.lambda_reg, loss.lambda_smooth}) {
    if (!(l >= 0.0)) throw ConfigError("loss weights must be non-negative");
  }
}

FieldF normalize_field(const FieldF& field, double lo, double hi) {
  if (!(hi > lo)) throw DataError("normalization range requires hi > lo");
  const double scale = 1.0 / (hi - lo);
  FieldF out(field.channels(), field.grid());
  for (std::size_t i = 0; i < field.size(); ++i) {
    const double v = field[i];
    if (!std::isfinite(v)) throw DataError("non-finite value in field");
    out[i] = static_cast<float>(std::clamp((v - lo) * scale, 0.0, 1.0));
  }
  return out;
}

ScalarField normalize_field(const ScalarField& field, double lo, double hi) {
  return {normalize_field(field.values, lo, hi), field.member_id, field.time_index};
}

FieldF denormalize_field(const FieldF& field, double lo, double hi) {
  FieldF out(field.channels(), field.grid());
  for (std::size_t i = 0; i < field.size(); ++i) out[i] = static_cast<float>(lo + static_cast<double>(field[i]) * (hi - lo));
  return out;
}

}  // namespace flint
