#pragma once

// Triplet sampling, the optimizer, the cosine schedule and the training
// driver with validation, early stopping and checkpointing.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "flint/archive.hpp"
#include "flint/model.hpp"
#include "flint/types.hpp"

namespace flint {

struct SplitSpec {
  // Explicit member ids win over fractions when any list is non-empty.
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
};

struct ResolvedSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

// Members are taken in manifest order: training first, then validation, then
// test. At least one training and one validation member are required.
ResolvedSplit resolve_split(const Manifest& manifest, const SplitSpec& spec);

struct TrainConfig {
  int epochs = 120;
  int batch_size = 32;
  double lr = 6e-4;
  double lr_min = 6e-6;
  int window = 12;
  int patience = 30;
  std::uint64_t seed = 0;
  SplitSpec split;
  int samples_per_epoch = 2000;
  int val_samples = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;  // <= 0 disables clipping

  // Paper-scale defaults for 2D (batch 32, 6e-4 -> 6e-6) or 3D (batch 2,
  // 1e-4 -> 1e-6).
  static TrainConfig defaults_for(int dims);

  void validate() const;
  nlohmann::json to_json() const;
  // Overrides the fields present in `j`; unknown keys are ignored here and
  // reported by the CLI.
  void update_from_json(const nlohmann::json& j);
};

// Reads the training keys of a JSON object into both configs.
void apply_config_json(const nlohmann::json& j, TrainConfig& train, ModelConfig& model);

struct TripletIndex {
  std::string member_id;
  int s = 0;
  int t = 0;
  int u = 0;
  double tau() const { return static_cast<double>(t - s) / static_cast<double>(u - s); }
};

// Number of (s, u) pairs with 2 <= u - s <= window among `frames` frames.
std::uint64_t count_pairs(int frames, int window);

// Draws `count` triplets: member uniformly, (s, u) uniformly over the valid
// pairs of that member, t uniformly in (s, u). Members shorter than three
// frames are skipped with a warning; an empty selection throws ConfigError.
std::vector<TripletIndex> sample_triplet_indices(const Manifest& manifest, const std::vector<std::string>& members,
                                                 int window, int count, std::uint64_t seed);

// Cosine annealing from lr_max at epoch 0 to lr_min at total_epochs.
double lr_schedule(int epoch, int total_epochs, double lr_max, double lr_min);

// Normalized frames of an archive, loaded on demand and kept in memory.
class FrameCache {
 public:
  FrameCache(const EnsembleArchive& archive, std::pair<double, double> density_range);

  const FieldF& density(const std::string& member, int t);
  // Ground-truth flow or null when the archive does not provide it.
  const FieldF* flow(const std::string& member, int t);

  const EnsembleArchive& archive() const { return archive_; }

 private:
  const EnsembleArchive& archive_;
  std::pair<double, double> range_;
  std::map<std::pair<std::string, int>, FieldF> density_;
  std::map<std::pair<std::string, int>, std::optional<FieldF>> flow_;
};

SampleTriplet load_triplet(FrameCache& cache, const TripletIndex& index, bool with_flow);

// Density range over every frame of the given members.
std::pair<double, double> density_range(const EnsembleArchive& archive, const std::vector<std::string>& members);

class AdamW {
 public:
  AdamW(const nn::ParameterSet& params, double beta1, double beta2, double eps, double weight_decay);
  void step(nn::ParameterSet& params, double lr);
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

// Scales all gradients so their global L2 norm is at most `max_norm`;
// returns the norm before clipping.
double clip_grad_norm(nn::ParameterSet& params, double max_norm);

// Non-finite loss during training.
class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::map<std::string, double> train_components;
  std::map<std::string, double> val_components;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val = 0.0;
  bool stopped_early = false;
  std::filesystem::path checkpoint;
};

struct TrainHooks {
  // Called after every epoch; returning false stops training.
  std::function<bool(const EpochRecord&)> on_epoch;
};

// Loss of the active mode averaged over the given triplets (teacher active).
std::pair<double, std::map<std::string, double>> evaluate_loss(const FlintModel& model, FrameCache& cache,
                                                               const std::vector<TripletIndex>& triplets);

// Trains `model` in place and leaves the best weights in it. Writes
// <out_dir>/checkpoint and <out_dir>/history.json.
TrainResult train_loop(FlintModel& model, const EnsembleArchive& archive, const TrainConfig& config,
                       const std::filesystem::path& out_dir, const TrainHooks& hooks = {});

nlohmann::json history_to_json(const TrainResult& result, const TrainConfig& config, const ModelConfig& model);

}  // namespace flint
