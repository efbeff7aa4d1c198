#pragma once

// Small archives and models shared by the unit tests.

#include <filesystem>
#include <string>

#include "flint/archive.hpp"
#include "flint/datagen.hpp"
#include "flint/model.hpp"

namespace fixtures {

namespace fs = std::filesystem;

// Empty scratch directory under the system temp dir.
inline fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("flint_test_" + name);
  fs::remove_all(p);
  return p;
}

inline fs::path advect_archive(const std::string& name, int members = 4, int timesteps = 12, int size = 16,
                               std::uint64_t seed = 1, double sigma = 0.0) {
  const fs::path out = scratch(name);
  flint::datagen::PresetOptions o;
  o.preset = "advect-const";
  o.members = members;
  o.timesteps = timesteps;
  o.seed = seed;
  o.shape = {size, size};
  o.velocity = {0.75, -0.5};
  o.noise_sigma = sigma;
  flint::datagen::generate_preset(o, out);
  return out;
}

// Copy of an archive with only its density field.
inline fs::path density_only(const fs::path& source, const std::string& name) {
  const auto src = flint::EnsembleArchive::open(source);
  flint::Manifest m = src.manifest();
  m.fields.erase("flow");
  m.normalization.erase("flow");
  const fs::path out = scratch(name);
  flint::ArchiveWriter w(out, m);
  for (const auto& member : m.members) {
    for (int t = member.first; t < member.timesteps; ++t) w.write(member.id, "density", t, src.read(member.id, "density", t));
  }
  w.finish();
  return out;
}

inline flint::ModelConfig tiny_model(flint::TrainingMode mode = flint::TrainingMode::kFlowSupervised) {
  flint::ModelConfig mc;
  mc.num_blocks = 2;
  mc.block_channels = {8, 8};
  mc.teacher_channels = 8;
  mc.mode = mode;
  return mc;
}

}  // namespace fixtures
