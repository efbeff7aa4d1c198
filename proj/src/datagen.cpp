#include "flint/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numbers>

namespace flint::datagen {
namespace fs = std::filesystem;
using nlohmann::json;

void add_noise(FieldF& values, double sigma, std::mt19937_64& rng) {
  if (sigma < 0.0) throw ContractError("noise sigma must be non-negative");
  if (sigma == 0.0) return;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : values.values()) v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
}

void add_noise(const EnsembleArchive& source, const fs::path& out, double sigma, std::uint64_t seed,
               const std::string& field, bool overwrite) {
  if (sigma < 0.0) throw ContractError("noise sigma must be non-negative");
  Manifest m = source.manifest();
  m.provenance["noise"] = {{"sigma", sigma}, {"seed", seed}, {"field", field}, {"source", source.root().string()}};
  ArchiveWriter writer(out, m, overwrite);
  std::mt19937_64 rng(seed);
  const auto [lo, hi] = m.normalization.count(field) ? m.normalization.at(field) : std::pair<double, double>{0.0, 1.0};
  for (const auto& member : m.members) {
    for (const auto& [name, spec] : m.fields) {
      for (int t = member.first; t < member.timesteps; ++t) {
        if (!member.has(name, t)) continue;
        FieldF values = source.read(member.id, name, t);
        if (name == field && sigma > 0.0) {
          FieldF norm = normalize_field(values, lo, hi);
          add_noise(norm, sigma, rng);
          values = denormalize_field(norm, lo, hi);
        }
        writer.write(member.id, name, t, values);
      }
    }
  }
  writer.finish();
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"lbs-mini", "advect-const", "advect-rot", "blob3d"};
  return names;
}

namespace {

struct MemberJob {
  std::string id;
  std::uint64_t seed = 0;
  LbmParams lbm;
  AdvectParams advect;
};

struct MemberData {
  std::vector<FieldF> density;
  std::vector<FieldF> flow;
  json params;
};

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Start coordinate along one axis so that a blob moving at `v` per frame stays
// `margin` away from the border for `frames` frames, when that is possible.
double start_coordinate(std::mt19937_64& rng, int extent, double v, int frames, double margin) {
  const double travel = v * (frames - 1);
  const double lo = margin - std::min(0.0, travel);
  const double hi = extent - 1 - margin - std::max(0.0, travel);
  const double draw = uniform(rng, 0.0, 1.0);
  return lo <= hi ? lo + draw * (hi - lo) : 0.5 * (lo + hi);
}

MemberJob plan_member(const PresetOptions& o, int index, std::mt19937_64& rng) {
  MemberJob job;
  char id[16];
  std::snprintf(id, sizeof id, "m%03d", index);
  job.id = id;
  job.seed = rng();

  if (o.preset == "lbs-mini") {
    LbmParams& p = job.lbm;
    p.height = o.shape.empty() ? 100 : o.shape[0];
    p.width = o.shape.empty() ? 400 : o.shape[1];
    const double scale = p.height / 100.0;
    p.radius = uniform(rng, 8.0, 12.0) * scale;
    p.cy = p.height / 2.0 + uniform(rng, -0.08, 0.08) * p.height;
    p.cx = p.width / 4.0 + uniform(rng, -0.05, 0.05) * p.width;
    p.tau = uniform(rng, 0.56, 0.62);
    p.u0 = uniform(rng, 0.08, 0.12);
    p.record_stride = o.record_stride > 0 ? o.record_stride : 20;
    p.warmup = o.warmup >= 0 ? o.warmup : 2000;
    p.steps = p.warmup + static_cast<long>(o.timesteps - 1) * p.record_stride;
    return job;
  }

  AdvectParams& a = job.advect;
  a.steps = o.timesteps;
  if (o.preset == "advect-const") {
    a.grid = o.shape.empty() ? Grid::make2d(64, 64) : Grid::from_shape(o.shape);
    a.kind = VelocityKind::kConstant;
    a.velocity = {0.0, 1.5, -0.5};
    if (o.velocity.size() == 2) a.velocity = {0.0, o.velocity[0], o.velocity[1]};
    Blob b;
    b.width = uniform(rng, 3.0, 5.0);
    b.amplitude = uniform(rng, 0.7, 1.0);
    b.center = {0.0, start_coordinate(rng, a.grid.height, a.velocity[1], a.steps, 2.0 * b.width),
                start_coordinate(rng, a.grid.width, a.velocity[2], a.steps, 2.0 * b.width)};
    a.blobs.push_back(b);
  } else if (o.preset == "advect-rot") {
    a.grid = o.shape.empty() ? Grid::make2d(64, 64) : Grid::from_shape(o.shape);
    a.kind = VelocityKind::kRotation;
    a.rot_center = {0.0, (a.grid.height - 1) / 2.0, (a.grid.width - 1) / 2.0};
    a.angular_rate = 2.0 * std::numbers::pi / 48.0;
    const double extent = std::min(a.grid.height, a.grid.width);
    for (int k = 0; k < 2; ++k) {
      Blob b;
      b.width = uniform(rng, 3.0, 5.0);
      b.amplitude = uniform(rng, 0.7, 1.0);
      const double r = uniform(rng, 0.2, 0.35) * extent;
      const double th = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      b.center = {0.0, a.rot_center[1] + r * std::sin(th), a.rot_center[2] + r * std::cos(th)};
      a.blobs.push_back(b);
    }
  } else {  // blob3d
    a.grid = o.shape.empty() ? Grid::make3d(32, 32, 32) : Grid::from_shape(o.shape);
    a.kind = VelocityKind::kConstant;
    a.velocity = {0.5, 0.75, -0.5};
    if (o.velocity.size() == 3) a.velocity = {o.velocity[0], o.velocity[1], o.velocity[2]};
    Blob b;
    b.width = uniform(rng, 2.5, 4.0);
    b.amplitude = uniform(rng, 0.7, 1.0);
    b.center = {start_coordinate(rng, a.grid.depth, a.velocity[0], a.steps, 2.0 * b.width),
                start_coordinate(rng, a.grid.height, a.velocity[1], a.steps, 2.0 * b.width),
                start_coordinate(rng, a.grid.width, a.velocity[2], a.steps, 2.0 * b.width)};
    a.blobs.push_back(b);
  }
  return job;
}

MemberData run_member(const PresetOptions& o, const MemberJob& job) {
  MemberData data;
  if (o.preset == "lbs-mini") {
    auto frames = lbm_simulate(job.lbm, job.seed);
    for (auto& f : frames) {
      data.density.push_back(std::move(f.density));
      data.flow.push_back(std::move(f.flow));
    }
    data.params = job.lbm.to_json();
  } else {
    AdvectMember m = advect_generate(job.advect, job.seed);
    data.density = std::move(m.density);
    data.flow = std::move(m.flow);
    data.params = job.advect.to_json();
    if (m.left_domain) data.params["warning"] = "blob_left_domain";
  }
  data.params["seed"] = job.seed;
  return data;
}

}  // namespace

void generate_preset(const PresetOptions& o, const fs::path& out, bool overwrite) {
  const auto& names = preset_names();
  if (std::find(names.begin(), names.end(), o.preset) == names.end()) {
    throw ConfigError("unknown preset '" + o.preset + "'");
  }
  if (o.members < 1) throw ConfigError("at least one member is required");
  if (o.timesteps < 1) throw ConfigError("at least one timestep is required");
  if (o.noise_sigma < 0.0) throw ConfigError("noise sigma must be non-negative");

  std::mt19937_64 rng(o.seed);
  std::vector<MemberJob> jobs;
  for (int i = 0; i < o.members; ++i) jobs.push_back(plan_member(o, i, rng));

  Manifest m;
  if (o.preset == "lbs-mini") {
    m.dims = 2;
    m.shape = {jobs[0].lbm.height, jobs[0].lbm.width};
  } else {
    m.dims = jobs[0].advect.grid.dims;
    m.shape = jobs[0].advect.grid.shape();
  }
  m.fields["density"] = FieldSpec{"f32", 1};
  m.fields["flow"] = FieldSpec{"f32", m.dims};
  m.seed = o.seed;
  m.provenance = {{"preset", o.preset},
                  {"flow_units", "cells per frame"},
                  {"options",
                   {{"members", o.members},
                    {"timesteps", o.timesteps},
                    {"seed", o.seed},
                    {"shape", o.shape},
                    {"velocity", o.velocity},
                    {"noise_sigma", o.noise_sigma},
                    {"record_stride", o.record_stride},
                    {"warmup", o.warmup}}}};
  if (o.noise_sigma > 0.0) m.provenance["noise"] = {{"sigma", o.noise_sigma}, {"seed", o.seed}, {"field", "density"}};

  // Noise is applied in normalized units, so the clean archive is written
  // first and the noisy copy derived from it.
  const bool noisy = o.noise_sigma > 0.0;
  const fs::path clean_root = noisy ? fs::path(out.string() + ".clean.tmp") : out;
  {
    ArchiveWriter writer(clean_root, m, overwrite || noisy);
    const int batch = std::max(1, o.jobs);
    for (std::size_t first = 0; first < jobs.size(); first += batch) {
      const std::size_t last = std::min(jobs.size(), first + batch);
      std::vector<std::future<MemberData>> pending;
      for (std::size_t i = first; i < last; ++i) {
        pending.push_back(std::async(batch > 1 ? std::launch::async : std::launch::deferred,
                                     [&o, &job = jobs[i]] { return run_member(o, job); }));
      }
      for (std::size_t i = first; i < last; ++i) {
        MemberData data = pending[i - first].get();
        MemberInfo info;
        info.id = jobs[i].id;
        info.timesteps = static_cast<int>(data.density.size());
        info.params = std::move(data.params);
        info.params["preset"] = o.preset;
        for (int t = 0; t < info.timesteps; ++t) {
          writer.write(info.id, "density", t, data.density[t]);
          writer.write(info.id, "flow", t, data.flow[t]);
        }
        writer.manifest().members.push_back(std::move(info));
      }
    }
    writer.finish();
  }
  if (noisy) {
    const EnsembleArchive clean = EnsembleArchive::open(clean_root);
    add_noise(clean, out, o.noise_sigma, o.seed, "density", overwrite);
    std::error_code ec;
    fs::remove_all(clean_root, ec);
  }
}

}  // namespace flint::datagen
