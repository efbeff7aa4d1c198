#include "flint/infer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>

namespace flint {

namespace fs = std::filesystem;

std::vector<int> available_frames(const MemberInfo& member, int rate) {
  if (rate < 1) throw ContractError("rate must be at least 1");
  std::vector<int> out;
  for (int t = member.first; t < member.timesteps; t += rate) {
    if (member.has("density", t)) out.push_back(t);
  }
  return out;
}

PredictionPlan plan_prediction(const std::vector<int>& available, int t) {
  if (available.size() < 2) throw ContractError("at least two available frames are required");
  if (t < available.front() || t > available.back()) {
    throw ContractError("index " + std::to_string(t) + " lies outside the covered range [" +
                        std::to_string(available.front()) + ", " + std::to_string(available.back()) +
                        "]; extrapolation is not supported");
  }
  auto it = std::lower_bound(available.begin(), available.end(), t);
  PredictionPlan p;
  if (*it == t) {
    if (it + 1 == available.end()) throw ContractError("no successor frame for the flow at index " + std::to_string(t));
    p.s = t;
    p.u = *(it + 1);
    p.tau = 0.0;
    p.available = true;
  } else {
    p.s = *(it - 1);
    p.u = *it;
    p.tau = static_cast<double>(t - p.s) / static_cast<double>(p.u - p.s);
  }
  return p;
}

namespace {

struct Job {
  const MemberInfo* member;
  std::vector<int> available;
  std::vector<int> times;
};

std::vector<Job> plan_jobs(const EnsembleArchive& archive, const InferOptions& options) {
  const Manifest& m = archive.manifest();
  std::vector<Job> jobs;
  std::vector<std::string> ids = options.members;
  if (ids.empty()) {
    for (const auto& mi : m.members) ids.push_back(mi.id);
  }
  for (const auto& id : ids) {
    Job job{&m.member(id), {}, {}};
    job.available = available_frames(*job.member, options.rate);
    if (job.available.size() < 2) throw ContractError("member '" + id + "' has fewer than two available frames");
    if (options.times.empty()) {
      for (int t = job.available.front(); t <= job.available.back(); ++t) job.times.push_back(t);
    } else {
      job.times = options.times;
      std::sort(job.times.begin(), job.times.end());
      job.times.erase(std::unique(job.times.begin(), job.times.end()), job.times.end());
      for (int t : job.times) {
        if (t < job.available.front() || t > job.available.back()) plan_prediction(job.available, t);  // throws
      }
    }
    jobs.push_back(std::move(job));
  }
  return jobs;
}

Manifest output_manifest(const EnsembleArchive& archive, const std::vector<Job>& jobs, bool with_flow,
                         nlohmann::json provenance) {
  const Manifest& src = archive.manifest();
  Manifest out;
  out.dims = src.dims;
  out.shape = src.shape;
  out.seed = src.seed;
  out.fields["density_pred"] = FieldSpec{"f32", 1};
  if (with_flow) out.fields["flow_pred"] = FieldSpec{"f32", src.dims};
  if (src.normalization.count("density")) out.normalization["density_pred"] = src.normalization.at("density");
  for (const auto& job : jobs) {
    MemberInfo mi;
    mi.id = job.member->id;
    mi.first = job.times.front();
    mi.timesteps = job.times.back() + 1;
    mi.params = job.member->params;
    // Indices of the range that were not requested are absent.
    for (int t = mi.first; t < mi.timesteps; ++t) {
      const bool requested = std::binary_search(job.times.begin(), job.times.end(), t);
      if (!requested) {
        mi.missing.insert({"density_pred", t});
        if (with_flow) mi.missing.insert({"flow_pred", t});
      }
    }
    if (with_flow && std::binary_search(job.times.begin(), job.times.end(), job.available.back())) {
      mi.missing.insert({"flow_pred", job.available.back()});
    }
    out.members.push_back(std::move(mi));
  }
  out.provenance = std::move(provenance);
  return out;
}

std::pair<double, double> archive_range(const EnsembleArchive& archive) {
  const auto& n = archive.manifest().normalization;
  auto it = n.find("density");
  if (it == n.end()) throw DataError("archive has no density normalization");
  return it->second;
}

}  // namespace

InferStats interpolate_range(const FlintModel& model, const std::optional<std::pair<double, double>>& density_range,
                             const EnsembleArchive& archive, const fs::path& out, const InferOptions& options) {
  const Manifest& src = archive.manifest();
  if (src.dims != model.config().dims) {
    throw ConfigError("checkpoint is " + std::to_string(model.config().dims) + "D but the archive is " +
                      std::to_string(src.dims) + "D");
  }
  model.check_grid(archive.grid());
  const auto range = density_range ? *density_range : archive_range(archive);
  const auto jobs = plan_jobs(archive, options);
  nlohmann::json prov = {{"method", "flint"},
                         {"rate", options.rate},
                         {"checkpoint", options.checkpoint_id},
                         {"source", fs::absolute(archive.root()).string()},
                         {"tau_convention", "normalized"}};
  ArchiveWriter writer(out, output_manifest(archive, jobs, true, prov), options.overwrite);

  InferStats stats;
  const auto start = std::chrono::steady_clock::now();
  for (const auto& job : jobs) {
    const std::string& id = job.member->id;
    std::map<int, FieldF> frames;
    auto frame = [&](int t) -> const FieldF& {
      auto it = frames.find(t);
      if (it == frames.end()) {
        it = frames.emplace(t, normalize_field(archive.read(id, "density", t), range.first, range.second)).first;
      }
      return it->second;
    };
    for (int t : job.times) {
      const bool last = t == job.available.back();
      if (last) {
        writer.write(id, "density_pred", t, archive.read(id, "density", t));
        continue;
      }
      const PredictionPlan plan = plan_prediction(job.available, t);
      const ForwardResult r = model.forward(frame(plan.s), frame(plan.u), plan.tau);
      if (plan.available) {
        writer.write(id, "density_pred", t, archive.read(id, "density", t));
      } else {
        writer.write(id, "density_pred", t, denormalize_field(r.d_hat, range.first, range.second));
      }
      writer.write(id, "flow_pred", t, r.f_hat);
      ++stats.predictions;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  stats.seconds_per_timestep = stats.predictions ? secs / stats.predictions : 0.0;
  writer.manifest().provenance["seconds_per_timestep"] = stats.seconds_per_timestep;
  writer.finish();
  spdlog::info("inference: {} predictions, {:.4f} s per timestep", stats.predictions, stats.seconds_per_timestep);
  return stats;
}

InferStats linear_baseline(const EnsembleArchive& archive, const fs::path& out, const InferOptions& options) {
  const auto jobs = plan_jobs(archive, options);
  nlohmann::json prov = {{"method", "linear"},
                         {"rate", options.rate},
                         {"checkpoint", nullptr},
                         {"source", fs::absolute(archive.root()).string()}};
  ArchiveWriter writer(out, output_manifest(archive, jobs, false, prov), options.overwrite);
  InferStats stats;
  for (const auto& job : jobs) {
    const std::string& id = job.member->id;
    for (int t : job.times) {
      if (std::binary_search(job.available.begin(), job.available.end(), t)) {
        writer.write(id, "density_pred", t, archive.read(id, "density", t));
        continue;
      }
      const PredictionPlan plan = plan_prediction(job.available, t);
      const FieldF ds = archive.read(id, "density", plan.s);
      const FieldF du = archive.read(id, "density", plan.u);
      FieldF d(1, ds.grid());
      const double tau = plan.tau;
      for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = static_cast<float>((1.0 - tau) * ds[i] + tau * du[i]);
      }
      writer.write(id, "density_pred", t, d);
      ++stats.predictions;
    }
  }
  writer.finish();
  return stats;
}

}  // namespace flint
