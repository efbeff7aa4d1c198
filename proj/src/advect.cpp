#include <algorithm>
#include <cmath>

#include "flint/datagen.hpp"

namespace flint::datagen {
namespace {

using Vec3 = std::array<double, 3>;

const char* kind_name(VelocityKind k) {
  switch (k) {
    case VelocityKind::kConstant:
      return "constant";
    case VelocityKind::kRotation:
      return "rotation";
    case VelocityKind::kShear:
      return "shear";
  }
  return "?";
}

}  // namespace

void AdvectParams::validate() const {
  if (grid.cells() == 0) throw ConfigError("advection grid is empty");
  if (steps < 1) throw ConfigError("advection needs at least one frame");
  for (const auto& b : blobs) {
    if (!(b.width > 0.0)) throw ConfigError("blob widths must be positive");
  }
  const int min_extent = grid.dims == 3 ? std::min({grid.depth, grid.height, grid.width})
                                        : std::min(grid.height, grid.width);
  // Largest displacement sits on a grid corner for all supported fields.
  double max_disp = 0.0;
  for (int z : {0, grid.depth - 1}) {
    for (int y : {0, grid.height - 1}) {
      for (int x : {0, grid.width - 1}) {
        const Vec3 d = advect_displacement(*this, {double(z), double(y), double(x)});
        max_disp = std::max(max_disp, std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]));
      }
    }
  }
  if (!(max_disp < min_extent / 4.0)) throw ConfigError("advection displacement per frame must stay below min(grid)/4");
}

nlohmann::json AdvectParams::to_json() const {
  nlohmann::json blobs_json = nlohmann::json::array();
  for (const auto& b : blobs) {
    blobs_json.push_back({{"center", grid.dims == 3 ? std::vector<double>{b.center[0], b.center[1], b.center[2]}
                                                     : std::vector<double>{b.center[1], b.center[2]}},
                          {"width", b.width},
                          {"amplitude", b.amplitude}});
  }
  nlohmann::json j{{"generator", "analytic-advection"}, {"velocity_kind", kind_name(kind)}, {"blobs", blobs_json},
                   {"steps", steps}};
  auto axis_vec = [&](const Vec3& v) {
    return grid.dims == 3 ? std::vector<double>{v[0], v[1], v[2]} : std::vector<double>{v[1], v[2]};
  };
  switch (kind) {
    case VelocityKind::kConstant:
      j["velocity"] = axis_vec(velocity);
      break;
    case VelocityKind::kRotation:
      j["rotation_center"] = axis_vec(rot_center);
      j["angular_rate"] = angular_rate;
      break;
    case VelocityKind::kShear:
      j["shear_center_y"] = rot_center[1];
      j["shear_rate"] = shear_rate;
      break;
  }
  return j;
}

Vec3 advect_flow_map(const AdvectParams& params, const Vec3& p, double t) {
  switch (params.kind) {
    case VelocityKind::kConstant:
      return {p[0] + params.velocity[0] * t, p[1] + params.velocity[1] * t, p[2] + params.velocity[2] * t};
    case VelocityKind::kRotation: {
      const double th = params.angular_rate * t;
      const double c = std::cos(th), s = std::sin(th);
      const double dy = p[1] - params.rot_center[1];
      const double dx = p[2] - params.rot_center[2];
      return {p[0], params.rot_center[1] + c * dy - s * dx, params.rot_center[2] + s * dy + c * dx};
    }
    case VelocityKind::kShear:
      return {p[0], p[1], p[2] + params.shear_rate * (p[1] - params.rot_center[1]) * t};
  }
  return p;
}

Vec3 advect_displacement(const AdvectParams& params, const Vec3& p) {
  const Vec3 q = advect_flow_map(params, p, 1.0);
  return {q[0] - p[0], q[1] - p[1], q[2] - p[2]};
}

double advect_density(const AdvectParams& params, const Vec3& p, double t) {
  // Steady velocity field: the inverse flow map is the map run backwards.
  const Vec3 origin = advect_flow_map(params, p, -t);
  double v = 0.0;
  for (const auto& b : params.blobs) {
    double r2 = 0.0;
    for (int a = params.grid.dims == 3 ? 0 : 1; a < 3; ++a) r2 += (origin[a] - b.center[a]) * (origin[a] - b.center[a]);
    v += b.amplitude * std::exp(-r2 / (2.0 * b.width * b.width));
  }
  return std::clamp(v, 0.0, 1.0);
}

AdvectMember advect_generate(const AdvectParams& params, std::uint64_t /*seed*/) {
  params.validate();
  const Grid& g = params.grid;
  const int zdim = g.dims == 3 ? 0 : -1;
  AdvectMember member;

  FieldF flow(g.dims, g);
  const std::size_t cells = g.cells();
  for (int z = 0; z < g.depth; ++z) {
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        const std::size_t c = (static_cast<std::size_t>(z) * g.height + y) * g.width + x;
        const Vec3 d = advect_displacement(params, {double(z), double(y), double(x)});
        int ch = 0;
        if (zdim == 0) flow[static_cast<std::size_t>(ch++) * cells + c] = static_cast<float>(d[0]);
        flow[static_cast<std::size_t>(ch++) * cells + c] = static_cast<float>(d[1]);
        flow[static_cast<std::size_t>(ch) * cells + c] = static_cast<float>(d[2]);
      }
    }
  }

  for (int t = 0; t < params.steps; ++t) {
    FieldF dens(1, g);
    for (int z = 0; z < g.depth; ++z) {
      for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
          dens.at(0, z, y, x) = static_cast<float>(advect_density(params, {double(z), double(y), double(x)}, t));
        }
      }
    }
    member.density.push_back(std::move(dens));
    member.flow.push_back(flow);

    for (const auto& b : params.blobs) {
      const Vec3 c = advect_flow_map(params, b.center, t);
      const double margin = 3.0 * b.width;
      const int extents[3] = {g.depth, g.height, g.width};
      for (int a = g.dims == 3 ? 0 : 1; a < 3; ++a) {
        if (c[a] < -margin || c[a] > extents[a] - 1 + margin) member.left_domain = true;
      }
    }
  }
  return member;
}

}  // namespace flint::datagen
