#pragma once

// Metrics, report aggregation and figure emitters.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "flint/archive.hpp"
#include "flint/tensor.hpp"
#include "flint/types.hpp"

namespace flint {

inline constexpr double kPsnrCap = 99.0;

// 10 log10(peak^2 / MSE) over the whole field (the full volume in 3D);
// MSE == 0 gives kPsnrCap.
double psnr(const FieldF& pred, const FieldF& gt, double peak = 1.0);

// Mean over cells of the Euclidean norm of (pred - gt).
double epe(const FieldF& pred, const FieldF& gt);

struct LpipsResult {
  std::optional<double> value;  // empty: unavailable
  std::string error;
};

// Runs `command <pred.png> <gt.png>` for a 2D pair (8-bit grayscale
// replicated to RGB) and parses the last number printed on stdout. An empty
// command or any failure yields an unavailable result.
LpipsResult lpips_via_plugin(const FieldF& pred, const FieldF& gt, const std::string& command);

MetricsReport aggregate(const std::vector<MetricsReport::Entry>& values, const std::string& label, int rate);
nlohmann::json report_to_json(const MetricsReport& report);

// Linear-interpolated quantile of a sorted sample.
double quantile_sorted(const std::vector<double>& sorted, double q);

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int w, int h, std::array<std::uint8_t, 3> fill = {255, 255, 255});
  std::array<std::uint8_t, 3> at(int y, int x) const;
  void set(int y, int x, std::array<std::uint8_t, 3> c);
};

void write_png(const std::filesystem::path& path, const RgbImage& image);

// Plane z of a 3D field as a 2D field; 2D fields are returned unchanged.
FieldF slice_z(const FieldF& field, int z);

// Sequential colormap for densities in [0,1].
std::array<std::uint8_t, 3> density_color(double v);
RgbImage render_scalar(const FieldF& field, double lo = 0.0, double hi = 1.0);

// HSV flow rendering: hue from the direction atan2(dy, dx), saturation from
// the magnitude relative to the given percentile (clamped to 1), value 1.
RgbImage flow_to_hsv(const FieldF& flow, double magnitude_percentile = 99.0);
double flow_hue_degrees(double dy, double dx);

struct Glyph {
  double y = 0, x = 0;    // anchor cell
  double dy = 0, dx = 0;  // arrow vector, already scaled
};

// One glyph at every stride-th cell in each axis.
std::vector<Glyph> flow_to_glyphs(const FieldF& flow, int stride, double scale);
std::string glyphs_to_svg(const std::vector<Glyph>& glyphs, int height, int width, int pixels_per_cell = 8);
RgbImage glyphs_to_image(const std::vector<Glyph>& glyphs, int height, int width, int pixels_per_cell = 8);

struct Pathline {
  std::size_t seed_index = 0;
  std::vector<std::array<double, 3>> points;  // (z, y, x); z = 0 in 2D
  bool left_domain = false;
};

// Midpoint (RK2) integration through per-frame flows held constant within a
// frame: x' = x + F(x + F(x, k) dt / 2, k) dt. Steps of size `dt` frames;
// frame k = floor(time). Points are appended only when the particle moves;
// a step leaving the domain is cut at the boundary and ends the line. Seeds
// outside the domain are skipped with a warning.
std::vector<Pathline> pathlines(const std::vector<FieldF>& flows, const std::vector<std::array<double, 3>>& seeds,
                                int steps, double dt = 1.0);
RgbImage pathlines_to_image(const std::vector<Pathline>& lines, const FieldF* background, int pixels_per_cell = 4);

// |a - b| * magnify, clamped to [0,1].
FieldF diff_values(const FieldF& a, const FieldF& b, double magnify);
RgbImage diff_map(const FieldF& a, const FieldF& b, double magnify);

// ---------------------------------------------------------------------------
// Run evaluation
// ---------------------------------------------------------------------------

const std::vector<std::string>& known_metrics();

struct EvalOptions {
  std::vector<std::string> metrics{"psnr", "epe"};
  int rate = 0;  // 0: taken from the prediction archive provenance
  std::string lpips_command;
  std::string checkpoint;  // overrides the provenance entry
};

// Compares predictions against ground truth at true interpolants (indices not
// on the rate grid). Throws AlignmentError listing the offending indices when
// the archives do not line up.
nlohmann::json evaluate_run(const EnsembleArchive& pred, const EnsembleArchive& gt, const EvalOptions& options);

}  // namespace flint
