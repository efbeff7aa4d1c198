#include "flint/evalviz.hpp"

#include <png.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <regex>
#include <sstream>

#include "flint/warp.hpp"

namespace flint {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double psnr(const FieldF& pred, const FieldF& gt, double peak) {
  require_same_grid(pred.grid(), gt.grid(), "psnr");
  if (pred.channels() != gt.channels()) throw ContractError("psnr: channel counts differ");
  double se = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(pred.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double epe(const FieldF& pred, const FieldF& gt) {
  require_same_grid(pred.grid(), gt.grid(), "epe");
  if (pred.channels() != gt.channels()) throw ContractError("epe: channel counts differ");
  const std::size_t cells = pred.grid().cells();
  double acc = 0.0;
  for (std::size_t p = 0; p < cells; ++p) {
    double sq = 0.0;
    for (int c = 0; c < pred.channels(); ++c) {
      const double d = static_cast<double>(pred[c * cells + p]) - static_cast<double>(gt[c * cells + p]);
      sq += d * d;
    }
    acc += std::sqrt(sq);
  }
  return acc / static_cast<double>(cells);
}

namespace {

RgbImage gray_image(const FieldF& f) {
  RgbImage img(f.grid().width, f.grid().height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double v = std::clamp(static_cast<double>(f.at(0, 0, y, x)), 0.0, 1.0);
      const auto b = static_cast<std::uint8_t>(std::lround(v * 255.0));
      img.set(y, x, {b, b, b});
    }
  }
  return img;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

LpipsResult lpips_via_plugin(const FieldF& pred, const FieldF& gt, const std::string& command) {
  LpipsResult res;
  if (command.empty()) {
    res.error = "no LPIPS plugin configured";
    return res;
  }
  if (pred.grid().dims != 2 || gt.grid().dims != 2) {
    res.error = "LPIPS is only defined for 2D fields";
    return res;
  }
  require_same_grid(pred.grid(), gt.grid(), "lpips");
  std::string tmpl = (fs::temp_directory_path() / "flint-lpips-XXXXXX").string();
  if (!mkdtemp(tmpl.data())) {
    res.error = "cannot create a temporary directory";
    return res;
  }
  const fs::path dir = tmpl;
  const fs::path a = dir / "pred.png", b = dir / "gt.png", err = dir / "stderr.txt";
  write_png(a, gray_image(pred));
  write_png(b, gray_image(gt));
  const std::string cmd =
      command + " " + shell_quote(a.string()) + " " + shell_quote(b.string()) + " 2>" + shell_quote(err.string());
  std::string out;
  int status = -1;
  if (FILE* p = popen(cmd.c_str(), "r")) {
    char buf[256];
    while (std::fgets(buf, sizeof buf, p)) out += buf;
    status = pclose(p);
  }
  std::ifstream ein(err);
  std::string errtext((std::istreambuf_iterator<char>(ein)), std::istreambuf_iterator<char>());
  std::error_code ec;
  fs::remove_all(dir, ec);
  if (status != 0) {
    res.error = "LPIPS plugin failed (status " + std::to_string(status) + "): " + errtext;
    return res;
  }
  static const std::regex number(R"([-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)");
  std::optional<double> last;
  for (auto it = std::sregex_iterator(out.begin(), out.end(), number); it != std::sregex_iterator(); ++it) {
    last = std::stod(it->str());
  }
  if (!last) {
    res.error = "LPIPS plugin printed no number: " + out + errtext;
    return res;
  }
  res.value = last;
  return res;
}

double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) throw ContractError("quantile of an empty sample");
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

MetricsReport aggregate(const std::vector<MetricsReport::Entry>& values, const std::string& label, int rate) {
  if (values.empty()) throw ContractError("aggregate of an empty sample");
  MetricsReport r;
  r.metric = label;
  r.rate = rate;
  r.per_timestep = values;
  std::vector<double> v;
  double sum = 0.0;
  for (const auto& e : values) {
    v.push_back(e.value);
    sum += e.value;
  }
  std::sort(v.begin(), v.end());
  r.mean = sum / static_cast<double>(v.size());
  r.median = quantile_sorted(v, 0.5);
  r.q1 = quantile_sorted(v, 0.25);
  r.q3 = quantile_sorted(v, 0.75);
  r.min = v.front();
  r.max = v.back();
  return r;
}

nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& e : r.per_timestep) per.push_back({{"member", e.member_id}, {"t", e.t}, {"value", e.value}});
  return {{"metric", r.metric}, {"rate", r.rate},   {"per_timestep", per}, {"mean", r.mean},
          {"median", r.median}, {"q1", r.q1},       {"q3", r.q3},          {"min", r.min},
          {"max", r.max},       {"meta", {{"checkpoint", r.checkpoint}, {"data", r.data}}}};
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

RgbImage::RgbImage(int w, int h, std::array<std::uint8_t, 3> fill) : width(w), height(h) {
  rgb.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < rgb.size(); i += 3) std::copy(fill.begin(), fill.end(), rgb.begin() + i);
}

std::array<std::uint8_t, 3> RgbImage::at(int y, int x) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

void RgbImage::set(int y, int x, std::array<std::uint8_t, 3> c) {
  if (y < 0 || y >= height || x < 0 || x >= width) return;
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  std::copy(c.begin(), c.end(), rgb.begin() + i);
}

void write_png(const fs::path& path, const RgbImage& img) {
  if (img.width <= 0 || img.height <= 0) throw ContractError("cannot write an empty image");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open '" + path.string() + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng failed writing '" + path.string() + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw IoError("cannot close '" + path.string() + "'");
}

FieldF slice_z(const FieldF& f, int z) {
  const Grid& g = f.grid();
  if (g.dims == 2) return f;
  if (z < 0 || z >= g.depth) throw ContractError("slice index out of range");
  const Grid out = Grid::make2d(g.height, g.width);
  FieldF s(f.channels(), out);
  const std::size_t plane = out.cells();
  for (int c = 0; c < f.channels(); ++c) {
    std::copy_n(f.data() + f.index(c, z, 0, 0), plane, s.data() + c * plane);
  }
  return s;
}

std::array<std::uint8_t, 3> density_color(double v) {
  static constexpr std::array<std::array<double, 3>, 5> stops{
      {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  const double x = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0) * (stops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(x), stops.size() - 2);
  const double f = x - static_cast<double>(i);
  std::array<std::uint8_t, 3> c{};
  for (int k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>(std::lround(stops[i][k] + f * (stops[i + 1][k] - stops[i][k])));
  return c;
}

RgbImage render_scalar(const FieldF& field, double lo, double hi) {
  const FieldF f = slice_z(field, field.grid().depth / 2);
  RgbImage img(f.grid().width, f.grid().height);
  const double scale = hi > lo ? 1.0 / (hi - lo) : 0.0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) img.set(y, x, density_color((f.at(0, 0, y, x) - lo) * scale));
  }
  return img;
}

double flow_hue_degrees(double dy, double dx) {
  double h = std::atan2(dy, dx) * 180.0 / std::numbers::pi;
  if (h < 0.0) h += 360.0;
  return h;
}

namespace {

std::array<std::uint8_t, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h, 360.0) / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c, g = x;
  } else if (hp < 2) {
    r = x, g = c;
  } else if (hp < 3) {
    g = c, b = x;
  } else if (hp < 4) {
    g = x, b = c;
  } else if (hp < 5) {
    r = x, b = c;
  } else {
    r = c, b = x;
  }
  const double m = v - c;
  auto q = [&](double u) { return static_cast<std::uint8_t>(std::lround(std::clamp(u + m, 0.0, 1.0) * 255.0)); };
  return {q(r), q(g), q(b)};
}

void require_2d_flow(const FieldF& flow, const char* what) {
  if (flow.grid().dims != 2 || flow.channels() != 2) {
    throw ContractError(std::string(what) + " expects a 2D flow field; slice 3D data first");
  }
}

}  // namespace

RgbImage flow_to_hsv(const FieldF& flow, double magnitude_percentile) {
  require_2d_flow(flow, "flow_to_hsv");
  const Grid& g = flow.grid();
  const std::size_t cells = g.cells();
  std::vector<double> mags(cells);
  for (std::size_t p = 0; p < cells; ++p) mags[p] = std::hypot(flow[p], flow[cells + p]);
  std::vector<double> sorted = mags;
  std::sort(sorted.begin(), sorted.end());
  const double ref = quantile_sorted(sorted, std::clamp(magnitude_percentile, 0.0, 100.0) / 100.0);
  RgbImage img(g.width, g.height);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * g.width + x;
      const double sat = ref > 0.0 ? std::min(1.0, mags[p] / ref) : 0.0;
      img.set(y, x, hsv_to_rgb(flow_hue_degrees(flow[p], flow[cells + p]), sat, 1.0));
    }
  }
  return img;
}

std::vector<Glyph> flow_to_glyphs(const FieldF& flow, int stride, double scale) {
  require_2d_flow(flow, "flow_to_glyphs");
  if (stride < 1) throw ContractError("glyph stride must be at least 1");
  const Grid& g = flow.grid();
  const std::size_t cells = g.cells();
  std::vector<Glyph> out;
  for (int y = 0; y < g.height; y += stride) {
    for (int x = 0; x < g.width; x += stride) {
      const std::size_t p = static_cast<std::size_t>(y) * g.width + x;
      out.push_back({static_cast<double>(y), static_cast<double>(x), flow[p] * scale, flow[cells + p] * scale});
    }
  }
  return out;
}

std::string glyphs_to_svg(const std::vector<Glyph>& glyphs, int height, int width, int ppc) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width * ppc << "\" height=\"" << height * ppc
     << "\" viewBox=\"0 0 " << width * ppc << " " << height * ppc << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& gl : glyphs) {
    const double x0 = (gl.x + 0.5) * ppc, y0 = (gl.y + 0.5) * ppc;
    const double len = std::hypot(gl.dx, gl.dy);
    if (len * ppc < 1e-6) {
      os << "<circle class=\"glyph\" cx=\"" << x0 << "\" cy=\"" << y0 << "\" r=\"1\" fill=\"black\"/>\n";
      continue;
    }
    const double x1 = x0 + gl.dx * ppc, y1 = y0 + gl.dy * ppc;
    const double ux = gl.dx / len, uy = gl.dy / len;
    const double head = std::min(0.35 * len * ppc, 0.5 * ppc + 2.0);
    const double hx = x1 - head * ux, hy = y1 - head * uy;
    os << "<path class=\"glyph\" d=\"M" << x0 << " " << y0 << " L" << x1 << " " << y1 << " M" << hx - 0.5 * head * uy
       << " " << hy + 0.5 * head * ux << " L" << x1 << " " << y1 << " L" << hx + 0.5 * head * uy << " "
       << hy - 0.5 * head * ux << "\" stroke=\"black\" fill=\"none\" stroke-width=\"1\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

namespace {

void draw_line(RgbImage& img, double x0, double y0, double x1, double y1, std::array<std::uint8_t, 3> c) {
  const int n = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))));
  for (int i = 0; i <= n; ++i) {
    const double f = static_cast<double>(i) / n;
    img.set(static_cast<int>(std::floor(y0 + f * (y1 - y0))), static_cast<int>(std::floor(x0 + f * (x1 - x0))), c);
  }
}

}  // namespace

RgbImage glyphs_to_image(const std::vector<Glyph>& glyphs, int height, int width, int ppc) {
  RgbImage img(width * ppc, height * ppc);
  const std::array<std::uint8_t, 3> black{0, 0, 0};
  for (const auto& gl : glyphs) {
    const double x0 = (gl.x + 0.5) * ppc, y0 = (gl.y + 0.5) * ppc;
    const double len = std::hypot(gl.dx, gl.dy);
    if (len * ppc < 0.5) {
      img.set(static_cast<int>(y0), static_cast<int>(x0), black);
      continue;
    }
    const double x1 = x0 + gl.dx * ppc, y1 = y0 + gl.dy * ppc;
    const double ux = gl.dx / len, uy = gl.dy / len;
    const double head = std::min(0.35 * len * ppc, 0.5 * ppc + 2.0);
    const double hx = x1 - head * ux, hy = y1 - head * uy;
    draw_line(img, x0, y0, x1, y1, black);
    draw_line(img, hx - 0.5 * head * uy, hy + 0.5 * head * ux, x1, y1, black);
    draw_line(img, hx + 0.5 * head * uy, hy - 0.5 * head * ux, x1, y1, black);
  }
  return img;
}

// ---------------------------------------------------------------------------
// Pathlines
// ---------------------------------------------------------------------------

namespace {

std::array<double, 3> sample_flow(const FieldF& flow, const std::array<double, 3>& p) {
  const Grid& g = flow.grid();
  const bool is3d = g.dims == 3;
  const auto sz = is3d ? detail::axis_sample(p[0], g.depth) : detail::AxisSample<double>{0, 0, 0.0, 0.0};
  const auto sy = detail::axis_sample(p[1], g.height);
  const auto sx = detail::axis_sample(p[2], g.width);
  std::array<double, 3> out{0, 0, 0};
  const int base = is3d ? 0 : 1;
  for (int c = 0; c < flow.channels(); ++c) {
    auto plane = [&](int z) {
      const double a = flow.at(c, z, sy.lo, sx.lo), b = flow.at(c, z, sy.lo, sx.hi);
      const double d = flow.at(c, z, sy.hi, sx.lo), e = flow.at(c, z, sy.hi, sx.hi);
      const double top = a + sx.frac * (b - a), bot = d + sx.frac * (e - d);
      return top + sy.frac * (bot - top);
    };
    const double v0 = plane(sz.lo);
    out[base + c] = is3d ? v0 + sz.frac * (plane(sz.hi) - v0) : v0;
  }
  return out;
}

}  // namespace

std::vector<Pathline> pathlines(const std::vector<FieldF>& flows, const std::vector<std::array<double, 3>>& seeds,
                                int steps, double dt) {
  if (flows.empty()) throw ContractError("pathlines need at least one flow frame");
  if (!(dt > 0.0)) throw ContractError("pathline step must be positive");
  const Grid& g = flows.front().grid();
  if (static_cast<double>(steps) * dt > static_cast<double>(flows.size()) + 1e-9) {
    throw ContractError("flows cover " + std::to_string(flows.size()) + " frames, integration needs " +
                        std::to_string(static_cast<double>(steps) * dt));
  }
  const std::array<double, 3> hi{static_cast<double>(g.depth - 1), static_cast<double>(g.height - 1),
                                 static_cast<double>(g.width - 1)};
  auto inside = [&](const std::array<double, 3>& p) {
    for (int a = 0; a < 3; ++a) {
      if (p[a] < 0.0 || p[a] > hi[a]) return false;
    }
    return true;
  };

  std::vector<Pathline> out;
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    std::array<double, 3> p = seeds[si];
    if (g.dims == 2) p[0] = 0.0;
    if (!inside(p)) {
      spdlog::warn("pathline seed {} lies outside the domain; skipped", si);
      continue;
    }
    Pathline line;
    line.seed_index = si;
    line.points.push_back(p);
    for (int k = 0; k < steps; ++k) {
      const auto frame = std::min(flows.size() - 1, static_cast<std::size_t>(std::floor(k * dt + 1e-12)));
      const FieldF& f = flows[frame];
      const auto v1 = sample_flow(f, p);
      std::array<double, 3> mid{};
      for (int a = 0; a < 3; ++a) mid[a] = p[a] + 0.5 * dt * v1[a];
      const auto v2 = sample_flow(f, mid);
      std::array<double, 3> q{};
      for (int a = 0; a < 3; ++a) q[a] = p[a] + dt * v2[a];
      bool leaves = false;
      if (!inside(q)) {
        double alpha = 1.0;
        for (int a = 0; a < 3; ++a) {
          const double d = q[a] - p[a];
          if (q[a] < 0.0 && d != 0.0) alpha = std::min(alpha, (0.0 - p[a]) / d);
          if (q[a] > hi[a] && d != 0.0) alpha = std::min(alpha, (hi[a] - p[a]) / d);
        }
        for (int a = 0; a < 3; ++a) q[a] = std::clamp(p[a] + alpha * (q[a] - p[a]), 0.0, hi[a]);
        leaves = true;
      }
      if (q != p) line.points.push_back(q);
      p = q;
      if (leaves) {
        line.left_domain = true;
        break;
      }
    }
    out.push_back(std::move(line));
  }
  return out;
}

RgbImage pathlines_to_image(const std::vector<Pathline>& lines, const FieldF* background, int ppc) {
  int h = 0, w = 0;
  RgbImage img;
  if (background) {
    const FieldF bg = slice_z(*background, background->grid().depth / 2);
    h = bg.grid().height;
    w = bg.grid().width;
    img = RgbImage(w * ppc, h * ppc);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const double v = std::clamp(static_cast<double>(bg.at(0, 0, y / ppc, x / ppc)), 0.0, 1.0);
        const auto b = static_cast<std::uint8_t>(std::lround(255.0 - 120.0 * v));
        img.set(y, x, {b, b, b});
      }
    }
  } else {
    for (const auto& l : lines) {
      for (const auto& p : l.points) {
        h = std::max(h, static_cast<int>(p[1]) + 1);
        w = std::max(w, static_cast<int>(p[2]) + 1);
      }
    }
    img = RgbImage(std::max(1, w) * ppc, std::max(1, h) * ppc);
  }
  for (const auto& l : lines) {
    const double hue = std::fmod(static_cast<double>(l.seed_index) * 137.508, 360.0);
    const auto c = hsv_to_rgb(hue, 0.9, 0.8);
    const auto& pts = l.points;
    img.set(static_cast<int>((pts[0][1] + 0.5) * ppc), static_cast<int>((pts[0][2] + 0.5) * ppc), c);
    for (std::size_t i = 1; i < pts.size(); ++i) {
      draw_line(img, (pts[i - 1][2] + 0.5) * ppc, (pts[i - 1][1] + 0.5) * ppc, (pts[i][2] + 0.5) * ppc,
                (pts[i][1] + 0.5) * ppc, c);
    }
  }
  return img;
}

FieldF diff_values(const FieldF& a, const FieldF& b, double magnify) {
  require_same_grid(a.grid(), b.grid(), "diff_map");
  if (a.channels() != b.channels()) throw ContractError("diff_map: channel counts differ");
  FieldF out(a.channels(), a.grid());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = static_cast<float>(
        std::clamp(std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) * magnify, 0.0, 1.0));
  }
  return out;
}

RgbImage diff_map(const FieldF& a, const FieldF& b, double magnify) {
  return render_scalar(diff_values(a, b, magnify), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Run evaluation
// ---------------------------------------------------------------------------

const std::vector<std::string>& known_metrics() {
  static const std::vector<std::string> m{"psnr", "epe", "lpips"};
  return m;
}

nlohmann::json evaluate_run(const EnsembleArchive& pred, const EnsembleArchive& gt, const EvalOptions& options) {
  for (const auto& m : options.metrics) {
    if (std::find(known_metrics().begin(), known_metrics().end(), m) == known_metrics().end()) {
      throw ContractError("unknown metric '" + m + "'");
    }
  }
  const Manifest& pm = pred.manifest();
  const Manifest& gm = gt.manifest();
  int rate = options.rate;
  if (rate <= 0) rate = pm.provenance.value("rate", 0);
  if (rate <= 0) throw ContractError("interpolation rate unknown; pass it explicitly");
  if (!(pm.grid() == gm.grid())) {
    throw AlignmentError("prediction grid " + pm.grid().to_string() + " differs from ground truth " +
                         gm.grid().to_string());
  }
  if (!pm.has_field("density_pred")) throw AlignmentError("prediction archive has no density_pred field");
  if (!gm.normalization.count("density")) throw DataError("ground-truth archive has no density normalization");
  const auto [lo, hi] = gm.normalization.at("density");

  std::string checkpoint = options.checkpoint;
  if (checkpoint.empty() && pm.provenance.contains("checkpoint") && pm.provenance["checkpoint"].is_string()) {
    checkpoint = pm.provenance["checkpoint"].get<std::string>();
  }
  const std::string data = fs::absolute(gt.root()).string();

  // Alignment first so a partial report is never produced.
  std::vector<std::string> offending;
  std::vector<std::pair<const MemberInfo*, int>> targets;
  for (const auto& mi : pm.members) {
    const MemberInfo* g = nullptr;
    for (const auto& cand : gm.members) {
      if (cand.id == mi.id) g = &cand;
    }
    for (int t = mi.first; t < mi.timesteps; ++t) {
      if (!mi.has("density_pred", t)) continue;
      if (!g || !g->has("density", t)) {
        offending.push_back(mi.id + ":" + std::to_string(t));
        continue;
      }
      if ((t - g->first) % rate != 0) targets.push_back({&mi, t});
    }
  }
  if (!offending.empty()) {
    std::string list;
    for (std::size_t i = 0; i < offending.size(); ++i) list += (i ? ", " : "") + offending[i];
    throw AlignmentError("prediction indices without ground truth: " + list);
  }
  if (targets.empty()) throw AlignmentError("no interpolated timesteps to evaluate at rate " + std::to_string(rate));

  nlohmann::json report = nlohmann::json::object();
  auto want = [&](const char* m) {
    return std::find(options.metrics.begin(), options.metrics.end(), m) != options.metrics.end();
  };
  auto finish = [&](const char* name, const std::vector<MetricsReport::Entry>& entries) {
    MetricsReport r = aggregate(entries, name, rate);
    r.checkpoint = checkpoint;
    r.data = data;
    report[name] = report_to_json(r);
  };

  if (want("psnr")) {
    std::vector<MetricsReport::Entry> e;
    for (const auto& [mi, t] : targets) {
      const FieldF p = normalize_field(pred.read(mi->id, "density_pred", t), lo, hi);
      const FieldF g = normalize_field(gt.read(mi->id, "density", t), lo, hi);
      e.push_back({mi->id, t, psnr(p, g)});
    }
    finish("psnr", e);
  }
  if (want("epe")) {
    std::vector<MetricsReport::Entry> e;
    if (pm.has_field("flow_pred") && gm.has_field("flow")) {
      for (const auto& [mi, t] : targets) {
        if (!mi->has("flow_pred", t) || !gt.has(mi->id, "flow", t)) continue;
        e.push_back({mi->id, t, epe(pred.read(mi->id, "flow_pred", t), gt.read(mi->id, "flow", t))});
      }
    }
    if (e.empty()) {
      report["epe"] = nullptr;
    } else {
      finish("epe", e);
    }
  }
  if (want("lpips")) {
    std::vector<MetricsReport::Entry> e;
    std::string error;
    for (const auto& [mi, t] : targets) {
      const FieldF p = normalize_field(pred.read(mi->id, "density_pred", t), lo, hi);
      const FieldF g = normalize_field(gt.read(mi->id, "density", t), lo, hi);
      const LpipsResult r = lpips_via_plugin(p, g, options.lpips_command);
      if (!r.value) {
        error = r.error;
        e.clear();
        break;
      }
      e.push_back({mi->id, t, *r.value});
    }
    if (e.empty()) {
      spdlog::warn("LPIPS unavailable: {}", error);
      report["lpips"] = nullptr;
    } else {
      finish("lpips", e);
    }
  } else {
    report["lpips"] = nullptr;
  }
  return report;
}

}  // namespace flint
