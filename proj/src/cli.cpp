#include "flint/cli.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "flint/datagen.hpp"
#include "flint/evalviz.hpp"
#include "flint/infer.hpp"
#include "flint/train.hpp"

namespace flint {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitConfig = 4;
constexpr int kExitAlignment = 5;

// Raised for argument combinations CLI11 cannot check on its own.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Options that must be set either on the command line or in --config. CLI11's
// own required() check runs before the config file is applied, so these are
// grouped instead and checked by check_required().
constexpr const char* kRequired = "Required";

void check_required(const CLI::App& sub) {
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_group() == kRequired && opt->count() == 0) throw UsageError(opt->get_name() + " is required");
  }
}

void init_logging() {
  static bool done = false;
  if (done) return;
  done = true;
  auto logger = spdlog::stderr_color_mt("flint");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

std::string json_scalar_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

// Fills options that were not given on the command line from a JSON object
// whose keys are long option names (dashes or underscores). Returns the keys
// no option claimed.
json apply_config(CLI::App& sub, const json& config) {
  if (!config.is_object()) throw ConfigError("config file must hold a JSON object");
  json rest = config;
  for (CLI::Option* opt : sub.get_options()) {
    for (const std::string& name : opt->get_lnames()) {
      if (name == "help" || name == "config") continue;
      std::string key = name;
      if (!rest.contains(key)) std::replace(key.begin(), key.end(), '-', '_');
      if (!rest.contains(key)) continue;
      const json value = rest[key];
      rest.erase(key);
      if (opt->count() > 0) break;  // command-line flags win
      std::vector<std::string> items;
      if (value.is_array()) {
        for (const auto& v : value) items.push_back(json_scalar_string(v));
      } else {
        items.push_back(json_scalar_string(value));
      }
      for (const auto& item : items) opt->add_result(item);
      opt->run_callback();
      break;
    }
  }
  return rest;
}

void warn_unknown_keys(const json& rest) {
  for (const auto& [key, value] : rest.items()) spdlog::warn("ignoring unknown config key '{}'", key);
}

// Refuses to touch an existing non-empty output unless --overwrite is given.
void guard_output(const fs::path& path, bool overwrite) {
  std::error_code ec;
  if (!fs::exists(path, ec)) return;
  const bool empty = fs::is_directory(path, ec) ? fs::is_empty(path, ec) : false;
  if (!empty && !overwrite) {
    throw ConflictError("'" + path.string() + "' already exists; pass --overwrite to replace it");
  }
}

void ensure_directory(const fs::path& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw IoError("cannot create '" + path.string() + "': " + ec.message());
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenArgs {
  datagen::PresetOptions preset;
  std::string out;
  bool overwrite = false;
};

void setup_gen(CLI::App& app, GenArgs& a) {
  app.add_option("--preset", a.preset.preset, "Dataset preset")
      ->group(kRequired)
      ->check(CLI::IsMember(datagen::preset_names()));
  app.add_option("--members", a.preset.members, "Ensemble members")->capture_default_str();
  app.add_option("--timesteps", a.preset.timesteps, "Recorded frames per member")->capture_default_str();
  app.add_option("--seed", a.preset.seed, "Random seed")->capture_default_str();
  app.add_option("--shape", a.preset.shape, "Grid shape, array axis order")->delimiter(',');
  app.add_option("--velocity", a.preset.velocity, "Constant velocity in cells per frame, array axis order")
      ->delimiter(',');
  app.add_option("--noise-sigma", a.preset.noise_sigma, "Gaussian noise on normalized density")
      ->capture_default_str();
  app.add_option("--record-stride", a.preset.record_stride, "lbs-mini: solver steps between frames");
  app.add_option("--warmup", a.preset.warmup, "lbs-mini: solver steps before the first frame");
  app.add_option("--out", a.out, "Output archive directory")->group(kRequired);
}

int cmd_gen(GenArgs& a) {
  guard_output(a.out, a.overwrite);
  spdlog::info("generating {} x {} frames of '{}' into {}", a.preset.members, a.preset.timesteps, a.preset.preset, a.out);
  datagen::generate_preset(a.preset, a.out, a.overwrite);
  std::cout << "wrote " << a.preset.members << " members to " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::optional<std::string> mode;
  std::optional<int> epochs, batch_size, window, patience, samples_per_epoch, val_samples;
  std::optional<double> lr, lr_min, weight_decay, clip_norm;
  std::optional<std::uint64_t> seed;
  std::optional<int> blocks, teacher_channels;
  std::vector<int> channels;
  std::optional<double> lambda_rec, lambda_flow, lambda_dis, lambda_photo, lambda_reg, gamma, lambda_smooth;
  std::optional<bool> smoothness;
  std::vector<std::string> train_members, val_members, test_members;
  std::optional<double> val_fraction, test_fraction;
  bool overwrite = false;
};

void setup_train(CLI::App& app, TrainArgs& a) {
  app.add_option("--data", a.data, "Ground-truth archive")->group(kRequired);
  app.add_option("--out", a.out, "Run directory for the checkpoint and history")->group(kRequired);
  app.add_option("--mode", a.mode, "flow-supervised or flow-unsupervised")
      ->check(CLI::IsMember({"flow-supervised", "flow-unsupervised", "supervised", "unsupervised"}));
  app.add_option("--epochs", a.epochs);
  app.add_option("--batch,--batch-size", a.batch_size);
  app.add_option("--lr", a.lr, "Initial learning rate");
  app.add_option("--lr-min", a.lr_min, "Final learning rate of the cosine schedule");
  app.add_option("--window", a.window, "Largest u - s of a training triplet");
  app.add_option("--patience", a.patience, "Epochs without validation improvement before stopping");
  app.add_option("--seed", a.seed);
  app.add_option("--samples-per-epoch", a.samples_per_epoch);
  app.add_option("--val-samples", a.val_samples);
  app.add_option("--weight-decay", a.weight_decay);
  app.add_option("--clip-norm", a.clip_norm, "Gradient norm clip, <= 0 disables");
  app.add_option("--blocks,--num-blocks", a.blocks, "Student refinement blocks");
  app.add_option("--channels,--block-channels", a.channels, "Hidden channels per block")->delimiter(',');
  app.add_option("--teacher-channels", a.teacher_channels);
  app.add_option("--lambda-rec", a.lambda_rec);
  app.add_option("--lambda-flow", a.lambda_flow);
  app.add_option("--lambda-dis", a.lambda_dis);
  app.add_option("--lambda-photo", a.lambda_photo);
  app.add_option("--lambda-reg", a.lambda_reg);
  app.add_option("--lambda-smooth", a.lambda_smooth);
  app.add_option("--smoothness", a.smoothness, "Add the flow smoothness term in unsupervised mode");
  app.add_option("--gamma", a.gamma, "Per-block decay of the flow loss");
  app.add_option("--train-members", a.train_members)->delimiter(',');
  app.add_option("--val-members", a.val_members)->delimiter(',');
  app.add_option("--test-members", a.test_members)->delimiter(',');
  app.add_option("--val-fraction", a.val_fraction);
  app.add_option("--test-fraction", a.test_fraction);
}

// Default hidden widths for a student with `n` blocks: the four-block
// defaults, trimmed from the middle or padded with the middle width.
std::vector<int> default_channels(int n) {
  const std::vector<int> base = ModelConfig{}.block_channels;
  if (n <= 0) return {};
  if (n == 1) return {base.front()};
  std::vector<int> out{base.front()};
  for (int i = 1; i < n - 1; ++i) out.push_back(base[std::min<std::size_t>(i, base.size() - 2)]);
  out.push_back(base.back());
  return out;
}

int cmd_train(TrainArgs& a, const json& extra_config) {
  const EnsembleArchive archive = EnsembleArchive::open(a.data);
  const int dims = archive.manifest().dims;

  TrainConfig tc = TrainConfig::defaults_for(dims);
  ModelConfig mc;
  mc.dims = dims;
  if (!extra_config.empty()) {
    apply_config_json(extra_config, tc, mc);
    mc.dims = dims;
  }
  if (a.mode) mc.mode = training_mode_from_string(*a.mode);
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.lr) tc.lr = *a.lr;
  if (a.lr_min) tc.lr_min = *a.lr_min;
  if (a.window) tc.window = *a.window;
  if (a.patience) tc.patience = *a.patience;
  if (a.seed) tc.seed = *a.seed;
  if (a.samples_per_epoch) tc.samples_per_epoch = *a.samples_per_epoch;
  if (a.val_samples) tc.val_samples = *a.val_samples;
  if (a.weight_decay) tc.weight_decay = *a.weight_decay;
  if (a.clip_norm) tc.clip_norm = *a.clip_norm;
  if (!a.train_members.empty()) tc.split.train = a.train_members;
  if (!a.val_members.empty()) tc.split.val = a.val_members;
  if (!a.test_members.empty()) tc.split.test = a.test_members;
  if (a.val_fraction) tc.split.val_fraction = *a.val_fraction;
  if (a.test_fraction) tc.split.test_fraction = *a.test_fraction;
  if (a.blocks) {
    mc.num_blocks = *a.blocks;
    if (a.channels.empty() && static_cast<int>(mc.block_channels.size()) != mc.num_blocks) {
      mc.block_channels = default_channels(mc.num_blocks);
    }
  }
  if (!a.channels.empty()) {
    // One width given for several blocks applies to all of them.
    mc.block_channels = a.channels.size() == 1 && a.blocks ? std::vector<int>(*a.blocks, a.channels[0]) : a.channels;
  }
  if (!a.blocks && !a.channels.empty()) mc.num_blocks = static_cast<int>(a.channels.size());
  if (a.teacher_channels) mc.teacher_channels = *a.teacher_channels;
  if (a.lambda_rec) mc.loss.lambda_rec = *a.lambda_rec;
  if (a.lambda_flow) mc.loss.lambda_flow = *a.lambda_flow;
  if (a.lambda_dis) mc.loss.lambda_dis = *a.lambda_dis;
  if (a.lambda_photo) mc.loss.lambda_photo = *a.lambda_photo;
  if (a.lambda_reg) mc.loss.lambda_reg = *a.lambda_reg;
  if (a.lambda_smooth) mc.loss.lambda_smooth = *a.lambda_smooth;
  if (a.smoothness) mc.loss.smoothness = *a.smoothness;
  if (a.gamma) mc.loss.gamma = *a.gamma;
  mc.validate();
  tc.validate();

  const fs::path out(a.out);
  if (!a.overwrite) {
    for (const char* name : {"checkpoint", "history.json"}) {
      if (fs::exists(out / name)) {
        throw ConflictError("'" + (out / name).string() + "' already exists; pass --overwrite to replace it");
      }
    }
  }
  ensure_directory(out);

  std::cout << "config " << json{{"train", tc.to_json()}, {"model", model_config_to_json(mc)}}.dump() << "\n"
            << std::flush;

  FlintModel model(mc, tc.seed);
  const TrainResult result = train_loop(model, archive, tc, out);
  std::cout << "best val loss " << result.best_val << " at epoch " << result.best_epoch << " after "
            << result.history.size() << " epochs" << (result.stopped_early ? " (early stop)" : "") << "; checkpoint "
            << result.checkpoint.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// infer / baseline
// ---------------------------------------------------------------------------

struct InferArgs {
  std::string data;
  std::string checkpoint;
  std::string out;
  InferOptions options;
};

void setup_infer(CLI::App& app, InferArgs& a, bool with_checkpoint) {
  app.add_option("--data", a.data, "Archive holding the full-rate sequence")->group(kRequired);
  if (with_checkpoint) {
    app.add_option("--checkpoint", a.checkpoint, "Checkpoint directory or run directory")->group(kRequired);
  }
  app.add_option("--out", a.out, "Prediction archive directory")->group(kRequired);
  app.add_option("--rate", a.options.rate, "Interpolation rate R")->group(kRequired)->check(CLI::PositiveNumber);
  app.add_option("--members", a.options.members, "Members to process (default all)")->delimiter(',');
  app.add_option("--times,--t", a.options.times, "Indices to write (default all covered)")->delimiter(',');
}

fs::path resolve_checkpoint(const fs::path& p) {
  if (fs::exists(p / "manifest.json")) return p;
  if (fs::exists(p / "checkpoint" / "manifest.json") || fs::exists(p / "checkpoint.old" / "manifest.json")) {
    return p / "checkpoint";
  }
  return p;
}

int cmd_infer(InferArgs& a, bool overwrite) {
  guard_output(a.out, overwrite);
  a.options.overwrite = overwrite;
  const EnsembleArchive archive = EnsembleArchive::open(a.data);
  const fs::path ckpt = resolve_checkpoint(a.checkpoint);
  Checkpoint ck = load_checkpoint(ckpt);
  if (a.options.checkpoint_id.empty()) a.options.checkpoint_id = fs::absolute(ckpt).lexically_normal().string();
  const InferStats stats = interpolate_range(ck.model, ck.state.density_range, archive, a.out, a.options);
  std::cout << "wrote " << stats.predictions << " predictions to " << a.out << " (" << stats.seconds_per_timestep
            << " s per timestep)\n";
  return kExitOk;
}

int cmd_baseline(InferArgs& a, bool overwrite) {
  guard_output(a.out, overwrite);
  a.options.overwrite = overwrite;
  const EnsembleArchive archive = EnsembleArchive::open(a.data);
  const InferStats stats = linear_baseline(archive, a.out, a.options);
  std::cout << "wrote " << stats.predictions << " linear predictions to " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string out = "report.json";
  EvalOptions options;
};

void setup_eval(CLI::App& app, EvalArgs& a) {
  app.add_option("--pred", a.pred, "Prediction archive")->group(kRequired);
  app.add_option("--gt", a.gt, "Ground-truth archive")->group(kRequired);
  app.add_option("--metrics", a.options.metrics, "Comma-separated metrics")
      ->delimiter(',')
      ->check(CLI::IsMember(known_metrics()))
      ->capture_default_str();
  app.add_option("--rate", a.options.rate, "Interpolation rate (default: from the prediction provenance)");
  app.add_option("--lpips-command", a.options.lpips_command,
                 "External command called as `<cmd> pred.png gt.png`, printing the distance")
      ->envname("FLINT_LPIPS_COMMAND");
  app.add_option("--checkpoint-id", a.options.checkpoint, "Checkpoint recorded in the report");
  app.add_option("--out", a.out, "Report path, or a directory for report.json")->capture_default_str();
}

int cmd_eval(EvalArgs& a, bool overwrite) {
  fs::path out(a.out);
  if (fs::is_directory(out) || out.extension().empty()) out /= "report.json";
  if (fs::exists(out) && !overwrite) {
    throw ConflictError("'" + out.string() + "' already exists; pass --overwrite to replace it");
  }
  const EnsembleArchive pred = EnsembleArchive::open(a.pred);
  const EnsembleArchive gt = EnsembleArchive::open(a.gt);
  const json report = evaluate_run(pred, gt, a.options);
  if (out.has_parent_path()) ensure_directory(out.parent_path());
  write_text_atomic(out, report.dump(2));
  for (const auto& m : a.options.metrics) {
    const json r = report.value(m, json());
    if (r.is_null()) {
      std::cout << m << ": null\n";
    } else {
      std::cout << m << ": mean " << r.at("mean").get<double>() << " median " << r.at("median").get<double>()
                << " over " << r.at("per_timestep").size() << " timesteps\n";
    }
  }
  std::cout << "report written to " << out.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// viz
// ---------------------------------------------------------------------------

struct VizArgs {
  std::string data;
  std::string style;
  std::string field;
  std::string ref;
  std::string ref_field = "density";
  std::string member;
  std::vector<int> times;
  std::string out;
  int slice = -1;
  double magnify = 10.0;
  int glyph_stride = 4;
  double glyph_scale = 1.0;
  bool svg = false;
  int steps = 8;
  double dt = 1.0;
  int seed_stride = 8;
};

void setup_viz(CLI::App& app, VizArgs& a) {
  app.add_option("--data", a.data, "Archive to draw from")->group(kRequired);
  app.add_option("--style", a.style, "Figure style")
      ->group(kRequired)
      ->check(CLI::IsMember({"hsv", "glyph", "diff", "pathline", "density"}));
  app.add_option("--field", a.field, "Field to draw (default depends on the style)");
  app.add_option("--ref", a.ref, "diff: archive compared against");
  app.add_option("--ref-field", a.ref_field, "diff: field of the reference archive")->capture_default_str();
  app.add_option("--member", a.member, "Member id (default: first member)");
  app.add_option("--t", a.times, "Timesteps, one figure each")->group(kRequired)->delimiter(',');
  app.add_option("--out", a.out, "Figure directory")->group(kRequired);
  app.add_option("--slice", a.slice, "3D: z plane to draw (default: middle)");
  app.add_option("--magnify", a.magnify, "diff: error magnification")->capture_default_str();
  app.add_option("--glyph-stride", a.glyph_stride, "glyph: cells between arrows")->capture_default_str();
  app.add_option("--glyph-scale", a.glyph_scale, "glyph: arrow length per cell of displacement")
      ->capture_default_str();
  app.add_flag("--svg", a.svg, "glyph: also write an SVG");
  app.add_option("--steps", a.steps, "pathline: integration steps")->capture_default_str();
  app.add_option("--dt", a.dt, "pathline: step in frames")->capture_default_str();
  app.add_option("--seed-stride", a.seed_stride, "pathline: cells between seeds")->capture_default_str();
}

// In-plane (dy, dx) components of plane z of a flow field.
FieldF plane_flow(const FieldF& flow, int z) {
  if (flow.grid().dims == 2) return flow;
  const FieldF s = slice_z(flow, z);
  FieldF out(2, s.grid());
  const std::size_t cells = s.grid().cells();
  std::copy_n(s.data() + cells, 2 * cells, out.data());
  return out;
}

std::string figure_name(const std::string& member, int t, const std::string& style, const char* ext) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s_t%06d_%s.%s", member.c_str(), t, style.c_str(), ext);
  return buf;
}

int cmd_viz(VizArgs& a, bool overwrite) {
  const EnsembleArchive archive = EnsembleArchive::open(a.data);
  const Manifest& m = archive.manifest();
  if (a.member.empty()) {
    if (m.members.empty()) throw DataError("archive has no members");
    a.member = m.members.front().id;
  }
  const MemberInfo& member = m.member(a.member);
  const Grid grid = archive.grid();
  const int z = grid.dims == 3 ? (a.slice >= 0 ? a.slice : grid.depth / 2) : 0;

  const bool is_flow_style = a.style == "hsv" || a.style == "glyph" || a.style == "pathline";
  std::string field = a.field;
  if (field.empty()) {
    if (is_flow_style) {
      field = m.has_field("flow_pred") ? "flow_pred" : "flow";
    } else {
      field = m.has_field("density_pred") ? "density_pred" : "density";
    }
  }
  if (!m.has_field(field)) throw DataError("archive has no field '" + field + "'");
  if (is_flow_style && m.fields.at(field).channels != grid.dims) {
    throw ConfigError("style '" + a.style + "' needs a flow field, '" + field + "' is scalar");
  }

  std::optional<EnsembleArchive> ref;
  if (a.style == "diff") {
    if (a.ref.empty()) {
      if (field == a.ref_field) throw UsageError("diff needs --ref or a --field different from --ref-field");
      ref = archive;
    } else {
      ref = EnsembleArchive::open(a.ref);
    }
    if (!(ref->grid() == grid)) throw AlignmentError("diff: reference grid does not match");
  }

  ensure_directory(a.out);
  int written = 0;
  for (const int t : a.times) {
    if (!member.has(field, t)) throw DataError(a.member + ":" + std::to_string(t) + " has no '" + field + "'");
    const fs::path png = fs::path(a.out) / figure_name(a.member, t, a.style, "png");
    if (fs::exists(png) && !overwrite) {
      throw ConflictError("'" + png.string() + "' already exists; pass --overwrite to replace it");
    }
    if (a.style == "density") {
      write_png(png, render_scalar(slice_z(archive.read_normalized(a.member, field, t), z)));
    } else if (a.style == "hsv") {
      write_png(png, flow_to_hsv(plane_flow(archive.read(a.member, field, t), z)));
    } else if (a.style == "glyph") {
      const auto glyphs = flow_to_glyphs(plane_flow(archive.read(a.member, field, t), z), a.glyph_stride,
                                         a.glyph_scale);
      write_png(png, glyphs_to_image(glyphs, grid.height, grid.width));
      if (a.svg) {
        write_text_atomic(fs::path(a.out) / figure_name(a.member, t, a.style, "svg"),
                          glyphs_to_svg(glyphs, grid.height, grid.width));
      }
    } else if (a.style == "diff") {
      if (!ref->has(a.member, a.ref_field, t)) {
        throw AlignmentError("diff: reference lacks " + a.member + ":" + std::to_string(t));
      }
      const FieldF lhs = slice_z(archive.read_normalized(a.member, field, t), z);
      const FieldF rhs = slice_z(ref->read_normalized(a.member, a.ref_field, t), z);
      write_png(png, diff_map(lhs, rhs, a.magnify));
    } else {  // pathline
      std::vector<FieldF> flows;
      const int frames_needed = static_cast<int>(std::ceil(a.steps * a.dt - 1e-9));
      for (int k = t; k < t + frames_needed && member.has(field, k); ++k) {
        flows.push_back(plane_flow(archive.read(a.member, field, k), z));
      }
      if (flows.empty()) throw DataError("no flow frames from " + a.member + ":" + std::to_string(t));
      const int steps = std::min(a.steps, static_cast<int>(std::floor(flows.size() / a.dt + 1e-9)));
      if (steps < a.steps) spdlog::warn("pathlines from t={} cut to {} steps by the available flow", t, steps);
      std::vector<std::array<double, 3>> seeds;
      const int stride = std::max(1, a.seed_stride);
      for (int y = stride / 2; y < grid.height; y += stride) {
        for (int x = stride / 2; x < grid.width; x += stride) seeds.push_back({0.0, double(y), double(x)});
      }
      const auto lines = pathlines(flows, seeds, steps, a.dt);
      std::optional<FieldF> background;
      if (m.has_field("density") && member.has("density", t)) {
        background = slice_z(archive.read_normalized(a.member, "density", t), z);
      }
      write_png(png, pathlines_to_image(lines, background ? &*background : nullptr));
    }
    ++written;
  }
  std::cout << "wrote " << written << " " << a.style << " figures to " << a.out << "\n";
  return kExitOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ContractError*>(&e)) return kExitUsage;
  if (dynamic_cast<const AlignmentError*>(&e)) return kExitAlignment;
  if (const auto* le = dynamic_cast<const LoadError*>(&e)) {
    return le->kind() == LoadError::Kind::kMissingFile ? kExitIo : kExitConfig;
  }
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const ConflictError*>(&e)) return kExitIo;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DataError*>(&e)) return kExitConfig;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return kExitIo;
  return kExitFailure;
}

}  // namespace

int run_cli(int argc, char** argv) {
  init_logging();
  CLI::App app{"flint: flow and temporal interpolation for scalar-field ensembles", "flint"};
  app.require_subcommand(1);

  std::string config_path;
  bool overwrite = false;
  int jobs = 1;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON file of option values; command-line flags win");
    sub->add_flag("--overwrite", overwrite, "Replace existing outputs");
    sub->add_option("--jobs", jobs, "Worker parallelism cap")->envname("FLINT_JOBS")->check(CLI::PositiveNumber);
  };

  GenArgs gen;
  TrainArgs train;
  InferArgs infer;
  InferArgs baseline;
  EvalArgs eval;
  VizArgs viz;

  CLI::App* gen_cmd = app.add_subcommand("gen", "Generate a ground-truth ensemble archive");
  setup_gen(*gen_cmd, gen);
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model on an archive");
  setup_train(*train_cmd, train);
  CLI::App* infer_cmd = app.add_subcommand("infer", "Interpolate a subsampled archive with a checkpoint");
  setup_infer(*infer_cmd, infer, true);
  CLI::App* base_cmd = app.add_subcommand("baseline", "Linear-in-time interpolation baseline");
  setup_infer(*base_cmd, baseline, false);
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score predictions against ground truth");
  setup_eval(*eval_cmd, eval);
  CLI::App* viz_cmd = app.add_subcommand("viz", "Render density, flow, difference and pathline figures");
  setup_viz(*viz_cmd, viz);
  for (CLI::App* sub : {gen_cmd, train_cmd, infer_cmd, base_cmd, eval_cmd, viz_cmd}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    json rest = json::object();
    if (!config_path.empty()) {
      try {
        rest = apply_config(*sub, read_json_file(config_path));
      } catch (const CLI::ParseError& e) {
        throw ConfigError(std::string("config file value rejected: ") + e.what());
      }
    }
    if (sub != train_cmd) warn_unknown_keys(rest);
    check_required(*sub);

    if (sub == gen_cmd) {
      gen.overwrite = overwrite;
      gen.preset.jobs = jobs;
      return cmd_gen(gen);
    }
    if (sub == train_cmd) {
      train.overwrite = overwrite;
      return cmd_train(train, rest);
    }
    if (sub == infer_cmd) return cmd_infer(infer, overwrite);
    if (sub == base_cmd) return cmd_baseline(baseline, overwrite);
    if (sub == eval_cmd) return cmd_eval(eval, overwrite);
    return cmd_viz(viz, overwrite);
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    spdlog::error("{}", e.what());
    if (code == kExitUsage) std::cerr << "\n" << app.get_subcommands().front()->help();
    return code;
  }
}

}  // namespace flint
