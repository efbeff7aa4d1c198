#include "flint/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "flint/archive.hpp"
#include "flint/warp.hpp"

namespace flint {

namespace fs = std::filesystem;

struct ForwardTape {
  FieldF d_s;
  FieldF d_u;
  std::vector<RefineBlock::Tape> blocks;
  RefineBlock::Tape teacher;
};

namespace {

// Input channel layout shared by all blocks.
enum : int { kInDs = 0, kInDu = 1, kInWarpS = 2, kInWarpU = 3, kInFlows = 4 };

void add_into(FieldF& dst, const FieldF& src) {
  if (src.empty()) return;
  if (dst.empty()) {
    dst = src;
    return;
  }
  float* d = dst.data();
  const float* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

void add_into(BlockOutput& dst, const BlockOutput& src) {
  add_into(dst.f_ts, src.f_ts);
  add_into(dst.f_tu, src.f_tu);
  add_into(dst.mask_logit, src.mask_logit);
}

FieldF slice(const FieldF& f, int c0, int n) {
  FieldF out(n, f.grid());
  const std::size_t cells = f.grid().cells();
  std::copy_n(f.data() + c0 * cells, n * cells, out.data());
  return out;
}

void add_channels(FieldF& dst, const FieldF& src, int c0) {
  const std::size_t cells = src.grid().cells();
  const float* s = src.data() + c0 * cells;
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s[i];
}

FieldF sigmoid(const FieldF& logit) {
  FieldF out(logit.channels(), logit.grid());
  for (std::size_t i = 0; i < logit.size(); ++i) out[i] = 1.f / (1.f + std::exp(-logit[i]));
  return out;
}

FieldF concat(std::initializer_list<const FieldF*> parts, const Grid& grid) {
  int channels = 0;
  for (const FieldF* p : parts) channels += p->channels();
  FieldF out(channels, grid);
  float* dst = out.data();
  for (const FieldF* p : parts) dst = std::copy(p->data(), p->data() + p->size(), dst);
  return out;
}

FieldF assemble_input(const FieldF& ds, const FieldF& du, const FieldF& ws, const FieldF& wu, const BlockOutput& est,
                      const FieldF& mask, float tau, const FieldF* gt) {
  const Grid& g = ds.grid();
  const FieldF tau_plane = make_tau_plane(tau, g);
  if (gt) return concat({&ds, &du, &ws, &wu, &est.f_ts, &est.f_tu, &mask, &tau_plane, gt}, g);
  return concat({&ds, &du, &ws, &wu, &est.f_ts, &est.f_tu, &mask, &tau_plane}, g);
}

BlockOutput zero_output(int dims, const Grid& g) { return {FieldF(dims, g), FieldF(dims, g), FieldF(1, g)}; }

BlockOutput apply_head(const BlockOutput& prev, const FieldF& head, int dims) {
  BlockOutput next = prev;
  add_channels(next.f_ts, head, 0);
  add_channels(next.f_tu, head, dims);
  add_channels(next.mask_logit, head, 2 * dims);
  return next;
}

FieldF head_grad(const BlockOutput& g) { return concat({&g.f_ts, &g.f_tu, &g.mask_logit}, g.f_ts.grid()); }

void logit_grad(const FieldF& mask, const FieldF& grad_mask, FieldF& grad_logit) {
  for (std::size_t i = 0; i < mask.size(); ++i) grad_logit[i] += grad_mask[i] * mask[i] * (1.f - mask[i]);
}

// d_hat = fuse(warp(d_s, f_ts), warp(d_u, f_tu), mask) backpropagated into
// the flows and the logit.
void fusion_backward(const FieldF& ds, const FieldF& du, const BlockOutput& est, const FieldF& ws, const FieldF& wu,
                     const FieldF& mask, const FieldF& grad_out, BlockOutput& grad) {
  FieldF gws(1, ds.grid()), gwu(1, ds.grid()), gm(1, ds.grid());
  fuse_grad(ws, wu, mask, grad_out, &gws, &gwu, &gm);
  backward_warp_grad(ds, est.f_ts, gws, static_cast<FieldF*>(nullptr), &grad.f_ts);
  backward_warp_grad(du, est.f_tu, gwu, static_cast<FieldF*>(nullptr), &grad.f_tu);
  logit_grad(mask, gm, grad.mask_logit);
}

// Routes the gradient of a block input back to the estimate it was built from.
void input_backward(const FieldF& gx, const FieldF& ds, const FieldF& du, const BlockOutput& est, const FieldF& mask,
                    int dims, BlockOutput& grad) {
  backward_warp_grad(ds, est.f_ts, slice(gx, kInWarpS, 1), static_cast<FieldF*>(nullptr), &grad.f_ts);
  backward_warp_grad(du, est.f_tu, slice(gx, kInWarpU, 1), static_cast<FieldF*>(nullptr), &grad.f_tu);
  add_channels(grad.f_ts, gx, kInFlows);
  add_channels(grad.f_tu, gx, kInFlows + dims);
  logit_grad(mask, slice(gx, kInFlows + 2 * dims, 1), grad.mask_logit);
}

}  // namespace

// ---------------------------------------------------------------------------
// RefineBlock
// ---------------------------------------------------------------------------

RefineBlock::RefineBlock(nn::ParameterSet& params, const std::string& prefix, int in_channels, int width,
                         int head_channels, int dims, std::mt19937_64& rng) {
  struct Layer {
    int stride;
    bool transposed;
  };
  // Two stride-2 convs, three convs, a stride-2 conv, three convs, a deconv,
  // three convs, the skip sum, two deconvs, the head.
  static constexpr std::array<Layer, kLayers> plan{{{2, false}, {2, false}, {1, false}, {1, false}, {1, false},
                                                    {2, false}, {1, false}, {1, false}, {1, false}, {2, true},
                                                    {1, false}, {1, false}, {1, false}, {2, true}, {2, true},
                                                    {1, false}}};
  for (int l = 0; l < kLayers; ++l) {
    const std::string name = prefix + ".conv" + std::to_string(l);
    const int cin = l == 0 ? in_channels : width;
    const bool head = l == kLayers - 1;
    const int cout = head ? head_channels : width;
    convs_[l] = nn::Conv(params, name, cin, cout, plan[l].stride, plan[l].transposed, dims, head ? nullptr : &rng);
    if (!head) acts_[l] = nn::Prelu(params, prefix + ".act" + std::to_string(l), width);
  }
}

FieldF RefineBlock::forward(const nn::ParameterSet& params, const FieldF& x, Tape* tape) const {
  Tape local;
  Tape& t = tape ? *tape : local;
  t.input = x;
  auto layer = [&](int l, const FieldF& in, const Grid* out) -> const FieldF& {
    t.pre[l] = convs_[l].forward(params, in, out);
    t.act[l] = acts_[l].forward(params, t.pre[l]);
    return t.act[l];
  };
  const Grid g = x.grid();
  const Grid& g0 = layer(0, x, nullptr).grid();
  const Grid& g1 = layer(1, t.act[0], nullptr).grid();
  for (int l = 2; l <= 8; ++l) layer(l, t.act[l - 1], nullptr);
  layer(9, t.act[8], &g1);
  for (int l = 10; l <= 12; ++l) layer(l, t.act[l - 1], nullptr);
  t.skip_sum = t.act[12];
  add_into(t.skip_sum, t.act[1]);
  layer(13, t.skip_sum, &g0);
  layer(14, t.act[13], &g);
  return convs_[kLayers - 1].forward(params, t.act[14]);
}

FieldF RefineBlock::backward(nn::ParameterSet& params, const Tape& t, const FieldF& grad_head,
                             bool need_input_grad) const {
  std::array<FieldF, kLayers - 1> ga;
  ga[14] = convs_[kLayers - 1].backward(params, t.act[14], grad_head, true);
  for (int l = 14; l >= 0; --l) {
    const FieldF gz = acts_[l].backward(params, t.pre[l], ga[l]);
    const FieldF& in = l == 0 ? t.input : (l == 13 ? t.skip_sum : t.act[l - 1]);
    const bool want = l > 0 || need_input_grad;
    FieldF gin = convs_[l].backward(params, in, gz, want);
    if (l == 0) return gin;
    if (l == 13) add_into(ga[1], gin);
    add_into(ga[l - 1], gin);
    ga[l] = FieldF();
  }
  return {};
}

std::vector<std::size_t> RefineBlock::weight_indices() const {
  std::vector<std::size_t> out;
  for (const auto& c : convs_) out.push_back(c.weight_index());
  return out;
}

std::vector<std::size_t> RefineBlock::param_indices() const {
  std::vector<std::size_t> out;
  for (const auto& c : convs_) {
    out.push_back(c.weight_index());
    out.push_back(c.bias_index());
  }
  for (const auto& a : acts_) out.push_back(a.slope_index());
  return out;
}

// ---------------------------------------------------------------------------
// FlintModel
// ---------------------------------------------------------------------------

FlintModel::FlintModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int in = config_.block_input_channels();
  for (int i = 0; i < config_.num_blocks; ++i) {
    blocks_.emplace_back(params_, "block" + std::to_string(i), in, config_.block_channels[i],
                         config_.head_channels(), config_.dims, rng);
  }
  teacher_ = RefineBlock(params_, "teacher", in + 1, config_.teacher_channels, config_.head_channels(), config_.dims,
                         rng);
}

FlintModel build_model(const ModelConfig& config, std::uint64_t seed) { return FlintModel(config, seed); }

void FlintModel::check_grid(const Grid& grid) const {
  if (grid.dims != config_.dims) {
    throw ConfigError("model is " + std::to_string(config_.dims) + "D but the data grid is " + grid.to_string());
  }
  const bool bad = grid.height % 4 != 0 || grid.width % 4 != 0 || (grid.dims == 3 && grid.depth % 4 != 0);
  if (bad) throw ConfigError("spatial extents must be divisible by 4, got " + grid.to_string());
}

ForwardResult FlintModel::forward(const FieldF& d_s, const FieldF& d_u, double tau, const FieldF* d_t_gt,
                                  bool record) const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ContractError("tau must lie in [0,1]");
  require_same_grid(d_s.grid(), d_u.grid(), "forward");
  if (d_s.channels() != 1 || d_u.channels() != 1) throw ContractError("forward expects single-channel fields");
  if (d_t_gt) {
    require_same_grid(d_s.grid(), d_t_gt->grid(), "forward");
    if (d_t_gt->channels() != 1) throw ContractError("forward expects a single-channel target");
  }
  check_grid(d_s.grid());

  const Grid g = d_s.grid();
  const int dims = config_.dims;
  const int n = config_.num_blocks;
  const float t = static_cast<float>(tau);

  std::shared_ptr<ForwardTape> tape;
  if (record) {
    tape = std::make_shared<ForwardTape>();
    tape->d_s = d_s;
    tape->d_u = d_u;
    tape->blocks.resize(n);
  }

  ForwardResult res;
  BlockOutput est = zero_output(dims, g);
  for (int i = 0; i < n; ++i) {
    FieldF ws, wu, mask;
    if (i == 0) {
      ws = FieldF(1, g);
      wu = FieldF(1, g);
      mask = FieldF(1, g, 0.5f);
    } else {
      ws = backward_warp(d_s, est.f_ts);
      wu = backward_warp(d_u, est.f_tu);
      mask = sigmoid(est.mask_logit);
    }
    const FieldF x = assemble_input(d_s, d_u, ws, wu, est, mask, t, nullptr);
    const FieldF head = blocks_[i].forward(params_, x, tape ? &tape->blocks[i] : nullptr);
    est = apply_head(est, head, dims);
    res.blocks.push_back(est);
    res.warps.push_back({std::move(ws), std::move(wu)});
  }

  FieldF ws = backward_warp(d_s, est.f_ts);
  FieldF wu = backward_warp(d_u, est.f_tu);
  res.mask = sigmoid(est.mask_logit);
  res.d_hat = fuse(ws, wu, res.mask);
  res.f_hat = est.f_tu;

  if (d_t_gt) {
    const FieldF x = assemble_input(d_s, d_u, ws, wu, est, res.mask, t, d_t_gt);
    const FieldF head = teacher_.forward(params_, x, tape ? &tape->teacher : nullptr);
    TeacherOutput teach;
    teach.flows = apply_head(est, head, dims);
    teach.warp_s = backward_warp(d_s, teach.flows.f_ts);
    teach.warp_u = backward_warp(d_u, teach.flows.f_tu);
    teach.mask = sigmoid(teach.flows.mask_logit);
    teach.d_hat = fuse(teach.warp_s, teach.warp_u, teach.mask);
    teach.f_hat = teach.flows.f_tu;
    res.teacher = std::move(teach);
  }
  res.warps.push_back({std::move(ws), std::move(wu)});
  res.tape = std::move(tape);
  return res;
}

void FlintModel::backward(const ForwardResult& res, const OutputGrads& grads) {
  if (!res.tape) throw ContractError("backward needs a recorded forward pass");
  const ForwardTape& tape = *res.tape;
  const int n = config_.num_blocks;
  const int dims = config_.dims;
  const Grid g = tape.d_s.grid();
  const FieldF& ds = tape.d_s;
  const FieldF& du = tape.d_u;

  std::vector<BlockOutput> gs(n);
  for (int i = 0; i < n; ++i) {
    gs[i] = zero_output(dims, g);
    if (i < static_cast<int>(grads.blocks.size())) add_into(gs[i], grads.blocks[i]);
  }
  const BlockOutput& last = res.blocks[n - 1];
  const auto& final_warps = res.warps[n];

  const bool teacher_grad = !grads.d_hat_teach.empty() || !grads.teacher.f_ts.empty() ||
                            !grads.teacher.f_tu.empty() || !grads.teacher.mask_logit.empty();
  if (teacher_grad) {
    if (!res.teacher) throw ContractError("teacher gradients supplied without a teacher pass");
    const TeacherOutput& teach = *res.teacher;
    BlockOutput gt = zero_output(dims, g);
    add_into(gt, grads.teacher);
    if (!grads.d_hat_teach.empty()) {
      fusion_backward(ds, du, teach.flows, teach.warp_s, teach.warp_u, teach.mask, grads.d_hat_teach, gt);
    }
    add_into(gs[n - 1], gt);
    const FieldF gx = teacher_.backward(params_, tape.teacher, head_grad(gt), true);
    input_backward(gx, ds, du, last, res.mask, dims, gs[n - 1]);
  }

  if (!grads.d_hat.empty()) {
    fusion_backward(ds, du, last, final_warps[0], final_warps[1], res.mask, grads.d_hat, gs[n - 1]);
  }

  for (int i = n - 1; i >= 0; --i) {
    if (i > 0) add_into(gs[i - 1], gs[i]);
    const FieldF gx = blocks_[i].backward(params_, tape.blocks[i], head_grad(gs[i]), i > 0);
    if (i > 0) {
      const BlockOutput& prev = res.blocks[i - 1];
      input_backward(gx, ds, du, prev, sigmoid(prev.mask_logit), dims, gs[i - 1]);
    }
  }
}

std::vector<std::size_t> FlintModel::regularized_weights() const {
  std::vector<std::size_t> out = blocks_.back().weight_indices();
  const auto t = teacher_.weight_indices();
  out.insert(out.end(), t.begin(), t.end());
  return out;
}

std::vector<std::size_t> FlintModel::teacher_params() const { return teacher_.param_indices(); }

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"dims", c.dims},
          {"num_blocks", c.num_blocks},
          {"block_channels", c.block_channels},
          {"teacher_channels", c.teacher_channels},
          {"kernel_size", c.kernel_size},
          {"mode", to_string(c.mode)},
          {"lambda_rec", c.loss.lambda_rec},
          {"lambda_flow", c.loss.lambda_flow},
          {"lambda_dis", c.loss.lambda_dis},
          {"lambda_photo", c.loss.lambda_photo},
          {"lambda_reg", c.loss.lambda_reg},
          {"gamma", c.loss.gamma},
          {"smoothness", c.loss.smoothness},
          {"lambda_smooth", c.loss.lambda_smooth}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  try {
    if (j.contains("dims")) c.dims = j.at("dims").get<int>();
    if (j.contains("num_blocks")) c.num_blocks = j.at("num_blocks").get<int>();
    if (j.contains("block_channels")) c.block_channels = j.at("block_channels").get<std::vector<int>>();
    if (j.contains("teacher_channels")) c.teacher_channels = j.at("teacher_channels").get<int>();
    if (j.contains("kernel_size")) c.kernel_size = j.at("kernel_size").get<int>();
    if (j.contains("mode")) c.mode = training_mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("lambda_rec")) c.loss.lambda_rec = j.at("lambda_rec").get<double>();
    if (j.contains("lambda_flow")) c.loss.lambda_flow = j.at("lambda_flow").get<double>();
    if (j.contains("lambda_dis")) c.loss.lambda_dis = j.at("lambda_dis").get<double>();
    if (j.contains("lambda_photo")) c.loss.lambda_photo = j.at("lambda_photo").get<double>();
    if (j.contains("lambda_reg")) c.loss.lambda_reg = j.at("lambda_reg").get<double>();
    if (j.contains("gamma")) c.loss.gamma = j.at("gamma").get<double>();
    if (j.contains("smoothness")) c.loss.smoothness = j.at("smoothness").get<bool>();
    if (j.contains("lambda_smooth")) c.loss.lambda_smooth = j.at("lambda_smooth").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid model configuration: ") + e.what());
  }
  return c;
}

void save_checkpoint(const FlintModel& model, const CheckpointState& state, const fs::path& path) {
  nlohmann::json m = model_config_to_json(model.config());
  m["format"] = kCheckpointFormat;
  m["tau_convention"] = "normalized";
  m["epoch"] = state.epoch;
  m["best_val"] = state.best_val;
  if (state.density_range) m["normalization"] = {{"density", {state.density_range->first, state.density_range->second}}};
  m["extra"] = state.extra;
  nlohmann::json plist = nlohmann::json::array();
  std::vector<float> payload;
  for (const auto& p : model.params().all()) {
    plist.push_back({{"name", p.name}, {"shape", p.shape}});
    payload.insert(payload.end(), p.value.begin(), p.value.end());
  }
  m["parameters"] = plist;

  const fs::path tmp = path.string() + ".tmp";
  const fs::path old = path.string() + ".old";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp, ec);
  if (ec) throw IoError("cannot create " + tmp.string() + ": " + ec.message());
  write_raw_f32(tmp / "params.bin", payload.data(), payload.size());
  write_text_atomic(tmp / "manifest.json", m.dump(2));
  fs::remove_all(old, ec);
  if (fs::exists(path)) {
    fs::rename(path, old, ec);
    if (ec) throw IoError("cannot replace " + path.string() + ": " + ec.message());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into " + path.string() + ": " + ec.message());
  fs::remove_all(old, ec);
}

Checkpoint load_checkpoint(const fs::path& requested) {
  fs::path path = requested;
  // A crash between the two renames of save_checkpoint leaves only ".old".
  if (!fs::exists(path / "manifest.json") && fs::exists(fs::path(path.string() + ".old") / "manifest.json")) {
    path = path.string() + ".old";
  }
  const fs::path mpath = path / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw LoadError(LoadError::Kind::kMissingFile, "no checkpoint manifest at " + mpath.string());
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadError::Kind::kInvalidManifest, "unreadable checkpoint manifest: " + std::string(e.what()));
  }
  if (m.value("format", "") != kCheckpointFormat) {
    throw LoadError(LoadError::Kind::kVersionMismatch, "unsupported checkpoint format '" + m.value("format", "") + "'");
  }
  ModelConfig config;
  try {
    config = model_config_from_json(m);
    config.validate();
  } catch (const ConfigError& e) {
    throw LoadError(LoadError::Kind::kInvalidManifest, e.what());
  }

  Checkpoint ck{FlintModel(config, 0), {}};
  ck.state.epoch = m.value("epoch", 0);
  ck.state.best_val = m.value("best_val", 0.0);
  if (m.contains("normalization") && m["normalization"].contains("density")) {
    const auto r = m["normalization"]["density"];
    ck.state.density_range = std::make_pair(r.at(0).get<double>(), r.at(1).get<double>());
  }
  ck.state.extra = m.value("extra", nlohmann::json::object());

  auto& params = ck.model.params().all();
  const auto& plist = m.at("parameters");
  if (plist.size() != params.size()) {
    throw LoadError(LoadError::Kind::kShapeMismatch, "checkpoint lists " + std::to_string(plist.size()) +
                                                         " parameters, architecture has " +
                                                         std::to_string(params.size()));
  }
  if (!fs::exists(path / "params.bin")) {
    throw LoadError(LoadError::Kind::kMissingFile, "missing " + (path / "params.bin").string());
  }
  const std::vector<float> payload = read_raw_f32(path / "params.bin");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (plist[i].at("name").get<std::string>() != p.name || plist[i].at("shape").get<std::vector<int>>() != p.shape) {
      throw LoadError(LoadError::Kind::kShapeMismatch, "parameter " + std::to_string(i) + " ('" + p.name +
                                                           "') does not match the checkpoint");
    }
    if (offset + p.size() > payload.size()) {
      throw LoadError(LoadError::Kind::kShapeMismatch, "params.bin is shorter than the declared parameters");
    }
    std::copy_n(payload.begin() + offset, p.size(), p.value.begin());
    offset += p.size();
  }
  if (offset != payload.size()) {
    throw LoadError(LoadError::Kind::kShapeMismatch, "params.bin is longer than the declared parameters");
  }
  return ck;
}

}  // namespace flint
