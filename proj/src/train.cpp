#include "flint/train.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "flint/kernels/kernels.hpp"
#include "flint/losses.hpp"

namespace flint {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TrainConfig TrainConfig::defaults_for(int dims) {
  TrainConfig c;
  if (dims == 3) {
    c.batch_size = 2;
    c.lr = 1e-4;
    c.lr_min = 1e-6;
  }
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (window < 2) throw ConfigError("window must be at least 2");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (samples_per_epoch < 1 || val_samples < 1) throw ConfigError("sample counts must be positive");
  // lr == 0 freezes the model; otherwise 0 < lr_min <= lr.
  if (lr < 0.0 || lr_min < 0.0 || lr_min > lr || (lr > 0.0 && lr_min == 0.0)) {
    throw ConfigError("learning rates must satisfy 0 < lr_min <= lr");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json split_json = {{"val_fraction", split.val_fraction}, {"test_fraction", split.test_fraction}};
  if (!split.train.empty() || !split.val.empty() || !split.test.empty()) {
    split_json["train"] = split.train;
    split_json["val"] = split.val;
    split_json["test"] = split.test;
  }
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"lr_min", lr_min},
          {"window", window},
          {"patience", patience},
          {"seed", seed},
          {"split", split_json},
          {"samples_per_epoch", samples_per_epoch},
          {"val_samples", val_samples},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"weight_decay", weight_decay},
          {"clip_norm", clip_norm}};
}

void TrainConfig::update_from_json(const nlohmann::json& j) {
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("epochs", epochs);
    get("batch_size", batch_size);
    get("lr", lr);
    get("lr_min", lr_min);
    get("window", window);
    get("patience", patience);
    get("seed", seed);
    get("samples_per_epoch", samples_per_epoch);
    get("val_samples", val_samples);
    get("beta1", beta1);
    get("beta2", beta2);
    get("adam_eps", adam_eps);
    get("weight_decay", weight_decay);
    get("clip_norm", clip_norm);
    if (j.contains("split")) {
      const auto& s = j.at("split");
      if (s.contains("train")) split.train = s.at("train").get<std::vector<std::string>>();
      if (s.contains("val")) split.val = s.at("val").get<std::vector<std::string>>();
      if (s.contains("test")) split.test = s.at("test").get<std::vector<std::string>>();
      if (s.contains("val_fraction")) split.val_fraction = s.at("val_fraction").get<double>();
      if (s.contains("test_fraction")) split.test_fraction = s.at("test_fraction").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid training configuration: ") + e.what());
  }
}

void apply_config_json(const nlohmann::json& j, TrainConfig& train, ModelConfig& model) {
  train.update_from_json(j);
  model = model_config_from_json(j, model);
}

ResolvedSplit resolve_split(const Manifest& manifest, const SplitSpec& spec) {
  ResolvedSplit out;
  auto known = [&](const std::vector<std::string>& ids) {
    for (const auto& id : ids) manifest.member(id);  // throws on unknown ids
    return ids;
  };
  if (!spec.train.empty() || !spec.val.empty() || !spec.test.empty()) {
    out.train = known(spec.train);
    out.val = known(spec.val);
    out.test = known(spec.test);
  } else {
    const int n = static_cast<int>(manifest.members.size());
    const int n_test = n >= 3 ? std::max(1, static_cast<int>(std::lround(n * spec.test_fraction))) : 0;
    const int n_val = n >= 2 ? std::max(1, static_cast<int>(std::lround(n * spec.val_fraction))) : 0;
    const int n_train = n - n_val - n_test;
    for (int i = 0; i < n; ++i) {
      const std::string& id = manifest.members[i].id;
      if (i < n_train) {
        out.train.push_back(id);
      } else if (i < n_train + n_val) {
        out.val.push_back(id);
      } else {
        out.test.push_back(id);
      }
    }
  }
  if (out.train.empty()) throw ConfigError("the training split is empty");
  if (out.val.empty()) throw ConfigError("the validation split is empty; provide at least two members");
  for (const auto& v : out.val) {
    if (std::find(out.train.begin(), out.train.end(), v) != out.train.end()) {
      throw ConfigError("member '" + v + "' is in both the training and validation splits");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling and schedule
// ---------------------------------------------------------------------------

std::uint64_t count_pairs(int frames, int window) {
  std::uint64_t n = 0;
  for (int g = 2; g <= std::min(window, frames - 1); ++g) n += static_cast<std::uint64_t>(frames - g);
  return n;
}

std::vector<TripletIndex> sample_triplet_indices(const Manifest& manifest, const std::vector<std::string>& members,
                                                 int window, int count, std::uint64_t seed) {
  if (window < 2) throw ConfigError("window must be at least 2");
  std::vector<const MemberInfo*> usable;
  for (const auto& id : members) {
    const MemberInfo& m = manifest.member(id);
    if (m.timesteps - m.first < 3) {
      spdlog::warn("member '{}' has fewer than three frames; skipped", id);
      continue;
    }
    usable.push_back(&m);
  }
  if (usable.empty()) throw ConfigError("no member with at least three frames in the selected split");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_member(0, usable.size() - 1);
  std::vector<TripletIndex> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const MemberInfo& m = *usable[pick_member(rng)];
    const int frames = m.timesteps - m.first;
    std::uniform_int_distribution<std::uint64_t> pick_pair(0, count_pairs(frames, window) - 1);
    std::uint64_t k = pick_pair(rng);
    int gap = 2;
    while (k >= static_cast<std::uint64_t>(frames - gap)) {
      k -= static_cast<std::uint64_t>(frames - gap);
      ++gap;
    }
    const int s = m.first + static_cast<int>(k);
    const int u = s + gap;
    std::uniform_int_distribution<int> pick_t(s + 1, u - 1);
    out.push_back({m.id, s, pick_t(rng), u});
  }
  return out;
}

double lr_schedule(int epoch, int total_epochs, double lr_max, double lr_min) {
  if (total_epochs <= 0) return lr_max;
  const double x = std::clamp(static_cast<double>(epoch) / total_epochs, 0.0, 1.0);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * x));
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

FrameCache::FrameCache(const EnsembleArchive& archive, std::pair<double, double> density_range)
    : archive_(archive), range_(density_range) {}

const FieldF& FrameCache::density(const std::string& member, int t) {
  const auto key = std::make_pair(member, t);
  auto it = density_.find(key);
  if (it == density_.end()) {
    it = density_.emplace(key, normalize_field(archive_.read(member, "density", t), range_.first, range_.second)).first;
  }
  return it->second;
}

const FieldF* FrameCache::flow(const std::string& member, int t) {
  const auto key = std::make_pair(member, t);
  auto it = flow_.find(key);
  if (it == flow_.end()) {
    std::optional<FieldF> f;
    if (archive_.has(member, "flow", t)) f = archive_.read(member, "flow", t);
    it = flow_.emplace(key, std::move(f)).first;
  }
  return it->second ? &*it->second : nullptr;
}

SampleTriplet load_triplet(FrameCache& cache, const TripletIndex& idx, bool with_flow) {
  SampleTriplet s;
  s.member_id = idx.member_id;
  s.s = idx.s;
  s.t = idx.t;
  s.u = idx.u;
  s.tau = idx.tau();
  s.d_s = cache.density(idx.member_id, idx.s);
  s.d_u = cache.density(idx.member_id, idx.u);
  s.d_t_gt = cache.density(idx.member_id, idx.t);
  if (with_flow) {
    if (const FieldF* f = cache.flow(idx.member_id, idx.t)) s.f_t_gt = *f;
  }
  return s;
}

std::pair<double, double> density_range(const EnsembleArchive& archive, const std::vector<std::string>& members) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& id : members) {
    const MemberInfo& m = archive.manifest().member(id);
    for (int t = m.first; t < m.timesteps; ++t) {
      if (!m.has("density", t)) continue;
      const FieldF frame = archive.read(id, "density", t);
      for (float v : frame.values()) {
        lo = std::min(lo, static_cast<double>(v));
        hi = std::max(hi, static_cast<double>(v));
      }
    }
  }
  if (!(lo < hi)) {
    if (!std::isfinite(lo)) throw DataError("no density frames in the training split");
    hi = lo + 1.0;
  }
  return {lo, hi};
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

AdamW::AdamW(const nn::ParameterSet& params, double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (const auto& p : params.all()) {
    m_.emplace_back(p.size(), 0.f);
    v_.emplace_back(p.size(), 0.f);
  }
}

void AdamW::step(nn::ParameterSet& params, double lr) {
  ++t_;
  kernels::AdamWStep st;
  st.lr = static_cast<float>(lr);
  st.beta1 = static_cast<float>(beta1_);
  st.beta2 = static_cast<float>(beta2_);
  st.eps = static_cast<float>(eps_);
  st.weight_decay = static_cast<float>(weight_decay_);
  st.bias_correction1 = static_cast<float>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
  st.bias_correction2 = static_cast<float>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
  const auto& k = kernels::active();
  auto& all = params.all();
  for (std::size_t i = 0; i < all.size(); ++i) {
    k.adamw(all[i].value.data(), all[i].grad.data(), m_[i].data(), v_[i].data(), all[i].size(), st);
  }
}

double clip_grad_norm(nn::ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params.all()) {
    for (float g : p.grad) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float scale = static_cast<float>(max_norm / norm);
    for (auto& p : params.all()) {
      for (float& g : p.grad) g *= scale;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

constexpr std::uint64_t kValidationStream = 0xffffffffULL;

void add_components(std::map<std::string, double>& acc, const LossComponents& p, double w) {
  auto put = [&](const char* name, const std::optional<double>& v) {
    if (v) acc[name] += w * *v;
  };
  put("rec", p.rec);
  put("flow", p.flow);
  put("dis", p.dis);
  put("photo", p.photo);
  put("reg", p.reg);
  put("smooth", p.smooth);
}

bool all_finite(const LossComponents& p) {
  for (const auto* v : {&p.rec, &p.flow, &p.dis, &p.photo, &p.reg, &p.smooth}) {
    if (*v && !std::isfinite(**v)) return false;
  }
  return true;
}

}  // namespace

std::pair<double, std::map<std::string, double>> evaluate_loss(const FlintModel& model, FrameCache& cache,
                                                               const std::vector<TripletIndex>& triplets) {
  const ModelConfig& mc = model.config();
  const bool supervised = mc.mode == TrainingMode::kFlowSupervised;
  std::map<std::string, double> comps;
  double total = 0.0;
  const double w = 1.0 / static_cast<double>(triplets.size());
  for (const auto& idx : triplets) {
    const SampleTriplet s = load_triplet(cache, idx, supervised);
    const ForwardResult r = model.forward(s.d_s, s.d_u, s.tau, &s.d_t_gt);
    const SampleTargets tg{&s.d_s, &s.d_u, &s.d_t_gt, s.f_t_gt ? &*s.f_t_gt : nullptr};
    const LossComponents parts = evaluate_losses(r, tg, mc.mode, mc.loss);
    total += w * sample_objective(mc.mode, parts, mc.loss);
    add_components(comps, parts, w);
  }
  if (mc.mode == TrainingMode::kFlowUnsupervised && mc.loss.lambda_reg != 0.0) {
    const double reg = loss_reg(model.params(), model.regularized_weights());
    comps["reg"] = reg;
    total += mc.loss.lambda_reg * reg;
  }
  return {total, comps};
}

TrainResult train_loop(FlintModel& model, const EnsembleArchive& archive, const TrainConfig& config,
                       const fs::path& out_dir, const TrainHooks& hooks) {
  config.validate();
  const ModelConfig& mc = model.config();
  const Manifest& manifest = archive.manifest();
  if (manifest.dims != mc.dims) {
    throw ConfigError("model is " + std::to_string(mc.dims) + "D but the archive is " +
                      std::to_string(manifest.dims) + "D");
  }
  model.check_grid(archive.grid());
  const bool supervised = mc.mode == TrainingMode::kFlowSupervised;
  if (supervised && mc.loss.lambda_flow != 0.0 && !manifest.has_field("flow")) {
    throw ConfigError("flow-supervised training needs a 'flow' field in the archive");
  }

  const ResolvedSplit split = resolve_split(manifest, config.split);
  const auto range = density_range(archive, split.train);
  FrameCache cache(archive, range);
  const auto val_triplets =
      sample_triplet_indices(manifest, split.val, config.window, config.val_samples, mix_seed(config.seed, kValidationStream));

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  TrainResult result;
  result.checkpoint = out_dir / "checkpoint";
  result.best_val = std::numeric_limits<double>::infinity();
  AdamW opt(model.params(), config.beta1, config.beta2, config.adam_eps, config.weight_decay);
  const auto reg_weights = model.regularized_weights();
  const bool use_reg = !supervised && mc.loss.lambda_reg != 0.0;
  std::vector<std::vector<float>> best_values;
  int since_best = 0;

  spdlog::info("training {} on {} train / {} val members, {} parameters", to_string(mc.mode), split.train.size(),
               split.val.size(), model.params().scalar_count());

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_schedule(epoch, config.epochs, config.lr, config.lr_min);
    const auto triplets = sample_triplet_indices(manifest, split.train, config.window, config.samples_per_epoch,
                                                 mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < triplets.size(); b0 += config.batch_size) {
      const std::size_t b1 = std::min(triplets.size(), b0 + config.batch_size);
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      model.params().zero_grad();
      double batch_loss = 0.0;
      LossComponents last_parts;
      for (std::size_t i = b0; i < b1; ++i) {
        const SampleTriplet s = load_triplet(cache, triplets[i], supervised);
        const ForwardResult r = model.forward(s.d_s, s.d_u, s.tau, &s.d_t_gt, true);
        const SampleTargets tg{&s.d_s, &s.d_u, &s.d_t_gt, s.f_t_gt ? &*s.f_t_gt : nullptr};
        OutputGrads grads;
        const LossComponents parts = evaluate_losses(r, tg, mc.mode, mc.loss, scale, &grads);
        const double obj = sample_objective(mc.mode, parts, mc.loss);
        if (!std::isfinite(obj) || !all_finite(parts)) {
          throw TrainingDivergedError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batches) + ": " + describe(parts));
        }
        batch_loss += scale * obj;
        add_components(rec.train_components, parts, 1.0 / static_cast<double>(triplets.size()));
        model.backward(r, grads);
        last_parts = parts;
      }
      if (use_reg) {
        const double reg = loss_reg(model.params(), reg_weights, mc.loss.lambda_reg, true);
        batch_loss += mc.loss.lambda_reg * reg;
      }
      const double norm = clip_grad_norm(model.params(), config.clip_norm);
      if (!std::isfinite(norm)) {
        throw TrainingDivergedError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batches) + ": " + describe(last_parts));
      }
      opt.step(model.params(), rec.lr);
      epoch_loss += batch_loss;
      ++batches;
    }
    rec.train_loss = epoch_loss / std::max(1, batches);
    auto [val, val_parts] = evaluate_loss(model, cache, val_triplets);
    if (!std::isfinite(val)) {
      throw TrainingDivergedError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    rec.val_loss = val;
    rec.val_components = std::move(val_parts);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(rec);
    spdlog::info("epoch {:3d} lr {:.3e} train {:.6f} val {:.6f} ({:.1f}s)", epoch, rec.lr, rec.train_loss, val,
                 rec.seconds);

    if (val < result.best_val) {
      result.best_val = val;
      result.best_epoch = epoch;
      since_best = 0;
      best_values.clear();
      for (const auto& p : model.params().all()) best_values.push_back(p.value);
      CheckpointState st;
      st.epoch = epoch;
      st.best_val = val;
      st.density_range = range;
      st.extra = {{"train_members", split.train}, {"val_members", split.val}, {"test_members", split.test}};
      save_checkpoint(model, st, result.checkpoint);
    } else if (++since_best >= config.patience) {
      result.stopped_early = epoch + 1 < config.epochs;
      if (result.stopped_early) spdlog::info("no improvement for {} epochs; stopping", config.patience);
      write_text_atomic(out_dir / "history.json", history_to_json(result, config, mc).dump(2));
      break;
    }
    write_text_atomic(out_dir / "history.json", history_to_json(result, config, mc).dump(2));
    if (hooks.on_epoch && !hooks.on_epoch(rec)) break;
  }

  auto& all = model.params().all();
  for (std::size_t i = 0; i < best_values.size(); ++i) all[i].value = best_values[i];
  return result;
}

nlohmann::json history_to_json(const TrainResult& r, const TrainConfig& config, const ModelConfig& model) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.history) {
    epochs.push_back({{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"train_components", e.train_components},
                      {"val_components", e.val_components},
                      {"seconds", e.seconds}});
  }
  return {{"config", config.to_json()},
          {"model", model_config_to_json(model)},
          {"epochs", epochs},
          {"best_epoch", r.best_epoch},
          {"best_val", r.best_val},
          {"stopped_early", r.stopped_early}};
}

}  // namespace flint
