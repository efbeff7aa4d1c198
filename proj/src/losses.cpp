#include "flint/losses.hpp"

#include <sstream>

namespace flint {

double loss_reg(nn::ParameterSet& params, const std::vector<std::size_t>& weights, double scale,
                bool accumulate_grad) {
  double total = 0.0;
  for (std::size_t idx : weights) {
    auto& p = params[idx];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float w = p.value[i];
      total += std::abs(static_cast<double>(w));
      if (accumulate_grad) p.grad[i] += static_cast<float>(scale) * detail::sign(w);
    }
  }
  return total;
}

double loss_reg(const nn::ParameterSet& params, const std::vector<std::size_t>& weights) {
  double total = 0.0;
  for (std::size_t idx : weights) {
    for (float w : params[idx].value) total += std::abs(static_cast<double>(w));
  }
  return total;
}

std::vector<std::string> active_components(TrainingMode mode, const LossWeights& w) {
  std::vector<std::string> out;
  if (w.lambda_rec != 0.0) out.push_back("rec");
  if (mode == TrainingMode::kFlowSupervised) {
    if (w.lambda_flow != 0.0) out.push_back("flow");
  } else {
    if (w.lambda_dis != 0.0) out.push_back("dis");
    if (w.lambda_photo != 0.0) out.push_back("photo");
    if (w.lambda_reg != 0.0) out.push_back("reg");
  }
  if (w.smoothness && w.lambda_smooth != 0.0) out.push_back("smooth");
  return out;
}

namespace {

double weighted(const std::optional<double>& value, double lambda, const char* name) {
  if (lambda == 0.0) return 0.0;
  if (!value) throw ContractError(std::string("loss component '") + name + "' is required by the active weights");
  return lambda * *value;
}

}  // namespace

double sample_objective(TrainingMode mode, const LossComponents& p, const LossWeights& w) {
  double total = weighted(p.rec, w.lambda_rec, "rec");
  if (mode == TrainingMode::kFlowSupervised) {
    total += weighted(p.flow, w.lambda_flow, "flow");
  } else {
    total += weighted(p.dis, w.lambda_dis, "dis");
    total += weighted(p.photo, w.lambda_photo, "photo");
  }
  if (w.smoothness) total += weighted(p.smooth, w.lambda_smooth, "smooth");
  return total;
}

double loss_total(TrainingMode mode, const LossComponents& p, const LossWeights& w) {
  double total = sample_objective(mode, p, w);
  if (mode == TrainingMode::kFlowUnsupervised) total += weighted(p.reg, w.lambda_reg, "reg");
  return total;
}

LossComponents evaluate_losses(const ForwardResult& res, const SampleTargets& tg, TrainingMode mode,
                               const LossWeights& w, double scale, OutputGrads* grads) {
  if (!res.teacher) throw ContractError("losses need a forward pass with the teacher");
  if (!tg.d_s || !tg.d_u || !tg.d_t) throw ContractError("losses need d_s, d_u and the target frame");
  const TeacherOutput& teach = *res.teacher;
  const int n = static_cast<int>(res.blocks.size());
  const BlockOutput& last = res.blocks.back();
  const Grid& g = res.d_hat.grid();
  const int dims = last.f_ts.channels();

  if (grads) {
    auto ensure = [&](FieldF& f, int ch) {
      if (f.empty()) f = FieldF(ch, g);
    };
    grads->blocks.resize(n);
    for (auto& b : grads->blocks) {
      ensure(b.f_ts, dims);
      ensure(b.f_tu, dims);
      ensure(b.mask_logit, 1);
    }
    ensure(grads->d_hat, 1);
    ensure(grads->d_hat_teach, 1);
    ensure(grads->teacher.f_ts, dims);
    ensure(grads->teacher.f_tu, dims);
    ensure(grads->teacher.mask_logit, 1);
  }

  LossComponents parts;
  if (w.lambda_rec != 0.0) {
    parts.rec = loss_rec(res.d_hat, teach.d_hat, *tg.d_t, scale * w.lambda_rec, grads ? &grads->d_hat : nullptr,
                         grads ? &grads->d_hat_teach : nullptr);
  }
  if (mode == TrainingMode::kFlowSupervised) {
    if (w.lambda_flow != 0.0) {
      if (!tg.f_t) throw ConfigError("the flow loss needs ground-truth flow");
      std::vector<const FieldF*> flows;
      std::vector<FieldF*> gflows;
      for (int b = 0; b < n; ++b) {
        flows.push_back(&res.blocks[b].f_tu);
        if (grads) gflows.push_back(&grads->blocks[b].f_tu);
      }
      parts.flow = loss_flow(flows, teach.f_hat, *tg.f_t, w.gamma, scale * w.lambda_flow, grads ? &gflows : nullptr,
                             grads ? &grads->teacher.f_tu : nullptr);
    }
  } else {
    if (w.lambda_dis != 0.0) {
      parts.dis = loss_dis(last.f_ts, last.f_tu, teach.flows.f_ts, teach.flows.f_tu, scale * w.lambda_dis,
                           grads ? &grads->blocks[n - 1].f_ts : nullptr, grads ? &grads->blocks[n - 1].f_tu : nullptr);
    }
    if (w.lambda_photo != 0.0) {
      parts.photo = loss_photo(last.f_ts, last.f_tu, *tg.d_s, *tg.d_u, res.d_hat, kCharbonnierEps,
                               scale * w.lambda_photo, grads ? &grads->blocks[n - 1].f_ts : nullptr,
                               grads ? &grads->blocks[n - 1].f_tu : nullptr, grads ? &grads->d_hat : nullptr);
    }
  }
  if (w.smoothness && w.lambda_smooth != 0.0) {
    const double s = scale * w.lambda_smooth;
    parts.smooth = loss_smooth(last.f_ts, s, grads ? &grads->blocks[n - 1].f_ts : nullptr) +
                   loss_smooth(last.f_tu, s, grads ? &grads->blocks[n - 1].f_tu : nullptr);
  }
  return parts;
}

std::string describe(const LossComponents& p) {
  std::ostringstream os;
  auto put = [&](const char* name, const std::optional<double>& v) {
    if (v) os << (os.tellp() > 0 ? " " : "") << name << "=" << *v;
  };
  put("rec", p.rec);
  put("flow", p.flow);
  put("dis", p.dis);
  put("photo", p.photo);
  put("reg", p.reg);
  put("smooth", p.smooth);
  return os.str();
}

}  // namespace flint
