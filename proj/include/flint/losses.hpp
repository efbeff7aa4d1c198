#pragma once

// Loss components and the two mode-specific totals. Field norms are
// per-element means. Every component optionally accumulates its gradient
// (scaled by `scale`) into caller-provided fields; null pointers skip that
// input. The templates run in float for training and in double for
// finite-difference checks.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "flint/model.hpp"
#include "flint/tensor.hpp"
#include "flint/types.hpp"
#include "flint/warp.hpp"

namespace flint {

inline constexpr double kCharbonnierEps = 1e-9;

namespace detail {

template <typename T>
void require_same_shape(const Field<T>& a, const Field<T>& b, const char* what) {
  require_same_grid(a.grid(), b.grid(), what);
  if (a.channels() != b.channels()) throw ContractError(std::string(what) + ": channel counts differ");
}

template <typename T>
T sign(T x) {
  return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
}

// mean |target - x|; gradient w.r.t. x.
template <typename T>
double mean_abs(const Field<T>& x, const Field<T>& target, double scale, Field<T>* grad) {
  double acc = 0.0;
  const double inv = 1.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T d = x[i] - target[i];
    acc += std::abs(static_cast<double>(d));
    if (grad) (*grad)[i] += static_cast<T>(scale * inv) * sign(d);
  }
  return acc * inv;
}

// mean over cells of the Euclidean norm of the channel vector (x - target).
template <typename T>
double mean_norm(const Field<T>& x, const Field<T>& target, double scale, Field<T>* grad) {
  const std::size_t cells = x.grid().cells();
  const int ch = x.channels();
  const double inv = 1.0 / static_cast<double>(cells);
  double acc = 0.0;
  for (std::size_t p = 0; p < cells; ++p) {
    double sq = 0.0;
    for (int c = 0; c < ch; ++c) {
      const double d = static_cast<double>(x[c * cells + p]) - static_cast<double>(target[c * cells + p]);
      sq += d * d;
    }
    const double n = std::sqrt(sq);
    acc += n;
    if (grad && n > 0.0) {
      for (int c = 0; c < ch; ++c) {
        const double d = static_cast<double>(x[c * cells + p]) - static_cast<double>(target[c * cells + p]);
        (*grad)[c * cells + p] += static_cast<T>(scale * inv * d / n);
      }
    }
  }
  return acc * inv;
}

}  // namespace detail

// mean|gt - d_hat| + mean|gt - d_hat_teach|.
template <typename T>
double loss_rec(const Field<T>& d_hat, const Field<T>& d_hat_teach, const Field<T>& d_gt, double scale = 1.0,
                Field<T>* grad_hat = nullptr, Field<T>* grad_teach = nullptr) {
  detail::require_same_shape(d_hat, d_gt, "loss_rec");
  detail::require_same_shape(d_hat_teach, d_gt, "loss_rec");
  return detail::mean_abs(d_hat, d_gt, scale, grad_hat) + detail::mean_abs(d_hat_teach, d_gt, scale, grad_teach);
}

// Sum over blocks b = 0..N-1 of gamma^(N-1-b) mean|f_gt - F_b| plus the
// teacher term mean|f_gt - f_teach|.
template <typename T>
double loss_flow(const std::vector<const Field<T>*>& block_flows, const Field<T>& f_teach, const Field<T>& f_gt,
                 double gamma, double scale = 1.0, std::vector<Field<T>*>* grad_blocks = nullptr,
                 Field<T>* grad_teach = nullptr) {
  if (block_flows.empty()) throw ContractError("loss_flow: no block flows");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ContractError("loss_flow: gamma must lie in (0,1]");
  if (grad_blocks && grad_blocks->size() != block_flows.size()) {
    throw ContractError("loss_flow: gradient list does not match the block list");
  }
  const int n = static_cast<int>(block_flows.size());
  double total = 0.0;
  for (int b = 0; b < n; ++b) {
    if (!block_flows[b]) throw ContractError("loss_flow: missing block output");
    detail::require_same_shape(*block_flows[b], f_gt, "loss_flow");
    const double w = std::pow(gamma, n - 1 - b);
    total += w * detail::mean_abs(*block_flows[b], f_gt, scale * w, grad_blocks ? (*grad_blocks)[b] : nullptr);
  }
  detail::require_same_shape(f_teach, f_gt, "loss_flow");
  return total + detail::mean_abs(f_teach, f_gt, scale, grad_teach);
}

// Sum over both directions of the mean per-cell L2 distance between the last
// student block and the teacher. The teacher flows are targets and receive
// no gradient.
template <typename T>
double loss_dis(const Field<T>& student_ts, const Field<T>& student_tu, const Field<T>& teach_ts,
                const Field<T>& teach_tu, double scale = 1.0, Field<T>* grad_ts = nullptr,
                Field<T>* grad_tu = nullptr) {
  detail::require_same_shape(student_ts, teach_ts, "loss_dis");
  detail::require_same_shape(student_tu, teach_tu, "loss_dis");
  return detail::mean_norm(student_ts, teach_ts, scale, grad_ts) +
         detail::mean_norm(student_tu, teach_tu, scale, grad_tu);
}

// Charbonnier photometric consistency: each key frame is reconstructed from
// the interpolant by sampling it along the reversed intermediate flow,
//   1/2 sum_j mean_p rho(d_j(p) - d_hat(p - F_{t->j}(p))).
template <typename T>
double loss_photo(const Field<T>& flow_ts, const Field<T>& flow_tu, const Field<T>& d_s, const Field<T>& d_u,
                  const Field<T>& d_hat, double eps = kCharbonnierEps, double scale = 1.0,
                  Field<T>* grad_ts = nullptr, Field<T>* grad_tu = nullptr, Field<T>* grad_hat = nullptr) {
  detail::require_same_shape(d_s, d_hat, "loss_photo");
  detail::require_same_shape(d_u, d_hat, "loss_photo");
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(d_hat.size());
  auto term = [&](const Field<T>& flow, const Field<T>& key, Field<T>* grad_flow) {
    Field<T> v(flow.channels(), flow.grid());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = -flow[i];
    const Field<T> rec = backward_warp(d_hat, v);
    Field<T> g(1, d_hat.grid());
    double acc = 0.0;
    for (std::size_t i = 0; i < rec.size(); ++i) {
      const double r = static_cast<double>(key[i]) - static_cast<double>(rec[i]);
      const double rho = std::sqrt(r * r + eps * eps);
      acc += rho;
      g[i] = static_cast<T>(-0.5 * scale * inv * r / rho);
    }
    if (grad_flow || grad_hat) {
      Field<T> gv(flow.channels(), flow.grid());
      backward_warp_grad(d_hat, v, g, grad_hat, grad_flow ? &gv : nullptr);
      if (grad_flow) {
        for (std::size_t i = 0; i < gv.size(); ++i) (*grad_flow)[i] -= gv[i];
      }
    }
    return 0.5 * acc * inv;
  };
  total += term(flow_ts, d_s, grad_ts);
  total += term(flow_tu, d_u, grad_tu);
  return total;
}

// First-difference L1 smoothness, mean over cells and channels per axis.
template <typename T>
double loss_smooth(const Field<T>& flow, double scale = 1.0, Field<T>* grad = nullptr) {
  const Grid& g = flow.grid();
  const int axes = g.dims;
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
  const std::size_t strides[3] = {plane, static_cast<std::size_t>(g.width), 1};
  const int extents[3] = {g.depth, g.height, g.width};
  const double inv = 1.0 / static_cast<double>(flow.size());
  double total = 0.0;
  for (int a = 3 - axes; a < 3; ++a) {
    if (extents[a] < 2) continue;
    for (int c = 0; c < flow.channels(); ++c) {
      const std::size_t base = c * g.cells();
      for (int z = 0; z < g.depth; ++z) {
        for (int y = 0; y < g.height; ++y) {
          for (int x = 0; x < g.width; ++x) {
            const int coord[3] = {z, y, x};
            if (coord[a] + 1 >= extents[a]) continue;
            const std::size_t p = base + z * plane + static_cast<std::size_t>(y) * g.width + x;
            const double d = static_cast<double>(flow[p + strides[a]]) - static_cast<double>(flow[p]);
            total += std::abs(d);
            if (grad) {
              const T s = static_cast<T>(scale * inv * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)));
              (*grad)[p + strides[a]] += s;
              (*grad)[p] -= s;
            }
          }
        }
      }
    }
  }
  return total * inv;
}

// L1 norm over the selected weight arrays; gradient goes to Parameter::grad.
double loss_reg(nn::ParameterSet& params, const std::vector<std::size_t>& weights, double scale = 0.0,
                bool accumulate_grad = false);
double loss_reg(const nn::ParameterSet& params, const std::vector<std::size_t>& weights);

struct LossComponents {
  std::optional<double> rec;
  std::optional<double> flow;
  std::optional<double> dis;
  std::optional<double> photo;
  std::optional<double> reg;
  std::optional<double> smooth;
};

// Flow-supervised: rec + lambda_flow * flow. Flow-unsupervised:
// rec + lambda_dis * dis + lambda_photo * photo + lambda_reg * reg. A
// component whose weight is zero may be absent; one with a non-zero weight
// must be present. Smoothness joins either total when enabled.
double loss_total(TrainingMode mode, const LossComponents& parts, const LossWeights& weights);

// Components with non-zero weight for `mode`.
std::vector<std::string> active_components(TrainingMode mode, const LossWeights& weights);

struct SampleTargets {
  const FieldF* d_s = nullptr;
  const FieldF* d_u = nullptr;
  const FieldF* d_t = nullptr;
  const FieldF* f_t = nullptr;  // required by the flow term
};

// Evaluates every active per-sample component (all but the weight
// regularizer) on a forward pass with a teacher. When `grads` is given, the
// gradient of `scale` times the weighted sum is accumulated into it.
LossComponents evaluate_losses(const ForwardResult& result, const SampleTargets& targets, TrainingMode mode,
                               const LossWeights& weights, double scale = 1.0, OutputGrads* grads = nullptr);

// Weighted sum of the per-sample components (the regularizer excluded).
double sample_objective(TrainingMode mode, const LossComponents& parts, const LossWeights& weights);

std::string describe(const LossComponents& parts);

}  // namespace flint
