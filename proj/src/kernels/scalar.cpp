#include <algorithm>
#include <cmath>

#include "kernels_impl.hpp"

namespace flint::kernels::scalar {

void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda, const float* b,
           int ldb, float beta, float* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    float* row = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == 0.f) {
      std::fill(row, row + n, 0.f);
    } else if (beta != 1.f) {
      for (int j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  if (alpha == 0.f || k == 0) return;

  auto a_at = [&](int i, int p) {
    return trans_a ? a[static_cast<std::ptrdiff_t>(p) * lda + i] : a[static_cast<std::ptrdiff_t>(i) * lda + p];
  };
  if (!trans_b) {
    for (int i = 0; i < m; ++i) {
      float* row = c + static_cast<std::ptrdiff_t>(i) * ldc;
      for (int p = 0; p < k; ++p) {
        const float s = alpha * a_at(i, p);
        const float* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
        for (int j = 0; j < n; ++j) row[j] += s * brow[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      float* row = c + static_cast<std::ptrdiff_t>(i) * ldc;
      for (int j = 0; j < n; ++j) {
        const float* bcol = b + static_cast<std::ptrdiff_t>(j) * ldb;
        float acc = 0.f;
        for (int p = 0; p < k; ++p) acc += a_at(i, p) * bcol[p];
        row[j] += alpha * acc;
      }
    }
  }
}

void warp_bilinear_2d(const float* src, const float* flow_y, const float* flow_x, int height, int width, float* out) {
  const float ymax = static_cast<float>(height - 1);
  const float xmax = static_cast<float>(width - 1);
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(i) * width + j;
      const float y = std::clamp(static_cast<float>(i) + flow_y[p], 0.f, ymax);
      const float x = std::clamp(static_cast<float>(j) + flow_x[p], 0.f, xmax);
      const float yf = std::floor(y);
      const float xf = std::floor(x);
      const int y0 = static_cast<int>(yf);
      const int x0 = static_cast<int>(xf);
      const int y1 = std::min(y0 + 1, height - 1);
      const int x1 = std::min(x0 + 1, width - 1);
      const float wy = y - yf;
      const float wx = x - xf;
      const float s00 = src[y0 * width + x0];
      const float s01 = src[y0 * width + x1];
      const float s10 = src[y1 * width + x0];
      const float s11 = src[y1 * width + x1];
      const float top = s00 + wx * (s01 - s00);
      const float bot = s10 + wx * (s11 - s10);
      out[p] = top + wy * (bot - top);
    }
  }
}

void prelu_forward(const float* x, std::size_t n, float slope, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.f ? x[i] : slope * x[i];
}

float prelu_backward(const float* x, const float* gy, std::size_t n, float slope, float* gx) {
  float gslope = 0.f;
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > 0.f) {
      gx[i] = gy[i];
    } else {
      gx[i] = slope * gy[i];
      gslope += gy[i] * x[i];
    }
  }
  return gslope;
}

void adamw(float* param, const float* grad, float* m, float* v, std::size_t n, const AdamWStep& s) {
  const float decay = 1.f - s.lr * s.weight_decay;
  const float inv_bc1 = 1.f / s.bias_correction1;
  const float inv_bc2 = 1.f / s.bias_correction2;
  for (std::size_t i = 0; i < n; ++i) {
    const float g = grad[i];
    m[i] = s.beta1 * m[i] + (1.f - s.beta1) * g;
    v[i] = s.beta2 * v[i] + (1.f - s.beta2) * g * g;
    const float mhat = m[i] * inv_bc1;
    const float vhat = v[i] * inv_bc2;
    param[i] = param[i] * decay - s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

}  // namespace flint::kernels::scalar
