#pragma once

// Internal declarations shared by the per-ISA translation units. This header
// must stay free of standard library templates: the AVX2 unit is compiled
// with -mavx2 -mfma and must not emit inline definitions the scalar units
// could end up linking against.

#include <cstddef>

#include "flint/kernels/kernels.hpp"

namespace flint::kernels::scalar {
void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda, const float* b,
           int ldb, float beta, float* c, int ldc);
void warp_bilinear_2d(const float* src, const float* flow_y, const float* flow_x, int height, int width, float* out);
void prelu_forward(const float* x, std::size_t n, float slope, float* y);
float prelu_backward(const float* x, const float* gy, std::size_t n, float slope, float* gx);
void adamw(float* param, const float* grad, float* m, float* v, std::size_t n, const AdamWStep& step);
}  // namespace flint::kernels::scalar

namespace flint::kernels::avx2 {
void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda, const float* b,
           int ldb, float beta, float* c, int ldc);
void warp_bilinear_2d(const float* src, const float* flow_y, const float* flow_x, int height, int width, float* out);
void prelu_forward(const float* x, std::size_t n, float slope, float* y);
float prelu_backward(const float* x, const float* gy, std::size_t n, float slope, float* gx);
void adamw(float* param, const float* grad, float* m, float* v, std::size_t n, const AdamWStep& step);
}  // namespace flint::kernels::avx2
