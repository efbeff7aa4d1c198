#pragma once

// Data-parallel inner loops used by the network, the warp and the optimizer.
//
// Every kernel exists as a portable scalar reference and, on x86-64, as an
// AVX2+FMA variant. The variant is chosen once at runtime from CPUID; the
// FLINT_ISA environment variable (`scalar` or `avx2`) overrides the choice.

#include <cstddef>

namespace flint::kernels {

enum class Isa { kScalar, kAvx2 };

struct AdamWStep {
  float lr = 0.f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.f;
  float bias_correction1 = 1.f;  // 1 - beta1^step
  float bias_correction2 = 1.f;  // 1 - beta2^step
};

// Row-major C = alpha * op(A) * op(B) + beta * C with op(X) = X or X^T.
// op(A) is m x k, op(B) is k x n. beta == 0 overwrites C without reading it.
using SgemmFn = void (*)(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
                         const float* b, int ldb, float beta, float* c, int ldc);

// out(y,x) = bilinear sample of src at (y + flow_y(y,x), x + flow_x(y,x)),
// sample coordinates clamped to the grid.
using WarpBilinear2dFn = void (*)(const float* src, const float* flow_y, const float* flow_x, int height, int width,
                                  float* out);

using PreluForwardFn = void (*)(const float* x, std::size_t n, float slope, float* y);

// gx = gy * (x > 0 ? 1 : slope); returns sum of gy * x over x <= 0.
using PreluBackwardFn = float (*)(const float* x, const float* gy, std::size_t n, float slope, float* gx);

// Decoupled weight decay followed by the bias-corrected Adam update.
using AdamWFn = void (*)(float* param, const float* grad, float* m, float* v, std::size_t n, const AdamWStep& step);

struct KernelTable {
  Isa isa;
  const char* name;
  SgemmFn sgemm;
  WarpBilinear2dFn warp_bilinear_2d;
  PreluForwardFn prelu_forward;
  PreluBackwardFn prelu_backward;
  AdamWFn adamw;
};

bool isa_available(Isa isa);

// Table for a specific ISA. Throws ContractError when it is unavailable.
const KernelTable& table(Isa isa);

// Table selected for this process.
const KernelTable& active();

// Overrides the selection (tests, benchmarking).
void set_active(Isa isa);

const char* isa_name(Isa isa);

}  // namespace flint::kernels
