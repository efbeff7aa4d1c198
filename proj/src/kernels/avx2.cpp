// AVX2 + FMA variants. Compiled with -mavx2 -mfma -ffp-contract=off; only
// reached after a CPUID check, so nothing in here may be called directly.

#include <immintrin.h>

#include <cmath>
#include <cstring>
#include <new>

#include "kernels_impl.hpp"

namespace flint::kernels::avx2 {
namespace {

constexpr int kMr = 6;
constexpr int kNr = 16;
constexpr int kKc = 256;
constexpr int kMc = 120;
constexpr int kNc = 3072;

inline int imin(int a, int b) { return a < b ? a : b; }

struct PackBuffers {
  float* a;
  float* b;
  PackBuffers()
      : a(static_cast<float*>(::operator new[](sizeof(float) * kMc * kKc, std::align_val_t{64}))),
        b(static_cast<float*>(::operator new[](sizeof(float) * kKc * kNc, std::align_val_t{64}))) {}
  ~PackBuffers() {
    ::operator delete[](a, std::align_val_t{64});
    ::operator delete[](b, std::align_val_t{64});
  }
  PackBuffers(const PackBuffers&) = delete;
  PackBuffers& operator=(const PackBuffers&) = delete;
};

PackBuffers& buffers() {
  thread_local PackBuffers bufs;
  return bufs;
}

// Packs an mc x kc block of alpha * op(A) into row panels of kMr, k-major.
void pack_a(bool trans_a, const float* a, int lda, int i0, int p0, int mc, int kc, float alpha, float* dst) {
  for (int ir = 0; ir < mc; ir += kMr) {
    const int mr = imin(kMr, mc - ir);
    float* panel = dst + static_cast<std::ptrdiff_t>(ir) * kc;
    for (int p = 0; p < kc; ++p) {
      for (int r = 0; r < kMr; ++r) {
        float v = 0.f;
        if (r < mr) {
          const int i = i0 + ir + r;
          const int k = p0 + p;
          v = trans_a ? a[static_cast<std::ptrdiff_t>(k) * lda + i] : a[static_cast<std::ptrdiff_t>(i) * lda + k];
          v *= alpha;
        }
        panel[p * kMr + r] = v;
      }
    }
  }
}

// Packs a kc x nc block of op(B) into column panels of kNr, k-major.
void pack_b(bool trans_b, const float* b, int ldb, int p0, int j0, int kc, int nc, float* dst) {
  for (int jr = 0; jr < nc; jr += kNr) {
    const int nr = imin(kNr, nc - jr);
    float* panel = dst + static_cast<std::ptrdiff_t>(jr) * kc;
    if (!trans_b) {
      for (int p = 0; p < kc; ++p) {
        const float* row = b + static_cast<std::ptrdiff_t>(p0 + p) * ldb + j0 + jr;
        float* out = panel + p * kNr;
        if (nr == kNr) {
          _mm256_store_ps(out, _mm256_loadu_ps(row));
          _mm256_store_ps(out + 8, _mm256_loadu_ps(row + 8));
        } else {
          for (int q = 0; q < kNr; ++q) out[q] = q < nr ? row[q] : 0.f;
        }
      }
    } else {
      for (int q = 0; q < kNr; ++q) {
        if (q < nr) {
          const float* col = b + static_cast<std::ptrdiff_t>(j0 + jr + q) * ldb + p0;
          for (int p = 0; p < kc; ++p) panel[p * kNr + q] = col[p];
        } else {
          for (int p = 0; p < kc; ++p) panel[p * kNr + q] = 0.f;
        }
      }
    }
  }
}

// C[mr x nr] += packed A panel * packed B panel.
void micro_kernel(int kc, const float* pa, const float* pb, float* c, int ldc, int mr, int nr) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();
  for (int p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_load_ps(pb);
    const __m256 b1 = _mm256_load_ps(pb + 8);
    __m256 a = _mm256_broadcast_ss(pa);
    c00 = _mm256_fmadd_ps(a, b0, c00);
    c01 = _mm256_fmadd_ps(a, b1, c01);
    a = _mm256_broadcast_ss(pa + 1);
    c10 = _mm256_fmadd_ps(a, b0, c10);
    c11 = _mm256_fmadd_ps(a, b1, c11);
    a = _mm256_broadcast_ss(pa + 2);
    c20 = _mm256_fmadd_ps(a, b0, c20);
    c21 = _mm256_fmadd_ps(a, b1, c21);
    a = _mm256_broadcast_ss(pa + 3);
    c30 = _mm256_fmadd_ps(a, b0, c30);
    c31 = _mm256_fmadd_ps(a, b1, c31);
    a = _mm256_broadcast_ss(pa + 4);
    c40 = _mm256_fmadd_ps(a, b0, c40);
    c41 = _mm256_fmadd_ps(a, b1, c41);
    a = _mm256_broadcast_ss(pa + 5);
    c50 = _mm256_fmadd_ps(a, b0, c50);
    c51 = _mm256_fmadd_ps(a, b1, c51);
    pa += kMr;
    pb += kNr;
  }
  const __m256 acc[kMr][2] = {{c00, c01}, {c10, c11}, {c20, c21}, {c30, c31}, {c40, c41}, {c50, c51}};
  if (mr == kMr && nr == kNr) {
    for (int r = 0; r < kMr; ++r) {
      float* row = c + static_cast<std::ptrdiff_t>(r) * ldc;
      _mm256_storeu_ps(row, _mm256_add_ps(_mm256_loadu_ps(row), acc[r][0]));
      _mm256_storeu_ps(row + 8, _mm256_add_ps(_mm256_loadu_ps(row + 8), acc[r][1]));
    }
    return;
  }
  alignas(32) float tmp[kMr * kNr];
  for (int r = 0; r < kMr; ++r) {
    _mm256_store_ps(tmp + r * kNr, acc[r][0]);
    _mm256_store_ps(tmp + r * kNr + 8, acc[r][1]);
  }
  for (int r = 0; r < mr; ++r) {
    float* row = c + static_cast<std::ptrdiff_t>(r) * ldc;
    for (int q = 0; q < nr; ++q) row[q] += tmp[r * kNr + q];
  }
}

float hsum(__m256 v) {
  const __m128 lo = _mm256_castps256_ps128(v);
  const __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 0x55));
  return _mm_cvtss_f32(s);
}

}  // namespace

void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda, const float* b,
           int ldb, float beta, float* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    float* row = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == 0.f) {
      std::memset(row, 0, sizeof(float) * static_cast<std::size_t>(n));
    } else if (beta != 1.f) {
      const __m256 vb = _mm256_set1_ps(beta);
      int j = 0;
      for (; j + 8 <= n; j += 8) _mm256_storeu_ps(row + j, _mm256_mul_ps(vb, _mm256_loadu_ps(row + j)));
      for (; j < n; ++j) row[j] *= beta;
    }
  }
  if (alpha == 0.f || k == 0 || m == 0 || n == 0) return;

  PackBuffers& bufs = buffers();
  for (int jc = 0; jc < n; jc += kNc) {
    const int nc = imin(kNc, n - jc);
    for (int pc = 0; pc < k; pc += kKc) {
      const int kc = imin(kKc, k - pc);
      pack_b(trans_b, b, ldb, pc, jc, kc, nc, bufs.b);
      for (int ic = 0; ic < m; ic += kMc) {
        const int mc = imin(kMc, m - ic);
        pack_a(trans_a, a, lda, ic, pc, mc, kc, alpha, bufs.a);
        for (int jr = 0; jr < nc; jr += kNr) {
          const int nr = imin(kNr, nc - jr);
          const float* pb = bufs.b + static_cast<std::ptrdiff_t>(jr) * kc;
          for (int ir = 0; ir < mc; ir += kMr) {
            const int mr = imin(kMr, mc - ir);
            const float* pa = bufs.a + static_cast<std::ptrdiff_t>(ir) * kc;
            float* cblk = c + static_cast<std::ptrdiff_t>(ic + ir) * ldc + jc + jr;
            micro_kernel(kc, pa, pb, cblk, ldc, mr, nr);
          }
        }
      }
    }
  }
}

void warp_bilinear_2d(const float* src, const float* flow_y, const float* flow_x, int height, int width, float* out) {
  const float ymax = static_cast<float>(height - 1);
  const float xmax = static_cast<float>(width - 1);
  const __m256 vzero = _mm256_setzero_ps();
  const __m256 vymax = _mm256_set1_ps(ymax);
  const __m256 vxmax = _mm256_set1_ps(xmax);
  const __m256i vone = _mm256_set1_epi32(1);
  const __m256i vhlast = _mm256_set1_epi32(height - 1);
  const __m256i vwlast = _mm256_set1_epi32(width - 1);
  const __m256i vwidth = _mm256_set1_epi32(width);
  const __m256 iota = _mm256_setr_ps(0.f, 1.f, 2.f, 3.f, 4.f, 5.f, 6.f, 7.f);

  for (int i = 0; i < height; ++i) {
    const __m256 vi = _mm256_set1_ps(static_cast<float>(i));
    int j = 0;
    for (; j + 8 <= width; j += 8) {
      const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(i) * width + j;
      const __m256 vj = _mm256_add_ps(_mm256_set1_ps(static_cast<float>(j)), iota);
      __m256 y = _mm256_add_ps(vi, _mm256_loadu_ps(flow_y + p));
      __m256 x = _mm256_add_ps(vj, _mm256_loadu_ps(flow_x + p));
      y = _mm256_min_ps(_mm256_max_ps(y, vzero), vymax);
      x = _mm256_min_ps(_mm256_max_ps(x, vzero), vxmax);
      const __m256 yf = _mm256_floor_ps(y);
      const __m256 xf = _mm256_floor_ps(x);
      const __m256i y0 = _mm256_cvttps_epi32(yf);
      const __m256i x0 = _mm256_cvttps_epi32(xf);
      const __m256i y1 = _mm256_min_epi32(_mm256_add_epi32(y0, vone), vhlast);
      const __m256i x1 = _mm256_min_epi32(_mm256_add_epi32(x0, vone), vwlast);
      const __m256 wy = _mm256_sub_ps(y, yf);
      const __m256 wx = _mm256_sub_ps(x, xf);
      const __m256i r0 = _mm256_mullo_epi32(y0, vwidth);
      const __m256i r1 = _mm256_mullo_epi32(y1, vwidth);
      const __m256 s00 = _mm256_i32gather_ps(src, _mm256_add_epi32(r0, x0), 4);
      const __m256 s01 = _mm256_i32gather_ps(src, _mm256_add_epi32(r0, x1), 4);
      const __m256 s10 = _mm256_i32gather_ps(src, _mm256_add_epi32(r1, x0), 4);
      const __m256 s11 = _mm256_i32gather_ps(src, _mm256_add_epi32(r1, x1), 4);
      const __m256 top = _mm256_add_ps(s00, _mm256_mul_ps(wx, _mm256_sub_ps(s01, s00)));
      const __m256 bot = _mm256_add_ps(s10, _mm256_mul_ps(wx, _mm256_sub_ps(s11, s10)));
      _mm256_storeu_ps(out + p, _mm256_add_ps(top, _mm256_mul_ps(wy, _mm256_sub_ps(bot, top))));
    }
    for (; j < width; ++j) {
      const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(i) * width + j;
      float y = static_cast<float>(i) + flow_y[p];
      float x = static_cast<float>(j) + flow_x[p];
      y = y < 0.f ? 0.f : (y > ymax ? ymax : y);
      x = x < 0.f ? 0.f : (x > xmax ? xmax : x);
      const float yf = std::floor(y);
      const float xf = std::floor(x);
      const int y0 = static_cast<int>(yf);
      const int x0 = static_cast<int>(xf);
      const int y1 = imin(y0 + 1, height - 1);
      const int x1 = imin(x0 + 1, width - 1);
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
  const __m256 vs = _mm256_set1_ps(slope);
  const __m256 vzero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 pos = _mm256_cmp_ps(v, vzero, _CMP_GT_OQ);
    _mm256_storeu_ps(y + i, _mm256_blendv_ps(_mm256_mul_ps(vs, v), v, pos));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.f ? x[i] : slope * x[i];
}

float prelu_backward(const float* x, const float* gy, std::size_t n, float slope, float* gx) {
  const __m256 vs = _mm256_set1_ps(slope);
  const __m256 vzero = _mm256_setzero_ps();
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 g = _mm256_loadu_ps(gy + i);
    const __m256 pos = _mm256_cmp_ps(v, vzero, _CMP_GT_OQ);
    _mm256_storeu_ps(gx + i, _mm256_blendv_ps(_mm256_mul_ps(vs, g), g, pos));
    acc = _mm256_add_ps(acc, _mm256_andnot_ps(pos, _mm256_mul_ps(g, v)));
  }
  float gslope = hsum(acc);
  for (; i < n; ++i) {
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
  const __m256 vb1 = _mm256_set1_ps(s.beta1);
  const __m256 vb2 = _mm256_set1_ps(s.beta2);
  const __m256 v1mb1 = _mm256_set1_ps(1.f - s.beta1);
  const __m256 v1mb2 = _mm256_set1_ps(1.f - s.beta2);
  const __m256 vdecay = _mm256_set1_ps(decay);
  const __m256 vbc1 = _mm256_set1_ps(inv_bc1);
  const __m256 vbc2 = _mm256_set1_ps(inv_bc2);
  const __m256 vlr = _mm256_set1_ps(s.lr);
  const __m256 veps = _mm256_set1_ps(s.eps);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 g = _mm256_loadu_ps(grad + i);
    const __m256 mi = _mm256_add_ps(_mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)), _mm256_mul_ps(v1mb1, g));
    const __m256 vi =
        _mm256_add_ps(_mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)), _mm256_mul_ps(_mm256_mul_ps(v1mb2, g), g));
    _mm256_storeu_ps(m + i, mi);
    _mm256_storeu_ps(v + i, vi);
    const __m256 mhat = _mm256_mul_ps(mi, vbc1);
    const __m256 vhat = _mm256_mul_ps(vi, vbc2);
    const __m256 step = _mm256_div_ps(_mm256_mul_ps(vlr, mhat), _mm256_add_ps(_mm256_sqrt_ps(vhat), veps));
    _mm256_storeu_ps(param + i, _mm256_sub_ps(_mm256_mul_ps(_mm256_loadu_ps(param + i), vdecay), step));
  }
  for (; i < n; ++i) {
    const float g = grad[i];
    m[i] = s.beta1 * m[i] + (1.f - s.beta1) * g;
    v[i] = s.beta2 * v[i] + (1.f - s.beta2) * g * g;
    const float mhat = m[i] * inv_bc1;
    const float vhat = v[i] * inv_bc2;
    param[i] = param[i] * decay - s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

}  // namespace flint::kernels::avx2
