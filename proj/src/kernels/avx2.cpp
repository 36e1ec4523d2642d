// AVX2 + FMA kernels. Compiled with -mavx2 -mfma; only reached after the
// dispatcher has confirmed CPU support.

#include "filtertwin/kernels.hpp"

#include <immintrin.h>

namespace filtertwin::kernels::detail {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

double sum_sq_dev_avx2(const double* x, std::size_t n, double center) {
  const __m256d c = _mm256_set1_pd(center);
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(x + i), c);
    __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(x + i + 4), c);
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    acc1 = _mm256_fmadd_pd(d1, d1, acc1);
  }
  for (; i + 4 <= n; i += 4) {
    __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(x + i), c);
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double d = x[i] - center;
    acc += d * d;
  }
  return acc;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void gemv_avx2(const double* w, std::size_t rows, std::size_t cols, const double* x,
               const double* bias, double* y) {
  std::size_t r = 0;
  // Four rows per pass so each x chunk is loaded once.
  for (; r + 4 <= rows; r += 4) {
    const double* r0 = w + r * cols;
    const double* r1 = r0 + cols;
    const double* r2 = r1 + cols;
    const double* r3 = r2 + cols;
    __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
    __m256d a2 = _mm256_setzero_pd(), a3 = _mm256_setzero_pd();
    std::size_t c = 0;
    for (; c + 4 <= cols; c += 4) {
      const __m256d xv = _mm256_loadu_pd(x + c);
      a0 = _mm256_fmadd_pd(_mm256_loadu_pd(r0 + c), xv, a0);
      a1 = _mm256_fmadd_pd(_mm256_loadu_pd(r1 + c), xv, a1);
      a2 = _mm256_fmadd_pd(_mm256_loadu_pd(r2 + c), xv, a2);
      a3 = _mm256_fmadd_pd(_mm256_loadu_pd(r3 + c), xv, a3);
    }
    double s0 = hsum(a0), s1 = hsum(a1), s2 = hsum(a2), s3 = hsum(a3);
    for (; c < cols; ++c) {
      s0 += r0[c] * x[c];
      s1 += r1[c] * x[c];
      s2 += r2[c] * x[c];
      s3 += r3[c] * x[c];
    }
    if (bias) {
      s0 += bias[r];
      s1 += bias[r + 1];
      s2 += bias[r + 2];
      s3 += bias[r + 3];
    }
    y[r] = s0;
    y[r + 1] = s1;
    y[r + 2] = s2;
    y[r + 3] = s3;
  }
  for (; r < rows; ++r) y[r] = dot_avx2(w + r * cols, x, cols) + (bias ? bias[r] : 0.0);
}

void gemv_t_acc_avx2(const double* w, std::size_t rows, std::size_t cols, const double* v,
                     double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    if (v[r] == 0.0) continue;
    axpy_avx2(v[r], w + r * cols, out, cols);
  }
}

void ger_acc_avx2(double* w, std::size_t rows, std::size_t cols, const double* u,
                  const double* x) {
  for (std::size_t r = 0; r < rows; ++r) {
    if (u[r] == 0.0) continue;
    axpy_avx2(u[r], x, w + r * cols, cols);
  }
}

// C += A B where A(i, p) = a[i * asi + p * asp]. Four rows of C by eight
// columns per register block.
void gemm_strided_a(const double* a, std::size_t asi, std::size_t asp, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * asi;
    const double* a1 = a0 + asi;
    const double* a2 = a1 + asi;
    const double* a3 = a2 + asi;
    double* c0 = c + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d x0 = _mm256_loadu_pd(c0 + j), y0 = _mm256_loadu_pd(c0 + j + 4);
      __m256d x1 = _mm256_loadu_pd(c1 + j), y1 = _mm256_loadu_pd(c1 + j + 4);
      __m256d x2 = _mm256_loadu_pd(c2 + j), y2 = _mm256_loadu_pd(c2 + j + 4);
      __m256d x3 = _mm256_loadu_pd(c3 + j), y3 = _mm256_loadu_pd(c3 + j + 4);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d bl = _mm256_loadu_pd(b + p * n + j);
        const __m256d bh = _mm256_loadu_pd(b + p * n + j + 4);
        __m256d s = _mm256_broadcast_sd(a0 + p * asp);
        x0 = _mm256_fmadd_pd(s, bl, x0);
        y0 = _mm256_fmadd_pd(s, bh, y0);
        s = _mm256_broadcast_sd(a1 + p * asp);
        x1 = _mm256_fmadd_pd(s, bl, x1);
        y1 = _mm256_fmadd_pd(s, bh, y1);
        s = _mm256_broadcast_sd(a2 + p * asp);
        x2 = _mm256_fmadd_pd(s, bl, x2);
        y2 = _mm256_fmadd_pd(s, bh, y2);
        s = _mm256_broadcast_sd(a3 + p * asp);
        x3 = _mm256_fmadd_pd(s, bl, x3);
        y3 = _mm256_fmadd_pd(s, bh, y3);
      }
      _mm256_storeu_pd(c0 + j, x0);
      _mm256_storeu_pd(c0 + j + 4, y0);
      _mm256_storeu_pd(c1 + j, x1);
      _mm256_storeu_pd(c1 + j + 4, y1);
      _mm256_storeu_pd(c2 + j, x2);
      _mm256_storeu_pd(c2 + j + 4, y2);
      _mm256_storeu_pd(c3 + j, x3);
      _mm256_storeu_pd(c3 + j + 4, y3);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d x0 = _mm256_loadu_pd(c0 + j), x1 = _mm256_loadu_pd(c1 + j);
      __m256d x2 = _mm256_loadu_pd(c2 + j), x3 = _mm256_loadu_pd(c3 + j);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d bl = _mm256_loadu_pd(b + p * n + j);
        x0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + p * asp), bl, x0);
        x1 = _mm256_fmadd_pd(_mm256_broadcast_sd(a1 + p * asp), bl, x1);
        x2 = _mm256_fmadd_pd(_mm256_broadcast_sd(a2 + p * asp), bl, x2);
        x3 = _mm256_fmadd_pd(_mm256_broadcast_sd(a3 + p * asp), bl, x3);
      }
      _mm256_storeu_pd(c0 + j, x0);
      _mm256_storeu_pd(c1 + j, x1);
      _mm256_storeu_pd(c2 + j, x2);
      _mm256_storeu_pd(c3 + j, x3);
    }
    for (; j < n; ++j) {
      double s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
      for (std::size_t p = 0; p < k; ++p) {
        const double bv = b[p * n + j];
        s0 += a0[p * asp] * bv;
        s1 += a1[p * asp] * bv;
        s2 += a2[p * asp] * bv;
        s3 += a3[p * asp] * bv;
      }
      c0[j] = s0;
      c1[j] = s1;
      c2[j] = s2;
      c3[j] = s3;
    }
  }
  for (; i < m; ++i) {
    const double* ai = a + i * asi;
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) axpy_avx2(ai[p * asp], b + p * n, ci, n);
  }
}

void gemm_nn_acc_avx2(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
  gemm_strided_a(a, k, 1, b, c, m, k, n);
}

void gemm_tn_acc_avx2(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
  gemm_strided_a(a, 1, m, b, c, m, k, n);
}

// C += A B^T: every entry is a dot product along k. Two rows of A against
// four rows of B per pass.
void gemm_nt_acc_avx2(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= m; i += 2) {
    const double* a0 = a + i * k;
    const double* a1 = a0 + k;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + j * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      __m256d s00 = _mm256_setzero_pd(), s01 = _mm256_setzero_pd(), s02 = _mm256_setzero_pd(),
              s03 = _mm256_setzero_pd(), s10 = _mm256_setzero_pd(), s11 = _mm256_setzero_pd(),
              s12 = _mm256_setzero_pd(), s13 = _mm256_setzero_pd();
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d va0 = _mm256_loadu_pd(a0 + p), va1 = _mm256_loadu_pd(a1 + p);
        __m256d vb = _mm256_loadu_pd(b0 + p);
        s00 = _mm256_fmadd_pd(va0, vb, s00);
        s10 = _mm256_fmadd_pd(va1, vb, s10);
        vb = _mm256_loadu_pd(b1 + p);
        s01 = _mm256_fmadd_pd(va0, vb, s01);
        s11 = _mm256_fmadd_pd(va1, vb, s11);
        vb = _mm256_loadu_pd(b2 + p);
        s02 = _mm256_fmadd_pd(va0, vb, s02);
        s12 = _mm256_fmadd_pd(va1, vb, s12);
        vb = _mm256_loadu_pd(b3 + p);
        s03 = _mm256_fmadd_pd(va0, vb, s03);
        s13 = _mm256_fmadd_pd(va1, vb, s13);
      }
      double r[8] = {hsum(s00), hsum(s01), hsum(s02), hsum(s03), hsum(s10), hsum(s11), hsum(s12), hsum(s13)};
      for (; p < k; ++p) {
        r[0] += a0[p] * b0[p];
        r[1] += a0[p] * b1[p];
        r[2] += a0[p] * b2[p];
        r[3] += a0[p] * b3[p];
        r[4] += a1[p] * b0[p];
        r[5] += a1[p] * b1[p];
        r[6] += a1[p] * b2[p];
        r[7] += a1[p] * b3[p];
      }
      for (std::size_t q = 0; q < 4; ++q) {
        c[i * n + j + q] += r[q];
        c[(i + 1) * n + j + q] += r[4 + q];
      }
    }
    for (; j < n; ++j) {
      c[i * n + j] += dot_avx2(a0, b + j * k, k);
      c[(i + 1) * n + j] += dot_avx2(a1, b + j * k, k);
    }
  }
  for (; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot_avx2(a + i * k, b + j * k, k);
}

void adam_update_avx2(double* p, double* m, double* v, const double* g, std::size_t n,
                      const AdamStep& s) {
  const __m256d b1 = _mm256_set1_pd(s.beta1);
  const __m256d b2 = _mm256_set1_pd(s.beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - s.beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - s.beta2);
  const __m256d c1 = _mm256_set1_pd(s.bias_correction1);
  const __m256d c2 = _mm256_set1_pd(s.bias_correction2);
  const __m256d lr = _mm256_set1_pd(s.learning_rate);
  const __m256d eps = _mm256_set1_pd(s.epsilon);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gv = _mm256_loadu_pd(g + i);
    const __m256d mv = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(omb1, gv));
    const __m256d vv = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(omb2, _mm256_mul_pd(gv, gv)));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    const __m256d m_hat = _mm256_div_pd(mv, c1);
    const __m256d v_hat = _mm256_div_pd(vv, c2);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(lr, m_hat), _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps));
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
  }
  if (i < n) scalar_table().adam_update(p + i, m + i, v + i, g + i, n - i, s);
}

// exp(x) for x clamped to [-708, 708]: Cephes-style reduction x = n ln2 + r and
// a (3,3) Pade approximant for exp(r); within a few ulp of std::exp.
inline __m256d exp_pd(__m256d x) {
  x = _mm256_min_pd(_mm256_max_pd(x, _mm256_set1_pd(-708.0)), _mm256_set1_pd(708.0));
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(1.4426950408889634073599)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, _mm256_set1_pd(6.93145751953125E-1), x);
  r = _mm256_fnmadd_pd(n, _mm256_set1_pd(1.42860682030941723212E-6), r);
  const __m256d rr = _mm256_mul_pd(r, r);
  __m256d p = _mm256_fmadd_pd(_mm256_set1_pd(1.26177193074810590878E-4), rr,
                              _mm256_set1_pd(3.02994407707441961300E-2));
  p = _mm256_fmadd_pd(p, rr, _mm256_set1_pd(9.99999999999999999910E-1));
  p = _mm256_mul_pd(p, r);
  __m256d q = _mm256_fmadd_pd(_mm256_set1_pd(3.00198505138664455042E-6), rr,
                              _mm256_set1_pd(2.52448340349684104192E-3));
  q = _mm256_fmadd_pd(q, rr, _mm256_set1_pd(2.27265548208155028766E-1));
  q = _mm256_fmadd_pd(q, rr, _mm256_set1_pd(2.00000000000000000009E0));
  const __m256d ratio = _mm256_div_pd(p, _mm256_sub_pd(q, p));
  const __m256d er = _mm256_fmadd_pd(_mm256_set1_pd(2.0), ratio, _mm256_set1_pd(1.0));
  // 2^n via the exponent field.
  const __m128i n32 = _mm256_cvtpd_epi32(n);
  __m256i bits = _mm256_add_epi64(_mm256_cvtepi32_epi64(n32), _mm256_set1_epi64x(1023));
  bits = _mm256_slli_epi64(bits, 52);
  return _mm256_mul_pd(er, _mm256_castsi256_pd(bits));
}

void sigmoid_avx2(double* x, std::size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d e = exp_pd(_mm256_sub_pd(zero, _mm256_loadu_pd(x + i)));
    _mm256_storeu_pd(x + i, _mm256_div_pd(one, _mm256_add_pd(one, e)));
  }
  if (i < n) scalar_table().sigmoid(x + i, n - i);
}

// tanh: rational approximation near zero, 1 - 2/(exp(2|x|)+1) elsewhere.
void tanh_avx2(double* x, std::size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  const __m256d small_cut = _mm256_set1_pd(0.625);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    const __m256d sign = _mm256_and_pd(v, sign_mask);
    const __m256d a = _mm256_andnot_pd(sign_mask, v);

    const __m256d e = exp_pd(_mm256_mul_pd(two, a));
    __m256d large = _mm256_sub_pd(one, _mm256_div_pd(two, _mm256_add_pd(e, one)));
    large = _mm256_or_pd(large, sign);

    const __m256d z = _mm256_mul_pd(v, v);
    __m256d p = _mm256_fmadd_pd(_mm256_set1_pd(-9.64399179425052238628E-1), z,
                                _mm256_set1_pd(-9.92877231001918586564E1));
    p = _mm256_fmadd_pd(p, z, _mm256_set1_pd(-1.61468768441708447952E3));
    __m256d q = _mm256_add_pd(z, _mm256_set1_pd(1.12811678491632931402E2));
    q = _mm256_fmadd_pd(q, z, _mm256_set1_pd(2.23548839060100448583E3));
    q = _mm256_fmadd_pd(q, z, _mm256_set1_pd(4.84406305325125486048E3));
    const __m256d small = _mm256_fmadd_pd(_mm256_mul_pd(v, z), _mm256_div_pd(p, q), v);

    const __m256d use_small = _mm256_cmp_pd(a, small_cut, _CMP_LT_OQ);
    _mm256_storeu_pd(x + i, _mm256_blendv_pd(large, small, use_small));
  }
  if (i < n) scalar_table().tanh(x + i, n - i);
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{dot_avx2,  sum_avx2,        sum_sq_dev_avx2,
                                 axpy_avx2, gemv_avx2,       gemv_t_acc_avx2,
                                 ger_acc_avx2, gemm_nn_acc_avx2, gemm_tn_acc_avx2,
                                 gemm_nt_acc_avx2, adam_update_avx2, sigmoid_avx2,
                                 tanh_avx2};
  return &table;
}

}  // namespace filtertwin::kernels::detail
