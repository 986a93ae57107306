#include <cmath>
#include <cstring>
#include <immintrin.h>

#include "ctrack/kernels.hpp"

// AVX2/FMA lane (4 doubles per vector). Selected at runtime; equivalence with
// the scalar lane is asserted in tests/test_kernels.cpp.

namespace ctrack::kern {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

// 2^n for integer-valued n in [-1022, 1023], built in the exponent field.
inline __m256d pow2n(__m256d n) {
  const __m256d magic = _mm256_set1_pd(4503599627370496.0 + 1023.0);  // 2^52 + bias
  __m256i bits = _mm256_castpd_si256(_mm256_add_pd(n, magic));
  return _mm256_castsi256_pd(_mm256_slli_epi64(bits, 52));
}

// Core range reduction shared by exp and expm1:
//   x = r*ln2 + xr,  |xr| <= ln2/2;  t = e^xr - 1 (Taylor to x^13);  n2 = 2^r.
struct ExpParts {
  __m256d t;
  __m256d n2;
};

inline ExpParts exp_parts(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
  const __m256d ln2_hi = _mm256_set1_pd(0.693145751953125);
  const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);

  __m256d r = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                              _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d xr = _mm256_fnmadd_pd(r, ln2_hi, x);
  xr = _mm256_fnmadd_pd(r, ln2_lo, xr);

  // q(xr) = 1/2! + xr/3! + ... + xr^11/13!
  __m256d q = _mm256_set1_pd(1.6059043836821614599e-10);
  q = _mm256_fmadd_pd(q, xr, _mm256_set1_pd(2.0876756987868098979e-9));
  q = _mm256_fmadd_pd(q, xr, _mm256_set1_pd(2.5052108385441718775e-8));
  q = _mm256_fmadd_pd(q, xr, _mm256_set1_pd(2.7557319223985890653e-7));
  q = _mm256_fmadd_pd(q, xr, _mm256_set1_pd(2.7557319223985890653e-6));
  q = _mm256_fmadd_pd(q, xr, _mm256_set1_pd(2.4801587301587301587e-5));
  q = _mm256_fmadd_pd(q, xr, _mm256_set1_pd(1.9841269841269841270e-4));
  q = _mm256_fmadd_pd(q, xr, _mm256_set1_pd(1.3888888888888888889e-3));
  q = _mm256_fmadd_pd(q, xr, _mm256_set1_pd(8.3333333333333333333e-3));
  q = _mm256_fmadd_pd(q, xr, _mm256_set1_pd(4.1666666666666666667e-2));
  q = _mm256_fmadd_pd(q, xr, _mm256_set1_pd(1.6666666666666666667e-1));
  q = _mm256_fmadd_pd(q, xr, _mm256_set1_pd(0.5));
  __m256d t = _mm256_fmadd_pd(_mm256_mul_pd(xr, xr), q, xr);  // e^xr - 1

  return {t, pow2n(r)};
}

inline __m256d vexp4(__m256d x) {
  ExpParts p = exp_parts(x);
  __m256d y = _mm256_fmadd_pd(p.t, p.n2, p.n2);  // (t + 1) * 2^r

  const __m256d maxx = _mm256_set1_pd(708.39);
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  __m256d ax = _mm256_andnot_pd(sign_mask, x);
  __m256d in_range = _mm256_cmp_pd(ax, maxx, _CMP_LE_OQ);
  __m256d sat = _mm256_and_pd(_mm256_cmp_pd(x, _mm256_setzero_pd(), _CMP_GT_OQ),
                              _mm256_set1_pd(HUGE_VAL));  // +inf above, 0 below
  y = _mm256_blendv_pd(sat, y, in_range);
  __m256d is_nan = _mm256_cmp_pd(x, x, _CMP_UNORD_Q);
  return _mm256_blendv_pd(y, x, is_nan);
}

// expm1 for non-positive arguments (all the zoh path needs).
inline __m256d vexpm1_nonpos4(__m256d x) {
  ExpParts p = exp_parts(x);
  __m256d n2m1 = _mm256_sub_pd(p.n2, _mm256_set1_pd(1.0));
  return _mm256_fmadd_pd(p.t, p.n2, n2m1);
}

void a_add(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void a_sub(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void a_mul(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void a_scale(const double* a, double s, double* out, size_t n) {
  const __m256d sv = _mm256_set1_pd(s);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), sv));
  for (; i < n; ++i) out[i] = a[i] * s;
}

void a_axpy(double alpha, const double* x, double* y, size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double a_dot(const double* a, const double* b, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double a_sum(const double* a, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i];
  return s;
}

double a_max(const double* a, size_t n) {
  double m = a[0];
  size_t i = 0;
  if (n >= 4) {
    __m256d mv = _mm256_loadu_pd(a);
    for (i = 4; i + 4 <= n; i += 4) mv = _mm256_max_pd(mv, _mm256_loadu_pd(a + i));
    __m128d lo = _mm_max_pd(_mm256_castpd256_pd128(mv), _mm256_extractf128_pd(mv, 1));
    m = _mm_cvtsd_f64(_mm_max_sd(lo, _mm_unpackhi_pd(lo, lo)));
  } else {
    i = 1;
    for (; i < n; ++i) m = std::fmax(m, a[i]);
    return m;
  }
  for (; i < n; ++i) m = std::fmax(m, a[i]);
  return m;
}

// Tail elements go through the same vector code via a padded buffer so results
// do not depend on alignment of the tail.
template <class F>
inline void map4(const double* a, double* out, size_t n, F&& f) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, f(_mm256_loadu_pd(a + i)));
  if (i < n) {
    double buf[4] = {0, 0, 0, 0};
    std::memcpy(buf, a + i, (n - i) * sizeof(double));
    __m256d r = f(_mm256_loadu_pd(buf));
    _mm256_storeu_pd(buf, r);
    std::memcpy(out + i, buf, (n - i) * sizeof(double));
  }
}

void a_vexp(const double* a, double* out, size_t n) {
  map4(a, out, n, [](__m256d v) { return vexp4(v); });
}

void a_vexp_shift(const double* a, double shift, double* out, size_t n) {
  const __m256d sv = _mm256_set1_pd(shift);
  map4(a, out, n, [&](__m256d v) { return vexp4(_mm256_sub_pd(v, sv)); });
}

void a_vsigmoid(const double* a, double* out, size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  map4(a, out, n, [&](__m256d v) {
    __m256d e = vexp4(_mm256_sub_pd(_mm256_setzero_pd(), v));
    return _mm256_div_pd(one, _mm256_add_pd(one, e));
  });
}

void a_vsilu(const double* a, double* out, size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  map4(a, out, n, [&](__m256d v) {
    __m256d e = vexp4(_mm256_sub_pd(_mm256_setzero_pd(), v));
    return _mm256_div_pd(v, _mm256_add_pd(one, e));
  });
}

void a_matmul(const double* a, const double* b, double* c,
              size_t m, size_t k, size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t l = 0; l < k; ++l) {
      const __m256d av = _mm256_set1_pd(arow[l]);
      const double* brow = b + l * n;
      size_t j = 0;
      for (; j + 4 <= n; j += 4)
        _mm256_storeu_pd(crow + j,
                         _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + j), _mm256_loadu_pd(crow + j)));
      const double ail = arow[l];
      for (; j < n; ++j) crow[j] += ail * brow[j];
    }
  }
}

void a_scan_step(const double* a_bar, const double* b_bar, const double* x,
                 const double* c, double* h, double* y, size_t D, size_t N) {
  for (size_t d = 0; d < D; ++d) {
    double* hrow = h + d * N;
    const double* arow = a_bar + d * N;
    const double* brow = b_bar + d * N;
    const __m256d xv = _mm256_set1_pd(x[d]);
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= N; i += 4) {
      __m256d hv = _mm256_fmadd_pd(_mm256_loadu_pd(arow + i), _mm256_loadu_pd(hrow + i),
                                   _mm256_mul_pd(_mm256_loadu_pd(brow + i), xv));
      _mm256_storeu_pd(hrow + i, hv);
      acc = _mm256_fmadd_pd(_mm256_loadu_pd(c + i), hv, acc);
    }
    double yd = hsum(acc);
    const double xd = x[d];
    for (; i < N; ++i) {
      const double hv = arow[i] * hrow[i] + brow[i] * xd;
      hrow[i] = hv;
      yd += c[i] * hv;
    }
    y[d] = yd;
  }
}

void a_zoh_step(const double* A, const double* delta, const double* b,
                double* a_bar, double* b_bar, size_t D, size_t N) {
  const __m256d cutoff = _mm256_set1_pd(kZohSeriesCutoff);
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d half = _mm256_set1_pd(0.5);
  const __m256d sixth = _mm256_set1_pd(1.0 / 6.0);

  for (size_t d = 0; d < D; ++d) {
    const __m256d dt = _mm256_set1_pd(delta[d]);
    const double dts = delta[d];
    const double* Arow = A + d * N;
    double* arow = a_bar + d * N;
    double* brow = b_bar + d * N;
    size_t i = 0;
    for (; i + 4 <= N; i += 4) {
      __m256d z = _mm256_mul_pd(dt, _mm256_loadu_pd(Arow + i));
      __m256d e = vexp4(z);
      _mm256_storeu_pd(arow + i, e);
      __m256d phi_exact = _mm256_div_pd(vexpm1_nonpos4(z), z);
      __m256d phi_series = _mm256_fmadd_pd(z, _mm256_fmadd_pd(z, sixth, half), one);
      __m256d small = _mm256_cmp_pd(_mm256_andnot_pd(sign_mask, z), cutoff, _CMP_LT_OQ);
      __m256d phi = _mm256_blendv_pd(phi_exact, phi_series, small);
      __m256d bb = _mm256_mul_pd(phi, _mm256_mul_pd(dt, _mm256_loadu_pd(b + i)));
      _mm256_storeu_pd(brow + i, bb);
    }
    for (; i < N; ++i) {
      const double z = dts * Arow[i];
      double zb[4] = {z, 0, 0, 0};
      __m256d zv = _mm256_loadu_pd(zb);
      double eb[4];
      _mm256_storeu_pd(eb, vexp4(zv));
      arow[i] = eb[0];
      double phi;
      if (std::fabs(z) < kZohSeriesCutoff) {
        phi = 1.0 + z * 0.5 + z * z * (1.0 / 6.0);
      } else {
        double mb[4];
        _mm256_storeu_pd(mb, vexpm1_nonpos4(zv));
        phi = mb[0] / z;
      }
      brow[i] = phi * dts * b[i];
    }
  }
}

}  // namespace

const Ops* avx2_table() {
  static const Ops ops = {
      "avx2",   a_add,  a_sub,      a_mul,   a_scale, a_axpy,
      a_dot,    a_sum,  a_max,      a_vexp,  a_vexp_shift,
      a_vsigmoid, a_vsilu, a_matmul, a_scan_step, a_zoh_step,
  };
  return &ops;
}

}  // namespace ctrack::kern
