#pragma once

#include <cmath>
#include <cstddef>

namespace ctrack::kern {

// One table per lane. The scalar lane is the reference; SIMD lanes must agree
// with it within the tolerances asserted in tests/test_kernels.cpp.
struct Ops {
  const char* name;

  void (*add)(const double* a, const double* b, double* out, size_t n);
  void (*sub)(const double* a, const double* b, double* out, size_t n);
  void (*mul)(const double* a, const double* b, double* out, size_t n);
  void (*scale)(const double* a, double s, double* out, size_t n);
  void (*axpy)(double alpha, const double* x, double* y, size_t n);  // y += alpha*x
  double (*dot)(const double* a, const double* b, size_t n);
  double (*sum)(const double* a, size_t n);
  double (*max)(const double* a, size_t n);  // n >= 1

  void (*vexp)(const double* a, double* out, size_t n);
  void (*vexp_shift)(const double* a, double shift, double* out, size_t n);  // exp(a - shift)
  void (*vsigmoid)(const double* a, double* out, size_t n);
  void (*vsilu)(const double* a, double* out, size_t n);

  // Row-major C[m,n] = A[m,k] * B[k,n]; C is overwritten.
  void (*matmul)(const double* a, const double* b, double* c,
                 size_t m, size_t k, size_t n);

  // One recurrence step over a [D,N] state:
  //   h[d,n] = a_bar[d,n]*h[d,n] + b_bar[d,n]*x[d];  y[d] = sum_n c[n]*h[d,n]
  void (*scan_step)(const double* a_bar, const double* b_bar, const double* x,
                    const double* c, double* h, double* y, size_t D, size_t N);

  // Zero-order-hold step: given A[D,N] (<0), delta[D] (>0), b[N], produce
  //   a_bar = exp(delta*A)
  //   b_bar = phi(delta*A) * delta * b,  phi(z) = (e^z - 1)/z
  // with the series 1 + z/2 + z^2/6 substituted for phi when |z| < 1e-6.
  void (*zoh_step)(const double* A, const double* delta, const double* b,
                   double* a_bar, double* b_bar, size_t D, size_t N);
};

// Series switch point shared by all lanes (and by the backward pass).
inline constexpr double kZohSeriesCutoff = 1e-6;

const Ops& scalar();
const Ops* avx2();          // nullptr when unsupported at compile or run time
const Ops& active();        // selected once per process (env CTRACK_KERNELS)
const char* active_name();

// phi(z) = (e^z - 1)/z with the small-|z| series; shared helper.
inline double zoh_phi(double z) {
  if (std::fabs(z) < kZohSeriesCutoff) return 1.0 + z * 0.5 + z * z * (1.0 / 6.0);
  return std::expm1(z) / z;
}

// d/dz phi(z); series below 1e-3 where the closed form cancels.
inline double zoh_phi_deriv(double z) {
  if (std::fabs(z) < 1e-3)
    return 0.5 + z * (1.0 / 3.0) + z * z * 0.125 + z * z * z * (1.0 / 30.0);
  return (std::exp(z) * (z - 1.0) + 1.0) / (z * z);
}

inline double softplus_scalar(double x) {
  // max(x,0) + log1p(exp(-|x|)) is stable over the whole line.
  return std::fmax(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

// Helpers layered on a lane's primitives.
// C[m,n] = A[m,k] * B^T, with B stored [n,k].
void matmul_nt(const Ops& o, const double* a, const double* b, double* c,
               size_t m, size_t k, size_t n);
// C[m,n] = A^T * B, with A stored [k,m], B stored [k,n].
void matmul_tn(const Ops& o, const double* a, const double* b, double* c,
               size_t m, size_t k, size_t n);

}  // namespace ctrack::kern
