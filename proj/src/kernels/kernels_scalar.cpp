#include <algorithm>
#include <cmath>
#include <cstring>

#include "ctrack/kernels.hpp"

// Reference lane: plain double loops, no FMA contraction assumed. Every other
// lane is tested against this one.

namespace ctrack::kern {
namespace {

void s_add(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_scale(const double* a, double s, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

void s_axpy(double alpha, const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double s_dot(const double* a, const double* b, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double s_sum(const double* a, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

double s_max(const double* a, size_t n) {
  double m = a[0];
  for (size_t i = 1; i < n; ++i) m = std::fmax(m, a[i]);
  return m;
}

void s_vexp(const double* a, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = std::exp(a[i]);
}

void s_vexp_shift(const double* a, double shift, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = std::exp(a[i] - shift);
}

void s_vsigmoid(const double* a, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-a[i]));
}

void s_vsilu(const double* a, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] / (1.0 + std::exp(-a[i]));
}

void s_matmul(const double* a, const double* b, double* c,
              size_t m, size_t k, size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t l = 0; l < k; ++l) {
      const double ail = arow[l];
      const double* brow = b + l * n;
      for (size_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
    }
  }
}

void s_scan_step(const double* a_bar, const double* b_bar, const double* x,
                 const double* c, double* h, double* y, size_t D, size_t N) {
  for (size_t d = 0; d < D; ++d) {
    double* hrow = h + d * N;
    const double* arow = a_bar + d * N;
    const double* brow = b_bar + d * N;
    const double xd = x[d];
    double acc = 0.0;
    for (size_t i = 0; i < N; ++i) {
      const double hv = arow[i] * hrow[i] + brow[i] * xd;
      hrow[i] = hv;
      acc += c[i] * hv;
    }
    y[d] = acc;
  }
}

void s_zoh_step(const double* A, const double* delta, const double* b,
                double* a_bar, double* b_bar, size_t D, size_t N) {
  for (size_t d = 0; d < D; ++d) {
    const double dt = delta[d];
    const double* Arow = A + d * N;
    double* arow = a_bar + d * N;
    double* brow = b_bar + d * N;
    for (size_t i = 0; i < N; ++i) {
      const double z = dt * Arow[i];
      arow[i] = std::exp(z);
      brow[i] = zoh_phi(z) * dt * b[i];
    }
  }
}

}  // namespace

const Ops& scalar() {
  static const Ops ops = {
      "scalar", s_add,  s_sub,      s_mul,   s_scale, s_axpy,
      s_dot,    s_sum,  s_max,      s_vexp,  s_vexp_shift,
      s_vsigmoid, s_vsilu, s_matmul, s_scan_step, s_zoh_step,
  };
  return ops;
}

void matmul_nt(const Ops& o, const double* a, const double* b, double* c,
               size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) c[i * n + j] = o.dot(a + i * k, b + j * k, k);
}

void matmul_tn(const Ops& o, const double* a, const double* b, double* c,
               size_t m, size_t k, size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (size_t l = 0; l < k; ++l) {
    const double* brow = b + l * n;
    for (size_t i = 0; i < m; ++i) o.axpy(a[l * m + i], brow, c + i * n, n);
  }
}

}  // namespace ctrack::kern
