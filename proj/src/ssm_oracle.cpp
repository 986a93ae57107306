#include "ctrack/ssm.hpp"

// Direct-summation oracle for the discrete recurrence. Deliberately naive
// (O(T^2)) and written against the closed form, with no use of the kernel
// layer or any code shared with scan/scan_fixed.

namespace ctrack {

ScanResult scan_oracle(const Tensor& a_bars, const Tensor& b_bars, const Tensor& c_ts,
                       const Tensor& x, const ScanState& h0) {
  CT_CHECK(x.ndim() == 2 && x.dim(0) >= 1, "scan_oracle: empty sequence rejected");
  const int T = x.dim(0), D = x.dim(1);
  CT_CHECK(a_bars.ndim() == 3 && a_bars.dim(0) == T && a_bars.dim(1) == D,
           "scan_oracle: a_bars must be [T,D,N], got ", a_bars.shape_str());
  const int N = a_bars.dim(2);
  CT_CHECK(b_bars.shape() == a_bars.shape(), "scan_oracle: b_bars shape mismatch");
  CT_CHECK(c_ts.ndim() == 2 && c_ts.dim(0) == T && c_ts.dim(1) == N,
           "scan_oracle: c_ts must be [T,N]");
  CT_CHECK(h0.h.ndim() == 2 && h0.h.dim(0) == D && h0.h.dim(1) == N,
           "scan_oracle: state shape mismatch");

  Tensor y = Tensor::zeros({T, D});
  Tensor hT = Tensor::zeros({D, N});

  for (int t = 0; t < T; ++t) {
    for (int d = 0; d < D; ++d) {
      double yt = 0.0;
      for (int n = 0; n < N; ++n) {
        // h_t[d,n] = (prod_{j=0..t} abar_j) h0 + sum_{k=0..t} (prod_{j=k+1..t} abar_j) bbar_k x_k
        double decay_h0 = h0.h[int64_t(d) * N + n];
        for (int j = 0; j <= t; ++j)
          decay_h0 *= a_bars[(int64_t(j) * D + d) * N + n];
        double drive = 0.0;
        for (int k = 0; k <= t; ++k) {
          double term = b_bars[(int64_t(k) * D + d) * N + n] * x[int64_t(k) * D + d];
          for (int j = k + 1; j <= t; ++j)
            term *= a_bars[(int64_t(j) * D + d) * N + n];
          drive += term;
        }
        const double h_t = decay_h0 + drive;
        yt += c_ts[int64_t(t) * N + n] * h_t;
        if (t == T - 1) hT.raw()[size_t(d) * N + n] = h_t;
      }
      y.raw()[size_t(t) * D + d] = yt;
    }
  }
  return {y, ScanState{hT}};
}

}  // namespace ctrack
