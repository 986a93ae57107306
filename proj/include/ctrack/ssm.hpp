#pragma once

#include <utility>

#include "ctrack/rng.hpp"
#include "ctrack/tensor.hpp"

namespace ctrack {

// Diagonal input-conditioned state-space scanner. A is stored as log(-A) per
// (channel, state) pair so the evolution term stays strictly negative and
// every discrete step factor lands in (0,1) for positive timescales.
struct SsmParams {
  int d_model = 0;  // D
  int d_state = 0;  // N
  Tensor a_log;     // [D,N]
  Tensor w_delta;   // [D,D]  timescale projection
  Tensor b_delta;   // [D]
  Tensor w_b;       // [D,N]  per-step input projection
  Tensor w_c;       // [D,N]  per-step output projection
};

SsmParams make_ssm_params(int d_model, int d_state, Rng& rng);

// Per-step selections derived from the input sequence.
struct SelectiveInputs {
  Tensor delta;  // [T,D], strictly positive (softplus output)
  Tensor b;      // [T,N]
  Tensor c;      // [T,N]
};

struct ScanState {
  Tensor h;  // [D,N]
};

ScanState zero_state(int d_model, int d_state);

// delta = softplus(x*W_delta + b_delta); b, c linear in x. Differentiable.
SelectiveInputs select_params(const SsmParams& p, const Tensor& x);

// Zero-order-hold discretization of one step: a_bar = exp(delta (x) A),
// b_bar = phi(delta A) * delta (x) b with the small-argument series fallback.
// Pure inspection helper (not tape-recorded); the differentiable path lives
// inside scan. Rejects nonpositive delta and nonnegative A entries.
std::pair<Tensor, Tensor> discretize(const Tensor& A, const Tensor& b_step,
                                     const Tensor& delta_step);

struct ScanResult {
  Tensor y;         // [T,D]
  ScanState state;  // final hidden state, for cross-chunk handoff
};

// Strictly sequential left-to-right recurrence over x [T,D] starting from h0.
// Differentiable through x, a_log, the projections, and h0.
ScanResult scan(const SsmParams& p, const Tensor& x, const ScanState& h0);

// Same recurrence over pre-discretized per-step parameters (a_bars/b_bars
// [T,D,N], c_ts [T,N]). Pure; shares the step kernel with scan.
ScanResult scan_fixed(const Tensor& a_bars, const Tensor& b_bars, const Tensor& c_ts,
                      const Tensor& x, const ScanState& h0);

// Brute-force direct-summation evaluation of the recurrence
//   h_t = (prod_{j<=t} A_j) h0 + sum_k (prod_{j>k} A_j) B_k x_k
// implemented independently of scan/scan_fixed (test oracle).
ScanResult scan_oracle(const Tensor& a_bars, const Tensor& b_bars, const Tensor& c_ts,
                       const Tensor& x, const ScanState& h0);

}  // namespace ctrack
