#include "ctrack/ssm.hpp"

#include <cmath>
#include <vector>

#include "ctrack/kernels.hpp"

namespace ctrack {

namespace {
const kern::Ops& K() { return kern::active(); }
}

SsmParams make_ssm_params(int d_model, int d_state, Rng& rng) {
  CT_CHECK(d_model >= 1 && d_state >= 1, "ssm: d_model/d_state must be positive");
  SsmParams p;
  p.d_model = d_model;
  p.d_state = d_state;

  std::vector<double> alog(size_t(d_model) * size_t(d_state), 0.0);
  for (int d = 0; d < d_model; ++d)
    for (int n = 0; n < d_state; ++n) alog[size_t(d) * d_state + n] = std::log(double(n + 1));
  p.a_log = Tensor::from({d_model, d_state}, std::move(alog));

  auto randn = [&](Shape s, double std) {
    std::vector<double> v(size_t(shape_numel(s)));
    for (double& x : v) x = rng.normal(0.0, std);
    return Tensor::from(std::move(s), std::move(v));
  };
  p.w_delta = randn({d_model, d_model}, 0.02);

  // Bias chosen so initial timescales land log-uniformly in [1e-3, 0.1].
  std::vector<double> bd(static_cast<size_t>(d_model), 0.0);
  for (double& x : bd) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(0.1)));
    x = std::log(std::expm1(dt));
  }
  p.b_delta = Tensor::from({d_model}, std::move(bd));

  const double proj_std = 1.0 / std::sqrt(double(d_model));
  p.w_b = randn({d_model, d_state}, proj_std);
  p.w_c = randn({d_model, d_state}, proj_std);

  for (Tensor* t : {&p.a_log, &p.w_delta, &p.b_delta, &p.w_b, &p.w_c})
    t->set_requires_grad(true);
  return p;
}

ScanState zero_state(int d_model, int d_state) {
  return ScanState{Tensor::zeros({d_model, d_state})};
}

SelectiveInputs select_params(const SsmParams& p, const Tensor& x) {
  CT_CHECK(x.ndim() == 2 && x.cols() == p.d_model, "select_params: input must be [T,",
           p.d_model, "], got ", x.shape_str());
  CT_CHECK(x.all_finite(), "select_params: input must be finite");
  SelectiveInputs s;
  s.delta = softplus(add_rowvec(matmul(x, p.w_delta), p.b_delta));
  s.b = matmul(x, p.w_b);
  s.c = matmul(x, p.w_c);
  return s;
}

std::pair<Tensor, Tensor> discretize(const Tensor& A, const Tensor& b_step,
                                     const Tensor& delta_step) {
  CT_CHECK(A.ndim() == 2, "discretize: A must be [D,N], got ", A.shape_str());
  const int D = A.rows(), N = A.cols();
  CT_CHECK(b_step.ndim() == 1 && b_step.dim(0) == N, "discretize: b_step must be [", N, "]");
  CT_CHECK(delta_step.ndim() == 1 && delta_step.dim(0) == D, "discretize: delta_step must be [",
           D, "]");
  for (int64_t i = 0; i < delta_step.numel(); ++i)
    CT_CHECK(delta_step[i] > 0.0, "discretize: nonpositive delta at index ", i, " (",
             delta_step[i], ")");
  for (int64_t i = 0; i < A.numel(); ++i)
    CT_CHECK(A[i] < 0.0, "discretize: A must be strictly negative, found ", A[i],
             " at flat index ", i);
  Tensor a_bar = Tensor::zeros({D, N});
  Tensor b_bar = Tensor::zeros({D, N});
  K().zoh_step(A.ptr(), delta_step.ptr(), b_step.ptr(), a_bar.raw().data(), b_bar.raw().data(),
               size_t(D), size_t(N));
  return {a_bar, b_bar};
}

namespace {

// Fused recurrence with hand-written backward-through-time. Inputs are the
// already-selected per-step tensors; chaining into the projections happens
// through their own tape nodes.
struct ScanSaved {
  std::vector<double> h_hist;   // (T+1) * D * N, h_hist[0] = h0
  std::vector<double> a_bars;   // T * D * N
  std::vector<double> b_bars;   // T * D * N
};

void scan_backward(const Tensor& A, const Tensor& delta, const Tensor& b, const Tensor& c,
                   const Tensor& x, const Tensor& h0, const std::shared_ptr<ScanSaved>& saved,
                   const Tensor& gy, const Tensor& ghT, GradTape& tape) {
  const int T = x.rows(), D = x.cols(), N = A.cols();
  const int64_t DN = int64_t(D) * N;

  std::vector<double> gh(static_cast<size_t>(DN), 0.0);
  std::copy(ghT.data().begin(), ghT.data().end(), gh.begin());

  Tensor gA = Tensor::zeros(A.shape());
  Tensor gdelta = Tensor::zeros(delta.shape());
  Tensor gb = Tensor::zeros(b.shape());
  Tensor gc = Tensor::zeros(c.shape());
  Tensor gx = Tensor::zeros(x.shape());
  auto* pA = gA.raw().data();
  auto* pdelta = gdelta.raw().data();
  auto* pb = gb.raw().data();
  auto* pc = gc.raw().data();
  auto* px = gx.raw().data();

  for (int t = T - 1; t >= 0; --t) {
    const double* ht = saved->h_hist.data() + size_t(t + 1) * DN;
    const double* htm1 = saved->h_hist.data() + size_t(t) * DN;
    const double* ab = saved->a_bars.data() + size_t(t) * DN;
    const double* bb = saved->b_bars.data() + size_t(t) * DN;
    for (int d = 0; d < D; ++d) {
      const double gyd = gy[int64_t(t) * D + d];
      const double dt_td = delta[int64_t(t) * D + d];
      const double x_td = x[int64_t(t) * D + d];
      double gx_acc = 0.0;
      double gdelta_acc = 0.0;
      for (int n = 0; n < N; ++n) {
        const int64_t dn = int64_t(d) * N + n;
        // emission y_t[d] = sum_n c[t,n] * h_t[d,n]
        pc[int64_t(t) * N + n] += gyd * ht[dn];
        double ghdn = gh[size_t(dn)] + gyd * c[int64_t(t) * N + n];
        // recurrence h_t = a_bar h_{t-1} + b_bar x_t
        const double ga_bar = ghdn * htm1[dn];
        const double gb_bar = ghdn * x_td;
        gx_acc += ghdn * bb[dn];
        const double Adn = A[dn];
        const double z = dt_td * Adn;
        const double phi = kern::zoh_phi(z);
        const double phid = kern::zoh_phi_deriv(z);
        const double b_tn = b[int64_t(t) * N + n];
        const double dz = ga_bar * ab[dn] + gb_bar * phid * dt_td * b_tn;
        gdelta_acc += dz * Adn + gb_bar * phi * b_tn;
        pA[dn] += dz * dt_td;
        pb[int64_t(t) * N + n] += gb_bar * phi * dt_td;
        gh[size_t(dn)] = ghdn * ab[dn];
      }
      px[int64_t(t) * D + d] += gx_acc;
      pdelta[int64_t(t) * D + d] += gdelta_acc;
    }
  }

  tape.accumulate(A, gA);
  tape.accumulate(delta, gdelta);
  tape.accumulate(b, gb);
  tape.accumulate(c, gc);
  tape.accumulate(x, gx);
  Tensor gh0 = Tensor::from(h0.shape(), std::move(gh));
  tape.accumulate(h0, gh0);
}

ScanResult scan_core(const Tensor& A, const SelectiveInputs& sel, const Tensor& x,
                     const Tensor& h0) {
  const int T = x.rows(), D = x.cols(), N = A.cols();
  const int64_t DN = int64_t(D) * N;

  Tensor y = Tensor::zeros({T, D});
  Tensor hT = Tensor::zeros({D, N});

  auto saved = std::make_shared<ScanSaved>();
  saved->h_hist.resize(size_t(T + 1) * DN);
  saved->a_bars.resize(size_t(T) * DN);
  saved->b_bars.resize(size_t(T) * DN);
  std::copy(h0.data().begin(), h0.data().end(), saved->h_hist.begin());

  std::vector<double> h(h0.data().begin(), h0.data().end());
  auto* yp = y.raw().data();
  for (int t = 0; t < T; ++t) {
    double* ab = saved->a_bars.data() + size_t(t) * DN;
    double* bb = saved->b_bars.data() + size_t(t) * DN;
    K().zoh_step(A.ptr(), sel.delta.ptr() + int64_t(t) * D, sel.b.ptr() + int64_t(t) * N, ab, bb,
                 size_t(D), size_t(N));
    K().scan_step(ab, bb, x.ptr() + int64_t(t) * D, sel.c.ptr() + int64_t(t) * N, h.data(),
                  yp + int64_t(t) * D, size_t(D), size_t(N));
    std::copy(h.begin(), h.end(), saved->h_hist.begin() + size_t(t + 1) * DN);
  }
  std::copy(h.begin(), h.end(), hT.raw().begin());

  bool wants_grad = false;
  for (const Tensor* t : {&A, &sel.delta, &sel.b, &sel.c, &x, &h0})
    if (t->requires_grad()) wants_grad = true;
  if (wants_grad) {
    y.set_requires_grad(true);
    hT.set_requires_grad(true);
  }
  GradTape* tape = GradTape::current();
  if (wants_grad && tape && grad_enabled()) {
    Tensor A_ = A;
    SelectiveInputs sel_ = sel;
    Tensor x_ = x;
    Tensor h0_ = h0;
    tape->record({y, hT}, [A_, sel_, x_, h0_, saved](const std::vector<Tensor>& gs, GradTape& tp) {
      scan_backward(A_, sel_.delta, sel_.b, sel_.c, x_, h0_, saved, gs[0], gs[1], tp);
    });
  }
  return {y, ScanState{hT}};
}

}  // namespace

ScanResult scan(const SsmParams& p, const Tensor& x, const ScanState& h0) {
  CT_CHECK(x.ndim() == 2 && x.dim(0) >= 1, "scan: empty sequence rejected");
  CT_CHECK(x.cols() == p.d_model, "scan: input width ", x.cols(), " != d_model ", p.d_model);
  CT_CHECK(h0.h.ndim() == 2 && h0.h.rows() == p.d_model && h0.h.cols() == p.d_state,
           "scan: state shape ", h0.h.shape_str(), " does not match [", p.d_model, ",", p.d_state,
           "]");
  CT_CHECK(h0.h.all_finite(), "scan: initial state must be finite");
  SelectiveInputs sel = select_params(p, x);
  Tensor A = neg(exp(p.a_log));
  return scan_core(A, sel, x, h0.h);
}

ScanResult scan_fixed(const Tensor& a_bars, const Tensor& b_bars, const Tensor& c_ts,
                      const Tensor& x, const ScanState& h0) {
  CT_CHECK(x.ndim() == 2, "scan_fixed: x must be [T,D]");
  const int T = x.rows(), D = x.cols();
  CT_CHECK(a_bars.ndim() == 3 && a_bars.dim(0) == T && a_bars.dim(1) == D,
           "scan_fixed: a_bars must be [T,D,N], got ", a_bars.shape_str());
  const int N = a_bars.dim(2);
  CT_CHECK(b_bars.shape() == a_bars.shape(), "scan_fixed: b_bars shape mismatch");
  CT_CHECK(c_ts.ndim() == 2 && c_ts.dim(0) == T && c_ts.dim(1) == N,
           "scan_fixed: c_ts must be [T,N]");
  CT_CHECK(h0.h.rows() == D && h0.h.cols() == N, "scan_fixed: state shape mismatch");

  const int64_t DN = int64_t(D) * N;
  Tensor y = Tensor::zeros({T, D});
  std::vector<double> h(h0.h.data().begin(), h0.h.data().end());
  auto* yp = y.raw().data();
  for (int t = 0; t < T; ++t)
    K().scan_step(a_bars.ptr() + size_t(t) * DN, b_bars.ptr() + size_t(t) * DN,
                  x.ptr() + int64_t(t) * D, c_ts.ptr() + int64_t(t) * N, h.data(),
                  yp + int64_t(t) * D, size_t(D), size_t(N));
  Tensor hT = Tensor::from({D, N}, std::move(h));
  return {y, ScanState{hT}};
}

}  // namespace ctrack
