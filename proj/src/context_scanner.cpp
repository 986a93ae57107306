#include "ctrack/context_scanner.hpp"

#include "ctrack/binio.hpp"

#include <cmath>
#include <istream>
#include <ostream>

namespace ctrack {

ContextScannerParams make_context_scanner(int d_enc, int d_scan, int d_state, int n_ctx,
                                          Rng& rng) {
  CT_CHECK(d_enc >= 1 && d_scan >= 1 && d_state >= 1 && n_ctx >= 1,
           "context scanner dimensions must be positive");
  ContextScannerParams p;
  p.ssm = make_ssm_params(d_scan, d_state, rng);
  p.n_ctx = n_ctx;
  p.d_enc = d_enc;

  auto randn = [&](Shape s, double std) {
    std::vector<double> v(size_t(shape_numel(s)));
    for (double& x : v) x = rng.normal(0.0, std);
    Tensor t = Tensor::from(std::move(s), std::move(v));
    t.set_requires_grad(true);
    return t;
  };
  p.w_in = randn({d_enc, d_scan}, 1.0 / std::sqrt(double(d_enc)));
  p.empty.summary_slot = randn({d_scan}, 0.5);
  p.w_out = randn({d_scan, n_ctx * d_enc}, 1.0 / std::sqrt(double(d_scan)));
  p.b_out = Tensor::zeros({n_ctx * d_enc});
  p.b_out.set_requires_grad(true);
  return p;
}

ContextState fresh_state(const ContextScannerParams& p, int layer_id, ContextMode mode,
                         int window_len) {
  CT_CHECK(mode == ContextMode::kUnbounded || window_len >= 1,
           "windowed context requires window_len >= 1");
  ContextState s;
  s.carried = zero_state(p.ssm.d_model, p.ssm.d_state);
  s.frame_index = 0;
  s.layer_id = layer_id;
  s.pending_frame = false;
  s.mode = mode;
  s.window_len = window_len;
  return s;
}

Tensor project_frame(const Tensor& frame_tokens, const Tensor& w_in) {
  CT_CHECK(frame_tokens.ndim() == 2 && frame_tokens.dim(0) >= 1,
           "project_frame: need [L,D_enc] with L >= 1, got ", frame_tokens.shape_str());
  return matmul(frame_tokens, w_in);
}

void absorb_frame(const ContextScannerParams& p, ContextState& state,
                  const Tensor& frame_tokens_scan) {
  CT_CHECK(frame_tokens_scan.ndim() == 2 && frame_tokens_scan.dim(0) >= 1,
           "absorb_frame: empty frame rejected");
  CT_CHECK(frame_tokens_scan.cols() == p.ssm.d_model, "absorb_frame: token width ",
           frame_tokens_scan.cols(), " != scanner width ", p.ssm.d_model);
  CT_CHECK(frame_tokens_scan.all_finite() && state.carried.h.all_finite(),
           "absorb_frame: inputs must be finite");
  if (state.mode == ContextMode::kWindowed) {
    state.window.push_back(frame_tokens_scan);
    while (int(state.window.size()) > state.window_len)
      state.window.erase(state.window.begin());
  } else {
    ScanResult r = scan(p.ssm, frame_tokens_scan, state.carried);
    state.carried = r.state;
  }
  state.pending_frame = true;
}

Tensor emit_summary(const ContextScannerParams& p, ContextState& state) {
  CT_CHECK(state.pending_frame, "emit_summary: no frame absorbed since reset or last emit");
  const int d = p.ssm.d_model;
  Tensor slot = reshape(p.empty.summary_slot, {1, d});
  Tensor y;
  if (state.mode == ContextMode::kWindowed) {
    // Rebuild the summary over the retained window only, from a zero state.
    std::vector<Tensor> seq;
    for (const Tensor& f : state.window) {
      seq.push_back(f);
      seq.push_back(slot);
    }
    Tensor tokens = concat_rows(seq);
    ScanResult r = scan(p.ssm, tokens, zero_state(p.ssm.d_model, p.ssm.d_state));
    y = reshape(slice_rows(r.y, tokens.rows() - 1, tokens.rows()), {d});
    state.carried = r.state;
  } else {
    ScanResult r = scan(p.ssm, slot, state.carried);
    y = reshape(r.y, {d});
    state.carried = r.state;
  }
  state.frame_index += 1;
  state.pending_frame = false;
  return y;
}

ContextToken update_context_token(const ContextScannerParams& p, const Tensor& y_summary) {
  CT_CHECK(y_summary.ndim() == 1 && y_summary.dim(0) == p.ssm.d_model,
           "update_context_token: summary must be [", p.ssm.d_model, "], got ",
           y_summary.shape_str());
  Tensor flat = add_rowvec(matmul(reshape(y_summary, {1, p.ssm.d_model}), p.w_out),
                           p.b_out);
  return ContextToken{reshape(flat, {p.n_ctx, p.d_enc})};
}

// ---- snapshot IO ----

namespace {

using binio::get_tensor;
using binio::get_u64;
using binio::put_tensor;
using binio::put_u64;

constexpr uint64_t kStateMagic = 0x43545354u;  // "CTST"

}  // namespace

void save_context_state(std::ostream& os, const ContextState& s) {
  put_u64(os, kStateMagic);
  put_u64(os, uint64_t(s.layer_id));
  put_u64(os, uint64_t(s.frame_index));
  put_u64(os, s.pending_frame ? 1 : 0);
  put_u64(os, s.mode == ContextMode::kWindowed ? 1 : 0);
  put_u64(os, uint64_t(s.window_len));
  put_tensor(os, s.carried.h);
  put_u64(os, uint64_t(s.window.size()));
  for (const Tensor& t : s.window) put_tensor(os, t);
}

ContextState load_context_state(std::istream& is) {
  CT_CHECK(get_u64(is) == kStateMagic, "context snapshot: bad magic");
  ContextState s;
  s.layer_id = int(get_u64(is));
  s.frame_index = int64_t(get_u64(is));
  s.pending_frame = get_u64(is) != 0;
  s.mode = get_u64(is) != 0 ? ContextMode::kWindowed : ContextMode::kUnbounded;
  s.window_len = int(get_u64(is));
  s.carried.h = get_tensor(is);
  const uint64_t wn = get_u64(is);
  for (uint64_t i = 0; i < wn; ++i) s.window.push_back(get_tensor(is));
  return s;
}

}  // namespace ctrack
