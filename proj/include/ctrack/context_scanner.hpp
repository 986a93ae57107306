#pragma once

#include <iosfwd>
#include <vector>

#include "ctrack/ssm.hpp"

namespace ctrack {

// Streaming temporal context over per-frame token features. Frame tokens are
// projected into scanner width and absorbed into a carried hidden state; a
// learned summary slot is then scanned once per frame to emit the summary
// that refreshes the context token. The carried state is the only cross-frame
// medium, so context covers every frame since reset at constant memory.

struct ContextToken {
  Tensor tokens;  // [N_c, D_enc]
};

struct EmptyToken {
  Tensor summary_slot;  // [D_scan], shared across all frames
};

struct ContextScannerParams {
  SsmParams ssm;     // scanner over D_scan channels, N states
  Tensor w_in;       // [D_enc, D_scan] frame-token projection
  EmptyToken empty;  // learned summary slot
  Tensor w_out;      // [D_scan, N_c*D_enc] summary -> context token
  Tensor b_out;      // [N_c*D_enc]
  int n_ctx = 1;
  int d_enc = 0;
};

ContextScannerParams make_context_scanner(int d_enc, int d_scan, int d_state, int n_ctx,
                                          Rng& rng);

// kWindowed realizes the fixed-window baseline: the summary at frame i is
// recomputed from scratch over the most recent window_len frames instead of
// carrying state from the start of the sequence.
enum class ContextMode { kUnbounded, kWindowed };

struct ContextState {
  ScanState carried;  // H handed from frame i to frame i+1
  int64_t frame_index = 0;
  int layer_id = 0;
  bool pending_frame = false;  // a frame was absorbed since the last emit
  ContextMode mode = ContextMode::kUnbounded;
  int window_len = 0;
  std::vector<Tensor> window;  // windowed mode: projected tokens, newest last
};

ContextState fresh_state(const ContextScannerParams& p, int layer_id,
                         ContextMode mode = ContextMode::kUnbounded, int window_len = 0);

// Per-token linear projection into scanner width (order preserving).
Tensor project_frame(const Tensor& frame_tokens, const Tensor& w_in);

// Runs the scanner over one frame's projected tokens starting from the
// carried state. The frame counter moves on emit, not here.
void absorb_frame(const ContextScannerParams& p, ContextState& state,
                  const Tensor& frame_tokens_scan);

// One extra scan step on the summary slot; returns the emitted summary and
// advances the state to exactly what the next frame starts from.
Tensor emit_summary(const ContextScannerParams& p, ContextState& state);

// Full replacement: c_p' = linear(y_summary), reshaped to [N_c, D_enc].
ContextToken update_context_token(const ContextScannerParams& p, const Tensor& y_summary);

// Snapshot round-trip (bit-exact); used by CLI pause/resume.
void save_context_state(std::ostream& os, const ContextState& s);
ContextState load_context_state(std::istream& is);

}  // namespace ctrack
