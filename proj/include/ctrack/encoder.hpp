#pragma once

#include <string>
#include <vector>

#include "ctrack/context_scanner.hpp"

namespace ctrack {

struct ModelConfig {
  int search_size = 64;
  int template_size = 32;
  int d_enc = 64;
  int depth = 9;
  int heads = 4;
  int n_ctx = 1;
  std::vector<int> insertion_layers = {3, 6, 9};  // 1-based block indices; empty = taps off
  int d_scan = 32;
  int d_state = 16;
  double mlp_ratio = 4.0;
  std::string context_mode = "unbounded";  // unbounded | windowed
  int window_len = 4;

  // Patch stage stride 4, then two 2x2 merges: total stride 16.
  int stage0_dim() const { return d_enc / 4; }
  int stage1_dim() const { return d_enc / 2; }
  int grid() const { return search_size / 16; }
  int search_tokens() const { return (search_size / 16) * (search_size / 16); }
  int template_tokens() const { return (template_size / 16) * (template_size / 16); }
  int total_tokens() const { return n_ctx + search_tokens() + template_tokens(); }

  void validate() const;
};

struct BlockParams {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor w1, b1, w2, b2;
};

struct EncoderParams {
  Tensor patch_proj;    // [48, d0]
  Tensor pos_search;    // [(H_s/4)^2, d0]
  Tensor pos_template;  // [(H_t/4)^2, d0]
  Tensor pos_ctx;       // [n_ctx, d_enc]
  Tensor merge1;        // [4*d0, d1]
  Tensor merge2;        // [4*d1, d_enc]
  std::vector<BlockParams> blocks;
  Tensor lnf_g, lnf_b;
};

EncoderParams make_encoder(const ModelConfig& cfg, Rng& rng);

enum class FrameKind { kSearch, kTemplate };

struct TokenizedFrame {
  Tensor tokens;  // [N, d_enc] after both merge stages
  FrameKind kind = FrameKind::kSearch;
};

// Non-overlapping 4x4 patches, linear projection, learned additive position.
Tensor patch_embed(const EncoderParams& p, const ModelConfig& cfg, const Tensor& image,
                   FrameKind kind);

// 2x2 child merge on a g x g grid: [g^2, d] -> [g^2/4, 2d].
Tensor downsample_stage(const Tensor& tokens, int grid, const Tensor& merge_w);

// patch_embed + both merge stages.
TokenizedFrame tokenize(const EncoderParams& p, const ModelConfig& cfg, const Tensor& image,
                        FrameKind kind);

// Captures the context token's attention over search keys per block
// (head-averaged, renormalized over the search segment).
struct AttnRecorder {
  bool enabled = false;
  double max_row_sum_err = 0.0;

  struct Row {
    int block = 0;
    int ctx_index = 0;
    std::vector<double> weights;  // length N_s, sums to 1
  };
  std::vector<Row> rows;

  void clear() {
    rows.clear();
    max_row_sum_err = 0.0;
  }
  // Rows recorded for one block; rejects use without recording enabled.
  std::vector<std::vector<double>> rows_for_block(int block_id) const;
};

struct EncodeResult {
  Tensor search_features;  // [N_s, d_enc]
  ContextToken c_p;        // refreshed by the last tap (or passed through)
};

// Pre-norm attention+MLP blocks over [c_p; search; template]; after each
// configured block the search slice refreshes the context token through its
// per-layer scanner, and the refreshed token replaces the context slot.
EncodeResult encode(const EncoderParams& p, const ModelConfig& cfg, const ContextToken& c_p,
                    const TokenizedFrame& search, const TokenizedFrame& templ,
                    const std::vector<ContextScannerParams>* taps,
                    std::vector<ContextState>* states, AttnRecorder* rec = nullptr);

}  // namespace ctrack
