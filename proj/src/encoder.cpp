#include "ctrack/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace ctrack {

void ModelConfig::validate() const {
  CT_CHECK(search_size % 16 == 0 && search_size > 0, "model: search_size must be a multiple of 16");
  CT_CHECK(template_size % 16 == 0 && template_size > 0,
           "model: template_size must be a multiple of 16");
  CT_CHECK(d_enc % 4 == 0 && d_enc >= 8, "model: d_enc must be a multiple of 4 and >= 8");
  CT_CHECK(d_enc % heads == 0, "model: heads must divide d_enc");
  CT_CHECK(depth >= 1, "model: depth must be >= 1");
  CT_CHECK(n_ctx >= 1, "model: n_ctx must be >= 1");
  CT_CHECK(mlp_ratio > 0.0, "model: mlp_ratio must be positive");
  CT_CHECK(context_mode == "unbounded" || context_mode == "windowed",
           "model: context_mode must be unbounded|windowed");
  CT_CHECK(context_mode != "windowed" || window_len >= 1,
           "model: windowed context needs window_len >= 1");
  int prev = 0;
  for (int l : insertion_layers) {
    CT_CHECK(l >= 1 && l <= depth, "model: insertion layer ", l, " outside [1,", depth, "]");
    CT_CHECK(l > prev, "model: insertion_layers must be strictly increasing");
    prev = l;
  }
}

namespace {

Tensor randn(Rng& rng, Shape s, double std) {
  std::vector<double> v(size_t(shape_numel(s)));
  for (double& x : v) x = rng.normal(0.0, std);
  Tensor t = Tensor::from(std::move(s), std::move(v));
  t.set_requires_grad(true);
  return t;
}

Tensor grad_ones(Shape s) {
  Tensor t = Tensor::ones(std::move(s));
  t.set_requires_grad(true);
  return t;
}

Tensor grad_zeros(Shape s) {
  Tensor t = Tensor::zeros(std::move(s));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

EncoderParams make_encoder(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d0 = cfg.stage0_dim(), d1 = cfg.stage1_dim(), d = cfg.d_enc;
  EncoderParams p;
  p.patch_proj = randn(rng, {48, d0}, 1.0 / std::sqrt(48.0));
  const int gs = cfg.search_size / 4, gt = cfg.template_size / 4;
  p.pos_search = randn(rng, {gs * gs, d0}, 0.02);
  p.pos_template = randn(rng, {gt * gt, d0}, 0.02);
  p.pos_ctx = randn(rng, {cfg.n_ctx, d}, 0.02);
  p.merge1 = randn(rng, {4 * d0, d1}, 1.0 / std::sqrt(4.0 * d0));
  p.merge2 = randn(rng, {4 * d1, d}, 1.0 / std::sqrt(4.0 * d1));

  const int dm = int(std::lround(cfg.mlp_ratio * d));
  for (int b = 0; b < cfg.depth; ++b) {
    BlockParams bp;
    bp.ln1_g = grad_ones({d});
    bp.ln1_b = grad_zeros({d});
    bp.wq = randn(rng, {d, d}, 0.02);
    bp.bq = grad_zeros({d});
    bp.wk = randn(rng, {d, d}, 0.02);
    bp.bk = grad_zeros({d});
    bp.wv = randn(rng, {d, d}, 0.02);
    bp.bv = grad_zeros({d});
    bp.wo = randn(rng, {d, d}, 0.02);
    bp.bo = grad_zeros({d});
    bp.ln2_g = grad_ones({d});
    bp.ln2_b = grad_zeros({d});
    bp.w1 = randn(rng, {d, dm}, 0.02);
    bp.b1 = grad_zeros({dm});
    bp.w2 = randn(rng, {dm, d}, 0.02);
    bp.b2 = grad_zeros({d});
    p.blocks.push_back(std::move(bp));
  }
  p.lnf_g = grad_ones({d});
  p.lnf_b = grad_zeros({d});
  return p;
}

Tensor patch_embed(const EncoderParams& p, const ModelConfig& cfg, const Tensor& image,
                   FrameKind kind) {
  CT_CHECK(image.ndim() == 3 && image.dim(0) == 3, "patch_embed: image must be [3,H,W], got ",
           image.shape_str());
  const int H = image.dim(1), W = image.dim(2);
  CT_CHECK(H % 16 == 0 && W % 16 == 0, "patch_embed: image sides must be a multiple of 16, got ",
           H, "x", W);
  const int expect = kind == FrameKind::kSearch ? cfg.search_size : cfg.template_size;
  CT_CHECK(H == expect && W == expect, "patch_embed: expected ", expect, "x", expect, " for this ",
           (kind == FrameKind::kSearch ? "search" : "template"), " frame, got ", H, "x", W);

  const int gh = H / 4, gw = W / 4;
  std::vector<double> patches(size_t(gh) * gw * 48);
  const double* img = image.ptr();
  for (int i = 0; i < gh; ++i)
    for (int j = 0; j < gw; ++j) {
      double* row = patches.data() + (size_t(i) * gw + j) * 48;
      int k = 0;
      for (int c = 0; c < 3; ++c)
        for (int dy = 0; dy < 4; ++dy)
          for (int dx = 0; dx < 4; ++dx)
            row[k++] = img[(size_t(c) * H + (4 * i + dy)) * W + (4 * j + dx)];
    }
  Tensor pm = Tensor::from({gh * gw, 48}, std::move(patches));
  const Tensor& pos = kind == FrameKind::kSearch ? p.pos_search : p.pos_template;
  return add(matmul(pm, p.patch_proj), pos);
}

Tensor downsample_stage(const Tensor& tokens, int grid, const Tensor& merge_w) {
  CT_CHECK(tokens.ndim() == 2 && tokens.rows() == grid * grid,
           "downsample_stage: token count ", tokens.rows(), " does not match grid ", grid, "x",
           grid);
  CT_CHECK(grid % 2 == 0, "downsample_stage: odd grid ", grid, " rejected");
  const int g2 = grid / 2;
  std::vector<int> i00, i01, i10, i11;
  for (int i = 0; i < g2; ++i)
    for (int j = 0; j < g2; ++j) {
      i00.push_back((2 * i) * grid + 2 * j);
      i01.push_back((2 * i) * grid + 2 * j + 1);
      i10.push_back((2 * i + 1) * grid + 2 * j);
      i11.push_back((2 * i + 1) * grid + 2 * j + 1);
    }
  Tensor merged = concat_cols({gather_rows(tokens, i00), gather_rows(tokens, i01),
                               gather_rows(tokens, i10), gather_rows(tokens, i11)});
  return matmul(merged, merge_w);
}

TokenizedFrame tokenize(const EncoderParams& p, const ModelConfig& cfg, const Tensor& image,
                        FrameKind kind) {
  Tensor t = patch_embed(p, cfg, image, kind);
  const int side = kind == FrameKind::kSearch ? cfg.search_size : cfg.template_size;
  t = downsample_stage(t, side / 4, p.merge1);
  t = downsample_stage(t, side / 8, p.merge2);
  return TokenizedFrame{t, kind};
}

std::vector<std::vector<double>> AttnRecorder::rows_for_block(int block_id) const {
  CT_CHECK(enabled, "attention dump requested but recording is disabled");
  std::vector<std::vector<double>> out;
  for (const Row& r : rows)
    if (r.block == block_id) out.push_back(r.weights);
  CT_CHECK(!out.empty(), "no recorded attention for block ", block_id);
  return out;
}

namespace {

Tensor attention(const BlockParams& bp, const Tensor& x, const ModelConfig& cfg, int block_id,
                 AttnRecorder* rec) {
  const int d = cfg.d_enc, nh = cfg.heads, dh = d / nh;
  Tensor q = add_rowvec(matmul(x, bp.wq), bp.bq);
  Tensor k = add_rowvec(matmul(x, bp.wk), bp.bk);
  Tensor v = add_rowvec(matmul(x, bp.wv), bp.bv);

  const int n_ctx = cfg.n_ctx, n_s = cfg.search_tokens();
  std::vector<std::vector<double>> ctx_rows;
  if (rec && rec->enabled)
    ctx_rows.assign(size_t(n_ctx), std::vector<double>(size_t(n_s), 0.0));

  std::vector<Tensor> heads;
  for (int h = 0; h < nh; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor p = softmax_rows(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dh))));
    if (rec && rec->enabled) {
      const int T = p.rows();
      for (int i = 0; i < T; ++i) {
        double s = 0.0;
        for (int j = 0; j < T; ++j) s += p.at(i, j);
        rec->max_row_sum_err = std::fmax(rec->max_row_sum_err, std::fabs(s - 1.0));
      }
      for (int c = 0; c < n_ctx; ++c)
        for (int j = 0; j < n_s; ++j)
          ctx_rows[size_t(c)][size_t(j)] += p.at(c, n_ctx + j) / double(nh);
    }
    heads.push_back(matmul(p, vh));
  }
  if (rec && rec->enabled) {
    for (int c = 0; c < n_ctx; ++c) {
      double s = 0.0;
      for (double w : ctx_rows[size_t(c)]) s += w;
      if (s > 0.0)
        for (double& w : ctx_rows[size_t(c)]) w /= s;
      rec->rows.push_back(AttnRecorder::Row{block_id, c, std::move(ctx_rows[size_t(c)])});
    }
  }
  return add_rowvec(matmul(concat_cols(heads), bp.wo), bp.bo);
}

Tensor mlp(const BlockParams& bp, const Tensor& x) {
  Tensor h = silu(add_rowvec(matmul(x, bp.w1), bp.b1));
  return add_rowvec(matmul(h, bp.w2), bp.b2);
}

}  // namespace

EncodeResult encode(const EncoderParams& p, const ModelConfig& cfg, const ContextToken& c_p,
                    const TokenizedFrame& search, const TokenizedFrame& templ,
                    const std::vector<ContextScannerParams>* taps,
                    std::vector<ContextState>* states, AttnRecorder* rec) {
  cfg.validate();
  const int n_ctx = cfg.n_ctx, n_s = cfg.search_tokens(), n_t = cfg.template_tokens();
  CT_CHECK(c_p.tokens.ndim() == 2 && c_p.tokens.rows() == n_ctx && c_p.tokens.cols() == cfg.d_enc,
           "encode: context segment has shape ", c_p.tokens.shape_str(), ", expected [", n_ctx,
           ",", cfg.d_enc, "]");
  CT_CHECK(search.tokens.rows() == n_s, "encode: search segment has ", search.tokens.rows(),
           " tokens, expected ", n_s);
  CT_CHECK(search.tokens.cols() == cfg.d_enc, "encode: search segment width ",
           search.tokens.cols(), " != d_enc ", cfg.d_enc);
  CT_CHECK(templ.tokens.rows() == n_t, "encode: template segment has ", templ.tokens.rows(),
           " tokens, expected ", n_t);
  CT_CHECK(templ.tokens.cols() == cfg.d_enc, "encode: template segment width ",
           templ.tokens.cols(), " != d_enc ", cfg.d_enc);
  const bool tapping = !cfg.insertion_layers.empty();
  if (tapping) {
    CT_CHECK(taps && states, "encode: insertion layers configured but no taps/states supplied");
    CT_CHECK(taps->size() == cfg.insertion_layers.size() &&
                 states->size() == cfg.insertion_layers.size(),
             "encode: taps/states count must match insertion_layers");
  }

  const int total = n_ctx + n_s + n_t;
  ContextToken c_cur = c_p;
  Tensor h = concat_rows({add(c_cur.tokens, p.pos_ctx), search.tokens, templ.tokens});

  size_t tap_i = 0;
  for (int b = 0; b < cfg.depth; ++b) {
    const BlockParams& bp = p.blocks[size_t(b)];
    h = add(h, attention(bp, layer_norm(h, bp.ln1_g, bp.ln1_b), cfg, b + 1, rec));
    h = add(h, mlp(bp, layer_norm(h, bp.ln2_g, bp.ln2_b)));
    CT_CHECK(h.rows() == total, "encode: token count changed inside a block");

    if (tapping && tap_i < cfg.insertion_layers.size() &&
        cfg.insertion_layers[tap_i] == b + 1) {
      const ContextScannerParams& tp = (*taps)[tap_i];
      ContextState& st = (*states)[tap_i];
      Tensor f_slice = slice_rows(h, n_ctx, n_ctx + n_s);
      absorb_frame(tp, st, project_frame(f_slice, tp.w_in));
      Tensor y = emit_summary(tp, st);
      c_cur = update_context_token(tp, y);
      h = concat_rows({add(c_cur.tokens, p.pos_ctx), slice_rows(h, n_ctx, total)});
      ++tap_i;
    }
  }

  Tensor f = layer_norm(h, p.lnf_g, p.lnf_b);
  return EncodeResult{slice_rows(f, n_ctx, n_ctx + n_s), c_cur};
}

}  // namespace ctrack
