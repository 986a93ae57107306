#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ctrack/encoder.hpp"
#include "ctrack/rng.hpp"

using namespace ctrack;

namespace {

Tensor random_tensor(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(size_t(shape_numel(s)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(s), std::move(v));
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.search_size = 32;
  cfg.template_size = 16;
  cfg.d_enc = 16;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.n_ctx = 1;
  cfg.insertion_layers = {1, 2};
  cfg.d_scan = 8;
  cfg.d_state = 4;
  cfg.mlp_ratio = 2.0;
  return cfg;
}

struct TinyModel {
  ModelConfig cfg;
  EncoderParams enc;
  std::vector<ContextScannerParams> taps;
  Tensor c_init;
};

TinyModel make_tiny(uint64_t seed, std::vector<int> insertion) {
  TinyModel m;
  m.cfg = tiny_config();
  m.cfg.insertion_layers = std::move(insertion);
  Rng rng(seed);
  m.enc = make_encoder(m.cfg, rng);
  for (size_t i = 0; i < m.cfg.insertion_layers.size(); ++i)
    m.taps.push_back(make_context_scanner(m.cfg.d_enc, m.cfg.d_scan, m.cfg.d_state, m.cfg.n_ctx, rng));
  m.c_init = random_tensor(rng, {m.cfg.n_ctx, m.cfg.d_enc}, -0.1, 0.1);
  return m;
}

}  // namespace

TEST_CASE("patch_embed: counts, linearity, locality") {
  ModelConfig cfg;
  cfg.search_size = 64;
  cfg.template_size = 32;
  cfg.d_enc = 16;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.insertion_layers = {};
  Rng rng(7);
  EncoderParams p = make_encoder(cfg, rng);

  Tensor img = random_tensor(rng, {3, 64, 64}, 0.0, 1.0);
  Tensor tokens = patch_embed(p, cfg, img, FrameKind::kSearch);
  CHECK(tokens.rows() == 256);  // 64^2 / 4^2
  CHECK(tokens.cols() == cfg.stage0_dim());

  // zero image + zero positional table -> zero tokens
  EncoderParams pz = p;
  pz.pos_search = Tensor::zeros(p.pos_search.shape());
  Tensor zt = patch_embed(pz, cfg, Tensor::zeros({3, 64, 64}), FrameKind::kSearch);
  for (int64_t i = 0; i < zt.numel(); ++i) CHECK(zt[i] == 0.0);

  // a one-patch change only moves that token (pre-attention locality)
  Tensor img2 = img.clone();
  // patch (2,3): pixels rows 8..11, cols 12..15
  for (int c = 0; c < 3; ++c)
    for (int dy = 0; dy < 4; ++dy)
      for (int dx = 0; dx < 4; ++dx)
        img2.raw()[(size_t(c) * 64 + 8 + dy) * 64 + 12 + dx] += 0.5;
  Tensor t2 = patch_embed(p, cfg, img2, FrameKind::kSearch);
  const int changed = 2 * 16 + 3;
  for (int r = 0; r < 256; ++r) {
    double diff = 0.0;
    for (int c = 0; c < tokens.cols(); ++c)
      diff = std::fmax(diff, std::fabs(tokens.at(r, c) - t2.at(r, c)));
    if (r == changed)
      CHECK(diff > 1e-9);
    else
      CHECK(diff == 0.0);
  }

  CHECK_THROWS_WITH_AS(patch_embed(p, cfg, Tensor::zeros({3, 60, 64}), FrameKind::kSearch),
                       doctest::Contains("multiple of 16"), std::invalid_argument);
}

TEST_CASE("downsample_stage: merge arithmetic and affine constancy") {
  Rng rng(9);
  Tensor merge = random_tensor(rng, {4 * 3, 6});
  Tensor tokens = random_tensor(rng, {256, 3});
  Tensor out = downsample_stage(tokens, 16, merge);
  CHECK(out.rows() == 64);
  CHECK(out.cols() == 6);

  // two stages from a 64x64 image: 256 -> 64 -> 16 = 64^2/16^2 tokens
  Tensor merge2 = random_tensor(rng, {4 * 6, 12});
  Tensor out2 = downsample_stage(out, 8, merge2);
  CHECK(out2.rows() == 16);

  // constant grid stays constant after merging
  Tensor konst = Tensor::full({16, 3}, 0.7);
  Tensor mk = downsample_stage(konst, 4, merge);
  for (int c = 0; c < mk.cols(); ++c)
    for (int r = 1; r < mk.rows(); ++r)
      CHECK(mk.at(r, c) == doctest::Approx(mk.at(0, c)).epsilon(1e-12));

  CHECK_THROWS_WITH_AS(downsample_stage(random_tensor(rng, {9, 3}), 3, merge),
                       doctest::Contains("odd grid"), std::invalid_argument);
}

TEST_CASE("encode: tap bypass is pure and keeps c_p") {
  TinyModel m = make_tiny(100, {});
  Rng rng(5);
  Tensor s_img = random_tensor(rng, {3, 32, 32}, 0.0, 1.0);
  Tensor t_img = random_tensor(rng, {3, 16, 16}, 0.0, 1.0);
  TokenizedFrame s = tokenize(m.enc, m.cfg, s_img, FrameKind::kSearch);
  TokenizedFrame t = tokenize(m.enc, m.cfg, t_img, FrameKind::kTemplate);
  ContextToken c{m.c_init};

  EncodeResult r1 = encode(m.enc, m.cfg, c, s, t, nullptr, nullptr);
  EncodeResult r2 = encode(m.enc, m.cfg, c, s, t, nullptr, nullptr);
  CHECK(r1.search_features.rows() == m.cfg.search_tokens());
  for (int64_t i = 0; i < r1.search_features.numel(); ++i)
    CHECK(r1.search_features[i] == r2.search_features[i]);  // identical inputs, identical outputs
  for (int64_t i = 0; i < c.tokens.numel(); ++i)
    CHECK(r1.c_p.tokens[i] == c.tokens[i]);  // c_p unchanged without taps
}

TEST_CASE("encode: concat length and segment mismatch errors") {
  TinyModel m = make_tiny(101, {1});
  // 32x32 search -> 4 tokens, 16x16 template -> 1 token, N_c = 1 -> 6 total
  CHECK(m.cfg.total_tokens() == 4 + 1 + 1);

  Rng rng(6);
  TokenizedFrame s = tokenize(m.enc, m.cfg, random_tensor(rng, {3, 32, 32}, 0.0, 1.0),
                              FrameKind::kSearch);
  TokenizedFrame t = tokenize(m.enc, m.cfg, random_tensor(rng, {3, 16, 16}, 0.0, 1.0),
                              FrameKind::kTemplate);
  ContextToken c{m.c_init};
  std::vector<ContextState> states{fresh_state(m.taps[0], 1)};

  TokenizedFrame bad = s;
  bad.tokens = random_tensor(rng, {3, m.cfg.d_enc});
  CHECK_THROWS_WITH_AS(encode(m.enc, m.cfg, c, bad, t, &m.taps, &states),
                       doctest::Contains("search segment"), std::invalid_argument);
  TokenizedFrame badt = t;
  badt.tokens = random_tensor(rng, {2, m.cfg.d_enc});
  CHECK_THROWS_WITH_AS(encode(m.enc, m.cfg, c, s, badt, &m.taps, &states),
                       doctest::Contains("template segment"), std::invalid_argument);
}

TEST_CASE("encode: permutation equivariance with zeroed positions, taps off") {
  TinyModel m = make_tiny(102, {});
  m.enc.pos_search = Tensor::zeros(m.enc.pos_search.shape());
  Rng rng(8);
  TokenizedFrame s = tokenize(m.enc, m.cfg, random_tensor(rng, {3, 32, 32}, 0.0, 1.0),
                              FrameKind::kSearch);
  TokenizedFrame t = tokenize(m.enc, m.cfg, random_tensor(rng, {3, 16, 16}, 0.0, 1.0),
                              FrameKind::kTemplate);
  ContextToken c{m.c_init};

  EncodeResult base = encode(m.enc, m.cfg, c, s, t, nullptr, nullptr);

  std::vector<int> perm = {2, 0, 3, 1};
  TokenizedFrame sp = s;
  sp.tokens = gather_rows(s.tokens, perm);
  EncodeResult permuted = encode(m.enc, m.cfg, c, sp, t, nullptr, nullptr);
  for (int r = 0; r < 4; ++r)
    for (int col = 0; col < m.cfg.d_enc; ++col)
      CHECK(permuted.search_features.at(r, col) ==
            doctest::Approx(base.search_features.at(perm[size_t(r)], col)).epsilon(1e-9));
}

TEST_CASE("encode with taps: context refresh and counter movement") {
  TinyModel m = make_tiny(103, {1, 2});
  Rng rng(10);
  TokenizedFrame s = tokenize(m.enc, m.cfg, random_tensor(rng, {3, 32, 32}, 0.0, 1.0),
                              FrameKind::kSearch);
  TokenizedFrame t = tokenize(m.enc, m.cfg, random_tensor(rng, {3, 16, 16}, 0.0, 1.0),
                              FrameKind::kTemplate);
  ContextToken c{m.c_init};
  std::vector<ContextState> states{fresh_state(m.taps[0], 1), fresh_state(m.taps[1], 2)};

  EncodeResult r = encode(m.enc, m.cfg, c, s, t, &m.taps, &states);
  CHECK(states[0].frame_index == 1);
  CHECK(states[1].frame_index == 1);
  double change = 0.0;
  for (int64_t i = 0; i < r.c_p.tokens.numel(); ++i)
    change = std::fmax(change, std::fabs(r.c_p.tokens[i] - c.tokens[i]));
  CHECK(change > 1e-12);

  // a second frame keeps moving the carried state
  Tensor h_before = states[0].carried.h.clone();
  TokenizedFrame s2 = tokenize(m.enc, m.cfg, random_tensor(rng, {3, 32, 32}, 0.0, 1.0),
                               FrameKind::kSearch);
  encode(m.enc, m.cfg, r.c_p, s2, t, &m.taps, &states);
  CHECK(states[0].frame_index == 2);
  double moved = 0.0;
  for (int64_t i = 0; i < h_before.numel(); ++i)
    moved = std::fmax(moved, std::fabs(h_before[i] - states[0].carried.h[i]));
  CHECK(moved > 1e-12);
}

TEST_CASE("attention recorder: normalized rows, uniform keys, disabled error") {
  TinyModel m = make_tiny(104, {1});
  Rng rng(11);
  TokenizedFrame s = tokenize(m.enc, m.cfg, random_tensor(rng, {3, 32, 32}, 0.0, 1.0),
                              FrameKind::kSearch);
  TokenizedFrame t = tokenize(m.enc, m.cfg, random_tensor(rng, {3, 16, 16}, 0.0, 1.0),
                              FrameKind::kTemplate);
  ContextToken c{m.c_init};
  std::vector<ContextState> states{fresh_state(m.taps[0], 1)};

  AttnRecorder rec;
  rec.enabled = true;
  encode(m.enc, m.cfg, c, s, t, &m.taps, &states, &rec);
  CHECK(rec.max_row_sum_err < 1e-12);  // softmax normalization at every block
  for (int b = 1; b <= m.cfg.depth; ++b) {
    auto rows = rec.rows_for_block(b);
    CHECK(rows.size() == 1);
    double sum = std::accumulate(rows[0].begin(), rows[0].end(), 0.0);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  AttnRecorder off;
  CHECK_THROWS_WITH_AS(off.rows_for_block(1), doctest::Contains("disabled"),
                       std::invalid_argument);

  // identical tokens -> uniform context attention over search keys
  TokenizedFrame su = s;
  su.tokens = Tensor::full({4, m.cfg.d_enc}, 0.3);
  AttnRecorder rec2;
  rec2.enabled = true;
  std::vector<ContextState> states2{fresh_state(m.taps[0], 1)};
  encode(m.enc, m.cfg, c, su, t, &m.taps, &states2, &rec2);
  auto rows = rec2.rows_for_block(1);
  for (double w : rows[0]) CHECK(w == doctest::Approx(0.25).epsilon(1e-10));
}

TEST_CASE("full-pipeline gradient check through encode with taps") {
  TinyModel m = make_tiny(105, {1, 2});
  Rng rng(13);
  TokenizedFrame t = tokenize(m.enc, m.cfg, random_tensor(rng, {3, 16, 16}, 0.0, 1.0),
                              FrameKind::kTemplate);
  Tensor weights = random_tensor(rng, {m.cfg.search_tokens(), m.cfg.d_enc});

  auto f = [&](const Tensor& s_tokens) {
    ContextToken c{m.c_init};
    std::vector<ContextState> states{fresh_state(m.taps[0], 1), fresh_state(m.taps[1], 2)};
    TokenizedFrame s{s_tokens, FrameKind::kSearch};
    EncodeResult r = encode(m.enc, m.cfg, c, s, t, &m.taps, &states);
    return sum(mul(r.search_features, weights));
  };
  Tensor s_tokens = random_tensor(rng, {m.cfg.search_tokens(), m.cfg.d_enc});
  CHECK(grad_check(f, s_tokens, 1e-5) < 1e-4);

  // and through a parameter tensor (first block's value projection)
  auto f_wv = [&](const Tensor& wv) {
    EncoderParams enc2 = m.enc;
    enc2.blocks[0].wv = wv;
    ContextToken c{m.c_init};
    std::vector<ContextState> states{fresh_state(m.taps[0], 1), fresh_state(m.taps[1], 2)};
    TokenizedFrame s{s_tokens, FrameKind::kSearch};
    EncodeResult r = encode(enc2, m.cfg, c, s, t, &m.taps, &states);
    return sum(mul(r.search_features, weights));
  };
  CHECK(grad_check(f_wv, m.enc.blocks[0].wv, 1e-5) < 1e-4);
}
