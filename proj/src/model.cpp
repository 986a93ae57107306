#include "ctrack/model.hpp"

namespace ctrack {

Model build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng = Rng(seed).fork(hash_str("model-init"));
  m.enc = make_encoder(cfg, rng);
  m.head = make_head(cfg.d_enc, rng);
  for (size_t i = 0; i < cfg.insertion_layers.size(); ++i)
    m.taps.push_back(make_context_scanner(cfg.d_enc, cfg.d_scan, cfg.d_state, cfg.n_ctx, rng));
  std::vector<double> c0(size_t(cfg.n_ctx) * cfg.d_enc);
  for (double& v : c0) v = rng.normal(0.0, 0.02);
  m.c_init = Tensor::from({cfg.n_ctx, cfg.d_enc}, std::move(c0));
  m.c_init.set_requires_grad(true);
  return m;
}

std::vector<NamedParam> collect_params(const Model& m) {
  std::vector<NamedParam> out;
  auto add = [&](std::string name, const Tensor& t, bool backbone) {
    out.push_back(NamedParam{std::move(name), t, backbone});
  };

  add("enc.patch_proj", m.enc.patch_proj, true);
  add("enc.pos_search", m.enc.pos_search, true);
  add("enc.pos_template", m.enc.pos_template, true);
  add("enc.pos_ctx", m.enc.pos_ctx, true);
  add("enc.merge1", m.enc.merge1, true);
  add("enc.merge2", m.enc.merge2, true);
  for (size_t b = 0; b < m.enc.blocks.size(); ++b) {
    const BlockParams& bp = m.enc.blocks[b];
    const std::string pre = "enc.block" + std::to_string(b + 1) + ".";
    add(pre + "ln1_g", bp.ln1_g, true);
    add(pre + "ln1_b", bp.ln1_b, true);
    add(pre + "wq", bp.wq, true);
    add(pre + "bq", bp.bq, true);
    add(pre + "wk", bp.wk, true);
    add(pre + "bk", bp.bk, true);
    add(pre + "wv", bp.wv, true);
    add(pre + "bv", bp.bv, true);
    add(pre + "wo", bp.wo, true);
    add(pre + "bo", bp.bo, true);
    add(pre + "ln2_g", bp.ln2_g, true);
    add(pre + "ln2_b", bp.ln2_b, true);
    add(pre + "w1", bp.w1, true);
    add(pre + "b1", bp.b1, true);
    add(pre + "w2", bp.w2, true);
    add(pre + "b2", bp.b2, true);
  }
  add("enc.lnf_g", m.enc.lnf_g, true);
  add("enc.lnf_b", m.enc.lnf_b, true);

  auto add_head = [&](const char* n, const Tensor& t) { add(std::string("head.") + n, t, false); };
  add_head("w1c", m.head.w1c);
  add_head("b1c", m.head.b1c);
  add_head("w2c", m.head.w2c);
  add_head("b2c", m.head.b2c);
  add_head("w1s", m.head.w1s);
  add_head("b1s", m.head.b1s);
  add_head("w2s", m.head.w2s);
  add_head("b2s", m.head.b2s);
  add_head("w1o", m.head.w1o);
  add_head("b1o", m.head.b1o);
  add_head("w2o", m.head.w2o);
  add_head("b2o", m.head.b2o);

  for (size_t i = 0; i < m.taps.size(); ++i) {
    const ContextScannerParams& tp = m.taps[i];
    const std::string pre = "tap" + std::to_string(i) + ".";
    add(pre + "a_log", tp.ssm.a_log, false);
    add(pre + "w_delta", tp.ssm.w_delta, false);
    add(pre + "b_delta", tp.ssm.b_delta, false);
    add(pre + "w_b", tp.ssm.w_b, false);
    add(pre + "w_c", tp.ssm.w_c, false);
    add(pre + "w_in", tp.w_in, false);
    add(pre + "empty", tp.empty.summary_slot, false);
    add(pre + "w_out", tp.w_out, false);
    add(pre + "b_out", tp.b_out, false);
  }
  add("c_init", m.c_init, false);
  return out;
}

ContextMode model_context_mode(const ModelConfig& cfg) {
  return cfg.context_mode == "windowed" ? ContextMode::kWindowed : ContextMode::kUnbounded;
}

std::vector<ContextState> fresh_states(const Model& m) {
  std::vector<ContextState> states;
  for (size_t i = 0; i < m.taps.size(); ++i)
    states.push_back(fresh_state(m.taps[i], m.cfg.insertion_layers[i], model_context_mode(m.cfg),
                                 m.cfg.window_len));
  return states;
}

FrameForward forward_frame(const Model& m, const Tensor& search_image,
                           const TokenizedFrame& templ, ContextToken& c_p,
                           std::vector<ContextState>& states, AttnRecorder* rec) {
  TokenizedFrame s = tokenize(m.enc, m.cfg, search_image, FrameKind::kSearch);
  const bool tapping = !m.cfg.insertion_layers.empty();
  EncodeResult r = encode(m.enc, m.cfg, c_p, s, templ, tapping ? &m.taps : nullptr,
                          tapping ? &states : nullptr, rec);
  c_p = r.c_p;
  FrameForward f;
  f.features = r.search_features;
  f.maps = head_forward(m.head, r.search_features);
  return f;
}

}  // namespace ctrack
