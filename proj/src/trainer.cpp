#include "ctrack/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

#include "ctrack/binio.hpp"
#include "ctrack/kernels.hpp"

namespace ctrack {

namespace {

class AdamW {
 public:
  AdamW(std::vector<NamedParam> params, double weight_decay)
      : params_(std::move(params)), wd_(weight_decay) {
    slots_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      slots_[i].m.assign(size_t(params_[i].t.numel()), 0.0);
      slots_[i].v.assign(size_t(params_[i].t.numel()), 0.0);
    }
  }

  void step(const std::vector<Tensor>& grads, double lr_backbone, double lr_other) {
    ++t_;
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, double(t_));
    const double bc2 = 1.0 - std::pow(b2, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      const double lr = params_[i].backbone ? lr_backbone : lr_other;
      auto p = params_[i].t.raw();
      auto g = grads[i].data();
      Slot& s = slots_[i];
      const bool decay = params_[i].t.ndim() >= 2;  // matrices only
      for (size_t k = 0; k < p.size(); ++k) {
        if (decay) p[k] -= lr * wd_ * p[k];
        s.m[k] = b1 * s.m[k] + (1.0 - b1) * g[k];
        s.v[k] = b2 * s.v[k] + (1.0 - b2) * g[k] * g[k];
        p[k] -= lr * (s.m[k] / bc1) / (std::sqrt(s.v[k] / bc2) + eps);
      }
    }
  }

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  std::vector<NamedParam> params_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
  double wd_;
};

struct FrameJitter {
  double dx = 0, dy = 0, scale = 1.0;
};

struct MemberTask {
  ClipSample clip;
  std::vector<FrameJitter> jit;
};

struct MemberResult {
  double loss = 0;
  std::vector<Tensor> grads;
};

Crop jittered_search_crop(const Tensor& frame, const BBox& gt, const FrameJitter& j,
                          const DataConfig& dcfg, int out_size) {
  BBox ref = gt;
  ref.w *= j.scale;
  ref.h *= j.scale;
  const double side = dcfg.search_factor * std::sqrt(ref.w * ref.h);
  ref.cx += j.dx * side;
  ref.cy += j.dy * side;
  Crop crop = crop_regions(frame, ref, dcfg.search_factor, out_size);
  BBox in = box_to_crop(gt, crop);
  if (in.cx < 0.05 || in.cx > 0.95 || in.cy < 0.05 || in.cy > 0.95)
    crop = crop_regions(frame, gt, dcfg.search_factor, out_size);  // jitter pushed gt out
  return crop;
}

MemberResult run_member(const Model& model, const std::vector<SyntheticSequence>& pool,
                        const DataConfig& dcfg, const TrainConfig& tcfg,
                        const std::vector<NamedParam>& params, const MemberTask& task) {
  const SyntheticSequence& seq = pool[size_t(task.clip.seq_index)];
  GradTape tape;

  Crop tcrop =
      crop_regions(seq.frame(0), seq.truth(0).box, dcfg.template_factor, model.cfg.template_size);
  TokenizedFrame templ = tokenize(model.enc, model.cfg, tcrop.image, FrameKind::kTemplate);

  ContextToken c_p{model.c_init};
  std::vector<ContextState> states = fresh_states(model);

  Tensor loss_acc;
  for (size_t k = 0; k < task.clip.frames.size(); ++k) {
    const int fi = task.clip.frames[k];
    const FrameTruth& truth = seq.truth(fi);
    Crop crop = jittered_search_crop(seq.frame(fi), truth.box, task.jit[k], dcfg,
                                     model.cfg.search_size);
    BBox gt_in = box_to_crop(truth.box, crop);
    FrameForward ff = forward_frame(model, crop.image, templ, c_p, states, nullptr);
    LossParts lp = total_loss(ff.maps, gt_in, tcfg.lambda1, tcfg.lambda2);
    loss_acc = loss_acc.defined() ? add(loss_acc, lp.total) : lp.total;
  }
  Tensor loss = scale(loss_acc, 1.0 / double(task.clip.frames.size()));
  tape.backward(loss);

  MemberResult r;
  r.loss = loss.item();
  r.grads.reserve(params.size());
  for (const NamedParam& p : params) r.grads.push_back(tape.grad(p.t));
  return r;
}

}  // namespace

TrainResult train(const ModelConfig& mcfg, const DataConfig& dcfg, const TrainConfig& tcfg) {
  mcfg.validate();
  dcfg.validate();
  tcfg.validate();

  Model model = build_model(mcfg, tcfg.seed);
  const std::vector<NamedParam> params = collect_params(model);
  AdamW opt(params, tcfg.weight_decay);

  PoolSpec ps{dcfg.pool_size, dcfg.seq_len, dcfg.canvas, dcfg.difficulty,
              Rng(tcfg.seed).fork(hash_str("train-pool")).next_u64()};
  const std::vector<SyntheticSequence> pool = make_pool(ps);
  Rng sampler = Rng(tcfg.seed).fork(hash_str("sampler"));

  TrainResult out;
  out.curve.reserve(size_t(tcfg.steps));

  const int decay_at = int(tcfg.decay_start_frac * tcfg.steps);
  const int nthreads = std::max(1, std::min(tcfg.threads, tcfg.batch));

  for (int step = 0; step < tcfg.steps; ++step) {
    std::vector<MemberTask> tasks;
    tasks.reserve(size_t(tcfg.batch));
    for (int b = 0; b < tcfg.batch; ++b) {
      MemberTask t;
      t.clip = sample_clip(pool, tcfg.clip_len, dcfg.max_clip_gap, sampler);
      for (size_t k = 0; k < t.clip.frames.size(); ++k) {
        FrameJitter j;
        j.dx = sampler.uniform(-dcfg.jitter_center, dcfg.jitter_center);
        j.dy = sampler.uniform(-dcfg.jitter_center, dcfg.jitter_center);
        j.scale = std::exp(sampler.uniform(-dcfg.jitter_scale, dcfg.jitter_scale));
        t.jit.push_back(j);
      }
      tasks.push_back(std::move(t));
    }

    std::vector<MemberResult> results(size_t(tcfg.batch));
    if (nthreads == 1) {
      for (int b = 0; b < tcfg.batch; ++b)
        results[size_t(b)] = run_member(model, pool, dcfg, tcfg, params, tasks[size_t(b)]);
    } else {
      std::vector<std::thread> workers;
      std::vector<std::exception_ptr> errors(size_t(nthreads));
      for (int w = 0; w < nthreads; ++w) {
        workers.emplace_back([&, w] {
          try {
            for (int b = w; b < tcfg.batch; b += nthreads)
              results[size_t(b)] = run_member(model, pool, dcfg, tcfg, params, tasks[size_t(b)]);
          } catch (...) {
            errors[size_t(w)] = std::current_exception();
          }
        });
      }
      for (auto& t : workers) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }

    // deterministic member-order aggregation
    double loss_mean = 0.0;
    std::vector<Tensor> grad_acc;
    grad_acc.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i) grad_acc.push_back(Tensor::zeros(params[i].t.shape()));
    for (int b = 0; b < tcfg.batch; ++b) {
      loss_mean += results[size_t(b)].loss;
      for (size_t i = 0; i < params.size(); ++i) {
        auto acc = grad_acc[i].raw();
        kern::active().axpy(1.0 / tcfg.batch, results[size_t(b)].grads[i].ptr(), acc.data(),
                            acc.size());
      }
    }
    loss_mean /= tcfg.batch;
    if (!std::isfinite(loss_mean)) throw TrainDivergence(step);

    const double factor = step >= decay_at ? tcfg.decay_factor : 1.0;
    opt.step(grad_acc, tcfg.backbone_lr * factor, tcfg.other_lr() * factor);
    out.curve.push_back(StepRecord{step, loss_mean, tcfg.backbone_lr * factor});
  }

  out.model = std::move(model);
  return out;
}

double smoothed_loss(const std::vector<StepRecord>& curve, int at_step, int window) {
  CT_CHECK(!curve.empty() && at_step >= 0 && at_step < int(curve.size()),
           "smoothed_loss: step out of range");
  const int lo = std::max(0, at_step - window + 1);
  double s = 0.0;
  for (int i = lo; i <= at_step; ++i) s += curve[size_t(i)].loss;
  return s / double(at_step - lo + 1);
}

// ---- streaming inference ----

TrackResult track_sequence(const Model& m, const SyntheticSequence& seq, const TrackOptions& opt,
                           const SessionSnapshot* resume) {
  const ModelConfig& cfg = m.cfg;
  SessionSnapshot st;
  if (resume) {
    st = *resume;
    CT_CHECK(st.c_p.defined(), "track: resume snapshot has no context token");
  } else {
    st.next_frame = 0;
    st.prev_box = seq.truth(0).box;
    st.c_p = m.c_init.clone();
    st.states = fresh_states(m);
  }

  Crop tcrop =
      crop_regions(seq.frame(0), seq.truth(0).box, opt.template_factor, cfg.template_size);
  TokenizedFrame templ = tokenize(m.enc, cfg, tcrop.image, FrameKind::kTemplate);

  const int total = seq.length();
  const int begin = int(st.next_frame);
  const int end = opt.stop_after >= 0 ? std::min(total, begin + opt.stop_after) : total;
  CT_CHECK(begin <= end, "track: snapshot already beyond requested range");

  TrackResult res;
  const double canvas = double(seq.spec().canvas);
  using clock = std::chrono::steady_clock;
  double total_ms = 0.0;

  for (int i = begin; i < end; ++i) {
    Tensor frame = seq.frame(i);  // world rendering is outside the timed tracker step
    const auto t0 = clock::now();

    Crop crop = crop_regions(frame, st.prev_box, opt.search_factor, cfg.search_size);
    ContextToken c{st.c_p};
    if (opt.recorder) opt.recorder->clear();
    FrameForward ff = forward_frame(m, crop.image, templ, c, st.states, opt.recorder);
    st.c_p = c.tokens;
    Decoded dec = decode_bbox(ff.maps);
    BBox box = box_from_crop(dec.box, crop);
    box.cx = std::clamp(box.cx, 0.0, canvas);
    box.cy = std::clamp(box.cy, 0.0, canvas);
    box.w = std::clamp(box.w, 2.0, canvas);
    box.h = std::clamp(box.h, 2.0, canvas);
    st.prev_box = box;
    st.next_frame = i + 1;

    const auto t1 = clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    total_ms += ms;

    FrameTrace tr;
    tr.frame = i;
    tr.box = box;
    tr.score = dec.score;
    tr.latency_ms = ms;
    tr.state_elems = st.c_p.numel();
    for (const ContextState& s : st.states) {
      tr.state_elems += s.carried.h.numel();
      for (const Tensor& w : s.window) tr.state_elems += w.numel();
      tr.state_frame_index.push_back(s.frame_index);
    }
    res.trace.push_back(std::move(tr));

    if (opt.recorder && opt.attn_sink) opt.attn_sink(i, *opt.recorder);
  }

  res.end_state = std::move(st);
  res.fps = total_ms > 0.0 ? 1000.0 * double(end - begin) / total_ms : 0.0;
  return res;
}

namespace {
constexpr uint64_t kSnapMagic = 0x50414e53'54435443ull;
}

void save_snapshot(std::ostream& os, const SessionSnapshot& s, uint64_t config_hash) {
  binio::put_u64(os, kSnapMagic);
  binio::put_u64(os, config_hash);
  binio::put_u64(os, uint64_t(s.next_frame));
  binio::put_f64(os, s.prev_box.cx);
  binio::put_f64(os, s.prev_box.cy);
  binio::put_f64(os, s.prev_box.w);
  binio::put_f64(os, s.prev_box.h);
  binio::put_tensor(os, s.c_p);
  binio::put_u64(os, s.states.size());
  for (const ContextState& cs : s.states) save_context_state(os, cs);
}

SessionSnapshot load_snapshot(std::istream& is, uint64_t expect_hash) {
  CT_CHECK(binio::get_u64(is) == kSnapMagic, "snapshot: bad magic");
  const uint64_t h = binio::get_u64(is);
  CT_CHECK(expect_hash == 0 || h == expect_hash,
           "snapshot: config hash mismatch (snapshot from a different run?)");
  SessionSnapshot s;
  s.next_frame = int64_t(binio::get_u64(is));
  s.prev_box.cx = binio::get_f64(is);
  s.prev_box.cy = binio::get_f64(is);
  s.prev_box.w = binio::get_f64(is);
  s.prev_box.h = binio::get_f64(is);
  s.c_p = binio::get_tensor(is);
  const uint64_t n = binio::get_u64(is);
  for (uint64_t i = 0; i < n; ++i) s.states.push_back(load_context_state(is));
  return s;
}

// ---- metrics ----

namespace {

double safe_iou(const BBox& a, const BBox& b) {
  if (!bbox_positive(a) || !bbox_positive(b)) return 0.0;
  return iou_value(a, b);
}

}  // namespace

EvalReport eval_metrics(const std::vector<BBox>& pred, const std::vector<BBox>& gt,
                        const std::vector<bool>& occluded, int grid, double search_factor) {
  CT_CHECK(pred.size() == gt.size() && gt.size() == occluded.size(),
           "eval_metrics: length mismatch: ", pred.size(), " predictions vs ", gt.size(),
           " ground truths vs ", occluded.size(), " flags");
  CT_CHECK(!pred.empty(), "eval_metrics: empty input");

  EvalReport r;
  r.frames = int(pred.size());

  std::vector<double> ious;
  int prec_hits = 0, valid = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (occluded[i]) continue;
    ++valid;
    const double iou = safe_iou(pred[i], gt[i]);
    ious.push_back(iou);
    const double cell = search_factor * std::sqrt(gt[i].w * gt[i].h) / grid;
    const double cerr = std::hypot(pred[i].cx - gt[i].cx, pred[i].cy - gt[i].cy);
    if (cerr < 2.0 * cell) ++prec_hits;
  }
  CT_CHECK(valid > 0, "eval_metrics: every frame is occluded");

  r.mean_iou = 0.0;
  for (double v : ious) r.mean_iou += v;
  r.mean_iou /= double(valid);
  r.precision = double(prec_hits) / double(valid);

  r.success.resize(21);
  for (int k = 0; k <= 20; ++k) {
    const double tau = 0.05 * k;
    int hits = 0;
    for (double v : ious)
      if (v > tau) ++hits;
    r.success[size_t(k)] = double(hits) / double(valid);
  }
  // AUC over thresholds in [0,1): perfect tracking scores 1, zero overlap 0
  r.auc = 0.0;
  for (int k = 0; k < 20; ++k) r.auc += r.success[size_t(k)];
  r.auc /= 20.0;

  // recovery: the five frames after each occlusion interval
  std::vector<double> rec;
  for (size_t i = 1; i < pred.size(); ++i) {
    if (occluded[i - 1] && !occluded[i]) {
      for (size_t k = i; k < std::min(pred.size(), i + 5); ++k)
        if (!occluded[k]) rec.push_back(safe_iou(pred[k], gt[k]));
    }
  }
  if (!rec.empty()) {
    for (double v : rec) r.recovery_iou += v;
    r.recovery_iou /= double(rec.size());
  }
  return r;
}

EvalReport evaluate_track(const Model& m, const SyntheticSequence& seq, const TrackOptions& opt) {
  TrackResult tr = track_sequence(m, seq, opt);
  std::vector<BBox> pred, gt;
  std::vector<bool> occ;
  for (const FrameTrace& f : tr.trace) {
    pred.push_back(f.box);
    gt.push_back(seq.truth(f.frame).box);
    occ.push_back(seq.truth(f.frame).occluded);
  }
  EvalReport r = eval_metrics(pred, gt, occ, m.cfg.grid(), opt.search_factor);
  r.fps = tr.fps;
  return r;
}

// ---- ablation harness ----

std::vector<std::pair<std::string, ModelConfig>> ablation_variants(const ModelConfig& base,
                                                                   const std::string& axis) {
  std::vector<std::pair<std::string, ModelConfig>> v;
  if (axis == "context_onoff") {
    ModelConfig off = base;
    off.insertion_layers = {};
    v.emplace_back("context_off", off);
    v.emplace_back("context_on", base);
  } else if (axis == "cp_length") {
    for (int n = 1; n <= 4; ++n) {
      ModelConfig c = base;
      c.n_ctx = n;
      v.emplace_back("cp_" + std::to_string(n), c);
    }
  } else if (axis == "insertion_layers") {
    const int d = base.depth;
    CT_CHECK(d >= 3, "ablation: insertion_layers axis needs depth >= 3");
    ModelConfig none = base;
    none.insertion_layers = {};
    ModelConfig front = base;
    front.insertion_layers = {1, 2, 3};
    ModelConfig uniform = base;
    uniform.insertion_layers = {(d + 2) / 3, (2 * d + 2) / 3, d};
    ModelConfig back = base;
    back.insertion_layers = {d - 2, d - 1, d};
    v.emplace_back("none", none);
    v.emplace_back("front", front);
    v.emplace_back("uniform", uniform);
    v.emplace_back("back", back);
  } else if (axis == "windowed_baseline") {
    ModelConfig w4 = base;
    w4.context_mode = "windowed";
    w4.window_len = 4;
    ModelConfig w1 = base;
    w1.context_mode = "windowed";
    w1.window_len = 1;
    ModelConfig ub = base;
    ub.context_mode = "unbounded";
    v.emplace_back("window_4", w4);
    v.emplace_back("window_1", w1);
    v.emplace_back("unbounded", ub);
  } else {
    CT_CHECK(false, "ablation: unknown axis '", axis, "'");
  }
  return v;
}

namespace {

// Keys allowed to differ between paired variants, per axis.
std::vector<std::string> allowed_diff_keys(const std::string& axis) {
  if (axis == "context_onoff") return {"insertion_layers"};
  if (axis == "cp_length") return {"n_ctx"};
  if (axis == "insertion_layers") return {"insertion_layers"};
  return {"context_mode", "window_len"};
}

std::string model_field_dump(const ModelConfig& c) {
  std::string s = "search_size=" + std::to_string(c.search_size) +
                  ";template_size=" + std::to_string(c.template_size) +
                  ";d_enc=" + std::to_string(c.d_enc) + ";depth=" + std::to_string(c.depth) +
                  ";heads=" + std::to_string(c.heads) + ";d_scan=" + std::to_string(c.d_scan) +
                  ";d_state=" + std::to_string(c.d_state) +
                  ";mlp_ratio=" + std::to_string(c.mlp_ratio);
  return s;
}

}  // namespace

AblationReport ablate(const ModelConfig& base_model, const DataConfig& base_data,
                      const TrainConfig& base_train, const std::string& axis, int n_seeds,
                      int workers,
                      const std::function<void(const std::string&, uint64_t,
                                               const TrainResult&)>& per_run_sink) {
  CT_CHECK(n_seeds >= 2, "ablation: need at least 2 seeds");
  auto variants = ablation_variants(base_model, axis);

  // pairing contract: variants differ only in the ablated switch
  AblationReport rep;
  {
    const auto allowed = allowed_diff_keys(axis);
    for (const auto& [name, cfg] : variants) {
      CT_CHECK(model_field_dump(cfg) == model_field_dump(variants[0].second),
               "ablation: variant '", name, "' differs outside the ablated switch");
      rep.variants.push_back(name);
    }
    rep.config_diff = "axis=" + axis + " allowed_keys=";
    for (const auto& k : allowed) rep.config_diff += k + ",";
  }

  struct Task {
    size_t vi;
    int si;
  };
  std::vector<Task> tasks;
  for (size_t vi = 0; vi < variants.size(); ++vi)
    for (int si = 0; si < n_seeds; ++si) tasks.push_back({vi, si});

  rep.rows.resize(tasks.size());
  std::atomic<size_t> next{0};
  std::mutex sink_mu;
  std::vector<std::exception_ptr> errors(size_t(std::max(1, workers)));

  auto run_task = [&](size_t ti) {
    const Task& t = tasks[ti];
    TrainConfig tc = base_train;
    tc.seed = base_train.seed + uint64_t(t.si);  // shared data seeds across variants
    if (workers > 1) tc.threads = 1;
    TrainResult tr = train(variants[t.vi].second, base_data, tc);

    PoolSpec eval_ps{4, std::max(40, base_data.seq_len), base_data.canvas, base_data.difficulty,
                     Rng(tc.seed).fork(hash_str("eval-pool")).next_u64()};
    auto eval_pool = make_pool(eval_ps);
    TrackOptions topt;
    topt.search_factor = base_data.search_factor;
    topt.template_factor = base_data.template_factor;
    double auc = 0, miou = 0, prec = 0;
    for (const auto& seq : eval_pool) {
      EvalReport er = evaluate_track(tr.model, seq, topt);
      auc += er.auc;
      miou += er.mean_iou;
      prec += er.precision;
    }
    const double n = double(eval_pool.size());
    rep.rows[ti] = AblationRow{variants[t.vi].first, tc.seed, auc / n, miou / n, prec / n};
    if (per_run_sink) {
      std::lock_guard<std::mutex> lk(sink_mu);
      per_run_sink(variants[t.vi].first, tc.seed, tr);
    }
  };

  if (workers <= 1) {
    for (size_t ti = 0; ti < tasks.size(); ++ti) run_task(ti);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (size_t ti = next.fetch_add(1); ti < tasks.size(); ti = next.fetch_add(1))
            run_task(ti);
        } catch (...) {
          errors[size_t(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  // summaries: mean +/- stderr per variant, paired differences vs variants[0]
  for (size_t vi = 0; vi < variants.size(); ++vi) {
    AblationSummary s;
    s.variant = variants[vi].first;
    std::vector<double> aucs, diffs;
    for (int si = 0; si < n_seeds; ++si) {
      const double a = rep.rows[vi * size_t(n_seeds) + size_t(si)].auc;
      const double base = rep.rows[size_t(si)].auc;
      aucs.push_back(a);
      diffs.push_back(a - base);
    }
    auto mean_of = [](const std::vector<double>& v) {
      double m = 0;
      for (double x : v) m += x;
      return m / double(v.size());
    };
    auto stderr_of = [&](const std::vector<double>& v, double m) {
      if (v.size() < 2) return 0.0;
      double ss = 0;
      for (double x : v) ss += (x - m) * (x - m);
      return std::sqrt(ss / double(v.size() - 1) / double(v.size()));
    };
    s.mean_auc = mean_of(aucs);
    s.stderr_auc = stderr_of(aucs, s.mean_auc);
    s.paired_diff_mean = mean_of(diffs);
    s.paired_diff_stderr = stderr_of(diffs, s.paired_diff_mean);
    rep.summaries.push_back(s);
  }
  return rep;
}

}  // namespace ctrack
