#include "ctrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ctrack {

namespace {

constexpr double kBackground = 0.1;
constexpr double kOccluderShade = 0.65;
constexpr double kMarginPx = 2.0;

// Patterned shape intensity at a normalized offset (u,v) from the center,
// u,v in units of the half-extents. Returns 0 outside the shape.
double shape_intensity(const std::string& kind, double u, double v, double morph) {
  double mask;
  if (kind == "rect") {
    const double m = std::fmax(std::fabs(u), std::fabs(v));
    mask = m <= 1.0 ? 1.0 : 0.0;
  } else {
    const double r2 = u * u + v * v;
    if (r2 > 1.0) return 0.0;
    // blob gets a soft rim, ellipse a hard one
    mask = kind == "blob" ? std::fmin(1.0, 2.5 * (1.0 - std::sqrt(r2))) : 1.0;
  }
  if (mask <= 0.0) return 0.0;
  const double ang = std::atan2(v, u);
  const double pattern = 0.62 + 0.3 * std::cos(3.0 * ang + morph) * (0.4 + 0.6 * (u * u + v * v));
  return mask * pattern;
}

void draw_shape(std::vector<double>& img, int canvas, const std::string& kind, double cx,
                double cy, double rx, double ry, double morph) {
  const int x0 = std::max(0, int(std::floor(cx - rx - 1)));
  const int x1 = std::min(canvas - 1, int(std::ceil(cx + rx + 1)));
  const int y0 = std::max(0, int(std::floor(cy - ry - 1)));
  const int y1 = std::min(canvas - 1, int(std::ceil(cy + ry + 1)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double u = (x + 0.5 - cx) / rx;
      const double v = (y + 0.5 - cy) / ry;
      const double val = shape_intensity(kind, u, v, morph);
      if (val > 0.0) img[size_t(y) * canvas + x] = std::fmax(img[size_t(y) * canvas + x], val);
    }
}

}  // namespace

double SyntheticSequence::center_x(int t) const {
  return spec_.start_x + spec_.vel_x * t +
         spec_.wobble_amp * std::sin(spec_.wobble_freq * t + spec_.wobble_phase);
}

double SyntheticSequence::center_y(int t) const {
  return spec_.start_y + spec_.vel_y * t +
         spec_.wobble_amp * std::cos(spec_.wobble_freq * t + spec_.wobble_phase);
}

double SyntheticSequence::half_w(int t) const {
  return spec_.base_size * std::exp(spec_.scale_drift * t);
}

SyntheticSequence::SyntheticSequence(SequenceSpec spec) : spec_(std::move(spec)) {
  CT_CHECK(spec_.length >= 1, "sequence: length must be >= 1");
  CT_CHECK(spec_.canvas >= 32, "sequence: canvas must be >= 32");
  CT_CHECK(spec_.kind == "blob" || spec_.kind == "ellipse" || spec_.kind == "rect",
           "sequence: kind must be blob|ellipse|rect, got '", spec_.kind, "'");
  CT_CHECK(spec_.base_size > 1.0, "sequence: base_size must exceed 1 px");
  for (const OccluderInterval& o : spec_.occluders)
    CT_CHECK(0 <= o.start && o.start <= o.end && o.end < spec_.length,
             "sequence: occluder interval [", o.start, ",", o.end, "] outside 0..",
             spec_.length - 1);

  truth_.resize(size_t(spec_.length));
  for (int t = 0; t < spec_.length; ++t) {
    const double cx = center_x(t), cy = center_y(t);
    const double rx = half_w(t), ry = rx * spec_.aspect;
    CT_CHECK(cx >= kMarginPx && cx <= spec_.canvas - kMarginPx && cy >= kMarginPx &&
                 cy <= spec_.canvas - kMarginPx,
             "sequence: target center leaves canvas margins at frame ", t, " (", cx, ",", cy,
             ")");
    FrameTruth ft;
    ft.box = BBox{cx, cy, 2.0 * rx, 2.0 * ry};
    ft.occluded = false;
    for (const OccluderInterval& o : spec_.occluders)
      if (t >= o.start && t <= o.end) ft.occluded = true;
    truth_[size_t(t)] = ft;
  }

  Rng drng = Rng(spec_.seed).fork(hash_str("distractors"));
  for (int k = 0; k < spec_.distractors; ++k) {
    Distractor d;
    d.radius = drng.uniform(22.0, 34.0);
    d.omega = drng.uniform(0.05, 0.15) * (drng.uniform() < 0.5 ? -1.0 : 1.0);
    d.phase = drng.uniform(0.0, 2.0 * std::numbers::pi);
    d.size = spec_.base_size * drng.uniform(0.85, 1.1);
    distractors_.push_back(d);
  }
}

Tensor SyntheticSequence::frame(int i) const {
  CT_CHECK(i >= 0 && i < spec_.length, "sequence: frame index ", i, " outside 0..",
           spec_.length - 1);
  const int c = spec_.canvas;
  std::vector<double> img(size_t(c) * c, kBackground);

  const FrameTruth& ft = truth_[size_t(i)];
  const double morph = spec_.appearance_drift * i;

  // distractors wear the target's initial appearance (morph 0)
  for (const Distractor& d : distractors_) {
    const double ang = d.omega * i + d.phase;
    const double dx = ft.box.cx + d.radius * std::cos(ang);
    const double dy = ft.box.cy + d.radius * std::sin(ang);
    if (dx < -d.size || dx > c + d.size || dy < -d.size || dy > c + d.size) continue;
    draw_shape(img, c, spec_.kind, dx, dy, d.size, d.size * spec_.aspect, 0.0);
  }

  draw_shape(img, c, spec_.kind, ft.box.cx, ft.box.cy, ft.box.w / 2.0, ft.box.h / 2.0, morph);

  if (ft.occluded) {
    const double ox0 = ft.box.cx - 0.8 * ft.box.w, ox1 = ft.box.cx + 0.8 * ft.box.w;
    const double oy0 = ft.box.cy - 0.8 * ft.box.h, oy1 = ft.box.cy + 0.8 * ft.box.h;
    for (int y = std::max(0, int(oy0)); y <= std::min(c - 1, int(oy1)); ++y)
      for (int x = std::max(0, int(ox0)); x <= std::min(c - 1, int(ox1)); ++x)
        img[size_t(y) * c + x] = kOccluderShade;
  }

  if (spec_.noise > 0.0) {
    Rng nrng = Rng(spec_.seed).fork(hash_str("noise") + uint64_t(i));
    for (double& v : img) v = std::clamp(v + nrng.uniform(-spec_.noise, spec_.noise), 0.0, 1.0);
  }

  std::vector<double> out(size_t(3) * c * c);
  for (int ch = 0; ch < 3; ++ch) std::copy(img.begin(), img.end(), out.begin() + size_t(ch) * c * c);
  return Tensor::from({3, c, c}, std::move(out));
}

Crop crop_regions(const Tensor& frame, const BBox& box_px, double factor, int out_size) {
  CT_CHECK(frame.ndim() == 3 && frame.dim(0) == 3, "crop: frame must be [3,H,W]");
  CT_CHECK(bbox_positive(box_px), "crop: reference box must have positive extent");
  CT_CHECK(factor > 0.0 && out_size >= 2, "crop: bad factor/out_size");
  const int H = frame.dim(1), W = frame.dim(2);
  const double side = factor * std::sqrt(box_px.w * box_px.h);
  Crop crop;
  crop.side = side;
  crop.x0 = box_px.cx - side / 2.0;
  crop.y0 = box_px.cy - side / 2.0;

  std::vector<double> ch(size_t(out_size) * out_size);
  const double* src = frame.ptr();  // channel 0; channels are replicated
  for (int r = 0; r < out_size; ++r)
    for (int cidx = 0; cidx < out_size; ++cidx) {
      const double sx = crop.x0 + (cidx + 0.5) * side / out_size - 0.5;
      const double sy = crop.y0 + (r + 0.5) * side / out_size - 0.5;
      const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      auto at = [&](int y, int x) -> double {
        if (x < 0 || x >= W || y < 0 || y >= H) return 0.0;
        return src[size_t(y) * W + x];
      };
      ch[size_t(r) * out_size + cidx] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                                        fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
    }
  std::vector<double> out(size_t(3) * out_size * out_size);
  for (int k = 0; k < 3; ++k)
    std::copy(ch.begin(), ch.end(), out.begin() + size_t(k) * out_size * out_size);
  crop.image = Tensor::from({3, out_size, out_size}, std::move(out));
  return crop;
}

BBox box_to_crop(const BBox& box_px, const Crop& c) {
  return BBox{(box_px.cx - c.x0) / c.side, (box_px.cy - c.y0) / c.side, box_px.w / c.side,
              box_px.h / c.side};
}

BBox box_from_crop(const BBox& box_norm, const Crop& c) {
  return BBox{c.x0 + box_norm.cx * c.side, c.y0 + box_norm.cy * c.side, box_norm.w * c.side,
              box_norm.h * c.side};
}

ClipSample sample_clip(const std::vector<SyntheticSequence>& pool, int clip_len, int max_gap,
                       Rng& rng) {
  CT_CHECK(!pool.empty(), "sample_clip: empty pool");
  CT_CHECK(clip_len >= 1 && max_gap >= 1, "sample_clip: clip_len and max_gap must be >= 1");
  std::vector<int> eligible;
  for (size_t i = 0; i < pool.size(); ++i)
    if (pool[i].length() >= clip_len) eligible.push_back(int(i));
  CT_CHECK(!eligible.empty(), "sample_clip: no sequence has >= ", clip_len, " frames");

  ClipSample cs;
  cs.seq_index = eligible[size_t(rng.uniform_int(int64_t(eligible.size())))];
  const int len = pool[size_t(cs.seq_index)].length();

  // Constructive sampler: pick a start with room, then gaps capped so the
  // remaining frames always fit.
  const int min_span = clip_len - 1;  // all gaps 1
  const int start = int(rng.uniform_int(int64_t(len - min_span)));
  int pos = start;
  cs.frames.push_back(pos);
  for (int k = 1; k < clip_len; ++k) {
    const int remaining_after = clip_len - 1 - k;  // frames still to place after this one
    const int cap = std::min(max_gap, len - 1 - remaining_after - pos);
    const int gap = 1 + int(rng.uniform_int(int64_t(cap)));
    pos += gap;
    cs.frames.push_back(pos);
  }
  return cs;
}

std::vector<SyntheticSequence> make_pool(const PoolSpec& ps) {
  CT_CHECK(ps.count >= 1, "pool: count must be >= 1");
  CT_CHECK(ps.difficulty == "easy" || ps.difficulty == "occlusion",
           "pool: difficulty must be easy|occlusion, got '", ps.difficulty, "'");
  std::vector<SyntheticSequence> pool;
  Rng rng = Rng(ps.seed).fork(hash_str("pool"));
  const double c = double(ps.canvas);
  for (int i = 0; i < ps.count; ++i) {
    SequenceSpec s;
    s.length = ps.length;
    s.canvas = ps.canvas;
    s.seed = ps.seed * 1000003ull + uint64_t(i);
    s.kind = (rng.uniform() < 0.5) ? "blob" : "ellipse";
    s.base_size = rng.uniform(9.0, 13.0);
    s.aspect = rng.uniform(0.8, 1.25);
    s.start_x = c / 2 + rng.uniform(-0.15, 0.15) * c;
    s.start_y = c / 2 + rng.uniform(-0.15, 0.15) * c;
    s.wobble_amp = rng.uniform(0.0, 2.0);
    s.wobble_freq = rng.uniform(0.1, 0.25);
    s.wobble_phase = rng.uniform(0.0, 6.28);
    // velocity kept inside margins over the whole run
    const double margin = s.base_size * 1.4 + s.wobble_amp + 4.0;
    auto safe_vel = [&](double start) {
      const double lo = (margin - start) / ps.length;
      const double hi = (c - margin - start) / ps.length;
      return std::clamp(rng.uniform(-0.5, 0.5), lo, hi);
    };
    s.vel_x = safe_vel(s.start_x);
    s.vel_y = safe_vel(s.start_y);
    s.noise = 0.02;
    if (ps.difficulty == "occlusion") {
      s.appearance_drift = rng.uniform(0.05, 0.09);
      s.distractors = 1 + int(rng.uniform_int(2));
      s.noise = 0.03;
      // two full occlusions per sequence
      const int l1 = ps.length / 3, l2 = (2 * ps.length) / 3;
      const int d1 = 3 + int(rng.uniform_int(3)), d2 = 3 + int(rng.uniform_int(3));
      if (l1 + d1 < ps.length) s.occluders.push_back({l1, l1 + d1});
      if (l2 + d2 < ps.length) s.occluders.push_back({l2, std::min(ps.length - 1, l2 + d2)});
    }
    pool.emplace_back(std::move(s));
  }
  return pool;
}

}  // namespace ctrack
