#include "ctrack/head.hpp"

#include <cmath>

namespace ctrack {

namespace {

Tensor randn(Rng& rng, Shape s, double std) {
  std::vector<double> v(size_t(shape_numel(s)));
  for (double& x : v) x = rng.normal(0.0, std);
  Tensor t = Tensor::from(std::move(s), std::move(v));
  t.set_requires_grad(true);
  return t;
}

Tensor grad_zeros(Shape s) {
  Tensor t = Tensor::zeros(std::move(s));
  t.set_requires_grad(true);
  return t;
}

constexpr double kFocalAlpha = 2.0;
constexpr double kFocalBeta = 4.0;
constexpr double kGaussianSigmaCells = 1.0;

}  // namespace

HeadParams make_head(int d_enc, Rng& rng) {
  CT_CHECK(d_enc >= 2, "head: d_enc too small");
  const int dh = d_enc / 2;
  const double s1 = 1.0 / std::sqrt(double(d_enc)), s2 = 1.0 / std::sqrt(double(dh));
  HeadParams p;
  p.w1c = randn(rng, {d_enc, dh}, s1);
  p.b1c = grad_zeros({dh});
  p.w2c = randn(rng, {dh, 1}, s2);
  p.b2c = Tensor::from({1}, {-2.0});  // start predictions near background
  p.b2c.set_requires_grad(true);
  p.w1s = randn(rng, {d_enc, dh}, s1);
  p.b1s = grad_zeros({dh});
  p.w2s = randn(rng, {dh, 2}, s2);
  p.b2s = grad_zeros({2});
  p.w1o = randn(rng, {d_enc, dh}, s1);
  p.b1o = grad_zeros({dh});
  p.w2o = randn(rng, {dh, 2}, s2);
  p.b2o = grad_zeros({2});
  return p;
}

ScoreMaps head_forward(const HeadParams& p, const Tensor& features) {
  CT_CHECK(features.ndim() == 2, "head_forward: features must be [N_s, d]");
  const int n = features.rows();
  const int g = int(std::lround(std::sqrt(double(n))));
  CT_CHECK(g * g == n, "head_forward: token count ", n, " is not a perfect square");
  CT_CHECK(features.all_finite(), "head_forward: features must be finite");

  auto branch = [&](const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2) {
    return add_rowvec(matmul(silu(add_rowvec(matmul(features, w1), b1)), w2), b2);
  };
  ScoreMaps m;
  m.cls = reshape(sigmoid(branch(p.w1c, p.b1c, p.w2c, p.b2c)), {g, g});
  m.size = reshape(transpose(sigmoid(branch(p.w1s, p.b1s, p.w2s, p.b2s))), {2, g, g});
  m.offset = reshape(transpose(branch(p.w1o, p.b1o, p.w2o, p.b2o)), {2, g, g});
  return m;
}

Decoded decode_bbox(const ScoreMaps& maps) {
  CT_CHECK(maps.cls.ndim() == 2 && maps.cls.rows() == maps.cls.cols(),
           "decode_bbox: cls must be square");
  CT_CHECK(maps.cls.all_finite() && maps.size.all_finite() && maps.offset.all_finite(),
           "decode_bbox: maps must be finite");
  const int g = maps.cls.rows();
  int bi = 0, bj = 0;
  double best = maps.cls.at(0, 0);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j)
      if (maps.cls.at(i, j) > best) {  // row-major scan keeps the first peak on ties
        best = maps.cls.at(i, j);
        bi = i;
        bj = j;
      }
  const int64_t cell = int64_t(bi) * g + bj;
  const double offx = maps.offset[cell];
  const double offy = maps.offset[int64_t(g) * g + cell];
  Decoded d;
  d.box.cx = std::clamp((bj + 0.5 + offx) / g, 0.0, 1.0);
  d.box.cy = std::clamp((bi + 0.5 + offy) / g, 0.0, 1.0);
  d.box.w = maps.size[cell];
  d.box.h = maps.size[int64_t(g) * g + cell];
  d.score = best;
  d.row = bi;
  d.col = bj;
  return d;
}

double iou_value(const BBox& a, const BBox& b) {
  CT_CHECK(bbox_positive(a) && bbox_positive(b), "iou: degenerate (zero-area) box rejected");
  const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2;
  const double ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2;
  const double by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double iw = std::fmax(0.0, std::fmin(ax2, bx2) - std::fmax(ax1, bx1));
  const double ih = std::fmax(0.0, std::fmin(ay2, by2) - std::fmax(ay1, by1));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return inter / uni;
}

double giou_value(const BBox& a, const BBox& b) {
  CT_CHECK(bbox_positive(a) && bbox_positive(b), "giou: degenerate (zero-area) box rejected");
  const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2;
  const double ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2;
  const double by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double iw = std::fmax(0.0, std::fmin(ax2, bx2) - std::fmax(ax1, bx1));
  const double ih = std::fmax(0.0, std::fmin(ay2, by2) - std::fmax(ay1, by1));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  const double cw = std::fmax(ax2, bx2) - std::fmin(ax1, bx1);
  const double ch = std::fmax(ay2, by2) - std::fmin(ay1, by1);
  const double enclose = cw * ch;
  return inter / uni - (enclose - uni) / enclose;
}

Tensor giou(const Tensor& b1, const Tensor& b2) {
  CT_CHECK(b1.ndim() == 1 && b1.dim(0) == 4 && b2.ndim() == 1 && b2.dim(0) == 4,
           "giou: boxes must be [4] tensors (cx,cy,w,h)");
  CT_CHECK(b1[2] > 0 && b1[3] > 0 && b2[2] > 0 && b2[3] > 0,
           "giou: degenerate (zero-area) box rejected");
  auto corners = [](const Tensor& b) {
    Tensor cx = slice_rows(b, 0, 1), cy = slice_rows(b, 1, 2);
    Tensor w = slice_rows(b, 2, 3), h = slice_rows(b, 3, 4);
    Tensor hw = scale(w, 0.5), hh = scale(h, 0.5);
    return std::array<Tensor, 6>{sub(cx, hw), add(cx, hw), sub(cy, hh), add(cy, hh),
                                 mul(w, h), w};
  };
  auto [ax1, ax2, ay1, ay2, area_a, wa] = corners(b1);
  auto [bx1, bx2, by1, by2, area_b, wb] = corners(b2);
  Tensor iw = relu(sub(minimum(ax2, bx2), maximum(ax1, bx1)));
  Tensor ih = relu(sub(minimum(ay2, by2), maximum(ay1, by1)));
  Tensor inter = mul(iw, ih);
  Tensor uni = sub(add(area_a, area_b), inter);
  Tensor iou = mul(inter, reciprocal(uni));
  Tensor cw = sub(maximum(ax2, bx2), minimum(ax1, bx1));
  Tensor ch = sub(maximum(ay2, by2), minimum(ay1, by1));
  Tensor enclose = mul(cw, ch);
  Tensor penalty = mul(sub(enclose, uni), reciprocal(enclose));
  return reshape(sub(iou, penalty), {1});
}

LossParts total_loss(const ScoreMaps& pred, const BBox& gt, double lambda1, double lambda2) {
  CT_CHECK(lambda1 >= 0.0 && lambda2 >= 0.0, "total_loss: lambdas must be nonnegative");
  CT_CHECK(gt.cx >= 0.0 && gt.cx <= 1.0 && gt.cy >= 0.0 && gt.cy <= 1.0,
           "total_loss: ground-truth center outside the unit square");
  CT_CHECK(bbox_positive(gt), "total_loss: degenerate ground-truth box");
  const int g = pred.cls.rows();

  const int c0 = std::clamp(int(gt.cx * g), 0, g - 1);
  const int r0 = std::clamp(int(gt.cy * g), 0, g - 1);

  // Gaussian target map, exact 1 at the ground-truth cell.
  std::vector<double> target(size_t(g) * g);
  std::vector<double> peak_mask(size_t(g) * g, 0.0);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      const double d2 = double((i - r0) * (i - r0) + (j - c0) * (j - c0));
      target[size_t(i) * g + j] = std::exp(-d2 / (2.0 * kGaussianSigmaCells * kGaussianSigmaCells));
    }
  target[size_t(r0) * g + c0] = 1.0;
  peak_mask[size_t(r0) * g + c0] = 1.0;

  std::vector<double> neg_w(size_t(g) * g);
  for (size_t i = 0; i < neg_w.size(); ++i)
    neg_w[i] = std::pow(1.0 - target[i], kFocalBeta) * (1.0 - peak_mask[i]);

  Tensor peak = Tensor::from({g, g}, std::move(peak_mask));
  Tensor negw = Tensor::from({g, g}, std::move(neg_w));
  Tensor ones = Tensor::ones({g, g});

  Tensor p = pred.cls;
  Tensor pos_term = mul(peak, mul(pow_const(sub(ones, p), kFocalAlpha), neg(log(p))));
  Tensor neg_term = mul(negw, mul(pow_const(p, kFocalAlpha), neg(log(sub(ones, p)))));
  Tensor l_cls = add(sum(pos_term), sum(neg_term));

  // Regression read at the ground-truth cell.
  const int cell = r0 * g + c0;
  Tensor off_flat = reshape(pred.offset, {2 * g * g, 1});
  Tensor size_flat = reshape(pred.size, {2 * g * g, 1});
  Tensor offx = reshape(slice_rows(off_flat, cell, cell + 1), {1});
  Tensor offy = reshape(slice_rows(off_flat, g * g + cell, g * g + cell + 1), {1});
  Tensor pw = reshape(slice_rows(size_flat, cell, cell + 1), {1});
  Tensor ph = reshape(slice_rows(size_flat, g * g + cell, g * g + cell + 1), {1});
  Tensor pcx = scale(add(offx, Tensor::scalar(c0 + 0.5)), 1.0 / g);
  Tensor pcy = scale(add(offy, Tensor::scalar(r0 + 0.5)), 1.0 / g);

  Tensor gt_t = Tensor::from({4}, {gt.cx, gt.cy, gt.w, gt.h});
  Tensor pred_box = reshape(concat_rows({pcx, pcy, pw, ph}), {4});
  Tensor l1 = mean(abs(sub(pred_box, gt_t)));
  Tensor giou_term = sub(Tensor::scalar(1.0), giou(pred_box, gt_t));

  LossParts parts;
  parts.cls = l_cls.item();
  parts.l1 = l1.item();
  parts.giou_term = giou_term.item();
  parts.total = add(l_cls, add(scale(l1, lambda1), scale(reshape(giou_term, {1}), lambda2)));
  return parts;
}

}  // namespace ctrack
