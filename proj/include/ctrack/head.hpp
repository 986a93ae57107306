#pragma once

#include "ctrack/rng.hpp"
#include "ctrack/tensor.hpp"

namespace ctrack {

// Center-format box, normalized to [0,1] in tracking use. giou/iou accept any
// boxes with positive extent.
struct BBox {
  double cx = 0, cy = 0, w = 0, h = 0;
};

inline bool bbox_positive(const BBox& b) { return b.w > 0.0 && b.h > 0.0; }

// One cell per search token: g*g == N_s.
struct ScoreMaps {
  Tensor cls;     // [g,g] target-presence probability, in (0,1)
  Tensor size;    // [2,g,g] (w,h), in (0,1)
  Tensor offset;  // [2,g,g] (dx,dy) within-cell corrections
};

struct HeadParams {
  Tensor w1c, b1c, w2c, b2c;  // cls branch
  Tensor w1s, b1s, w2s, b2s;  // size branch
  Tensor w1o, b1o, w2o, b2o;  // offset branch
};

HeadParams make_head(int d_enc, Rng& rng);

// Tokens reshaped to a g x g grid, per-branch tokenwise stacks.
ScoreMaps head_forward(const HeadParams& p, const Tensor& features);

struct Decoded {
  BBox box;       // normalized to the search crop
  double score;   // cls value at the peak
  int row, col;   // peak cell (row-major tie-break)
};

Decoded decode_bbox(const ScoreMaps& maps);

// Plain-value IoU / generalized IoU; degenerate boxes rejected.
double iou_value(const BBox& a, const BBox& b);
double giou_value(const BBox& a, const BBox& b);

// Differentiable generalized IoU over [4] tensors holding (cx,cy,w,h).
Tensor giou(const Tensor& b1, const Tensor& b2);

struct LossParts {
  Tensor total;      // scalar, on the tape
  double cls = 0;    // component values at the current point
  double l1 = 0;
  double giou_term = 0;  // 1 - giou
};

// L = L_cls + lambda1*L1 + lambda2*(1 - giou). Classification is a focal
// penalty against a Gaussian target map centered at the ground-truth cell;
// the regression terms read the maps at that cell.
LossParts total_loss(const ScoreMaps& pred, const BBox& gt, double lambda1, double lambda2);

}  // namespace ctrack
