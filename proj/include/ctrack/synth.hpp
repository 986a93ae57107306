#pragma once

#include <string>
#include <vector>

#include "ctrack/head.hpp"
#include "ctrack/rng.hpp"
#include "ctrack/tensor.hpp"

namespace ctrack {

struct OccluderInterval {
  int start = 0;
  int end = -1;  // inclusive
};

// Deterministic synthetic video: a patterned target on a noisy canvas with
// linear drift + sinusoidal wobble, optional slow appearance morphing, scale
// drift, look-alike distractors, and scheduled full occlusions. All frames
// are pure functions of (spec, frame index).
struct SequenceSpec {
  int length = 60;
  int canvas = 128;
  std::string kind = "blob";  // blob | ellipse | rect
  double start_x = 64.0, start_y = 64.0;
  double vel_x = 0.0, vel_y = 0.0;  // px/frame
  double wobble_amp = 0.0, wobble_freq = 0.15, wobble_phase = 0.0;
  double base_size = 10.0;  // half-extent in px
  double aspect = 1.0;      // h/w
  double scale_drift = 0.0;
  double appearance_drift = 0.0;
  int distractors = 0;
  std::vector<OccluderInterval> occluders;
  double noise = 0.02;
  uint64_t seed = 1;
};

struct FrameTruth {
  BBox box;  // canvas pixels, center format
  bool occluded = false;
};

class SyntheticSequence {
 public:
  explicit SyntheticSequence(SequenceSpec spec);

  int length() const { return spec_.length; }
  const SequenceSpec& spec() const { return spec_; }
  const FrameTruth& truth(int i) const { return truth_[size_t(i)]; }

  // [3,H,W] grayscale replicated across channels, values in [0,1].
  Tensor frame(int i) const;

 private:
  struct Distractor {
    double radius, omega, phase, size;
  };
  SequenceSpec spec_;
  std::vector<FrameTruth> truth_;
  std::vector<Distractor> distractors_;

  double center_x(int t) const;
  double center_y(int t) const;
  double half_w(int t) const;
};

// Square crop centered on the box, side = factor * sqrt(w*h), bilinearly
// resampled; out-of-canvas area reads as zero.
struct Crop {
  Tensor image;  // [3,out,out]
  double x0 = 0, y0 = 0, side = 1;
};

Crop crop_regions(const Tensor& frame, const BBox& box_px, double factor, int out_size);
BBox box_to_crop(const BBox& box_px, const Crop& c);
BBox box_from_crop(const BBox& box_norm, const Crop& c);

struct ClipSample {
  int seq_index = 0;
  std::vector<int> frames;  // strictly increasing, gaps <= max_gap
};

ClipSample sample_clip(const std::vector<SyntheticSequence>& pool, int clip_len, int max_gap,
                       Rng& rng);

struct PoolSpec {
  int count = 24;
  int length = 48;
  int canvas = 128;
  std::string difficulty = "easy";  // easy | occlusion
  uint64_t seed = 1;
};

std::vector<SyntheticSequence> make_pool(const PoolSpec& ps);

}  // namespace ctrack
