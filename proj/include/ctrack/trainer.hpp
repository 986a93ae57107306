#pragma once

#include <functional>
#include <iosfwd>
#include <stdexcept>

#include "ctrack/model.hpp"
#include "ctrack/synth.hpp"

namespace ctrack {

struct DataConfig {
  int pool_size = 24;
  int seq_len = 48;
  int canvas = 128;
  std::string difficulty = "easy";
  double search_factor = 4.0;
  double template_factor = 2.0;
  int max_clip_gap = 20;
  double jitter_center = 0.08;  // fraction of the crop side
  double jitter_scale = 0.12;   // log-scale range
  void validate() const;
};

struct TrainConfig {
  int steps = 2000;
  int batch = 4;
  int clip_len = 2;
  double backbone_lr = 2e-4;  // all other parameters train at 10x this rate
  double decay_start_frac = 0.8;
  double decay_factor = 0.1;
  double weight_decay = 1e-4;
  double lambda1 = 5.0;
  double lambda2 = 2.0;
  uint64_t seed = 1;
  int loss_window = 50;
  int threads = 2;

  double other_lr() const { return 10.0 * backbone_lr; }
  void validate() const;
};

struct TrainDivergence : std::runtime_error {
  int step;
  explicit TrainDivergence(int s)
      : std::runtime_error("training diverged (non-finite loss) at step " + std::to_string(s)),
        step(s) {}
};

struct StepRecord {
  int step = 0;
  double loss = 0;
  double lr_backbone = 0;
};

struct TrainResult {
  Model model;
  std::vector<StepRecord> curve;
};

TrainResult train(const ModelConfig& mcfg, const DataConfig& dcfg, const TrainConfig& tcfg);

// Trailing-window average of the loss curve at a step index.
double smoothed_loss(const std::vector<StepRecord>& curve, int at_step, int window);

// ---- streaming inference ----

struct FrameTrace {
  int frame = 0;
  BBox box;            // canvas pixels
  double score = 0;
  double latency_ms = 0;
  int64_t state_elems = 0;  // total retained context-state size
  std::vector<int64_t> state_frame_index;
};

struct SessionSnapshot {
  int64_t next_frame = 0;
  BBox prev_box;
  Tensor c_p;  // [N_c, d_enc]
  std::vector<ContextState> states;
};

struct TrackOptions {
  double search_factor = 4.0;
  double template_factor = 2.0;
  int stop_after = -1;  // process this many frames then stop (-1 = all)
  // Called once per frame with the recorder filled for that frame.
  AttnRecorder* recorder = nullptr;
  std::function<void(int frame, const AttnRecorder&)> attn_sink;
};

struct TrackResult {
  std::vector<FrameTrace> trace;
  SessionSnapshot end_state;
  double fps = 0;
};

TrackResult track_sequence(const Model& m, const SyntheticSequence& seq,
                           const TrackOptions& opt = {},
                           const SessionSnapshot* resume = nullptr);

void save_snapshot(std::ostream& os, const SessionSnapshot& s, uint64_t config_hash);
SessionSnapshot load_snapshot(std::istream& is, uint64_t expect_hash);

// ---- metrics ----

struct EvalReport {
  double mean_iou = 0;
  std::vector<double> success;  // thresholds 0..1 step 0.05 (21 points)
  double auc = 0;               // mean of success over thresholds in [0, 1)
  double precision = 0;         // center error < 2 cells (crop-scale units)
  double recovery_iou = 0;      // mean IoU over the 5 frames after each occlusion
  double fps = 0;
  int frames = 0;
};

EvalReport eval_metrics(const std::vector<BBox>& pred, const std::vector<BBox>& gt,
                        const std::vector<bool>& occluded, int grid = 4,
                        double search_factor = 4.0);

EvalReport evaluate_track(const Model& m, const SyntheticSequence& seq,
                          const TrackOptions& opt = {});

// ---- ablation harness ----

struct AblationRow {
  std::string variant;
  uint64_t seed = 0;
  double auc = 0, mean_iou = 0, precision = 0;
};

struct AblationSummary {
  std::string variant;
  double mean_auc = 0, stderr_auc = 0;
  double paired_diff_mean = 0, paired_diff_stderr = 0;  // vs the first variant
};

struct AblationReport {
  std::vector<std::string> variants;
  std::vector<AblationRow> rows;
  std::vector<AblationSummary> summaries;
  std::string config_diff;  // keys that differ across variants (pairing check)
};

// axis: context_onoff | cp_length | insertion_layers | windowed_baseline.
// Runs paired trainings over n_seeds shared data seeds.
AblationReport ablate(const ModelConfig& base_model, const DataConfig& base_data,
                      const TrainConfig& base_train, const std::string& axis, int n_seeds,
                      int workers,
                      const std::function<void(const std::string& variant, uint64_t seed,
                                               const TrainResult&)>& per_run_sink = {});

// Variant list for an axis (exposed for tests and the CLI).
std::vector<std::pair<std::string, ModelConfig>> ablation_variants(const ModelConfig& base,
                                                                   const std::string& axis);

}  // namespace ctrack
