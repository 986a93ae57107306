#pragma once

#include <string>
#include <vector>

#include "ctrack/encoder.hpp"
#include "ctrack/head.hpp"

namespace ctrack {

// Full tracker: encoder backbone, per-insertion-layer context scanners, the
// learned initial context token, and the prediction head.
struct Model {
  ModelConfig cfg;
  EncoderParams enc;
  HeadParams head;
  std::vector<ContextScannerParams> taps;  // one per insertion layer
  Tensor c_init;                           // [n_ctx, d_enc]
};

Model build_model(const ModelConfig& cfg, uint64_t seed);

// Stable parameter registry. backbone marks encoder tensors (lower LR group).
struct NamedParam {
  std::string name;
  Tensor t;
  bool backbone = false;
};

std::vector<NamedParam> collect_params(const Model& m);

ContextMode model_context_mode(const ModelConfig& cfg);
std::vector<ContextState> fresh_states(const Model& m);

struct FrameForward {
  ScoreMaps maps;
  Tensor features;  // [N_s, d_enc]
};

// Tokenize the search image, encode with the carried context, run the head.
// Mutates c_p and states (streaming contract).
FrameForward forward_frame(const Model& m, const Tensor& search_image,
                           const TokenizedFrame& templ, ContextToken& c_p,
                           std::vector<ContextState>& states, AttnRecorder* rec = nullptr);

}  // namespace ctrack
