#include "ctrack/config.hpp"

#include <cstdlib>
#include <fstream>

extern char** environ;

namespace ctrack {

using nlohmann::json;

namespace {

// One field reader that also drives unknown-key rejection: every known key is
// consumed from a copy of the section; leftovers are errors.
struct Section {
  json j;
  std::string name;

  template <class T>
  void get(const char* key, T& into) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
      into = it->get<T>();
    } catch (const json::exception& e) {
      CT_CHECK(false, "config: bad value for ", name, ".", key, ": ", e.what());
    }
    j.erase(it);
  }

  void finish() {
    CT_CHECK(j.empty(), "config: unknown key '", name, ".", j.begin().key(), "'");
  }
};

Section section(const json& doc, const char* name) {
  Section s;
  s.name = name;
  if (doc.contains(name)) {
    CT_CHECK(doc[name].is_object(), "config: section '", name, "' must be an object");
    s.j = doc[name];
  } else {
    s.j = json::object();
  }
  return s;
}

}  // namespace

void AblationConfig::validate() const {
  CT_CHECK(axis == "context_onoff" || axis == "cp_length" || axis == "insertion_layers" ||
               axis == "windowed_baseline",
           "config: ablation.axis must be one of context_onoff|cp_length|insertion_layers|"
           "windowed_baseline, got '",
           axis, "'");
  CT_CHECK(seeds >= 2, "config: ablation.seeds must be >= 2");
  CT_CHECK(steps >= 1, "config: ablation.steps must be >= 1");
}

json RunConfig::to_json() const {
  json j;
  j["model"] = {{"search_size", model.search_size},
                {"template_size", model.template_size},
                {"d_enc", model.d_enc},
                {"depth", model.depth},
                {"heads", model.heads},
                {"n_ctx", model.n_ctx},
                {"insertion_layers", model.insertion_layers},
                {"d_scan", model.d_scan},
                {"d_state", model.d_state},
                {"mlp_ratio", model.mlp_ratio},
                {"context_mode", model.context_mode},
                {"window_len", model.window_len}};
  j["data"] = {{"pool_size", data.pool_size},
               {"seq_len", data.seq_len},
               {"canvas", data.canvas},
               {"difficulty", data.difficulty},
               {"search_factor", data.search_factor},
               {"template_factor", data.template_factor},
               {"max_clip_gap", data.max_clip_gap},
               {"jitter_center", data.jitter_center},
               {"jitter_scale", data.jitter_scale}};
  j["train"] = {{"steps", train.steps},
                {"batch", train.batch},
                {"clip_len", train.clip_len},
                {"backbone_lr", train.backbone_lr},
                {"decay_start_frac", train.decay_start_frac},
                {"decay_factor", train.decay_factor},
                {"weight_decay", train.weight_decay},
                {"lambda1", train.lambda1},
                {"lambda2", train.lambda2},
                {"seed", train.seed},
                {"loss_window", train.loss_window},
                {"threads", train.threads}};
  j["ablation"] = {{"axis", ablation.axis}, {"seeds", ablation.seeds}, {"steps", ablation.steps}};
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  CT_CHECK(j.is_object(), "config: document must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    CT_CHECK(it.key() == "model" || it.key() == "data" || it.key() == "train" ||
                 it.key() == "ablation",
             "config: unknown section '", it.key(), "'");

  RunConfig c;
  Section m = section(j, "model");
  m.get("search_size", c.model.search_size);
  m.get("template_size", c.model.template_size);
  m.get("d_enc", c.model.d_enc);
  m.get("depth", c.model.depth);
  m.get("heads", c.model.heads);
  m.get("n_ctx", c.model.n_ctx);
  m.get("insertion_layers", c.model.insertion_layers);
  m.get("d_scan", c.model.d_scan);
  m.get("d_state", c.model.d_state);
  m.get("mlp_ratio", c.model.mlp_ratio);
  m.get("context_mode", c.model.context_mode);
  m.get("window_len", c.model.window_len);
  m.finish();

  Section d = section(j, "data");
  d.get("pool_size", c.data.pool_size);
  d.get("seq_len", c.data.seq_len);
  d.get("canvas", c.data.canvas);
  d.get("difficulty", c.data.difficulty);
  d.get("search_factor", c.data.search_factor);
  d.get("template_factor", c.data.template_factor);
  d.get("max_clip_gap", c.data.max_clip_gap);
  d.get("jitter_center", c.data.jitter_center);
  d.get("jitter_scale", c.data.jitter_scale);
  d.finish();

  Section t = section(j, "train");
  t.get("steps", c.train.steps);
  t.get("batch", c.train.batch);
  t.get("clip_len", c.train.clip_len);
  t.get("backbone_lr", c.train.backbone_lr);
  t.get("decay_start_frac", c.train.decay_start_frac);
  t.get("decay_factor", c.train.decay_factor);
  t.get("weight_decay", c.train.weight_decay);
  t.get("lambda1", c.train.lambda1);
  t.get("lambda2", c.train.lambda2);
  t.get("seed", c.train.seed);
  t.get("loss_window", c.train.loss_window);
  t.get("threads", c.train.threads);
  t.finish();

  Section a = section(j, "ablation");
  a.get("axis", c.ablation.axis);
  a.get("seeds", c.ablation.seeds);
  a.get("steps", c.ablation.steps);
  a.finish();
  return c;
}

void apply_env_overrides(json& doc) {
  const std::string prefix = "CTRACK_";
  for (char** env = environ; *env; ++env) {
    std::string entry(*env);
    if (entry.rfind(prefix, 0) != 0) continue;
    const size_t eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string key = entry.substr(prefix.size(), eq - prefix.size());
    const std::string value = entry.substr(eq + 1);
    if (key == "KERNELS") continue;  // kernel-lane selector, not a config key
    const size_t us = key.find('_');
    CT_CHECK(us != std::string::npos, "env override ", entry.substr(0, eq),
             " must look like CTRACK_<SECTION>_<KEY>");
    std::string sec = key.substr(0, us);
    std::string field = key.substr(us + 1);
    for (char& ch : sec) ch = char(tolower(ch));
    for (char& ch : field) ch = char(tolower(ch));
    CT_CHECK(sec == "model" || sec == "data" || sec == "train" || sec == "ablation",
             "env override: unknown section '", sec, "'");
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;  // plain string
    }
    doc[sec][field] = parsed;
  }
}

RunConfig RunConfig::load(const std::string& path_or_empty) {
  json doc = json::object();
  if (!path_or_empty.empty()) {
    std::ifstream in(path_or_empty);
    CT_CHECK(in.good(), "config: cannot open '", path_or_empty, "'");
    try {
      in >> doc;
    } catch (const json::exception& e) {
      CT_CHECK(false, "config: parse error in '", path_or_empty, "': ", e.what());
    }
  }
  apply_env_overrides(doc);
  RunConfig c = from_json(doc);
  return c;
}

void DataConfig::validate() const {
  CT_CHECK(pool_size >= 1 && seq_len >= 2 && canvas >= 32, "config: bad data sizes");
  CT_CHECK(difficulty == "easy" || difficulty == "occlusion",
           "config: data.difficulty must be easy|occlusion");
  CT_CHECK(search_factor > 0 && template_factor > 0, "config: crop factors must be positive");
  CT_CHECK(max_clip_gap >= 1, "config: data.max_clip_gap must be >= 1");
  CT_CHECK(jitter_center >= 0 && jitter_center < 0.4, "config: jitter_center in [0, 0.4)");
  CT_CHECK(jitter_scale >= 0 && jitter_scale < 1.0, "config: jitter_scale in [0, 1)");
}

void TrainConfig::validate() const {
  CT_CHECK(steps >= 1 && batch >= 1 && clip_len >= 1, "config: bad train sizes");
  CT_CHECK(backbone_lr > 0, "config: backbone_lr must be positive");
  CT_CHECK(decay_start_frac >= 0 && decay_start_frac <= 1, "config: decay_start_frac in [0,1]");
  CT_CHECK(decay_factor > 0 && decay_factor <= 1, "config: decay_factor in (0,1]");
  CT_CHECK(weight_decay >= 0, "config: weight_decay must be nonnegative");
  CT_CHECK(lambda1 >= 0 && lambda2 >= 0, "config: loss weights must be nonnegative");
  CT_CHECK(loss_window >= 1, "config: loss_window must be >= 1");
  CT_CHECK(threads >= 1, "config: threads must be >= 1");
}

void RunConfig::validate() const {
  model.validate();
  data.validate();
  train.validate();
  ablation.validate();
}

uint64_t config_hash(const json& doc) { return hash_str(doc.dump()); }

json seq_spec_to_json(const SequenceSpec& s) {
  json j = {{"length", s.length},
            {"canvas", s.canvas},
            {"kind", s.kind},
            {"start_x", s.start_x},
            {"start_y", s.start_y},
            {"vel_x", s.vel_x},
            {"vel_y", s.vel_y},
            {"wobble_amp", s.wobble_amp},
            {"wobble_freq", s.wobble_freq},
            {"wobble_phase", s.wobble_phase},
            {"base_size", s.base_size},
            {"aspect", s.aspect},
            {"scale_drift", s.scale_drift},
            {"appearance_drift", s.appearance_drift},
            {"distractors", s.distractors},
            {"noise", s.noise},
            {"seed", s.seed}};
  j["occluders"] = json::array();
  for (const OccluderInterval& o : s.occluders) j["occluders"].push_back({o.start, o.end});
  return j;
}

SequenceSpec seq_spec_from_json(const json& j) {
  SequenceSpec s;
  Section sec;
  sec.name = "sequence";
  sec.j = j;
  sec.get("length", s.length);
  sec.get("canvas", s.canvas);
  sec.get("kind", s.kind);
  sec.get("start_x", s.start_x);
  sec.get("start_y", s.start_y);
  sec.get("vel_x", s.vel_x);
  sec.get("vel_y", s.vel_y);
  sec.get("wobble_amp", s.wobble_amp);
  sec.get("wobble_freq", s.wobble_freq);
  sec.get("wobble_phase", s.wobble_phase);
  sec.get("base_size", s.base_size);
  sec.get("aspect", s.aspect);
  sec.get("scale_drift", s.scale_drift);
  sec.get("appearance_drift", s.appearance_drift);
  sec.get("distractors", s.distractors);
  sec.get("noise", s.noise);
  sec.get("seed", s.seed);
  if (sec.j.contains("occluders")) {
    for (const auto& o : sec.j["occluders"]) {
      CT_CHECK(o.is_array() && o.size() == 2, "sequence: occluders must be [start,end] pairs");
      s.occluders.push_back({o[0].get<int>(), o[1].get<int>()});
    }
    sec.j.erase("occluders");
  }
  sec.finish();
  return s;
}

}  // namespace ctrack
