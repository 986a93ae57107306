#include "ctrack/checkpoint.hpp"

#include <fstream>
#include <unordered_map>

#include "ctrack/binio.hpp"
#include "ctrack/config.hpp"

namespace ctrack {

namespace {
constexpr uint64_t kCkptMagic = 0x31544b43'54435443ull;  // "CTCTCKT1"
constexpr uint64_t kCkptVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const Model& m, const std::string& config_json) {
  std::ofstream os(path, std::ios::binary);
  CT_CHECK(os.good(), "checkpoint: cannot open '", path, "' for writing");
  binio::put_u64(os, kCkptMagic);
  binio::put_u64(os, kCkptVersion);
  binio::put_string(os, config_json);
  const auto params = collect_params(m);
  binio::put_u64(os, params.size());
  for (const NamedParam& p : params) {
    binio::put_string(os, p.name);
    binio::put_tensor(os, p.t);
  }
  CT_CHECK(os.good(), "checkpoint: write failed for '", path, "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  CT_CHECK(is.good(), "checkpoint: cannot open '", path, "'");
  CT_CHECK(binio::get_u64(is) == kCkptMagic, "checkpoint: bad magic in '", path, "'");
  const uint64_t ver = binio::get_u64(is);
  CT_CHECK(ver == kCkptVersion, "checkpoint: unsupported version ", ver);

  LoadedCheckpoint out;
  out.config_json = binio::get_string(is);
  RunConfig cfg = RunConfig::from_json(nlohmann::json::parse(out.config_json));
  out.model = build_model(cfg.model, cfg.train.seed);

  auto params = collect_params(out.model);
  std::unordered_map<std::string, Tensor*> by_name;
  std::vector<Tensor> holders;
  holders.reserve(params.size());
  for (NamedParam& p : params) holders.push_back(p.t);
  for (size_t i = 0; i < params.size(); ++i) by_name[params[i].name] = &holders[i];

  const uint64_t count = binio::get_u64(is);
  CT_CHECK(count == params.size(), "checkpoint: parameter count ", count,
           " does not match the embedded config (expected ", params.size(), ")");
  for (uint64_t i = 0; i < count; ++i) {
    const std::string name = binio::get_string(is);
    Tensor t = binio::get_tensor(is);
    auto it = by_name.find(name);
    CT_CHECK(it != by_name.end(), "checkpoint: unexpected parameter '", name, "'");
    Tensor& dst = *it->second;
    CT_CHECK(dst.shape() == t.shape(), "checkpoint: shape mismatch for '", name, "': file has ",
             t.shape_str(), ", model expects ", dst.shape_str());
    std::copy(t.data().begin(), t.data().end(), dst.raw().begin());
  }
  return out;
}

}  // namespace ctrack
