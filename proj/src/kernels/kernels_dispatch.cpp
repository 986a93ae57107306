#include <cstdlib>
#include <stdexcept>
#include <string>

#include "ctrack/kernels.hpp"

namespace ctrack::kern {

#ifndef CTRACK_NO_AVX2
const Ops* avx2_table();
#endif

const Ops* avx2() {
#ifndef CTRACK_NO_AVX2
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
    return avx2_table();
#endif
  return nullptr;
}

namespace {

const Ops& pick() {
  const char* env = std::getenv("CTRACK_KERNELS");
  std::string want = env ? env : "auto";
  if (want == "scalar") return scalar();
  if (want == "avx2") {
    const Ops* o = avx2();
    if (!o) throw std::runtime_error("CTRACK_KERNELS=avx2 requested but AVX2+FMA is unavailable");
    return *o;
  }
  if (want != "auto")
    throw std::runtime_error("CTRACK_KERNELS must be one of auto|scalar|avx2, got '" + want + "'");
  const Ops* o = avx2();
  return o ? *o : scalar();
}

}  // namespace

const Ops& active() {
  static const Ops& sel = pick();
  return sel;
}

const char* active_name() { return active().name; }

}  // namespace ctrack::kern
