#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctrack {

using Shape = std::vector<int>;

namespace detail {

template <class... Parts>
[[noreturn]] void fail(Parts&&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  throw std::invalid_argument(os.str());
}

}  // namespace detail

// Contract check: throws std::invalid_argument with a formatted message.
#define CT_CHECK(cond, ...)                         \
  do {                                              \
    if (!(cond)) ::ctrack::detail::fail(__VA_ARGS__); \
  } while (0)

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

}  // namespace ctrack
