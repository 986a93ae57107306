#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "ctrack/tensor.hpp"

namespace ctrack::binio {

inline void put_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}

inline uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  CT_CHECK(bool(is), "binary stream truncated");
  return v;
}

inline void put_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}

inline double get_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  CT_CHECK(bool(is), "binary stream truncated");
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), std::streamsize(s.size()));
}

inline std::string get_string(std::istream& is) {
  const uint64_t n = get_u64(is);
  CT_CHECK(n <= (1ull << 30), "binary stream: unreasonable string length");
  std::string s(size_t(n), '\0');
  is.read(s.data(), std::streamsize(n));
  CT_CHECK(bool(is), "binary stream truncated");
  return s;
}

inline void put_tensor(std::ostream& os, const Tensor& t) {
  put_u64(os, uint64_t(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) put_u64(os, uint64_t(t.dim(i)));
  os.write(reinterpret_cast<const char*>(t.ptr()), std::streamsize(t.numel() * 8));
}

inline Tensor get_tensor(std::istream& is) {
  const int nd = int(get_u64(is));
  CT_CHECK(nd >= 1 && nd <= 8, "binary stream: bad tensor rank ", nd);
  Shape shape(static_cast<size_t>(nd), 0);
  for (int i = 0; i < nd; ++i) shape[size_t(i)] = int(get_u64(is));
  std::vector<double> data(size_t(shape_numel(shape)), 0.0);
  is.read(reinterpret_cast<char*>(data.data()), std::streamsize(data.size() * 8));
  CT_CHECK(bool(is), "binary stream: truncated tensor payload");
  return Tensor::from(std::move(shape), std::move(data));
}

}  // namespace ctrack::binio
