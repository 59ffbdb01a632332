#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "mimofb/types.hpp"

namespace mimofb::io {

inline void put_f64(std::ostream& os, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  os.write(buf, 8);
}

inline double get_f64(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw FormatError("truncated binary payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

/// Row-major complex128 matrix.
inline void put_cmatrix(std::ostream& os, const CMatrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      put_f64(os, m(r, c).real());
      put_f64(os, m(r, c).imag());
    }
}

inline CMatrix get_cmatrix(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
  CMatrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double re = get_f64(is);
      const double im = get_f64(is);
      m(r, c) = Complex(re, im);
    }
  return m;
}

inline void expect_magic(std::istream& is, const std::string& magic) {
  std::string line;
  if (!std::getline(is, line) || line != magic)
    throw FormatError("bad magic, expected " + magic);
}

}  // namespace mimofb::io
