#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "mimofb/types.hpp"

namespace testing {

using mimofb::CMatrix;
using mimofb::Complex;

inline CMatrix random_complex(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  CMatrix m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) {
      const double re = g(rng);
      m(r, c) = Complex(re, g(rng));
    }
  return m;
}

/// Random PSD matrix of exact trace `trace` and rank at most `rank`.
inline CMatrix random_psd(int n, int rank, double trace, std::mt19937_64& rng) {
  const CMatrix a = random_complex(n, rank, rng);
  CMatrix q = a * a.adjoint();
  q *= trace / q.trace().real();
  return (q + q.adjoint()) * 0.5;
}

inline CMatrix random_hermitian(int n, std::mt19937_64& rng) {
  const CMatrix a = random_complex(n, n, rng);
  return (a + a.adjoint()) * 0.5;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  const std::filesystem::path p = std::filesystem::path(MIMOFB_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
