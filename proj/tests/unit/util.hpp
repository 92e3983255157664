#pragma once

#include <cstdint>
#include <random>

#include "optlens/tensor.hpp"

namespace testutil {

inline optlens::Matrix gaussian(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  optlens::Matrix m(r, c);
  for (double& x : m.data()) {
    x = scale * n01(rng);
  }
  return m;
}

/// Random orthogonal n x n matrix (Gram-Schmidt on a Gaussian matrix).
inline optlens::Matrix orthogonal(std::size_t n, std::uint64_t seed) {
  optlens::Matrix q = gaussian(n, n, seed);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double d = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        d += q(i, j) * q(i, k);
      }
      for (std::size_t i = 0; i < n; ++i) {
        q(i, j) -= d * q(i, k);
      }
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      norm += q(i, j) * q(i, j);
    }
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) {
      q(i, j) /= norm;
    }
  }
  return q;
}

inline optlens::NamedParamSet randomized(const optlens::NamedParamSet& layout, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  optlens::NamedParamSet out = layout;
  for (auto& [name, t] : out) {
    for (double& x : t.data) {
      x = scale * n01(rng);
    }
  }
  return out;
}

}  // namespace testutil
