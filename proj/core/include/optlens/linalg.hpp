#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "optlens/tensor.hpp"

namespace optlens::linalg {

/// Singular values sorted non-increasing; length min(rows, cols) of the source.
struct SingularSpectrum {
  std::vector<double> values;

  [[nodiscard]] double largest() const noexcept { return values.empty() ? 0.0 : values.front(); }
};

/// Thin SVD: m == u * diag(s) * v^T with u (rows x k), v (cols x k), k = min(rows, cols).
struct Svd {
  Matrix u;
  std::vector<double> s;
  Matrix v;
};

/// Off-diagonal Gram threshold for the Jacobi sweeps.
inline constexpr double kJacobiTolerance = 1e-12;
/// Values below this fraction of sigma_1 are numerical dust.
inline constexpr double kSpectrumDust = 1e-12;

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);

/// Throws NumericError naming `what` if any entry is NaN/Inf.
void require_finite(const Matrix& m, std::string_view what);

/// One-sided (Hestenes) Jacobi SVD.
Svd svd(const Matrix& m);
SingularSpectrum singular_values(const Matrix& m);

/// U V^T from the thin SVD; the nearest semi-orthogonal matrix to m.
Matrix polar_factor(const Matrix& m);

double frobenius_norm(const Matrix& m);
double spectral_norm(const Matrix& m);

/// Zeroes values below kSpectrumDust * sigma_1.
SingularSpectrum clamp_dust(SingularSpectrum spectrum, double relative = kSpectrumDust);

}  // namespace optlens::linalg
