#include "optlens/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace optlens::linalg {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: (" + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + ") * (" +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) {
        ci[j] += aik * bk[j];
      }
    }
  }
  return c;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      t(j, i) = m(i, j);
    }
  }
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("add: shape mismatch");
  }
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) {
    c.data()[i] += b.data()[i];
  }
  return c;
}

Matrix scale(const Matrix& m, double s) {
  Matrix c = m;
  for (double& x : c.data()) {
    x *= s;
  }
  return c;
}

void require_finite(const Matrix& m, std::string_view what) {
  for (double x : m.data()) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(what) + ": non-finite matrix entry");
    }
  }
}

namespace {

double column_dot(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += x[i] * y[i];
  }
  return s;
}

// Tall case (rows >= cols). Columns of `a` are orthogonalised in place by
// plane rotations accumulated into `v`.
Svd jacobi_tall(const Matrix& m) {
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  std::vector<std::vector<double>> a(cols, std::vector<double>(rows));
  std::vector<std::vector<double>> v(cols, std::vector<double>(cols, 0.0));
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t i = 0; i < rows; ++i) {
      a[j][i] = m(i, j);
    }
    v[j][j] = 1.0;
  }

  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < cols; ++p) {
      for (std::size_t q = p + 1; q < cols; ++q) {
        const double alpha = column_dot(a[p], a[p]);
        const double beta = column_dot(a[q], a[q]);
        const double gamma = column_dot(a[p], a[q]);
        if (alpha == 0.0 || beta == 0.0 || std::abs(gamma) <= kJacobiTolerance * std::sqrt(alpha * beta)) {
          continue;
        }
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double ap = a[p][i];
          const double aq = a[q][i];
          a[p][i] = c * ap - s * aq;
          a[q][i] = s * ap + c * aq;
        }
        for (std::size_t i = 0; i < cols; ++i) {
          const double vp = v[p][i];
          const double vq = v[q][i];
          v[p][i] = c * vp - s * vq;
          v[q][i] = s * vp + c * vq;
        }
      }
    }
    if (!rotated) {
      break;
    }
  }

  std::vector<double> sigma(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    sigma[j] = std::sqrt(column_dot(a[j], a[j]));
  }
  std::vector<std::size_t> order(cols);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  Svd out{Matrix(rows, cols), std::vector<double>(cols), Matrix(cols, cols)};
  for (std::size_t k = 0; k < cols; ++k) {
    const std::size_t j = order[k];
    out.s[k] = sigma[j];
    for (std::size_t i = 0; i < rows; ++i) {
      out.u(i, k) = sigma[j] > 0.0 ? a[j][i] / sigma[j] : 0.0;
    }
    for (std::size_t i = 0; i < cols; ++i) {
      out.v(i, k) = v[j][i];
    }
  }
  return out;
}

}  // namespace

Svd svd(const Matrix& m) {
  require_finite(m, "svd");
  if (m.rows() >= m.cols()) {
    return jacobi_tall(m);
  }
  Svd t = jacobi_tall(transpose(m));
  return Svd{std::move(t.v), std::move(t.s), std::move(t.u)};
}

SingularSpectrum singular_values(const Matrix& m) { return SingularSpectrum{svd(m).s}; }

Matrix polar_factor(const Matrix& m) {
  const Svd d = svd(m);
  return matmul(d.u, transpose(d.v));
}

double frobenius_norm(const Matrix& m) {
  require_finite(m, "frobenius_norm");
  double s = 0.0;
  for (double x : m.data()) {
    s += x * x;
  }
  return std::sqrt(s);
}

double spectral_norm(const Matrix& m) { return singular_values(m).largest(); }

SingularSpectrum clamp_dust(SingularSpectrum spectrum, double relative) {
  const double cutoff = relative * spectrum.largest();
  for (double& s : spectrum.values) {
    if (s < cutoff) {
      s = 0.0;
    }
  }
  return spectrum;
}

}  // namespace optlens::linalg
