#pragma once

// Test-only reference implementations. Nothing here calls into the library's
// numerical code; they share only the plain data containers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "optlens/models.hpp"
#include "optlens/tensor.hpp"

namespace oracle {

using optlens::Matrix;
using optlens::NamedParamSet;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0.0L;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        s += static_cast<long double>(a(i, k)) * b(k, j);
      }
      c(i, j) = static_cast<double>(s);
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      t(j, i) = a(i, j);
    }
  }
  return t;
}

inline double frobenius_distance(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

struct SymEigen {
  std::vector<double> values;  // descending
  Matrix vectors;              // columns, matching values
};

// Classical two-sided cyclic Jacobi on a symmetric matrix.
inline SymEigen sym_eigen(Matrix a) {
  const std::size_t n = a.rows();
  Matrix v = Matrix::identity(n);
  for (int sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        total += a(i, j) * a(i, j);
        if (i != j) {
          off += a(i, j) * a(i, j);
        }
      }
    }
    if (off <= 1e-30 * std::max(total, 1e-300)) {
      break;
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) {
          continue;
        }
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  SymEigen out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) {
      out.vectors(r, k) = v(r, order[k]);
    }
  }
  return out;
}

// Singular values as square roots of the eigenvalues of the smaller Gram matrix.
inline std::vector<double> singular_values(const Matrix& m) {
  const bool wide = m.rows() <= m.cols();
  const Matrix gram = wide ? matmul(m, transpose(m)) : matmul(transpose(m), m);
  auto eig = sym_eigen(gram);
  for (double& x : eig.values) {
    x = std::sqrt(std::max(x, 0.0));
  }
  return eig.values;
}

// U V^T = (m m^T)^{-1/2} m for wide m, m (m^T m)^{-1/2} for tall m.
inline Matrix polar_factor(const Matrix& m) {
  const bool wide = m.rows() <= m.cols();
  const Matrix gram = wide ? matmul(m, transpose(m)) : matmul(transpose(m), m);
  const auto eig = sym_eigen(gram);
  const std::size_t n = gram.rows();
  Matrix inv_sqrt(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        s += eig.vectors(i, k) * eig.vectors(j, k) / std::sqrt(eig.values[k]);
      }
      inv_sqrt(i, j) = s;
    }
  }
  return wide ? matmul(inv_sqrt, m) : matmul(m, inv_sqrt);
}

// Central differences of a scalar function of a flat vector along coordinate i.
inline double central_difference(const std::function<double(std::span<const double>)>& f,
                                 std::vector<double> x, std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = f(x);
  x[i] = x0 - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

// Fourth-order five-point stencil along coordinate i.
inline double five_point_difference(const std::function<double(std::span<const double>)>& f,
                                    std::vector<double> x, std::size_t i, double h) {
  const double x0 = x[i];
  const auto at = [&](double offset) {
    x[i] = x0 + offset;
    return f(x);
  };
  return (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
}

// Dense symmetric matrix assembled column by column from a Hessian-vector product.
inline Matrix dense_hessian(const std::function<std::vector<double>(const std::vector<double>&)>& hvp,
                            std::size_t dim) {
  Matrix h(dim, dim);
  for (std::size_t j = 0; j < dim; ++j) {
    std::vector<double> e(dim, 0.0);
    e[j] = 1.0;
    const auto col = hvp(e);
    for (std::size_t i = 0; i < dim; ++i) {
      h(i, j) = col[i];
    }
  }
  // Symmetrise away rounding asymmetry.
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = i + 1; j < dim; ++j) {
      const double s = 0.5 * (h(i, j) + h(j, i));
      h(i, j) = s;
      h(j, i) = s;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Tape-free model forwards, written directly from the layer equations.

using Vec = std::vector<double>;

inline Vec affine(const NamedParamSet& p, const std::string& name, const Vec& x) {
  const auto& w = p.at(name + ".weight");
  const auto& b = p.at(name + ".bias");
  const std::size_t out = w.shape[0];
  const std::size_t in = w.shape[1];
  Vec y(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = b.data[o];
    for (std::size_t i = 0; i < in; ++i) {
      s += w.data[o * in + i] * x[i];
    }
    y[o] = s;
  }
  return y;
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline Vec map(Vec v, double (*f)(double)) {
  for (double& x : v) {
    x = f(x);
  }
  return v;
}

inline Vec concat(const Vec& a, const Vec& b) {
  Vec out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

inline Vec pointnet_logits(const NamedParamSet& p, const optlens::models::ModelSpec& spec,
                           const optlens::models::PointCloud& cloud) {
  Vec mean(3, 0.0);
  for (std::size_t i = 0; i < cloud.num_points(); ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      mean[k] += cloud.points(i, k) / static_cast<double>(cloud.num_points());
    }
  }
  Vec pooled;
  for (std::size_t i = 0; i < cloud.num_points(); ++i) {
    Vec h{cloud.points(i, 0) - mean[0], cloud.points(i, 1) - mean[1], cloud.points(i, 2) - mean[2]};
    for (std::size_t l = 0; l < spec.num_layers; ++l) {
      h = map(affine(p, "point." + std::to_string(l), h), relu);
    }
    if (pooled.empty()) {
      pooled = h;
    } else {
      for (std::size_t k = 0; k < h.size(); ++k) {
        pooled[k] = std::max(pooled[k], h[k]);
      }
    }
  }
  const std::size_t hidden = spec.widths.size() - spec.num_layers;
  for (std::size_t j = 0; j < hidden; ++j) {
    pooled = map(affine(p, "head." + std::to_string(j), pooled), relu);
  }
  return affine(p, "head." + std::to_string(hidden), pooled);
}

inline Vec egnn_logits(const NamedParamSet& p, const optlens::models::ModelSpec& spec,
                       const optlens::models::PointCloud& cloud) {
  const std::size_t n = cloud.num_points();
  std::vector<Vec> x(n);
  Vec centroid(3, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = {cloud.points(i, 0), cloud.points(i, 1), cloud.points(i, 2)};
    for (int k = 0; k < 3; ++k) {
      centroid[k] += x[i][k] / static_cast<double>(n);
    }
  }
  std::vector<Vec> h(n);
  for (std::size_t i = 0; i < n; ++i) {
    double r = 0.0;
    for (int k = 0; k < 3; ++k) {
      r += (x[i][k] - centroid[k]) * (x[i][k] - centroid[k]);
    }
    h[i] = map(affine(p, "embed", {r}), silu);
  }
  for (std::size_t l = 0; l < spec.num_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l);
    const bool update_x = l + 1 < spec.num_layers;
    std::vector<Vec> h_next(n);
    std::vector<Vec> x_next = x;
    for (std::size_t i = 0; i < n; ++i) {
      Vec m_sum;
      Vec shift(3, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
          continue;
        }
        double d = 0.0;
        for (int k = 0; k < 3; ++k) {
          d += (x[i][k] - x[j][k]) * (x[i][k] - x[j][k]);
        }
        Vec z = concat(concat(h[i], h[j]), {d});
        const Vec m_ij = affine(p, pre + ".edge.1", map(affine(p, pre + ".edge.0", z), silu));
        if (m_sum.empty()) {
          m_sum.assign(m_ij.size(), 0.0);
        }
        for (std::size_t k = 0; k < m_ij.size(); ++k) {
          m_sum[k] += m_ij[k];
        }
        if (update_x) {
          const Vec phi = affine(p, pre + ".coord.1", map(affine(p, pre + ".coord.0", m_ij), silu));
          const double gate = std::tanh(phi[0]);
          for (int k = 0; k < 3; ++k) {
            shift[k] += (x[i][k] - x[j][k]) * gate;
          }
        }
      }
      const double inv = 1.0 / static_cast<double>(n - 1);
      for (double& v : m_sum) {
        v *= inv;
      }
      h_next[i] = affine(p, pre + ".node.1", map(affine(p, pre + ".node.0", concat(h[i], m_sum)), silu));
      if (update_x) {
        for (int k = 0; k < 3; ++k) {
          x_next[i][k] += shift[k] * inv;
        }
      }
    }
    h = std::move(h_next);
    x = std::move(x_next);
  }
  Vec pooled(h[0].size(), 0.0);
  for (const auto& hi : h) {
    for (std::size_t k = 0; k < hi.size(); ++k) {
      pooled[k] += hi[k] / static_cast<double>(n);
    }
  }
  return affine(p, "head.1", map(affine(p, "head.0", pooled), silu));
}

inline double cross_entropy(const Vec& logits, int label) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) {
    z += std::exp(v - mx);
  }
  return std::log(z) + mx - logits[static_cast<std::size_t>(label)];
}

/// Scalar AdamW trajectory with bias correction and decoupled decay.
inline std::vector<double> adamw_trajectory(double theta, const std::vector<double>& grads, double lr, double wd,
                                            double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
  double m = 0.0;
  double v = 0.0;
  std::vector<double> out;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double m_hat = m / (1.0 - std::pow(b1, static_cast<double>(t)));
    const double v_hat = v / (1.0 - std::pow(b2, static_cast<double>(t)));
    theta -= lr * (m_hat / (std::sqrt(v_hat) + eps) + wd * theta);
    out.push_back(theta);
  }
  return out;
}

}  // namespace oracle
