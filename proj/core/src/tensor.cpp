#include "optlens/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace optlens {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (shape.empty() || shape.size() > 2) {
    throw ShapeError("tensors must have rank 1 or 2");
  }
  if (product(shape) != data.size()) {
    throw ShapeError("tensor data length does not match its shape");
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape_) {
  const std::size_t n = product(shape_);
  return Tensor(std::move(shape_), std::vector<double>(n, 0.0));
}

Tensor Tensor::from_matrix(const Matrix& m) { return Tensor({m.rows(), m.cols()}, m.data()); }

Matrix Tensor::as_matrix() const { return Matrix(view_rows(), view_cols(), data); }

void NamedParamSet::add(std::string name, Tensor t) {
  if (contains(name)) {
    throw ShapeError("duplicate parameter name '" + name + "'");
  }
  entries_.emplace_back(std::move(name), std::move(t));
}

bool NamedParamSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.first == name; });
}

const Tensor& NamedParamSet::at(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) {
      return t;
    }
  }
  throw ShapeError("unknown parameter '" + std::string(name) + "'");
}

Tensor& NamedParamSet::at(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

std::size_t NamedParamSet::numel() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    n += e.second.numel();
  }
  return n;
}

NamedParamSet NamedParamSet::zeros_like() const {
  NamedParamSet out;
  for (const auto& [name, t] : entries_) {
    out.entries_.emplace_back(name, Tensor::zeros(t.shape));
  }
  return out;
}

bool NamedParamSet::same_layout(const NamedParamSet& other) const {
  if (entries_.size() != other.entries_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first || entries_[i].second.shape != other.entries_[i].second.shape) {
      return false;
    }
  }
  return true;
}

std::vector<double> NamedParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(numel());
  for (const auto& e : entries_) {
    flat.insert(flat.end(), e.second.data.begin(), e.second.data.end());
  }
  return flat;
}

NamedParamSet NamedParamSet::unflatten(std::span<const double> flat) const {
  if (flat.size() != numel()) {
    throw ShapeError("flat vector length does not match parameter count");
  }
  NamedParamSet out = *this;
  std::size_t offset = 0;
  for (auto& e : out.entries_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), e.second.numel(), e.second.data.begin());
    offset += e.second.numel();
  }
  return out;
}

bool NamedParamSet::all_finite() const {
  for (const auto& e : entries_) {
    for (double x : e.second.data) {
      if (!std::isfinite(x)) {
        return false;
      }
    }
  }
  return true;
}

void require_same_layout(const NamedParamSet& a, const NamedParamSet& b, std::string_view what) {
  if (!a.same_layout(b)) {
    throw ShapeError(std::string(what) + ": parameter layout mismatch");
  }
}

double dot(const NamedParamSet& a, const NamedParamSet& b) {
  require_same_layout(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a[i].second.data;
    const auto& y = b[i].second.data;
    for (std::size_t k = 0; k < x.size(); ++k) {
      s += x[k] * y[k];
    }
  }
  return s;
}

NamedParamSet axpy(const NamedParamSet& a, double s, const NamedParamSet& b) {
  require_same_layout(a, b, "axpy");
  NamedParamSet out = a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& x = out[i].second.data;
    const auto& y = b[i].second.data;
    for (std::size_t k = 0; k < x.size(); ++k) {
      x[k] += s * y[k];
    }
  }
  return out;
}

NamedParamSet scaled(const NamedParamSet& a, double s) {
  NamedParamSet out = a;
  for (auto& e : out) {
    for (double& x : e.second.data) {
      x *= s;
    }
  }
  return out;
}

double max_abs(const NamedParamSet& a) {
  double m = 0.0;
  for (const auto& e : a) {
    for (double x : e.second.data) {
      m = std::max(m, std::abs(x));
    }
  }
  return m;
}

}  // namespace optlens
