#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "optlens/errors.hpp"

namespace optlens {

/// Dense row-major matrix. The scalar type is a template parameter so the
/// autodiff tape can carry dual numbers through the same container.
template <class T>
class BasicMatrix {
 public:
  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length does not match rows*cols");
    }
  }
  BasicMatrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) {
        throw ShapeError("ragged matrix initializer");
      }
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      m(i, i) = T(1);
    }
    return m;
  }

  static BasicMatrix diagonal(std::span<const double> d) {
    BasicMatrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      m(i, i) = T(d[i]);
    }
    return m;
  }

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  [[nodiscard]] std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  [[nodiscard]] std::span<const T> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  [[nodiscard]] std::vector<T>& data() noexcept { return data_; }
  [[nodiscard]] const std::vector<T>& data() const noexcept { return data_; }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;

/// Parameter tensor: rank 1 (biases, gains) or rank 2 (weights, stored
/// out_features x in_features so each row is one output unit).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);
  static Tensor zeros(std::vector<std::size_t> shape_);
  static Tensor from_matrix(const Matrix& m);

  [[nodiscard]] std::size_t numel() const noexcept { return data.size(); }
  [[nodiscard]] std::size_t rank() const noexcept { return shape.size(); }
  [[nodiscard]] bool is_matrix() const noexcept { return shape.size() == 2; }
  /// Row count when viewed as a matrix; rank-1 tensors view as 1 x n.
  [[nodiscard]] std::size_t view_rows() const noexcept { return shape.size() == 2 ? shape[0] : 1; }
  [[nodiscard]] std::size_t view_cols() const noexcept { return shape.empty() ? 0 : shape.back(); }
  [[nodiscard]] Matrix as_matrix() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Ordered name -> tensor map. Registration order is meaningful: it is the
/// layer order used by spectral profiles and optimizer routing.
class NamedParamSet {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void add(std::string name, Tensor t);
  [[nodiscard]] bool contains(std::string_view name) const;
  [[nodiscard]] const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
  [[nodiscard]] std::size_t numel() const noexcept;

  [[nodiscard]] auto begin() noexcept { return entries_.begin(); }
  [[nodiscard]] auto end() noexcept { return entries_.end(); }
  [[nodiscard]] auto begin() const noexcept { return entries_.begin(); }
  [[nodiscard]] auto end() const noexcept { return entries_.end(); }
  [[nodiscard]] const Entry& operator[](std::size_t i) const { return entries_[i]; }
  [[nodiscard]] Entry& operator[](std::size_t i) { return entries_[i]; }

  /// Same names and shapes, all zeros.
  [[nodiscard]] NamedParamSet zeros_like() const;
  [[nodiscard]] bool same_layout(const NamedParamSet& other) const;
  /// Concatenation of all tensors in registration order.
  [[nodiscard]] std::vector<double> flatten() const;
  /// Inverse of flatten() onto this set's layout.
  [[nodiscard]] NamedParamSet unflatten(std::span<const double> flat) const;
  [[nodiscard]] bool all_finite() const;

  friend bool operator==(const NamedParamSet&, const NamedParamSet&) = default;

 private:
  std::vector<Entry> entries_;
};

/// Throws ShapeError unless `b` mirrors `a`'s names and shapes.
void require_same_layout(const NamedParamSet& a, const NamedParamSet& b, std::string_view what);

/// Global inner product over all entries.
double dot(const NamedParamSet& a, const NamedParamSet& b);
/// a + s * b, elementwise over aligned sets.
NamedParamSet axpy(const NamedParamSet& a, double s, const NamedParamSet& b);
NamedParamSet scaled(const NamedParamSet& a, double s);
double max_abs(const NamedParamSet& a);

}  // namespace optlens
