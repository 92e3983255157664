#include "optlens/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

namespace optlens::ad {

using std::exp;
using std::log;
using std::tanh;

namespace {

// Dense kernels go through Eigen. A Dual matrix is viewed as two strided
// double matrices (value, tangent), so each Dual product is three real ones.
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Stride = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
using View = Eigen::Map<RowMajor, Eigen::Unaligned, Stride>;
using ConstView = Eigen::Map<const RowMajor, Eigen::Unaligned, Stride>;

Eigen::Map<RowMajor> view(BasicMatrix<double>& m) { return {m.data().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())}; }
Eigen::Map<const RowMajor> view(const BasicMatrix<double>& m) {
  return {m.data().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())};
}

View part(BasicMatrix<Dual>& m, int which) {
  auto* base = reinterpret_cast<double*>(m.data().data()) + which;
  return {base, Eigen::Index(m.rows()), Eigen::Index(m.cols()), Stride(Eigen::Index(2 * m.cols()), 2)};
}
ConstView part(const BasicMatrix<Dual>& m, int which) {
  const auto* base = reinterpret_cast<const double*>(m.data().data()) + which;
  return {base, Eigen::Index(m.rows()), Eigen::Index(m.cols()), Stride(Eigen::Index(2 * m.cols()), 2)};
}

static_assert(sizeof(Dual) == 2 * sizeof(double));

enum class Form { kNN, kNT, kTN };

template <Form F, class A, class B>
auto product(const A& a, const B& b) {
  if constexpr (F == Form::kNN) {
    return a * b;
  } else if constexpr (F == Form::kNT) {
    return a * b.transpose();
  } else {
    return a.transpose() * b;
  }
}

template <Form F>
void gemm_acc(const BasicMatrix<double>& a, const BasicMatrix<double>& b, BasicMatrix<double>& c) {
  view(c).noalias() += product<F>(view(a), view(b));
}

template <Form F>
void gemm_acc(const BasicMatrix<Dual>& a, const BasicMatrix<Dual>& b, BasicMatrix<Dual>& c) {
  const ConstView av = part(a, 0);
  const ConstView ad = part(a, 1);
  const ConstView bv = part(b, 0);
  const ConstView bd = part(b, 1);
  RowMajor tangent = product<F>(ad, bv);
  tangent.noalias() += product<F>(av, bd);
  RowMajor value = product<F>(av, bv);
  part(c, 0) += value;
  part(c, 1) += tangent;
}

// c += a * b
template <class T>
void gemm_nn_acc(const BasicMatrix<T>& a, const BasicMatrix<T>& b, BasicMatrix<T>& c) {
  gemm_acc<Form::kNN>(a, b, c);
}

// c += a * b^T
template <class T>
void gemm_nt_acc(const BasicMatrix<T>& a, const BasicMatrix<T>& b, BasicMatrix<T>& c) {
  gemm_acc<Form::kNT>(a, b, c);
}

// c += a^T * b
template <class T>
void gemm_tn_acc(const BasicMatrix<T>& a, const BasicMatrix<T>& b, BasicMatrix<T>& c) {
  gemm_acc<Form::kTN>(a, b, c);
}

template <class T>
T sigmoid(const T& x) {
  return T(1.0) / (T(1.0) + exp(-x));
}

std::string shape_str(std::size_t r, std::size_t c) { return std::to_string(r) + "x" + std::to_string(c); }

}  // namespace

template <class T>
Var Tape<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <class T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.id >= nodes_.size()) {
    throw ShapeError("tape: variable does not belong to this tape");
  }
  return nodes_[v.id];
}

template <class T>
Var Tape<T>::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::param(Mat value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::matmul(Var a, Var b) {
  const auto& x = node(a);
  const auto& y = node(b);
  if (x.value.cols() != y.value.rows()) {
    throw ShapeError("tape matmul: " + shape_str(x.value.rows(), x.value.cols()) + " * " +
                     shape_str(y.value.rows(), y.value.cols()));
  }
  Node n;
  n.op = Op::kMatMul;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = x.needs_grad || y.needs_grad;
  n.value = Mat(x.value.rows(), y.value.cols());
  gemm_nn_acc(x.value, y.value, n.value);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::matmul_nt(Var a, Var b) {
  const auto& x = node(a);
  const auto& y = node(b);
  if (x.value.cols() != y.value.cols()) {
    throw ShapeError("tape matmul_nt: " + shape_str(x.value.rows(), x.value.cols()) + " * (" +
                     shape_str(y.value.rows(), y.value.cols()) + ")^T");
  }
  Node n;
  n.op = Op::kMatMulNT;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = x.needs_grad || y.needs_grad;
  n.value = Mat(x.value.rows(), y.value.rows());
  gemm_nt_acc(x.value, y.value, n.value);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::add(Var a, Var b) {
  const auto& x = node(a);
  const auto& y = node(b);
  if (x.value.rows() != y.value.rows() || x.value.cols() != y.value.cols()) {
    throw ShapeError("tape add: shape mismatch");
  }
  Node n;
  n.op = Op::kAdd;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = x.needs_grad || y.needs_grad;
  n.value = x.value;
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    n.value.data()[i] += y.value.data()[i];
  }
  return push(std::move(n));
}

template <class T>
Var Tape<T>::add_bias(Var a, Var bias) {
  const auto& x = node(a);
  const auto& y = node(bias);
  if (y.value.rows() != 1 || y.value.cols() != x.value.cols()) {
    throw ShapeError("tape add_bias: bias must be 1x" + std::to_string(x.value.cols()));
  }
  Node n;
  n.op = Op::kAddBias;
  n.a = a.id;
  n.b = bias.id;
  n.needs_grad = x.needs_grad || y.needs_grad;
  n.value = x.value;
  for (std::size_t i = 0; i < n.value.rows(); ++i) {
    auto r = n.value.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      r[j] += y.value.data()[j];
    }
  }
  return push(std::move(n));
}

template <class T>
Var Tape<T>::scale(Var a, double s) {
  const auto& x = node(a);
  Node n;
  n.op = Op::kScale;
  n.a = a.id;
  n.scalar = s;
  n.needs_grad = x.needs_grad;
  n.value = x.value;
  for (auto& e : n.value.data()) {
    e *= T(s);
  }
  return push(std::move(n));
}

template <class T>
Var Tape<T>::relu(Var a) {
  const auto& x = node(a);
  Node n;
  n.op = Op::kRelu;
  n.a = a.id;
  n.needs_grad = x.needs_grad;
  n.value = x.value;
  for (auto& e : n.value.data()) {
    if (!(value_of(e) > 0.0)) {
      e = T(0.0);
    }
  }
  return push(std::move(n));
}

template <class T>
Var Tape<T>::silu(Var a) {
  const auto& x = node(a);
  Node n;
  n.op = Op::kSilu;
  n.a = a.id;
  n.needs_grad = x.needs_grad;
  n.aux = Mat(x.value.rows(), x.value.cols());
  n.value = Mat(x.value.rows(), x.value.cols());
  for (std::size_t i = 0; i < x.value.size(); ++i) {
    const T s = sigmoid(x.value.data()[i]);
    n.aux.data()[i] = s;
    n.value.data()[i] = x.value.data()[i] * s;
  }
  return push(std::move(n));
}

template <class T>
Var Tape<T>::tanh(Var a) {
  const auto& x = node(a);
  Node n;
  n.op = Op::kTanh;
  n.a = a.id;
  n.needs_grad = x.needs_grad;
  n.value = Mat(x.value.rows(), x.value.cols());
  for (std::size_t i = 0; i < x.value.size(); ++i) {
    using std::tanh;
    n.value.data()[i] = tanh(x.value.data()[i]);
  }
  return push(std::move(n));
}

template <class T>
Var Tape<T>::segment_max(Var a, std::shared_ptr<const Segments> segments) {
  const auto& x = node(a);
  if (segments->total() != x.value.rows()) {
    throw ShapeError("tape segment_max: segments cover " + std::to_string(segments->total()) + " rows, input has " +
                     std::to_string(x.value.rows()));
  }
  const std::size_t cols = x.value.cols();
  Node n;
  n.op = Op::kSegmentMax;
  n.a = a.id;
  n.needs_grad = x.needs_grad;
  n.value = Mat(segments->count(), cols);
  n.argmax.assign(segments->count() * cols, 0);
  for (std::size_t k = 0; k < segments->count(); ++k) {
    if (segments->length(k) == 0) {
      throw ShapeError("tape segment_max: empty segment");
    }
    for (std::size_t j = 0; j < cols; ++j) {
      std::size_t best = segments->offsets[k];
      for (std::size_t r = best + 1; r < segments->offsets[k + 1]; ++r) {
        if (value_of(x.value(r, j)) > value_of(x.value(best, j))) {
          best = r;
        }
      }
      n.argmax[k * cols + j] = best;
      n.value(k, j) = x.value(best, j);
    }
  }
  n.segments = std::move(segments);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::segment_sum(Var a, std::shared_ptr<const Segments> segments) {
  const auto& x = node(a);
  if (segments->total() != x.value.rows()) {
    throw ShapeError("tape segment_sum: segment/row count mismatch");
  }
  const std::size_t cols = x.value.cols();
  Node n;
  n.op = Op::kSegmentSum;
  n.a = a.id;
  n.needs_grad = x.needs_grad;
  n.value = Mat(segments->count(), cols);
  for (std::size_t k = 0; k < segments->count(); ++k) {
    auto out = n.value.row(k);
    for (std::size_t r = segments->offsets[k]; r < segments->offsets[k + 1]; ++r) {
      auto in = x.value.row(r);
      for (std::size_t j = 0; j < cols; ++j) {
        out[j] += in[j];
      }
    }
  }
  n.segments = std::move(segments);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::segment_mean(Var a, std::shared_ptr<const Segments> segments) {
  const auto& x = node(a);
  if (segments->total() != x.value.rows()) {
    throw ShapeError("tape segment_mean: segment/row count mismatch");
  }
  const std::size_t cols = x.value.cols();
  Node n;
  n.op = Op::kSegmentMean;
  n.a = a.id;
  n.needs_grad = x.needs_grad;
  n.value = Mat(segments->count(), cols);
  for (std::size_t k = 0; k < segments->count(); ++k) {
    if (segments->length(k) == 0) {
      throw ShapeError("tape segment_mean: empty segment");
    }
    auto out = n.value.row(k);
    for (std::size_t r = segments->offsets[k]; r < segments->offsets[k + 1]; ++r) {
      auto in = x.value.row(r);
      for (std::size_t j = 0; j < cols; ++j) {
        out[j] += in[j];
      }
    }
    const T inv(1.0 / static_cast<double>(segments->length(k)));
    for (auto& e : out) {
      e *= inv;
    }
  }
  n.segments = std::move(segments);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::gather_rows(Var a, std::shared_ptr<const std::vector<std::uint32_t>> index) {
  const auto& x = node(a);
  const std::size_t cols = x.value.cols();
  Node n;
  n.op = Op::kGatherRows;
  n.a = a.id;
  n.needs_grad = x.needs_grad;
  n.value = Mat(index->size(), cols);
  for (std::size_t i = 0; i < index->size(); ++i) {
    const std::size_t r = (*index)[i];
    if (r >= x.value.rows()) {
      throw ShapeError("tape gather_rows: index out of range");
    }
    std::copy_n(x.value.row(r).begin(), cols, n.value.row(i).begin());
  }
  n.index = std::move(index);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::concat_cols(Var a, Var b) {
  const auto& x = node(a);
  const auto& y = node(b);
  if (x.value.rows() != y.value.rows()) {
    throw ShapeError("tape concat_cols: row count mismatch");
  }
  Node n;
  n.op = Op::kConcatCols;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = x.needs_grad || y.needs_grad;
  n.value = Mat(x.value.rows(), x.value.cols() + y.value.cols());
  for (std::size_t i = 0; i < x.value.rows(); ++i) {
    auto out = n.value.row(i);
    std::copy(x.value.row(i).begin(), x.value.row(i).end(), out.begin());
    std::copy(y.value.row(i).begin(), y.value.row(i).end(), out.begin() + static_cast<std::ptrdiff_t>(x.value.cols()));
  }
  return push(std::move(n));
}

template <class T>
Var Tape<T>::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const auto& x = node(a);
  if (begin >= end || end > x.value.cols()) {
    throw ShapeError("tape slice_cols: bad column range");
  }
  Node n;
  n.op = Op::kSliceCols;
  n.a = a.id;
  n.begin = begin;
  n.needs_grad = x.needs_grad;
  n.value = Mat(x.value.rows(), end - begin);
  for (std::size_t i = 0; i < x.value.rows(); ++i) {
    auto in = x.value.row(i);
    std::copy(in.begin() + static_cast<std::ptrdiff_t>(begin), in.begin() + static_cast<std::ptrdiff_t>(end),
              n.value.row(i).begin());
  }
  return push(std::move(n));
}

template <class T>
Var Tape<T>::pair_sq_dist(Var x, std::shared_ptr<const PairIndex> pairs) {
  const auto& p = node(x);
  Node n;
  n.op = Op::kPairSqDist;
  n.a = x.id;
  n.needs_grad = p.needs_grad;
  n.value = Mat(pairs->size(), 1);
  const std::size_t cols = p.value.cols();
  for (std::size_t e = 0; e < pairs->size(); ++e) {
    auto xi = p.value.row(pairs->src[e]);
    auto xj = p.value.row(pairs->dst[e]);
    T s{};
    for (std::size_t k = 0; k < cols; ++k) {
      const T d = xi[k] - xj[k];
      s += d * d;
    }
    n.value(e, 0) = s;
  }
  n.pairs = std::move(pairs);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::transpose(Var a) {
  const auto& x = node(a);
  Node n;
  n.op = Op::kTranspose;
  n.a = a.id;
  n.needs_grad = x.needs_grad;
  n.value = Mat(x.value.cols(), x.value.rows());
  for (std::size_t i = 0; i < x.value.rows(); ++i) {
    for (std::size_t j = 0; j < x.value.cols(); ++j) {
      n.value(j, i) = x.value(i, j);
    }
  }
  return push(std::move(n));
}

template <class T>
Var Tape<T>::pair_combine(Var a, Var b, std::shared_ptr<const PairIndex> pairs, Var s, Var w) {
  const auto& x = node(a);
  const auto& y = node(b);
  const auto& sv = node(s);
  const auto& wv = node(w);
  const std::size_t cols = x.value.cols();
  if (y.value.cols() != cols || wv.value.rows() != 1 || wv.value.cols() != cols || sv.value.cols() != 1 ||
      sv.value.rows() != pairs->size()) {
    throw ShapeError("tape pair_combine: inconsistent operand shapes");
  }
  Node n;
  n.op = Op::kPairCombine;
  n.a = a.id;
  n.b = b.id;
  n.c = s.id;
  n.d = w.id;
  n.needs_grad = x.needs_grad || y.needs_grad || sv.needs_grad || wv.needs_grad;
  n.value = Mat(pairs->size(), cols);
  const T* wr = wv.value.data().data();
  for (std::size_t e = 0; e < pairs->size(); ++e) {
    const T* xi = x.value.data().data() + pairs->src[e] * cols;
    const T* yj = y.value.data().data() + pairs->dst[e] * cols;
    const T se = sv.value(e, 0);
    T* out = n.value.data().data() + e * cols;
    for (std::size_t k = 0; k < cols; ++k) {
      out[k] = xi[k] + yj[k] + se * wr[k];
    }
  }
  n.pairs = std::move(pairs);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::pair_diff(Var x, std::shared_ptr<const PairIndex> pairs) {
  const auto& p = node(x);
  Node n;
  n.op = Op::kPairDiff;
  n.a = x.id;
  n.needs_grad = p.needs_grad;
  const std::size_t cols = p.value.cols();
  n.value = Mat(pairs->size(), cols);
  for (std::size_t e = 0; e < pairs->size(); ++e) {
    auto xi = p.value.row(pairs->src[e]);
    auto xj = p.value.row(pairs->dst[e]);
    auto out = n.value.row(e);
    for (std::size_t k = 0; k < cols; ++k) {
      out[k] = xi[k] - xj[k];
    }
  }
  n.pairs = std::move(pairs);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::mul_col(Var a, Var w) {
  const auto& x = node(a);
  const auto& y = node(w);
  if (y.value.cols() != 1 || y.value.rows() != x.value.rows()) {
    throw ShapeError("tape mul_col: weight must be " + std::to_string(x.value.rows()) + "x1");
  }
  Node n;
  n.op = Op::kMulCol;
  n.a = a.id;
  n.b = w.id;
  n.needs_grad = x.needs_grad || y.needs_grad;
  n.value = x.value;
  for (std::size_t i = 0; i < n.value.rows(); ++i) {
    const T wi = y.value(i, 0);
    for (auto& e : n.value.row(i)) {
      e *= wi;
    }
  }
  return push(std::move(n));
}

template <class T>
Var Tape<T>::softmax_cross_entropy(Var logits, std::shared_ptr<const std::vector<int>> labels) {
  const auto& x = node(logits);
  const std::size_t rows = x.value.rows();
  const std::size_t cols = x.value.cols();
  if (labels->size() != rows || rows == 0) {
    throw ShapeError("tape softmax_cross_entropy: label count does not match logits rows");
  }
  Node n;
  n.op = Op::kSoftmaxXent;
  n.a = logits.id;
  n.needs_grad = x.needs_grad;
  n.aux = Mat(rows, cols);
  T total{};
  for (std::size_t i = 0; i < rows; ++i) {
    const int label = (*labels)[i];
    if (label < 0 || static_cast<std::size_t>(label) >= cols) {
      throw ShapeError("tape softmax_cross_entropy: label out of range");
    }
    auto in = x.value.row(i);
    double shift = value_of(in[0]);
    for (const auto& e : in) {
      shift = std::max(shift, value_of(e));
    }
    T denom{};
    auto prob = n.aux.row(i);
    for (std::size_t j = 0; j < cols; ++j) {
      prob[j] = exp(in[j] - T(shift));
      denom += prob[j];
    }
    for (auto& pj : prob) {
      pj /= denom;
    }
    total += (log(denom) + T(shift)) - in[static_cast<std::size_t>(label)];
  }
  n.value = Mat(1, 1);
  n.value(0, 0) = total / T(static_cast<double>(rows));
  n.labels = std::move(labels);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::half_weighted_sq_sum(Var a, Matrix weights) {
  const auto& x = node(a);
  if (weights.rows() != x.value.rows() || weights.cols() != x.value.cols()) {
    throw ShapeError("tape half_weighted_sq_sum: weight shape mismatch");
  }
  Node n;
  n.op = Op::kHalfWeightedSq;
  n.a = a.id;
  n.needs_grad = x.needs_grad;
  T s{};
  for (std::size_t i = 0; i < x.value.size(); ++i) {
    s += T(weights.data()[i]) * x.value.data()[i] * x.value.data()[i];
  }
  n.value = Mat(1, 1);
  n.value(0, 0) = T(0.5) * s;
  n.weights = std::move(weights);
  return push(std::move(n));
}

template <class T>
void Tape<T>::require_finite(Var v, std::string_view layer) const {
  for (const auto& e : node(v).value.data()) {
    if (!is_finite(e)) {
      throw NumericError("non-finite value in forward pass at layer '" + std::string(layer) + "'");
    }
  }
}

template <class T>
typename Tape<T>::Mat& Tape<T>::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) {
    n.grad = Mat(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var loss) {
  const auto& l = node(loss);
  if (l.value.rows() != 1 || l.value.cols() != 1) {
    throw ShapeError("backward: loss must be a 1x1 node");
  }
  for (auto& n : nodes_) {
    n.grad = Mat();
  }
  grad_of(loss.id)(0, 0) = T(1.0);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    if (nodes_[id].needs_grad && !nodes_[id].grad.empty() && nodes_[id].op != Op::kLeaf) {
      backprop(id);
      nodes_[id].grad = Mat();
    }
  }
}

template <class T>
void Tape<T>::backprop(std::size_t id) {
  // Take a copy of the handles we need; grad_of() may not reallocate nodes_,
  // but references into the node itself stay valid.
  Node& n = nodes_[id];
  const Mat& g = n.grad;
  const bool need_a = n.a != kNone && nodes_[n.a].needs_grad;
  const bool need_b = n.b != kNone && nodes_[n.b].needs_grad;

  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kMatMul:
      if (need_a) {
        gemm_nt_acc(g, nodes_[n.b].value, grad_of(n.a));
      }
      if (need_b) {
        gemm_tn_acc(nodes_[n.a].value, g, grad_of(n.b));
      }
      break;
    case Op::kMatMulNT:
      if (need_a) {
        gemm_nn_acc(g, nodes_[n.b].value, grad_of(n.a));
      }
      if (need_b) {
        gemm_tn_acc(g, nodes_[n.a].value, grad_of(n.b));
      }
      break;
    case Op::kAdd:
      for (std::size_t which : {n.a, n.b}) {
        if (nodes_[which].needs_grad) {
          auto& ga = grad_of(which);
          for (std::size_t i = 0; i < g.size(); ++i) {
            ga.data()[i] += g.data()[i];
          }
        }
      }
      break;
    case Op::kAddBias:
      if (need_a) {
        auto& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga.data()[i] += g.data()[i];
        }
      }
      if (need_b) {
        auto& gb = grad_of(n.b);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          auto r = g.row(i);
          for (std::size_t j = 0; j < r.size(); ++j) {
            gb.data()[j] += r[j];
          }
        }
      }
      break;
    case Op::kScale:
      if (need_a) {
        auto& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga.data()[i] += T(n.scalar) * g.data()[i];
        }
      }
      break;
    case Op::kRelu:
      if (need_a) {
        auto& ga = grad_of(n.a);
        const auto& x = nodes_[n.a].value;
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (value_of(x.data()[i]) > 0.0) {
            ga.data()[i] += g.data()[i];
          }
        }
      }
      break;
    case Op::kSilu:
      if (need_a) {
        auto& ga = grad_of(n.a);
        const auto& x = nodes_[n.a].value;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T s = n.aux.data()[i];
          ga.data()[i] += g.data()[i] * s * (T(1.0) + x.data()[i] * (T(1.0) - s));
        }
      }
      break;
    case Op::kTanh:
      if (need_a) {
        auto& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T t = n.value.data()[i];
          ga.data()[i] += g.data()[i] * (T(1.0) - t * t);
        }
      }
      break;
    case Op::kSegmentMax:
      if (need_a) {
        auto& ga = grad_of(n.a);
        const std::size_t cols = g.cols();
        for (std::size_t k = 0; k < g.rows(); ++k) {
          for (std::size_t j = 0; j < cols; ++j) {
            ga(n.argmax[k * cols + j], j) += g(k, j);
          }
        }
      }
      break;
    case Op::kSegmentSum:
    case Op::kSegmentMean:
      if (need_a) {
        auto& ga = grad_of(n.a);
        const auto& seg = *n.segments;
        for (std::size_t k = 0; k < seg.count(); ++k) {
          const T w(n.op == Op::kSegmentMean ? 1.0 / static_cast<double>(seg.length(k)) : 1.0);
          auto gk = g.row(k);
          for (std::size_t r = seg.offsets[k]; r < seg.offsets[k + 1]; ++r) {
            auto out = ga.row(r);
            for (std::size_t j = 0; j < gk.size(); ++j) {
              out[j] += w * gk[j];
            }
          }
        }
      }
      break;
    case Op::kGatherRows:
      if (need_a) {
        auto& ga = grad_of(n.a);
        for (std::size_t i = 0; i < n.index->size(); ++i) {
          auto out = ga.row((*n.index)[i]);
          auto gi = g.row(i);
          for (std::size_t j = 0; j < gi.size(); ++j) {
            out[j] += gi[j];
          }
        }
      }
      break;
    case Op::kConcatCols: {
      const std::size_t left = nodes_[n.a].value.cols();
      if (need_a) {
        auto& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < left; ++j) {
            ga(i, j) += g(i, j);
          }
        }
      }
      if (need_b) {
        auto& gb = grad_of(n.b);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = left; j < g.cols(); ++j) {
            gb(i, j - left) += g(i, j);
          }
        }
      }
      break;
    }
    case Op::kSliceCols:
      if (need_a) {
        auto& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < g.cols(); ++j) {
            ga(i, n.begin + j) += g(i, j);
          }
        }
      }
      break;
    case Op::kPairSqDist:
      if (need_a) {
        auto& ga = grad_of(n.a);
        const auto& x = nodes_[n.a].value;
        for (std::size_t e = 0; e < n.pairs->size(); ++e) {
          const std::size_t i = n.pairs->src[e];
          const std::size_t j = n.pairs->dst[e];
          const T two_g = T(2.0) * g(e, 0);
          for (std::size_t k = 0; k < x.cols(); ++k) {
            const T d = two_g * (x(i, k) - x(j, k));
            ga(i, k) += d;
            ga(j, k) -= d;
          }
        }
      }
      break;
    case Op::kPairDiff:
      if (need_a) {
        auto& ga = grad_of(n.a);
        for (std::size_t e = 0; e < n.pairs->size(); ++e) {
          const std::size_t i = n.pairs->src[e];
          const std::size_t j = n.pairs->dst[e];
          for (std::size_t k = 0; k < g.cols(); ++k) {
            ga(i, k) += g(e, k);
            ga(j, k) -= g(e, k);
          }
        }
      }
      break;
    case Op::kTranspose:
      if (need_a) {
        auto& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < g.cols(); ++j) {
            ga(j, i) += g(i, j);
          }
        }
      }
      break;
    case Op::kPairCombine: {
      const bool need_s = nodes_[n.c].needs_grad;
      const bool need_w = nodes_[n.d].needs_grad;
      const auto& sv = nodes_[n.c].value;
      const auto& wv = nodes_[n.d].value;
      Mat* ga = need_a ? &grad_of(n.a) : nullptr;
      Mat* gb = need_b ? &grad_of(n.b) : nullptr;
      Mat* gs = need_s ? &grad_of(n.c) : nullptr;
      Mat* gw = need_w ? &grad_of(n.d) : nullptr;
      const std::size_t cols = g.cols();
      for (std::size_t e = 0; e < n.pairs->size(); ++e) {
        const T* ge = g.data().data() + e * cols;
        if (ga != nullptr) {
          T* out = ga->data().data() + n.pairs->src[e] * cols;
          for (std::size_t k = 0; k < cols; ++k) {
            out[k] += ge[k];
          }
        }
        if (gb != nullptr) {
          T* out = gb->data().data() + n.pairs->dst[e] * cols;
          for (std::size_t k = 0; k < cols; ++k) {
            out[k] += ge[k];
          }
        }
        if (gs != nullptr) {
          T acc{};
          for (std::size_t k = 0; k < cols; ++k) {
            acc += ge[k] * wv(0, k);
          }
          (*gs)(e, 0) += acc;
        }
        if (gw != nullptr) {
          const T se = sv(e, 0);
          T* out = gw->data().data();
          for (std::size_t k = 0; k < cols; ++k) {
            out[k] += se * ge[k];
          }
        }
      }
      break;
    }
    case Op::kMulCol: {
      const auto& x = nodes_[n.a].value;
      const auto& w = nodes_[n.b].value;
      if (need_a) {
        auto& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < g.cols(); ++j) {
            ga(i, j) += g(i, j) * w(i, 0);
          }
        }
      }
      if (need_b) {
        auto& gw = grad_of(n.b);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          T s{};
          for (std::size_t j = 0; j < g.cols(); ++j) {
            s += g(i, j) * x(i, j);
          }
          gw(i, 0) += s;
        }
      }
      break;
    }
    case Op::kSoftmaxXent:
      if (need_a) {
        auto& ga = grad_of(n.a);
        const T scale = g(0, 0) / T(static_cast<double>(n.aux.rows()));
        for (std::size_t i = 0; i < n.aux.rows(); ++i) {
          const auto label = static_cast<std::size_t>((*n.labels)[i]);
          for (std::size_t j = 0; j < n.aux.cols(); ++j) {
            const T target(j == label ? 1.0 : 0.0);
            ga(i, j) += scale * (n.aux(i, j) - target);
          }
        }
      }
      break;
    case Op::kHalfWeightedSq:
      if (need_a) {
        auto& ga = grad_of(n.a);
        const auto& x = nodes_[n.a].value;
        for (std::size_t i = 0; i < x.size(); ++i) {
          ga.data()[i] += g(0, 0) * T(n.weights.data()[i]) * x.data()[i];
        }
      }
      break;
  }
}

template class Tape<double>;
template class Tape<Dual>;

}  // namespace optlens::ad
