#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <string_view>
#include <vector>

#include "optlens/dual.hpp"
#include "optlens/tensor.hpp"

namespace optlens::ad {

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

/// Row ranges [offsets[k], offsets[k+1]) that reduce to output row k.
struct Segments {
  std::vector<std::size_t> offsets{0};

  [[nodiscard]] std::size_t count() const noexcept { return offsets.size() - 1; }
  [[nodiscard]] std::size_t total() const noexcept { return offsets.back(); }
  [[nodiscard]] std::size_t length(std::size_t k) const noexcept { return offsets[k + 1] - offsets[k]; }
};

/// Ordered (src, dst) row pairs, e.g. the directed edges of a graph.
struct PairIndex {
  std::vector<std::uint32_t> src;
  std::vector<std::uint32_t> dst;

  [[nodiscard]] std::size_t size() const noexcept { return src.size(); }
};

/// Append-only reverse-mode tape over matrix-valued nodes.
///
/// T is double for plain gradients or Dual for Hessian-vector products. The
/// backward rules are written in T arithmetic, so on a Dual tape the reverse
/// sweep is itself differentiated forward along the seeded tangent.
///
/// A tape is single-use and not thread-safe; build one per evaluation.
template <class T>
class Tape {
 public:
  using Mat = BasicMatrix<T>;

  Var constant(Mat value);
  /// Differentiable leaf.
  Var param(Mat value);

  [[nodiscard]] const Mat& value(Var v) const { return nodes_[v.id].value; }
  /// Valid for leaves after backward(); zero-sized for leaves that do not need a
  /// gradient. Interior gradients are released during the sweep.
  [[nodiscard]] const Mat& grad(Var v) const { return nodes_[v.id].grad; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b);
  /// a * b^T; with b stored (out x in) this is the usual linear layer.
  Var matmul_nt(Var a, Var b);
  Var transpose(Var a);
  Var add(Var a, Var b);
  /// Adds a 1 x cols row to every row of a.
  Var add_bias(Var a, Var bias);
  Var scale(Var a, double s);
  Var relu(Var a);
  Var silu(Var a);
  Var tanh(Var a);
  Var segment_max(Var a, std::shared_ptr<const Segments> segments);
  Var segment_mean(Var a, std::shared_ptr<const Segments> segments);
  Var segment_sum(Var a, std::shared_ptr<const Segments> segments);
  Var gather_rows(Var a, std::shared_ptr<const std::vector<std::uint32_t>> index);
  Var concat_cols(Var a, Var b);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  /// ||x_src - x_dst||^2 per pair, (pairs x 1).
  Var pair_sq_dist(Var x, std::shared_ptr<const PairIndex> pairs);
  /// x_src - x_dst per pair.
  Var pair_diff(Var x, std::shared_ptr<const PairIndex> pairs);
  /// Row e is a[src_e] + b[dst_e] + s(e, 0) * w for pairs e; w is 1 x cols.
  /// Fuses the per-edge affine map of a pair MLP into one node.
  Var pair_combine(Var a, Var b, std::shared_ptr<const PairIndex> pairs, Var s, Var w);
  /// Row i of a scaled by w(i, 0).
  Var mul_col(Var a, Var w);
  /// Mean softmax cross-entropy over rows, 1 x 1.
  Var softmax_cross_entropy(Var logits, std::shared_ptr<const std::vector<int>> labels);
  /// 0.5 * sum(weights .* a .* a), 1 x 1.
  Var half_weighted_sq_sum(Var a, Matrix weights);

  /// Throws NumericError naming `layer` when v holds a non-finite value.
  void require_finite(Var v, std::string_view layer) const;

  /// Reverse sweep from a 1 x 1 node seeded with d(loss)/d(loss) = 1.
  void backward(Var loss);

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kMatMul,
    kMatMulNT,
    kTranspose,
    kAdd,
    kAddBias,
    kScale,
    kRelu,
    kSilu,
    kTanh,
    kSegmentMax,
    kSegmentMean,
    kSegmentSum,
    kGatherRows,
    kConcatCols,
    kSliceCols,
    kPairSqDist,
    kPairDiff,
    kPairCombine,
    kMulCol,
    kSoftmaxXent,
    kHalfWeightedSq,
  };

  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  struct Node {
    Op op = Op::kLeaf;
    std::size_t a = kNone;
    std::size_t b = kNone;
    std::size_t c = kNone;
    std::size_t d = kNone;
    bool needs_grad = false;
    Mat value;
    Mat grad;
    Mat aux;
    double scalar = 0.0;
    std::size_t begin = 0;
    std::shared_ptr<const Segments> segments;
    std::shared_ptr<const PairIndex> pairs;
    std::shared_ptr<const std::vector<std::uint32_t>> index;
    std::shared_ptr<const std::vector<int>> labels;
    std::vector<std::size_t> argmax;
    Matrix weights;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  void backprop(std::size_t id);
  Mat& grad_of(std::size_t id);

  std::vector<Node> nodes_;
};

extern template class Tape<double>;
extern template class Tape<Dual>;

}  // namespace optlens::ad
