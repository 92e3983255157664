#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "optlens/autodiff.hpp"
#include "optlens/tensor.hpp"

namespace optlens::models {

enum class Family { kPointNet, kEgnn };

std::string_view family_name(Family f);
/// Accepts "pointnet_tiny" / "egnn_tiny" (and the bare family names).
Family parse_family(std::string_view name);

/// Architecture description.
///
/// pointnet: `widths` lists the shared per-point MLP widths followed by the
/// classifier hidden widths; `num_layers` is how many of them are per-point.
/// egnn: `widths` is {hidden, coord_hidden}; `num_layers` message-passing layers.
struct ModelSpec {
  Family family = Family::kPointNet;
  std::vector<std::size_t> widths;
  std::size_t num_layers = 0;
  std::size_t num_classes = 8;

  static ModelSpec pointnet_tiny(std::size_t num_classes = 8);
  static ModelSpec egnn_tiny(std::size_t num_classes = 8);

  /// Throws ConfigError on inconsistent wiring.
  void validate() const;
  [[nodiscard]] std::string name() const { return std::string(family_name(family)); }
};

struct PointCloud {
  /// N x 3 coordinates.
  Matrix points;
  int label = 0;

  [[nodiscard]] std::size_t num_points() const noexcept { return points.rows(); }
};

/// Several clouds packed into one coordinate block, plus the index
/// structures the forward passes need.
struct Batch {
  Matrix coords;
  /// coords minus the centroid of their own cloud; the PointNet input.
  Matrix centered;
  std::shared_ptr<const ad::Segments> clouds;
  std::shared_ptr<const std::vector<int>> labels;

  // Complete directed graph inside each cloud, edges grouped by source node.
  std::shared_ptr<const ad::PairIndex> edges;
  std::shared_ptr<const ad::Segments> edges_by_node;
  /// |x_i - centroid_c|^2 per node, P x 1; the E(3)-invariant input feature.
  Matrix radial;

  static Batch pack(std::span<const PointCloud> clouds, bool with_graph);
  static Batch pack(std::span<const PointCloud> clouds, const ModelSpec& spec);

  [[nodiscard]] std::size_t size() const noexcept { return clouds ? clouds->count() : 0; }
  [[nodiscard]] bool has_graph() const noexcept { return static_cast<bool>(edges); }
};

/// Per-layer (samples x features) matrices captured during a forward pass.
struct LayerCapture {
  /// Producing layer; parameters of that layer share this prefix.
  std::string layer;
  Matrix features;
};

struct ActivationTrace {
  std::vector<LayerCapture> layers;
};

struct ForwardOutput {
  Matrix logits;
  std::optional<ActivationTrace> trace;
};

/// Deterministic He initialisation: weights ~ N(0, 2 / fan_in), biases zero.
NamedParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

/// Tape-level model graph shared by inference, gradients and HVPs.
template <class T>
struct BuiltGraph {
  ad::Var logits;
  /// (layer name, pooled features) in layer order; filled when capture is set.
  std::vector<std::pair<std::string, ad::Var>> captures;
  /// EGNN coordinate stream after each updating layer.
  std::vector<ad::Var> coordinates;
};

template <class T>
BuiltGraph<T> build_graph(ad::Tape<T>& tape, const ad::ParamVars& params, const ModelSpec& spec, const Batch& batch,
                          bool capture);

ForwardOutput pointnet_forward(const NamedParamSet& params, const ModelSpec& spec, const Batch& batch, bool capture);
ForwardOutput egnn_forward(const NamedParamSet& params, const ModelSpec& spec, const Batch& batch, bool capture);
ForwardOutput forward(const NamedParamSet& params, const ModelSpec& spec, const Batch& batch, bool capture);

/// Coordinates after each coordinate-updating EGNN layer.
std::vector<Matrix> egnn_coordinates(const NamedParamSet& params, const ModelSpec& spec, const Batch& batch);

/// Mean softmax cross-entropy of the model on one batch.
class ClassificationObjective final : public ad::ObjectiveFor<ClassificationObjective> {
 public:
  ClassificationObjective(ModelSpec spec, std::shared_ptr<const Batch> batch);

  template <class T>
  ad::Var loss(ad::Tape<T>& tape, const ad::ParamVars& params) const;

  [[nodiscard]] const Batch& batch() const noexcept { return *batch_; }
  [[nodiscard]] const ModelSpec& spec() const noexcept { return spec_; }

 private:
  ModelSpec spec_;
  std::shared_ptr<const Batch> batch_;
};

double evaluate_loss(const NamedParamSet& params, const Batch& batch, const ModelSpec& spec);
ad::GradResult gradient(const NamedParamSet& params, const Batch& batch, const ModelSpec& spec);
NamedParamSet hvp(const NamedParamSet& params, const Batch& batch, const ModelSpec& spec,
                  const NamedParamSet& direction, ad::HvpMode mode = ad::HvpMode::kExact);

/// Mean loss over a fixed set of clouds, evaluated in chunks of `chunk` clouds
/// so large analysis subsets fit in memory. Chunk contributions are weighted by
/// chunk size and summed in order, so results are deterministic.
class SubsetLoss {
 public:
  SubsetLoss(ModelSpec spec, std::span<const PointCloud> clouds, std::size_t chunk = 32);

  [[nodiscard]] double loss(const NamedParamSet& params) const;
  [[nodiscard]] ad::GradResult gradient(const NamedParamSet& params) const;
  [[nodiscard]] NamedParamSet hvp(const NamedParamSet& params, const NamedParamSet& direction,
                                  ad::HvpMode mode = ad::HvpMode::kExact) const;

  [[nodiscard]] std::size_t size() const noexcept { return total_; }
  [[nodiscard]] const ModelSpec& spec() const noexcept { return spec_; }

 private:
  ModelSpec spec_;
  std::vector<std::shared_ptr<const Batch>> batches_;
  std::size_t total_ = 0;
};

/// Pooled per-layer features over all clouds (samples x features per layer),
/// computed in chunks and stacked in cloud order.
std::vector<LayerCapture> capture_layers(const NamedParamSet& params, const ModelSpec& spec,
                                         std::span<const PointCloud> clouds, std::size_t chunk = 64);

/// argmax per logits row; ties go to the lowest class index.
std::vector<int> predict(const Matrix& logits);
/// Top-1 accuracy over the clouds, evaluated in chunks of `chunk` clouds.
double accuracy(const NamedParamSet& params, const ModelSpec& spec, std::span<const PointCloud> clouds,
                std::size_t chunk = 64);

}  // namespace optlens::models
