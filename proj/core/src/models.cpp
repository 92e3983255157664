#include "optlens/models.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "optlens/rng.hpp"

namespace optlens::models {

std::string_view family_name(Family f) {
  switch (f) {
    case Family::kPointNet:
      return "pointnet_tiny";
    case Family::kEgnn:
      return "egnn_tiny";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  if (name == "pointnet_tiny" || name == "pointnet") {
    return Family::kPointNet;
  }
  if (name == "egnn_tiny" || name == "egnn") {
    return Family::kEgnn;
  }
  throw ConfigError("unknown model family '" + std::string(name) + "'");
}

ModelSpec ModelSpec::pointnet_tiny(std::size_t num_classes) {
  return ModelSpec{Family::kPointNet, {64, 128, 64}, 2, num_classes};
}

ModelSpec ModelSpec::egnn_tiny(std::size_t num_classes) { return ModelSpec{Family::kEgnn, {64, 16}, 3, num_classes}; }

void ModelSpec::validate() const {
  if (num_classes < 2) {
    throw ConfigError("model needs at least 2 classes");
  }
  if (num_layers == 0) {
    throw ConfigError("model needs at least one layer");
  }
  if (std::any_of(widths.begin(), widths.end(), [](std::size_t w) { return w == 0; })) {
    throw ConfigError("layer widths must be positive");
  }
  switch (family) {
    case Family::kPointNet:
      if (widths.size() < num_layers) {
        throw ConfigError("pointnet: fewer widths than per-point layers");
      }
      break;
    case Family::kEgnn:
      if (widths.size() != 2) {
        throw ConfigError("egnn: widths must be {hidden, coord_hidden}");
      }
      break;
  }
}

namespace {

struct ParamShape {
  std::string name;
  std::vector<std::size_t> shape;
};

void linear_shapes(std::vector<ParamShape>& out, const std::string& prefix, std::size_t out_features,
                   std::size_t in_features) {
  out.push_back({prefix + ".weight", {out_features, in_features}});
  out.push_back({prefix + ".bias", {out_features}});
}

std::vector<ParamShape> param_shapes(const ModelSpec& spec) {
  spec.validate();
  std::vector<ParamShape> shapes;
  if (spec.family == Family::kPointNet) {
    std::size_t in = 3;
    for (std::size_t i = 0; i < spec.num_layers; ++i) {
      linear_shapes(shapes, "point." + std::to_string(i), spec.widths[i], in);
      in = spec.widths[i];
    }
    std::size_t j = 0;
    for (std::size_t i = spec.num_layers; i < spec.widths.size(); ++i, ++j) {
      linear_shapes(shapes, "head." + std::to_string(j), spec.widths[i], in);
      in = spec.widths[i];
    }
    linear_shapes(shapes, "head." + std::to_string(j), spec.num_classes, in);
    return shapes;
  }
  const std::size_t h = spec.widths[0];
  const std::size_t hx = spec.widths[1];
  linear_shapes(shapes, "embed", h, 1);
  for (std::size_t l = 0; l < spec.num_layers; ++l) {
    const std::string p = "layers." + std::to_string(l);
    linear_shapes(shapes, p + ".edge.0", h, 2 * h + 1);
    linear_shapes(shapes, p + ".edge.1", h, h);
    linear_shapes(shapes, p + ".node.0", h, 2 * h);
    linear_shapes(shapes, p + ".node.1", h, h);
    if (l + 1 < spec.num_layers) {
      linear_shapes(shapes, p + ".coord.0", hx, h);
      linear_shapes(shapes, p + ".coord.1", 1, hx);
    }
  }
  linear_shapes(shapes, "head.0", h, h);
  linear_shapes(shapes, "head.1", spec.num_classes, h);
  return shapes;
}

template <class T>
BasicMatrix<T> lift(const Matrix& m) {
  BasicMatrix<T> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) {
    out.data()[i] = T(m.data()[i]);
  }
  return out;
}

Matrix lower(const Matrix& m) { return m; }

[[maybe_unused]] Matrix lower(const BasicMatrix<ad::Dual>& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) {
    out.data()[i] = m.data()[i].v;
  }
  return out;
}

template <class T>
ad::Var linear(ad::Tape<T>& tape, const ad::ParamVars& params, ad::Var x, const std::string& prefix) {
  return tape.add_bias(tape.matmul_nt(x, params[prefix + ".weight"]), params[prefix + ".bias"]);
}

template <class T>
BuiltGraph<T> build_pointnet(ad::Tape<T>& tape, const ad::ParamVars& params, const ModelSpec& spec,
                             const Batch& batch, bool capture) {
  BuiltGraph<T> g;
  ad::Var h = tape.constant(lift<T>(batch.centered));
  for (std::size_t i = 0; i < spec.num_layers; ++i) {
    const std::string name = "point." + std::to_string(i);
    h = tape.relu(linear(tape, params, h, name));
    tape.require_finite(h, name);
    if (capture && i + 1 < spec.num_layers) {
      g.captures.emplace_back(name, tape.segment_mean(h, batch.clouds));
    }
  }
  // Symmetric max-pool over points is the permutation-invariant readout.
  h = tape.segment_max(h, batch.clouds);
  if (capture) {
    g.captures.emplace_back("point." + std::to_string(spec.num_layers - 1), h);
  }
  const std::size_t hidden = spec.widths.size() - spec.num_layers;
  for (std::size_t j = 0; j < hidden; ++j) {
    const std::string name = "head." + std::to_string(j);
    h = tape.relu(linear(tape, params, h, name));
    tape.require_finite(h, name);
    if (capture) {
      g.captures.emplace_back(name, h);
    }
  }
  g.logits = linear(tape, params, h, "head." + std::to_string(hidden));
  tape.require_finite(g.logits, "head." + std::to_string(hidden));
  return g;
}

// Complete-graph EGNN layer, per node i over neighbours j:
//   m_ij = phi_e(h_i, h_j, |x_i - x_j|^2)
//   h_i <- phi_h(h_i, 1/(N-1) sum_j m_ij)
//   x_i <- x_i + 1/(N-1) sum_j (x_i - x_j) tanh(phi_x(m_ij))
// Each phi is Linear -> SiLU -> Linear. The first edge linear acts on the
// concatenation [h_i, h_j, d_ij] and is evaluated as W_a h_i + W_b h_j + w_c d_ij
// so the O(N^2) work stays O(hidden) per edge. The second edge linear commutes
// with the neighbour mean, and phi_x's first linear is folded into it
// (W_x1 (W_2 s + b_2) = (W_x1 W_2) s + W_x1 b_2).
template <class T>
BuiltGraph<T> build_egnn(ad::Tape<T>& tape, const ad::ParamVars& params, const ModelSpec& spec, const Batch& batch,
                         bool capture) {
  if (!batch.has_graph()) {
    throw ShapeError("egnn forward needs a batch packed with its graph");
  }
  BuiltGraph<T> g;
  const std::size_t h_dim = spec.widths[0];

  ad::Var x = tape.constant(lift<T>(batch.coords));
  ad::Var h = tape.silu(linear(tape, params, tape.constant(lift<T>(batch.radial)), "embed"));
  tape.require_finite(h, "embed");
  if (capture) {
    g.captures.emplace_back("embed", tape.segment_mean(h, batch.clouds));
  }

  for (std::size_t l = 0; l < spec.num_layers; ++l) {
    const std::string p = "layers." + std::to_string(l);
    const ad::Var w_edge = params[p + ".edge.0.weight"];
    const ad::Var proj_i = tape.add_bias(tape.matmul_nt(h, tape.slice_cols(w_edge, 0, h_dim)), params[p + ".edge.0.bias"]);
    const ad::Var proj_j = tape.matmul_nt(h, tape.slice_cols(w_edge, h_dim, 2 * h_dim));
    const ad::Var dist = tape.pair_sq_dist(x, batch.edges);
    const ad::Var w_dist = tape.transpose(tape.slice_cols(w_edge, 2 * h_dim, 2 * h_dim + 1));
    const ad::Var edge_hidden = tape.silu(tape.pair_combine(proj_i, proj_j, batch.edges, dist, w_dist));

    const ad::Var w2 = params[p + ".edge.1.weight"];
    const ad::Var b2 = params[p + ".edge.1.bias"];
    const ad::Var messages = tape.add_bias(tape.matmul_nt(tape.segment_mean(edge_hidden, batch.edges_by_node), w2), b2);

    ad::Var h_next = tape.silu(linear(tape, params, tape.concat_cols(h, messages), p + ".node.0"));
    h_next = linear(tape, params, h_next, p + ".node.1");

    if (l + 1 < spec.num_layers) {
      const ad::Var w_x1 = params[p + ".coord.0.weight"];
      const ad::Var folded = tape.matmul(w_x1, w2);
      const ad::Var folded_bias = tape.add(tape.matmul_nt(b2, w_x1), params[p + ".coord.0.bias"]);
      const ad::Var coord_hidden = tape.silu(tape.add_bias(tape.matmul_nt(edge_hidden, folded), folded_bias));
      const ad::Var phi_x = tape.tanh(linear(tape, params, coord_hidden, p + ".coord.1"));
      const ad::Var shift = tape.segment_mean(tape.mul_col(tape.pair_diff(x, batch.edges), phi_x), batch.edges_by_node);
      x = tape.add(x, shift);
      tape.require_finite(x, p + ".coord");
      g.coordinates.push_back(x);
    }
    h = h_next;
    tape.require_finite(h, p);
    if (capture && l + 1 < spec.num_layers) {
      g.captures.emplace_back(p, tape.segment_mean(h, batch.clouds));
    }
  }

  const ad::Var pooled = tape.segment_mean(h, batch.clouds);
  if (capture) {
    g.captures.emplace_back("layers." + std::to_string(spec.num_layers - 1), pooled);
  }
  const ad::Var z = tape.silu(linear(tape, params, pooled, "head.0"));
  tape.require_finite(z, "head.0");
  if (capture) {
    g.captures.emplace_back("head.0", z);
  }
  g.logits = linear(tape, params, z, "head.1");
  tape.require_finite(g.logits, "head.1");
  return g;
}

ForwardOutput run_forward(const NamedParamSet& params, const ModelSpec& spec, const Batch& batch, bool capture) {
  ad::Tape<double> tape;
  const auto vars = ad::ParamVars::push(tape, params);
  const auto g = build_graph(tape, vars, spec, batch, capture);
  ForwardOutput out{tape.value(g.logits), std::nullopt};
  if (capture) {
    ActivationTrace trace;
    for (const auto& [name, v] : g.captures) {
      trace.layers.push_back({name, tape.value(v)});
    }
    out.trace = std::move(trace);
  }
  return out;
}

}  // namespace

NamedParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  NamedParamSet params;
  for (auto& [name, shape] : param_shapes(spec)) {
    Tensor t = Tensor::zeros(shape);
    if (shape.size() == 2) {
      auto rng = make_rng(seed, "init:" + name);
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(shape[1])));
      for (double& x : t.data) {
        x = normal(rng);
      }
    }
    params.add(name, std::move(t));
  }
  return params;
}

Batch Batch::pack(std::span<const PointCloud> clouds, bool with_graph) {
  if (clouds.empty()) {
    throw DegenerateInputError("cannot pack an empty batch");
  }
  Batch b;
  auto segments = std::make_shared<ad::Segments>();
  auto labels = std::make_shared<std::vector<int>>();
  std::size_t total = 0;
  for (const auto& c : clouds) {
    if (c.points.cols() != 3) {
      throw ShapeError("point clouds must be N x 3");
    }
    if (c.points.rows() == 0) {
      throw DegenerateInputError("point cloud has no points");
    }
    total += c.points.rows();
    segments->offsets.push_back(total);
    labels->push_back(c.label);
  }
  b.coords = Matrix(total, 3);
  std::size_t row = 0;
  for (const auto& c : clouds) {
    std::copy(c.points.data().begin(), c.points.data().end(), b.coords.data().begin() + static_cast<std::ptrdiff_t>(row * 3));
    row += c.points.rows();
  }

  b.centered = b.coords;
  for (std::size_t k = 0; k < segments->count(); ++k) {
    const std::size_t begin = segments->offsets[k];
    const std::size_t n = segments->length(k);
    double centroid[3] = {0.0, 0.0, 0.0};
    for (std::size_t i = begin; i < begin + n; ++i) {
      for (int d = 0; d < 3; ++d) {
        centroid[d] += b.coords(i, d);
      }
    }
    for (std::size_t i = begin; i < begin + n; ++i) {
      for (int d = 0; d < 3; ++d) {
        b.centered(i, d) -= centroid[d] / static_cast<double>(n);
      }
    }
  }

  if (with_graph) {
    auto edges = std::make_shared<ad::PairIndex>();
    auto by_node = std::make_shared<ad::Segments>();
    b.radial = Matrix(total, 1);
    for (std::size_t k = 0; k < segments->count(); ++k) {
      const std::size_t begin = segments->offsets[k];
      const std::size_t n = segments->length(k);
      if (n < 2) {
        throw DegenerateInputError("egnn needs at least 2 points per cloud");
      }
      for (std::size_t i = begin; i < begin + n; ++i) {
        double r = 0.0;
        for (int d = 0; d < 3; ++d) {
          r += b.centered(i, d) * b.centered(i, d);
        }
        b.radial(i, 0) = r;
        for (std::size_t j = begin; j < begin + n; ++j) {
          if (j != i) {
            edges->src.push_back(static_cast<std::uint32_t>(i));
            edges->dst.push_back(static_cast<std::uint32_t>(j));
          }
        }
        by_node->offsets.push_back(edges->size());
      }
    }
    b.edges = std::move(edges);
    b.edges_by_node = std::move(by_node);
  }
  b.clouds = std::move(segments);
  b.labels = std::move(labels);
  return b;
}

Batch Batch::pack(std::span<const PointCloud> clouds, const ModelSpec& spec) {
  return pack(clouds, spec.family == Family::kEgnn);
}

template <class T>
BuiltGraph<T> build_graph(ad::Tape<T>& tape, const ad::ParamVars& params, const ModelSpec& spec, const Batch& batch,
                          bool capture) {
  spec.validate();
  return spec.family == Family::kPointNet ? build_pointnet(tape, params, spec, batch, capture)
                                          : build_egnn(tape, params, spec, batch, capture);
}

template BuiltGraph<double> build_graph(ad::Tape<double>&, const ad::ParamVars&, const ModelSpec&, const Batch&, bool);
template BuiltGraph<ad::Dual> build_graph(ad::Tape<ad::Dual>&, const ad::ParamVars&, const ModelSpec&, const Batch&,
                                          bool);

ForwardOutput pointnet_forward(const NamedParamSet& params, const ModelSpec& spec, const Batch& batch, bool capture) {
  if (spec.family != Family::kPointNet) {
    throw ConfigError("pointnet_forward called with a non-pointnet spec");
  }
  return run_forward(params, spec, batch, capture);
}

ForwardOutput egnn_forward(const NamedParamSet& params, const ModelSpec& spec, const Batch& batch, bool capture) {
  if (spec.family != Family::kEgnn) {
    throw ConfigError("egnn_forward called with a non-egnn spec");
  }
  return run_forward(params, spec, batch, capture);
}

ForwardOutput forward(const NamedParamSet& params, const ModelSpec& spec, const Batch& batch, bool capture) {
  return run_forward(params, spec, batch, capture);
}

std::vector<Matrix> egnn_coordinates(const NamedParamSet& params, const ModelSpec& spec, const Batch& batch) {
  if (spec.family != Family::kEgnn) {
    throw ConfigError("egnn_coordinates called with a non-egnn spec");
  }
  ad::Tape<double> tape;
  const auto vars = ad::ParamVars::push(tape, params);
  const auto g = build_graph(tape, vars, spec, batch, false);
  std::vector<Matrix> out;
  for (const auto v : g.coordinates) {
    out.push_back(lower(tape.value(v)));
  }
  return out;
}

ClassificationObjective::ClassificationObjective(ModelSpec spec, std::shared_ptr<const Batch> batch)
    : spec_(std::move(spec)), batch_(std::move(batch)) {
  spec_.validate();
  if (spec_.family == Family::kEgnn && !batch_->has_graph()) {
    throw ShapeError("egnn objective needs a batch packed with its graph");
  }
}

template <class T>
ad::Var ClassificationObjective::loss(ad::Tape<T>& tape, const ad::ParamVars& params) const {
  const auto g = build_graph(tape, params, spec_, *batch_, false);
  return tape.softmax_cross_entropy(g.logits, batch_->labels);
}

template ad::Var ClassificationObjective::loss<double>(ad::Tape<double>&, const ad::ParamVars&) const;
template ad::Var ClassificationObjective::loss<ad::Dual>(ad::Tape<ad::Dual>&, const ad::ParamVars&) const;

namespace {

ClassificationObjective make_objective(const Batch& batch, const ModelSpec& spec) {
  // Non-owning alias: the objective does not outlive this call.
  return ClassificationObjective(spec, std::shared_ptr<const Batch>(std::shared_ptr<const Batch>(), &batch));
}

}  // namespace

double evaluate_loss(const NamedParamSet& params, const Batch& batch, const ModelSpec& spec) {
  return ad::evaluate_loss(make_objective(batch, spec), params);
}

ad::GradResult gradient(const NamedParamSet& params, const Batch& batch, const ModelSpec& spec) {
  return ad::gradient(make_objective(batch, spec), params);
}

NamedParamSet hvp(const NamedParamSet& params, const Batch& batch, const ModelSpec& spec,
                  const NamedParamSet& direction, ad::HvpMode mode) {
  return ad::hvp(make_objective(batch, spec), params, direction, mode);
}

SubsetLoss::SubsetLoss(ModelSpec spec, std::span<const PointCloud> clouds, std::size_t chunk)
    : spec_(std::move(spec)), total_(clouds.size()) {
  if (clouds.empty()) {
    throw DegenerateInputError("loss over an empty subset");
  }
  if (chunk == 0) {
    throw ConfigError("chunk size must be positive");
  }
  for (std::size_t begin = 0; begin < clouds.size(); begin += chunk) {
    const auto part = clouds.subspan(begin, std::min(chunk, clouds.size() - begin));
    batches_.push_back(std::make_shared<const Batch>(Batch::pack(part, spec_)));
  }
}

double SubsetLoss::loss(const NamedParamSet& params) const {
  double total = 0.0;
  for (const auto& b : batches_) {
    const double w = static_cast<double>(b->size()) / static_cast<double>(total_);
    total += w * evaluate_loss(params, *b, spec_);
  }
  return total;
}

ad::GradResult SubsetLoss::gradient(const NamedParamSet& params) const {
  ad::GradResult out{0.0, params.zeros_like()};
  for (const auto& b : batches_) {
    const double w = static_cast<double>(b->size()) / static_cast<double>(total_);
    const auto part = models::gradient(params, *b, spec_);
    out.loss += w * part.loss;
    out.grads = axpy(out.grads, w, part.grads);
  }
  return out;
}

NamedParamSet SubsetLoss::hvp(const NamedParamSet& params, const NamedParamSet& direction, ad::HvpMode mode) const {
  NamedParamSet out = params.zeros_like();
  for (const auto& b : batches_) {
    const double w = static_cast<double>(b->size()) / static_cast<double>(total_);
    out = axpy(out, w, models::hvp(params, *b, spec_, direction, mode));
  }
  return out;
}

std::vector<LayerCapture> capture_layers(const NamedParamSet& params, const ModelSpec& spec,
                                         std::span<const PointCloud> clouds, std::size_t chunk) {
  if (clouds.empty()) {
    throw DegenerateInputError("capture over an empty set");
  }
  std::vector<LayerCapture> out;
  std::size_t row = 0;
  for (std::size_t begin = 0; begin < clouds.size(); begin += chunk) {
    const auto part = clouds.subspan(begin, std::min(chunk, clouds.size() - begin));
    const auto fwd = forward(params, spec, Batch::pack(part, spec), true);
    const auto& layers = fwd.trace->layers;
    if (out.empty()) {
      for (const auto& l : layers) {
        out.push_back({l.layer, Matrix(clouds.size(), l.features.cols())});
      }
    }
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const Matrix& f = layers[k].features;
      for (std::size_t i = 0; i < f.rows(); ++i) {
        for (std::size_t j = 0; j < f.cols(); ++j) {
          out[k].features(row + i, j) = f(i, j);
        }
      }
    }
    row += part.size();
  }
  return out;
}

std::vector<int> predict(const Matrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

double accuracy(const NamedParamSet& params, const ModelSpec& spec, std::span<const PointCloud> clouds,
                std::size_t chunk) {
  if (clouds.empty()) {
    throw DegenerateInputError("accuracy over an empty set");
  }
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < clouds.size(); begin += chunk) {
    const auto part = clouds.subspan(begin, std::min(chunk, clouds.size() - begin));
    const Batch batch = Batch::pack(part, spec);
    const auto pred = predict(forward(params, spec, batch, false).logits);
    for (std::size_t i = 0; i < part.size(); ++i) {
      correct += pred[i] == part[i].label ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(clouds.size());
}

}  // namespace optlens::models
