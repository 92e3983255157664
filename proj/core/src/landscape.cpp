#include "optlens/landscape.hpp"

#include <cmath>
#include <ostream>
#include <random>

#include <json.hpp>

#include "optlens/config.hpp"
#include "optlens/errors.hpp"
#include "optlens/rng.hpp"

namespace optlens::landscape {

namespace {

NamedParamSet filter_normalized(const NamedParamSet& params, std::uint64_t seed, std::string_view stream,
                                std::vector<std::string>* zero_rows) {
  Rng rng = make_rng(seed, stream);
  std::normal_distribution<double> n01;
  NamedParamSet d = params.zeros_like();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& [name, theta] = params[k];
    Tensor& dir = d[k].second;
    if (!theta.is_matrix()) {
      continue;
    }
    const std::size_t rows = theta.shape[0];
    const std::size_t cols = theta.shape[1];
    for (std::size_t r = 0; r < rows; ++r) {
      double* row = dir.data.data() + r * cols;
      const double* trow = theta.data.data() + r * cols;
      double dn = 0.0;
      double tn = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        row[c] = n01(rng);
        dn += row[c] * row[c];
        tn += trow[c] * trow[c];
      }
      dn = std::sqrt(dn);
      tn = std::sqrt(tn);
      if (tn == 0.0 || dn == 0.0) {
        std::fill(row, row + cols, 0.0);
        if (zero_rows != nullptr && tn == 0.0) {
          zero_rows->push_back(name + "[" + std::to_string(r) + "]");
        }
        continue;
      }
      for (std::size_t c = 0; c < cols; ++c) {
        row[c] = row[c] / dn * tn;
      }
    }
  }
  return d;
}

}  // namespace

Directions make_directions(const NamedParamSet& params, std::uint64_t seed) {
  if (!params.all_finite()) {
    throw NumericError("cannot build slice directions around non-finite parameters");
  }
  Directions out;
  out.seed = seed;
  out.d1 = filter_normalized(params, seed, "slice-d1", &out.zero_rows);
  out.d2 = filter_normalized(params, seed, "slice-d2", nullptr);
  const double d11 = dot(out.d1, out.d1);
  if (d11 > 0.0) {
    out.d2 = axpy(out.d2, -dot(out.d2, out.d1) / d11, out.d1);
  }
  return out;
}

std::vector<double> grid_coordinates(double half_range, std::size_t resolution) {
  if (!(half_range > 0.0) || !std::isfinite(half_range)) {
    throw ConfigError("slice half range must be positive and finite");
  }
  if (resolution < 1 || resolution % 2 == 0) {
    throw ConfigError("slice resolution must be odd");
  }
  std::vector<double> xs(resolution, 0.0);
  if (resolution == 1) {
    return xs;
  }
  const double den = static_cast<double>(resolution - 1);
  for (std::size_t i = 0; i < resolution; ++i) {
    const double num = 2.0 * static_cast<double>(i) - den;
    xs[i] = half_range * num / den;
  }
  return xs;
}

NamedParamSet perturb(const NamedParamSet& params, const Directions& dirs, double a, double b) {
  require_same_layout(params, dirs.d1, "slice direction 1");
  require_same_layout(params, dirs.d2, "slice direction 2");
  NamedParamSet out = params;
  for (std::size_t k = 0; k < out.size(); ++k) {
    auto& data = out[k].second.data;
    const auto& u = dirs.d1[k].second.data;
    const auto& v = dirs.d2[k].second.data;
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i] = data[i] + a * u[i] + b * v[i];
    }
  }
  return out;
}

LossGrid evaluate_grid(const NamedParamSet& params, const Directions& dirs, const LossFn& loss, double half_range,
                       std::size_t resolution, std::string checkpoint_id) {
  LossGrid g;
  g.alphas = grid_coordinates(half_range, resolution);
  g.betas = g.alphas;
  g.losses = Matrix(resolution, resolution);
  g.direction_seed = dirs.seed;
  g.checkpoint_id = std::move(checkpoint_id);
  g.half_range = half_range;
  g.resolution = resolution;
  g.zero_rows = dirs.zero_rows;
  for (std::size_t i = 0; i < resolution; ++i) {
    for (std::size_t j = 0; j < resolution; ++j) {
      double value = std::numeric_limits<double>::infinity();
      try {
        value = loss(perturb(params, dirs, g.alphas[i], g.betas[j]));
      } catch (const NumericError&) {
        value = std::numeric_limits<double>::infinity();
      }
      if (!std::isfinite(value)) {
        g.overflow.emplace_back(i, j);
      }
      g.losses(i, j) = value;
    }
  }
  return g;
}

void write_csv(const LossGrid& grid, std::ostream& out) {
  out << "alpha,beta,loss\n";
  for (std::size_t i = 0; i < grid.resolution; ++i) {
    for (std::size_t j = 0; j < grid.resolution; ++j) {
      const double l = grid.losses(i, j);
      out << harness::format_double(grid.alphas[i]) << ',' << harness::format_double(grid.betas[j]) << ','
          << (std::isfinite(l) ? harness::format_double(l) : std::string("overflow")) << '\n';
    }
  }
}

std::string to_json(const LossGrid& grid) {
  nlohmann::ordered_json j;
  j["checkpoint_id"] = grid.checkpoint_id;
  j["direction_seed"] = grid.direction_seed;
  j["half_range"] = grid.half_range;
  j["resolution"] = grid.resolution;
  j["center_loss"] = grid.center();
  auto cells = nlohmann::ordered_json::array();
  for (const auto& [i, k] : grid.overflow) {
    cells.push_back({i, k});
  }
  j["overflow_cells"] = cells;
  j["zero_norm_rows"] = grid.zero_rows;
  return j.dump(2) + "\n";
}

}  // namespace optlens::landscape
