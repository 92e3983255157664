#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "optlens/tensor.hpp"

namespace optlens::landscape {

struct Directions {
  NamedParamSet d1;
  NamedParamSet d2;
  std::uint64_t seed = 0;
  /// "name[row]" for weight rows whose parameter row norm is zero (direction row set to 0).
  std::vector<std::string> zero_rows;
};

/// Two Gaussian directions rescaled row by row to the parameter row norms of
/// every weight matrix; rank-1 parameters get zero directions. d2 is then
/// orthogonalised against d1 in the global inner product.
Directions make_directions(const NamedParamSet& params, std::uint64_t seed);

/// Uniform grid on [-half_range, half_range] with an odd number of points;
/// the middle entry is exactly 0.
std::vector<double> grid_coordinates(double half_range, std::size_t resolution);

struct LossGrid {
  std::vector<double> alphas;
  std::vector<double> betas;
  /// losses(i, j) = L(theta + alphas[i] d1 + betas[j] d2); non-finite cells are overflowed.
  Matrix losses;
  std::uint64_t direction_seed = 0;
  std::string checkpoint_id;
  double half_range = 0.0;
  std::size_t resolution = 0;
  /// (i, j) of cells whose loss was not finite.
  std::vector<std::pair<std::size_t, std::size_t>> overflow;
  std::vector<std::string> zero_rows;

  [[nodiscard]] double center() const { return losses(resolution / 2, resolution / 2); }
};

using LossFn = std::function<double(const NamedParamSet&)>;

/// theta + a d1 + b d2, entry by entry.
NamedParamSet perturb(const NamedParamSet& params, const Directions& dirs, double a, double b);

LossGrid evaluate_grid(const NamedParamSet& params, const Directions& dirs, const LossFn& loss, double half_range,
                       std::size_t resolution, std::string checkpoint_id);

/// `alpha,beta,loss` rows in (i, j) order; overflowed cells print as "overflow".
void write_csv(const LossGrid& grid, std::ostream& out);
std::string to_json(const LossGrid& grid);

}  // namespace optlens::landscape
