#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "optlens/linalg.hpp"
#include "optlens/models.hpp"
#include "optlens/tensor.hpp"

namespace optlens::spectral {

/// sum sigma_i^2 / sigma_1^2. Throws DegenerateInputError for an all-zero spectrum.
double stable_rank(const linalg::SingularSpectrum& s);
/// exp of the entropy of sigma_i / sum sigma_j, after clamping numerical dust.
double effective_rank(const linalg::SingularSpectrum& s);

enum class Kind { kWeight, kRepresentation };
std::string_view kind_name(Kind k);

struct Entry {
  std::string layer;
  Kind kind = Kind::kWeight;
  double stable_rank = 0.0;
  double effective_rank = 0.0;
  /// min(rows, cols) of the analysed matrix.
  std::size_t bound = 0;
};

struct SpectralProfile {
  std::vector<Entry> entries;
};

Entry analyse(const std::string& layer, Kind kind, const Matrix& m);

/// Every 2-D parameter in registration order.
SpectralProfile weight_profile(const NamedParamSet& params);

/// Pooled per-layer activations of the clouds; needs at least 2 clouds.
SpectralProfile representation_profile(const NamedParamSet& params, const models::ModelSpec& spec,
                                       std::span<const models::PointCloud> clouds);

/// Weight entries in registration order with each representation entry placed
/// after the weights of the layer that produced it.
SpectralProfile interleave(const SpectralProfile& weights, const SpectralProfile& representations);

void write_csv(const SpectralProfile& p, std::ostream& out);
std::string to_json(const SpectralProfile& p, const std::string& checkpoint_id, const std::string& subset_id);

}  // namespace optlens::spectral
