#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "optlens/models.hpp"
#include "optlens/rng.hpp"

namespace optlens::data {

using models::PointCloud;

/// Synthetic classification set of eight parametric surface families.
struct DatasetSpec {
  std::size_t num_classes = 8;
  std::size_t points_per_cloud = 128;
  std::size_t train_size = 2048;
  std::size_t val_size = 256;
  std::size_t test_size = 256;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Shape { kSphere, kCube, kCylinder, kCone, kTorus, kPyramid, kTwoPlanes, kHelix };
inline constexpr std::size_t kNumShapes = 8;

std::string_view shape_name(Shape s);

struct Dataset {
  std::size_t num_classes = 0;
  std::vector<PointCloud> train;
  std::vector<PointCloud> val;
  std::vector<PointCloud> test;
};

/// Points on the canonical (unrotated, unit-scale, centred) surface.
Matrix sample_shape(Shape shape, std::size_t n, Rng& rng);

/// Deterministic from spec.seed. Labels cycle 0..C-1 so every split is balanced
/// to within one sample; class c uses shape family c mod 8.
Dataset generate(const DatasetSpec& spec);

enum class Corruption { kGaussianNoise, kUniformNoise, kPointDropout, kOcclusionHalfspace, kJitterRotate };
inline constexpr std::array<Corruption, 5> kAllCorruptions{Corruption::kGaussianNoise, Corruption::kUniformNoise,
                                                            Corruption::kPointDropout, Corruption::kOcclusionHalfspace,
                                                            Corruption::kJitterRotate};

std::string_view corruption_name(Corruption c);
Corruption parse_corruption(std::string_view name);

struct CorruptionSpec {
  Corruption kind = Corruption::kGaussianNoise;
  int severity = 1;
  /// Multiplies the severity's noise level; 0 isolates the non-noise part.
  double noise_scale = 1.0;

  void validate() const;
};

/// Noise standard deviation for a severity 1..5.
double noise_sigma(int severity);
/// Fraction of points removed by point_dropout at a severity 1..5.
double dropout_fraction(int severity);

/// Never fewer points than this after a corruption.
inline constexpr std::size_t kMinPoints = 8;

/// Label-preserving corruption, deterministic in (cloud, spec, seed).
PointCloud corrupt(const PointCloud& cloud, const CorruptionSpec& spec, std::uint64_t seed);

/// Every corruption kind at severities 1, 3 and 5.
std::vector<CorruptionSpec> default_corruption_suite();

/// Applies `spec` to every cloud, seeding each by its index.
std::vector<PointCloud> corrupt_all(const std::vector<PointCloud>& clouds, const CorruptionSpec& spec,
                                    std::uint64_t seed);

/// Uniform random rotation (Haar measure on SO(3)).
Matrix random_rotation(Rng& rng);

// GSHP container: "GSHP", u32 version, u32 num_classes, u32 num_clouds, then
// per cloud u16 label, u16 n_points, n_points * 3 f64 row-major. Little-endian.
inline constexpr std::uint32_t kGshpVersion = 1;

void save_split(const std::vector<PointCloud>& clouds, std::size_t num_classes, const std::filesystem::path& path);
/// Returns the clouds; `num_classes` receives the header's class count.
std::vector<PointCloud> load_split(const std::filesystem::path& path, std::size_t* num_classes = nullptr);

/// train.gshp, val.gshp, test.gshp under `dir`.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace optlens::data
