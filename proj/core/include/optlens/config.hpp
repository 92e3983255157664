#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "optlens/data.hpp"
#include "optlens/models.hpp"
#include "optlens/optimizers.hpp"

namespace optlens::harness {

using Digest = std::array<std::uint8_t, 32>;

/// SHA-256 of `text`.
Digest sha256(std::string_view text);
std::string hex(const Digest& d);

/// Every knob of an experiment. The plain-text form is one `key = value` per
/// line; `#` starts a comment; lists are comma separated. Unknown keys are errors.
struct ExperimentConfig {
  std::string model = "pointnet_tiny";
  std::size_t num_classes = 8;

  optim::Hyperparams opt;
  /// "default" (hidden matrices to Muon) or "adam" (everything on the Adam path).
  std::string routing = "default";

  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  data::DatasetSpec dataset;

  std::vector<double> lr_grid{3e-4, 1e-3, 3e-3, 1e-2};
  std::vector<double> wd_grid{0.0, 1e-4, 1e-2};
  std::size_t num_seeds = 4;
  /// Evaluate best checkpoints on the corruption suite as well as clean data.
  bool corruptions = true;

  /// Fixed analysis subset drawn from the test split.
  std::size_t subset_size = 256;
  std::uint64_t analysis_seed = 0;
  double hessian_tol = 1e-4;
  std::size_t hessian_max_iters = 100;
  std::size_t hessian_probes = 64;
  double slice_half_range = 1.0;
  std::size_t slice_resolution = 25;

  /// Sets one key from its text form; throws ConfigError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  [[nodiscard]] std::string get(std::string_view key) const;
  static const std::vector<std::string>& keys();

  /// Throws ConfigError when values are inconsistent.
  void validate() const;

  [[nodiscard]] models::ModelSpec model_spec() const;

  /// Sorted `key=value` lines of the keys that determine a single training run.
  [[nodiscard]] std::string canonical_training() const;
  /// All keys, sorted.
  [[nodiscard]] std::string canonical() const;
  [[nodiscard]] Digest training_hash() const { return sha256(canonical_training()); }

  /// Applies `key = value` lines on top of the current values.
  void apply_text(std::string_view text);
  static ExperimentConfig parse(std::string_view text);
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// Shortest text that parses back to the same double.
std::string format_double(double x);

}  // namespace optlens::harness
