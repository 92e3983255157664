#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "optlens/config.hpp"
#include "optlens/data.hpp"
#include "optlens/tensor.hpp"

namespace optlens::harness {

struct Checkpoint {
  NamedParamSet params;
  /// Canonical training config the parameters came from, and its SHA-256.
  std::string config_text;
  Digest config_hash{};
  std::uint64_t seed = 0;
  /// 0 is the initialisation.
  std::size_t epoch = 0;
  double val_accuracy = 0.0;
  /// NaN until evaluated on the test split.
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct EpochRecord {
  std::size_t epoch = 0;
  /// Mean minibatch loss over the epoch (NaN for epoch 0).
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  bool failed = false;
  /// 1-based optimizer step at which the loss or parameters went non-finite.
  std::size_t failed_step = 0;
  std::string failure;
};

struct TrainResult {
  Checkpoint best;
  TrainLog log;
};

/// Training and model-selection data. Holds no test split, so anything that
/// only receives a TrainSplits cannot look at test labels.
struct TrainSplits {
  std::span<const data::PointCloud> train;
  std::span<const data::PointCloud> val;
};

/// Trains with cfg.seed controlling initialisation and batch order. The best
/// checkpoint is the earliest epoch (including the initialisation) with the
/// highest validation accuracy.
TrainResult train(const ExperimentConfig& cfg, const TrainSplits& splits);

/// One grid cell's outcome; score is -inf for failed runs.
struct GridCell {
  double lr = 0.0;
  double weight_decay = 0.0;
  double score = 0.0;
  bool failed = false;
};

struct GridResult {
  ExperimentConfig best;
  /// In (lr, wd) ascending order.
  std::vector<GridCell> cells;
};

using CellRunner = std::function<GridCell(const ExperimentConfig&)>;

/// Best validation accuracy per (lr, wd); ties go to the lower lr, then the
/// lower weight decay. Throws Error when every run failed.
GridResult grid_search(const ExperimentConfig& base, std::span<const double> lr_grid, std::span<const double> wd_grid,
                       const CellRunner& run);
GridResult grid_search(const ExperimentConfig& base, std::span<const double> lr_grid, std::span<const double> wd_grid,
                       const TrainSplits& splits);

struct Aggregate {
  double mean = 0.0;
  /// Population standard deviation (divides by n).
  double std = 0.0;
};
Aggregate aggregate(std::span<const double> values);

struct SeedResult {
  std::uint64_t seed = 0;
  Checkpoint best;
  TrainLog log;
  double clean_accuracy = 0.0;
  /// Corruption label ("kind@severity") -> accuracy, in suite order.
  std::vector<std::pair<std::string, double>> corrupted;
  /// Mean over the corruption suite; NaN when corruptions are disabled.
  double corrupted_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct RunReport {
  std::string model;
  std::string optimizer;
  ExperimentConfig config;
  std::vector<SeedResult> seeds;
  Aggregate clean;
  Aggregate corrupted;
  std::vector<std::pair<std::string, Aggregate>> per_corruption;
  bool incomplete = false;
  std::vector<std::string> failures;
};

/// Clean test split plus its corrupted copies, built once per protocol so every
/// seed and optimizer sees identical evaluation data.
struct EvalSets {
  std::vector<data::PointCloud> clean;
  std::vector<std::pair<std::string, std::vector<data::PointCloud>>> corrupted;
};
EvalSets make_eval_sets(const ExperimentConfig& cfg, const data::Dataset& ds);

/// Fills the accuracy fields of `result` from result.best.
void evaluate_checkpoint(const ExperimentConfig& cfg, const EvalSets& sets, SeedResult& result);

/// Trains seeds cfg.seed, cfg.seed + 1, ... and aggregates their best checkpoints.
RunReport run_protocol(const ExperimentConfig& cfg, const data::Dataset& ds);

/// Recomputes every aggregate from the per-seed values.
void recompute_aggregates(RunReport& report);

/// Index of the checkpoint closest to the mean accuracy; ties to the lowest seed.
std::size_t select_representative(std::span<const double> accuracies, std::span<const std::uint64_t> seeds);
const SeedResult& select_representative(const RunReport& report);

// OLCK checkpoint container: "OLCK", u16 version, 32-byte config hash,
// canonical config text, seed, epoch, accuracies, then named tensors
// (length-prefixed name, rank, dims, little-endian f64 payload), then a
// SHA-256 over everything before it.
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes, const std::string& what = "checkpoint");
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Keeps freed heap memory mapped between tape sweeps (glibc only; no-op
/// elsewhere). Large tapes otherwise spend much of their time in page faults.
void tune_allocator();

/// Deterministic `subset` indices into a split of `n` clouds.
std::vector<std::size_t> analysis_subset(std::size_t n, std::size_t size, std::uint64_t seed);
std::vector<data::PointCloud> take(std::span<const data::PointCloud> clouds, std::span<const std::size_t> idx);
/// Stable identifier for an analysis subset, e.g. "test:256:seed0".
std::string subset_id(std::size_t size, std::uint64_t seed);

}  // namespace optlens::harness
