#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "optlens/harness.hpp"
#include "optlens/hessian.hpp"
#include "optlens/landscape.hpp"
#include "optlens/spectral.hpp"

namespace optlens::harness {

/// Optional sink for human-readable progress lines; silent by default.
void set_progress_sink(std::function<void(std::string_view)> sink);
void progress(std::string_view line);

/// Grid search on validation, then the multi-seed protocol at the selected cell.
struct ProtocolOutcome {
  GridResult grid;
  RunReport report;
};
ProtocolOutcome search_and_run(const ExperimentConfig& cfg, const data::Dataset& ds);

/// Writes report.json, grid.csv, config.txt and per-seed seed_<k>/{best.olck,train_log.csv}.
void write_protocol(const ProtocolOutcome& outcome, const std::filesystem::path& dir);

std::string report_json(const RunReport& r);
RunReport report_from_json(std::string_view text);
RunReport load_report(const std::filesystem::path& path);

void write_grid_csv(const GridResult& g, std::ostream& out);
void write_train_log_csv(const TrainLog& log, std::ostream& out);

/// Training config stored inside a checkpoint.
ExperimentConfig checkpoint_config(const Checkpoint& c);
/// "model/optimizer/seedS/epochE/<first 8 hex of the config hash>".
std::string checkpoint_id(const Checkpoint& c);

/// Post-hoc analyses of one checkpoint on the fixed test subset chosen by
/// `analysis` (subset_size, analysis_seed and the per-analysis knobs).
hessian::HessianSummary analyze_hessian(const Checkpoint& c, const ExperimentConfig& analysis, const data::Dataset& ds);
landscape::LossGrid analyze_slice(const Checkpoint& c, const ExperimentConfig& analysis, const data::Dataset& ds);
spectral::SpectralProfile analyze_ranks(const Checkpoint& c, const ExperimentConfig& analysis, const data::Dataset& ds);

/// Everything `report compare` knows about one model family.
struct FamilyComparison {
  std::string model;
  RunReport adam;
  RunReport muon;
  std::optional<hessian::HessianSummary> adam_hessian;
  std::optional<hessian::HessianSummary> muon_hessian;
  std::optional<spectral::SpectralProfile> adam_ranks;
  std::optional<spectral::SpectralProfile> muon_ranks;
};

/// Muon mean minus Adam mean.
struct Deltas {
  double clean = 0.0;
  double corrupted = 0.0;
};
Deltas deltas(const FamilyComparison& f);

/// Accuracy table (model x optimizer x clean/corrupted, mean +- std, delta rows),
/// curvature ratios and per-layer rank curves.
std::string compare_markdown(std::span<const FamilyComparison> families);
/// model,layer,kind,adam_stable_rank,muon_stable_rank,adam_effective_rank,muon_effective_rank,bound
void write_rank_compare_csv(std::span<const FamilyComparison> families, std::ostream& out);

spectral::SpectralProfile read_profile_csv(std::istream& in);

std::string read_text(const std::filesystem::path& path);
/// Writes through a temporary file and renames it into place.
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace optlens::harness
