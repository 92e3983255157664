#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "optlens/errors.hpp"
#include "optlens/report.hpp"

namespace fs = std::filesystem;
using namespace optlens;
using harness::ExperimentConfig;

namespace {

struct Globals {
  std::string config_path;
  std::string out_dir = "out";
  std::string data_dir = "data";
  std::map<std::string, std::string> overrides;
  bool quiet = false;
};

std::string flag_for(const std::string& key) {
  std::string flag = "--" + key;
  for (char& c : flag) {
    if (c == '_') {
      c = '-';
    }
  }
  return flag;
}

ExperimentConfig resolve_config(const Globals& g) {
  ExperimentConfig cfg;
  if (!g.config_path.empty()) {
    cfg = ExperimentConfig::load(g.config_path);
  }
  for (const auto& [key, value] : g.overrides) {
    cfg.set(key, value);
  }
  cfg.validate();
  return cfg;
}

bool has_dataset(const fs::path& dir) {
  return fs::exists(dir / "train.gshp") && fs::exists(dir / "val.gshp") && fs::exists(dir / "test.gshp");
}

/// The dataset stored in the data directory, generated first if absent.
data::Dataset dataset_for(const ExperimentConfig& cfg, const fs::path& dir) {
  if (!has_dataset(dir)) {
    harness::progress("generating dataset in " + dir.string());
    data::Dataset ds = data::generate(cfg.dataset);
    data::save_dataset(ds, dir);
    return ds;
  }
  data::Dataset ds = data::load_dataset(dir);
  if (ds.num_classes != cfg.num_classes) {
    throw ConfigError("dataset in " + dir.string() + " has " + std::to_string(ds.num_classes) +
                      " classes but the config expects " + std::to_string(cfg.num_classes));
  }
  return ds;
}

std::string representative_path(const fs::path& run_dir) {
  const auto report = harness::load_report(run_dir / "report.json");
  const auto& rep = harness::select_representative(report);
  return (run_dir / ("seed_" + std::to_string(rep.seed)) / "best.olck").string();
}

/// --checkpoint wins; otherwise the representative checkpoint of --run.
harness::Checkpoint resolve_checkpoint(const std::string& checkpoint, const std::string& run) {
  if (!checkpoint.empty()) {
    return harness::load_checkpoint(checkpoint);
  }
  if (!run.empty()) {
    return harness::load_checkpoint(representative_path(run));
  }
  throw ConfigError("pass --checkpoint or --run");
}

void write_csv_and_json(const fs::path& dir, const std::string& stem, const std::string& csv, const std::string& json) {
  fs::create_directories(dir);
  harness::write_text(dir / (stem + ".csv"), csv);
  harness::write_text(dir / (stem + ".json"), json);
}

}  // namespace

int main(int argc, char** argv) {
  harness::tune_allocator();
  CLI::App app{"optlens: Adam vs. Muon on point-cloud classifiers"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config_path, "Plain-text key = value config file")->check(CLI::ExistingFile);
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();
  app.add_option("--data-dir", g.data_dir, "Dataset directory (generated when empty)")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress progress lines");
  for (const auto& key : ExperimentConfig::keys()) {
    app.add_option_function<std::string>(
        flag_for(key), [&g, key](const std::string& v) { g.overrides[key] = v; }, "Overrides config key " + key);
  }
  app.get_option("--seed")->description("Training seed (overrides config key seed)");

  auto* gen = app.add_subcommand("gen-data", "Generate the dataset into --data-dir");
  auto* train = app.add_subcommand("train", "Train one run and save its best checkpoint");
  auto* grid = app.add_subcommand("grid-search", "Grid search over lr_grid x wd_grid on validation");
  auto* protocol = app.add_subcommand("protocol", "Grid search, then num_seeds runs at the selected cell");
  bool skip_search = false;
  protocol->add_flag("--skip-search", skip_search, "Use the configured lr and weight_decay as-is");

  auto* analyze = app.add_subcommand("analyze", "Post-hoc checkpoint analyses");
  analyze->require_subcommand(1);
  std::string checkpoint;
  std::string run;
  for (auto* sub : {analyze->add_subcommand("hessian", "Top eigenvalue and Hutchinson trace"),
                    analyze->add_subcommand("slice", "Filter-normalised 2-D loss slice"),
                    analyze->add_subcommand("rank", "Stable and effective rank profile")}) {
    sub->add_option("--checkpoint", checkpoint, "Checkpoint file")->check(CLI::ExistingFile);
    sub->add_option("--run", run, "Protocol directory; analyses its representative checkpoint")
        ->check(CLI::ExistingDirectory);
  }

  auto* report = app.add_subcommand("report", "Reports");
  report->require_subcommand(1);
  auto* compare = report->add_subcommand("compare", "Markdown comparison of Adam and Muon protocol runs");
  std::vector<std::string> pairs;
  compare->add_option("--pair", pairs, "ADAM_DIR,MUON_DIR protocol directories of one model family")
      ->required();

  CLI11_PARSE(app, argc, argv);
  if (!g.quiet) {
    harness::set_progress_sink([](std::string_view line) { std::cerr << line << std::endl; });
  }

  try {
    const ExperimentConfig cfg = resolve_config(g);
    const fs::path out(g.out_dir);

    if (*gen) {
      const data::Dataset ds = data::generate(cfg.dataset);
      data::save_dataset(ds, g.data_dir);
      std::cout << "wrote " << ds.train.size() << "/" << ds.val.size() << "/" << ds.test.size()
                << " clouds to " << g.data_dir << "\n";
    } else if (*train) {
      const data::Dataset ds = dataset_for(cfg, g.data_dir);
      const auto r = harness::train(cfg, {ds.train, ds.val});
      fs::create_directories(out);
      std::ostringstream log;
      harness::write_train_log_csv(r.log, log);
      harness::write_text(out / "train_log.csv", log.str());
      if (r.log.failed) {
        std::cerr << "run failed at step " << r.log.failed_step << ": " << r.log.failure << "\n";
        return 2;
      }
      harness::save_checkpoint(r.best, out / "best.olck");
      std::cout << "best epoch " << r.best.epoch << " val " << harness::format_double(r.best.val_accuracy) << "\n";
    } else if (*grid) {
      const data::Dataset ds = dataset_for(cfg, g.data_dir);
      const auto result = harness::grid_search(cfg, cfg.lr_grid, cfg.wd_grid, harness::TrainSplits{ds.train, ds.val});
      fs::create_directories(out);
      std::ostringstream csv;
      harness::write_grid_csv(result, csv);
      harness::write_text(out / "grid.csv", csv.str());
      harness::write_text(out / "best.cfg", result.best.canonical());
      std::cout << "selected lr " << harness::format_double(result.best.opt.lr) << " weight_decay "
                << harness::format_double(result.best.opt.weight_decay) << "\n";
    } else if (*protocol) {
      const data::Dataset ds = dataset_for(cfg, g.data_dir);
      harness::ProtocolOutcome outcome;
      if (skip_search) {
        outcome.grid.best = cfg;
        outcome.report = harness::run_protocol(cfg, ds);
      } else {
        outcome = harness::search_and_run(cfg, ds);
      }
      harness::write_protocol(outcome, out);
      std::cout << "clean " << harness::format_double(outcome.report.clean.mean) << " corrupted "
                << harness::format_double(outcome.report.corrupted.mean) << "\n";
      if (outcome.report.incomplete) {
        std::cerr << "report incomplete: " << outcome.report.failures.size() << " failed seed(s)\n";
        return 2;
      }
    } else if (*analyze) {
      const data::Dataset ds = dataset_for(cfg, g.data_dir);
      const harness::Checkpoint ckpt = resolve_checkpoint(checkpoint, run);
      const fs::path out = (!run.empty() && app.get_option("--out-dir")->count() == 0) ? fs::path(run) / "analysis"
                                                                                       : fs::path(g.out_dir);
      if (analyze->got_subcommand("hessian")) {
        const auto s = harness::analyze_hessian(ckpt, cfg, ds);
        fs::create_directories(out);
        harness::write_text(out / "hessian.json", hessian::to_json(s));
        if (!s.converged) {
          std::cerr << "warning: " << s.warning << "\n";
        }
        std::cout << "top eigenvalue " << harness::format_double(s.top_eigenvalue) << " trace "
                  << harness::format_double(s.trace_estimate) << "\n";
      } else if (analyze->got_subcommand("slice")) {
        const auto grid_out = harness::analyze_slice(ckpt, cfg, ds);
        std::ostringstream csv;
        landscape::write_csv(grid_out, csv);
        write_csv_and_json(out, "slice", csv.str(), landscape::to_json(grid_out));
        std::cout << "center loss " << harness::format_double(grid_out.center()) << "\n";
      } else {
        const auto profile = harness::analyze_ranks(ckpt, cfg, ds);
        std::ostringstream csv;
        spectral::write_csv(profile, csv);
        const std::size_t n = std::min(cfg.subset_size, ds.test.size());
        write_csv_and_json(out, "rank", csv.str(),
                           spectral::to_json(profile, harness::checkpoint_id(ckpt),
                                             harness::subset_id(n, cfg.analysis_seed)));
        std::cout << profile.entries.size() << " rank entries\n";
      }
    } else if (*report) {
      std::vector<harness::FamilyComparison> families;
      for (const auto& pair : pairs) {
        const auto comma = pair.find(',');
        if (comma == std::string::npos) {
          throw ConfigError("--pair expects ADAM_DIR,MUON_DIR");
        }
        const fs::path adam_dir = pair.substr(0, comma);
        const fs::path muon_dir = pair.substr(comma + 1);
        harness::FamilyComparison f;
        f.adam = harness::load_report(adam_dir / "report.json");
        f.muon = harness::load_report(muon_dir / "report.json");
        f.model = f.adam.model;
        const auto load_analysis = [](const fs::path& dir, auto& hessian, auto& ranks) {
          if (fs::exists(dir / "analysis" / "hessian.json")) {
            hessian = hessian::summary_from_json(harness::read_text(dir / "analysis" / "hessian.json"));
          }
          if (fs::exists(dir / "analysis" / "rank.csv")) {
            std::istringstream in(harness::read_text(dir / "analysis" / "rank.csv"));
            ranks = harness::read_profile_csv(in);
          }
        };
        load_analysis(adam_dir, f.adam_hessian, f.adam_ranks);
        load_analysis(muon_dir, f.muon_hessian, f.muon_ranks);
        families.push_back(std::move(f));
      }
      fs::create_directories(out);
      harness::write_text(out / "compare.md", harness::compare_markdown(families));
      std::ostringstream csv;
      harness::write_rank_compare_csv(families, csv);
      harness::write_text(out / "rank_compare.csv", csv.str());
      std::cout << "wrote " << (out / "compare.md").string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
