#include "optlens/report.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

#include "binio.hpp"
#include "optlens/errors.hpp"

namespace optlens::harness {

namespace {

using ojson = nlohmann::ordered_json;

std::function<void(std::string_view)>& sink() {
  static std::function<void(std::string_view)> s;
  return s;
}

ojson number(double x) { return std::isfinite(x) ? ojson(x) : ojson(nullptr); }

double number_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

ojson aggregate_json(const Aggregate& a) { return {{"mean", number(a.mean)}, {"std", number(a.std)}}; }

Aggregate aggregate_from(const nlohmann::json& j) { return {number_from(j.at("mean")), number_from(j.at("std"))}; }

std::string optimizer_label(std::string_view name) { return name == "muon" ? "Muon" : "Adam"; }

std::string mean_std(const Aggregate& a) {
  if (!std::isfinite(a.mean)) {
    return "n/a";
  }
  return fmt::format("{:.4f} ± {:.4f}", a.mean, a.std);
}

std::string signed4(double x) { return std::isfinite(x) ? fmt::format("{:+.4f}", x) : std::string("n/a"); }

std::string ratio(double muon, double adam) {
  if (adam == 0.0 || !std::isfinite(muon) || !std::isfinite(adam)) {
    return "n/a";
  }
  return fmt::format("{:.3f}", muon / adam);
}

}  // namespace

void set_progress_sink(std::function<void(std::string_view)> s) { sink() = std::move(s); }

void progress(std::string_view line) {
  if (sink()) {
    sink()(line);
  }
}

ProtocolOutcome search_and_run(const ExperimentConfig& cfg, const data::Dataset& ds) {
  cfg.validate();
  const TrainSplits splits{ds.train, ds.val};
  const std::string tag = cfg.model + "/" + std::string(optim::kind_name(cfg.opt.kind));
  ProtocolOutcome out;
  out.grid = grid_search(cfg, cfg.lr_grid, cfg.wd_grid, [&](const ExperimentConfig& c) {
    const TrainResult r = train(c, splits);
    progress(fmt::format("{} grid lr={} wd={}: val {:.4f}{}", tag, format_double(c.opt.lr),
                         format_double(c.opt.weight_decay), r.best.val_accuracy, r.log.failed ? " (failed)" : ""));
    return GridCell{c.opt.lr, c.opt.weight_decay, r.best.val_accuracy, r.log.failed};
  });
  progress(fmt::format("{} selected lr={} wd={}", tag, format_double(out.grid.best.opt.lr),
                       format_double(out.grid.best.opt.weight_decay)));
  out.report = run_protocol(out.grid.best, ds);
  progress(fmt::format("{} clean {} corrupted {}", tag, mean_std(out.report.clean), mean_std(out.report.corrupted)));
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path.string());
  return {bytes.begin(), bytes.end()};
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  binio::write_file(path.string(), std::vector<unsigned char>(text.begin(), text.end()));
}

void write_protocol(const ProtocolOutcome& outcome, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", report_json(outcome.report));
  std::ostringstream grid;
  write_grid_csv(outcome.grid, grid);
  write_text(dir / "grid.csv", grid.str());
  write_text(dir / "config.txt", outcome.report.config.canonical());
  for (const auto& s : outcome.report.seeds) {
    const auto sub = dir / ("seed_" + std::to_string(s.seed));
    std::filesystem::create_directories(sub);
    std::ostringstream log;
    write_train_log_csv(s.log, log);
    write_text(sub / "train_log.csv", log.str());
    if (!s.log.failed) {
      save_checkpoint(s.best, sub / "best.olck");
    }
  }
}

std::string report_json(const RunReport& r) {
  ojson j;
  j["model"] = r.model;
  j["optimizer"] = r.optimizer;
  ojson cfg;
  for (const auto& key : ExperimentConfig::keys()) {
    cfg[key] = r.config.get(key);
  }
  j["config"] = cfg;
  auto seeds = ojson::array();
  for (const auto& s : r.seeds) {
    ojson e;
    e["seed"] = s.seed;
    e["failed"] = s.log.failed;
    if (s.log.failed) {
      e["failed_step"] = s.log.failed_step;
      e["failure"] = s.log.failure;
    }
    e["best_epoch"] = s.best.epoch;
    e["val_accuracy"] = number(s.best.val_accuracy);
    e["clean_accuracy"] = number(s.clean_accuracy);
    e["corrupted_accuracy"] = number(s.corrupted_accuracy);
    auto corr = ojson::array();
    for (const auto& [label, acc] : s.corrupted) {
      corr.push_back({{"corruption", label}, {"accuracy", number(acc)}});
    }
    e["corrupted"] = corr;
    e["config_hash"] = hex(s.best.config_hash);
    seeds.push_back(e);
  }
  j["seeds"] = seeds;
  j["clean"] = aggregate_json(r.clean);
  j["corrupted"] = aggregate_json(r.corrupted);
  auto per = ojson::array();
  for (const auto& [label, a] : r.per_corruption) {
    per.push_back({{"corruption", label}, {"mean", number(a.mean)}, {"std", number(a.std)}});
  }
  j["per_corruption"] = per;
  j["incomplete"] = r.incomplete;
  j["failures"] = r.failures;
  return j.dump(2) + "\n";
}

RunReport report_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RunReport r;
    r.model = j.at("model").get<std::string>();
    r.optimizer = j.at("optimizer").get<std::string>();
    for (const auto& [key, value] : j.at("config").items()) {
      r.config.set(key, value.get<std::string>());
    }
    for (const auto& e : j.at("seeds")) {
      SeedResult s;
      s.seed = e.at("seed").get<std::uint64_t>();
      s.log.failed = e.at("failed").get<bool>();
      if (s.log.failed) {
        s.log.failed_step = e.at("failed_step").get<std::size_t>();
        s.log.failure = e.at("failure").get<std::string>();
      }
      s.best.seed = s.seed;
      s.best.epoch = e.at("best_epoch").get<std::size_t>();
      s.best.val_accuracy = number_from(e.at("val_accuracy"));
      s.clean_accuracy = number_from(e.at("clean_accuracy"));
      s.best.test_accuracy = s.clean_accuracy;
      s.corrupted_accuracy = number_from(e.at("corrupted_accuracy"));
      for (const auto& c : e.at("corrupted")) {
        s.corrupted.emplace_back(c.at("corruption").get<std::string>(), number_from(c.at("accuracy")));
      }
      const auto hash = e.at("config_hash").get<std::string>();
      if (hash.size() != 2 * s.best.config_hash.size()) {
        throw FormatError("bad run report: config_hash must be 64 hex digits");
      }
      for (std::size_t i = 0; i < s.best.config_hash.size(); ++i) {
        s.best.config_hash[i] = static_cast<std::uint8_t>(std::stoul(hash.substr(2 * i, 2), nullptr, 16));
      }
      r.seeds.push_back(std::move(s));
    }
    r.clean = aggregate_from(j.at("clean"));
    r.corrupted = aggregate_from(j.at("corrupted"));
    for (const auto& c : j.at("per_corruption")) {
      r.per_corruption.emplace_back(c.at("corruption").get<std::string>(),
                                    Aggregate{number_from(c.at("mean")), number_from(c.at("std"))});
    }
    r.incomplete = j.at("incomplete").get<bool>();
    r.failures = j.at("failures").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad run report: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw FormatError("bad run report: config_hash is not hexadecimal");
  }
}

RunReport load_report(const std::filesystem::path& path) { return report_from_json(read_text(path)); }

void write_grid_csv(const GridResult& g, std::ostream& out) {
  out << "lr,weight_decay,val_accuracy,failed,selected\n";
  for (const auto& c : g.cells) {
    const bool selected = c.lr == g.best.opt.lr && c.weight_decay == g.best.opt.weight_decay;
    out << format_double(c.lr) << ',' << format_double(c.weight_decay) << ','
        << (c.failed ? std::string("-inf") : format_double(c.score)) << ',' << (c.failed ? 1 : 0) << ','
        << (selected ? 1 : 0) << '\n';
  }
}

void write_train_log_csv(const TrainLog& log, std::ostream& out) {
  out << "epoch,train_loss,val_accuracy\n";
  for (const auto& e : log.epochs) {
    out << e.epoch << ',' << (std::isfinite(e.train_loss) ? format_double(e.train_loss) : std::string("nan")) << ','
        << format_double(e.val_accuracy) << '\n';
  }
  if (log.failed) {
    out << "# failed at step " << log.failed_step << ": " << log.failure << '\n';
  }
}

ExperimentConfig checkpoint_config(const Checkpoint& c) { return ExperimentConfig::parse(c.config_text); }

std::string checkpoint_id(const Checkpoint& c) {
  const ExperimentConfig cfg = checkpoint_config(c);
  return fmt::format("{}/{}/seed{}/epoch{}/{}", cfg.model, optim::kind_name(cfg.opt.kind), c.seed, c.epoch,
                     hex(c.config_hash).substr(0, 8));
}

namespace {

std::vector<data::PointCloud> analysis_clouds(const ExperimentConfig& analysis, const data::Dataset& ds) {
  const auto idx = analysis_subset(ds.test.size(), analysis.subset_size, analysis.analysis_seed);
  return take(ds.test, idx);
}

std::string analysis_subset_id(const ExperimentConfig& analysis, const data::Dataset& ds) {
  return subset_id(std::min(analysis.subset_size, ds.test.size()), analysis.analysis_seed);
}

}  // namespace

hessian::HessianSummary analyze_hessian(const Checkpoint& c, const ExperimentConfig& analysis, const data::Dataset& ds) {
  const ExperimentConfig cfg = checkpoint_config(c);
  const auto clouds = analysis_clouds(analysis, ds);
  const models::SubsetLoss loss(cfg.model_spec(), clouds);
  hessian::HessianOptions opts;
  opts.tol = analysis.hessian_tol;
  opts.max_iters = analysis.hessian_max_iters;
  opts.probes = analysis.hessian_probes;
  opts.seed = analysis.analysis_seed;
  hessian::HessianSummary s = hessian::summarize(loss, c.params, opts);
  s.optimizer = std::string(optim::kind_name(cfg.opt.kind));
  s.seed = c.seed;
  s.subset_id = analysis_subset_id(analysis, ds);
  return s;
}

landscape::LossGrid analyze_slice(const Checkpoint& c, const ExperimentConfig& analysis, const data::Dataset& ds) {
  const ExperimentConfig cfg = checkpoint_config(c);
  const auto clouds = analysis_clouds(analysis, ds);
  const models::SubsetLoss loss(cfg.model_spec(), clouds);
  const auto dirs = landscape::make_directions(c.params, analysis.analysis_seed);
  return landscape::evaluate_grid(
      c.params, dirs, [&loss](const NamedParamSet& p) { return loss.loss(p); }, analysis.slice_half_range,
      analysis.slice_resolution, checkpoint_id(c));
}

spectral::SpectralProfile analyze_ranks(const Checkpoint& c, const ExperimentConfig& analysis, const data::Dataset& ds) {
  const ExperimentConfig cfg = checkpoint_config(c);
  const auto clouds = analysis_clouds(analysis, ds);
  return spectral::interleave(spectral::weight_profile(c.params),
                              spectral::representation_profile(c.params, cfg.model_spec(), clouds));
}

Deltas deltas(const FamilyComparison& f) {
  return {f.muon.clean.mean - f.adam.clean.mean, f.muon.corrupted.mean - f.adam.corrupted.mean};
}

std::string compare_markdown(std::span<const FamilyComparison> families) {
  std::string md = "# Adam vs. Muon\n\n## Best-checkpoint accuracy\n\n";
  md += "Mean ± std over seeds; Δ is Muon minus Adam.\n\n";
  md += "| Model | Optimizer | Clean | Corrupted |\n|---|---|---|---|\n";
  for (const auto& f : families) {
    for (const RunReport* r : {&f.adam, &f.muon}) {
      md += fmt::format("| {} | {} | {} | {} |\n", f.model, optimizer_label(r->optimizer), mean_std(r->clean),
                        mean_std(r->corrupted));
    }
    const Deltas d = deltas(f);
    md += fmt::format("| {} | Δ | {} | {} |\n", f.model, signed4(d.clean), signed4(d.corrupted));
  }
  for (const auto& f : families) {
    for (const RunReport* r : {&f.adam, &f.muon}) {
      if (r->incomplete) {
        md += fmt::format("\n**Incomplete:** {} / {}: {} failed seed(s).\n", f.model, optimizer_label(r->optimizer),
                          r->failures.size());
      }
    }
  }

  bool any_hessian = false;
  for (const auto& f : families) {
    any_hessian = any_hessian || (f.adam_hessian && f.muon_hessian);
  }
  if (any_hessian) {
    md += "\n## Curvature of representative checkpoints\n\n";
    md += "| Model | Quantity | Adam | Muon | Ratio (Muon/Adam) |\n|---|---|---|---|---|\n";
    for (const auto& f : families) {
      if (!f.adam_hessian || !f.muon_hessian) {
        continue;
      }
      const auto& a = *f.adam_hessian;
      const auto& m = *f.muon_hessian;
      md += fmt::format("| {} | Top eigenvalue | {:.4g} | {:.4g} | {} |\n", f.model, a.top_eigenvalue,
                        m.top_eigenvalue, ratio(m.top_eigenvalue, a.top_eigenvalue));
      md += fmt::format("| {} | Trace | {:.4g} ± {:.2g} | {:.4g} ± {:.2g} | {} |\n", f.model, a.trace_estimate,
                        a.trace_stderr, m.trace_estimate, m.trace_stderr, ratio(m.trace_estimate, a.trace_estimate));
    }
    for (const auto& f : families) {
      for (const auto* h : {&f.adam_hessian, &f.muon_hessian}) {
        if (*h && !(*h)->converged) {
          md += fmt::format("\n**Warning:** {} / {}: {}.\n", f.model, optimizer_label((*h)->optimizer),
                            (*h)->warning);
        }
      }
    }
  }

  bool any_rank = false;
  for (const auto& f : families) {
    any_rank = any_rank || (f.adam_ranks && f.muon_ranks);
  }
  if (any_rank) {
    md += "\n## Per-layer rank profiles\n";
    for (const auto& f : families) {
      if (!f.adam_ranks || !f.muon_ranks) {
        continue;
      }
      md += fmt::format("\n### {}\n\n", f.model);
      md += "| Layer | Kind | Stable rank (Adam) | Stable rank (Muon) | Effective rank (Adam) | Effective rank (Muon) "
            "| Bound |\n|---|---|---|---|---|---|---|\n";
      std::size_t higher = 0;
      std::size_t total = 0;
      for (const auto& a : f.adam_ranks->entries) {
        for (const auto& m : f.muon_ranks->entries) {
          if (m.layer == a.layer && m.kind == a.kind) {
            md += fmt::format("| {} | {} | {:.3f} | {:.3f} | {:.3f} | {:.3f} | {} |\n", a.layer,
                              spectral::kind_name(a.kind), a.stable_rank, m.stable_rank, a.effective_rank,
                              m.effective_rank, a.bound);
            ++total;
            higher += (m.stable_rank > a.stable_rank && m.effective_rank > a.effective_rank) ? 1 : 0;
          }
        }
      }
      md += fmt::format("\nMuon has higher stable and effective rank at {} of {} entries.\n", higher, total);
    }
  }
  return md;
}

void write_rank_compare_csv(std::span<const FamilyComparison> families, std::ostream& out) {
  out << "model,layer,kind,adam_stable_rank,muon_stable_rank,adam_effective_rank,muon_effective_rank,bound\n";
  for (const auto& f : families) {
    if (!f.adam_ranks || !f.muon_ranks) {
      continue;
    }
    for (const auto& a : f.adam_ranks->entries) {
      for (const auto& m : f.muon_ranks->entries) {
        if (m.layer == a.layer && m.kind == a.kind) {
          out << f.model << ',' << a.layer << ',' << spectral::kind_name(a.kind) << ','
              << format_double(a.stable_rank) << ',' << format_double(m.stable_rank) << ','
              << format_double(a.effective_rank) << ',' << format_double(m.effective_rank) << ',' << a.bound
              << '\n';
        }
      }
    }
  }
}

spectral::SpectralProfile read_profile_csv(std::istream& in) {
  spectral::SpectralProfile p;
  std::string line;
  if (!std::getline(in, line) || line != "layer,kind,stable_rank,effective_rank,bound") {
    throw FormatError("rank profile CSV has an unexpected header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      f.push_back(cell);
    }
    if (f.size() != 5) {
      throw FormatError("rank profile CSV row needs 5 fields: " + line);
    }
    spectral::Entry e;
    e.layer = f[0];
    if (f[1] == "weight") {
      e.kind = spectral::Kind::kWeight;
    } else if (f[1] == "representation") {
      e.kind = spectral::Kind::kRepresentation;
    } else {
      throw FormatError("unknown rank entry kind '" + f[1] + "'");
    }
    try {
      e.stable_rank = std::stod(f[2]);
      e.effective_rank = std::stod(f[3]);
      e.bound = std::stoul(f[4]);
    } catch (const std::exception&) {
      throw FormatError("bad number in rank profile row: " + line);
    }
    p.entries.push_back(e);
  }
  return p;
}

}  // namespace optlens::harness
