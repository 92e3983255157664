#include "optlens/harness.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binio.hpp"
#include "optlens/errors.hpp"
#include "optlens/models.hpp"
#include "optlens/optimizers.hpp"
#include "optlens/rng.hpp"

namespace optlens::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

optim::ParamClassMap routing_for(const ExperimentConfig& cfg, const NamedParamSet& params) {
  if (cfg.opt.kind == optim::Kind::kAdam || cfg.routing == "adam") {
    return optim::adam_routing(params);
  }
  return optim::default_routing(params);
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const TrainSplits& splits) {
  cfg.validate();
  if (splits.train.empty() || splits.val.empty()) {
    throw DegenerateInputError("train: empty train or validation split");
  }
  const models::ModelSpec spec = cfg.model_spec();
  NamedParamSet params = models::init_params(spec, cfg.seed);

  const std::size_t n = splits.train.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  optim::Hyperparams hyper = cfg.opt;
  hyper.total_steps = cfg.epochs * batches;
  optim::OptimizerState state = optim::OptimizerState::create(hyper, params);
  const optim::ParamClassMap routing = routing_for(cfg, params);

  TrainResult result;
  Checkpoint& best = result.best;
  best.config_text = cfg.canonical_training();
  best.config_hash = sha256(best.config_text);
  best.seed = cfg.seed;
  best.epoch = 0;
  best.params = params;
  best.val_accuracy = models::accuracy(params, spec, splits.val);
  result.log.epochs.push_back({0, kNaN, best.val_accuracy});

  std::vector<std::size_t> order(n);
  std::vector<data::PointCloud> batch_clouds;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(cfg.seed, "batch-order", epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      batch_clouds.clear();
      const std::size_t end = std::min(n, (b + 1) * cfg.batch_size);
      for (std::size_t i = b * cfg.batch_size; i < end; ++i) {
        batch_clouds.push_back(splits.train[order[i]]);
      }
      const models::Batch batch = models::Batch::pack(batch_clouds, spec);
      try {
        const ad::GradResult g = models::gradient(params, batch, spec);
        optim::step(state, params, g.grads, routing);
        loss_sum += g.loss;
      } catch (const NumericError& e) {
        result.log.failed = true;
        result.log.failed_step = state.t + 1;
        result.log.failure = e.what();
        return result;
      }
      if (!params.all_finite()) {
        result.log.failed = true;
        result.log.failed_step = state.t;
        result.log.failure = "parameters became non-finite";
        return result;
      }
    }
    const double val = models::accuracy(params, spec, splits.val);
    result.log.epochs.push_back({epoch, loss_sum / static_cast<double>(batches), val});
    if (val > best.val_accuracy) {
      best.params = params;
      best.epoch = epoch;
      best.val_accuracy = val;
    }
  }
  return result;
}

GridResult grid_search(const ExperimentConfig& base, std::span<const double> lr_grid, std::span<const double> wd_grid,
                       const CellRunner& run) {
  if (lr_grid.empty() || wd_grid.empty()) {
    throw ConfigError("grid_search: empty grid");
  }
  std::vector<double> lrs(lr_grid.begin(), lr_grid.end());
  std::vector<double> wds(wd_grid.begin(), wd_grid.end());
  std::sort(lrs.begin(), lrs.end());
  std::sort(wds.begin(), wds.end());
  lrs.erase(std::unique(lrs.begin(), lrs.end()), lrs.end());
  wds.erase(std::unique(wds.begin(), wds.end()), wds.end());

  GridResult out;
  for (double lr : lrs) {
    for (double wd : wds) {
      ExperimentConfig cfg = base;
      cfg.opt.lr = lr;
      cfg.opt.weight_decay = wd;
      GridCell cell = run(cfg);
      cell.lr = lr;
      cell.weight_decay = wd;
      if (cell.failed || !std::isfinite(cell.score)) {
        cell.failed = true;
        cell.score = -std::numeric_limits<double>::infinity();
      }
      out.cells.push_back(cell);
    }
  }
  // Cells are in ascending (lr, wd) order, so the first strict maximum is the
  // tie-break winner regardless of how the caller ordered the grids.
  const GridCell* best = nullptr;
  for (const auto& c : out.cells) {
    if (!c.failed && (best == nullptr || c.score > best->score)) {
      best = &c;
    }
  }
  if (best == nullptr) {
    throw Error("grid_search: every run failed");
  }
  out.best = base;
  out.best.opt.lr = best->lr;
  out.best.opt.weight_decay = best->weight_decay;
  return out;
}

GridResult grid_search(const ExperimentConfig& base, std::span<const double> lr_grid, std::span<const double> wd_grid,
                       const TrainSplits& splits) {
  return grid_search(base, lr_grid, wd_grid, [&splits](const ExperimentConfig& cfg) {
    const TrainResult r = train(cfg, splits);
    return GridCell{cfg.opt.lr, cfg.opt.weight_decay, r.best.val_accuracy, r.log.failed};
  });
}

Aggregate aggregate(std::span<const double> values) {
  if (values.empty()) {
    return {kNaN, kNaN};
  }
  double sum = 0.0;
  for (double v : values) {
    sum += v;
  }
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) {
    sq += (v - mean) * (v - mean);
  }
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

EvalSets make_eval_sets(const ExperimentConfig& cfg, const data::Dataset& ds) {
  EvalSets sets;
  sets.clean = ds.test;
  if (cfg.corruptions) {
    for (const auto& spec : data::default_corruption_suite()) {
      std::string label = std::string(data::corruption_name(spec.kind)) + "@" + std::to_string(spec.severity);
      sets.corrupted.emplace_back(std::move(label), data::corrupt_all(ds.test, spec, cfg.dataset.seed));
    }
  }
  return sets;
}

void evaluate_checkpoint(const ExperimentConfig& cfg, const EvalSets& sets, SeedResult& result) {
  const models::ModelSpec spec = cfg.model_spec();
  result.clean_accuracy = models::accuracy(result.best.params, spec, sets.clean);
  result.best.test_accuracy = result.clean_accuracy;
  result.corrupted.clear();
  std::vector<double> accs;
  for (const auto& [label, clouds] : sets.corrupted) {
    const double a = models::accuracy(result.best.params, spec, clouds);
    result.corrupted.emplace_back(label, a);
    accs.push_back(a);
  }
  result.corrupted_accuracy = accs.empty() ? kNaN : aggregate(accs).mean;
}

void recompute_aggregates(RunReport& report) {
  std::vector<double> clean;
  std::vector<double> corrupted;
  std::vector<std::pair<std::string, std::vector<double>>> per;
  for (const auto& s : report.seeds) {
    if (s.log.failed) {
      continue;
    }
    clean.push_back(s.clean_accuracy);
    if (!s.corrupted.empty()) {
      corrupted.push_back(s.corrupted_accuracy);
    }
    for (std::size_t k = 0; k < s.corrupted.size(); ++k) {
      if (per.size() <= k) {
        per.emplace_back(s.corrupted[k].first, std::vector<double>{});
      }
      per[k].second.push_back(s.corrupted[k].second);
    }
  }
  report.clean = aggregate(clean);
  report.corrupted = aggregate(corrupted);
  report.per_corruption.clear();
  for (const auto& [label, values] : per) {
    report.per_corruption.emplace_back(label, aggregate(values));
  }
}

RunReport run_protocol(const ExperimentConfig& cfg, const data::Dataset& ds) {
  cfg.validate();
  if (ds.num_classes != cfg.num_classes) {
    throw ConfigError("dataset class count differs from the config");
  }
  RunReport report;
  report.model = cfg.model;
  report.optimizer = std::string(optim::kind_name(cfg.opt.kind));
  report.config = cfg;
  const EvalSets sets = make_eval_sets(cfg, ds);
  const TrainSplits splits{ds.train, ds.val};
  for (std::size_t k = 0; k < cfg.num_seeds; ++k) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + k;
    TrainResult r = train(run_cfg, splits);
    SeedResult s;
    s.seed = run_cfg.seed;
    s.best = std::move(r.best);
    s.log = std::move(r.log);
    if (s.log.failed) {
      report.incomplete = true;
      report.failures.push_back("seed " + std::to_string(s.seed) + " failed at step " +
                                std::to_string(s.log.failed_step) + ": " + s.log.failure);
    } else {
      evaluate_checkpoint(run_cfg, sets, s);
    }
    report.seeds.push_back(std::move(s));
  }
  recompute_aggregates(report);
  return report;
}

std::size_t select_representative(std::span<const double> accuracies, std::span<const std::uint64_t> seeds) {
  if (accuracies.empty() || accuracies.size() != seeds.size()) {
    throw DegenerateInputError("select_representative: need one accuracy per seed");
  }
  const double mean = aggregate(accuracies).mean;
  std::size_t best = 0;
  for (std::size_t i = 1; i < accuracies.size(); ++i) {
    const double d = std::abs(accuracies[i] - mean);
    const double db = std::abs(accuracies[best] - mean);
    if (d < db || (d == db && seeds[i] < seeds[best])) {
      best = i;
    }
  }
  return best;
}

const SeedResult& select_representative(const RunReport& report) {
  std::vector<double> accs;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < report.seeds.size(); ++i) {
    if (!report.seeds[i].log.failed) {
      accs.push_back(report.seeds[i].clean_accuracy);
      seeds.push_back(report.seeds[i].seed);
      index.push_back(i);
    }
  }
  if (accs.empty()) {
    throw Error("select_representative: no successful seeds");
  }
  return report.seeds[index[select_representative(accs, seeds)]];
}

std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
  binio::Writer w;
  w.bytes("OLCK", 4);
  w.u16(kCheckpointVersion);
  w.bytes(c.config_hash.data(), c.config_hash.size());
  w.str(c.config_text);
  w.u64(c.seed);
  w.u64(c.epoch);
  w.f64(c.val_accuracy);
  w.f64(c.test_accuracy);
  w.u32(static_cast<std::uint32_t>(c.params.size()));
  for (const auto& [name, t] : c.params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape) {
      w.u64(d);
    }
    for (double x : t.data) {
      w.f64(x);
    }
  }
  const std::string_view payload(reinterpret_cast<const char*>(w.buffer().data()), w.buffer().size());
  const Digest digest = sha256(payload);
  w.bytes(digest.data(), digest.size());
  return w.buffer();
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes, const std::string& what) {
  if (bytes.size() < 4 + 2 + 32 + 32) {
    throw FormatError(what + ": truncated file");
  }
  const std::size_t body = bytes.size() - 32;
  binio::Reader r(bytes.data(), body, what);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string_view(magic, 4) != "OLCK") {
    throw FormatError(what + ": not an OLCK checkpoint");
  }
  if (const auto v = r.u16(); v != kCheckpointVersion) {
    throw FormatError(what + ": unsupported checkpoint version " + std::to_string(v));
  }
  const Digest digest = sha256(std::string_view(reinterpret_cast<const char*>(bytes.data()), body));
  if (!std::equal(digest.begin(), digest.end(), bytes.begin() + static_cast<std::ptrdiff_t>(body))) {
    throw FormatError(what + ": integrity check failed (corrupted or truncated)");
  }
  Checkpoint c;
  r.bytes(c.config_hash.data(), c.config_hash.size());
  c.config_text = r.str();
  if (sha256(c.config_text) != c.config_hash) {
    throw FormatError(what + ": config hash mismatch");
  }
  c.seed = r.u64();
  c.epoch = r.u64();
  c.val_accuracy = r.f64();
  c.test_accuracy = r.f64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank < 1 || rank > 2) {
      throw FormatError(what + ": tensor '" + name + "' has unsupported rank");
    }
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.u64());
      numel *= d;
    }
    if (numel > r.remaining() / 8) {
      throw FormatError(what + ": tensor '" + name + "' exceeds file size");
    }
    std::vector<double> data(numel);
    for (double& x : data) {
      x = r.f64();
      if (!std::isfinite(x)) {
        throw FormatError(what + ": non-finite value in tensor '" + name + "'");
      }
    }
    c.params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) {
    throw FormatError(what + ": trailing bytes");
  }
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  binio::write_file(path.string(), encode_checkpoint(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path.string());
  return decode_checkpoint(bytes, path.string());
}

std::vector<std::size_t> analysis_subset(std::size_t n, std::size_t size, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (size >= n) {
    return idx;
  }
  Rng rng = make_rng(seed, "analysis-subset");
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(size);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<data::PointCloud> take(std::span<const data::PointCloud> clouds, std::span<const std::size_t> idx) {
  std::vector<data::PointCloud> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    out.push_back(clouds[i]);
  }
  return out;
}

std::string subset_id(std::size_t size, std::uint64_t seed) {
  return "test:" + std::to_string(size) + ":seed" + std::to_string(seed);
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace optlens::harness
