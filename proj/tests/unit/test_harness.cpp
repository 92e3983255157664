#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include "optlens/errors.hpp"
#include "optlens/harness.hpp"
#include "optlens/report.hpp"

using namespace optlens;
using harness::ExperimentConfig;
namespace fs = std::filesystem;

namespace {

/// A run small enough to train in well under a second.
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.num_classes = 4;
  cfg.dataset.num_classes = 4;
  cfg.dataset.points_per_cloud = 16;
  cfg.dataset.train_size = 24;
  cfg.dataset.val_size = 8;
  cfg.dataset.test_size = 12;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.num_seeds = 2;
  cfg.subset_size = 6;
  cfg.hessian_probes = 4;
  cfg.hessian_max_iters = 10;
  cfg.slice_resolution = 3;
  cfg.lr_grid = {1e-3};
  cfg.wd_grid = {0.0};
  return cfg;
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("optlens_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

harness::CellRunner table_runner(std::map<std::pair<double, double>, double> scores) {
  return [scores](const ExperimentConfig& c) {
    const double s = scores.at({c.opt.lr, c.opt.weight_decay});
    return harness::GridCell{c.opt.lr, c.opt.weight_decay, s, std::isnan(s)};
  };
}

}  // namespace

TEST_CASE("harness: config keys round trip through text") {
  ExperimentConfig cfg;
  cfg.apply_text("# comment\nmodel = egnn\n lr = 0.003 # inline\nlr_grid = 1e-3, 1e-2\ncorruptions = false\n\n");
  CHECK(cfg.model == "egnn_tiny");
  CHECK(cfg.opt.lr == 0.003);
  CHECK(cfg.lr_grid == std::vector<double>{1e-3, 1e-2});
  CHECK_FALSE(cfg.corruptions);
  const ExperimentConfig back = ExperimentConfig::parse(cfg.canonical());
  CHECK(back.canonical() == cfg.canonical());
  for (const auto& key : ExperimentConfig::keys()) {
    ExperimentConfig copy;
    copy.set(key, cfg.get(key));
    CHECK(copy.get(key) == cfg.get(key));
  }
  CHECK_THROWS_AS(cfg.set("learning_rate", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("epochs", "-3"), ConfigError);
  CHECK_THROWS_AS(cfg.set("lr", "fast"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("lr 0.1\n"), ConfigError);
}

TEST_CASE("harness: training hash covers training keys only") {
  ExperimentConfig a;
  ExperimentConfig b = a;
  b.lr_grid = {0.5};
  b.subset_size = 3;
  CHECK(a.training_hash() == b.training_hash());
  CHECK_FALSE(a.canonical() == b.canonical());
  b.opt.lr = 0.01;
  CHECK_FALSE(a.training_hash() == b.training_hash());
  CHECK(harness::hex(harness::sha256("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("harness: config validation") {
  ExperimentConfig cfg;
  cfg.validate();
  cfg.num_classes = 5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ExperimentConfig{};
  cfg.hessian_probes = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ExperimentConfig{};
  cfg.lr_grid.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("harness: grid search picks the best cell with low-lr then low-wd ties") {
  const ExperimentConfig base;
  const auto runner = table_runner({{{1e-3, 0.0}, 0.5},
                                    {{1e-3, 1e-2}, 0.7},
                                    {{1e-2, 0.0}, 0.7},
                                    {{1e-2, 1e-2}, 0.6}});
  const std::vector<double> lrs{1e-2, 1e-3};
  const std::vector<double> wds{1e-2, 0.0};
  const auto r = harness::grid_search(base, lrs, wds, runner);
  CHECK(r.best.opt.lr == 1e-3);
  CHECK(r.best.opt.weight_decay == 1e-2);
  REQUIRE(r.cells.size() == 4);
  CHECK(r.cells[0].lr == 1e-3);
  CHECK(r.cells[0].weight_decay == 0.0);

  const std::vector<double> lrs2{1e-3, 1e-2};
  const std::vector<double> wds2{0.0, 1e-2};
  const auto r2 = harness::grid_search(base, lrs2, wds2, runner);
  CHECK(r2.best.canonical() == r.best.canonical());
}

TEST_CASE("harness: grid search edge cases") {
  const ExperimentConfig base;
  const std::vector<double> one{3e-3};
  const std::vector<double> zero{0.0};
  const auto single = harness::grid_search(base, one, zero, table_runner({{{3e-3, 0.0}, 0.1}}));
  CHECK(single.best.opt.lr == 3e-3);
  CHECK(single.cells.size() == 1);

  const std::vector<double> lrs{0.0, 1e-3};
  const auto failed = harness::grid_search(base, lrs, zero, table_runner({{{0.0, 0.0}, 0.2}, {{1e-3, 0.0}, NAN}}));
  CHECK(failed.best.opt.lr == 0.0);
  CHECK(failed.cells[1].failed);
  CHECK(std::isinf(failed.cells[1].score));

  CHECK_THROWS_AS(harness::grid_search(base, one, zero, table_runner({{{3e-3, 0.0}, NAN}})), Error);
  CHECK_THROWS_AS(harness::grid_search(base, std::vector<double>{}, zero, table_runner({})), ConfigError);
}

TEST_CASE("harness: aggregates and representative selection") {
  const std::vector<double> acc{0.80, 0.82, 0.84, 0.90};
  const auto a = harness::aggregate(acc);
  CHECK(a.mean == doctest::Approx(0.84));
  CHECK(a.std == doctest::Approx(std::sqrt((0.0016 + 0.0004 + 0.0 + 0.0036) / 4.0)));
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3};
  CHECK(harness::select_representative(acc, seeds) == 2);

  const std::vector<double> tied{0.7, 0.9};
  const std::vector<std::uint64_t> tie_seeds{5, 3};
  CHECK(harness::select_representative(tied, tie_seeds) == 1);
  CHECK(std::isnan(harness::aggregate(std::vector<double>{}).mean));
}

TEST_CASE("harness: checkpoints round trip bitwise and detect corruption") {
  harness::Checkpoint c;
  c.params = models::init_params(models::ModelSpec::pointnet_tiny(4), 3);
  c.config_text = tiny_config().canonical_training();
  c.config_hash = harness::sha256(c.config_text);
  c.seed = 7;
  c.epoch = 2;
  c.val_accuracy = 0.625;
  const auto bytes = harness::encode_checkpoint(c);
  const auto back = harness::decode_checkpoint(bytes);
  CHECK(back.params == c.params);
  CHECK(back.config_text == c.config_text);
  CHECK(back.config_hash == c.config_hash);
  CHECK(back.seed == 7);
  CHECK(back.epoch == 2);
  CHECK(back.val_accuracy == 0.625);
  CHECK(std::isnan(back.test_accuracy));
  CHECK(harness::encode_checkpoint(back) == bytes);

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(harness::decode_checkpoint(flipped), FormatError);
  const std::vector<unsigned char> truncated(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() - 40));
  CHECK_THROWS_AS(harness::decode_checkpoint(truncated), FormatError);

  const fs::path dir = temp_dir("olck");
  harness::save_checkpoint(c, dir / "best.olck");
  CHECK(harness::load_checkpoint(dir / "best.olck").params == c.params);
  CHECK(harness::checkpoint_id(c).rfind("pointnet_tiny/adam/seed7/epoch2/", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("harness: zero learning rate leaves parameters at initialisation") {
  ExperimentConfig cfg = tiny_config();
  cfg.opt.lr = 0.0;
  const auto ds = data::generate(cfg.dataset);
  const auto r = harness::train(cfg, {ds.train, ds.val});
  CHECK_FALSE(r.log.failed);
  CHECK(r.best.params == models::init_params(cfg.model_spec(), cfg.seed));
  CHECK(r.log.epochs.size() == cfg.epochs + 1);
  CHECK(std::isnan(r.log.epochs[0].train_loss));
  cfg.opt.kind = optim::Kind::kMuon;
  CHECK(harness::train(cfg, {ds.train, ds.val}).best.params == models::init_params(cfg.model_spec(), cfg.seed));
}

TEST_CASE("harness: training is deterministic and selects the earliest best epoch") {
  ExperimentConfig cfg = tiny_config();
  cfg.opt.kind = optim::Kind::kMuon;
  cfg.opt.lr = 1e-2;
  const auto ds = data::generate(cfg.dataset);
  const auto a = harness::train(cfg, {ds.train, ds.val});
  const auto b = harness::train(cfg, {ds.train, ds.val});
  CHECK(harness::encode_checkpoint(a.best) == harness::encode_checkpoint(b.best));
  double best = -1.0;
  std::size_t best_epoch = 0;
  for (const auto& e : a.log.epochs) {
    if (e.val_accuracy > best) {
      best = e.val_accuracy;
      best_epoch = e.epoch;
    }
  }
  CHECK(a.best.epoch == best_epoch);
  CHECK(a.best.val_accuracy == best);
  cfg.seed = 1;
  CHECK_FALSE(harness::train(cfg, {ds.train, ds.val}).best.params == a.best.params);
}

TEST_CASE("harness: protocol report round trips and recomputes") {
  ExperimentConfig cfg = tiny_config();
  const auto ds = data::generate(cfg.dataset);
  auto report = harness::run_protocol(cfg, ds);
  REQUIRE(report.seeds.size() == 2);
  CHECK(report.seeds[1].seed == cfg.seed + 1);
  CHECK(report.per_corruption.size() == 15);
  CHECK_FALSE(report.incomplete);
  const std::string json = harness::report_json(report);
  const auto back = harness::report_from_json(json);
  CHECK(harness::report_json(back) == json);

  auto edited = report;
  edited.clean = {0.0, 0.0};
  harness::recompute_aggregates(edited);
  CHECK(edited.clean.mean == report.clean.mean);
  CHECK(edited.clean.std == report.clean.std);
  CHECK_THROWS_AS(harness::report_from_json("{\"model\": 3}"), FormatError);
}

TEST_CASE("harness: analyses of a saved checkpoint equal in-memory analyses") {
  ExperimentConfig cfg = tiny_config();
  cfg.opt.lr = 1e-2;
  const auto ds = data::generate(cfg.dataset);
  const auto r = harness::train(cfg, {ds.train, ds.val});
  const fs::path dir = temp_dir("analysis");
  harness::save_checkpoint(r.best, dir / "best.olck");
  const auto loaded = harness::load_checkpoint(dir / "best.olck");
  CHECK(hessian::to_json(harness::analyze_hessian(loaded, cfg, ds)) ==
        hessian::to_json(harness::analyze_hessian(r.best, cfg, ds)));
  CHECK(landscape::to_json(harness::analyze_slice(loaded, cfg, ds)) ==
        landscape::to_json(harness::analyze_slice(r.best, cfg, ds)));
  const auto ranks = harness::analyze_ranks(loaded, cfg, ds);
  std::ostringstream a;
  std::ostringstream b;
  spectral::write_csv(ranks, a);
  spectral::write_csv(harness::analyze_ranks(r.best, cfg, ds), b);
  CHECK(a.str() == b.str());
  CHECK(harness::checkpoint_config(loaded).canonical_training() == cfg.canonical_training());
  fs::remove_all(dir);
}

TEST_CASE("harness: analysis subsets are deterministic sorted draws") {
  const auto a = harness::analysis_subset(100, 10, 3);
  CHECK(a == harness::analysis_subset(100, 10, 3));
  CHECK(a.size() == 10);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
  CHECK_FALSE(a == harness::analysis_subset(100, 10, 4));
  CHECK(harness::analysis_subset(5, 10, 3).size() == 5);
  CHECK(harness::subset_id(256, 0) == "test:256:seed0");
}
