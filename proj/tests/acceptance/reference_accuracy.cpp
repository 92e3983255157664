// PointNet-tiny + Adam with the default grid and 30 epochs: the best cell's
// checkpoint must reach the pinned test accuracy on GeomShapes.

#include <cstdio>
#include <map>

#include "optlens/harness.hpp"

using namespace optlens;

namespace {

constexpr double kMinTestAccuracy = 0.85;

}  // namespace

int main() {
  harness::tune_allocator();
  harness::ExperimentConfig cfg;
  cfg.model = "pointnet_tiny";
  cfg.opt.kind = optim::Kind::kAdam;
  cfg.epochs = 30;
  cfg.validate();
  const data::Dataset ds = data::generate(cfg.dataset);

  std::map<std::pair<double, double>, harness::Checkpoint> best_by_cell;
  const auto grid = harness::grid_search(cfg, cfg.lr_grid, cfg.wd_grid, [&](const harness::ExperimentConfig& c) {
    const auto r = harness::train(c, {ds.train, ds.val});
    std::printf("lr %g wd %g val %.4f%s\n", c.opt.lr, c.opt.weight_decay, r.best.val_accuracy,
                r.log.failed ? " (failed)" : "");
    best_by_cell[{c.opt.lr, c.opt.weight_decay}] = r.best;
    return harness::GridCell{c.opt.lr, c.opt.weight_decay, r.best.val_accuracy, r.log.failed};
  });
  const auto& ckpt = best_by_cell.at({grid.best.opt.lr, grid.best.opt.weight_decay});
  const double test = models::accuracy(ckpt.params, cfg.model_spec(), ds.test);
  const bool pass = test >= kMinTestAccuracy;
  std::printf("reference: %s - selected lr %g wd %g, test accuracy %.4f (threshold %.2f)\n", pass ? "PASS" : "FAIL",
              grid.best.opt.lr, grid.best.opt.weight_decay, test, kMinTestAccuracy);
  return pass ? 0 : 1;
}
