#include <benchmark/benchmark.h>

#include <random>

#include "optlens/data.hpp"
#include "optlens/linalg.hpp"
#include "optlens/models.hpp"
#include "optlens/optimizers.hpp"

using namespace optlens;

namespace {

Matrix gaussian(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Matrix m(r, c);
  for (double& x : m.data()) {
    x = n01(rng);
  }
  return m;
}

struct ModelFixture {
  models::ModelSpec spec;
  data::Dataset ds;
  models::Batch batch;
  NamedParamSet params;
  NamedParamSet direction;

  ModelFixture(models::ModelSpec s, std::size_t points, std::size_t clouds) : spec(std::move(s)) {
    data::DatasetSpec d;
    d.num_classes = spec.num_classes;
    d.points_per_cloud = points;
    d.train_size = clouds;
    d.val_size = 8;
    d.test_size = 8;
    ds = data::generate(d);
    batch = models::Batch::pack(ds.train, spec);
    params = models::init_params(spec, 0);
    direction = models::init_params(spec, 1);
  }
};

void BM_NewtonSchulz(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix m = gaussian(n, n, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(optim::newton_schulz_orthogonalize(m));
  }
}
BENCHMARK(BM_NewtonSchulz)->Arg(32)->Arg(64)->Arg(128)->Arg(256);

void BM_Svd(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix m = gaussian(n, n, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(linalg::singular_values(m));
  }
}
BENCHMARK(BM_Svd)->Arg(32)->Arg(64)->Arg(128)->Arg(256);

void BM_PointNetGradient(benchmark::State& state) {
  const ModelFixture f(models::ModelSpec::pointnet_tiny(), 128, 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(models::gradient(f.params, f.batch, f.spec));
  }
}
BENCHMARK(BM_PointNetGradient)->Unit(benchmark::kMillisecond);

void BM_PointNetHvp(benchmark::State& state) {
  const ModelFixture f(models::ModelSpec::pointnet_tiny(), 128, 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(models::hvp(f.params, f.batch, f.spec, f.direction));
  }
}
BENCHMARK(BM_PointNetHvp)->Unit(benchmark::kMillisecond);

void BM_EgnnGradient(benchmark::State& state) {
  const ModelFixture f(models::ModelSpec::egnn_tiny(), 24, 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(models::gradient(f.params, f.batch, f.spec));
  }
}
BENCHMARK(BM_EgnnGradient)->Unit(benchmark::kMillisecond);

void BM_EgnnHvp(benchmark::State& state) {
  const ModelFixture f(models::ModelSpec::egnn_tiny(), 24, 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(models::hvp(f.params, f.batch, f.spec, f.direction));
  }
}
BENCHMARK(BM_EgnnHvp)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
