#include <doctest.h>

#include <cmath>
#include <random>

#include "../oracles/oracles.hpp"
#include "optlens/errors.hpp"
#include "optlens/linalg.hpp"
#include "optlens/optimizers.hpp"
#include "util.hpp"

using namespace optlens;
using namespace optlens::optim;

namespace {

NamedParamSet single(const std::string& name, const Matrix& m) {
  NamedParamSet p;
  p.add(name, Tensor::from_matrix(m));
  return p;
}

Matrix well_conditioned(std::size_t r, std::size_t c, double cond, std::uint64_t seed) {
  const std::size_t k = std::min(r, c);
  const Matrix u = testutil::orthogonal(r, seed);
  const Matrix v = testutil::orthogonal(c, seed + 1000);
  Matrix s(r, c);
  for (std::size_t i = 0; i < k; ++i) {
    s(i, i) = k == 1 ? 1.0 : 1.0 + (cond - 1.0) * static_cast<double>(i) / static_cast<double>(k - 1);
  }
  return oracle::matmul(oracle::matmul(u, s), oracle::transpose(v));
}

double orthogonality_defect(const Matrix& x) {
  const bool wide = x.rows() <= x.cols();
  const Matrix g = wide ? oracle::matmul(x, oracle::transpose(x)) : oracle::matmul(oracle::transpose(x), x);
  return oracle::frobenius_distance(g, Matrix::identity(g.rows()));
}

}  // namespace

TEST_CASE("adam: hand-evaluated first step") {
  NamedParamSet p = single("w", Matrix{{0.0}});
  Hyperparams h;
  h.lr = 0.1;
  auto state = OptimizerState::create(h, p);
  adam_step(state, p, single("w", Matrix{{1.0}}));
  CHECK(p.at("w").data[0] == doctest::Approx(-0.1).epsilon(1e-7));
  CHECK(state.t == 1);
}

TEST_CASE("adam: multi-step trajectory matches a scalar reference") {
  const std::vector<double> grads{0.5, -1.5, 2.0, 0.1, -0.3, 0.0, 4.0, -2.5, 1.0, 0.7, -0.05, 3.0};
  const std::vector<double> start{0.3, -1.2, 2.0, 0.0};
  NamedParamSet p = single("w", Matrix{{start[0], start[1]}, {start[2], start[3]}});
  Hyperparams h;
  h.lr = 0.03;
  h.weight_decay = 0.01;
  auto state = OptimizerState::create(h, p);
  std::vector<std::vector<double>> expect;
  for (std::size_t i = 0; i < start.size(); ++i) {
    std::vector<double> gi;
    for (double g : grads) {
      gi.push_back(g * static_cast<double>(i + 1));
    }
    expect.push_back(oracle::adamw_trajectory(start[i], gi, h.lr, h.weight_decay));
  }
  for (std::size_t t = 0; t < grads.size(); ++t) {
    adam_step(state, p, single("w", Matrix{{grads[t], 2.0 * grads[t]}, {3.0 * grads[t], 4.0 * grads[t]}}));
    for (std::size_t i = 0; i < start.size(); ++i) {
      CHECK(p.at("w").data[i] == doctest::Approx(expect[i][t]).epsilon(1e-12));
    }
  }
}

TEST_CASE("adam: zero gradients leave parameters unchanged; identical tensors update identically") {
  NamedParamSet p;
  p.add("a", Tensor({2, 2}, {1.0, -2.0, 3.0, 0.5}));
  p.add("b", Tensor({2, 2}, {1.0, -2.0, 3.0, 0.5}));
  const NamedParamSet before = p;
  Hyperparams h;
  h.lr = 0.05;
  auto state = OptimizerState::create(h, p);
  adam_step(state, p, p.zeros_like());
  CHECK(p == before);
  NamedParamSet g;
  g.add("a", Tensor({2, 2}, {0.3, -0.1, 2.0, 0.0}));
  g.add("b", Tensor({2, 2}, {0.3, -0.1, 2.0, 0.0}));
  for (int k = 0; k < 3; ++k) {
    adam_step(state, p, g);
  }
  CHECK(p.at("a") == p.at("b"));
}

TEST_CASE("adam: decoupled weight decay and non-finite gradients") {
  NamedParamSet p = single("w", Matrix{{2.0}});
  Hyperparams h;
  h.lr = 0.1;
  h.weight_decay = 0.5;
  auto state = OptimizerState::create(h, p);
  adam_step(state, p, single("w", Matrix{{0.0}}));
  CHECK(p.at("w").data[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  CHECK_THROWS_AS(adam_step(state, p, single("w", Matrix{{std::nan("")}})), NumericError);
}

TEST_CASE("newton-schulz: spec examples") {
  const Matrix d = newton_schulz_orthogonalize(Matrix{{3.0, 0.0}, {0.0, -2.0}});
  CHECK(oracle::frobenius_distance(d, Matrix{{1.0, 0.0}, {0.0, -1.0}}) <= 1e-2);

  const double t = 0.7;
  const Matrix givens{{std::cos(t), -std::sin(t)}, {std::sin(t), std::cos(t)}};
  CHECK(oracle::frobenius_distance(newton_schulz_orthogonalize(givens), givens) <= 1e-3);

  const Matrix m = testutil::gaussian(6, 9, 4);
  const Matrix base = newton_schulz_orthogonalize(m);
  for (double c : {0.5, 10.0}) {
    CHECK(newton_schulz_orthogonalize(linalg::scale(m, c)) == base);
  }
  CHECK_THROWS_AS(newton_schulz_orthogonalize(Matrix(3, 3)), DegenerateInputError);
}

TEST_CASE("newton-schulz: well-conditioned matrices reach the polar factor") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const std::size_t r = 2 + seed % 7;
    const std::size_t c = 2 + (seed * 5) % 9;
    const Matrix m = well_conditioned(r, c, 10.0, seed);
    const Matrix x = newton_schulz_orthogonalize(m);
    const double bound = 1e-2 * std::sqrt(static_cast<double>(std::min(r, c)));
    CHECK(oracle::frobenius_distance(x, oracle::polar_factor(m)) <= bound);
    CHECK(orthogonality_defect(x) <= bound);
  }
}

TEST_CASE("newton-schulz: Gaussian matrices stay in the loose band") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t r = 4 + seed % 30;
    const std::size_t c = 4 + (seed * 13) % 40;
    const Matrix x = newton_schulz_orthogonalize(testutil::gaussian(r, c, 300 + seed));
    CHECK(orthogonality_defect(x) <= 0.35 * std::sqrt(static_cast<double>(std::min(r, c))));
    for (double s : oracle::singular_values(x)) {
      CHECK(s >= 0.3);
      CHECK(s <= 1.3);
    }
  }
}

TEST_CASE("muon: equalises singular directions of the momentum") {
  NamedParamSet p;
  p.add("in.weight", Tensor::from_matrix(Matrix(2, 2)));
  p.add("hidden.weight", Tensor::from_matrix(Matrix(2, 2)));
  p.add("out.weight", Tensor::from_matrix(Matrix(2, 2)));
  const auto routing = default_routing(p);
  CHECK(class_of(routing, "hidden.weight") == ParamClass::kMuon);
  CHECK(class_of(routing, "in.weight") == ParamClass::kAdamFallback);
  CHECK(class_of(routing, "out.weight") == ParamClass::kAdamFallback);

  Hyperparams h;
  h.kind = Kind::kMuon;
  h.lr = 0.01;
  auto state = OptimizerState::create(h, p);
  NamedParamSet g = p.zeros_like();
  g.at("hidden.weight") = Tensor::from_matrix(Matrix{{4.0, 0.0}, {0.0, 1.0}});
  muon_step(state, p, g, routing);
  const double s = h.muon_scale * std::sqrt(2.0);
  const Matrix expect{{-h.lr * s, 0.0}, {0.0, -h.lr * s}};
  CHECK(oracle::frobenius_distance(p.at("hidden.weight").as_matrix(), expect) <= 1e-2 * h.lr * s);
}

TEST_CASE("muon: fallback tensors take the plain Adam update") {
  NamedParamSet p;
  p.add("w0", Tensor::from_matrix(testutil::gaussian(3, 3, 1)));
  p.add("w1", Tensor::from_matrix(testutil::gaussian(3, 3, 2)));
  p.add("w2", Tensor::from_matrix(testutil::gaussian(3, 3, 3)));
  p.add("b", Tensor({3}, {0.1, 0.2, 0.3}));
  const NamedParamSet g = testutil::randomized(p, 9);
  Hyperparams hm;
  hm.kind = Kind::kMuon;
  hm.lr = 0.02;
  Hyperparams ha = hm;
  ha.kind = Kind::kAdam;
  NamedParamSet pm = p;
  NamedParamSet pa = p;
  auto sm = OptimizerState::create(hm, pm);
  auto sa = OptimizerState::create(ha, pa);
  muon_step(sm, pm, g, default_routing(p));
  adam_step(sa, pa, g);
  CHECK(pm.at("b") == pa.at("b"));
  CHECK(pm.at("w0") == pa.at("w0"));
  CHECK(pm.at("w2") == pa.at("w2"));
  CHECK_FALSE(pm.at("w1") == pa.at("w1"));
}

TEST_CASE("muon: gradient scaling with fresh state") {
  NamedParamSet p;
  p.add("w0", Tensor::from_matrix(testutil::gaussian(3, 4, 1)));
  p.add("w1", Tensor::from_matrix(testutil::gaussian(4, 5, 2)));
  p.add("w2", Tensor::from_matrix(testutil::gaussian(5, 2, 3)));
  const NamedParamSet g = testutil::randomized(p, 10);
  Hyperparams h;
  h.kind = Kind::kMuon;
  h.lr = 0.01;
  const auto routing = default_routing(p);
  NamedParamSet base = p;
  auto s0 = OptimizerState::create(h, base);
  muon_step(s0, base, g, routing);
  for (double c : {0.5, 3.0, 10.0}) {
    NamedParamSet q = p;
    auto s = OptimizerState::create(h, q);
    muon_step(s, q, scaled(g, c), routing);
    CHECK(q.at("w1") == base.at("w1"));
    for (const char* name : {"w0", "w2"}) {
      const auto& a = q.at(name).data;
      const auto& b = base.at(name).data;
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::abs(a[i] - b[i]) <= 1e-6 * h.lr);
      }
    }
  }
}

TEST_CASE("muon: momentum keeps moving parameters after gradients stop") {
  NamedParamSet p;
  p.add("w0", Tensor::from_matrix(Matrix(2, 2)));
  p.add("w1", Tensor::from_matrix(testutil::gaussian(3, 3, 5)));
  p.add("w2", Tensor::from_matrix(Matrix(2, 2)));
  Hyperparams h;
  h.kind = Kind::kMuon;
  h.lr = 0.01;
  const auto routing = default_routing(p);
  auto state = OptimizerState::create(h, p);
  NamedParamSet g = p.zeros_like();
  g.at("w1") = Tensor::from_matrix(testutil::gaussian(3, 3, 6));
  muon_step(state, p, g, routing);
  const auto m1 = state.m.at("w1").data;
  const NamedParamSet zero = p.zeros_like();
  for (int k = 1; k <= 5; ++k) {
    const NamedParamSet before = p;
    muon_step(state, p, zero, routing);
    CHECK_FALSE(p.at("w1") == before.at("w1"));
    CHECK(p.all_finite());
    for (std::size_t i = 0; i < m1.size(); ++i) {
      CHECK(state.m.at("w1").data[i] == doctest::Approx(m1[i] * std::pow(h.muon_beta, k)).epsilon(1e-12));
    }
  }
}

TEST_CASE("muon: a vector routed to Muon is a routing error") {
  NamedParamSet p;
  p.add("b", Tensor({3}, {0.0, 0.0, 0.0}));
  Hyperparams h;
  h.kind = Kind::kMuon;
  auto state = OptimizerState::create(h, p);
  const ParamClassMap routing{{"b", ParamClass::kMuon}};
  CHECK_THROWS_AS(muon_step(state, p, p.zeros_like(), routing), RoutingError);
}

TEST_CASE("schedules: cosine decays to zero, constant stays") {
  Hyperparams h;
  h.lr = 0.1;
  h.total_steps = 100;
  CHECK(lr_at(h, 50) == 0.1);
  h.schedule = Schedule::kCosine;
  CHECK(lr_at(h, 1) == doctest::Approx(0.1).epsilon(1e-3));
  CHECK(lr_at(h, 100) == doctest::Approx(0.0));
}

TEST_CASE("newton-schulz: positive scaling is bitwise invisible") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> log_c(-3.0, 3.0);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Matrix m = testutil::gaussian(2 + seed % 9, 2 + (seed * 3) % 11, 9000 + seed);
    const Matrix base = newton_schulz_orthogonalize(m);
    const double c = std::pow(10.0, log_c(rng));
    CHECK(newton_schulz_orthogonalize(linalg::scale(m, c)) == base);
  }
}
