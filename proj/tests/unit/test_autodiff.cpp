#include <doctest.h>

#include <cmath>
#include <memory>

#include "../oracles/oracles.hpp"
#include "optlens/autodiff.hpp"
#include "optlens/errors.hpp"
#include "util.hpp"

using namespace optlens;
using ad::Var;

namespace {

/// Touches every tape op once so a single gradient check covers all backward rules.
class OpTour final : public ad::ObjectiveFor<OpTour> {
 public:
  OpTour()
      : segments_(std::make_shared<ad::Segments>(ad::Segments{{0, 2, 6}})),
        labels_(std::make_shared<std::vector<int>>(std::vector<int>{1, 3})),
        rows_(std::make_shared<std::vector<std::uint32_t>>(std::vector<std::uint32_t>{5, 0, 2, 2, 4})),
        pairs_(std::make_shared<ad::PairIndex>(ad::PairIndex{{0, 1, 3, 5, 2}, {1, 0, 4, 2, 5}})),
        w1_(testutil::gaussian(3, 3, 71)),
        w2_(testutil::gaussian(5, 3, 72)),
        w3_(testutil::gaussian(5, 3, 73)) {}

  template <class T>
  Var loss(ad::Tape<T>& t, const ad::ParamVars& p) const {
    const Var m = t.add_bias(t.matmul(p["a"], p["b"]), p["bias"]);
    const Var u = t.add(t.add(t.tanh(m), t.scale(t.silu(m), 0.7)), t.relu(m));
    const Var pooled =
        t.concat_cols(t.add(t.segment_max(u, segments_), t.segment_mean(u, segments_)), t.segment_sum(u, segments_));
    const Var ce = t.softmax_cross_entropy(t.matmul_nt(pooled, p["c"]), labels_);
    const Var sl = t.slice_cols(t.transpose(t.gather_rows(u, rows_)), 1, 4);
    const Var d = t.pair_sq_dist(m, pairs_);
    const Var comb = t.mul_col(t.pair_combine(u, m, pairs_, d, p["w"]), d);
    const Var q = t.add(t.half_weighted_sq_sum(sl, w1_), t.half_weighted_sq_sum(t.pair_diff(m, pairs_), w2_));
    return t.add(t.add(ce, q), t.scale(t.half_weighted_sq_sum(comb, w3_), 0.1));
  }

  static NamedParamSet params(std::uint64_t seed) {
    NamedParamSet p;
    p.add("a", Tensor({6, 4}, std::vector<double>(24)));
    p.add("b", Tensor({4, 3}, std::vector<double>(12)));
    p.add("bias", Tensor({3}, std::vector<double>(3)));
    p.add("c", Tensor({4, 6}, std::vector<double>(24)));
    p.add("w", Tensor({3}, std::vector<double>(3)));
    return testutil::randomized(p, seed, 0.5);
  }

 private:
  std::shared_ptr<const ad::Segments> segments_;
  std::shared_ptr<const std::vector<int>> labels_;
  std::shared_ptr<const std::vector<std::uint32_t>> rows_;
  std::shared_ptr<const ad::PairIndex> pairs_;
  Matrix w1_;
  Matrix w2_;
  Matrix w3_;
};

std::function<double(std::span<const double>)> flat_loss(const ad::Objective& obj, const NamedParamSet& layout) {
  return [&obj, layout](std::span<const double> x) { return ad::evaluate_loss(obj, layout.unflatten(x)); };
}

}  // namespace

TEST_CASE("autodiff: every tape op matches central differences") {
  const OpTour obj;
  for (std::uint64_t seed : {1, 2, 3}) {
    const NamedParamSet p = OpTour::params(seed);
    const auto g = ad::gradient(obj, p);
    CHECK(g.loss == ad::evaluate_loss(obj, p));
    const auto flat = p.flatten();
    const auto grad = g.grads.flatten();
    const auto f = flat_loss(obj, p);
    for (std::size_t i = 0; i < flat.size(); ++i) {
      const double fd = oracle::central_difference(f, flat, i, 1e-6);
      CHECK(std::abs(grad[i] - fd) <= 1e-6 * (1.0 + std::abs(fd)));
    }
  }
}

TEST_CASE("autodiff: exact HVP matches differences of gradients") {
  const OpTour obj;
  const NamedParamSet p = OpTour::params(4);
  const NamedParamSet v = testutil::randomized(p, 5);
  const auto hv = ad::hvp(obj, p, v).flatten();
  const auto fd = ad::hvp(obj, p, v, ad::HvpMode::kFiniteDiff).flatten();
  // Independent check: central differences of the gradient along v.
  const double h = 1e-5;
  const auto up = ad::gradient(obj, axpy(p, h, v)).grads.flatten();
  const auto down = ad::gradient(obj, axpy(p, -h, v)).grads.flatten();
  for (std::size_t i = 0; i < hv.size(); ++i) {
    const double ref = (up[i] - down[i]) / (2.0 * h);
    CHECK(std::abs(hv[i] - ref) <= 1e-5 * (1.0 + std::abs(ref)));
    CHECK(std::abs(hv[i] - fd[i]) <= 1e-4 * (1.0 + std::abs(ref)));
  }
}

TEST_CASE("autodiff: HVP is linear and symmetric") {
  const OpTour obj;
  const NamedParamSet p = OpTour::params(6);
  const NamedParamSet v = testutil::randomized(p, 7);
  const NamedParamSet w = testutil::randomized(p, 8);
  const auto hv = ad::hvp(obj, p, v);
  const auto hw = ad::hvp(obj, p, w);
  CHECK(std::abs(dot(w, hv) - dot(v, hw)) <= 1e-10 * (1.0 + std::abs(dot(w, hv))));
  const auto h_sum = ad::hvp(obj, p, axpy(v, 2.0, w));
  const auto expect = axpy(hv, 2.0, hw).flatten();
  const auto got = h_sum.flatten();
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(std::abs(got[i] - expect[i]) <= 1e-10 * (1.0 + std::abs(expect[i])));
  }
}

TEST_CASE("autodiff: diagonal quadratic has gradient w*theta and Hessian diag(w)") {
  NamedParamSet weights;
  weights.add("m", Tensor({2, 2}, {3.0, 1.0, 0.5, 2.0}));
  weights.add("v", Tensor({2}, {4.0, -1.0}));
  const ad::DiagonalQuadratic q(weights);
  const NamedParamSet theta = testutil::randomized(weights, 9);
  const NamedParamSet dir = testutil::randomized(weights, 10);
  const auto g = ad::gradient(q, theta);
  const auto hv = ad::hvp(q, theta, dir);
  const auto w = weights.flatten();
  const auto x = theta.flatten();
  const auto d = dir.flatten();
  double expected_loss = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    expected_loss += 0.5 * w[i] * x[i] * x[i];
    CHECK(g.grads.flatten()[i] == doctest::Approx(w[i] * x[i]).epsilon(1e-14));
    CHECK(hv.flatten()[i] == doctest::Approx(w[i] * d[i]).epsilon(1e-14));
  }
  CHECK(g.loss == doctest::Approx(expected_loss).epsilon(1e-14));
}

TEST_CASE("autodiff: scaled objective scales loss, gradient and HVP") {
  const OpTour obj;
  const ad::ScaledObjective scaled(obj, 2.5);
  const NamedParamSet p = OpTour::params(11);
  const NamedParamSet v = testutil::randomized(p, 12);
  CHECK(ad::evaluate_loss(scaled, p) == doctest::Approx(2.5 * ad::evaluate_loss(obj, p)).epsilon(1e-14));
  const auto g = ad::gradient(obj, p).grads.flatten();
  const auto gs = ad::gradient(scaled, p).grads.flatten();
  const auto h = ad::hvp(obj, p, v).flatten();
  const auto hs = ad::hvp(scaled, p, v).flatten();
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(gs[i] == doctest::Approx(2.5 * g[i]).epsilon(1e-12));
    CHECK(hs[i] == doctest::Approx(2.5 * h[i]).epsilon(1e-12));
  }
}

TEST_CASE("autodiff: tape bookkeeping and errors") {
  ad::Tape<double> tape;
  const Var c = tape.constant(Matrix{{1.0, 2.0}});
  const Var x = tape.param(Matrix{{3.0, -1.0}});
  const Var loss = tape.half_weighted_sq_sum(tape.add(c, x), Matrix{{1.0, 1.0}});
  tape.backward(loss);
  CHECK(tape.grad(c).empty());
  CHECK(tape.grad(x) == Matrix{{4.0, 1.0}});
  CHECK(tape.value(loss)(0, 0) == doctest::Approx(8.5));

  ad::Tape<double> bad;
  const Var nan = bad.param(Matrix{{std::nan(""), 0.0}});
  CHECK_THROWS_AS(bad.require_finite(nan, "layer"), NumericError);
  ad::Tape<double> shapes;
  CHECK_THROWS_AS(shapes.matmul(shapes.param(Matrix(2, 3)), shapes.param(Matrix(2, 3))), ShapeError);

  NamedParamSet p;
  p.add("a", Tensor({2}, {1.0, 2.0}));
  NamedParamSet other;
  other.add("b", Tensor({2}, {1.0, 2.0}));
  const ad::DiagonalQuadratic q(p);
  CHECK_THROWS_AS(ad::hvp(q, p, other), ShapeError);
}

TEST_CASE("autodiff: dual arithmetic") {
  const ad::Dual a(2.0, 1.0);
  const ad::Dual b(3.0, -2.0);
  CHECK((a * b).d == doctest::Approx(1.0 * 3.0 + 2.0 * -2.0));
  CHECK((a / b).d == doctest::Approx((1.0 * 3.0 - 2.0 * -2.0) / 9.0));
  CHECK(exp(a).d == doctest::Approx(std::exp(2.0)));
  CHECK(tanh(a).d == doctest::Approx(1.0 - std::tanh(2.0) * std::tanh(2.0)));
  CHECK(log(b).d == doctest::Approx(-2.0 / 3.0));
}
