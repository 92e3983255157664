#include <doctest.h>

#include "../oracles/oracles.hpp"
#include "optlens/errors.hpp"
#include "optlens/linalg.hpp"
#include "util.hpp"

using namespace optlens;

TEST_CASE("linalg: svd reconstructs and matches the Gram-eigenvalue oracle") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const std::size_t r = 2 + seed % 5;
    const std::size_t c = 2 + (seed * 7) % 6;
    const Matrix m = testutil::gaussian(r, c, seed);
    const auto s = linalg::svd(m);
    const auto ref = oracle::singular_values(m);
    REQUIRE(s.s.size() == std::min(r, c));
    for (std::size_t k = 0; k < s.s.size(); ++k) {
      CHECK(s.s[k] == doctest::Approx(ref[k]).epsilon(1e-10));
      if (k > 0) {
        CHECK(s.s[k] <= s.s[k - 1]);
      }
    }
    Matrix us = s.u;
    for (std::size_t i = 0; i < us.rows(); ++i) {
      for (std::size_t k = 0; k < s.s.size(); ++k) {
        us(i, k) *= s.s[k];
      }
    }
    CHECK(oracle::frobenius_distance(oracle::matmul(us, oracle::transpose(s.v)), m) < 1e-12);
  }
}

TEST_CASE("linalg: polar factor agrees with the inverse-square-root oracle") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Matrix m = testutil::gaussian(3 + seed % 3, 5, 100 + seed);
    CHECK(oracle::frobenius_distance(linalg::polar_factor(m), oracle::polar_factor(m)) < 1e-9);
  }
}

TEST_CASE("linalg: norms and dust clamp") {
  const Matrix m{{3.0, 0.0}, {0.0, 4.0}};
  CHECK(linalg::spectral_norm(m) == doctest::Approx(4.0));
  CHECK(linalg::frobenius_norm(m) == doctest::Approx(5.0));
  const auto s = linalg::clamp_dust({{1.0, 1e-13, 0.5}});
  CHECK(s.values[1] == 0.0);
  CHECK(s.values[2] == 0.5);
}

TEST_CASE("linalg: non-finite input is rejected") {
  Matrix m(2, 2);
  m(0, 1) = std::nan("");
  CHECK_THROWS_AS(linalg::require_finite(m, "m"), NumericError);
}
