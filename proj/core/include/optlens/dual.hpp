#pragma once

#include <cmath>

namespace optlens::ad {

/// First-order dual number v + d*eps. Running the reverse-mode tape on Dual
/// scalars seeded with a direction gives forward-over-reverse Hessian-vector
/// products: the tangent part of each gradient is (H v).
struct Dual {
  double v = 0.0;
  double d = 0.0;

  constexpr Dual() = default;
  constexpr Dual(double value) : v(value) {}  // NOLINT(google-explicit-constructor)
  constexpr Dual(double value, double tangent) : v(value), d(tangent) {}

  constexpr Dual& operator+=(const Dual& o) {
    v += o.v;
    d += o.d;
    return *this;
  }
  constexpr Dual& operator-=(const Dual& o) {
    v -= o.v;
    d -= o.d;
    return *this;
  }
  constexpr Dual& operator*=(const Dual& o) {
    d = d * o.v + v * o.d;
    v *= o.v;
    return *this;
  }
  constexpr Dual& operator/=(const Dual& o) {
    const double q = v / o.v;
    d = (d - q * o.d) / o.v;
    v = q;
    return *this;
  }
};

constexpr Dual operator+(Dual a, const Dual& b) { return a += b; }
constexpr Dual operator-(Dual a, const Dual& b) { return a -= b; }
constexpr Dual operator*(Dual a, const Dual& b) { return a *= b; }
constexpr Dual operator/(Dual a, const Dual& b) { return a /= b; }
constexpr Dual operator-(const Dual& a) { return {-a.v, -a.d}; }

inline Dual exp(const Dual& a) {
  const double e = std::exp(a.v);
  return {e, e * a.d};
}
inline Dual log(const Dual& a) { return {std::log(a.v), a.d / a.v}; }
inline Dual tanh(const Dual& a) {
  const double t = std::tanh(a.v);
  return {t, (1.0 - t * t) * a.d};
}

constexpr double value_of(double x) { return x; }
constexpr double value_of(const Dual& x) { return x.v; }
constexpr double tangent_of(double) { return 0.0; }
constexpr double tangent_of(const Dual& x) { return x.d; }

inline bool is_finite(double x) { return std::isfinite(x); }
inline bool is_finite(const Dual& x) { return std::isfinite(x.v) && std::isfinite(x.d); }

}  // namespace optlens::ad
