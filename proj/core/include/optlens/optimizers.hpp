#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "optlens/tensor.hpp"

namespace optlens::optim {

enum class Kind { kAdam, kMuon };
enum class ParamClass { kMuon, kAdamFallback };
enum class Schedule { kConstant, kCosine };

std::string_view kind_name(Kind k);
Kind parse_kind(std::string_view name);
std::string_view schedule_name(Schedule s);
Schedule parse_schedule(std::string_view name);

/// Quintic Newton-Schulz coefficients (a, b, c) for
/// X <- a X + b (X X^T) X + c (X X^T)^2 X.
using NsCoefficients = std::array<double, 3>;

/// Steep coefficients from the Muon reference implementation. They push small
/// singular values up quickly but oscillate around 0.7 instead of converging.
inline constexpr NsCoefficients kNsJordan{3.4445, -4.7750, 2.0315};
/// Degree-5 Taylor polynomial of (X^T X)^{-1/2}; contracts to exactly 1 near 1.
inline constexpr NsCoefficients kNsPolish{15.0 / 8.0, -10.0 / 8.0, 3.0 / 8.0};

/// The first `steps - polish_steps` iterations use `coefficients`, the rest
/// use kNsPolish. polish_steps = 0 gives the plain constant-coefficient iteration.
struct NsSchedule {
  std::size_t steps = 5;
  std::size_t polish_steps = 2;
  NsCoefficients coefficients = kNsJordan;
};

struct Hyperparams {
  Kind kind = Kind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double muon_beta = 0.95;
  NsSchedule ns;
  /// Update scale s = muon_scale * sqrt(max(rows, cols)).
  double muon_scale = 0.2;
  Schedule schedule = Schedule::kConstant;
  /// Horizon for the cosine schedule, in steps.
  std::size_t total_steps = 0;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Parameter name -> optimizer class, in parameter registration order.
using ParamClassMap = std::vector<std::pair<std::string, ParamClass>>;

/// Hidden-layer weight matrices go to Muon. Vectors, the first weight matrix
/// (input projection) and the last one (classifier) go to the Adam fallback.
ParamClassMap default_routing(const NamedParamSet& params);
/// Every parameter on the Adam path.
ParamClassMap adam_routing(const NamedParamSet& params);
ParamClass class_of(const ParamClassMap& routing, std::string_view name);

struct OptimizerState {
  Hyperparams hyper;
  /// Steps taken so far; incremented before each update is applied.
  std::size_t t = 0;
  /// First moment (Adam) or momentum buffer (Muon), per parameter.
  NamedParamSet m;
  /// Second moment; only meaningful for Adam-path parameters.
  NamedParamSet v;

  static OptimizerState create(const Hyperparams& hyper, const NamedParamSet& params);
};

/// Learning rate in effect for step t (1-based).
double lr_at(const Hyperparams& hyper, std::size_t t);

/// Applies one Adam update with decoupled weight decay to every parameter.
void adam_step(OptimizerState& state, NamedParamSet& params, const NamedParamSet& grads);

/// Significant bits kept of the max-abs normalised Newton-Schulz input.
inline constexpr int kNsInputBits = 26;

/// Approximate polar factor U V^T of m via quintic Newton-Schulz iterations.
/// Throws DegenerateInputError for an all-zero matrix.
Matrix newton_schulz_orthogonalize(const Matrix& m, const NsSchedule& schedule = {});
/// Default schedule with `steps` iterations; at least one uses the steep coefficients.
Matrix newton_schulz_orthogonalize(const Matrix& m, std::size_t steps);

/// Muon update for muon-class matrices, Adam for everything else.
/// A muon-class tensor that is not a matrix raises RoutingError.
void muon_step(OptimizerState& state, NamedParamSet& params, const NamedParamSet& grads,
               const ParamClassMap& routing);

/// adam_step or muon_step according to state.hyper.kind.
void step(OptimizerState& state, NamedParamSet& params, const NamedParamSet& grads, const ParamClassMap& routing);

}  // namespace optlens::optim
