#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "optlens/autodiff.hpp"
#include "optlens/models.hpp"
#include "optlens/tensor.hpp"

namespace optlens::hessian {

/// v -> H v at a fixed point.
using HvpFn = std::function<NamedParamSet(const NamedParamSet&)>;

struct PowerResult {
  double eigenvalue = 0.0;
  /// HVPs spent, including the shifted rerun.
  std::size_t iters = 0;
  bool converged = false;
  bool shifted = false;
  /// Empty unless the iteration hit max_iters.
  std::string warning;
};

/// Most positive eigenvalue by power iteration with Rayleigh-quotient readout.
/// When the dominant eigenvalue is negative, reruns on H + cI with c = 2|lambda|.
/// `layout` fixes the parameter shapes; the start vector is a seeded unit Gaussian.
PowerResult top_eigenvalue(const HvpFn& hvp, const NamedParamSet& layout, double tol, std::size_t max_iters,
                           std::uint64_t seed);

struct TraceResult {
  double estimate = 0.0;
  /// Sample standard deviation over sqrt(probes).
  double stderr_ = 0.0;
  std::size_t probes = 0;
};

/// Hutchinson estimate with Rademacher probes; probe k draws from its own stream.
TraceResult trace_hutchinson(const HvpFn& hvp, const NamedParamSet& layout, std::size_t num_probes,
                             std::uint64_t seed);

struct HessianOptions {
  double tol = 1e-4;
  std::size_t max_iters = 100;
  std::size_t probes = 64;
  std::uint64_t seed = 0;
  ad::HvpMode mode = ad::HvpMode::kExact;
};

struct HessianSummary {
  std::string model;
  std::string optimizer;
  std::uint64_t seed = 0;
  double top_eigenvalue = 0.0;
  double trace_estimate = 0.0;
  double trace_stderr = 0.0;
  std::size_t probes = 0;
  std::size_t power_iters = 0;
  std::string subset_id;
  bool converged = true;
  std::string warning;
};

/// Both curvature summaries of `params` under `loss`.
HessianSummary summarize(const models::SubsetLoss& loss, const NamedParamSet& params, const HessianOptions& opts);

std::string to_json(const HessianSummary& s);
HessianSummary summary_from_json(const std::string& text);

}  // namespace optlens::hessian
