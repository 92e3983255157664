#include "optlens/hessian.hpp"

#include <cmath>
#include <random>

#include <json.hpp>

#include "optlens/errors.hpp"
#include "optlens/rng.hpp"

namespace optlens::hessian {

namespace {

double norm(const NamedParamSet& v) { return std::sqrt(dot(v, v)); }

NamedParamSet gaussian_unit(const NamedParamSet& layout, std::uint64_t seed) {
  Rng rng = make_rng(seed, "power-start");
  std::normal_distribution<double> n01;
  NamedParamSet v = layout.zeros_like();
  for (auto& [name, t] : v) {
    for (double& x : t.data) {
      x = n01(rng);
    }
  }
  return scaled(v, 1.0 / norm(v));
}

struct Run {
  double eigenvalue = 0.0;
  std::size_t iters = 0;
  bool converged = false;
};

Run power(const HvpFn& hvp, NamedParamSet v, double shift, double tol, std::size_t max_iters) {
  Run r;
  double prev = 0.0;
  for (std::size_t k = 0; k < max_iters; ++k) {
    NamedParamSet w = hvp(v);
    if (shift != 0.0) {
      w = axpy(w, shift, v);
    }
    ++r.iters;
    const double lambda = dot(v, w);
    if (!std::isfinite(lambda)) {
      throw NumericError("power iteration produced a non-finite Rayleigh quotient");
    }
    r.eigenvalue = lambda;
    const double wn = norm(w);
    if (wn == 0.0) {
      r.converged = true;
      break;
    }
    if (k > 0 && std::abs(lambda - prev) <= tol * std::abs(lambda)) {
      r.converged = true;
      break;
    }
    prev = lambda;
    v = scaled(w, 1.0 / wn);
  }
  return r;
}

}  // namespace

PowerResult top_eigenvalue(const HvpFn& hvp, const NamedParamSet& layout, double tol, std::size_t max_iters,
                           std::uint64_t seed) {
  if (!(tol > 0.0)) {
    throw ConfigError("power iteration tolerance must be positive");
  }
  if (max_iters == 0) {
    throw ConfigError("power iteration needs max_iters >= 1");
  }
  if (layout.numel() == 0) {
    throw DegenerateInputError("power iteration over an empty parameter set");
  }
  const NamedParamSet start = gaussian_unit(layout, seed);
  const Run first = power(hvp, start, 0.0, tol, max_iters);
  PowerResult out{first.eigenvalue, first.iters, first.converged, false, {}};
  if (first.eigenvalue < 0.0) {
    const double c = 2.0 * std::abs(first.eigenvalue);
    const Run second = power(hvp, start, c, tol, max_iters);
    out.eigenvalue = second.eigenvalue - c;
    out.iters += second.iters;
    out.converged = first.converged && second.converged;
    out.shifted = true;
  }
  if (!out.converged) {
    out.warning = "power iteration did not reach tol " + std::to_string(tol) + " within " +
                  std::to_string(max_iters) + " iterations";
  }
  return out;
}

TraceResult trace_hutchinson(const HvpFn& hvp, const NamedParamSet& layout, std::size_t num_probes,
                             std::uint64_t seed) {
  if (num_probes < 2) {
    throw ConfigError("Hutchinson estimation needs at least 2 probes");
  }
  std::vector<double> samples;
  samples.reserve(num_probes);
  for (std::size_t k = 0; k < num_probes; ++k) {
    Rng rng = make_rng(seed, "hutchinson", k);
    NamedParamSet z = layout.zeros_like();
    for (auto& [name, t] : z) {
      for (double& x : t.data) {
        x = (rng() >> 63) != 0 ? 1.0 : -1.0;
      }
    }
    const double q = dot(z, hvp(z));
    if (!std::isfinite(q)) {
      throw NumericError("Hutchinson probe produced a non-finite value");
    }
    samples.push_back(q);
  }
  double mean = 0.0;
  for (double q : samples) {
    mean += q;
  }
  mean /= static_cast<double>(num_probes);
  double ss = 0.0;
  for (double q : samples) {
    ss += (q - mean) * (q - mean);
  }
  const double sd = std::sqrt(ss / static_cast<double>(num_probes - 1));
  return {mean, sd / std::sqrt(static_cast<double>(num_probes)), num_probes};
}

HessianSummary summarize(const models::SubsetLoss& loss, const NamedParamSet& params, const HessianOptions& opts) {
  const HvpFn hvp = [&](const NamedParamSet& v) { return loss.hvp(params, v, opts.mode); };
  const PowerResult top = top_eigenvalue(hvp, params, opts.tol, opts.max_iters, opts.seed);
  const TraceResult tr = trace_hutchinson(hvp, params, opts.probes, opts.seed);
  HessianSummary s;
  s.model = loss.spec().name();
  s.seed = opts.seed;
  s.top_eigenvalue = top.eigenvalue;
  s.trace_estimate = tr.estimate;
  s.trace_stderr = tr.stderr_;
  s.probes = tr.probes;
  s.power_iters = top.iters;
  s.converged = top.converged;
  s.warning = top.warning;
  return s;
}

std::string to_json(const HessianSummary& s) {
  nlohmann::ordered_json j;
  j["model"] = s.model;
  j["optimizer"] = s.optimizer;
  j["seed"] = s.seed;
  j["top_eigenvalue"] = s.top_eigenvalue;
  j["trace_estimate"] = s.trace_estimate;
  j["trace_stderr"] = s.trace_stderr;
  j["probes"] = s.probes;
  j["power_iters"] = s.power_iters;
  j["subset_id"] = s.subset_id;
  j["converged"] = s.converged;
  if (!s.warning.empty()) {
    j["warning"] = s.warning;
  }
  return j.dump(2) + "\n";
}

HessianSummary summary_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    HessianSummary s;
    s.model = j.at("model").get<std::string>();
    s.optimizer = j.at("optimizer").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.top_eigenvalue = j.at("top_eigenvalue").get<double>();
    s.trace_estimate = j.at("trace_estimate").get<double>();
    s.trace_stderr = j.at("trace_stderr").get<double>();
    s.probes = j.at("probes").get<std::size_t>();
    s.power_iters = j.at("power_iters").get<std::size_t>();
    s.subset_id = j.at("subset_id").get<std::string>();
    s.converged = j.value("converged", true);
    s.warning = j.value("warning", std::string{});
    if (s.probes < 1 || !(s.trace_stderr >= 0.0)) {
      throw FormatError("hessian summary violates probes >= 1, stderr >= 0");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad hessian summary: ") + e.what());
  }
}

}  // namespace optlens::hessian
