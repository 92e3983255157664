#include "optlens/optimizers.hpp"

#include <cmath>
#include <numbers>

#include "optlens/errors.hpp"
#include "optlens/linalg.hpp"

namespace optlens::optim {

std::string_view kind_name(Kind k) { return k == Kind::kAdam ? "adam" : "muon"; }

Kind parse_kind(std::string_view name) {
  if (name == "adam") {
    return Kind::kAdam;
  }
  if (name == "muon") {
    return Kind::kMuon;
  }
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

std::string_view schedule_name(Schedule s) { return s == Schedule::kConstant ? "constant" : "cosine"; }

Schedule parse_schedule(std::string_view name) {
  if (name == "constant") {
    return Schedule::kConstant;
  }
  if (name == "cosine") {
    return Schedule::kCosine;
  }
  throw ConfigError("unknown lr schedule '" + std::string(name) + "'");
}

void Hyperparams::validate() const {
  // lr = 0 is allowed: it is the frozen-initialisation baseline in a grid.
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ConfigError("lr must be finite and non-negative");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(muon_beta >= 0.0 && muon_beta < 1.0)) {
    throw ConfigError("momentum coefficients must lie in [0, 1)");
  }
  if (!(eps > 0.0)) {
    throw ConfigError("eps must be positive");
  }
  if (!(weight_decay >= 0.0)) {
    throw ConfigError("weight_decay must be non-negative");
  }
  if (ns.steps == 0 || ns.polish_steps > ns.steps) {
    throw ConfigError("ns_steps must be >= 1 and >= ns_polish_steps");
  }
  if (!(muon_scale > 0.0)) {
    throw ConfigError("muon_scale must be positive");
  }
  if (schedule == Schedule::kCosine && total_steps == 0) {
    throw ConfigError("cosine schedule needs total_steps");
  }
}

ParamClassMap default_routing(const NamedParamSet& params) {
  std::size_t first = params.size();
  std::size_t last = params.size();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].second.is_matrix()) {
      if (first == params.size()) {
        first = i;
      }
      last = i;
    }
  }
  ParamClassMap routing;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool hidden_matrix = params[i].second.is_matrix() && i != first && i != last;
    routing.emplace_back(params[i].first, hidden_matrix ? ParamClass::kMuon : ParamClass::kAdamFallback);
  }
  return routing;
}

ParamClassMap adam_routing(const NamedParamSet& params) {
  ParamClassMap routing;
  for (const auto& [name, t] : params) {
    routing.emplace_back(name, ParamClass::kAdamFallback);
  }
  return routing;
}

ParamClass class_of(const ParamClassMap& routing, std::string_view name) {
  for (const auto& [n, c] : routing) {
    if (n == name) {
      return c;
    }
  }
  throw RoutingError("parameter '" + std::string(name) + "' has no optimizer class");
}

OptimizerState OptimizerState::create(const Hyperparams& hyper, const NamedParamSet& params) {
  hyper.validate();
  OptimizerState s;
  s.hyper = hyper;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  return s;
}

double lr_at(const Hyperparams& hyper, std::size_t t) {
  if (hyper.schedule == Schedule::kConstant) {
    return hyper.lr;
  }
  const double progress = std::min(1.0, static_cast<double>(t) / static_cast<double>(hyper.total_steps));
  return hyper.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

void check_grads(const NamedParamSet& params, const NamedParamSet& grads) {
  require_same_layout(params, grads, "optimizer step");
  for (const auto& [name, g] : grads) {
    for (double x : g.data) {
      if (!std::isfinite(x)) {
        throw NumericError("non-finite gradient for parameter '" + name + "'");
      }
    }
  }
}

void adam_update(OptimizerState& s, std::size_t k, Tensor& theta, const Tensor& g, double lr) {
  const Hyperparams& h = s.hyper;
  auto& m = s.m[k].second.data;
  auto& v = s.v[k].second.data;
  const double t = static_cast<double>(s.t);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < theta.data.size(); ++i) {
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g.data[i];
    v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g.data[i] * g.data[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    const double old = theta.data[i];
    theta.data[i] = old - lr * m_hat / (std::sqrt(v_hat) + h.eps) - lr * h.weight_decay * old;
  }
}

void muon_update(OptimizerState& s, std::size_t k, Tensor& theta, const Tensor& g, double lr) {
  const Hyperparams& h = s.hyper;
  auto& m = s.m[k].second.data;
  bool any = false;
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = h.muon_beta * m[i] + g.data[i];
    any = any || m[i] != 0.0;
  }
  const double decay = lr * h.weight_decay;
  if (!any) {
    // Zero momentum has no polar factor; only weight decay acts.
    for (double& x : theta.data) {
      x -= decay * x;
    }
    return;
  }
  const std::size_t rows = theta.shape[0];
  const std::size_t cols = theta.shape[1];
  const Matrix o = newton_schulz_orthogonalize(Matrix(rows, cols, m), h.ns);
  const double step = lr * h.muon_scale * std::sqrt(static_cast<double>(std::max(rows, cols)));
  for (std::size_t i = 0; i < theta.data.size(); ++i) {
    const double old = theta.data[i];
    theta.data[i] = old - step * o.data()[i] - decay * old;
  }
}

}  // namespace

void adam_step(OptimizerState& state, NamedParamSet& params, const NamedParamSet& grads) {
  check_grads(params, grads);
  require_same_layout(params, state.m, "optimizer state");
  ++state.t;
  const double lr = lr_at(state.hyper, state.t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    adam_update(state, k, params[k].second, grads[k].second, lr);
  }
}

namespace {

double round_significand(double x, int bits) {
  if (x == 0.0) {
    return x;
  }
  int exp = 0;
  const double frac = std::frexp(x, &exp);
  return std::ldexp(std::nearbyint(std::ldexp(frac, bits)), exp - bits);
}

}  // namespace

Matrix newton_schulz_orthogonalize(const Matrix& m, const NsSchedule& schedule) {
  if (schedule.steps == 0 || schedule.polish_steps > schedule.steps) {
    throw ConfigError("newton-schulz: need steps >= 1 and polish_steps <= steps");
  }
  linalg::require_finite(m, "newton-schulz input");
  double peak = 0.0;
  for (double x : m.data()) {
    peak = std::max(peak, std::abs(x));
  }
  if (peak == 0.0 || m.empty()) {
    throw DegenerateInputError("newton-schulz: zero matrix");
  }
  const bool tall = m.rows() > m.cols();
  Matrix x = tall ? linalg::transpose(m) : m;
  // Dividing by the largest magnitude keeps the Frobenius norm in range. The
  // ratios e / peak of c * m and m differ by a few ulp when c * m rounds;
  // rounding them to kNsInputBits significant bits removes that difference
  // unless a ratio sits within a few ulp of a rounding boundary.
  for (double& e : x.data()) {
    e = round_significand(e / peak, kNsInputBits);
  }
  const double fro = linalg::frobenius_norm(x);
  for (double& e : x.data()) {
    e /= fro;
  }
  for (std::size_t k = 0; k < schedule.steps; ++k) {
    const auto& [a, b, c] = k < schedule.steps - schedule.polish_steps ? schedule.coefficients : kNsPolish;
    const Matrix gram = linalg::matmul(x, linalg::transpose(x));
    Matrix poly = linalg::scale(gram, b);
    poly = linalg::add(poly, linalg::scale(linalg::matmul(gram, gram), c));
    x = linalg::add(linalg::scale(x, a), linalg::matmul(poly, x));
  }
  return tall ? linalg::transpose(x) : x;
}

Matrix newton_schulz_orthogonalize(const Matrix& m, std::size_t steps) {
  NsSchedule schedule;
  schedule.steps = steps;
  schedule.polish_steps = std::min(schedule.polish_steps, steps - std::min<std::size_t>(steps, 1));
  return newton_schulz_orthogonalize(m, schedule);
}

void muon_step(OptimizerState& state, NamedParamSet& params, const NamedParamSet& grads,
               const ParamClassMap& routing) {
  check_grads(params, grads);
  require_same_layout(params, state.m, "optimizer state");
  std::vector<ParamClass> classes;
  for (const auto& [name, t] : params) {
    const ParamClass c = class_of(routing, name);
    if (c == ParamClass::kMuon && !t.is_matrix()) {
      throw RoutingError("muon-class parameter '" + name + "' is not a matrix");
    }
    classes.push_back(c);
  }
  ++state.t;
  const double lr = lr_at(state.hyper, state.t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (classes[k] == ParamClass::kMuon) {
      muon_update(state, k, params[k].second, grads[k].second, lr);
    } else {
      adam_update(state, k, params[k].second, grads[k].second, lr);
    }
  }
}

void step(OptimizerState& state, NamedParamSet& params, const NamedParamSet& grads, const ParamClassMap& routing) {
  if (state.hyper.kind == Kind::kAdam) {
    adam_step(state, params, grads);
  } else {
    muon_step(state, params, grads, routing);
  }
}

}  // namespace optlens::optim
