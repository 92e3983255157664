#include "optlens/autodiff.hpp"

#include <cmath>
#include <limits>

namespace optlens::ad {

namespace {

template <class T>
BasicMatrix<T> lift(const Tensor& t) {
  BasicMatrix<T> m(t.view_rows(), t.view_cols());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    m.data()[i] = T(t.data[i]);
  }
  return m;
}

void check_finite_loss(double loss) {
  if (!std::isfinite(loss)) {
    throw NumericError("loss evaluated to a non-finite value");
  }
}

}  // namespace

template <class T>
ParamVars ParamVars::push(Tape<T>& tape, const NamedParamSet& params) {
  ParamVars pv;
  for (const auto& [name, t] : params) {
    pv.names_.push_back(name);
    pv.vars_.push_back(tape.param(lift<T>(t)));
  }
  return pv;
}

template ParamVars ParamVars::push<double>(Tape<double>&, const NamedParamSet&);
template ParamVars ParamVars::push<Dual>(Tape<Dual>&, const NamedParamSet&);

ParamVars ParamVars::push(Tape<Dual>& tape, const NamedParamSet& params, const NamedParamSet& direction) {
  require_same_layout(params, direction, "hvp direction");
  ParamVars pv;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& [name, t] = params[k];
    const auto& v = direction[k].second;
    BasicMatrix<Dual> m(t.view_rows(), t.view_cols());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      m.data()[i] = Dual(t.data[i], v.data[i]);
    }
    pv.names_.push_back(name);
    pv.vars_.push_back(tape.param(std::move(m)));
  }
  return pv;
}

Var ParamVars::operator[](std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) {
      return vars_[i];
    }
  }
  throw ShapeError("objective requires missing parameter '" + std::string(name) + "'");
}

template <class T>
Var DiagonalQuadratic::loss(Tape<T>& tape, const ParamVars& params) const {
  Var total{};
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    const auto& [name, w] = weights_[k];
    Var term = tape.half_weighted_sq_sum(params[name], w.as_matrix());
    total = k == 0 ? term : tape.add(total, term);
  }
  if (weights_.empty()) {
    throw ShapeError("DiagonalQuadratic: no parameters");
  }
  return total;
}

template Var DiagonalQuadratic::loss<double>(Tape<double>&, const ParamVars&) const;
template Var DiagonalQuadratic::loss<Dual>(Tape<Dual>&, const ParamVars&) const;

double evaluate_loss(const Objective& objective, const NamedParamSet& params) {
  Tape<double> tape;
  const ParamVars vars = ParamVars::push(tape, params);
  const Var loss = objective.build(tape, vars);
  return tape.value(loss)(0, 0);
}

GradResult gradient(const Objective& objective, const NamedParamSet& params) {
  Tape<double> tape;
  const ParamVars vars = ParamVars::push(tape, params);
  const Var loss = objective.build(tape, vars);
  GradResult out{tape.value(loss)(0, 0), params.zeros_like()};
  check_finite_loss(out.loss);
  tape.backward(loss);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& g = tape.grad(vars.at(k));
    if (!g.empty()) {
      out.grads[k].second.data = g.data();
    }
  }
  return out;
}

namespace {

NamedParamSet hvp_exact(const Objective& objective, const NamedParamSet& params, const NamedParamSet& direction) {
  Tape<Dual> tape;
  const ParamVars vars = ParamVars::push(tape, params, direction);
  const Var loss = objective.build(tape, vars);
  check_finite_loss(tape.value(loss)(0, 0).v);
  tape.backward(loss);
  NamedParamSet out = params.zeros_like();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& g = tape.grad(vars.at(k));
    auto& dst = out[k].second.data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      dst[i] = g.data()[i].d;
    }
  }
  return out;
}

NamedParamSet hvp_finite_diff(const Objective& objective, const NamedParamSet& params,
                              const NamedParamSet& direction) {
  const double eps = std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + max_abs(params)) / max_abs(direction);
  const GradResult plus = gradient(objective, axpy(params, eps, direction));
  const GradResult minus = gradient(objective, axpy(params, -eps, direction));
  return scaled(axpy(plus.grads, -1.0, minus.grads), 1.0 / (2.0 * eps));
}

}  // namespace

NamedParamSet hvp(const Objective& objective, const NamedParamSet& params, const NamedParamSet& direction,
                  HvpMode mode) {
  require_same_layout(params, direction, "hvp");
  if (max_abs(direction) == 0.0) {
    throw DegenerateInputError("hvp: zero direction");
  }
  return mode == HvpMode::kExact ? hvp_exact(objective, params, direction)
                                 : hvp_finite_diff(objective, params, direction);
}

}  // namespace optlens::ad
