#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "optlens/tape.hpp"
#include "optlens/tensor.hpp"

namespace optlens::ad {

/// Name -> tape variable lookup for one set of parameter leaves.
class ParamVars {
 public:
  template <class T>
  static ParamVars push(Tape<T>& tape, const NamedParamSet& params);
  /// Leaves whose tangent is the matching entry of `direction` (Dual tapes).
  static ParamVars push(Tape<Dual>& tape, const NamedParamSet& params, const NamedParamSet& direction);

  [[nodiscard]] Var operator[](std::string_view name) const;
  [[nodiscard]] std::size_t size() const noexcept { return vars_.size(); }
  [[nodiscard]] Var at(std::size_t i) const { return vars_[i]; }

 private:
  std::vector<std::string> names_;
  std::vector<Var> vars_;
};

/// A scalar loss over a parameter set, buildable on both tape flavours.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual Var build(Tape<double>& tape, const ParamVars& params) const = 0;
  virtual Var build(Tape<Dual>& tape, const ParamVars& params) const = 0;
};

/// CRTP helper: Derived supplies `template <class T> Var loss(Tape<T>&, const ParamVars&) const`.
template <class Derived>
class ObjectiveFor : public Objective {
 public:
  Var build(Tape<double>& tape, const ParamVars& params) const final {
    return static_cast<const Derived&>(*this).template loss<double>(tape, params);
  }
  Var build(Tape<Dual>& tape, const ParamVars& params) const final {
    return static_cast<const Derived&>(*this).template loss<Dual>(tape, params);
  }
};

/// 0.5 * sum_i w_i * theta_i^2 with per-entry weights aligned to the
/// parameters; the Hessian is diag(w).
class DiagonalQuadratic final : public ObjectiveFor<DiagonalQuadratic> {
 public:
  explicit DiagonalQuadratic(NamedParamSet weights) : weights_(std::move(weights)) {}

  template <class T>
  Var loss(Tape<T>& tape, const ParamVars& params) const;

 private:
  NamedParamSet weights_;
};

/// c * inner loss.
class ScaledObjective final : public ObjectiveFor<ScaledObjective> {
 public:
  ScaledObjective(const Objective& inner, double factor) : inner_(&inner), factor_(factor) {}

  template <class T>
  Var loss(Tape<T>& tape, const ParamVars& params) const {
    return tape.scale(inner_->build(tape, params), factor_);
  }

 private:
  const Objective* inner_;
  double factor_;
};

struct GradResult {
  double loss = 0.0;
  /// Same names and shapes as the parameters.
  NamedParamSet grads;
};

enum class HvpMode { kExact, kFiniteDiff };

double evaluate_loss(const Objective& objective, const NamedParamSet& params);
GradResult gradient(const Objective& objective, const NamedParamSet& params);

/// H v. Exact mode runs the tape on dual numbers (forward-over-reverse);
/// finite-difference mode takes central differences of gradients with step
/// sqrt(machine eps) * (1 + |theta|_inf) / |v|_inf.
NamedParamSet hvp(const Objective& objective, const NamedParamSet& params, const NamedParamSet& direction,
                  HvpMode mode = HvpMode::kExact);

}  // namespace optlens::ad
