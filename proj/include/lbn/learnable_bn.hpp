#pragma once

#include "lbn/autodiff.hpp"
#include "lbn/tensor.hpp"

namespace lbn {

inline constexpr double kPhiNegativeSlope = -0.001;
inline constexpr double kDefaultBnEps = 1e-5;

/// Persistent record of one BN layer. phi_raw is the unconstrained mixture
/// coefficient; it only influences statistics through phi_constrain().
struct BnState {
  Tensor mu_h;   // history mean [c]
  Tensor var_h;  // history variance [c], never negative
  Tensor gamma;
  Tensor beta;
  double phi_raw = 0.0;
  double eps = kDefaultBnEps;

  static BnState fresh(std::size_t channels);
  std::size_t channels() const { return mu_h.size(); }
  void validate() const;

  friend bool operator==(const BnState&, const BnState&) = default;
};

/// Leaky rectifier with slope -0.001 on the negative side, so the result is
/// never negative.
double phi_constrain(double phi_raw);

/// Tape operands of one BN layer. `weight` is the already-constrained mixture
/// coefficient: a constant 0 gives history-only normalization, 1 gives
/// present-only normalization.
struct BnOperands {
  ad::Var weight;
  ad::Var gamma;
  ad::Var beta;
};

struct MixedBn {
  ad::Var z_hat;
  Tensor mu_p;
  Tensor var_p;
};

/// Mixed-statistics BN on the tape:
///   mu  = (1 - w) mu_h  + w mu_p
///   var = (1 - w) var_h + w var_p
///   z_hat = (z - mu) / sqrt(var + eps) * gamma + beta
/// Present statistics come from z itself, so gradients flow through them.
/// The state is read, never written.
MixedBn bn_forward_mix(const BnState& state, const ad::Var& z, const BnOperands& operands);

struct MixedBnValue {
  Tensor z_hat;
  Tensor mu_p;
  Tensor var_p;
};

/// Untracked convenience using phi_constrain(state.phi_raw) as the weight.
MixedBnValue bn_forward_mix(const BnState& state, const Tensor& z);

/// Folds the present statistics into the stored history with the updated,
/// constrained coefficient. The result is the history seen by the next sample.
BnState secondary_correct(const BnState& state, const Tensor& mu_p, const Tensor& var_p,
                          double phi_new);

/// Re-initializes the mixture coefficient at the start of a domain.
BnState reset_phi(const BnState& state, double phi_init);

}  // namespace lbn
