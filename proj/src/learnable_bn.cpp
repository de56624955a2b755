#include "lbn/learnable_bn.hpp"

#include <cmath>

#include "lbn/errors.hpp"

namespace lbn {

BnState BnState::fresh(std::size_t channels) {
  BnState s;
  s.mu_h = Tensor::zeros({channels});
  s.var_h = Tensor::full({channels}, 1.0);
  s.gamma = Tensor::full({channels}, 1.0);
  s.beta = Tensor::zeros({channels});
  return s;
}

void BnState::validate() const {
  const Shape shape{channels()};
  if (mu_h.shape() != shape || var_h.shape() != shape || gamma.shape() != shape ||
      beta.shape() != shape) {
    throw ShapeError("BN state tensors disagree on channel count " + std::to_string(channels()));
  }
  for (double v : var_h.data()) {
    if (!(v >= 0.0)) throw NumericError("BN history variance must be non-negative");
  }
  if (!(eps > 0.0)) throw ContractError("BN eps must be positive");
  if (!std::isfinite(phi_raw)) throw NumericError("BN phi is not finite");
}

double phi_constrain(double phi_raw) { return phi_raw > 0.0 ? phi_raw : kPhiNegativeSlope * phi_raw; }

MixedBn bn_forward_mix(const BnState& state, const ad::Var& z, const BnOperands& operands) {
  const Tensor& zv = z.value();
  if (zv.rank() != 2 || zv.cols() != state.channels()) {
    throw ShapeError("BN input " + shape_str(zv.shape()) + " does not have " +
                     std::to_string(state.channels()) + " channels");
  }
  auto& tape = z.tape();
  ad::Var mu_p = ad::mean_rows(z);
  ad::Var var_p = ad::var_rows(z);
  ad::Var mu = ad::mix(tape.constant(state.mu_h), mu_p, operands.weight);
  ad::Var var = ad::mix(tape.constant(state.var_h), var_p, operands.weight);
  ad::Var centered = ad::sub_row(z, mu);
  ad::Var normed = ad::mul_row(centered, ad::rsqrt_eps(var, state.eps));
  ad::Var out = ad::add_row(ad::mul_row(normed, operands.gamma), operands.beta);
  return {out, mu_p.value(), var_p.value()};
}

MixedBnValue bn_forward_mix(const BnState& state, const Tensor& z) {
  ad::Tape tape;
  BnOperands ops{tape.constant(Tensor::scalar(phi_constrain(state.phi_raw))),
                 tape.constant(state.gamma), tape.constant(state.beta)};
  auto mixed = bn_forward_mix(state, tape.constant(z), ops);
  return {mixed.z_hat.value(), mixed.mu_p, mixed.var_p};
}

BnState secondary_correct(const BnState& state, const Tensor& mu_p, const Tensor& var_p,
                          double phi_new) {
  if (mu_p.shape() != state.mu_h.shape() || var_p.shape() != state.var_h.shape()) {
    throw ShapeError("present statistics do not match BN channel count");
  }
  for (double v : var_p.data()) {
    if (v < 0.0) throw ContractError("secondary_correct: present variance is negative");
  }
  BnState next = state;
  for (std::size_t j = 0; j < state.channels(); ++j) {
    next.mu_h[j] = (1.0 - phi_new) * state.mu_h[j] + phi_new * mu_p[j];
    next.var_h[j] = (1.0 - phi_new) * state.var_h[j] + phi_new * var_p[j];
  }
  return next;
}

BnState reset_phi(const BnState& state, double phi_init) {
  if (!std::isfinite(phi_init)) throw NumericError("phi_init must be finite");
  BnState next = state;
  next.phi_raw = phi_init;
  return next;
}

}  // namespace lbn
