#pragma once

#include "lbn/autodiff.hpp"
#include "lbn/tensor.hpp"

namespace lbn {

// The one numeric guard used by every log/ratio on probabilities.
inline constexpr double kProbClamp = 1e-12;

struct LossValue {
  double value = 0.0;
  ad::Var node;
};

/// Throws NumericError unless every row of p (rows = queries) is a
/// probability vector summing to 1 within 1e-6.
void check_probability_rows(const Tensor& p);

/// Entropy summed over queries and classes: sum_i sum_j -p_ij ln p_ij.
LossValue em_loss(const ad::Var& p);
/// Sum over queries of (max_j p_ij - min_j p_ij).
LossValue gs_loss(const ad::Var& p);
/// em_loss + gs_loss on a single graph.
LossValue gsem_loss(const ad::Var& p);

double em_loss(const Tensor& p);
double gs_loss(const Tensor& p);
double gsem_loss(const Tensor& p);

/// KL(p || q) per row, averaged over rows. Both sides are clamped at
/// kProbClamp before the log.
double kl_divergence(const Tensor& p, const Tensor& q);

}  // namespace lbn
