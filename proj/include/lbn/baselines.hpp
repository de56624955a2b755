#pragma once

#include <span>
#include <string>
#include <vector>

#include "lbn/model.hpp"

namespace lbn {

struct BaselineKind {
  enum class Tag { Frozen, AdaBn, Ema, Tent };

  Tag tag = Tag::Frozen;
  double param = 0.0;  // momentum for Ema, learning rate for Tent

  static BaselineKind frozen() { return {Tag::Frozen, 0.0}; }
  static BaselineKind adabn() { return {Tag::AdaBn, 0.0}; }
  static BaselineKind ema(double momentum) { return {Tag::Ema, momentum}; }
  static BaselineKind tent(double lr) { return {Tag::Tent, lr}; }

  std::string name() const;
  void validate() const;
};

/// Present-statistics-only prediction. No state is touched.
PredictionBatch adabn_forward(const Model& model, const Tensor& x);

struct BaselineStep {
  Model model;
  PredictionBatch predictions;  // made before the update
  double loss = 0.0;            // GSEM of the predictions, for reporting
};

/// Predicts with the stored history, then folds the present statistics in:
/// mu_h <- (1 - m) mu_h + m mu_p, likewise for the variance.
BaselineStep ema_adapt_step(const Model& model, const Tensor& x, double momentum);

/// One gradient step of the entropy loss (EM only) w.r.t. every BN
/// gamma/beta, with present statistics in the forward pass. Throws AbortSampleError on a
/// non-finite gradient.
BaselineStep tent_adapt_step(const Model& model, const Tensor& x, double lr);

struct BaselineRun {
  std::vector<std::vector<std::size_t>> predicted;  // per stream batch
  std::vector<double> losses;
  Model final_model;
};

BaselineRun run_baseline(const Model& checkpoint, std::span<const Tensor> stream,
                         const BaselineKind& kind);

}  // namespace lbn
