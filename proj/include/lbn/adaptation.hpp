#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lbn/errors.hpp"
#include "lbn/model.hpp"

namespace lbn {

/// Raised when a sample produces a non-finite loss or gradient. The model is
/// left as it was; drivers skip the sample and carry on.
class AbortSampleError : public NumericError {
 public:
  using NumericError::NumericError;
};

struct AdaptConfig {
  double eta_stage1 = 1e-4;
  double eta_stage2 = 1e-3;
  double alpha = 0.1;
  double phi_init = 0.01;
  std::size_t n_max = 0;
  std::size_t m_max = 0;
  std::size_t batch_size = 1;
  std::uint64_t seed = 42;

  void validate() const;
};

/// Append-only list of stage-2 KL values.
class KlHistory {
 public:
  void push(double kl);
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

 private:
  std::vector<double> values_;
};

struct FilterDecision {
  bool adapt = false;
  double position_ratio = 0.0;
};

/// Appends kl, then p = #{history values strictly below kl} / new length.
/// The sample is used for adaptation iff p < alpha.
FilterDecision kl_filter_decision(KlHistory& history, double kl, double alpha);

/// One plain gradient-descent update of a raw mixture coefficient.
inline double descend(double phi_raw, double grad, double eta) { return phi_raw - eta * grad; }

struct AdaptStepResult {
  Model model;
  double gsem_loss = 0.0;
  std::vector<double> phi_grad;      // dL/dphi_raw per layer
  std::vector<BatchStats> present;   // per layer, from this forward pass
  PredictionBatch predictions;       // pre-update predictions
};

/// Forward with mixed statistics, GSEM loss, gradient step on every phi_raw,
/// then secondary correction of each layer's history with the new
/// constrained phi and that layer's present statistics. Throws
/// AbortSampleError on a non-finite loss or gradient.
AdaptStepResult adapt_step(const Model& model, const Tensor& x, double eta);

struct SampleRecord {
  std::size_t index = 0;
  int stage = 1;
  std::optional<double> kl;
  std::optional<double> position_ratio;
  bool accepted = false;
  bool aborted = false;
  std::vector<double> phi_raw;  // after processing this sample
  std::vector<double> phi;      // constrained
  double gsem_loss = 0.0;
  std::vector<std::size_t> predicted;  // online argmax per (sample, query)
};

struct AdaptReport {
  std::vector<SampleRecord> records;
  Model final_model;

  std::size_t stage2_count() const;
  std::size_t stage2_accepted() const;
  double accepted_fraction() const;  // over stage 2; 0 when stage 2 is empty
};

/// Two-stage adaptation over the first n_max + m_max stream batches. Stage 1
/// adapts unconditionally with eta_stage1; the end-of-stage-1 model is then
/// frozen as the comparison model and stage 2 adapts with eta_stage2 only on
/// batches whose KL position ratio is below alpha.
AdaptReport run_dual_stage(const Model& checkpoint, std::span<const Tensor> stream,
                           const AdaptConfig& config);

}  // namespace lbn
