#include "lbn/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "lbn/learnable_bn.hpp"
#include "lbn/losses.hpp"

namespace lbn {

void AdaptConfig::validate() const {
  if (!(eta_stage1 >= 0.0) || !(eta_stage2 >= 0.0)) {
    throw ConfigError("adaptation learning rates must be non-negative");
  }
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("adapt.alpha must lie in (0, 1]");
  if (!std::isfinite(phi_init)) throw ConfigError("adapt.phi_init must be finite");
  if (batch_size == 0) throw ConfigError("adapt.batch_size must be positive");
}

void KlHistory::push(double kl) {
  if (!(kl >= 0.0)) throw ContractError("KL values must be non-negative");
  values_.push_back(kl);
}

FilterDecision kl_filter_decision(KlHistory& history, double kl, double alpha) {
  if (!(kl >= 0.0)) throw ContractError("kl_filter_decision: negative KL " + std::to_string(kl));
  history.push(kl);
  const auto& v = history.values();
  const auto below = std::count_if(v.begin(), v.end(), [kl](double h) { return h < kl; });
  const double p = static_cast<double>(below) / static_cast<double>(v.size());
  return {p < alpha, p};
}

AdaptStepResult adapt_step(const Model& model, const Tensor& x, double eta) {
  if (model.bn.empty()) throw ContractError("adapt_step needs at least one BN layer");
  ad::Tape tape;
  auto g = build_forward(tape, model, x, BnMode::TrainMix, {.phi = true});
  auto loss = gsem_loss(g.probs);
  if (!std::isfinite(loss.value)) throw AbortSampleError("non-finite GSEM loss");
  auto grads = tape.backward(loss.node);

  AdaptStepResult out{model, loss.value, {}, g.present, {g.probs.value(), x.rows(), model.spec.queries}};
  for (std::size_t l = 0; l < model.bn.size(); ++l) {
    const double grad = grads.of(g.phi_raw[l]).item();
    if (!std::isfinite(grad)) {
      throw AbortSampleError("non-finite phi gradient in BN layer " + std::to_string(l));
    }
    out.phi_grad.push_back(grad);
  }
  for (std::size_t l = 0; l < model.bn.size(); ++l) {
    auto& bn = out.model.bn[l];
    bn.phi_raw = descend(bn.phi_raw, out.phi_grad[l], eta);
    bn = secondary_correct(bn, g.present[l].mean, g.present[l].var, phi_constrain(bn.phi_raw));
  }
  return out;
}

std::size_t AdaptReport::stage2_count() const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const auto& r) { return r.stage == 2; }));
}

std::size_t AdaptReport::stage2_accepted() const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) {
    return r.stage == 2 && r.accepted;
  }));
}

double AdaptReport::accepted_fraction() const {
  const auto n = stage2_count();
  return n ? static_cast<double>(stage2_accepted()) / static_cast<double>(n) : 0.0;
}

namespace {

void snapshot_phi(const Model& model, SampleRecord& rec) {
  for (const auto& bn : model.bn) {
    rec.phi_raw.push_back(bn.phi_raw);
    rec.phi.push_back(phi_constrain(bn.phi_raw));
  }
}

}  // namespace

AdaptReport run_dual_stage(const Model& checkpoint, std::span<const Tensor> stream,
                           const AdaptConfig& config) {
  config.validate();
  if (stream.size() < config.n_max + config.m_max) {
    throw ContractError("stream has " + std::to_string(stream.size()) + " batches, need " +
                        std::to_string(config.n_max + config.m_max));
  }
  Model live = checkpoint;
  for (auto& bn : live.bn) bn = reset_phi(bn, config.phi_init);

  AdaptReport report;
  report.records.reserve(config.n_max + config.m_max);

  for (std::size_t n = 0; n < config.n_max; ++n) {
    SampleRecord rec;
    rec.index = n;
    rec.stage = 1;
    try {
      auto step = adapt_step(live, stream[n], config.eta_stage1);
      rec.gsem_loss = step.gsem_loss;
      rec.predicted = step.predictions.argmax();
      rec.accepted = true;
      live = std::move(step.model);
    } catch (const AbortSampleError& e) {
      std::clog << "adapt: sample " << n << " aborted: " << e.what() << '\n';
      rec.aborted = true;
      rec.predicted = forward(live, stream[n], BnMode::TrainMix).argmax();
    }
    snapshot_phi(live, rec);
    report.records.push_back(std::move(rec));
  }

  const Model reference = live;
  KlHistory history;
  for (std::size_t m = 0; m < config.m_max; ++m) {
    const auto idx = config.n_max + m;
    const Tensor& x = stream[idx];
    SampleRecord rec;
    rec.index = idx;
    rec.stage = 2;
    const auto live_pred = forward(live, x, BnMode::TrainMix);
    const auto ref_pred = forward(reference, x, BnMode::TrainMix);
    // Clamped rows can push an exact-zero divergence a hair below zero.
    const double kl = std::max(0.0, kl_divergence(live_pred.probs, ref_pred.probs));
    const auto decision = kl_filter_decision(history, kl, config.alpha);
    rec.kl = kl;
    rec.position_ratio = decision.position_ratio;
    rec.predicted = live_pred.argmax();
    rec.gsem_loss = gsem_loss(live_pred.probs);
    if (decision.adapt) {
      try {
        auto step = adapt_step(live, x, config.eta_stage2);
        rec.accepted = true;
        live = std::move(step.model);
      } catch (const AbortSampleError& e) {
        std::clog << "adapt: sample " << idx << " aborted: " << e.what() << '\n';
        rec.aborted = true;
      }
    }
    snapshot_phi(live, rec);
    report.records.push_back(std::move(rec));
  }
  report.final_model = std::move(live);
  return report;
}

}  // namespace lbn
