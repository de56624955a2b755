#include "lbn/baselines.hpp"

#include <cmath>
#include <iostream>

#include "lbn/adaptation.hpp"
#include "lbn/errors.hpp"
#include "lbn/losses.hpp"
#include "lbn/text.hpp"

namespace lbn {

std::string BaselineKind::name() const {
  switch (tag) {
    case Tag::Frozen: return "frozen";
    case Tag::AdaBn: return "adabn";
    case Tag::Ema: return "ema";
    case Tag::Tent: return "tent";
  }
  return "?";
}

void BaselineKind::validate() const {
  if (tag == Tag::Ema && !(param >= 0.0 && param <= 1.0)) {
    throw ConfigError("EMA momentum must lie in [0, 1], got " + text::fmt(param));
  }
  if (tag == Tag::Tent && !(param >= 0.0)) {
    throw ConfigError("TENT learning rate must be non-negative, got " + text::fmt(param));
  }
}

PredictionBatch adabn_forward(const Model& model, const Tensor& x) {
  return forward(model, x, BnMode::AdaBn);
}

BaselineStep ema_adapt_step(const Model& model, const Tensor& x, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ContractError("EMA momentum must lie in [0, 1]");
  ad::Tape tape;
  auto g = build_forward(tape, model, x, BnMode::Inference);
  BaselineStep out{model, {g.probs.value(), x.rows(), model.spec.queries}, 0.0};
  out.loss = gsem_loss(out.predictions.probs);
  for (std::size_t l = 0; l < model.bn.size(); ++l) {
    auto& bn = out.model.bn[l];
    for (std::size_t j = 0; j < bn.channels(); ++j) {
      bn.mu_h[j] = (1.0 - momentum) * bn.mu_h[j] + momentum * g.present[l].mean[j];
      bn.var_h[j] = (1.0 - momentum) * bn.var_h[j] + momentum * g.present[l].var[j];
    }
  }
  return out;
}

BaselineStep tent_adapt_step(const Model& model, const Tensor& x, double lr) {
  ad::Tape tape;
  auto g = build_forward(tape, model, x, BnMode::AdaBn, {.affine = true});
  auto loss = em_loss(g.probs);
  auto grads = tape.backward(loss.node);
  if (!std::isfinite(loss.value) || !grads.all_finite()) {
    throw AbortSampleError("non-finite TENT gradient");
  }
  BaselineStep out{model, {g.probs.value(), x.rows(), model.spec.queries}, 0.0};
  out.loss = gsem_loss(out.predictions.probs);
  for (std::size_t l = 0; l < model.bn.size(); ++l) {
    auto& bn = out.model.bn[l];
    const auto& dg = grads.of(g.gamma[l]);
    const auto& db = grads.of(g.beta[l]);
    for (std::size_t j = 0; j < bn.channels(); ++j) {
      bn.gamma[j] -= lr * dg[j];
      bn.beta[j] -= lr * db[j];
    }
  }
  return out;
}

BaselineRun run_baseline(const Model& checkpoint, std::span<const Tensor> stream,
                         const BaselineKind& kind) {
  kind.validate();
  BaselineRun run;
  Model model = checkpoint;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const Tensor& x = stream[i];
    switch (kind.tag) {
      case BaselineKind::Tag::Frozen:
      case BaselineKind::Tag::AdaBn: {
        auto pred = forward(model, x, kind.tag == BaselineKind::Tag::Frozen ? BnMode::Inference : BnMode::AdaBn);
        run.losses.push_back(gsem_loss(pred.probs));
        run.predicted.push_back(pred.argmax());
        break;
      }
      case BaselineKind::Tag::Ema: {
        auto step = ema_adapt_step(model, x, kind.param);
        run.losses.push_back(step.loss);
        run.predicted.push_back(step.predictions.argmax());
        model = std::move(step.model);
        break;
      }
      case BaselineKind::Tag::Tent: {
        try {
          auto step = tent_adapt_step(model, x, kind.param);
          run.losses.push_back(step.loss);
          run.predicted.push_back(step.predictions.argmax());
          model = std::move(step.model);
        } catch (const AbortSampleError& e) {
          std::clog << "tent: sample " << i << " aborted: " << e.what() << '\n';
          auto pred = adabn_forward(model, x);
          run.losses.push_back(gsem_loss(pred.probs));
          run.predicted.push_back(pred.argmax());
        }
        break;
      }
    }
  }
  run.final_model = std::move(model);
  return run;
}

}  // namespace lbn
