#include "lbn/model.hpp"

#include <algorithm>
#include <cmath>

#include "lbn/errors.hpp"
#include "lbn/rng.hpp"

namespace lbn {

namespace {

constexpr double kProbClamp = 1e-12;

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = rng.normal() * stddev;
  return t;
}

void sgd(Tensor& param, const Tensor& grad, double lr) {
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

}  // namespace

void ModelSpec::validate() const {
  if (input_dim == 0) throw ConfigError("model input_dim must be positive");
  if (hidden_dims.empty()) throw ConfigError("model needs at least one hidden layer");
  for (auto h : hidden_dims) {
    if (h == 0) throw ConfigError("hidden layer widths must be positive");
  }
  if (queries == 0) throw ConfigError("model needs at least one query");
  if (classes < 2) throw ConfigError("model needs at least two classes");
  if (input_dim % queries != 0) throw ConfigError("model input_dim must be a multiple of the query count");
}

void Model::validate() const {
  spec.validate();
  if (hidden.size() != spec.hidden_dims.size() || bn.size() != spec.hidden_dims.size()) {
    throw ShapeError("model layer count does not match its spec");
  }
  std::size_t in = spec.token_dim();
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    const auto out = spec.hidden_dims[l];
    if (hidden[l].weight.shape() != Shape{in, out} || hidden[l].bias.shape() != Shape{out}) {
      throw ShapeError("hidden layer " + std::to_string(l) + " has the wrong shape");
    }
    if (bn[l].channels() != out) {
      throw ShapeError("BN layer " + std::to_string(l) + " has the wrong channel count");
    }
    bn[l].validate();
    in = out;
  }
  if (head.weight.shape() != Shape{in, spec.logits()} || head.bias.shape() != Shape{spec.logits()}) {
    throw ShapeError("head has the wrong shape");
  }
}

Model init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Model m;
  m.spec = spec;
  std::size_t in = spec.token_dim();
  for (auto out : spec.hidden_dims) {
    // He initialization for the rectified layers.
    m.hidden.push_back({gaussian({in, out}, std::sqrt(2.0 / static_cast<double>(in)), rng),
                        Tensor::zeros({out})});
    m.bn.push_back(BnState::fresh(out));
    in = out;
  }
  m.head = {gaussian({in, spec.logits()}, std::sqrt(1.0 / static_cast<double>(in)), rng),
            Tensor::zeros({spec.logits()})};
  return m;
}

Tensor PredictionBatch::sample(std::size_t i) const {
  const auto c = classes();
  std::vector<double> block(probs.data().begin() + static_cast<std::ptrdiff_t>(i * queries * c),
                            probs.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * queries * c));
  return Tensor({queries, c}, std::move(block));
}

std::vector<std::size_t> PredictionBatch::argmax() const {
  std::vector<std::size_t> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

ForwardGraph build_forward(ad::Tape& tape, const Model& model, const Tensor& x, BnMode mode,
                           LeafSelection leaves) {
  if (x.rank() != 2 || x.cols() != model.spec.input_dim) {
    throw ShapeError("model input " + shape_str(x.shape()) + " does not have " +
                     std::to_string(model.spec.input_dim) + " features");
  }
  auto param = [&](const Tensor& t, bool is_leaf) { return is_leaf ? tape.leaf(t) : tape.constant(t); };

  ForwardGraph g;
  const auto batch = x.rows();
  const auto queries = model.spec.queries;
  ad::Var h = tape.constant(x.reshaped({batch * queries, model.spec.token_dim()}));
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    const auto& dense = model.hidden[l];
    const auto& state = model.bn[l];
    ad::Var w = param(dense.weight, leaves.weights);
    ad::Var b = param(dense.bias, leaves.weights);
    g.weights.push_back(w);
    g.biases.push_back(b);
    ad::Var z = ad::add_row(ad::matmul(h, w), b);

    ad::Var phi = param(Tensor::scalar(state.phi_raw), leaves.phi);
    g.phi_raw.push_back(phi);
    ad::Var weight;
    switch (mode) {
      case BnMode::TrainMix: weight = ad::leaky(phi, kPhiNegativeSlope); break;
      case BnMode::Inference: weight = tape.constant(Tensor::scalar(0.0)); break;
      case BnMode::AdaBn: weight = tape.constant(Tensor::scalar(1.0)); break;
    }
    ad::Var gamma = param(state.gamma, leaves.affine);
    ad::Var beta = param(state.beta, leaves.affine);
    g.gamma.push_back(gamma);
    g.beta.push_back(beta);

    auto mixed = bn_forward_mix(state, z, {weight, gamma, beta});
    g.present.push_back({std::move(mixed.mu_p), std::move(mixed.var_p)});
    g.bn_inputs.push_back(z.value());
    h = ad::relu(mixed.z_hat);
  }
  ad::Var wh = param(model.head.weight, leaves.weights);
  ad::Var bh = param(model.head.bias, leaves.weights);
  g.weights.push_back(wh);
  g.biases.push_back(bh);
  ad::Var logits = ad::add_row(ad::matmul(h, wh), bh);
  g.probs = ad::softmax_rows(ad::query_select(logits, queries, model.spec.classes));
  return g;
}

PredictionBatch forward(const Model& model, const Tensor& x, BnMode mode) {
  ad::Tape tape;
  auto g = build_forward(tape, model, x, mode);
  return {g.probs.value(), x.rows(), model.spec.queries};
}

Model train_source(const Model& init, const Dataset& data, const TrainConfig& config) {
  if (data.empty()) throw ContractError("train_source: empty dataset");
  if (data.input_dim != init.spec.input_dim || data.queries != init.spec.queries ||
      data.classes != init.spec.classes) {
    throw ShapeError("dataset layout does not match the model spec");
  }
  if (config.batch_size == 0) throw ConfigError("training batch size must be positive");
  Model model = init;
  Rng rng(config.seed);
  const double m = config.bn_momentum;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = rng.permutation(data.size());
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto stop = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, stop - start);

      ad::Tape tape;
      auto g = build_forward(tape, model, data.batch(idx), BnMode::AdaBn,
                             {.phi = false, .affine = true, .weights = true});
      const double inv = 1.0 / static_cast<double>(idx.size());
      ad::Var loss = ad::scale_const(ad::nll_sum(g.probs, data.batch_labels(idx), kProbClamp), inv);
      auto grads = tape.backward(loss);
      if (!grads.all_finite()) throw NumericError("non-finite gradient during source training");

      for (std::size_t l = 0; l < model.hidden.size(); ++l) {
        sgd(model.hidden[l].weight, grads.of(g.weights[l]), config.lr);
        sgd(model.hidden[l].bias, grads.of(g.biases[l]), config.lr);
        auto& bn = model.bn[l];
        sgd(bn.gamma, grads.of(g.gamma[l]), config.lr);
        sgd(bn.beta, grads.of(g.beta[l]), config.lr);
        for (std::size_t j = 0; j < bn.channels(); ++j) {
          bn.mu_h[j] = (1.0 - m) * bn.mu_h[j] + m * g.present[l].mean[j];
          bn.var_h[j] = (1.0 - m) * bn.var_h[j] + m * g.present[l].var[j];
        }
      }
      sgd(model.head.weight, grads.of(g.weights.back()), config.lr);
      sgd(model.head.bias, grads.of(g.biases.back()), config.lr);
    }
  }
  return model;
}

double accuracy(const PredictionBatch& pred, std::span<const std::size_t> labels) {
  const auto am = pred.argmax();
  if (am.size() != labels.size()) throw ShapeError("accuracy: label count mismatch");
  if (am.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < am.size(); ++i) hits += am[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(am.size());
}

}  // namespace lbn
