#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lbn/autodiff.hpp"
#include "lbn/dataset.hpp"
#include "lbn/learnable_bn.hpp"
#include "lbn/tensor.hpp"

namespace lbn {

/// Multi-query classifier. An input row of input_dim features is read as Q
/// query tokens of input_dim / Q features each. A dense backbone
/// (Linear -> BN -> ReLU per hidden layer) is shared by all tokens, so BN
/// statistics pool over batch x Q token rows, the way convolutional BN pools
/// over spatial positions. Query q's final hidden vector feeds its own linear
/// head with C classes.
struct ModelSpec {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden_dims{64, 32};
  std::size_t queries = 4;
  std::size_t classes = 5;

  std::size_t logits() const { return queries * classes; }
  std::size_t token_dim() const { return input_dim / queries; }
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct Dense {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  friend bool operator==(const Dense&, const Dense&) = default;
};

/// A full set of parameters and BN states. Also the unit that is persisted as
/// a checkpoint. Hidden layer 0 maps token_dim features. The head's weight is
/// [last_hidden x Q*C]; column block q is query q's head.
struct Model {
  ModelSpec spec;
  std::vector<Dense> hidden;
  std::vector<BnState> bn;
  Dense head;

  void validate() const;

  friend bool operator==(const Model&, const Model&) = default;
};

Model init_model(const ModelSpec& spec, std::uint64_t seed);

enum class BnMode {
  TrainMix,   // mixed statistics with each layer's constrained phi
  Inference,  // history statistics only
  AdaBn,      // present statistics only
};

/// Class probabilities for a batch: [batch*Q x C], sample-major.
struct PredictionBatch {
  Tensor probs;
  std::size_t batch = 0;
  std::size_t queries = 0;

  std::size_t classes() const { return probs.cols(); }
  /// Q x C block of sample i.
  Tensor sample(std::size_t i) const;
  /// argmax per row, first index on ties.
  std::vector<std::size_t> argmax() const;
};

/// Which parameters enter the tape as differentiable leaves.
struct LeafSelection {
  bool phi = false;
  bool affine = false;   // BN gamma/beta
  bool weights = false;  // dense weights and biases
};

struct ForwardGraph {
  ad::Var probs;
  std::vector<ad::Var> phi_raw;  // per BN layer
  std::vector<ad::Var> gamma;
  std::vector<ad::Var> beta;
  std::vector<ad::Var> weights;  // hidden layers then head
  std::vector<ad::Var> biases;
  std::vector<BatchStats> present;  // per BN layer, from this forward pass
  std::vector<Tensor> bn_inputs;    // per BN layer pre-normalization activations
};

ForwardGraph build_forward(ad::Tape& tape, const Model& model, const Tensor& x, BnMode mode,
                           LeafSelection leaves = {});

PredictionBatch forward(const Model& model, const Tensor& x, BnMode mode);

struct TrainConfig {
  std::size_t epochs = 30;
  double lr = 0.05;
  std::size_t batch_size = 32;
  double bn_momentum = 0.1;
  std::uint64_t seed = 42;
};

/// Minibatch SGD on cross-entropy summed over queries. BN uses batch
/// statistics and folds them into the history with an EMA. Returns a new
/// model; `init` is not touched.
Model train_source(const Model& init, const Dataset& data, const TrainConfig& config);

/// Fraction of (sample, query) pairs whose argmax matches the label.
double accuracy(const PredictionBatch& pred, std::span<const std::size_t> labels);

}  // namespace lbn
