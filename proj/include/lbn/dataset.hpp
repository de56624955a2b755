#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lbn/tensor.hpp"

namespace lbn {

/// Labeled samples stored row-major. Each sample carries one label per query.
/// May be empty, which is why this is not a Tensor.
struct Dataset {
  std::size_t input_dim = 0;
  std::size_t queries = 0;
  std::size_t classes = 0;
  std::vector<double> features;      // size() * input_dim
  std::vector<std::size_t> labels;   // size() * queries

  std::size_t size() const { return input_dim ? features.size() / input_dim : 0; }
  bool empty() const { return size() == 0; }

  std::span<const double> sample(std::size_t i) const {
    return std::span<const double>(features).subspan(i * input_dim, input_dim);
  }
  std::span<const std::size_t> sample_labels(std::size_t i) const {
    return std::span<const std::size_t>(labels).subspan(i * queries, queries);
  }

  /// Stacks the selected samples into a [k x input_dim] tensor.
  Tensor batch(std::span<const std::size_t> indices) const;
  /// Labels of the selected samples, sample-major then query.
  std::vector<std::size_t> batch_labels(std::span<const std::size_t> indices) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

}  // namespace lbn
