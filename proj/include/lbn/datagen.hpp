#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "lbn/dataset.hpp"
#include "lbn/tensor.hpp"

namespace lbn {

/// Synthetic source domain. The input is split into Q equal blocks; block q
/// of a sample is drawn around the centroid of (q, label_q) with unit
/// Gaussian noise.
///
/// Samples are scenes: each draws a scene class, and every query takes that
/// label with probability label_coherence (otherwise a uniform one). Centroid
/// (q, c) blends a class direction shared by all queries (weight
/// centroid_sharing) with a query-specific one. Coherent scenes make one
/// sample's token statistics carry its content, as a single image's do.
struct DatasetSpec {
  std::size_t input_dim = 32;
  std::size_t classes = 5;
  std::size_t queries = 4;
  std::size_t train_samples = 2000;
  std::size_t test_samples = 1000;
  double separation = 4.0;  // centroid norm
  double label_coherence = 0.95;
  double centroid_sharing = 0.95;
  std::uint64_t seed = 42;

  std::size_t block_dim() const { return input_dim / queries; }
  void validate() const;
};

struct DatasetSplits {
  Dataset train;
  Dataset test;
};

DatasetSplits gen_dataset(const DatasetSpec& spec);

enum class CorruptionKind { None, GaussianNoise, MeanShift, Scale, SaturateClip };
enum class Severity { Easy, Mid, Hard };

inline constexpr std::array<CorruptionKind, 4> kAllCorruptions{
    CorruptionKind::GaussianNoise, CorruptionKind::MeanShift, CorruptionKind::Scale,
    CorruptionKind::SaturateClip};
inline constexpr std::array<Severity, 3> kAllSeverities{Severity::Easy, Severity::Mid, Severity::Hard};

std::string_view to_string(CorruptionKind kind);
std::string_view to_string(Severity severity);
CorruptionKind parse_corruption_kind(std::string_view name);  // ConfigError on unknown names
Severity parse_severity(std::string_view name);

/// Per-kind magnitudes indexed by severity; strictly increasing.
///   gaussian-noise: noise standard deviation
///   mean-shift:     constant added to every feature
///   scale:          attenuation, features are multiplied by 1/magnitude
///   saturate-clip:  inverse clip bound, features are clamped to +-1/magnitude
struct MagnitudeTable {
  std::array<double, 3> gaussian_noise{0.5, 1.0, 2.0};
  std::array<double, 3> mean_shift{0.5, 1.0, 2.0};
  std::array<double, 3> scale{2.0, 4.0, 20.0};
  std::array<double, 3> saturate_clip{1.0, 3.0, 8.0};

  double magnitude(CorruptionKind kind, Severity severity) const;
  std::array<double, 3>& row(CorruptionKind kind);
  const std::array<double, 3>& row(CorruptionKind kind) const;
  void validate() const;
};

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::None;
  Severity severity = Severity::Easy;
  MagnitudeTable table{};
  std::uint64_t seed = 0;  // noise stream
};

/// Applies the corruption elementwise to x (labels are never involved).
Tensor apply_corruption(const Tensor& x, const CorruptionSpec& spec);
Dataset apply_corruption(const Dataset& data, const CorruptionSpec& spec);

/// Diagonal Frechet distance between per-feature Gaussians fitted to a and b:
/// sum_j (mean_a - mean_b)^2 + (std_a - std_b)^2.
double frechet_gap(const Dataset& a, const Dataset& b);

/// Header: x0..x{d-1}, y0..y{Q-1}. Values use shortest round-trip formatting.
void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path, std::size_t classes);

}  // namespace lbn
