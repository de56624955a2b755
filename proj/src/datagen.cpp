#include "lbn/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lbn/errors.hpp"
#include "lbn/rng.hpp"
#include "lbn/text.hpp"

namespace lbn {

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw EmptyBatchError("cannot build an empty batch");
  std::vector<double> out;
  out.reserve(indices.size() * input_dim);
  for (auto i : indices) {
    const auto s = sample(i);
    out.insert(out.end(), s.begin(), s.end());
  }
  return Tensor({indices.size(), input_dim}, std::move(out));
}

std::vector<std::size_t> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size() * queries);
  for (auto i : indices) {
    const auto l = sample_labels(i);
    out.insert(out.end(), l.begin(), l.end());
  }
  return out;
}

void DatasetSpec::validate() const {
  if (queries == 0 || input_dim == 0) throw ConfigError("dataset dimensions must be positive");
  if (input_dim % queries != 0) {
    throw ConfigError("dataset input_dim must be a multiple of the query count");
  }
  if (classes < 2) throw ConfigError("dataset needs at least two classes");
  if (!(separation > 0.0)) throw ConfigError("dataset separation must be positive");
  if (!(label_coherence >= 0.0 && label_coherence <= 1.0)) {
    throw ConfigError("dataset label_coherence must lie in [0, 1]");
  }
  if (!(centroid_sharing >= 0.0 && centroid_sharing <= 1.0)) {
    throw ConfigError("dataset centroid_sharing must lie in [0, 1]");
  }
}

namespace {

Dataset sample_split(const DatasetSpec& spec, const std::vector<double>& centroids,
                     std::size_t n, Rng& rng) {
  const auto block = spec.block_dim();
  Dataset d{spec.input_dim, spec.queries, spec.classes, {}, {}};
  d.features.reserve(n * spec.input_dim);
  d.labels.reserve(n * spec.queries);
  for (std::size_t i = 0; i < n; ++i) {
    const auto scene = static_cast<std::size_t>(rng.below(spec.classes));
    for (std::size_t q = 0; q < spec.queries; ++q) {
      const bool coherent = rng.uniform() < spec.label_coherence;
      const auto other = static_cast<std::size_t>(rng.below(spec.classes));
      const auto label = coherent ? scene : other;
      d.labels.push_back(label);
      const double* c = centroids.data() + (q * spec.classes + label) * block;
      for (std::size_t k = 0; k < block; ++k) d.features.push_back(c[k] + rng.normal());
    }
  }
  return d;
}

}  // namespace

DatasetSplits gen_dataset(const DatasetSpec& spec) {
  spec.validate();
  const auto block = spec.block_dim();
  Rng centroid_rng(derive_seed(spec.seed, 1));
  std::vector<double> shared(spec.classes * block);
  for (auto& v : shared) v = centroid_rng.normal();
  const double a = std::sqrt(spec.centroid_sharing);
  const double b = std::sqrt(1.0 - spec.centroid_sharing);
  std::vector<double> centroids(spec.queries * spec.classes * block);
  for (std::size_t k = 0; k < spec.queries * spec.classes; ++k) {
    double norm = 0.0;
    double* c = centroids.data() + k * block;
    const double* u = shared.data() + (k % spec.classes) * block;
    for (std::size_t j = 0; j < block; ++j) {
      c[j] = a * u[j] + b * centroid_rng.normal();
      norm += c[j] * c[j];
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < block; ++j) c[j] *= spec.separation / norm;
  }
  Rng train_rng(derive_seed(spec.seed, 2));
  Rng test_rng(derive_seed(spec.seed, 3));
  return {sample_split(spec, centroids, spec.train_samples, train_rng),
          sample_split(spec, centroids, spec.test_samples, test_rng)};
}

std::string_view to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::None: return "none";
    case CorruptionKind::GaussianNoise: return "gaussian-noise";
    case CorruptionKind::MeanShift: return "mean-shift";
    case CorruptionKind::Scale: return "scale";
    case CorruptionKind::SaturateClip: return "saturate-clip";
  }
  return "?";
}

std::string_view to_string(Severity severity) {
  switch (severity) {
    case Severity::Easy: return "easy";
    case Severity::Mid: return "mid";
    case Severity::Hard: return "hard";
  }
  return "?";
}

CorruptionKind parse_corruption_kind(std::string_view name) {
  name = text::trim(name);
  for (auto k : {CorruptionKind::None, CorruptionKind::GaussianNoise, CorruptionKind::MeanShift,
                 CorruptionKind::Scale, CorruptionKind::SaturateClip}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown corruption kind '" + std::string(name) + "'");
}

Severity parse_severity(std::string_view name) {
  name = text::trim(name);
  for (auto s : kAllSeverities) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown severity '" + std::string(name) + "'");
}

std::array<double, 3>& MagnitudeTable::row(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::GaussianNoise: return gaussian_noise;
    case CorruptionKind::MeanShift: return mean_shift;
    case CorruptionKind::Scale: return scale;
    case CorruptionKind::SaturateClip: return saturate_clip;
    case CorruptionKind::None: break;
  }
  throw ConfigError("corruption kind 'none' has no magnitude table");
}

const std::array<double, 3>& MagnitudeTable::row(CorruptionKind kind) const {
  return const_cast<MagnitudeTable&>(*this).row(kind);
}

double MagnitudeTable::magnitude(CorruptionKind kind, Severity severity) const {
  if (kind == CorruptionKind::None) return 0.0;
  return row(kind)[static_cast<std::size_t>(severity)];
}

void MagnitudeTable::validate() const {
  for (auto kind : kAllCorruptions) {
    const auto& r = row(kind);
    if (!(r[0] < r[1] && r[1] < r[2])) {
      throw ConfigError("magnitudes for " + std::string(to_string(kind)) +
                        " must strictly increase easy < mid < hard");
    }
    if (kind != CorruptionKind::MeanShift && !(r[0] >= 0.0)) {
      throw ConfigError("magnitudes for " + std::string(to_string(kind)) + " must be non-negative");
    }
  }
  if (!(scale[0] > 0.0)) throw ConfigError("scale magnitudes must be positive");
  if (!(saturate_clip[0] > 0.0)) throw ConfigError("saturate-clip magnitudes must be positive");
}

Tensor apply_corruption(const Tensor& x, const CorruptionSpec& spec) {
  const double mag = spec.table.magnitude(spec.kind, spec.severity);
  Tensor out = x;
  switch (spec.kind) {
    case CorruptionKind::None: break;
    case CorruptionKind::GaussianNoise: {
      Rng rng(spec.seed);
      for (auto& v : out.data()) v += mag * rng.normal();
      break;
    }
    case CorruptionKind::MeanShift:
      for (auto& v : out.data()) v += mag;
      break;
    case CorruptionKind::Scale:
      for (auto& v : out.data()) v /= mag;
      break;
    case CorruptionKind::SaturateClip: {
      const double bound = 1.0 / mag;
      for (auto& v : out.data()) v = std::clamp(v, -bound, bound);
      break;
    }
  }
  return out;
}

Dataset apply_corruption(const Dataset& data, const CorruptionSpec& spec) {
  Dataset out = data;
  if (data.empty()) return out;
  Tensor x({data.size(), data.input_dim}, data.features);
  out.features = apply_corruption(x, spec).values();
  return out;
}

double frechet_gap(const Dataset& a, const Dataset& b) {
  if (a.input_dim != b.input_dim) throw ShapeError("frechet_gap: feature dimensions differ");
  if (a.empty() || b.empty()) throw EmptyBatchError("frechet_gap on an empty dataset");
  const auto sa = batch_stats(Tensor({a.size(), a.input_dim}, a.features));
  const auto sb = batch_stats(Tensor({b.size(), b.input_dim}, b.features));
  double gap = 0.0;
  for (std::size_t j = 0; j < a.input_dim; ++j) {
    const double dm = sa.mean[j] - sb.mean[j];
    const double ds = std::sqrt(sa.var[j]) - std::sqrt(sb.var[j]);
    gap += dm * dm + ds * ds;
  }
  return gap;
}

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError("cannot write " + path.string());
  for (std::size_t j = 0; j < data.input_dim; ++j) out << (j ? "," : "") << 'x' << j;
  for (std::size_t q = 0; q < data.queries; ++q) out << ",y" << q;
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto s = data.sample(i);
    for (std::size_t j = 0; j < s.size(); ++j) out << (j ? "," : "") << text::fmt(s[j]);
    for (auto l : data.sample_labels(i)) out << ',' << l;
    out << '\n';
  }
}

Dataset read_dataset_csv(const std::filesystem::path& path, std::size_t classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("dataset file not found: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset file is empty: " + path.string());
  Dataset d;
  d.classes = classes;
  for (auto col : text::split(text::trim(line), ',')) {
    col = text::trim(col);
    if (col.size() < 2) throw ConfigError("bad dataset header column '" + std::string(col) + "'");
    if (col[0] == 'x') {
      if (d.queries) throw ConfigError("feature columns must precede label columns");
      ++d.input_dim;
    } else if (col[0] == 'y') {
      ++d.queries;
    } else {
      throw ConfigError("bad dataset header column '" + std::string(col) + "'");
    }
  }
  if (!d.input_dim || !d.queries) throw ConfigError("dataset header needs x and y columns");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(text::trim(line), ',');
    if (cells.size() != d.input_dim + d.queries) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": wrong column count");
    }
    for (std::size_t j = 0; j < d.input_dim; ++j) d.features.push_back(text::parse_double(cells[j], "feature"));
    for (std::size_t q = 0; q < d.queries; ++q) {
      const auto l = text::parse_int(cells[d.input_dim + q], "label");
      if (l < 0 || static_cast<std::size_t>(l) >= classes) {
        throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": label out of range");
      }
      d.labels.push_back(static_cast<std::size_t>(l));
    }
  }
  return d;
}

}  // namespace lbn
