#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lbn/adaptation.hpp"
#include "lbn/baselines.hpp"
#include "lbn/datagen.hpp"
#include "lbn/model.hpp"

namespace lbn {

// Seed tags; every seeded component draws from its own derived stream.
inline constexpr std::uint64_t kInitTag = 100;
inline constexpr std::uint64_t kTrainTag = 101;
inline constexpr std::uint64_t kOrderTag = 200;
inline constexpr std::uint64_t kCorruptionTag = 300;

/// Flat `key = value` text. '#' starts a comment; blank lines are skipped.
/// Duplicate keys and lines without '=' are ConfigErrors.
using ConfigMap = std::map<std::string, std::string>;
ConfigMap parse_config_text(std::string_view text);
ConfigMap load_config(const std::filesystem::path& path);  // MissingInputError if absent

enum class Method { LearnableBn, Frozen, AdaBn, Ema, Tent };

std::string_view to_string(Method method);
Method parse_method(std::string_view name);

struct StreamKey {
  CorruptionKind kind = CorruptionKind::None;
  Severity severity = Severity::Easy;

  friend bool operator==(const StreamKey&, const StreamKey&) = default;
};

struct RunConfig {
  std::uint64_t seed = 42;
  DatasetSpec data;
  ModelSpec model;
  TrainConfig train;
  AdaptConfig adapt;
  std::optional<std::size_t> n_max;  // default: first half of the stream
  std::optional<std::size_t> m_max;  // default: the rest
  double ema_momentum = 0.01;
  double tent_lr = 1e-3;
  MagnitudeTable magnitudes;
  std::size_t stream_length = 0;  // 0 = whole test split

  Method method = Method::LearnableBn;        // for `adapt`
  StreamKey stream{CorruptionKind::MeanShift, Severity::Hard};  // for `adapt` and `scan-stats`
  std::vector<Method> methods{Method::LearnableBn, Method::Frozen, Method::AdaBn, Method::Ema,
                              Method::Tent};
  std::vector<StreamKey> streams;  // for `compare`; none + every kind x severity by default

  std::filesystem::path out_dir = "out";
  std::filesystem::path checkpoint;  // default: <out>/model.lbn
  std::filesystem::path train_csv;   // optional; generated from `data` when empty
  std::filesystem::path test_csv;

  RunConfig();
  std::filesystem::path checkpoint_path() const;
  /// Propagates the seed into every seeded component; call after overrides.
  void finalize();
  void validate() const;
};

/// Unknown keys are ConfigErrors. Referenced input files must exist
/// (MissingInputError otherwise).
RunConfig run_config_from(const ConfigMap& map);

/// The corrupted test split in a seeded order, cut into batches. Every
/// method of a comparison consumes the same Stream.
struct Stream {
  StreamKey key;
  std::vector<Tensor> batches;
  std::vector<std::vector<std::size_t>> labels;  // per batch, sample-major
};

Stream make_stream(const RunConfig& config, const Dataset& test, StreamKey key);

struct MethodRun {
  Method method = Method::Frozen;
  std::vector<std::vector<std::size_t>> predicted;  // per batch
  std::vector<double> losses;                       // GSEM per batch
  std::optional<AdaptReport> report;                // LearnableBN only
  Model final_model;

  double accuracy(const Stream& stream) const;
  double mean_loss() const;
};

MethodRun run_method(const Model& checkpoint, const Stream& stream, Method method,
                     const RunConfig& config);

struct MetricsRow {
  std::string method;
  std::string corruption;
  std::string severity;
  double accuracy = 0.0;
  double mean_gsem_loss = 0.0;
  std::optional<double> accepted_fraction;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
};

MetricsRow metrics_row(const MethodRun& run, const Stream& stream);

/// method,corruption,severity,accuracy,mean_gsem_loss,accepted_fraction
std::string metrics_csv(const MetricsReport& report);
/// method,corruption,severity,accuracy,accepted_fraction
std::string compare_csv(const MetricsReport& report);

/// One JSON object per processed sample.
std::string adapt_report_jsonl(const AdaptReport& report);
/// JSON lines for a baseline run: index, gsem_loss, predicted.
std::string baseline_jsonl(const MethodRun& run);
/// step,layer,phi_raw,phi_constrained,gsem_loss,kl,accepted
std::string phi_trajectory_csv(const AdaptReport& report);
/// step,layer_index,phi_constrained. ContractError on an empty report.
std::string emit_phi_plot_data(const AdaptReport& report);

/// Per-sample statistic shift of the first BN layer against the stored
/// history (channel averages of mu_p - mu_h and var_p / var_h) together with
/// the frozen model's GSEM loss on that sample.
struct ScanRow {
  std::size_t index = 0;
  double mean_difference = 0.0;
  double variance_ratio = 0.0;
  double gsem_loss = 0.0;
};

std::vector<ScanRow> scan_stats(const Model& model, const Stream& stream);
std::string scan_stats_csv(const std::vector<ScanRow>& rows);

/// Spearman rank correlation with average ranks for ties. 0 when either
/// side is constant. ShapeError on a length mismatch.
double spearman(std::span<const double> a, std::span<const double> b);

/// Command bodies; each writes under config.out_dir and returns a one-line
/// summary for stdout.
std::string cmd_gen_data(const RunConfig& config);
std::string cmd_train(const RunConfig& config);
std::string cmd_adapt(const RunConfig& config);
std::string cmd_compare(const RunConfig& config);
std::string cmd_scan_stats(const RunConfig& config);

/// Source test split: read from config.test_csv if set, generated otherwise.
Dataset load_test_split(const RunConfig& config);
Model load_or_fail(const RunConfig& config);

/// Process exit status for an error escaping a command: 1 for configuration
/// problems, 2 for missing or unreadable input artifacts, 3 for numeric
/// failures.
int exit_code_for(const std::exception& e);

}  // namespace lbn
