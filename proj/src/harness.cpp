#include "lbn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "lbn/checkpoint.hpp"
#include "lbn/errors.hpp"
#include "lbn/learnable_bn.hpp"
#include "lbn/losses.hpp"
#include "lbn/rng.hpp"
#include "lbn/text.hpp"

namespace lbn {

namespace fs = std::filesystem;

ConfigMap parse_config_text(std::string_view text) {
  ConfigMap out;
  std::size_t line_no = 0;
  for (auto raw : text::split(text, '\n')) {
    ++line_no;
    auto line = raw.substr(0, raw.find('#'));
    line = text::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected `key = value`");
    }
    const std::string key(text::trim(line.substr(0, eq)));
    const std::string value(text::trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

ConfigMap load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string_view to_string(Method method) {
  switch (method) {
    case Method::LearnableBn: return "learnable-bn";
    case Method::Frozen: return "frozen";
    case Method::AdaBn: return "adabn";
    case Method::Ema: return "ema";
    case Method::Tent: return "tent";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  name = text::trim(name);
  for (auto m : {Method::LearnableBn, Method::Frozen, Method::AdaBn, Method::Ema, Method::Tent}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

RunConfig::RunConfig() {
  streams.push_back({CorruptionKind::None, Severity::Easy});
  for (auto kind : kAllCorruptions) {
    for (auto sev : kAllSeverities) streams.push_back({kind, sev});
  }
}

fs::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? out_dir / "model.lbn" : checkpoint;
}

void RunConfig::finalize() {
  data.seed = seed;
  train.seed = derive_seed(seed, kTrainTag);
  adapt.seed = seed;
  model.input_dim = data.input_dim;
  model.queries = data.queries;
  model.classes = data.classes;
}

void RunConfig::validate() const {
  data.validate();
  model.validate();
  adapt.validate();
  magnitudes.validate();
  BaselineKind::ema(ema_momentum).validate();
  BaselineKind::tent(tent_lr).validate();
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(train.lr >= 0.0)) throw ConfigError("train.lr must be non-negative");
  if (!(train.bn_momentum >= 0.0 && train.bn_momentum <= 1.0)) {
    throw ConfigError("train.bn_momentum must lie in [0, 1]");
  }
  if (methods.empty()) throw ConfigError("compare.methods must name at least one method");
}

namespace {

std::size_t parse_count(std::string_view v, std::string_view key) {
  const auto n = text::parse_int(v, key);
  if (n < 0) throw ConfigError(std::string(key) + " must be non-negative");
  return static_cast<std::size_t>(n);
}

std::array<double, 3> parse_triple(std::string_view v, std::string_view key) {
  const auto parts = text::split(v, ',');
  if (parts.size() != 3) throw ConfigError(std::string(key) + " needs three comma-separated values");
  return {text::parse_double(parts[0], key), text::parse_double(parts[1], key),
          text::parse_double(parts[2], key)};
}

template <class T, class F>
std::vector<T> parse_list(std::string_view v, F&& parse_one) {
  std::vector<T> out;
  for (auto part : text::split(v, ',')) {
    part = text::trim(part);
    if (!part.empty()) out.push_back(parse_one(part));
  }
  return out;
}

fs::path existing_file(std::string_view v, std::string_view key) {
  fs::path p{std::string(v)};
  if (!fs::exists(p)) {
    throw MissingInputError(std::string(key) + ": no such file " + p.string());
  }
  return p;
}

using Setter = std::function<void(RunConfig&, std::string_view, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> t;
    auto count = [](std::size_t RunConfig::*field) {
      return [field](RunConfig& c, std::string_view v, std::string_view k) { c.*field = parse_count(v, k); };
    };
    t["seed"] = [](RunConfig& c, std::string_view v, std::string_view k) {
      const auto s = text::parse_int(v, k);
      if (s < 0) throw ConfigError("seed must be non-negative");
      c.seed = static_cast<std::uint64_t>(s);
    };
    t["data.input_dim"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.data.input_dim = parse_count(v, k); };
    t["data.classes"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.data.classes = parse_count(v, k); };
    t["data.queries"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.data.queries = parse_count(v, k); };
    t["data.train_samples"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.data.train_samples = parse_count(v, k); };
    t["data.test_samples"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.data.test_samples = parse_count(v, k); };
    t["data.separation"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.data.separation = text::parse_double(v, k); };
    t["data.label_coherence"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.data.label_coherence = text::parse_double(v, k); };
    t["data.centroid_sharing"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.data.centroid_sharing = text::parse_double(v, k); };
    t["data.train_csv"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.train_csv = existing_file(v, k); };
    t["data.test_csv"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.test_csv = existing_file(v, k); };
    t["model.hidden_dims"] = [](RunConfig& c, std::string_view v, std::string_view k) {
      c.model.hidden_dims = parse_list<std::size_t>(v, [k](std::string_view p) { return parse_count(p, k); });
    };
    t["train.epochs"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.train.epochs = parse_count(v, k); };
    t["train.lr"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.train.lr = text::parse_double(v, k); };
    t["train.batch_size"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.train.batch_size = parse_count(v, k); };
    t["train.bn_momentum"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.train.bn_momentum = text::parse_double(v, k); };
    t["adapt.method"] = [](RunConfig& c, std::string_view v, std::string_view) { c.method = parse_method(v); };
    t["adapt.corruption"] = [](RunConfig& c, std::string_view v, std::string_view) { c.stream.kind = parse_corruption_kind(v); };
    t["adapt.severity"] = [](RunConfig& c, std::string_view v, std::string_view) { c.stream.severity = parse_severity(v); };
    t["adapt.eta_stage1"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.adapt.eta_stage1 = text::parse_double(v, k); };
    t["adapt.eta_stage2"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.adapt.eta_stage2 = text::parse_double(v, k); };
    t["adapt.alpha"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.adapt.alpha = text::parse_double(v, k); };
    t["adapt.phi_init"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.adapt.phi_init = text::parse_double(v, k); };
    t["adapt.n_max"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.n_max = parse_count(v, k); };
    t["adapt.m_max"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.m_max = parse_count(v, k); };
    t["adapt.batch_size"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.adapt.batch_size = parse_count(v, k); };
    t["baselines.ema_momentum"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.ema_momentum = text::parse_double(v, k); };
    t["baselines.tent_lr"] = [](RunConfig& c, std::string_view v, std::string_view k) { c.tent_lr = text::parse_double(v, k); };
    for (auto kind : kAllCorruptions) {
      std::string key = "corruption." + std::string(to_string(kind));
      std::replace(key.begin(), key.end(), '-', '_');
      t[key] = [kind](RunConfig& c, std::string_view v, std::string_view k) { c.magnitudes.row(kind) = parse_triple(v, k); };
    }
    t["stream.length"] = count(&RunConfig::stream_length);
    t["compare.methods"] = [](RunConfig& c, std::string_view v, std::string_view) {
      c.methods = parse_list<Method>(v, [](std::string_view p) { return parse_method(p); });
    };
    t["output.dir"] = [](RunConfig& c, std::string_view v, std::string_view) { c.out_dir = std::string(v); };
    t["paths.checkpoint"] = [](RunConfig& c, std::string_view v, std::string_view) { c.checkpoint = std::string(v); };
    return t;
  }();
  return table;
}

}  // namespace

RunConfig run_config_from(const ConfigMap& map) {
  RunConfig cfg;
  const auto& table = setters();
  // compare.corruptions x compare.severities is applied after the loop so
  // the two keys can appear in either order.
  std::vector<CorruptionKind> kinds;
  std::vector<Severity> severities(kAllSeverities.begin(), kAllSeverities.end());
  bool streams_set = false;
  for (const auto& [key, value] : map) {
    if (key == "compare.corruptions") {
      kinds = parse_list<CorruptionKind>(value, [](std::string_view p) { return parse_corruption_kind(p); });
      streams_set = true;
      continue;
    }
    if (key == "compare.severities") {
      severities = parse_list<Severity>(value, [](std::string_view p) { return parse_severity(p); });
      if (severities.empty()) throw ConfigError("compare.severities must not be empty");
      continue;
    }
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(cfg, value, key);
  }
  if (streams_set || map.contains("compare.severities")) {
    if (!streams_set) kinds.assign(kAllCorruptions.begin(), kAllCorruptions.end());
    cfg.streams.clear();
    for (auto kind : kinds) {
      if (kind == CorruptionKind::None) {
        cfg.streams.push_back({kind, severities.front()});
        continue;
      }
      for (auto sev : severities) cfg.streams.push_back({kind, sev});
    }
  }
  cfg.finalize();
  cfg.validate();
  return cfg;
}

Stream make_stream(const RunConfig& config, const Dataset& test, StreamKey key) {
  if (test.empty()) throw EmptyBatchError("cannot build a stream from an empty test split");
  CorruptionSpec cs;
  cs.kind = key.kind;
  cs.severity = key.severity;
  cs.table = config.magnitudes;
  cs.seed = derive_seed(config.seed, kCorruptionTag + static_cast<std::uint64_t>(key.kind) * 3 +
                                         static_cast<std::uint64_t>(key.severity));
  const Dataset corrupted = apply_corruption(test, cs);

  Rng rng(derive_seed(config.seed, kOrderTag));
  auto order = rng.permutation(corrupted.size());
  if (config.stream_length > 0 && config.stream_length < order.size()) {
    order.resize(config.stream_length);
  }
  const auto bs = config.adapt.batch_size;
  Stream s;
  s.key = key;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
    s.batches.push_back(corrupted.batch(idx));
    s.labels.push_back(corrupted.batch_labels(idx));
  }
  return s;
}

double MethodRun::accuracy(const Stream& stream) const {
  if (predicted.size() != stream.labels.size()) throw ShapeError("run and stream lengths differ");
  std::size_t hits = 0, total = 0;
  for (std::size_t b = 0; b < predicted.size(); ++b) {
    const auto& p = predicted[b];
    const auto& l = stream.labels[b];
    if (p.size() != l.size()) throw ShapeError("prediction and label counts differ");
    for (std::size_t i = 0; i < p.size(); ++i) hits += p[i] == l[i] ? 1 : 0;
    total += p.size();
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

double MethodRun::mean_loss() const {
  if (losses.empty()) return 0.0;
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

MethodRun run_method(const Model& checkpoint, const Stream& stream, Method method,
                     const RunConfig& config) {
  MethodRun run;
  run.method = method;
  if (method == Method::LearnableBn) {
    AdaptConfig ac = config.adapt;
    const auto total = stream.batches.size();
    ac.n_max = config.n_max.value_or(total / 2);
    ac.m_max = config.m_max.value_or(total > ac.n_max ? total - ac.n_max : 0);
    if (ac.n_max + ac.m_max > total) {
      throw ConfigError("adapt.n_max + adapt.m_max = " + std::to_string(ac.n_max + ac.m_max) +
                        " exceeds the stream's " + std::to_string(total) + " batches");
    }
    auto report = run_dual_stage(checkpoint, stream.batches, ac);
    for (const auto& r : report.records) {
      run.predicted.push_back(r.predicted);
      run.losses.push_back(r.gsem_loss);
    }
    run.final_model = report.final_model;
    run.report = std::move(report);
    return run;
  }
  BaselineKind kind = BaselineKind::frozen();
  switch (method) {
    case Method::Frozen: kind = BaselineKind::frozen(); break;
    case Method::AdaBn: kind = BaselineKind::adabn(); break;
    case Method::Ema: kind = BaselineKind::ema(config.ema_momentum); break;
    case Method::Tent: kind = BaselineKind::tent(config.tent_lr); break;
    case Method::LearnableBn: break;
  }
  auto br = run_baseline(checkpoint, stream.batches, kind);
  run.predicted = std::move(br.predicted);
  run.losses = std::move(br.losses);
  run.final_model = std::move(br.final_model);
  return run;
}

MetricsRow metrics_row(const MethodRun& run, const Stream& stream) {
  MetricsRow row;
  row.method = to_string(run.method);
  row.corruption = to_string(stream.key.kind);
  row.severity = to_string(stream.key.severity);
  row.accuracy = run.accuracy(stream);
  row.mean_gsem_loss = run.mean_loss();
  if (run.report) row.accepted_fraction = run.report->accepted_fraction();
  return row;
}

namespace {

std::string opt_fmt(const std::optional<double>& v) { return v ? text::fmt(*v) : std::string(); }

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw MissingInputError("cannot write " + path.string());
}

}  // namespace

std::string metrics_csv(const MetricsReport& report) {
  std::string out = "method,corruption,severity,accuracy,mean_gsem_loss,accepted_fraction\n";
  for (const auto& r : report.rows) {
    out += r.method + ',' + r.corruption + ',' + r.severity + ',' + text::fmt(r.accuracy) + ',' +
           text::fmt(r.mean_gsem_loss) + ',' + opt_fmt(r.accepted_fraction) + '\n';
  }
  return out;
}

std::string compare_csv(const MetricsReport& report) {
  std::string out = "method,corruption,severity,accuracy,accepted_fraction\n";
  for (const auto& r : report.rows) {
    out += r.method + ',' + r.corruption + ',' + r.severity + ',' + text::fmt(r.accuracy) + ',' +
           opt_fmt(r.accepted_fraction) + '\n';
  }
  return out;
}

std::string adapt_report_jsonl(const AdaptReport& report) {
  std::string out;
  for (const auto& r : report.records) {
    nlohmann::ordered_json j;
    j["index"] = r.index;
    j["stage"] = r.stage;
    j["kl"] = r.kl ? nlohmann::ordered_json(*r.kl) : nlohmann::ordered_json(nullptr);
    j["position_ratio"] =
        r.position_ratio ? nlohmann::ordered_json(*r.position_ratio) : nlohmann::ordered_json(nullptr);
    j["accepted"] = r.accepted;
    j["aborted"] = r.aborted;
    j["phi_raw"] = r.phi_raw;
    j["phi"] = r.phi;
    j["gsem_loss"] = r.gsem_loss;
    j["predicted"] = r.predicted;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string baseline_jsonl(const MethodRun& run) {
  std::string out;
  for (std::size_t i = 0; i < run.predicted.size(); ++i) {
    nlohmann::ordered_json j;
    j["index"] = i;
    j["gsem_loss"] = run.losses.at(i);
    j["predicted"] = run.predicted[i];
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string phi_trajectory_csv(const AdaptReport& report) {
  std::string out = "step,layer,phi_raw,phi_constrained,gsem_loss,kl,accepted\n";
  for (const auto& r : report.records) {
    for (std::size_t l = 0; l < r.phi_raw.size(); ++l) {
      out += std::to_string(r.index) + ',' + std::to_string(l) + ',' + text::fmt(r.phi_raw[l]) + ',' +
             text::fmt(r.phi[l]) + ',' + text::fmt(r.gsem_loss) + ',' + opt_fmt(r.kl) + ',' +
             (r.accepted ? "1" : "0") + '\n';
    }
  }
  return out;
}

std::string emit_phi_plot_data(const AdaptReport& report) {
  if (report.records.empty()) throw ContractError("emit_phi_plot_data: empty report");
  std::string out = "step,layer_index,phi_constrained\n";
  for (const auto& r : report.records) {
    for (std::size_t l = 0; l < r.phi.size(); ++l) {
      out += std::to_string(r.index) + ',' + std::to_string(l) + ',' + text::fmt(r.phi[l]) + '\n';
    }
  }
  return out;
}

std::vector<ScanRow> scan_stats(const Model& model, const Stream& stream) {
  if (model.bn.empty()) throw ContractError("scan_stats needs at least one BN layer");
  const auto& bn = model.bn.front();
  std::vector<ScanRow> rows;
  rows.reserve(stream.batches.size());
  for (std::size_t i = 0; i < stream.batches.size(); ++i) {
    ad::Tape tape;
    auto g = build_forward(tape, model, stream.batches[i], BnMode::Inference);
    const auto& p = g.present.front();
    ScanRow row;
    row.index = i;
    const auto c = static_cast<double>(bn.channels());
    for (std::size_t j = 0; j < bn.channels(); ++j) {
      row.mean_difference += (p.mean[j] - bn.mu_h[j]) / c;
      row.variance_ratio += (p.var[j] + bn.eps) / (bn.var_h[j] + bn.eps) / c;
    }
    row.gsem_loss = gsem_loss(g.probs.value());
    rows.push_back(row);
  }
  return rows;
}

std::string scan_stats_csv(const std::vector<ScanRow>& rows) {
  std::string out = "index,mean_difference,variance_ratio,gsem_loss\n";
  for (const auto& r : rows) {
    out += std::to_string(r.index) + ',' + text::fmt(r.mean_difference) + ',' +
           text::fmt(r.variance_ratio) + ',' + text::fmt(r.gsem_loss) + '\n';
  }
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("spearman: sequences differ in length");
  if (a.size() < 2) return 0.0;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

Dataset load_test_split(const RunConfig& config) {
  if (!config.test_csv.empty()) return read_dataset_csv(config.test_csv, config.data.classes);
  return gen_dataset(config.data).test;
}

Model load_or_fail(const RunConfig& config) {
  const auto path = config.checkpoint_path();
  if (!fs::exists(path)) {
    throw MissingInputError("checkpoint " + path.string() + " not found; run `train` first");
  }
  Model model = load_checkpoint(path);
  if (model.spec.input_dim != config.data.input_dim || model.spec.queries != config.data.queries ||
      model.spec.classes != config.data.classes) {
    throw ConfigError("checkpoint " + path.string() + " does not match the configured data layout");
  }
  return model;
}

std::string cmd_gen_data(const RunConfig& config) {
  const auto splits = gen_dataset(config.data);
  write_dataset_csv(splits.train, config.out_dir / "train.csv");
  write_dataset_csv(splits.test, config.out_dir / "test.csv");
  return "wrote " + std::to_string(splits.train.size()) + " train and " +
         std::to_string(splits.test.size()) + " test samples to " + config.out_dir.string();
}

std::string cmd_train(const RunConfig& config) {
  Dataset train = config.train_csv.empty() ? gen_dataset(config.data).train
                                           : read_dataset_csv(config.train_csv, config.data.classes);
  const Model init = init_model(config.model, derive_seed(config.seed, kInitTag));
  const Model model = train_source(init, train, config.train);
  fs::create_directories(config.out_dir);
  const auto path = config.checkpoint_path();
  save_checkpoint(model, path);

  const Dataset test = load_test_split(config);
  std::vector<std::size_t> all(test.size());
  std::iota(all.begin(), all.end(), 0);
  std::string acc = "n/a";
  if (!test.empty()) {
    acc = text::fmt(accuracy(forward(model, test.batch(all), BnMode::Inference), test.batch_labels(all)));
  }
  return "wrote " + path.string() + " (clean test accuracy " + acc + ")";
}

std::string cmd_adapt(const RunConfig& config) {
  const Model model = load_or_fail(config);
  const Stream stream = make_stream(config, load_test_split(config), config.stream);
  const auto run = run_method(model, stream, config.method, config);
  const auto row = metrics_row(run, stream);
  fs::create_directories(config.out_dir);
  write_text(config.out_dir / "metrics.csv", metrics_csv(MetricsReport{{row}}));
  if (run.report) {
    write_text(config.out_dir / "report.jsonl", adapt_report_jsonl(*run.report));
    write_text(config.out_dir / "phi_trajectory.csv", phi_trajectory_csv(*run.report));
    if (!run.report->records.empty()) {
      write_text(config.out_dir / "phi_plot.csv", emit_phi_plot_data(*run.report));
    }
  } else {
    write_text(config.out_dir / "report.jsonl", baseline_jsonl(run));
  }
  std::string msg = row.method + " on " + row.corruption + "/" + row.severity + ": accuracy " +
                    text::fmt(row.accuracy);
  if (row.accepted_fraction) msg += ", stage-2 accepted fraction " + text::fmt(*row.accepted_fraction);
  return msg;
}

std::string cmd_compare(const RunConfig& config) {
  const Model model = load_or_fail(config);
  const Dataset test = load_test_split(config);
  MetricsReport report;
  for (const auto& key : config.streams) {
    const Stream stream = make_stream(config, test, key);
    for (auto method : config.methods) {
      report.rows.push_back(metrics_row(run_method(model, stream, method, config), stream));
    }
  }
  fs::create_directories(config.out_dir);
  write_text(config.out_dir / "compare.csv", compare_csv(report));
  write_text(config.out_dir / "compare_metrics.csv", metrics_csv(report));
  return "wrote " + std::to_string(report.rows.size()) + " rows to " +
         (config.out_dir / "compare.csv").string();
}

std::string cmd_scan_stats(const RunConfig& config) {
  const Model model = load_or_fail(config);
  const Stream stream = make_stream(config, load_test_split(config), config.stream);
  const auto rows = scan_stats(model, stream);
  std::vector<double> md, vr, loss;
  for (const auto& r : rows) {
    md.push_back(r.mean_difference);
    vr.push_back(r.variance_ratio);
    loss.push_back(r.gsem_loss);
  }
  const double rho_mean = spearman(md, loss);
  const double rho_var = spearman(vr, loss);
  fs::create_directories(config.out_dir);
  write_text(config.out_dir / "scan_stats.csv", scan_stats_csv(rows));
  write_text(config.out_dir / "scan_stats_summary.csv",
             "statistic,spearman_rho_vs_gsem_loss\nmean_difference," + text::fmt(rho_mean) +
                 "\nvariance_ratio," + text::fmt(rho_var) + "\n");
  return "spearman rho vs GSEM loss: mean_difference " + text::fmt(rho_mean) + ", variance_ratio " +
         text::fmt(rho_var);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const MissingInputError*>(&e) || dynamic_cast<const CheckpointError*>(&e) ||
      dynamic_cast<const fs::filesystem_error*>(&e)) {
    return 2;
  }
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  if (dynamic_cast<const Error*>(&e)) return 1;
  return 3;
}

}  // namespace lbn
