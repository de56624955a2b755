// lbn: data generation, source training and test-time adaptation runs.
//
//   lbn gen-data   --config run.cfg --out out/
//   lbn train      --config run.cfg --out out/
//   lbn adapt      --config run.cfg --out out/ [--seed N]
//   lbn compare    --config run.cfg --out out/
//   lbn scan-stats --config run.cfg --out out/
//
// Exit status: 0 success, 1 configuration or usage error, 2 missing or
// unreadable input artifact, 3 numeric failure.

#include <cstdint>
#include <exception>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lbn/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"LearnableBN test-time adaptation toolkit", "lbn"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  app.add_option("--config", config_path, "flat key = value run configuration");
  app.add_option("--seed", seed, "overrides the configured seed");
  app.add_option("--out", out_dir, "output directory (overrides output.dir)");

  using Command = std::function<std::string(const lbn::RunConfig&)>;
  Command command;
  auto add = [&](const char* name, const char* help, Command fn) {
    app.add_subcommand(name, help)->fallthrough()->callback([&command, fn] { command = fn; });
  };
  add("gen-data", "write the source train/test splits as CSV", lbn::cmd_gen_data);
  add("train", "train the source model and write a checkpoint", lbn::cmd_train);
  add("adapt", "run one method on one corrupted stream", lbn::cmd_adapt);
  add("compare", "run every configured method on identical streams", lbn::cmd_compare);
  add("scan-stats", "per-sample statistic shift vs GSEM loss", lbn::cmd_scan_stats);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "lbn: " << e.what() << '\n';
    return 1;
  }

  try {
    const auto map = config_path.empty() ? lbn::ConfigMap{} : lbn::load_config(config_path);
    auto config = lbn::run_config_from(map);
    if (seed) config.seed = *seed;
    if (!out_dir.empty()) config.out_dir = out_dir;
    config.finalize();
    config.validate();
    std::cout << command(config) << '\n';
  } catch (const std::exception& e) {
    std::cerr << "lbn: " << e.what() << '\n';
    return lbn::exit_code_for(e);
  }
  return 0;
}
