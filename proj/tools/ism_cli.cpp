// Command-line front end: batch simulation, validation, and calibration of
// iterated-measurement models from a JSON config.
//
//   ism simulate --config FILE --out DIR [--seed N] [--trajectories N] [--threads N]
//   ism validate --config FILE [--threads N]
//   ism calibrate --runs DIR [--out DIR]
//
// Exit codes: 0 success, 1 validation failure, 2 config error, 3 runtime
// invariant violation.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "ism/config.hpp"
#include "ism/run.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ism::config_error("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliOverrides {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<long> trajectories;
  int threads = 0;
};

ism::RunConfig load(const CliOverrides& o, bool need_config = true) {
  ism::RunConfig cfg;
  if (need_config) cfg = ism::parse_config(read_file(o.config_path));
  if (!o.out_dir.empty()) cfg.output.dir = o.out_dir;
  if (o.seed) cfg.run.seed = *o.seed;
  if (o.trajectories) cfg.run.trajectories = *o.trajectories;
  if (o.threads > 0) cfg.run.threads = o.threads;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"iterated stochastic measurement simulator"};
  app.require_subcommand(1);

  CliOverrides sim, val, cal;
  std::string runs_dir;

  auto* simulate = app.add_subcommand("simulate", "run a configured ensemble");
  simulate->add_option("--config", sim.config_path, "JSON run configuration")->required();
  simulate->add_option("--out", sim.out_dir, "output directory (overrides output.dir)");
  std::uint64_t seed_opt = 0;
  bool seed_set = false;
  simulate->add_option("--seed", seed_opt, "master seed override")
      ->each([&](const std::string&) { seed_set = true; });
  long traj_opt = 0;
  simulate->add_option("--trajectories", traj_opt, "trajectory count override")
      ->check(CLI::PositiveNumber);
  simulate->add_option("--threads", sim.threads, "worker threads (0 = all cores)")
      ->envname("ISM_THREADS");

  auto* validate = app.add_subcommand("validate", "run the statistical test battery");
  validate->add_option("--config", val.config_path, "JSON run configuration")->required();
  validate->add_option("--threads", val.threads, "worker threads (0 = all cores)")
      ->envname("ISM_THREADS");

  auto* calibrate = app.add_subcommand("calibrate", "estimate a kernel from recorded runs");
  calibrate->add_option("--runs", runs_dir, "directory of trajectory .jsonl files")
      ->required();
  calibrate->add_option("--out", cal.out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    ism::RunConfig cfg;
    if (simulate->parsed()) {
      if (seed_set) sim.seed = seed_opt;
      if (traj_opt > 0) sim.trajectories = traj_opt;
      cfg = load(sim);
      if (cfg.scenario == ism::Scenario::validate || cfg.scenario == ism::Scenario::calibrate)
        throw ism::config_error("scenario \"" + std::string(ism::scenario_name(cfg.scenario)) +
                                "\" belongs to the matching subcommand");
    } else if (validate->parsed()) {
      cfg = load(val);
      if (cfg.scenario != ism::Scenario::validate)
        throw ism::config_error("validate subcommand needs a \"validate\" scenario config");
    } else {
      cfg = load(cal, false);
      cfg.scenario = ism::Scenario::calibrate;
      cfg.runs_dir = runs_dir;
      if (!cal.out_dir.empty()) cfg.output.dir = cal.out_dir;
    }
    return ism::run(cfg, std::cout).exit_code;
  } catch (const ism::config_error& e) {
    std::cerr << "config error:\n";
    for (const auto& m : e.details) std::cerr << "  " << m << "\n";
    return 2;
  } catch (const ism::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
