#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ism/config.hpp"
#include "ism/run.hpp"

using namespace ism;
namespace fs = std::filesystem;

namespace {

std::string k2_config(const std::string& scenario, const std::string& extra_run = "",
                      const std::string& out_dir = "cfg_out") {
  return std::string(R"({
    "scenario": ")") +
         scenario + R"(",
    "model": {
      "kernel": {
        "pointer_labels": ["a", "b"],
        "outcome_labels": ["0", "1"],
        "probs": [[0.7, 0.3], [0.4, 0.6]]
      },
      "q0": [0.5, 0.5]
    },
    "run": { "steps": 60, "trajectories": 50, "seed": 3)" +
         extra_run + R"( },
    "output": { "dir": ")" + out_dir + R"(" }
  })";
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

long count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  long n = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST_CASE("config parsing") {
  SECTION("round trip of a valid discrete config") {
    auto cfg = parse_config(k2_config("discrete"));
    CHECK(cfg.scenario == Scenario::discrete);
    REQUIRE(cfg.kernel.has_value());
    CHECK(cfg.kernel->p(0, 0) == 0.7);
    REQUIRE(cfg.q0.has_value());
    CHECK(cfg.run.steps == 60);
    CHECK(cfg.run.trajectories == 50);
    CHECK(cfg.output.dir == "cfg_out");
  }
  SECTION("kernel dimension mismatch names the field") {
    const std::string bad = R"({
      "scenario": "discrete",
      "model": { "kernel": { "pointer_labels": ["a", "b"],
                             "outcome_labels": ["0", "1"],
                             "probs": [[0.7,0.3],[0.4,0.6],[0.5,0.5]] } },
      "run": { "steps": 10 }
    })";
    try {
      parse_config(bad);
      FAIL("expected config_error");
    } catch (const config_error& e) {
      CHECK(e.details[0].find("model.kernel.pointer_labels") != std::string::npos);
    }
  }
  SECTION("two model sections are ambiguous") {
    const std::string dup = R"({
      "scenario": "discrete",
      "model": {
        "kernel": { "pointer_labels": ["a"], "outcome_labels": ["0"], "probs": [[1.0]] },
        "theta": [[0.0, 1.0]], "star": 0
      },
      "run": { "steps": 10 }
    })";
    try {
      parse_config(dup);
      FAIL("expected config_error");
    } catch (const config_error& e) {
      CHECK(e.details[0].find("ambiguous") != std::string::npos);
    }
  }
  SECTION("model section must match the scenario") {
    const std::string wrong = R"({
      "scenario": "diffusive",
      "model": { "kernel": { "pointer_labels": ["a"], "outcome_labels": ["0"], "probs": [[1.0]] } },
      "run": { "horizon": 1.0, "dt": 0.1 }
    })";
    CHECK_THROWS_AS(parse_config(wrong), config_error);
  }
  SECTION("non-Hermitian apparatus matrix is rejected with its path") {
    const std::string bad = R"({
      "scenario": "quantum",
      "model": { "apparatus": {
        "pointer_energies": [0.0, 0.0],
        "interaction_blocks": [
          { "re": [[0.0, 1.0], [0.0, 0.0]] },
          { "re": [[0.0, 0.0], [0.0, 0.0]] }
        ],
        "probe_state": { "re": [1.0, 0.0] },
        "delta": 0.01
      } },
      "run": { "steps": 10 }
    })";
    try {
      parse_config(bad);
      FAIL("expected config_error");
    } catch (const config_error& e) {
      CHECK(e.details[0].find("model.apparatus") != std::string::npos);
      CHECK(e.details[0].find("Hermitian") != std::string::npos);
    }
  }
  SECTION("missing run.steps for a discrete scenario") {
    const std::string bad = R"({
      "scenario": "discrete",
      "model": { "kernel": { "pointer_labels": ["a"], "outcome_labels": ["0"], "probs": [[1.0]] } }
    })";
    try {
      parse_config(bad);
      FAIL("expected config_error");
    } catch (const config_error& e) {
      CHECK(e.details[0].find("run.steps") != std::string::npos);
    }
  }
  SECTION("q0 dimension is cross-checked against the model") {
    const std::string bad = R"({
      "scenario": "discrete",
      "model": {
        "kernel": { "pointer_labels": ["a","b"], "outcome_labels": ["0","1"],
                    "probs": [[0.7,0.3],[0.4,0.6]] },
        "q0": [0.2, 0.3, 0.5]
      },
      "run": { "steps": 10 }
    })";
    try {
      parse_config(bad);
      FAIL("expected config_error");
    } catch (const config_error& e) {
      CHECK(e.details[0].find("model.q0") != std::string::npos);
    }
  }
  SECTION("invalid JSON is a config error") {
    CHECK_THROWS_AS(parse_config("{ not json"), config_error);
  }
  SECTION("the shipped sample configs all parse") {
    for (const auto& entry : fs::directory_iterator(ISM_CONFIG_DIR)) {
      if (entry.path().extension() != ".json") continue;
      INFO(entry.path().string());
      CHECK_NOTHROW(parse_config(read_file(entry.path())));
    }
  }
}

TEST_CASE("discrete run artifacts") {
  fs::remove_all("cfg_out");
  auto cfg = parse_config(k2_config("discrete"));
  std::ostringstream log;
  auto result = run(cfg, log);
  CHECK(result.exit_code == 0);
  SECTION("one record per trajectory, histogram conserved") {
    CHECK(count_lines(result.trajectory_path) == 50);
    const std::string summary = read_file(result.summary_path);
    // histogram rows: a + b + uncollapsed = 50
    long total = 0;
    std::istringstream ss(summary);
    std::string line;
    while (std::getline(ss, line)) {
      if (line.rfind("histogram\t", 0) == 0)
        total += std::stol(line.substr(line.rfind('\t') + 1));
    }
    CHECK(total == 50);
  }
  SECTION("records carry the schema version") {
    std::ifstream in(result.trajectory_path);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line.find("\"schema_version\":1") != std::string::npos);
  }
  SECTION("re-running is byte identical, independent of thread count") {
    const std::string traj1 = read_file(result.trajectory_path);
    const std::string sum1 = read_file(result.summary_path);
    auto cfg4 = cfg;
    cfg4.run.threads = 4;
    std::ostringstream log2;
    run(cfg4, log2);
    CHECK(read_file(result.trajectory_path) == traj1);
    CHECK(read_file(result.summary_path) == sum1);
  }
}

TEST_CASE("continuous run artifacts") {
  SECTION("diffusive records and summary") {
    const std::string text = R"({
      "scenario": "diffusive",
      "model": { "p0": [0.5, 0.5], "gamma": [[1.0, -1.0], [-1.0, 1.0]], "q0": [0.5, 0.5] },
      "run": { "horizon": 1.0, "dt": 0.01, "trajectories": 20, "seed": 5, "record_stride": 20 },
      "output": { "dir": "cfg_out_diff" }
    })";
    fs::remove_all("cfg_out_diff");
    auto cfg = parse_config(text);
    std::ostringstream log;
    auto result = run(cfg, log);
    CHECK(result.exit_code == 0);
    CHECK(count_lines(result.trajectory_path) == 20);
    CHECK(read_file(result.summary_path).find("martingale_mean") != std::string::npos);
  }
  SECTION("belavkin-jump records carry events and trace drift") {
    const std::string text = R"({
      "scenario": "belavkin-jump",
      "model": { "apparatus": {
        "pointer_energies": [0.0, 0.0],
        "interaction_blocks": [
          { "re": [[0.0, 1.0], [1.0, 0.0]] },
          { "re": [[0.0, 1.4142135623730951], [1.4142135623730951, 0.0]] }
        ],
        "probe_state": { "re": [1.0, 0.0] },
        "delta": 0.0001
      } },
      "run": { "horizon": 1.0, "dt": 0.001, "trajectories": 10, "seed": 5, "record_stride": 500 },
      "output": { "dir": "cfg_out_bj" }
    })";
    fs::remove_all("cfg_out_bj");
    auto cfg = parse_config(text);
    std::ostringstream log;
    auto result = run(cfg, log);
    CHECK(result.exit_code == 0);
    std::ifstream in(result.trajectory_path);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line.find("\"events\"") != std::string::npos);
    CHECK(line.find("\"trace_drift\"") != std::string::npos);
    CHECK(read_file(result.summary_path).find("max_trace_drift_per_unit_time") !=
          std::string::npos);
  }
}

TEST_CASE("validate scenario") {
  SECTION("K2 battery passes with at least six tests") {
    auto cfg = parse_config(k2_config("validate", ", \"trajectories\": 600", "cfg_out_val"));
    cfg.run.steps = 1200;
    fs::remove_all("cfg_out_val");
    std::ostringstream log;
    auto result = run(cfg, log);
    INFO(log.str());
    CHECK(result.exit_code == 0);
    CHECK(result.reports.size() >= 6);
    for (const auto& r : result.reports) CHECK(r.pass);
  }
  SECTION("a degenerate kernel fails the battery") {
    const std::string text = R"({
      "scenario": "validate",
      "model": { "kernel": { "pointer_labels": ["a","b"], "outcome_labels": ["0","1"],
                             "probs": [[0.5,0.5],[0.5,0.5]] } },
      "run": { "steps": 100, "trajectories": 200, "seed": 2 },
      "output": { "dir": "cfg_out_degval" }
    })";
    fs::remove_all("cfg_out_degval");
    auto cfg = parse_config(text);
    std::ostringstream log;
    auto result = run(cfg, log);
    CHECK(result.exit_code == 1);
  }
}

TEST_CASE("calibrate scenario") {
  // generate labeled-free peaked runs through the simulate path, then
  // cluster them back into a kernel estimate
  fs::remove_all("cfg_out_calruns");
  for (int alpha = 0; alpha < 2; ++alpha) {
    const std::string q0 = alpha == 0 ? "[1.0, 0.0]" : "[0.0, 1.0]";
    const std::string text = std::string(R"({
      "scenario": "discrete",
      "model": {
        "kernel": { "pointer_labels": ["a","b"], "outcome_labels": ["0","1"],
                    "probs": [[0.7,0.3],[0.4,0.6]] },
        "q0": )") + q0 + R"(
      },
      "run": { "steps": 8000, "trajectories": 10, "seed": )" + std::to_string(31 + alpha) +
                             R"(, "sampling_mode": "conditioned", "record_stride": 8000 },
      "output": { "dir": "cfg_out_calruns", "trajectory_file": "runs_)" +
                             std::to_string(alpha) + R"(.jsonl" }
    })";
    std::ostringstream log;
    REQUIRE(run(parse_config(text), log).exit_code == 0);
  }
  RunConfig cal;
  cal.scenario = Scenario::calibrate;
  cal.runs_dir = "cfg_out_calruns";
  cal.output.dir = "cfg_out_cal";
  fs::remove_all("cfg_out_cal");
  std::ostringstream log;
  auto result = run(cal, log);
  CHECK(result.exit_code == 0);
  const std::string text = read_file(result.summary_path);
  auto j = nlohmann::json::parse(text);
  CHECK(j["clusters"] == 2);
  CHECK(j["runs"] == 20);
  const double row0 = j["rows"][0][0].get<double>();
  const double row1 = j["rows"][1][0].get<double>();
  CHECK(std::abs(std::max(row0, row1) - 0.7) < 0.03);
  CHECK(std::abs(std::min(row0, row1) - 0.4) < 0.03);
}
