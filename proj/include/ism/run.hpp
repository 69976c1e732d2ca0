#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ism/belavkin.hpp"
#include "ism/config.hpp"
#include "ism/discrete.hpp"
#include "ism/parallel.hpp"
#include "ism/quantum.hpp"
#include "ism/scaling.hpp"
#include "ism/validate.hpp"

namespace ism {

inline constexpr int kRecordSchemaVersion = 1;

namespace run_detail {

using nlohmann::json;

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline json row_to_json(const Eigen::MatrixXd& m, long row) {
  json out = json::array();
  for (int c = 0; c < m.cols(); ++c) out.push_back(m(row, c));
  return out;
}

/// Per-step ensemble aggregates shared by all scenario executors.  Blocks
/// are merged in index order, so the result does not depend on the thread
/// count.
struct Aggregator {
  std::vector<long> histogram;
  long uncollapsed = 0;
  long failed = 0;
  std::vector<std::vector<stats::Moments>> q_moments;  // [grid][alpha]
  std::vector<RateSample> rates;
  double max_trace_drift = 0.0;
  double min_eigenvalue = 1.0;

  explicit Aggregator(int n_alpha, std::size_t grid_size) {
    histogram.assign(static_cast<std::size_t>(n_alpha), 0);
    q_moments.assign(grid_size, std::vector<stats::Moments>(static_cast<std::size_t>(n_alpha)));
  }

  void add_state(std::size_t grid_index, const Eigen::VectorXd& q) {
    for (int a = 0; a < q.size(); ++a)
      q_moments[grid_index][static_cast<std::size_t>(a)].add(q[a]);
  }

  void merge(const Aggregator& o) {
    for (std::size_t a = 0; a < histogram.size(); ++a) histogram[a] += o.histogram[a];
    uncollapsed += o.uncollapsed;
    failed += o.failed;
    for (std::size_t g = 0; g < q_moments.size(); ++g)
      for (std::size_t a = 0; a < q_moments[g].size(); ++a)
        q_moments[g][a].merge(o.q_moments[g][a]);
    rates.insert(rates.end(), o.rates.begin(), o.rates.end());
    max_trace_drift = std::max(max_trace_drift, o.max_trace_drift);
    min_eigenvalue = std::min(min_eigenvalue, o.min_eigenvalue);
  }
};

struct SummaryTable {
  std::vector<std::string> rows;  // "section\tkey\tvalue"

  void add(const std::string& section, const std::string& key, const std::string& value) {
    rows.push_back(section + "\t" + key + "\t" + value);
  }
  void add(const std::string& section, const std::string& key, double value) {
    add(section, key, fmt_double(value));
  }
  void add(const std::string& section, const std::string& key, long value) {
    add(section, key, std::to_string(value));
  }

  void add_test(const TestReport& r) {
    std::string v = std::string("pass=") + (r.pass ? "1" : "0") +
                    " stat=" + fmt_double(r.statistic) + " thr=" + fmt_double(r.threshold) +
                    " n=" + std::to_string(r.sample_size);
    if (!r.conclusive) v += " inconclusive=1";
    if (!r.notes.empty()) v += " notes=" + r.notes;
    add("test", r.name, v);
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot open " + path.string() + " for writing");
    out << "section\tkey\tvalue\n";
    for (const auto& r : rows) out << r << "\n";
  }
};

inline void aggregate_summary(SummaryTable& table, const Aggregator& agg,
                              const std::vector<std::string>& labels,
                              const std::vector<double>& grid,
                              const std::string& grid_unit) {
  for (std::size_t a = 0; a < agg.histogram.size(); ++a)
    table.add("histogram", labels[a], agg.histogram[a]);
  table.add("histogram", "uncollapsed", agg.uncollapsed);
  if (agg.failed > 0) table.add("histogram", "failed", agg.failed);
  for (std::size_t g = 0; g < agg.q_moments.size(); ++g)
    for (std::size_t a = 0; a < agg.q_moments[g].size(); ++a) {
      const auto& m = agg.q_moments[g][a];
      if (m.count == 0) continue;
      const std::string key = grid_unit + "=" + fmt_double(grid[g]) + ",alpha=" + labels[a];
      table.add("martingale_mean", key, m.mean);
      table.add("martingale_std", key, m.stddev());
    }
  std::map<std::pair<int, int>, std::vector<double>> by_pair;
  for (const auto& r : agg.rates) by_pair[{r.target, r.alpha}].push_back(r.slope);
  for (auto& [pair, slopes] : by_pair) {
    const std::string key =
        "target=" + labels[static_cast<std::size_t>(pair.first)] +
        ",alpha=" + labels[static_cast<std::size_t>(pair.second)];
    table.add("rate_median", key, stats::median(slopes));
    table.add("rate_count", key, static_cast<long>(slopes.size()));
  }
}

inline std::vector<std::string> pointer_labels_for(const RunConfig& cfg) {
  if (cfg.kernel) return cfg.kernel->pointer_labels();
  int na = 0;
  if (cfg.diffusive) na = cfg.diffusive->n_pointers();
  if (cfg.jump) na = cfg.jump->n_pointers();
  if (cfg.apparatus) na = cfg.apparatus->system_dim();
  std::vector<std::string> labels;
  for (int a = 0; a < na; ++a) labels.push_back("a" + std::to_string(a));
  return labels;
}

inline PointerDistribution initial_q(const RunConfig& cfg, int n_alpha) {
  return cfg.q0 ? *cfg.q0 : PointerDistribution::uniform(n_alpha);
}

inline DensityMatrix initial_rho(const RunConfig& cfg) {
  if (cfg.rho0) return DensityMatrix(*cfg.rho0);
  return DensityMatrix::from_diagonal(initial_q(cfg, cfg.apparatus->system_dim()));
}

}  // namespace run_detail

struct RunResult {
  int exit_code = 0;
  std::vector<TestReport> reports;
  std::filesystem::path trajectory_path;
  std::filesystem::path summary_path;
};

namespace run_detail {

/// Shared executor skeleton: simulate trajectory `idx` into a JSONL record
/// plus per-block aggregates, then reduce blocks in order and write both
/// artifacts.
template <class PerTrajectory>
RunResult execute_ensemble(const RunConfig& cfg, std::ostream& log,
                           const std::vector<double>& grid, const std::string& grid_unit,
                           PerTrajectory&& per_trajectory) {
  const auto labels = pointer_labels_for(cfg);
  const long count = cfg.run.trajectories;
  constexpr std::int64_t kBlock = 16;
  const std::int64_t n_blocks = (count + kBlock - 1) / kBlock;
  std::vector<Aggregator> blocks(static_cast<std::size_t>(n_blocks),
                                 Aggregator(static_cast<int>(labels.size()), grid.size()));
  std::vector<std::string> records(static_cast<std::size_t>(count));

  parallel_for_indexed(
      count, cfg.run.threads,
      [&](std::int64_t idx) {
        Aggregator& agg = blocks[static_cast<std::size_t>(idx / kBlock)];
        json record;
        record["schema_version"] = kRecordSchemaVersion;
        record["id"] = idx;
        record["seed"] = derive_stream_seed(cfg.run.seed, static_cast<std::uint64_t>(idx));
        try {
          per_trajectory(idx, record, agg);
        } catch (const error& e) {
          record["error"] = e.what();
          ++agg.failed;
        }
        records[static_cast<std::size_t>(idx)] = record.dump();
      },
      kBlock);

  Aggregator total(static_cast<int>(labels.size()), grid.size());
  for (const auto& b : blocks) total.merge(b);

  std::filesystem::create_directories(cfg.output.dir);
  RunResult result;
  result.trajectory_path = std::filesystem::path(cfg.output.dir) / cfg.output.trajectory_file;
  result.summary_path = std::filesystem::path(cfg.output.dir) / cfg.output.summary_file;
  {
    std::ofstream out(result.trajectory_path, std::ios::binary);
    if (!out) throw error("cannot open " + result.trajectory_path.string() + " for writing");
    for (const auto& r : records) out << r << "\n";
  }
  SummaryTable table;
  table.add("meta", "schema_version", static_cast<long>(kRecordSchemaVersion));
  table.add("meta", "scenario", scenario_name(cfg.scenario));
  table.add("meta", "trajectories", count);
  table.add("meta", "seed", std::to_string(cfg.run.seed));
  aggregate_summary(table, total, labels, grid, grid_unit);
  if (cfg.scenario == Scenario::belavkin_diffusive || cfg.scenario == Scenario::belavkin_jump) {
    table.add("belavkin", "max_trace_drift_per_unit_time", total.max_trace_drift);
    table.add("belavkin", "min_eigenvalue_seen", total.min_eigenvalue);
  }
  table.write(result.summary_path);

  log << scenario_name(cfg.scenario) << ": " << count << " trajectories, "
      << total.uncollapsed << " uncollapsed";
  if (total.failed > 0) log << ", " << total.failed << " FAILED";
  log << "\n  records: " << result.trajectory_path.string()
      << "\n  summary: " << result.summary_path.string() << "\n";
  result.exit_code = total.failed > 0 ? 3 : 0;
  return result;
}

inline std::vector<double> step_grid(int steps, int stride) {
  std::vector<double> grid;
  for (int s = 0; s <= steps; s += stride) grid.push_back(s);
  if (grid.back() != steps) grid.push_back(steps);
  return grid;
}

inline RunResult run_discrete(const RunConfig& cfg, std::ostream& log) {
  const auto& kernel = *cfg.kernel;
  const auto q0 = initial_q(cfg, kernel.n_pointers());
  TrajectoryConfig tc;
  tc.steps = cfg.run.steps;
  tc.seed = cfg.run.seed;
  tc.mode = cfg.run.sampling_mode;
  tc.collapse_threshold = cfg.collapse_threshold();
  const auto grid = step_grid(tc.steps, cfg.run.record_stride);

  return execute_ensemble(
      cfg, log, grid, "step", [&](std::int64_t idx, json& record, Aggregator& agg) {
        Rng rng = Rng::stream(tc.seed, static_cast<std::uint64_t>(idx));
        const auto traj = simulate_trajectory(kernel, q0, tc, rng);
        json steps = json::array(), qs = json::array();
        for (std::size_t g = 0; g < grid.size(); ++g) {
          const int s = static_cast<int>(grid[g]);
          steps.push_back(s);
          qs.push_back(vector_to_json(traj.q_path[static_cast<std::size_t>(s)].weights()));
          agg.add_state(g, traj.q_path[static_cast<std::size_t>(s)].weights());
        }
        record["steps"] = std::move(steps);
        record["q"] = std::move(qs);
        record["outcomes"] = traj.outcomes.sequence;
        json counts = json::array();
        for (int i = 0; i < traj.outcomes.counts.size(); ++i)
          counts.push_back(traj.outcomes.counts[i]);
        record["counts"] = std::move(counts);
        record["n_steps"] = tc.steps;
        if (traj.sampled_alpha)
          record["sampled_alpha"] = kernel.pointer_labels()[static_cast<std::size_t>(
              *traj.sampled_alpha)];
        if (traj.collapse) {
          record["collapse"] = {
              {"step", traj.collapse->step},
              {"target",
               kernel.pointer_labels()[static_cast<std::size_t>(traj.collapse->target)]}};
          ++agg.histogram[static_cast<std::size_t>(traj.collapse->target)];
          if (auto fits = fit_decay_rate(traj))
            for (const auto& f : *fits)
              agg.rates.push_back(
                  RateSample{traj.collapse->target, f.alpha, f.slope, f.low_confidence});
        } else {
          record["collapse"] = nullptr;
          ++agg.uncollapsed;
        }
      });
}

inline RunResult run_diffusive(const RunConfig& cfg, std::ostream& log) {
  const auto& model = *cfg.diffusive;
  const auto q0 = initial_q(cfg, model.n_pointers());
  SdeOptions opts;
  opts.record_stride = cfg.run.record_stride;
  opts.collapse_threshold = cfg.collapse_threshold();
  const long n_steps = static_cast<long>(std::llround(cfg.run.horizon / cfg.run.dt));
  std::vector<double> grid;
  for (long s = 0; s <= n_steps; s += opts.record_stride) grid.push_back(s * cfg.run.dt);
  if (grid.back() != n_steps * cfg.run.dt) grid.push_back(n_steps * cfg.run.dt);

  return execute_ensemble(
      cfg, log, grid, "t", [&](std::int64_t idx, json& record, Aggregator& agg) {
        const auto path = integrate_diffusive(
            model, q0, cfg.run.horizon, cfg.run.dt,
            derive_stream_seed(cfg.run.seed, static_cast<std::uint64_t>(idx)),
            DiffusiveMode::unconditioned, opts);
        record["times"] = path.times;
        json qs = json::array(), xs = json::array(), ws = json::array();
        for (long r = 0; r < path.q_path.rows(); ++r) {
          qs.push_back(row_to_json(path.q_path, r));
          xs.push_back(row_to_json(path.x_path, r));
          ws.push_back(row_to_json(path.w_path, r));
          agg.add_state(static_cast<std::size_t>(r), path.q_path.row(r));
        }
        record["q"] = std::move(qs);
        record["x"] = std::move(xs);
        record["w"] = std::move(ws);
        if (path.collapse) {
          record["collapse"] = {{"time", path.collapse->time},
                                {"target", "a" + std::to_string(path.collapse->target)}};
          ++agg.histogram[static_cast<std::size_t>(path.collapse->target)];
        } else {
          record["collapse"] = nullptr;
          ++agg.uncollapsed;
        }
      });
}

inline RunResult run_jump(const RunConfig& cfg, std::ostream& log) {
  const auto& model = *cfg.jump;
  const auto q0 = initial_q(cfg, model.n_pointers());
  SdeOptions opts;
  opts.record_stride = cfg.run.record_stride;
  opts.collapse_threshold = cfg.collapse_threshold();
  const long n_steps = static_cast<long>(std::llround(cfg.run.horizon / cfg.run.dt));
  std::vector<double> grid;
  for (long s = 0; s <= n_steps; s += opts.record_stride) grid.push_back(s * cfg.run.dt);
  if (grid.back() != n_steps * cfg.run.dt) grid.push_back(n_steps * cfg.run.dt);

  return execute_ensemble(
      cfg, log, grid, "t", [&](std::int64_t idx, json& record, Aggregator& agg) {
        const auto path = integrate_jump_thinning(
            model, q0, cfg.run.horizon, cfg.run.dt,
            derive_stream_seed(cfg.run.seed, static_cast<std::uint64_t>(idx)), opts);
        record["times"] = path.times;
        json qs = json::array(), ys = json::array(), ns = json::array();
        for (long r = 0; r < path.q_path.rows(); ++r) {
          qs.push_back(row_to_json(path.q_path, r));
          ys.push_back(row_to_json(path.y_path, r));
          ns.push_back(row_to_json(path.n_path, r));
          agg.add_state(static_cast<std::size_t>(r), path.q_path.row(r));
        }
        record["q"] = std::move(qs);
        record["y"] = std::move(ys);
        record["n"] = std::move(ns);
        json events = json::array();
        for (const auto& ev : path.jump_events) events.push_back({ev.time, ev.channel});
        record["events"] = std::move(events);
        if (path.collapse) {
          record["collapse"] = {{"time", path.collapse->time},
                                {"target", "a" + std::to_string(path.collapse->target)}};
          ++agg.histogram[static_cast<std::size_t>(path.collapse->target)];
        } else {
          record["collapse"] = nullptr;
          ++agg.uncollapsed;
        }
      });
}

inline RunResult run_quantum(const RunConfig& cfg, std::ostream& log) {
  const auto props = build_propagator(*cfg.apparatus);
  const auto rho0 = initial_rho(cfg);
  const auto grid = step_grid(cfg.run.steps, cfg.run.record_stride);

  return execute_ensemble(
      cfg, log, grid, "step", [&](std::int64_t idx, json& record, Aggregator& agg) {
        const auto traj = simulate_quantum_chain(
            props, rho0, cfg.run.steps,
            derive_stream_seed(cfg.run.seed, static_cast<std::uint64_t>(idx)),
            cfg.run.record_stride, cfg.collapse_threshold());
        record["steps"] = traj.recorded_steps;
        json diags = json::array();
        for (std::size_t r = 0; r < traj.rho_path.size(); ++r) {
          diags.push_back(vector_to_json(traj.rho_path[r].diagonal()));
          agg.add_state(r, traj.rho_path[r].diagonal());
        }
        record["diag_rho"] = std::move(diags);
        record["outcomes"] = traj.outcomes;
        if (traj.collapse) {
          record["collapse"] = {{"step", traj.collapse->step},
                                {"target", "a" + std::to_string(traj.collapse->target)}};
          ++agg.histogram[static_cast<std::size_t>(traj.collapse->target)];
        } else {
          record["collapse"] = nullptr;
          ++agg.uncollapsed;
        }
      });
}

inline RunResult run_belavkin(const RunConfig& cfg, std::ostream& log) {
  const bool diffusive = cfg.scenario == Scenario::belavkin_diffusive;
  const auto rho0 = initial_rho(cfg);
  SdeOptions opts;
  opts.record_stride = cfg.run.record_stride;
  opts.collapse_threshold = cfg.collapse_threshold();
  const long n_steps = static_cast<long>(std::llround(cfg.run.horizon / cfg.run.dt));
  std::vector<double> grid;
  for (long s = 0; s <= n_steps; s += opts.record_stride) grid.push_back(s * cfg.run.dt);
  if (grid.back() != n_steps * cfg.run.dt) grid.push_back(n_steps * cfg.run.dt);

  std::optional<DiffusiveBelavkinModel> dmodel;
  std::optional<JumpBelavkinModel> jmodel;
  if (diffusive)
    dmodel.emplace(extract_diffusive_model(*cfg.apparatus));
  else
    jmodel.emplace(extract_jump_model(*cfg.apparatus));
  if ((dmodel && !dmodel->pointer_diagonal) || (jmodel && !jmodel->pointer_diagonal))
    log << "warning: measurement operators are not pointer-diagonal; the driving-noise "
           "statistics are only guaranteed for QND models\n";

  return execute_ensemble(
      cfg, log, grid, "t", [&](std::int64_t idx, json& record, Aggregator& agg) {
        const std::uint64_t seed =
            derive_stream_seed(cfg.run.seed, static_cast<std::uint64_t>(idx));
        BelavkinPath path = diffusive
                                ? integrate_belavkin_diffusive(*dmodel, rho0, cfg.run.horizon,
                                                               cfg.run.dt, seed, opts)
                                : integrate_belavkin_jump(*jmodel, rho0, cfg.run.horizon,
                                                          cfg.run.dt, seed, opts);
        record["times"] = path.times;
        json diags = json::array();
        for (std::size_t r = 0; r < path.rho_path.size(); ++r) {
          const Eigen::VectorXd diag = path.rho_path[r].diagonal().real();
          diags.push_back(vector_to_json(diag));
          agg.add_state(r, diag);
        }
        record["diag_rho"] = std::move(diags);
        record["trace_drift"] = path.trace_drift_per_unit_time;
        if (!diffusive) {
          json events = json::array();
          for (const auto& ev : path.jump_events) events.push_back({ev.time, ev.channel});
          record["events"] = std::move(events);
        }
        agg.max_trace_drift = std::max(agg.max_trace_drift, path.trace_drift_per_unit_time);
        agg.min_eigenvalue = std::min(agg.min_eigenvalue, path.min_eigenvalue_seen);
        if (path.collapse) {
          record["collapse"] = {{"time", path.collapse->time},
                                {"target", "a" + std::to_string(path.collapse->target)}};
          ++agg.histogram[static_cast<std::size_t>(path.collapse->target)];
        } else {
          record["collapse"] = nullptr;
          ++agg.uncollapsed;
        }
      });
}

/// Validation battery over a kernel scenario; at least six named checks.
inline RunResult run_validate(const RunConfig& cfg, std::ostream& log) {
  const auto& kernel = *cfg.kernel;
  const auto q0 = initial_q(cfg, kernel.n_pointers());
  TrajectoryConfig tc;
  tc.steps = cfg.run.steps;
  tc.seed = cfg.run.seed;
  tc.collapse_threshold = cfg.collapse_threshold();
  tc.summary_stride = std::max(1, cfg.run.steps / 10);

  auto predictive_sum = run_ensemble(kernel, q0, tc, cfg.run.trajectories, cfg.run.threads);
  TrajectoryConfig tc_cond = tc;
  tc_cond.mode = SamplingMode::conditioned;
  tc_cond.seed = tc.seed + 1;
  auto conditioned_sum =
      run_ensemble(kernel, q0, tc_cond, cfg.run.trajectories, cfg.run.threads);

  std::vector<TestReport> reports;
  reports.push_back(test_exchangeability(kernel, q0, 6));
  reports.push_back(test_martingale(predictive_sum.q_moments, predictive_sum.grid_steps, q0));
  reports.push_back(
      test_collapse_law(predictive_sum.target_histogram, predictive_sum.uncollapsed, q0));
  reports.push_back(test_rate(predictive_sum.rate_samples, rate_reference(kernel)));

  std::vector<double> term_pred, term_cond;
  for (long r = 0; r < predictive_sum.terminal_q.rows(); ++r)
    term_pred.push_back(predictive_sum.terminal_q(r, 0));
  for (long r = 0; r < conditioned_sum.terminal_q.rows(); ++r)
    term_cond.push_back(conditioned_sum.terminal_q(r, 0));
  reports.push_back(test_equivalence(term_pred, term_cond, kSignificance,
                                     "sampling_mode_equivalence"));

  long outside = 0;
  for (double dev : predictive_sum.freq_dev_normalized)
    if (dev >= 1.0) ++outside;
  const long nf = static_cast<long>(predictive_sum.freq_dev_normalized.size());
  reports.push_back(TestReport::make(
      "frequency_convergence",
      nf > 0 ? static_cast<double>(outside) / static_cast<double>(nf) : 1e300, 0.01, nf,
      std::to_string(outside) + " of " + std::to_string(nf) + " outside the 4-sigma band",
      nf > 0));

  std::filesystem::create_directories(cfg.output.dir);
  RunResult result;
  result.summary_path = std::filesystem::path(cfg.output.dir) / cfg.output.summary_file;
  SummaryTable table;
  table.add("meta", "schema_version", static_cast<long>(kRecordSchemaVersion));
  table.add("meta", "scenario", scenario_name(cfg.scenario));
  table.add("meta", "trajectories", cfg.run.trajectories);
  table.add("meta", "seed", std::to_string(cfg.run.seed));
  for (const auto& r : reports) table.add_test(r);
  table.write(result.summary_path);

  bool all_pass = true;
  for (const auto& r : reports) {
    log << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << "  stat=" << fmt_double(r.statistic)
        << " thr=" << fmt_double(r.threshold) << " n=" << r.sample_size;
    if (!r.notes.empty()) log << "  (" << r.notes << ")";
    log << "\n";
    all_pass = all_pass && r.pass;
  }
  result.reports = std::move(reports);
  result.exit_code = all_pass ? 0 : 1;
  return result;
}

/// Reads trajectory records from every *.jsonl file under runs_dir and
/// clusters their occurrence-frequency vectors into an estimated kernel.
inline RunResult run_calibrate(const RunConfig& cfg, std::ostream& log) {
  std::vector<CalibrationRun> runs;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(cfg.runs_dir))
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json rec = json::parse(line);
      if (!rec.contains("counts") || !rec.contains("n_steps")) continue;
      const auto& jc = rec["counts"];
      Eigen::VectorXd nu(static_cast<int>(jc.size()));
      double total = 0.0;
      for (std::size_t i = 0; i < jc.size(); ++i) {
        nu[static_cast<int>(i)] = jc[i].get<double>();
        total += nu[static_cast<int>(i)];
      }
      if (total <= 0.0) continue;
      nu /= total;
      runs.push_back(CalibrationRun{nu, rec["n_steps"].get<long>()});
    }
  }
  if (runs.empty()) throw error("no calibration runs found under " + cfg.runs_dir);
  const auto cal = calibrate_kernel(runs);

  std::filesystem::create_directories(cfg.output.dir);
  RunResult result;
  result.summary_path = std::filesystem::path(cfg.output.dir) / "calibration.json";
  json out;
  out["schema_version"] = kRecordSchemaVersion;
  out["threshold"] = cal.threshold;
  out["runs"] = runs.size();
  out["clusters"] = cal.kernel.n_pointers();
  json rows = json::array();
  for (int c = 0; c < cal.kernel.n_pointers(); ++c) {
    json row = json::array();
    for (int i = 0; i < cal.kernel.n_outcomes(); ++i) row.push_back(cal.kernel.p(c, i));
    rows.push_back(row);
  }
  out["rows"] = rows;
  out["run_to_cluster"] = cal.run_to_cluster;
  std::ofstream fout(result.summary_path, std::ios::binary);
  fout << out.dump(2) << "\n";
  log << "calibrated " << cal.kernel.n_pointers() << " pointer states from " << runs.size()
      << " runs (threshold " << fmt_double(cal.threshold) << ")\n  " << result.summary_path.string()
      << "\n";
  return result;
}

}  // namespace run_detail

/// Runs one configured scenario; returns artifacts and the process exit
/// code (0 ok, 1 validation failure, 3 trajectory-level invariant failure).
inline RunResult run(const RunConfig& cfg, std::ostream& log = std::cout) {
  switch (cfg.scenario) {
    case Scenario::discrete: return run_detail::run_discrete(cfg, log);
    case Scenario::diffusive: return run_detail::run_diffusive(cfg, log);
    case Scenario::jump: return run_detail::run_jump(cfg, log);
    case Scenario::quantum: return run_detail::run_quantum(cfg, log);
    case Scenario::belavkin_diffusive:
    case Scenario::belavkin_jump: return run_detail::run_belavkin(cfg, log);
    case Scenario::validate: return run_detail::run_validate(cfg, log);
    case Scenario::calibrate: return run_detail::run_calibrate(cfg, log);
  }
  throw error("unhandled scenario");
}

}  // namespace ism
