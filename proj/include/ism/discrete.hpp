#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ism/kernel.hpp"
#include "ism/parallel.hpp"
#include "ism/rng.hpp"
#include "ism/stats.hpp"

namespace ism {

enum class SamplingMode {
  predictive,  // draw i_n from pi_{n-1}; the chain's own law
  conditioned  // draw alpha from q0 once, then i.i.d. outcomes from p(.|alpha)
};

struct TrajectoryConfig {
  int steps = 100;
  std::uint64_t seed = 0;
  SamplingMode mode = SamplingMode::predictive;
  double collapse_threshold = 1.0 - 1e-6;
  int summary_stride = 1;  // step grid recorded by run_ensemble

  void validate() const {
    if (steps < 1) throw error("steps must be >= 1");
    if (!(collapse_threshold > 0.5 && collapse_threshold < 1.0))
      throw error("collapse threshold must lie in (0.5, 1)");
    if (summary_stride < 1) throw error("summary stride must be >= 1");
  }
};

struct DiscreteTrajectory {
  OutcomeRecord outcomes;
  std::vector<PointerDistribution> q_path;  // Q_0 ... Q_n
  std::optional<int> sampled_alpha;         // conditioned mode only
  std::optional<CollapseEvent> collapse;
};

inline std::optional<CollapseEvent> detect_collapse(
    const std::vector<PointerDistribution>& q_path, double threshold) {
  for (std::size_t n = 0; n < q_path.size(); ++n) {
    int arg = 0;
    const double m = q_path[n].weights().maxCoeff(&arg);
    if (m >= threshold) return CollapseEvent{static_cast<int>(n), arg};
  }
  return std::nullopt;
}

inline std::optional<CollapseEvent> detect_collapse(const DiscreteTrajectory& traj,
                                                    double threshold = 1.0 - 1e-6) {
  return detect_collapse(traj.q_path, threshold);
}

inline DiscreteTrajectory simulate_trajectory(const MeasurementKernel& k,
                                              const PointerDistribution& q0,
                                              const TrajectoryConfig& cfg, Rng& rng) {
  cfg.validate();
  DiscreteTrajectory traj;
  traj.q_path.reserve(static_cast<std::size_t>(cfg.steps) + 1);
  traj.q_path.push_back(q0);
  std::vector<int> seq;
  seq.reserve(static_cast<std::size_t>(cfg.steps));
  if (cfg.mode == SamplingMode::conditioned)
    traj.sampled_alpha = rng.discrete(q0.weights());
  PointerDistribution q = q0;
  for (int n = 0; n < cfg.steps; ++n) {
    int i;
    if (cfg.mode == SamplingMode::predictive) {
      i = rng.discrete(predictive(k, q));
    } else {
      i = rng.discrete(k.probs().row(*traj.sampled_alpha).transpose());
    }
    seq.push_back(i);
    q = bayes_update(k, q, i);
    traj.q_path.push_back(q);
  }
  traj.outcomes = OutcomeRecord::from_sequence(std::move(seq), k.n_outcomes());
  traj.collapse = detect_collapse(traj.q_path, cfg.collapse_threshold);
  return traj;
}

inline DiscreteTrajectory simulate_trajectory(const MeasurementKernel& k,
                                              const PointerDistribution& q0,
                                              const TrajectoryConfig& cfg) {
  Rng rng(cfg.seed);
  return simulate_trajectory(k, q0, cfg, rng);
}

/// Decay-rate fit for one non-target pointer on a collapsed trajectory.
/// slope estimates S(gamma|alpha), the exponential rate of property (iv).
struct RateFit {
  int alpha;
  double slope;
  double slope_stderr;
  bool low_confidence;  // window too short or slope consistent with zero
};

/// Least-squares slope of -log Q_n(alpha) over the tail window: the last
/// 50% of post-collapse steps, restricted to Q_n(alpha) > 1e-300.
/// Returns nullopt when the trajectory never collapsed.
inline std::optional<std::vector<RateFit>> fit_decay_rate(const DiscreteTrajectory& traj) {
  if (!traj.collapse) return std::nullopt;
  const int n = static_cast<int>(traj.q_path.size()) - 1;
  const int c = traj.collapse->step;
  const int gamma = traj.collapse->target;
  const int lo = c + (n - c) / 2;
  std::vector<RateFit> fits;
  const int na = traj.q_path.front().size();
  for (int a = 0; a < na; ++a) {
    if (a == gamma) continue;
    std::vector<double> xs, ys;
    for (int s = lo; s <= n; ++s) {
      const double qa = traj.q_path[static_cast<std::size_t>(s)](a);
      if (qa > 1e-300) {
        xs.push_back(static_cast<double>(s));
        ys.push_back(-std::log(qa));
      }
    }
    RateFit fit{a, 0.0, std::numeric_limits<double>::infinity(), true};
    if (xs.size() >= 3) {
      const auto line = stats::fit_line(xs, ys);
      fit.slope = line.slope;
      fit.slope_stderr = line.slope_stderr;
      fit.low_confidence = !(line.slope > 2.0 * line.slope_stderr);
    } else if (xs.size() == 2) {
      fit.slope = (ys[1] - ys[0]) / (xs[1] - xs[0]);
    }
    fits.push_back(fit);
  }
  return fits;
}

/// Per-(target, other) decay-slope sample from one trajectory.
struct RateSample {
  int target;
  int alpha;
  double slope;
  bool low_confidence;
};

struct EnsembleSummary {
  long trajectory_count = 0;
  std::vector<long> target_histogram;  // per pointer, collapsed trajectories
  long uncollapsed = 0;
  std::vector<int> grid_steps;           // recorded steps (stride grid)
  std::vector<std::vector<stats::Moments>> q_moments;  // [grid][alpha]
  std::vector<RateSample> rate_samples;  // trajectory-index order
  std::vector<int> collapse_steps;       // per trajectory, -1 if none
  Eigen::MatrixXd terminal_q;            // rows = trajectories
  std::vector<double> freq_dev_normalized;  // max_i |nu-p|/(4 sqrt(p(1-p)/n)), collapsed only

  Eigen::MatrixXd mean_q_path() const {
    Eigen::MatrixXd m(grid_steps.size(), target_histogram.size());
    for (std::size_t g = 0; g < q_moments.size(); ++g)
      for (std::size_t a = 0; a < q_moments[g].size(); ++a)
        m(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(a)) = q_moments[g][a].mean;
    return m;
  }
};

/// Seeded parallel ensemble.  Trajectory k runs on stream k of the master
/// seed; per-block partials are reduced in block order, so the result is
/// independent of the thread count.
inline EnsembleSummary run_ensemble(const MeasurementKernel& k, const PointerDistribution& q0,
                                    const TrajectoryConfig& cfg, long count, int threads = 0) {
  cfg.validate();
  if (count < 1) throw error("ensemble count must be >= 1");
  const int na = k.n_pointers();
  const int ni = k.n_outcomes();

  std::vector<int> grid;
  for (int s = 0; s <= cfg.steps; s += cfg.summary_stride) grid.push_back(s);
  if (grid.back() != cfg.steps) grid.push_back(cfg.steps);

  struct Block {
    std::vector<long> hist;
    long uncollapsed = 0;
    std::vector<std::vector<stats::Moments>> q_moments;
    std::vector<RateSample> rates;
    std::vector<double> freq_dev;
  };
  constexpr std::int64_t kBlock = 64;
  const std::int64_t n_blocks = (count + kBlock - 1) / kBlock;
  std::vector<Block> blocks(static_cast<std::size_t>(n_blocks));
  for (auto& b : blocks) {
    b.hist.assign(static_cast<std::size_t>(na), 0);
    b.q_moments.assign(grid.size(), std::vector<stats::Moments>(static_cast<std::size_t>(na)));
  }

  EnsembleSummary sum;
  sum.trajectory_count = count;
  sum.grid_steps = grid;
  sum.collapse_steps.assign(static_cast<std::size_t>(count), -1);
  sum.terminal_q.resize(count, na);

  parallel_for_indexed(
      count, threads,
      [&](std::int64_t idx) {
        Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(idx));
        const auto traj = simulate_trajectory(k, q0, cfg, rng);
        Block& b = blocks[static_cast<std::size_t>(idx / kBlock)];
        for (std::size_t g = 0; g < grid.size(); ++g) {
          const auto& q = traj.q_path[static_cast<std::size_t>(grid[g])];
          for (int a = 0; a < na; ++a) b.q_moments[g][static_cast<std::size_t>(a)].add(q(a));
        }
        sum.terminal_q.row(idx) = traj.q_path.back().weights();
        if (traj.collapse) {
          const int gamma = traj.collapse->target;
          ++b.hist[static_cast<std::size_t>(gamma)];
          sum.collapse_steps[static_cast<std::size_t>(idx)] = traj.collapse->step;
          // occurrence-frequency deviation in units of the 4-sigma binomial band
          double dev = 0.0;
          const double n = static_cast<double>(cfg.steps);
          for (int i = 0; i < ni; ++i) {
            const double p = k.p(gamma, i);
            const double band = 4.0 * std::sqrt(std::max(p * (1.0 - p), 1e-12) / n);
            const double nu = traj.outcomes.counts[i] / n;
            dev = std::max(dev, std::abs(nu - p) / band);
          }
          b.freq_dev.push_back(dev);
          if (auto fits = fit_decay_rate(traj)) {
            for (const auto& f : *fits)
              b.rates.push_back(RateSample{gamma, f.alpha, f.slope, f.low_confidence});
          }
        } else {
          ++b.uncollapsed;
        }
      },
      kBlock);

  sum.target_histogram.assign(static_cast<std::size_t>(na), 0);
  sum.q_moments.assign(grid.size(), std::vector<stats::Moments>(static_cast<std::size_t>(na)));
  for (const auto& b : blocks) {
    for (int a = 0; a < na; ++a) sum.target_histogram[static_cast<std::size_t>(a)] += b.hist[static_cast<std::size_t>(a)];
    sum.uncollapsed += b.uncollapsed;
    for (std::size_t g = 0; g < grid.size(); ++g)
      for (int a = 0; a < na; ++a)
        sum.q_moments[g][static_cast<std::size_t>(a)].merge(b.q_moments[g][static_cast<std::size_t>(a)]);
    sum.rate_samples.insert(sum.rate_samples.end(), b.rates.begin(), b.rates.end());
    sum.freq_dev_normalized.insert(sum.freq_dev_normalized.end(), b.freq_dev.begin(),
                                   b.freq_dev.end());
  }
  return sum;
}

/// One unlabeled calibration run: the occurrence-frequency vector of a long
/// peaked-state run and the number of partial measurements behind it.
struct CalibrationRun {
  Eigen::VectorXd frequencies;
  long samples;
};

struct CalibrationResult {
  MeasurementKernel kernel;
  std::vector<int> run_to_cluster;
  double threshold;
};

/// Groups runs whose frequency vectors agree within the binomial
/// fluctuation scale and estimates one kernel row per group.  Clustering is
/// single linkage on total-variation distance with threshold
/// 5*sqrt(1/(4 n_min)); a chained (non-clique) cluster means the groups
/// overlap and calibration is ambiguous.
inline CalibrationResult calibrate_kernel(const std::vector<CalibrationRun>& runs,
                                          std::vector<std::string> outcome_labels = {}) {
  if (runs.empty()) throw error("calibrate_kernel: no runs");
  const int ni = static_cast<int>(runs.front().frequencies.size());
  long n_min = runs.front().samples;
  for (const auto& r : runs) {
    if (r.frequencies.size() != ni) throw error("calibration runs have mixed dimensions");
    if (r.samples < 1) throw error("calibration run with no samples");
    n_min = std::min(n_min, r.samples);
  }
  const double threshold = 5.0 * std::sqrt(1.0 / (4.0 * static_cast<double>(n_min)));

  auto tv = [](const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    return 0.5 * (u - v).cwiseAbs().sum();
  };

  // single-linkage union-find
  const int m = static_cast<int>(runs.size());
  std::vector<int> parent(static_cast<std::size_t>(m));
  for (int r = 0; r < m; ++r) parent[static_cast<std::size_t>(r)] = r;
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  for (int r = 0; r < m; ++r)
    for (int s = r + 1; s < m; ++s)
      if (tv(runs[static_cast<std::size_t>(r)].frequencies,
             runs[static_cast<std::size_t>(s)].frequencies) <= threshold) {
        parent[static_cast<std::size_t>(find(r))] = find(s);
      }

  // cluster ids in order of first appearance
  std::vector<int> cluster_of(static_cast<std::size_t>(m), -1);
  std::vector<int> roots;
  for (int r = 0; r < m; ++r) {
    const int root = find(r);
    int id = -1;
    for (std::size_t c = 0; c < roots.size(); ++c)
      if (roots[c] == root) id = static_cast<int>(c);
    if (id < 0) {
      id = static_cast<int>(roots.size());
      roots.push_back(root);
    }
    cluster_of[static_cast<std::size_t>(r)] = id;
  }

  // clusters must be cliques: chaining beyond the threshold is ambiguous
  for (int r = 0; r < m; ++r)
    for (int s = r + 1; s < m; ++s)
      if (cluster_of[static_cast<std::size_t>(r)] == cluster_of[static_cast<std::size_t>(s)] &&
          tv(runs[static_cast<std::size_t>(r)].frequencies,
             runs[static_cast<std::size_t>(s)].frequencies) > threshold)
        throw calibration_ambiguous_error(
            "calibration clusters overlap: chained runs exceed the separation threshold");

  const int nc = static_cast<int>(roots.size());
  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(nc, ni);
  Eigen::VectorXd weight = Eigen::VectorXd::Zero(nc);
  for (int r = 0; r < m; ++r) {
    const int c = cluster_of[static_cast<std::size_t>(r)];
    const double w = static_cast<double>(runs[static_cast<std::size_t>(r)].samples);
    rows.row(c) += w * runs[static_cast<std::size_t>(r)].frequencies.transpose();
    weight[c] += w;
  }
  for (int c = 0; c < nc; ++c) {
    rows.row(c) /= weight[c];
    rows.row(c) /= rows.row(c).sum();
  }

  std::vector<std::string> pointer_labels;
  for (int c = 0; c < nc; ++c) pointer_labels.push_back("cluster" + std::to_string(c));
  if (outcome_labels.empty())
    for (int i = 0; i < ni; ++i) outcome_labels.push_back("i" + std::to_string(i));
  return CalibrationResult{
      MeasurementKernel(std::move(pointer_labels), std::move(outcome_labels), rows),
      cluster_of, threshold};
}

}  // namespace ism
