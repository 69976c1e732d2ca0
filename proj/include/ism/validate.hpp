#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ism/discrete.hpp"
#include "ism/kernel.hpp"
#include "ism/scaling.hpp"
#include "ism/stats.hpp"

namespace ism {

/// One statistical check.  Every report obeys pass == (statistic <= threshold);
/// the statistic is normalized so that the threshold carries the stated
/// significance (4-sigma bands map to threshold 1, chi-square and KS use
/// their critical values).
struct TestReport {
  std::string name;
  double statistic = 0.0;
  double threshold = 0.0;
  bool pass = false;
  long sample_size = 0;
  std::string notes;
  bool conclusive = true;

  static TestReport make(std::string name, double statistic, double threshold,
                         long sample_size, std::string notes = {}, bool conclusive = true) {
    TestReport r;
    r.name = std::move(name);
    r.statistic = statistic;
    r.threshold = threshold;
    r.pass = conclusive && statistic <= threshold;
    r.sample_size = sample_size;
    r.notes = std::move(notes);
    r.conclusive = conclusive;
    return r;
  }
};

inline constexpr double kSignificance = 1e-3;
inline constexpr double kSigmaBand = 4.0;

/// Martingale check from per-step ensemble moments:
/// |mean Q_n(alpha) - Q_0(alpha)| < 4 std / sqrt(count) at every grid step.
/// The statistic is the worst deviation in units of the band.
inline TestReport test_martingale(const std::vector<std::vector<stats::Moments>>& q_moments,
                                  const std::vector<int>& grid_steps,
                                  const PointerDistribution& q0) {
  double worst = 0.0;
  long count = 0;
  std::string worst_at;
  for (std::size_t g = 0; g < q_moments.size(); ++g) {
    for (std::size_t a = 0; a < q_moments[g].size(); ++a) {
      const auto& m = q_moments[g][a];
      count = std::max(count, m.count);
      const double band = kSigmaBand * m.stderr_mean();
      const double dev = std::abs(m.mean - q0(static_cast<int>(a)));
      const double score = band > 0.0 ? dev / band : (dev > 0.0 ? 1e300 : 0.0);
      if (score > worst) {
        worst = score;
        worst_at = "step " + std::to_string(grid_steps[g]) + " alpha " + std::to_string(a);
      }
    }
  }
  return TestReport::make("martingale", worst, 1.0, count,
                          worst_at.empty() ? "" : "worst at " + worst_at);
}

/// Martingale check from raw per-path samples: q_at_step[g] has one row per
/// path, one column per pointer state.
inline TestReport test_martingale(const std::vector<Eigen::MatrixXd>& q_at_step,
                                  const std::vector<int>& grid_steps,
                                  const PointerDistribution& q0) {
  if (q_at_step.empty()) throw error("test_martingale: no samples");
  if (q_at_step.front().rows() < 100) throw error("test_martingale: needs >= 100 paths");
  std::vector<std::vector<stats::Moments>> moments(q_at_step.size());
  for (std::size_t g = 0; g < q_at_step.size(); ++g) {
    moments[g].resize(static_cast<std::size_t>(q_at_step[g].cols()));
    for (long r = 0; r < q_at_step[g].rows(); ++r)
      for (long a = 0; a < q_at_step[g].cols(); ++a)
        moments[g][static_cast<std::size_t>(a)].add(q_at_step[g](r, a));
  }
  return test_martingale(moments, grid_steps, q0);
}

/// Chi-square goodness of fit of the collapse-target histogram against q0
/// at significance 1e-3.  Uncollapsed paths are excluded with a note; more
/// than 5% excluded makes the report inconclusive.
inline TestReport test_collapse_law(const std::vector<long>& target_histogram,
                                    long uncollapsed, const PointerDistribution& q0) {
  if (static_cast<int>(target_histogram.size()) != q0.size())
    throw error("histogram/pointer dimension mismatch");
  long collapsed = 0;
  for (long h : target_histogram) collapsed += h;
  const long total = collapsed + uncollapsed;
  if (collapsed == 0) return TestReport::make("collapse_law", 1e300, 0.0, 0, "no collapsed paths", false);

  std::string notes;
  bool conclusive = true;
  if (uncollapsed > 0) {
    notes = std::to_string(uncollapsed) + " uncollapsed paths excluded";
    if (static_cast<double>(uncollapsed) > 0.05 * static_cast<double>(total)) {
      conclusive = false;
      notes += " (> 5%: inconclusive)";
    }
  }
  double chi2 = 0.0;
  int dof = -1;
  for (int a = 0; a < q0.size(); ++a) {
    const double expected = q0(a) * static_cast<double>(collapsed);
    if (expected <= 0.0) continue;
    const double diff = static_cast<double>(target_histogram[static_cast<std::size_t>(a)]) -
                        expected;
    chi2 += diff * diff / expected;
    ++dof;
  }
  if (dof < 1)
    return TestReport::make("collapse_law", 0.0, 1.0, collapsed,
                            "single category; trivially consistent");
  const double crit = stats::chi2_critical(dof, kSignificance);
  return TestReport::make("collapse_law", chi2, crit, collapsed, notes, conclusive);
}

/// Ensemble-median decay slope within rel_tol of the reference rate for
/// every (target, other) pair that has samples.  References below abs_floor
/// (degenerate kernels: no information gain) are tested additively.
inline TestReport test_rate(const std::vector<RateSample>& samples,
                            const Eigen::MatrixXd& reference_rates, double rel_tol = 0.10,
                            double abs_floor = 1e-2) {
  std::map<std::pair<int, int>, std::vector<double>> by_pair;
  for (const auto& s : samples) by_pair[{s.target, s.alpha}].push_back(s.slope);
  if (by_pair.empty())
    return TestReport::make("rate", 1e300, 0.0, 0, "no rate samples", false);
  double worst = 0.0;
  long count = 0;
  std::string notes;
  for (auto& [pair, slopes] : by_pair) {
    if (slopes.size() < 20) continue;
    const double ref = reference_rates(pair.first, pair.second);
    if (!std::isfinite(ref)) continue;  // no usable reference for this pair
    count += static_cast<long>(slopes.size());
    const double med = stats::median(slopes);
    const double scale = std::max(std::abs(ref), abs_floor);
    worst = std::max(worst, std::abs(med - ref) / (rel_tol * scale));
    notes += "(" + std::to_string(pair.first) + "," + std::to_string(pair.second) +
             "): median " + std::to_string(med) + " vs " + std::to_string(ref) + "; ";
  }
  if (count == 0)
    return TestReport::make("rate", 1e300, 0.0, 0, "too few samples per pair", false);
  return TestReport::make("rate", worst, 1.0, count, notes);
}

/// Relative-entropy reference matrix S(gamma|alpha) for a kernel.
inline Eigen::MatrixXd rate_reference(const MeasurementKernel& k) {
  Eigen::MatrixXd s(k.n_pointers(), k.n_pointers());
  for (int g = 0; g < k.n_pointers(); ++g)
    for (int a = 0; a < k.n_pointers(); ++a) s(g, a) = g == a ? 0.0 : relative_entropy(k, g, a);
  return s;
}

/// Decay-slope fits on a recorded continuous path: least squares of
/// -log Q_t(alpha) over the last half of the post-collapse record, with the
/// same 1e-300 floor as the discrete fit.  Slopes are per unit time.
inline std::optional<std::vector<RateFit>> fit_decay_rate_path(
    const std::vector<double>& times, const Eigen::MatrixXd& q_path,
    const std::optional<ContinuousCollapse>& collapse) {
  if (!collapse) return std::nullopt;
  const double t_end = times.back();
  const double lo = collapse->time + 0.5 * (t_end - collapse->time);
  std::vector<RateFit> fits;
  for (int a = 0; a < q_path.cols(); ++a) {
    if (a == collapse->target) continue;
    std::vector<double> xs, ys;
    for (std::size_t s = 0; s < times.size(); ++s) {
      const double qa = q_path(static_cast<long>(s), a);
      if (times[s] >= lo && qa > 1e-300) {
        xs.push_back(times[s]);
        ys.push_back(-std::log(qa));
      }
    }
    RateFit fit{a, 0.0, std::numeric_limits<double>::infinity(), true};
    if (xs.size() >= 3) {
      const auto line = stats::fit_line(xs, ys);
      fit.slope = line.slope;
      fit.slope_stderr = line.slope_stderr;
      fit.low_confidence = !(line.slope > 2.0 * line.slope_stderr);
    }
    fits.push_back(fit);
  }
  return fits;
}

/// Operational decay-rate reference for the Poissonian limit: median fitted
/// slope per (target, alpha) pair over an ensemble of exact
/// exponential-martingale paths.  Pairs without enough collapsed samples
/// are left at NaN.
inline Eigen::MatrixXd rate_reference(const JumpModel& m, const PointerDistribution& q0,
                                      double horizon, int n_paths, std::uint64_t seed) {
  const int na = m.n_pointers();
  std::map<std::pair<int, int>, std::vector<double>> slopes;
  for (int p = 0; p < n_paths; ++p) {
    const auto path =
        integrate_jump_exact(m, q0, horizon, derive_stream_seed(seed, static_cast<std::uint64_t>(p)));
    if (auto fits = fit_decay_rate_path(path.times, path.q_path, path.collapse))
      for (const auto& f : *fits)
        slopes[{path.collapse->target, f.alpha}].push_back(f.slope);
  }
  Eigen::MatrixXd ref = Eigen::MatrixXd::Constant(na, na, std::numeric_limits<double>::quiet_NaN());
  for (auto& [pair, xs] : slopes)
    if (xs.size() >= 20) ref(pair.first, pair.second) = stats::median(xs);
  return ref;
}

/// Operational decay-rate reference for the diffusive limit: median fitted
/// slope over a high-resolution (fine-dt) ensemble.
inline Eigen::MatrixXd rate_reference(const DiffusiveModel& m, const PointerDistribution& q0,
                                      double horizon, double dt_fine, int n_paths,
                                      std::uint64_t seed) {
  const int na = m.n_pointers();
  SdeOptions opts;
  opts.record_stride = std::max(1L, static_cast<long>(std::llround(horizon / dt_fine)) / 400);
  std::map<std::pair<int, int>, std::vector<double>> slopes;
  for (int p = 0; p < n_paths; ++p) {
    const auto path = integrate_diffusive(m, q0, horizon, dt_fine,
                                          derive_stream_seed(seed, static_cast<std::uint64_t>(p)),
                                          DiffusiveMode::unconditioned, opts);
    if (auto fits = fit_decay_rate_path(path.times, path.q_path, path.collapse))
      for (const auto& f : *fits)
        slopes[{path.collapse->target, f.alpha}].push_back(f.slope);
  }
  Eigen::MatrixXd ref = Eigen::MatrixXd::Constant(na, na, std::numeric_limits<double>::quiet_NaN());
  for (auto& [pair, xs] : slopes)
    if (xs.size() >= 20) ref(pair.first, pair.second) = stats::median(xs);
  return ref;
}

/// Second-moment check of noise increments against G(p0) dt within 4 sigma.
/// `second_moments(i,j)` is the average of dX_i dX_j over the samples.
inline TestReport test_increment_covariance(const Eigen::MatrixXd& second_moments,
                                            long sample_count, const Eigen::VectorXd& p0,
                                            double dt) {
  const auto g = NoiseCovariance::from_p0(p0).g;
  double worst = 0.0;
  for (int i = 0; i < g.rows(); ++i)
    for (int j = 0; j < g.cols(); ++j) {
      // Var(x_i x_j) = G_ii G_jj + G_ij^2 for centred Gaussians
      const double var = (g(i, i) * g(j, j) + g(i, j) * g(i, j)) * dt * dt;
      const double band = kSigmaBand * std::sqrt(var / static_cast<double>(sample_count));
      worst = std::max(worst, std::abs(second_moments(i, j) - g(i, j) * dt) / band);
    }
  return TestReport::make("increment_covariance", worst, 1.0, sample_count);
}

inline TestReport test_increment_covariance(const std::vector<Eigen::VectorXd>& increments,
                                            const Eigen::VectorXd& p0, double dt) {
  if (increments.empty()) throw error("test_increment_covariance: no samples");
  Eigen::MatrixXd mom = Eigen::MatrixXd::Zero(p0.size(), p0.size());
  for (const auto& dx : increments) mom += dx * dx.transpose();
  mom /= static_cast<double>(increments.size());
  return test_increment_covariance(mom, static_cast<long>(increments.size()), p0, dt);
}

/// Mean-zero check of the compensated jump martingales Y_t(i) = N_t - int <theta>,
/// within 4 std/sqrt(paths) at each supplied check time.
/// y_at_time[t] holds one row per path, one column per channel.
inline TestReport test_jump_compensator(const std::vector<Eigen::MatrixXd>& y_at_time,
                                        const std::vector<double>& check_times) {
  if (y_at_time.empty()) throw error("test_jump_compensator: no samples");
  double worst = 0.0;
  long count = 0;
  std::string worst_at;
  for (std::size_t t = 0; t < y_at_time.size(); ++t) {
    for (long c = 0; c < y_at_time[t].cols(); ++c) {
      stats::Moments m;
      for (long r = 0; r < y_at_time[t].rows(); ++r) m.add(y_at_time[t](r, c));
      count = std::max(count, m.count);
      const double band = kSigmaBand * m.stderr_mean();
      const double score = band > 0.0 ? std::abs(m.mean) / band : 0.0;
      if (score > worst) {
        worst = score;
        worst_at = "t=" + std::to_string(check_times[t]) + " channel " + std::to_string(c);
      }
    }
  }
  return TestReport::make("jump_compensator", worst, 1.0, count,
                          worst_at.empty() ? "" : "worst at " + worst_at);
}

/// Occupancy-weighted intensity bins for the state-binned jump-rate check:
/// while the mean intensity <theta(i)>_t sits in a bin, time accrues to the
/// bin and each fired jump increments its count.
struct IntensityBins {
  double lo = 0.0, hi = 1.0;
  int n_bins = 8;
  // [channel][bin]
  std::vector<std::vector<double>> time;
  std::vector<std::vector<double>> rate_time;  // integral of the expected rate
  std::vector<std::vector<long>> jumps;

  IntensityBins(int channels, double lo_in, double hi_in, int n = 8)
      : lo(lo_in), hi(hi_in), n_bins(n) {
    time.assign(static_cast<std::size_t>(channels), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    rate_time.assign(static_cast<std::size_t>(channels), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    jumps.assign(static_cast<std::size_t>(channels), std::vector<long>(static_cast<std::size_t>(n), 0));
  }

  int bin_of(double rate) const {
    const int b = static_cast<int>((rate - lo) / (hi - lo) * n_bins);
    return std::clamp(b, 0, n_bins - 1);
  }

  void observe(int channel, double rate, double dt, bool jumped) {
    const int b = bin_of(rate);
    time[static_cast<std::size_t>(channel)][static_cast<std::size_t>(b)] += dt;
    rate_time[static_cast<std::size_t>(channel)][static_cast<std::size_t>(b)] += rate * dt;
    if (jumped) ++jumps[static_cast<std::size_t>(channel)][static_cast<std::size_t>(b)];
  }

  void merge(const IntensityBins& o) {
    for (std::size_t c = 0; c < time.size(); ++c)
      for (std::size_t b = 0; b < time[c].size(); ++b) {
        time[c][b] += o.time[c][b];
        rate_time[c][b] += o.rate_time[c][b];
        jumps[c][b] += o.jumps[c][b];
      }
  }
};

/// Empirical jump rate per intensity bin vs the occupancy-weighted expected
/// rate, within 4 sigma Poisson error.  Bins expecting fewer than 25 jumps
/// are skipped.
inline TestReport test_jump_intensity(const IntensityBins& bins) {
  double worst = 0.0;
  long total_jumps = 0;
  for (std::size_t c = 0; c < bins.time.size(); ++c) {
    for (std::size_t b = 0; b < bins.time[c].size(); ++b) {
      const double expected = bins.rate_time[c][b];
      if (expected < 25.0) continue;
      const double band = kSigmaBand * std::sqrt(expected);
      worst = std::max(worst,
                       std::abs(static_cast<double>(bins.jumps[c][b]) - expected) / band);
      total_jumps += bins.jumps[c][b];
    }
  }
  if (total_jumps == 0)
    return TestReport::make("jump_intensity", 1e300, 0.0, 0, "no populated bins", false);
  return TestReport::make("jump_intensity", worst, 1.0, total_jumps);
}

/// Two-sample Kolmogorov-Smirnov equivalence at significance 1e-3.
inline TestReport test_equivalence(const std::vector<double>& a, const std::vector<double>& b,
                                   double significance = kSignificance,
                                   const std::string& name = "equivalence") {
  const double d = stats::ks_statistic(a, b);
  const double crit = stats::ks_critical(a.size(), b.size(), significance);
  return TestReport::make(name, d, crit, static_cast<long>(std::min(a.size(), b.size())));
}

/// Exact exchangeability: sequence_probability must be bit-identical over
/// all permutations of every sequence up to max_len.  The statistic is the
/// largest relative spread observed.
inline TestReport test_exchangeability(const MeasurementKernel& k,
                                       const PointerDistribution& q0, int max_len = 6) {
  const int ni = k.n_outcomes();
  double worst = 0.0;
  long checked = 0;
  for (int len = 1; len <= max_len; ++len) {
    std::vector<int> seq(static_cast<std::size_t>(len), 0);
    // enumerate all |I|^len sequences via an odometer
    for (;;) {
      std::vector<int> sorted = seq;
      std::sort(sorted.begin(), sorted.end());
      const double ref = sequence_probability(k, q0, sorted);
      do {
        const double p = sequence_probability(k, q0, sorted);
        worst = std::max(worst, std::abs(p - ref) / std::max(ref, 1e-300));
        ++checked;
      } while (std::next_permutation(sorted.begin(), sorted.end()));
      int pos = len - 1;
      while (pos >= 0 && seq[static_cast<std::size_t>(pos)] == ni - 1) {
        seq[static_cast<std::size_t>(pos)] = 0;
        --pos;
      }
      if (pos < 0) break;
      ++seq[static_cast<std::size_t>(pos)];
    }
  }
  return TestReport::make("exchangeability", worst, 1e-14, checked);
}

}  // namespace ism
