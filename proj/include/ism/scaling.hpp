#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ism/errors.hpp"
#include "ism/kernel.hpp"
#include "ism/rng.hpp"

namespace ism {

/// Diffusive scaling-limit data: p(i|alpha) ~ p0(i)(1 + sqrt(delta) Gamma(i|alpha)).
struct DiffusiveModel {
  Eigen::VectorXd p0;     // outcome law, all entries > 0
  Eigen::MatrixXd gamma;  // |A| x |I|

  DiffusiveModel(Eigen::VectorXd p0_in, Eigen::MatrixXd gamma_in)
      : p0(std::move(p0_in)), gamma(std::move(gamma_in)) {
    if (gamma.cols() != p0.size()) throw error("gamma/p0 dimension mismatch");
    if (p0.minCoeff() <= 0.0)
      throw not_diffusive_error("diffusive limit requires all p0(i) > 0");
    if (std::abs(p0.sum() - 1.0) > kExactTol) throw error("p0 must sum to 1");
    for (int a = 0; a < gamma.rows(); ++a)
      if (std::abs(p0.dot(gamma.row(a).transpose())) > 1e-10)
        throw error("sum_i p0(i) Gamma(i|alpha) must vanish for every alpha");
    for (int a = 0; a < gamma.rows(); ++a)
      for (int b = a + 1; b < gamma.rows(); ++b)
        if ((gamma.row(a) - gamma.row(b)).cwiseAbs().maxCoeff() <= kDegeneracyTol)
          degenerate = true;
  }

  int n_pointers() const { return static_cast<int>(gamma.rows()); }
  int n_outcomes() const { return static_cast<int>(p0.size()); }
  bool degenerate = false;
};

/// Quadratic variation of the driving martingales:
/// G(i,j) = p0(i) delta_ij - p0(i) p0(j); symmetric, PSD, zero row sums.
struct NoiseCovariance {
  Eigen::MatrixXd g;

  static NoiseCovariance from_p0(const Eigen::VectorXd& p0) {
    NoiseCovariance cov;
    cov.g = Eigen::MatrixXd(p0.asDiagonal()) - p0 * p0.transpose();
    return cov;
  }
};

/// Gaussian increment with covariance G(p0) dt and exactly zero sum:
///   dX(i) = sqrt(dt) (sqrt(p0_i) xi_i - p0_i sum_j sqrt(p0_j) xi_j),
/// with the last component closed to make the sum vanish identically.
inline Eigen::VectorXd sample_noise_increment(const Eigen::VectorXd& p0, double dt, Rng& rng) {
  if (!(dt > 0.0)) throw error("dt must be positive");
  const int ni = static_cast<int>(p0.size());
  Eigen::VectorXd xi(ni);
  for (int i = 0; i < ni; ++i) xi[i] = rng.normal();
  const double sq_dt = std::sqrt(dt);
  double s = 0.0;
  for (int i = 0; i < ni; ++i) s += std::sqrt(p0[i]) * xi[i];
  Eigen::VectorXd dx(ni);
  for (int i = 0; i < ni; ++i) dx[i] = sq_dt * (std::sqrt(p0[i]) * xi[i] - p0[i] * s);
  double head = 0.0;
  for (int i = 0; i < ni - 1; ++i) head += dx[i];
  dx[ni - 1] = -head;
  return dx;
}

struct DiffusiveExtraction {
  DiffusiveModel model;
  double residual;  // max |p_delta - p0 (1 + sqrt(delta) Gamma)| over both inputs
};

/// Recovers (p0, Gamma) from the same kernel family evaluated at two small
/// delta values, by linear extrapolation in sqrt(delta); Gamma rows are then
/// projected onto sum_i p0 Gamma = 0.
inline DiffusiveExtraction diffusive_from_kernel(const MeasurementKernel& k1, double delta1,
                                                 const MeasurementKernel& k2, double delta2) {
  if (k1.n_pointers() != k2.n_pointers() || k1.n_outcomes() != k2.n_outcomes())
    throw error("kernel family dimensions differ");
  if (!(delta1 > 0.0) || !(delta2 > 0.0) || delta1 == delta2)
    throw error("need two distinct positive delta values");
  const double s1 = std::sqrt(delta1), s2 = std::sqrt(delta2);
  const int na = k1.n_pointers(), ni = k1.n_outcomes();

  // p0 from the extrapolation to sqrt(delta) = 0, averaged over alpha
  Eigen::VectorXd p0 = Eigen::VectorXd::Zero(ni);
  for (int a = 0; a < na; ++a)
    for (int i = 0; i < ni; ++i)
      p0[i] += (s1 * k2.p(a, i) - s2 * k1.p(a, i)) / (s1 - s2) / static_cast<double>(na);
  if (p0.minCoeff() <= 1e-12)
    throw not_diffusive_error(
        "extrapolated p0 has a vanishing entry; use the Poissonian jump model");
  p0 /= p0.sum();

  Eigen::MatrixXd gamma(na, ni);
  for (int a = 0; a < na; ++a)
    for (int i = 0; i < ni; ++i)
      gamma(a, i) = (k1.p(a, i) - k2.p(a, i)) / ((s1 - s2) * p0[i]);
  for (int a = 0; a < na; ++a) gamma.row(a).array() -= p0.dot(gamma.row(a).transpose());

  double residual = 0.0;
  for (int a = 0; a < na; ++a)
    for (int i = 0; i < ni; ++i) {
      residual = std::max(residual,
                          std::abs(k1.p(a, i) - p0[i] * (1.0 + s1 * gamma(a, i))));
      residual = std::max(residual,
                          std::abs(k2.p(a, i) - p0[i] * (1.0 + s2 * gamma(a, i))));
    }
  return DiffusiveExtraction{DiffusiveModel(std::move(p0), std::move(gamma)), residual};
}

struct ContinuousCollapse {
  double time;
  int target;
};

struct SdeOptions {
  int record_stride = 1;
  double collapse_threshold = 1.0 - 1e-3;
  double boundary_tol = 1e-9;   // accepted overshoot of Q outside [0,1]
  double max_rel_update = 0.5;  // per-step relative change cap
  int max_halvings = 40;
  double thinning_cap = 0.1;    // max intensity*dt per thinning substep
};

struct DiffusivePath {
  std::vector<double> times;
  Eigen::MatrixXd q_path;  // rows = recorded times, cols = |A|
  Eigen::MatrixXd x_path;  // cumulative martingale X_t(i)
  Eigen::MatrixXd w_path;  // cumulative centred counting process W_t(i)
  Eigen::MatrixXd quad_variation;  // sum of dX dX^T over all steps
  std::optional<ContinuousCollapse> collapse;
  std::optional<int> conditioned_alpha;
  long rejected_steps = 0;
  double max_renorm_drift = 0.0;  // max |sum Q - 1| before renormalizing
};

enum class DiffusiveMode { unconditioned, conditioned };

/// Raw Euler update of the diffusive Bayes SDE
///   dQ(alpha) = Q(alpha) sum_i (Gamma(i|alpha) - <Gamma(i)>) dX(i),
/// not renormalized.
inline Eigen::VectorXd diffusive_step_raw(const DiffusiveModel& m, const Eigen::VectorXd& q,
                                          const Eigen::VectorXd& dx) {
  const Eigen::VectorXd mean_gamma = m.gamma.transpose() * q;  // <Gamma(i)>
  Eigen::VectorXd out = q;
  for (int a = 0; a < m.n_pointers(); ++a) {
    double incr = 0.0;
    for (int i = 0; i < m.n_outcomes(); ++i)
      incr += (m.gamma(a, i) - mean_gamma[i]) * dx[i];
    out[a] += q[a] * incr;
  }
  return out;
}

/// Euler-Maruyama integration of the diffusive limit.  Q is renormalized
/// after every accepted step; steps pushing any Q(alpha) outside
/// [-tol, 1+tol] or beyond the relative-update cap are rejected and retried
/// as two half steps with fresh noise.
inline DiffusivePath integrate_diffusive(const DiffusiveModel& m, const PointerDistribution& q0,
                                         double horizon, double dt, std::uint64_t seed,
                                         DiffusiveMode mode = DiffusiveMode::unconditioned,
                                         const SdeOptions& opts = {}) {
  if (!(horizon > 0.0) || !(dt > 0.0)) throw error("horizon and dt must be positive");
  const int na = m.n_pointers(), ni = m.n_outcomes();
  const long n_steps = static_cast<long>(std::llround(horizon / dt));
  if (n_steps < 1) throw error("horizon shorter than dt");
  Rng rng(seed);

  DiffusivePath path;
  if (mode == DiffusiveMode::conditioned) path.conditioned_alpha = rng.discrete(q0.weights());
  const Eigen::MatrixXd g_cov = NoiseCovariance::from_p0(m.p0).g;

  Eigen::VectorXd q = q0.weights();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(ni);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(ni);
  path.quad_variation = Eigen::MatrixXd::Zero(ni, ni);

  const long n_records = (n_steps + opts.record_stride - 1) / opts.record_stride + 1;
  path.times.reserve(static_cast<std::size_t>(n_records));
  path.q_path.resize(n_records, na);
  path.x_path.resize(n_records, ni);
  path.w_path.resize(n_records, ni);
  long rec = 0;
  auto record = [&](double t) {
    path.times.push_back(t);
    path.q_path.row(rec) = q;
    path.x_path.row(rec) = x;
    path.w_path.row(rec) = w;
    ++rec;
  };
  record(0.0);
  {
    int arg = 0;
    if (q.maxCoeff(&arg) >= opts.collapse_threshold)
      path.collapse = ContinuousCollapse{0.0, arg};
  }

  // One Euler sub-step of length h; recursively halves on rejection.
  auto advance = [&](auto&& self, double t, double h, int depth) -> void {
    const Eigen::VectorXd mean_gamma = m.gamma.transpose() * q;
    Eigen::VectorXd dx = sample_noise_increment(m.p0, h, rng);
    if (path.conditioned_alpha) {
      // Girsanov drift of X under P_alpha: G (Gamma(.|alpha) - <Gamma>) dt
      const Eigen::VectorXd shift =
          g_cov * (m.gamma.row(*path.conditioned_alpha).transpose() - mean_gamma) * h;
      dx += shift;
      double head = 0.0;
      for (int i = 0; i < ni - 1; ++i) head += dx[i];
      dx[ni - 1] = -head;
    }
    Eigen::VectorXd proposal = diffusive_step_raw(m, q, dx);
    bool ok = proposal.minCoeff() >= -opts.boundary_tol &&
              proposal.maxCoeff() <= 1.0 + opts.boundary_tol;
    if (ok)
      for (int a = 0; a < na; ++a)
        if (std::abs(proposal[a] - q[a]) > opts.max_rel_update * std::max(q[a], 1e-12)) {
          ok = false;
          break;
        }
    if (!ok) {
      if (depth >= opts.max_halvings)
        throw step_size_error("diffusive step rejected " + std::to_string(depth) +
                              " times; decrease dt");
      ++path.rejected_steps;
      self(self, t, 0.5 * h, depth + 1);
      self(self, t + 0.5 * h, 0.5 * h, depth + 1);
      return;
    }
    x += dx;
    w += dx + m.p0.cwiseProduct(mean_gamma) * h;
    path.quad_variation += dx * dx.transpose();
    path.max_renorm_drift = std::max(path.max_renorm_drift, std::abs(proposal.sum() - 1.0));
    for (int a = 0; a < na; ++a)
      if (proposal[a] < 0.0) proposal[a] = 0.0;
    q = proposal / proposal.sum();
    if (!path.collapse) {
      int arg = 0;
      if (q.maxCoeff(&arg) >= opts.collapse_threshold)
        path.collapse = ContinuousCollapse{t + h, arg};
    }
  };

  for (long s = 0; s < n_steps; ++s) {
    advance(advance, static_cast<double>(s) * dt, dt, 0);
    if ((s + 1) % opts.record_stride == 0 || s + 1 == n_steps)
      record(static_cast<double>(s + 1) * dt);
  }
  path.q_path.conservativeResize(rec, na);
  path.x_path.conservativeResize(rec, ni);
  path.w_path.conservativeResize(rec, ni);
  return path;
}

/// Poissonian scaling-limit data: one distinguished outcome i* whose
/// probability survives as delta -> 0 and jump intensities theta(i|alpha)
/// for the other outcomes.
struct JumpModel {
  int star;
  Eigen::MatrixXd theta;  // |A| x |I|, column `star` is ignored/zero

  JumpModel(int star_in, Eigen::MatrixXd theta_in) : star(star_in), theta(std::move(theta_in)) {
    if (star < 0 || star >= theta.cols()) throw error("star outcome out of range");
    for (int a = 0; a < theta.rows(); ++a)
      for (int i = 0; i < theta.cols(); ++i) {
        if (i == static_cast<int>(star)) continue;
        if (!(theta(a, i) > 0.0))
          throw error("jump intensities theta(i|alpha) must be strictly positive");
      }
    for (int a = 0; a < theta.rows(); ++a)
      for (int b = a + 1; b < theta.rows(); ++b) {
        double diff = 0.0;
        for (int i = 0; i < theta.cols(); ++i)
          if (i != star) diff = std::max(diff, std::abs(theta(a, i) - theta(b, i)));
        if (diff <= kDegeneracyTol) degenerate = true;
      }
  }

  int n_pointers() const { return static_cast<int>(theta.rows()); }
  int n_outcomes() const { return static_cast<int>(theta.cols()); }
  /// sigma(i*|alpha) = sum_{i != i*} theta(i|alpha)
  double total_rate(int alpha) const {
    double s = 0.0;
    for (int i = 0; i < theta.cols(); ++i)
      if (i != star) s += theta(alpha, i);
    return s;
  }
  bool degenerate = false;
};

/// <theta(i)>_t = sum_alpha theta(i|alpha) Q_t(alpha), zero at i*.
inline Eigen::VectorXd mean_intensity(const JumpModel& m, const Eigen::VectorXd& q) {
  Eigen::VectorXd out = m.theta.transpose() * q;
  out[m.star] = 0.0;
  return out;
}

struct JumpEvent {
  double time;
  int channel;
};

struct JumpPath {
  std::vector<double> times;
  Eigen::MatrixXd q_path;
  std::vector<JumpEvent> jump_events;
  Eigen::MatrixXd n_path;  // counts N_t(i); column i* holds M_t(i*) = -sum N_t(i)
  Eigen::MatrixXd y_path;  // compensated martingales Y_t(i); i* closes the sum
  std::optional<ContinuousCollapse> collapse;
  std::optional<int> conditioned_alpha;  // set by the exact construction

  Eigen::VectorXd terminal_q() const { return q_path.row(q_path.rows() - 1); }
  long total_jumps() const { return static_cast<long>(jump_events.size()); }
};

namespace detail {

struct JumpRecorder {
  JumpPath& path;
  long rec = 0;

  void record(double t, const Eigen::VectorXd& q, const Eigen::VectorXd& n_counts,
              const Eigen::VectorXd& compensator, int star) {
    if (rec == path.q_path.rows()) {
      path.q_path.conservativeResize(rec + 64, Eigen::NoChange);
      path.n_path.conservativeResize(rec + 64, Eigen::NoChange);
      path.y_path.conservativeResize(rec + 64, Eigen::NoChange);
    }
    path.times.push_back(t);
    path.q_path.row(rec) = q;
    Eigen::VectorXd n_row = n_counts;
    n_row[star] = -n_counts.sum() + n_counts[star];
    path.n_path.row(rec) = n_row;
    Eigen::VectorXd y_row = n_counts - compensator;
    y_row[star] = 0.0;
    y_row[star] = -y_row.sum();
    path.y_path.row(rec) = y_row;
    ++rec;
  }

  void finish(int na, int ni) {
    path.q_path.conservativeResize(rec, na);
    path.n_path.conservativeResize(rec, ni);
    path.y_path.conservativeResize(rec, ni);
  }
};

}  // namespace detail

/// Thinning integrator for the jump limit.  Each substep fires channel i
/// with probability <theta(i)>_t dt and applies the Euler update of
///   dQ(alpha) = Q(alpha) sum_{i != i*} (theta(i|alpha)/<theta(i)> - 1) dY(i),
/// dY = dN - <theta> dt.  Substeps shrink automatically so that
/// intensity*dt stays below the thinning cap, and a substep producing two
/// simultaneous jumps is redone at half length.
/// The observer is called once per substep with
/// (t, dt, <theta>, jump flags).
template <class Observer>
JumpPath integrate_jump_thinning_observed(const JumpModel& m, const PointerDistribution& q0,
                                          double horizon, double dt, std::uint64_t seed,
                                          Observer&& observe, const SdeOptions& opts = {}) {
  if (!(horizon > 0.0) || !(dt > 0.0)) throw error("horizon and dt must be positive");
  const int na = m.n_pointers(), ni = m.n_outcomes();
  const long n_steps = static_cast<long>(std::llround(horizon / dt));
  if (n_steps < 1) throw error("horizon shorter than dt");
  Rng rng(seed);

  JumpPath path;
  const long n_records = (n_steps + opts.record_stride - 1) / opts.record_stride + 1;
  path.q_path.resize(n_records, na);
  path.n_path.resize(n_records, ni);
  path.y_path.resize(n_records, ni);
  detail::JumpRecorder recorder{path};

  Eigen::VectorXd q = q0.weights();
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(ni);
  Eigen::VectorXd compensator = Eigen::VectorXd::Zero(ni);
  recorder.record(0.0, q, counts, compensator, m.star);
  {
    int arg = 0;
    if (q.maxCoeff(&arg) >= opts.collapse_threshold)
      path.collapse = ContinuousCollapse{0.0, arg};
  }

  std::vector<int> fired;
  auto substep = [&](auto&& self, double t, double h, int depth) -> void {
    const Eigen::VectorXd rates = mean_intensity(m, q);
    const double max_rate = rates.maxCoeff();
    if (max_rate * h > opts.thinning_cap && depth < opts.max_halvings) {
      self(self, t, 0.5 * h, depth + 1);
      self(self, t + 0.5 * h, 0.5 * h, depth + 1);
      return;
    }
    fired.clear();
    for (int i = 0; i < ni; ++i) {
      if (i == m.star) continue;
      if (rng.bernoulli(rates[i] * h)) fired.push_back(i);
    }
    if (fired.size() > 1) {
      if (depth >= opts.max_halvings)
        throw step_size_error("simultaneous jumps persisted through substepping");
      self(self, t, 0.5 * h, depth + 1);
      self(self, t + 0.5 * h, 0.5 * h, depth + 1);
      return;
    }
    observe(t, h, rates, fired);
    Eigen::VectorXd factor = Eigen::VectorXd::Ones(na);
    for (int a = 0; a < na; ++a) {
      double incr = 0.0;
      for (int i = 0; i < ni; ++i) {
        if (i == m.star) continue;
        const double dn = (fired.size() == 1 && fired[0] == i) ? 1.0 : 0.0;
        incr += (m.theta(a, i) / rates[i] - 1.0) * (dn - rates[i] * h);
      }
      factor[a] += incr;
    }
    Eigen::VectorXd proposal = q.cwiseProduct(factor);
    for (int a = 0; a < na; ++a)
      if (proposal[a] < 0.0 && proposal[a] > -opts.boundary_tol) proposal[a] = 0.0;
    if (proposal.minCoeff() < 0.0)
      throw step_size_error("jump update left the simplex; decrease dt");
    q = proposal / proposal.sum();
    compensator += rates * h;
    if (fired.size() == 1) {
      counts[fired[0]] += 1.0;
      path.jump_events.push_back(JumpEvent{t + h, fired[0]});
    }
    if (!path.collapse) {
      int arg = 0;
      if (q.maxCoeff(&arg) >= opts.collapse_threshold)
        path.collapse = ContinuousCollapse{t + h, arg};
    }
  };

  for (long s = 0; s < n_steps; ++s) {
    substep(substep, static_cast<double>(s) * dt, dt, 0);
    if ((s + 1) % opts.record_stride == 0 || s + 1 == n_steps)
      recorder.record(static_cast<double>(s + 1) * dt, q, counts, compensator, m.star);
  }
  recorder.finish(na, ni);
  return path;
}

inline JumpPath integrate_jump_thinning(const JumpModel& m, const PointerDistribution& q0,
                                        double horizon, double dt, std::uint64_t seed,
                                        const SdeOptions& opts = {}) {
  return integrate_jump_thinning_observed(
      m, q0, horizon, dt, seed,
      [](double, double, const Eigen::VectorXd&, const std::vector<int>&) {}, opts);
}

/// log Z_t(alpha) of the exponential Poisson martingale
///   Z_t(alpha) = prod_{i != i*} theta(i|alpha)^{N_t(i)} exp(-t (theta(i|alpha) - 1)).
inline double jump_log_martingale(const JumpModel& m, const Eigen::VectorXd& counts, double t,
                                  int alpha) {
  double lz = 0.0;
  for (int i = 0; i < m.n_outcomes(); ++i) {
    if (i == m.star) continue;
    lz += counts[i] * std::log(m.theta(alpha, i)) - t * (m.theta(alpha, i) - 1.0);
  }
  return lz;
}

/// Q_t from the exponential-martingale representation, in log domain.
inline Eigen::VectorXd jump_posterior_from_counts(const JumpModel& m,
                                                  const PointerDistribution& q0,
                                                  const Eigen::VectorXd& counts, double t) {
  const int na = m.n_pointers();
  Eigen::VectorXd logw(na);
  for (int a = 0; a < na; ++a)
    logw[a] = q0(a) > 0.0 ? std::log(q0(a)) + jump_log_martingale(m, counts, t, a)
                          : -std::numeric_limits<double>::infinity();
  const double lmax = logw.maxCoeff();
  Eigen::VectorXd w = (logw.array() - lmax).exp();
  w /= w.sum();
  return w;
}

/// Event-driven exact construction: draw alpha ~ q0, run homogeneous
/// Poisson clocks with rates theta(i|alpha) via exponential waiting times,
/// and reconstruct Q_t from the exponential Poisson martingales.  The
/// compensator integral between events is evaluated with fixed-order
/// Gauss-Legendre quadrature (the integrand is smooth there).
inline JumpPath integrate_jump_exact(const JumpModel& m, const PointerDistribution& q0,
                                     double horizon, std::uint64_t seed,
                                     const SdeOptions& opts = {}) {
  if (!(horizon > 0.0)) throw error("horizon must be positive");
  const int na = m.n_pointers(), ni = m.n_outcomes();
  Rng rng(seed);
  JumpPath path;
  path.conditioned_alpha = rng.discrete(q0.weights());
  const int alpha = *path.conditioned_alpha;

  // merged event list from independent exponential clocks
  std::vector<JumpEvent> events;
  for (int i = 0; i < ni; ++i) {
    if (i == m.star) continue;
    double t = rng.exponential(m.theta(alpha, i));
    while (t < horizon) {
      events.push_back(JumpEvent{t, i});
      t += rng.exponential(m.theta(alpha, i));
    }
  }
  std::sort(events.begin(), events.end(),
            [](const JumpEvent& a, const JumpEvent& b) { return a.time < b.time; });
  path.jump_events = events;

  static constexpr double kGlNode[5] = {-0.9061798459386640, -0.5384693101056831, 0.0,
                                        0.5384693101056831, 0.9061798459386640};
  static constexpr double kGlWeight[5] = {0.2369268850561891, 0.4786286704993665,
                                          0.5688888888888889, 0.4786286704993665,
                                          0.2369268850561891};

  Eigen::VectorXd counts = Eigen::VectorXd::Zero(ni);
  Eigen::VectorXd compensator = Eigen::VectorXd::Zero(ni);
  path.q_path.resize(static_cast<long>(events.size()) + 2, na);
  path.n_path.resize(static_cast<long>(events.size()) + 2, ni);
  path.y_path.resize(static_cast<long>(events.size()) + 2, ni);
  detail::JumpRecorder recorder{path};

  auto integrate_compensator = [&](double t0, double t1) {
    if (t1 <= t0) return;
    const double mid = 0.5 * (t0 + t1), half = 0.5 * (t1 - t0);
    for (int g = 0; g < 5; ++g) {
      const double s = mid + half * kGlNode[g];
      const Eigen::VectorXd qs = jump_posterior_from_counts(m, q0, counts, s);
      compensator += (half * kGlWeight[g]) * mean_intensity(m, qs);
    }
  };

  Eigen::VectorXd q = q0.weights();
  recorder.record(0.0, q, counts, compensator, m.star);
  {
    int arg = 0;
    if (q.maxCoeff(&arg) >= opts.collapse_threshold)
      path.collapse = ContinuousCollapse{0.0, arg};
  }
  double t_prev = 0.0;
  for (const auto& ev : events) {
    integrate_compensator(t_prev, ev.time);
    counts[ev.channel] += 1.0;
    q = jump_posterior_from_counts(m, q0, counts, ev.time);
    recorder.record(ev.time, q, counts, compensator, m.star);
    if (!path.collapse) {
      int arg = 0;
      if (q.maxCoeff(&arg) >= opts.collapse_threshold)
        path.collapse = ContinuousCollapse{ev.time, arg};
    }
    t_prev = ev.time;
  }
  integrate_compensator(t_prev, horizon);
  q = jump_posterior_from_counts(m, q0, counts, horizon);
  recorder.record(horizon, q, counts, compensator, m.star);
  if (!path.collapse) {
    int arg = 0;
    if (q.maxCoeff(&arg) >= opts.collapse_threshold)
      path.collapse = ContinuousCollapse{horizon, arg};
  }
  recorder.finish(na, ni);
  return path;
}

}  // namespace ism
