#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ism/quantum.hpp"
#include "ism/scaling.hpp"

namespace ism {

namespace detail {

inline bool all_pointer_diagonal(const std::vector<CMatrix>& ops, double tol = 1e-10) {
  for (const auto& op : ops) {
    CMatrix off = op;
    off.diagonal().setZero();
    if (off.cwiseAbs().maxCoeff() > tol) return false;
  }
  return true;
}

}  // namespace detail

/// Diffusive Belavkin data: system Hamiltonian, one operator C_i per
/// outcome with C_i = -i <i|H_I|psi>/<i|psi>, and the reference outcome law
/// p0(i) = |<i|psi>|^2.  sum_i p0(i) C_i = 0 is required; without it the
/// equation is not positivity preserving.
struct DiffusiveBelavkinModel {
  CMatrix h_s;
  std::vector<CMatrix> c_ops;  // indexed by outcome
  Eigen::VectorXd p0;
  bool pointer_diagonal = false;

  DiffusiveBelavkinModel(CMatrix h, std::vector<CMatrix> c, Eigen::VectorXd p0_in)
      : h_s(std::move(h)), c_ops(std::move(c)), p0(std::move(p0_in)) {
    if (static_cast<int>(c_ops.size()) != p0.size())
      throw error("operator/outcome count mismatch");
    if (!is_hermitian(h_s, 1e-10)) throw error("system Hamiltonian is not Hermitian");
    if (std::abs(p0.sum() - 1.0) > 1e-10) throw error("p0 must sum to 1");
    CMatrix weighted = CMatrix::Zero(h_s.rows(), h_s.cols());
    for (std::size_t i = 0; i < c_ops.size(); ++i) {
      if (c_ops[i].rows() != h_s.rows() || c_ops[i].cols() != h_s.cols())
        throw error("operator dimension mismatch");
      weighted += p0[static_cast<int>(i)] * c_ops[i];
    }
    if (weighted.cwiseAbs().maxCoeff() > 1e-10)
      throw error("sum_i p0(i) C_i must vanish");
    pointer_diagonal = detail::all_pointer_diagonal(c_ops);
  }

  int dim() const { return static_cast<int>(h_s.rows()); }
  int n_outcomes() const { return static_cast<int>(c_ops.size()); }
};

/// C_i from a QND apparatus.  Requires <psi|H_alpha|psi> = 0 (otherwise the
/// continuum limit does not exist) and <i|psi> != 0 for every outcome
/// (otherwise the limit is jumpy, not diffusive).
inline DiffusiveBelavkinModel extract_diffusive_model(const QuantumApparatus& app) {
  const int ds = app.system_dim(), dp = app.probe_dim();
  for (int a = 0; a < ds; ++a) {
    const std::complex<double> expect =
        app.probe_state.dot(app.interaction_blocks[static_cast<std::size_t>(a)] *
                            app.probe_state);
    if (std::abs(expect) > 1e-10)
      throw no_continuum_limit_error("<psi|H_alpha|psi> must vanish for every alpha");
  }
  Eigen::VectorXd p0(dp);
  std::vector<std::complex<double>> overlaps(static_cast<std::size_t>(dp));
  for (int i = 0; i < dp; ++i) {
    overlaps[static_cast<std::size_t>(i)] = app.probe_basis.col(i).dot(app.probe_state);
    p0[i] = std::norm(overlaps[static_cast<std::size_t>(i)]);
    if (p0[i] <= 1e-12)
      throw wrong_limit_error("<i|psi> vanishes; the limit is Poissonian, not diffusive");
  }
  const std::complex<double> mi(0.0, -1.0);
  std::vector<CMatrix> c_ops;
  for (int i = 0; i < dp; ++i) {
    CMatrix c = CMatrix::Zero(ds, ds);
    for (int a = 0; a < ds; ++a) {
      const std::complex<double> amp =
          app.probe_basis.col(i).dot(app.interaction_blocks[static_cast<std::size_t>(a)] *
                                     app.probe_state);
      c(a, a) = mi * amp / overlaps[static_cast<std::size_t>(i)];
    }
    c_ops.push_back(std::move(c));
  }
  CMatrix h_s = CMatrix::Zero(ds, ds);
  for (int a = 0; a < ds; ++a) h_s(a, a) = app.pointer_energies[a];
  return DiffusiveBelavkinModel(std::move(h_s), std::move(c_ops), std::move(p0));
}

/// L_d(rho) = -i[H_s, rho] + sum_i p0(i) (C_i rho C_i+ - 1/2 {C_i+ C_i, rho}).
inline CMatrix lindblad_d(const DiffusiveBelavkinModel& m, const CMatrix& rho) {
  const std::complex<double> mi(0.0, -1.0);
  CMatrix out = mi * (m.h_s * rho - rho * m.h_s);
  for (int i = 0; i < m.n_outcomes(); ++i) {
    const CMatrix& c = m.c_ops[static_cast<std::size_t>(i)];
    const CMatrix cc = c.adjoint() * c;
    out += m.p0[i] * (c * rho * c.adjoint() - 0.5 * (cc * rho + rho * cc));
  }
  return out;
}

/// D_j(rho) = C_j rho + rho C_j+ - rho Tr[(C_j + C_j+) rho].
inline CMatrix diffusive_noise_term(const DiffusiveBelavkinModel& m, const CMatrix& rho,
                                    int j) {
  const CMatrix& c = m.c_ops[static_cast<std::size_t>(j)];
  const double expect = ((c + c.adjoint()) * rho).trace().real();
  return c * rho + rho * c.adjoint() - expect * rho;
}

/// One raw Euler step of the diffusive Belavkin equation (not renormalized).
inline CMatrix belavkin_diffusive_step_raw(const DiffusiveBelavkinModel& m, const CMatrix& rho,
                                           const Eigen::VectorXd& dx, double dt) {
  CMatrix next = rho + lindblad_d(m, rho) * dt;
  for (int j = 0; j < m.n_outcomes(); ++j) next += diffusive_noise_term(m, rho, j) * dx[j];
  return next;
}

struct BelavkinPath {
  std::vector<double> times;
  std::vector<CMatrix> rho_path;   // at recorded times
  Eigen::MatrixXd x_path;          // diffusive driving noise, cumulative
  std::vector<JumpEvent> jump_events;  // jumpy driving noise
  std::optional<ContinuousCollapse> collapse;
  long rejected_steps = 0;
  double trace_drift_per_unit_time = 0.0;  // accumulated |Tr-1| before renormalizing, / T
  double min_eigenvalue_seen = 0.0;
};

/// Euler-Maruyama integration of d rho = L_d dt + sum_j D_j dX(j), sharing
/// the noise construction of the classical diffusive limit.  rho is
/// re-Hermitized and trace-renormalized each step; positivity is monitored
/// and a violation below the floor aborts.
inline BelavkinPath integrate_belavkin_diffusive(const DiffusiveBelavkinModel& m,
                                                 const DensityMatrix& rho0, double horizon,
                                                 double dt, std::uint64_t seed,
                                                 const SdeOptions& opts = {},
                                                 double positivity_floor = -1e-6) {
  if (!(horizon > 0.0) || !(dt > 0.0)) throw error("horizon and dt must be positive");
  const long n_steps = static_cast<long>(std::llround(horizon / dt));
  if (n_steps < 1) throw error("horizon shorter than dt");
  const int ni = m.n_outcomes();
  Rng rng(seed);

  BelavkinPath path;
  CMatrix rho = rho0.mat();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(ni);
  double trace_err = 0.0;
  path.min_eigenvalue_seen = min_hermitian_eigenvalue(rho);

  const long n_records = (n_steps + opts.record_stride - 1) / opts.record_stride + 1;
  path.x_path.resize(n_records, ni);
  long rec = 0;
  auto record = [&](double t) {
    path.times.push_back(t);
    path.rho_path.push_back(rho);
    path.x_path.row(rec) = x;
    ++rec;
  };
  auto check_collapse = [&](double t) {
    if (path.collapse) return;
    int arg = 0;
    if (rho.diagonal().real().maxCoeff(&arg) >= opts.collapse_threshold)
      path.collapse = ContinuousCollapse{t, arg};
  };
  record(0.0);
  check_collapse(0.0);

  auto advance = [&](auto&& self, double t, double h, int depth) -> void {
    const Eigen::VectorXd dx = sample_noise_increment(m.p0, h, rng);
    CMatrix proposal = belavkin_diffusive_step_raw(m, rho, dx, h);
    const Eigen::VectorXd diag = proposal.diagonal().real();
    bool ok = diag.minCoeff() >= -opts.boundary_tol && diag.maxCoeff() <= 1.0 + opts.boundary_tol;
    if (ok && (proposal - rho).norm() > opts.max_rel_update) ok = false;
    if (!ok) {
      if (depth >= opts.max_halvings)
        throw step_size_error("Belavkin diffusive step rejected repeatedly; decrease dt");
      ++path.rejected_steps;
      self(self, t, 0.5 * h, depth + 1);
      self(self, t + 0.5 * h, 0.5 * h, depth + 1);
      return;
    }
    x += dx;
    trace_err += std::abs(proposal.trace().real() - 1.0) + std::abs(proposal.trace().imag());
    proposal = 0.5 * (proposal + proposal.adjoint()).eval();
    proposal /= proposal.trace().real();
    rho = std::move(proposal);
    const double lam = min_hermitian_eigenvalue(rho);
    path.min_eigenvalue_seen = std::min(path.min_eigenvalue_seen, lam);
    if (lam < positivity_floor)
      throw positivity_loss_error("Belavkin path lost positivity (min eigenvalue " +
                                  std::to_string(lam) + "); decrease dt");
    check_collapse(t + h);
  };

  for (long s = 0; s < n_steps; ++s) {
    advance(advance, static_cast<double>(s) * dt, dt, 0);
    if ((s + 1) % opts.record_stride == 0 || s + 1 == n_steps)
      record(static_cast<double>(s + 1) * dt);
  }
  path.x_path.conservativeResize(rec, ni);
  path.trace_drift_per_unit_time = trace_err / horizon;
  return path;
}

/// Jumpy Belavkin data: D_i = -i <i|H_I|psi> for each non-star outcome.
struct JumpBelavkinModel {
  CMatrix h_s;
  int star;
  std::vector<CMatrix> d_ops;  // indexed by outcome; entry at `star` is unused (zero)
  bool pointer_diagonal = false;

  JumpBelavkinModel(CMatrix h, int star_in, std::vector<CMatrix> d)
      : h_s(std::move(h)), star(star_in), d_ops(std::move(d)) {
    if (!is_hermitian(h_s, 1e-10)) throw error("system Hamiltonian is not Hermitian");
    if (star < 0 || star >= static_cast<int>(d_ops.size()))
      throw error("star outcome out of range");
    for (const auto& op : d_ops)
      if (op.rows() != h_s.rows() || op.cols() != h_s.cols())
        throw error("operator dimension mismatch");
    pointer_diagonal = detail::all_pointer_diagonal(d_ops);
  }

  int dim() const { return static_cast<int>(h_s.rows()); }
  int n_outcomes() const { return static_cast<int>(d_ops.size()); }
};

/// D_i from a QND apparatus whose probe state is one of the measured basis
/// vectors (|i*> = |psi>).
inline JumpBelavkinModel extract_jump_model(const QuantumApparatus& app) {
  const int ds = app.system_dim(), dp = app.probe_dim();
  int star = -1;
  for (int i = 0; i < dp; ++i) {
    if (std::abs(std::abs(app.probe_basis.col(i).dot(app.probe_state)) - 1.0) < 1e-10) star = i;
  }
  if (star < 0)
    throw wrong_limit_error(
        "probe state is not an element of the measured basis; no jumpy limit");
  for (int a = 0; a < ds; ++a) {
    const std::complex<double> expect =
        app.probe_state.dot(app.interaction_blocks[static_cast<std::size_t>(a)] *
                            app.probe_state);
    if (std::abs(expect) > 1e-10)
      throw no_continuum_limit_error("<psi|H_alpha|psi> must vanish for every alpha");
  }
  const std::complex<double> mi(0.0, -1.0);
  std::vector<CMatrix> d_ops;
  for (int i = 0; i < dp; ++i) {
    CMatrix d = CMatrix::Zero(ds, ds);
    if (i != star) {
      for (int a = 0; a < ds; ++a)
        d(a, a) = mi * app.probe_basis.col(i).dot(
                           app.interaction_blocks[static_cast<std::size_t>(a)] *
                           app.probe_state);
    }
    d_ops.push_back(std::move(d));
  }
  CMatrix h_s = CMatrix::Zero(ds, ds);
  for (int a = 0; a < ds; ++a) h_s(a, a) = app.pointer_energies[a];
  return JumpBelavkinModel(std::move(h_s), star, std::move(d_ops));
}

/// theta(i|alpha) = |D_i(alpha,alpha)|^2 for pointer-diagonal models; the
/// classical JumpModel this Belavkin model reduces to on diagonal states.
inline JumpModel classical_jump_model(const JumpBelavkinModel& m) {
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(m.dim(), m.n_outcomes());
  for (int i = 0; i < m.n_outcomes(); ++i) {
    if (i == m.star) continue;
    for (int a = 0; a < m.dim(); ++a)
      theta(a, i) = std::norm(m.d_ops[static_cast<std::size_t>(i)](a, a));
  }
  return JumpModel(m.star, std::move(theta));
}

/// L_p(rho) = -i[H_s, rho] + sum_{i != i*} (D_i rho D_i+ - 1/2 {D_i+ D_i, rho}).
inline CMatrix lindblad_p(const JumpBelavkinModel& m, const CMatrix& rho) {
  const std::complex<double> mi(0.0, -1.0);
  CMatrix out = mi * (m.h_s * rho - rho * m.h_s);
  for (int i = 0; i < m.n_outcomes(); ++i) {
    if (i == m.star) continue;
    const CMatrix& d = m.d_ops[static_cast<std::size_t>(i)];
    const CMatrix dd = d.adjoint() * d;
    out += d * rho * d.adjoint() - 0.5 * (dd * rho + rho * dd);
  }
  return out;
}

/// Jump intensity of channel i: Tr[D_i rho D_i+].
inline double jump_intensity(const JumpBelavkinModel& m, const CMatrix& rho, int i) {
  const CMatrix& d = m.d_ops[static_cast<std::size_t>(i)];
  return (d * rho * d.adjoint()).trace().real();
}

/// State after a jump on channel i: D_i rho D_i+ / Tr[D_i rho D_i+].
inline CMatrix apply_jump(const JumpBelavkinModel& m, const CMatrix& rho, int i) {
  const CMatrix& d = m.d_ops[static_cast<std::size_t>(i)];
  CMatrix jumped = d * rho * d.adjoint();
  const double lambda = jumped.trace().real();
  if (!(lambda > 1e-300))
    throw impossible_jump_error("jump on channel " + std::to_string(i) +
                                " has vanishing intensity");
  return jumped / lambda;
}

/// D-hat_i(rho) = D_i rho D_i+ / Tr[D_i rho D_i+] - rho.
inline CMatrix jump_noise_term(const JumpBelavkinModel& m, const CMatrix& rho, int i) {
  return apply_jump(m, rho, i) - rho;
}

/// One raw Euler step of d rho = L_p dt + sum_i D-hat_i (dN_i - lambda_i dt).
/// The compensator part is expanded as (D_i rho D_i+ - lambda_i rho) dt so
/// that vanishing intensities need no division.
inline CMatrix belavkin_jump_step_raw(const JumpBelavkinModel& m, const CMatrix& rho,
                                      const std::vector<int>& jumps, double dt) {
  CMatrix next = rho + lindblad_p(m, rho) * dt;
  for (int i = 0; i < m.n_outcomes(); ++i) {
    if (i == m.star) continue;
    const CMatrix& d = m.d_ops[static_cast<std::size_t>(i)];
    const CMatrix jumped = d * rho * d.adjoint();
    const double lambda = jumped.trace().real();
    next -= (jumped - lambda * rho) * dt;
  }
  for (int i : jumps) next += jump_noise_term(m, rho, i);
  return next;
}

/// Thinning integrator for the jumpy Belavkin equation: channel i fires
/// with probability Tr[D_i rho D_i+] dt, with the same sub-stepping rules
/// as the classical jump limit.
inline BelavkinPath integrate_belavkin_jump(const JumpBelavkinModel& m,
                                            const DensityMatrix& rho0, double horizon,
                                            double dt, std::uint64_t seed,
                                            const SdeOptions& opts = {},
                                            double positivity_floor = -1e-6) {
  if (!(horizon > 0.0) || !(dt > 0.0)) throw error("horizon and dt must be positive");
  const long n_steps = static_cast<long>(std::llround(horizon / dt));
  if (n_steps < 1) throw error("horizon shorter than dt");
  Rng rng(seed);

  BelavkinPath path;
  CMatrix rho = rho0.mat();
  double trace_err = 0.0;
  path.min_eigenvalue_seen = min_hermitian_eigenvalue(rho);

  auto record = [&](double t) {
    path.times.push_back(t);
    path.rho_path.push_back(rho);
  };
  auto check_collapse = [&](double t) {
    if (path.collapse) return;
    int arg = 0;
    if (rho.diagonal().real().maxCoeff(&arg) >= opts.collapse_threshold)
      path.collapse = ContinuousCollapse{t, arg};
  };
  record(0.0);
  check_collapse(0.0);

  std::vector<int> fired;
  auto substep = [&](auto&& self, double t, double h, int depth) -> void {
    double max_rate = 0.0;
    Eigen::VectorXd rates = Eigen::VectorXd::Zero(m.n_outcomes());
    for (int i = 0; i < m.n_outcomes(); ++i) {
      if (i == m.star) continue;
      rates[i] = jump_intensity(m, rho, i);
      max_rate = std::max(max_rate, rates[i]);
    }
    if (max_rate * h > opts.thinning_cap && depth < opts.max_halvings) {
      self(self, t, 0.5 * h, depth + 1);
      self(self, t + 0.5 * h, 0.5 * h, depth + 1);
      return;
    }
    fired.clear();
    for (int i = 0; i < m.n_outcomes(); ++i) {
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
    CMatrix proposal = belavkin_jump_step_raw(m, rho, fired, h);
    trace_err += std::abs(proposal.trace().real() - 1.0) + std::abs(proposal.trace().imag());
    proposal = 0.5 * (proposal + proposal.adjoint()).eval();
    proposal /= proposal.trace().real();
    rho = std::move(proposal);
    const double lam = min_hermitian_eigenvalue(rho);
    path.min_eigenvalue_seen = std::min(path.min_eigenvalue_seen, lam);
    if (lam < positivity_floor)
      throw positivity_loss_error("Belavkin jump path lost positivity; decrease dt");
    if (fired.size() == 1) path.jump_events.push_back(JumpEvent{t + h, fired[0]});
    check_collapse(t + h);
  };

  for (long s = 0; s < n_steps; ++s) {
    substep(substep, static_cast<double>(s) * dt, dt, 0);
    if ((s + 1) % opts.record_stride == 0 || s + 1 == n_steps)
      record(static_cast<double>(s + 1) * dt);
  }
  path.trace_drift_per_unit_time = trace_err / horizon;
  return path;
}

}  // namespace ism
