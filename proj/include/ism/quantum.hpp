#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ism/kernel.hpp"
#include "ism/rng.hpp"

namespace ism {

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

inline bool is_hermitian(const CMatrix& m, double tol) {
  return (m - m.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

/// Smallest eigenvalue of a Hermitian matrix; direct solver for d <= 3.
inline double min_hermitian_eigenvalue(const CMatrix& m) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es;
  if (m.rows() <= 3)
    es.computeDirect(m, Eigen::EigenvaluesOnly);
  else
    es.compute(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Repeated-interaction apparatus: system pointer energies E_alpha, one
/// probe interaction block H_alpha per pointer state, probe Hamiltonian,
/// probe preparation |psi>, the measured probe basis {|i>}, and the
/// interaction duration delta.  The assembled Hamiltonian is
///   H = H_s x 1 + 1 x H_p + delta^{-1/2} sum_alpha |alpha><alpha| x H_alpha.
struct QuantumApparatus {
  Eigen::VectorXd pointer_energies;       // E_alpha, length d_s
  std::vector<CMatrix> interaction_blocks;  // H_alpha, each d_p x d_p
  CMatrix probe_hamiltonian;              // H_p
  CVector probe_state;                    // psi
  CMatrix probe_basis;                    // columns are |i>
  double delta = 1e-4;

  QuantumApparatus(Eigen::VectorXd energies, std::vector<CMatrix> blocks, CMatrix h_p,
                   CVector psi, CMatrix basis, double delta_in)
      : pointer_energies(std::move(energies)),
        interaction_blocks(std::move(blocks)),
        probe_hamiltonian(std::move(h_p)),
        probe_state(std::move(psi)),
        probe_basis(std::move(basis)),
        delta(delta_in) {
    const int ds = system_dim();
    const int dp = probe_dim();
    if (static_cast<int>(interaction_blocks.size()) != ds)
      throw invalid_apparatus_error("need one interaction block per pointer state");
    for (const auto& h : interaction_blocks) {
      if (h.rows() != dp || h.cols() != dp)
        throw invalid_apparatus_error("interaction block dimension mismatch");
      if (!is_hermitian(h, 1e-12))
        throw invalid_apparatus_error("interaction block is not Hermitian");
    }
    if (probe_hamiltonian.rows() != dp || probe_hamiltonian.cols() != dp)
      throw invalid_apparatus_error("probe Hamiltonian dimension mismatch");
    if (!is_hermitian(probe_hamiltonian, 1e-12))
      throw invalid_apparatus_error("probe Hamiltonian is not Hermitian");
    if (std::abs(probe_state.norm() - 1.0) > 1e-12)
      throw invalid_apparatus_error("probe state is not normalized");
    if (probe_basis.rows() != dp || probe_basis.cols() != dp)
      throw invalid_apparatus_error("probe basis must be square");
    if ((probe_basis.adjoint() * probe_basis - CMatrix::Identity(dp, dp)).cwiseAbs().maxCoeff() >
        1e-12)
      throw invalid_apparatus_error("probe basis is not orthonormal");
    if (!(delta > 0.0)) throw invalid_apparatus_error("delta must be positive");
  }

  int system_dim() const { return static_cast<int>(pointer_energies.size()); }
  int probe_dim() const { return static_cast<int>(probe_state.size()); }

  /// Full system-probe Hamiltonian with the 1/sqrt(delta) interaction scaling.
  CMatrix total_hamiltonian() const {
    const int ds = system_dim(), dp = probe_dim();
    CMatrix h = CMatrix::Zero(ds * dp, ds * dp);
    const double scale = 1.0 / std::sqrt(delta);
    for (int a = 0; a < ds; ++a) {
      h.block(a * dp, a * dp, dp, dp) = pointer_energies[a] * CMatrix::Identity(dp, dp) +
                                        probe_hamiltonian + scale * interaction_blocks[a];
    }
    return h;
  }
};

/// One measurement cycle in operator form: the full unitary U, the
/// per-pointer probe unitaries U_alpha (diagonal blocks), and the Kraus
/// operators M_i = <i|U|psi> acting on the system.
struct PropagatorSet {
  CMatrix u;                    // d_s d_p square
  std::vector<CMatrix> u_alpha;  // d_p square each
  std::vector<CMatrix> kraus;    // M_i, d_s square each, indexed by outcome
  int system_dim = 0;
  int probe_dim = 0;
  double off_block_norm = 0.0;  // Frobenius norm of the pointer-off-diagonal part
};

/// U = exp(-i delta H) for any Hermitian H on the joint space, via
/// eigendecomposition (sizes here are small and this keeps unitarity at
/// machine precision).
inline PropagatorSet build_propagator(const CMatrix& total_hamiltonian, int ds, int dp,
                                      const CVector& psi, const CMatrix& basis, double delta) {
  if (total_hamiltonian.rows() != ds * dp)
    throw invalid_apparatus_error("Hamiltonian dimension mismatch");
  if (!is_hermitian(total_hamiltonian, 1e-10))
    throw invalid_apparatus_error("Hamiltonian is not Hermitian");
  Eigen::SelfAdjointEigenSolver<CMatrix> es(total_hamiltonian);
  const std::complex<double> mi(0.0, -1.0);
  CVector phases(es.eigenvalues().size());
  for (int k = 0; k < phases.size(); ++k)
    phases[k] = std::exp(mi * delta * es.eigenvalues()[k]);
  PropagatorSet props;
  props.u = es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
  props.system_dim = ds;
  props.probe_dim = dp;

  props.u_alpha.reserve(static_cast<std::size_t>(ds));
  double off2 = 0.0;
  for (int a = 0; a < ds; ++a) {
    for (int b = 0; b < ds; ++b) {
      if (a == b) continue;
      off2 += props.u.block(a * dp, b * dp, dp, dp).squaredNorm();
    }
    props.u_alpha.push_back(props.u.block(a * dp, a * dp, dp, dp));
  }
  props.off_block_norm = std::sqrt(off2);

  props.kraus.reserve(static_cast<std::size_t>(dp));
  for (int i = 0; i < dp; ++i) {
    CMatrix m(ds, ds);
    const CVector ket_i = basis.col(i);
    for (int a = 0; a < ds; ++a)
      for (int b = 0; b < ds; ++b)
        m(a, b) = ket_i.dot(props.u.block(a * dp, b * dp, dp, dp) * psi);
    props.kraus.push_back(std::move(m));
  }
  return props;
}

inline PropagatorSet build_propagator(const QuantumApparatus& app) {
  return build_propagator(app.total_hamiltonian(), app.system_dim(), app.probe_dim(),
                          app.probe_state, app.probe_basis, app.delta);
}

struct QndReport {
  double off_block_norm;
  double tolerance;
  bool passed;
};

/// QND structure check: U must be block diagonal in the pointer basis.
inline QndReport check_qnd(const PropagatorSet& props, double tolerance = 1e-10) {
  return QndReport{props.off_block_norm, tolerance, props.off_block_norm <= tolerance};
}

/// Classical kernel induced by the apparatus: p(i|alpha) = |<i|U_alpha|psi>|^2.
inline MeasurementKernel induced_kernel(const PropagatorSet& props, const CVector& psi,
                                        const CMatrix& basis, double qnd_tolerance = 1e-10) {
  if (!check_qnd(props, qnd_tolerance).passed)
    throw qnd_violation_error("propagator is not block diagonal in the pointer basis");
  const int ds = props.system_dim, dp = props.probe_dim;
  Eigen::MatrixXd p(ds, dp);
  for (int a = 0; a < ds; ++a) {
    const CVector evolved = props.u_alpha[static_cast<std::size_t>(a)] * psi;
    for (int i = 0; i < dp; ++i) p(a, i) = std::norm(basis.col(i).dot(evolved));
  }
  std::vector<std::string> alphas, outcomes;
  for (int a = 0; a < ds; ++a) alphas.push_back("a" + std::to_string(a));
  for (int i = 0; i < dp; ++i) outcomes.push_back("i" + std::to_string(i));
  return MeasurementKernel(std::move(alphas), std::move(outcomes), std::move(p));
}

inline MeasurementKernel induced_kernel(const QuantumApparatus& app,
                                        double qnd_tolerance = 1e-10) {
  return induced_kernel(build_propagator(app), app.probe_state, app.probe_basis, qnd_tolerance);
}

/// System density matrix; Hermitian, unit trace, positive semidefinite
/// within tolerances checked at construction.  A floor violation throws
/// rather than clipping, so scheme bugs surface instead of being masked.
class DensityMatrix {
 public:
  explicit DensityMatrix(CMatrix rho, double eig_floor = -1e-8) : rho_(std::move(rho)) {
    if (rho_.rows() != rho_.cols()) throw error("density matrix must be square");
    if (!is_hermitian(rho_, 1e-10)) throw error("density matrix is not Hermitian");
    if (std::abs(rho_.trace().real() - 1.0) > 1e-10 || std::abs(rho_.trace().imag()) > 1e-10)
      throw error("density matrix trace must be 1");
    const double lam = min_hermitian_eigenvalue(rho_);
    if (lam < eig_floor)
      throw positivity_loss_error("density matrix eigenvalue " + std::to_string(lam) +
                                  " below floor");
  }

  static DensityMatrix pure(const CVector& state) {
    CVector psi = state / state.norm();
    return DensityMatrix(psi * psi.adjoint());
  }
  static DensityMatrix from_diagonal(const PointerDistribution& q) {
    CMatrix rho = CMatrix::Zero(q.size(), q.size());
    for (int a = 0; a < q.size(); ++a) rho(a, a) = q(a);
    return DensityMatrix(std::move(rho));
  }

  const CMatrix& mat() const { return rho_; }
  int dim() const { return static_cast<int>(rho_.rows()); }
  Eigen::VectorXd diagonal() const { return rho_.diagonal().real(); }

 private:
  CMatrix rho_;
};

/// Outcome probabilities pi(i) = Tr(M_i rho M_i^dagger); sums to 1 by the
/// completeness of the Kraus set.
inline Eigen::VectorXd outcome_probabilities(const PropagatorSet& props,
                                             const DensityMatrix& rho) {
  Eigen::VectorXd pi(static_cast<int>(props.kraus.size()));
  for (std::size_t i = 0; i < props.kraus.size(); ++i)
    pi[static_cast<int>(i)] =
        (props.kraus[i] * rho.mat() * props.kraus[i].adjoint()).trace().real();
  return pi;
}

struct MeasurementOutcome {
  DensityMatrix state;
  double probability;
};

/// One projective probe readout: rho -> M_i rho M_i^dagger / pi(i).
/// The result is re-Hermitized and trace-renormalized before validation.
inline MeasurementOutcome measurement_update(const PropagatorSet& props,
                                             const DensityMatrix& rho, int outcome) {
  if (outcome < 0 || outcome >= static_cast<int>(props.kraus.size()))
    throw error("outcome index out of range");
  const CMatrix& m = props.kraus[static_cast<std::size_t>(outcome)];
  CMatrix next = m * rho.mat() * m.adjoint();
  const double pi = next.trace().real();
  if (!(pi > 1e-300))
    throw impossible_outcome_error("outcome " + std::to_string(outcome) +
                                   " has vanishing probability");
  next /= pi;
  next = 0.5 * (next + next.adjoint());
  next /= next.trace().real();
  return MeasurementOutcome{DensityMatrix(std::move(next)), pi};
}

struct QuantumTrajectory {
  std::vector<int> outcomes;
  std::vector<int> recorded_steps;
  std::vector<DensityMatrix> rho_path;  // at recorded steps
  std::optional<CollapseEvent> collapse;
};

/// Repeated cycles of interaction and probe measurement; outcome n is
/// sampled from pi_{n-1} and the state is projected accordingly.  Collapse
/// is the first step where a diagonal entry <alpha|rho|alpha> crosses the
/// threshold.
inline QuantumTrajectory simulate_quantum_chain(const PropagatorSet& props,
                                                const DensityMatrix& rho0, int steps,
                                                std::uint64_t seed, int record_stride = 1,
                                                double collapse_threshold = 1.0 - 1e-6) {
  if (steps < 1) throw error("steps must be >= 1");
  if (record_stride < 1) throw error("record stride must be >= 1");
  Rng rng(seed);
  QuantumTrajectory traj;
  traj.recorded_steps.push_back(0);
  traj.rho_path.push_back(rho0);
  auto check_collapse = [&](const DensityMatrix& rho, int step) {
    if (traj.collapse) return;
    int arg = 0;
    if (rho.diagonal().maxCoeff(&arg) >= collapse_threshold)
      traj.collapse = CollapseEvent{step, arg};
  };
  DensityMatrix rho = rho0;
  check_collapse(rho, 0);
  for (int n = 1; n <= steps; ++n) {
    const Eigen::VectorXd pi = outcome_probabilities(props, rho);
    const int i = rng.discrete(pi);
    auto upd = measurement_update(props, rho, i);
    rho = std::move(upd.state);
    traj.outcomes.push_back(i);
    check_collapse(rho, n);
    if (n % record_stride == 0 || n == steps) {
      traj.recorded_steps.push_back(n);
      traj.rho_path.push_back(rho);
    }
  }
  return traj;
}

}  // namespace ism
