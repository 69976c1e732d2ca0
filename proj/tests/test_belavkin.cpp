#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "ism/belavkin.hpp"
#include "ism/discrete.hpp"
#include "ism/stats.hpp"

using namespace ism;
using namespace std::complex_literals;

namespace {

CMatrix pauli_x() {
  CMatrix s(2, 2);
  s << 0.0, 1.0, 1.0, 0.0;
  return s;
}

CMatrix pauli_y() {
  CMatrix s(2, 2);
  s << 0.0, -1.0i, 1.0i, 0.0;
  return s;
}

CMatrix plus_minus_basis() {
  CMatrix b(2, 2);
  const double r = 1.0 / std::sqrt(2.0);
  b << r, r, r, -r;
  return b;
}

CVector ket0() {
  CVector v(2);
  v << 1.0, 0.0;
  return v;
}

QuantumApparatus diffusive_apparatus(double delta, double e0 = 0.0, double e1 = 0.0) {
  Eigen::VectorXd energies(2);
  energies << e0, e1;
  std::vector<CMatrix> blocks = {0.5 * pauli_y(), -0.5 * pauli_y()};
  return QuantumApparatus(energies, blocks, CMatrix::Zero(2, 2), ket0(), plus_minus_basis(),
                          delta);
}

QuantumApparatus jump_apparatus(double delta) {
  Eigen::VectorXd energies = Eigen::VectorXd::Zero(2);
  std::vector<CMatrix> blocks = {1.0 * pauli_x(), std::sqrt(2.0) * pauli_x()};
  return QuantumApparatus(energies, blocks, CMatrix::Zero(2, 2), ket0(),
                          CMatrix::Identity(2, 2), delta);
}

DensityMatrix random_density(Rng& rng, int d) {
  CMatrix g(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) g(r, c) = std::complex<double>(rng.normal(), rng.normal());
  CMatrix rho = g * g.adjoint();
  rho /= rho.trace().real();
  rho = 0.5 * (rho + rho.adjoint()).eval();
  return DensityMatrix(std::move(rho));
}

/// deterministic RK4 oracle for the averaged (Lindblad) evolution
CMatrix rk4_lindblad(const DiffusiveBelavkinModel& m, CMatrix rho, double horizon, double dt) {
  const long n = static_cast<long>(std::llround(horizon / dt));
  for (long s = 0; s < n; ++s) {
    const CMatrix k1 = lindblad_d(m, rho);
    const CMatrix k2 = lindblad_d(m, rho + 0.5 * dt * k1);
    const CMatrix k3 = lindblad_d(m, rho + 0.5 * dt * k2);
    const CMatrix k4 = lindblad_d(m, rho + dt * k3);
    rho += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return rho;
}

}  // namespace

TEST_CASE("diffusive model extraction") {
  SECTION("reference fixture gives C_+- = +-diag(g_a, g_b)") {
    auto m = extract_diffusive_model(diffusive_apparatus(1e-4));
    REQUIRE(m.n_outcomes() == 2);
    CHECK(std::abs(m.c_ops[0](0, 0) - 0.5) < 1e-12);
    CHECK(std::abs(m.c_ops[0](1, 1) + 0.5) < 1e-12);
    CHECK(std::abs(m.c_ops[1](0, 0) + 0.5) < 1e-12);
    CHECK(std::abs(m.c_ops[1](1, 1) - 0.5) < 1e-12);
    CHECK(std::abs(m.p0[0] - 0.5) < 1e-12);
    CHECK(m.pointer_diagonal);
    // p0-weighted sum of the C's vanishes
    CMatrix sum = m.p0[0] * m.c_ops[0] + m.p0[1] * m.c_ops[1];
    CHECK(sum.cwiseAbs().maxCoeff() < 1e-12);
  }
  SECTION("nonzero <psi|H_alpha|psi> has no continuum limit") {
    Eigen::VectorXd energies = Eigen::VectorXd::Zero(2);
    CMatrix block(2, 2);
    block << 0.1, 0.0, 0.0, -0.1;  // <0|H|0> = 0.1
    std::vector<CMatrix> blocks = {block, block};
    QuantumApparatus app(energies, blocks, CMatrix::Zero(2, 2), ket0(), plus_minus_basis(),
                         1e-4);
    CHECK_THROWS_AS(extract_diffusive_model(app), no_continuum_limit_error);
  }
  SECTION("a basis-aligned probe state belongs to the jump limit") {
    CHECK_THROWS_AS(extract_diffusive_model(jump_apparatus(1e-4)), wrong_limit_error);
  }
}

TEST_CASE("lindblad drift") {
  auto m = extract_diffusive_model(diffusive_apparatus(1e-4, 0.2, -0.2));
  SECTION("pointer states are stationary") {
    for (int a = 0; a < 2; ++a) {
      CMatrix rho = CMatrix::Zero(2, 2);
      rho(a, a) = 1.0;
      CHECK(lindblad_d(m, rho).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
  SECTION("trace free on random states") {
    Rng rng(5);
    for (int rep = 0; rep < 100; ++rep) {
      auto rho = random_density(rng, 2);
      CHECK(std::abs(lindblad_d(m, rho.mat()).trace()) < 1e-12);
    }
  }
  SECTION("pure commutator case") {
    CMatrix h(2, 2);
    h << 1.0, 0.0, 0.0, -1.0;
    std::vector<CMatrix> zero_c = {CMatrix::Zero(2, 2), CMatrix::Zero(2, 2)};
    Eigen::VectorXd p0(2);
    p0 << 0.5, 0.5;
    DiffusiveBelavkinModel cm(h, zero_c, p0);
    Rng rng(6);
    auto rho = random_density(rng, 2);
    const std::complex<double> mi(0.0, -1.0);
    CMatrix expected = mi * (h * rho.mat() - rho.mat() * h);
    CHECK((lindblad_d(cm, rho.mat()) - expected).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("diffusive noise term") {
  auto m = extract_diffusive_model(diffusive_apparatus(1e-4));
  SECTION("pointer states are fixed points") {
    for (int a = 0; a < 2; ++a) {
      CMatrix rho = CMatrix::Zero(2, 2);
      rho(a, a) = 1.0;
      for (int j = 0; j < 2; ++j)
        CHECK(diffusive_noise_term(m, rho, j).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
  SECTION("trace free on random states") {
    Rng rng(7);
    for (int rep = 0; rep < 100; ++rep) {
      auto rho = random_density(rng, 2);
      for (int j = 0; j < 2; ++j)
        CHECK(std::abs(diffusive_noise_term(m, rho.mat(), j).trace()) < 1e-12);
    }
  }
  SECTION("diagonal states reduce to the classical SDE coefficient") {
    // diag(D_j(rho))(a) = Q(a) (Gamma(j|a) - <Gamma(j)>), Gamma = (C + C+)_aa
    Eigen::VectorXd w(2);
    w << 0.3, 0.7;
    CMatrix rho = CMatrix::Zero(2, 2);
    rho(0, 0) = w[0];
    rho(1, 1) = w[1];
    for (int j = 0; j < 2; ++j) {
      Eigen::VectorXd gamma_j(2);
      for (int a = 0; a < 2; ++a)
        gamma_j[a] = (m.c_ops[j](a, a) + std::conj(m.c_ops[j](a, a))).real();
      const double mean = w.dot(gamma_j);
      const auto d = diffusive_noise_term(m, rho, j);
      for (int a = 0; a < 2; ++a)
        CHECK(d(a, a).real() == Catch::Approx(w[a] * (gamma_j[a] - mean)).margin(1e-14));
    }
  }
}

TEST_CASE("diffusive Belavkin integration") {
  auto m = extract_diffusive_model(diffusive_apparatus(1e-4));
  SECTION("pointer initial states give constant paths") {
    CMatrix rho0 = CMatrix::Zero(2, 2);
    rho0(0, 0) = 1.0;
    auto path = integrate_belavkin_diffusive(m, DensityMatrix(rho0), 1.0, 1e-3, 31);
    for (const auto& rho : path.rho_path)
      CHECK((rho - rho0).cwiseAbs().maxCoeff() < 1e-13);
    REQUIRE(path.collapse.has_value());
  }
  SECTION("diagonal states follow the classical diffusive SDE on the same noise") {
    Eigen::VectorXd p0(2);
    p0 << 0.5, 0.5;
    Eigen::MatrixXd gamma(2, 2);
    gamma << 1.0, -1.0, -1.0, 1.0;  // (C_j + C_j+)_aa for the fixture
    DiffusiveModel cm(p0, gamma);
    const double dt = 1e-3, horizon = 1.0;
    const std::uint64_t seed = 99;
    SdeOptions opts;
    opts.record_stride = 1000000;
    auto cpath = integrate_diffusive(cm, PointerDistribution::uniform(2), horizon, dt, seed,
                                     DiffusiveMode::unconditioned, opts);
    auto bpath = integrate_belavkin_diffusive(
        m, DensityMatrix::from_diagonal(PointerDistribution::uniform(2)), horizon, dt, seed,
        opts);
    REQUIRE(cpath.rejected_steps == 0);
    REQUIRE(bpath.rejected_steps == 0);
    const Eigen::VectorXd q_cl = cpath.q_path.row(cpath.q_path.rows() - 1);
    const Eigen::VectorXd q_bel = bpath.rho_path.back().diagonal().real();
    CHECK((q_cl - q_bel).cwiseAbs().maxCoeff() < 5.0 * dt * horizon);
  }
  SECTION("trace drift per unit time stays below 1e-9") {
    Rng rng(33);
    auto rho0 = random_density(rng, 2);
    auto path = integrate_belavkin_diffusive(m, rho0, 1.0, 1e-3, 34);
    CHECK(path.trace_drift_per_unit_time < 1e-9);
  }
  SECTION("ensemble mean follows the deterministic Lindblad evolution") {
    auto me = extract_diffusive_model(diffusive_apparatus(1e-4, 0.2, -0.2));
    // mixed state with coherence: Euler keeps the spectrum inside the cone
    // here, whereas a pure boundary state would trip the positivity monitor
    CMatrix mixed(2, 2);
    mixed << 0.5, 0.45, 0.45, 0.5;
    auto rho0 = DensityMatrix(mixed);
    const double horizon = 1.0;
    const int n_paths = 1500;
    stats::Moments m00, re01, im01;
    SdeOptions opts;
    opts.record_stride = 1000000;
    for (int p = 0; p < n_paths; ++p) {
      auto path = integrate_belavkin_diffusive(me, rho0, horizon, 1e-3,
                                               4000 + static_cast<std::uint64_t>(p), opts);
      const CMatrix& rho = path.rho_path.back();
      m00.add(rho(0, 0).real());
      re01.add(rho(0, 1).real());
      im01.add(rho(0, 1).imag());
    }
    const CMatrix ref = rk4_lindblad(me, rho0.mat(), horizon, 1e-3);
    CHECK(std::abs(m00.mean - ref(0, 0).real()) < 4.0 * m00.stderr_mean() + 2e-3);
    CHECK(std::abs(re01.mean - ref(0, 1).real()) < 4.0 * re01.stderr_mean() + 2e-3);
    CHECK(std::abs(im01.mean - ref(0, 1).imag()) < 4.0 * im01.stderr_mean() + 2e-3);
  }
  SECTION("positivity loss aborts with a diagnostic") {
    // non-pointer-diagonal operators pump coherence; with step rejection
    // disabled the smallest eigenvalue dives below the floor
    std::vector<CMatrix> c_ops = {pauli_x(), -pauli_x()};
    Eigen::VectorXd p0(2);
    p0 << 0.5, 0.5;
    DiffusiveBelavkinModel wild(CMatrix::Zero(2, 2), c_ops, p0);
    CHECK_FALSE(wild.pointer_diagonal);
    CMatrix rho0 = CMatrix::Zero(2, 2);
    rho0(0, 0) = 1.0;
    SdeOptions loose;
    loose.max_rel_update = 1e9;
    loose.boundary_tol = 1e9;
    CHECK_THROWS_AS(integrate_belavkin_diffusive(wild, DensityMatrix(rho0), 2.0, 0.05, 21,
                                                 loose),
                    positivity_loss_error);
  }
}

TEST_CASE("jump model extraction") {
  auto m = extract_jump_model(jump_apparatus(1e-4));
  SECTION("D_1 = -i diag(1, sqrt 2) and intensities (1, 2)") {
    CHECK(m.star == 0);
    CHECK(std::abs(m.d_ops[1](0, 0) - (-1.0i)) < 1e-12);
    CHECK(std::abs(m.d_ops[1](1, 1) - (-std::sqrt(2.0) * 1.0i)) < 1e-12);
    auto cm = classical_jump_model(m);
    CHECK(cm.theta(0, 1) == Catch::Approx(1.0).margin(1e-12));
    CHECK(cm.theta(1, 1) == Catch::Approx(2.0).margin(1e-12));
    CHECK(m.pointer_diagonal);
  }
  SECTION("diffusive-style apparatus has no basis-aligned probe state") {
    CHECK_THROWS_AS(extract_jump_model(diffusive_apparatus(1e-4)), wrong_limit_error);
  }
  SECTION("Tr[D rho D+] equals <theta> on diagonal states") {
    Eigen::VectorXd w(2);
    w << 0.25, 0.75;
    CMatrix rho = CMatrix::Zero(2, 2);
    rho(0, 0) = w[0];
    rho(1, 1) = w[1];
    CHECK(jump_intensity(m, rho, 1) ==
          Catch::Approx(1.0 * 0.25 + 2.0 * 0.75).margin(1e-12));
  }
}

TEST_CASE("jump Lindbladian and noise term") {
  auto m = extract_jump_model(jump_apparatus(1e-4));
  Rng rng(51);
  SECTION("trace free") {
    for (int rep = 0; rep < 100; ++rep) {
      auto rho = random_density(rng, 2);
      CHECK(std::abs(lindblad_p(m, rho.mat()).trace()) < 1e-12);
      CHECK(std::abs(jump_noise_term(m, rho.mat(), 1).trace()) < 1e-12);
    }
  }
  SECTION("pointer states are fixed points of the jump update") {
    for (int a = 0; a < 2; ++a) {
      CMatrix rho = CMatrix::Zero(2, 2);
      rho(a, a) = 1.0;
      CHECK((apply_jump(m, rho, 1) - rho).cwiseAbs().maxCoeff() < 1e-14);
      CHECK(jump_noise_term(m, rho, 1).cwiseAbs().maxCoeff() < 1e-14);
      CHECK(lindblad_p(m, rho).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
  SECTION("vanishing intensity cannot jump") {
    CMatrix d = CMatrix::Zero(2, 2);
    std::vector<CMatrix> d_ops = {CMatrix::Zero(2, 2), d};
    JumpBelavkinModel zero(CMatrix::Zero(2, 2), 0, d_ops);
    CMatrix rho = CMatrix::Zero(2, 2);
    rho(0, 0) = 1.0;
    CHECK_THROWS_AS(apply_jump(zero, rho, 1), impossible_jump_error);
  }
}

TEST_CASE("jumpy Belavkin integration") {
  auto m = extract_jump_model(jump_apparatus(1e-4));
  SECTION("pointer initial state: constant path, Poisson jump times") {
    CMatrix rho0 = CMatrix::Zero(2, 2);
    rho0(0, 0) = 1.0;  // theta(1|a) = 1
    stats::Moments jumps;
    for (int p = 0; p < 300; ++p) {
      SdeOptions opts;
      opts.record_stride = 100000;
      auto path = integrate_belavkin_jump(m, DensityMatrix(rho0), 4.0, 1e-3,
                                          600 + static_cast<std::uint64_t>(p), opts);
      jumps.add(static_cast<double>(path.jump_events.size()));
      CHECK((path.rho_path.back() - rho0).cwiseAbs().maxCoeff() < 1e-9);
    }
    CHECK(std::abs(jumps.mean - 4.0) < 4.0 * jumps.stderr_mean());
  }
  SECTION("diagonal states follow the classical thinning on the same event stream") {
    auto cm = classical_jump_model(m);
    const double dt = 1e-3, horizon = 4.0;
    const std::uint64_t seed = 4242;
    SdeOptions opts;
    opts.record_stride = 1000000;
    auto cpath = integrate_jump_thinning(cm, PointerDistribution::uniform(2), horizon, dt,
                                         seed, opts);
    auto bpath = integrate_belavkin_jump(
        m, DensityMatrix::from_diagonal(PointerDistribution::uniform(2)), horizon, dt, seed,
        opts);
    REQUIRE(cpath.jump_events.size() == bpath.jump_events.size());
    const Eigen::VectorXd q_cl = cpath.terminal_q();
    const Eigen::VectorXd q_bel = bpath.rho_path.back().diagonal().real();
    CHECK((q_cl - q_bel).cwiseAbs().maxCoeff() < 5.0 * dt * horizon);
  }
  SECTION("trace drift per unit time stays below 1e-9") {
    auto path = integrate_belavkin_jump(
        m, DensityMatrix::from_diagonal(PointerDistribution::uniform(2)), 4.0, 1e-3, 77);
    CHECK(path.trace_drift_per_unit_time < 1e-9);
  }
}

TEST_CASE("small-delta quantum chains approach the diffusive Belavkin law") {
  auto q0 = PointerDistribution::uniform(2);
  const double horizon = 1.0;
  const int n_paths = 800;

  auto chain_terminals = [&](double delta, std::uint64_t seed) {
    auto props = build_propagator(diffusive_apparatus(delta));
    const int steps = static_cast<int>(std::lround(horizon / delta));
    std::vector<double> out;
    for (int p = 0; p < n_paths; ++p) {
      auto traj = simulate_quantum_chain(props, DensityMatrix::from_diagonal(q0), steps,
                                         seed + static_cast<std::uint64_t>(p),
                                         steps);  // record final state only
      out.push_back(traj.rho_path.back().diagonal()[0]);
    }
    return out;
  };

  auto m = extract_diffusive_model(diffusive_apparatus(1e-4));
  std::vector<double> belavkin;
  SdeOptions opts;
  opts.record_stride = 1000000;
  for (int p = 0; p < n_paths; ++p) {
    auto path = integrate_belavkin_diffusive(m, DensityMatrix::from_diagonal(q0), horizon,
                                             2.5e-4, 30000 + static_cast<std::uint64_t>(p),
                                             opts);
    belavkin.push_back(path.rho_path.back().diagonal()[0].real());
  }
  const double d_coarse = stats::ks_statistic(chain_terminals(1e-2, 100000), belavkin);
  const double d_fine = stats::ks_statistic(chain_terminals(1e-3, 200000), belavkin);
  CHECK(d_fine < d_coarse);
}
