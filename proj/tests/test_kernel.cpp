#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ism/kernel.hpp"
#include "ism/rng.hpp"

using namespace ism;

namespace {

// Two-pointer reference kernel used throughout the suite.
MeasurementKernel k2() {
  Eigen::MatrixXd p(2, 2);
  p << 0.7, 0.3, 0.4, 0.6;
  return MeasurementKernel({"a", "b"}, {"0", "1"}, p);
}

MeasurementKernel random_kernel(Rng& rng, int na, int ni) {
  Eigen::MatrixXd p(na, ni);
  for (int a = 0; a < na; ++a) {
    double s = 0.0;
    for (int i = 0; i < ni; ++i) {
      p(a, i) = 0.05 + rng.uniform();
      s += p(a, i);
    }
    p.row(a) /= s;
  }
  return MeasurementKernel(std::vector<std::string>(na, "a"), std::vector<std::string>(ni, "i"),
                           p, 0.0);
}

PointerDistribution random_distribution(Rng& rng, int na) {
  Eigen::VectorXd w(na);
  double s = 0.0;
  for (int a = 0; a < na; ++a) {
    w[a] = 0.05 + rng.uniform();
    s += w[a];
  }
  w /= s;
  return PointerDistribution(w);
}

}  // namespace

TEST_CASE("kernel validation") {
  SECTION("K2 is valid and non-degenerate") {
    auto rep = validate_kernel(k2());
    CHECK(rep.valid());
    CHECK_FALSE(rep.degenerate());
  }
  SECTION("identical rows produce a degeneracy warning, not an error") {
    Eigen::MatrixXd p(2, 2);
    p << 0.5, 0.5, 0.5, 0.5;
    MeasurementKernel k({"a", "b"}, {"0", "1"}, p);
    CHECK(k.degenerate());
    REQUIRE(k.degenerate_pairs().size() == 1);
    CHECK(k.degenerate_pairs()[0] == std::pair<int, int>(0, 1));
  }
  SECTION("probability bound violation is fatal") {
    Eigen::MatrixXd p(2, 2);
    p << 1.2, -0.2, 0.4, 0.6;
    CHECK_THROWS_AS(MeasurementKernel({"a", "b"}, {"0", "1"}, p), invalid_kernel_error);
  }
  SECTION("row sum deviation beyond 1e-9 is fatal") {
    Eigen::MatrixXd p(2, 2);
    p << 0.7, 0.3 + 5e-9, 0.4, 0.6;
    CHECK_THROWS_AS(MeasurementKernel({"a", "b"}, {"0", "1"}, p), invalid_kernel_error);
  }
  SECTION("label dimension mismatch is fatal") {
    Eigen::MatrixXd p(2, 2);
    p << 0.7, 0.3, 0.4, 0.6;
    CHECK_THROWS_AS(MeasurementKernel({"a", "b", "c"}, {"0", "1"}, p), invalid_kernel_error);
  }
}

TEST_CASE("pointer distribution invariants") {
  Eigen::VectorXd w(2);
  w << 0.5, 0.5;
  CHECK_NOTHROW(PointerDistribution(w));
  w << 0.6, 0.5;
  CHECK_THROWS_AS(PointerDistribution(w), error);
  w << 1.1, -0.1;
  CHECK_THROWS_AS(PointerDistribution(w), error);
}

TEST_CASE("predictive law") {
  auto k = k2();
  SECTION("uniform prior") {
    auto pi = predictive(k, PointerDistribution::uniform(2));
    CHECK(pi[0] == Catch::Approx(0.55).margin(1e-15));
    CHECK(pi[1] == Catch::Approx(0.45).margin(1e-15));
  }
  SECTION("peaked prior returns the kernel row") {
    auto pi = predictive(k, PointerDistribution::peaked(2, 0));
    CHECK(pi[0] == 0.7);
    CHECK(pi[1] == 0.3);
  }
  SECTION("sums to one for random inputs") {
    Rng rng(11);
    for (int rep = 0; rep < 50; ++rep) {
      auto kr = random_kernel(rng, 2 + static_cast<int>(rng.next_u64() % 3),
                              2 + static_cast<int>(rng.next_u64() % 3));
      auto q = random_distribution(rng, kr.n_pointers());
      CHECK(std::abs(predictive(kr, q).sum() - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("bayes update") {
  auto k = k2();
  SECTION("uniform prior, outcome 0") {
    auto q1 = bayes_update(k, PointerDistribution::uniform(2), 0);
    CHECK(q1(0) == Catch::Approx(7.0 / 11.0).margin(1e-15));
    CHECK(q1(1) == Catch::Approx(4.0 / 11.0).margin(1e-15));
  }
  SECTION("peaked distributions are exact fixed points") {
    auto peak = PointerDistribution::peaked(2, 0);
    for (int i = 0; i < 2; ++i) {
      auto q1 = bayes_update(k, peak, i);
      CHECK(q1(0) == 1.0);  // exact
      CHECK(q1(1) == 0.0);
    }
  }
  SECTION("impossible outcome") {
    Eigen::MatrixXd p(2, 2);
    p << 0.7, 0.3, 0.0, 1.0;
    MeasurementKernel kz({"a", "b"}, {"0", "1"}, p);
    CHECK_THROWS_AS(bayes_update(kz, PointerDistribution::peaked(2, 1), 0),
                    impossible_outcome_error);
  }
  SECTION("martingale identity: sum_i pi(i) Q'(i) = Q") {
    Rng rng(21);
    for (int rep = 0; rep < 50; ++rep) {
      auto kr = random_kernel(rng, 3, 3);
      auto q = random_distribution(rng, 3);
      auto pi = predictive(kr, q);
      Eigen::VectorXd mixed = Eigen::VectorXd::Zero(3);
      for (int i = 0; i < 3; ++i) mixed += pi[i] * bayes_update(kr, q, i).weights();
      CHECK((mixed - q.weights()).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("closed-form posterior") {
  auto k = k2();
  SECTION("counts (3,1)") {
    Eigen::VectorXi n(2);
    n << 3, 1;
    auto q = posterior_closed_form(k, PointerDistribution::uniform(2), n);
    const double expected = 0.05145 / 0.07065;  // 0.5*0.7^3*0.3 vs 0.5*0.4^3*0.6
    CHECK(q(0) == Catch::Approx(expected).margin(1e-12));
  }
  SECTION("empty counts leave the prior unchanged") {
    Eigen::VectorXi n = Eigen::VectorXi::Zero(2);
    Eigen::VectorXd q0(2);
    q0 << 0.3, 0.7;
    auto q = posterior_closed_form(k, PointerDistribution(q0), n);
    CHECK(q(0) == Catch::Approx(0.3).margin(1e-15));
  }
  SECTION("agrees with the step-by-step recursion on random cases") {
    Rng rng(31);
    for (int rep = 0; rep < 100; ++rep) {
      auto kr = random_kernel(rng, 2 + static_cast<int>(rng.next_u64() % 3), 3);
      auto q0 = random_distribution(rng, kr.n_pointers());
      const int n = 1 + static_cast<int>(rng.next_u64() % 1000);
      PointerDistribution q = q0;
      Eigen::VectorXi counts = Eigen::VectorXi::Zero(3);
      for (int s = 0; s < n; ++s) {
        const int i = rng.discrete(predictive(kr, q));
        ++counts[i];
        q = bayes_update(kr, q, i);
      }
      auto qc = posterior_closed_form(kr, q0, counts);
      CHECK((qc.weights() - q.weights()).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  SECTION("zero posterior mass everywhere") {
    Eigen::MatrixXd p(2, 2);
    p << 0.0, 1.0, 0.0, 1.0;
    MeasurementKernel kz({"a", "b"}, {"0", "1"}, p);
    Eigen::VectorXi n(2);
    n << 2, 0;
    CHECK_THROWS_AS(posterior_closed_form(kz, PointerDistribution::uniform(2), n),
                    impossible_outcome_error);
  }
}

TEST_CASE("sequence probability") {
  auto k = k2();
  auto q0 = PointerDistribution::uniform(2);
  SECTION("two-outcome example, both orders") {
    std::vector<int> s01 = {0, 1}, s10 = {1, 0};
    CHECK(sequence_probability(k, q0, s01) == Catch::Approx(0.225).margin(1e-15));
    // exchangeability is exact: permutations evaluate through identical counts
    CHECK(sequence_probability(k, q0, s01) == sequence_probability(k, q0, s10));
  }
  SECTION("empty sequence") {
    CHECK(sequence_probability(k, q0, std::vector<int>{}) == 1.0);
  }
  SECTION("chain rule through the recursion") {
    Rng rng(41);
    for (int rep = 0; rep < 100; ++rep) {
      auto kr = random_kernel(rng, 3, 2);
      auto q0r = random_distribution(rng, 3);
      const int n = 1 + static_cast<int>(rng.next_u64() % 25);
      std::vector<int> seq;
      PointerDistribution q = q0r;
      double chain = 1.0;
      for (int s = 0; s < n; ++s) {
        auto pi = predictive(kr, q);
        const int i = rng.discrete(pi);
        chain *= pi[i];
        seq.push_back(i);
        q = bayes_update(kr, q, i);
      }
      const double direct = sequence_probability(kr, q0r, seq);
      CHECK(std::abs(direct - chain) <= 1e-12 * std::max(direct, chain));
    }
  }
  SECTION("exact permutation invariance up to length 8") {
    std::vector<int> seq = {0, 1, 1, 0, 1, 0, 0, 1};
    const double ref = sequence_probability(k, q0, seq);
    std::sort(seq.begin(), seq.end());
    do {
      REQUIRE(sequence_probability(k, q0, seq) == ref);
    } while (std::next_permutation(seq.begin(), seq.end()));
  }
}

TEST_CASE("doob decomposition") {
  auto k = k2();
  auto q0 = PointerDistribution::uniform(2);
  SECTION("one step, outcome 0") {
    std::vector<int> seq = {0};
    auto d = doob_decompose(k, q0, seq);
    REQUIRE(d.size() == 2);
    CHECK(d[1].predictable_part[0] == Catch::Approx(0.55).margin(1e-15));
    CHECK(d[1].predictable_part[1] == Catch::Approx(0.45).margin(1e-15));
    CHECK(d[1].martingale_part[0] == Catch::Approx(0.45).margin(1e-15));
    CHECK(d[1].martingale_part[1] == Catch::Approx(-0.45).margin(1e-15));
  }
  SECTION("peaked prior gives a linear compensator") {
    auto peak = PointerDistribution::peaked(2, 0);
    std::vector<int> seq(100, 0);
    auto d = doob_decompose(k, peak, seq);
    CHECK(d[100].predictable_part[0] == Catch::Approx(100 * 0.7).margin(1e-12));
    CHECK(d[100].predictable_part[1] == Catch::Approx(100 * 0.3).margin(1e-12));
  }
  SECTION("X + A = N exactly and sum_i X = 0") {
    Rng rng(51);
    auto q = q0;
    std::vector<int> seq;
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(2);
    for (int s = 0; s < 200; ++s) seq.push_back(rng.discrete(predictive(k, q)));
    auto d = doob_decompose(k, q0, seq);
    Eigen::VectorXd n = Eigen::VectorXd::Zero(2);
    for (std::size_t step = 1; step < d.size(); ++step) {
      n[seq[step - 1]] += 1.0;
      const auto& dd = d[step];
      for (int i = 0; i < 2; ++i)
        REQUIRE(dd.martingale_part[i] + dd.predictable_part[i] == n[i]);  // exact
      REQUIRE(std::abs(dd.martingale_part.sum()) < 1e-12);
    }
  }
}

TEST_CASE("likelihood martingale") {
  auto k = k2();
  auto q0 = PointerDistribution::uniform(2);
  SECTION("uniform base, one step") {
    std::vector<int> seq = {0};
    auto lm = likelihood_martingale(k, q0, seq);
    CHECK(lm.z_alpha[0] == Catch::Approx(1.4).margin(1e-14));
    CHECK(lm.z_alpha[1] == Catch::Approx(0.8).margin(1e-14));
    CHECK(lm.z_total == Catch::Approx(1.1).margin(1e-14));
  }
  SECTION("ratio reproduces the recursion posterior") {
    Rng rng(61);
    for (int rep = 0; rep < 100; ++rep) {
      auto kr = random_kernel(rng, 3, 3);
      auto q0r = random_distribution(rng, 3);
      const int n = 1 + static_cast<int>(rng.next_u64() % 200);
      std::vector<int> seq;
      PointerDistribution q = q0r;
      for (int s = 0; s < n; ++s) {
        const int i = rng.discrete(predictive(kr, q));
        seq.push_back(i);
        q = bayes_update(kr, q, i);
      }
      auto lm = likelihood_martingale(kr, q0r, seq);
      auto qz = lm.posterior(q0r);
      CHECK((qz.weights() - q.weights()).cwiseAbs().maxCoeff() < 1e-12);
      // invariant Q_n(a) Z_n = Q_0(a) Z_n(a), in log form
      for (int a = 0; a < 3; ++a) {
        if (q(a) <= 0.0) continue;
        const double lhs = std::log(q(a)) + lm.log_z_total;
        const double rhs = std::log(q0r(a)) + lm.log_z_alpha[a];
        CHECK(std::abs(lhs - rhs) < 1e-10 * std::max(1.0, std::abs(lhs)));
      }
    }
  }
  SECTION("base equal to the sequence P-measure gives Z = 1") {
    std::vector<int> seq = {0, 1, 0, 0, 1};
    const double logp = std::log(sequence_probability(k, q0, seq));
    auto lm = likelihood_martingale(k, q0, seq, logp);
    CHECK(lm.z_total == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("zero base weight is rejected") {
    std::vector<int> seq = {0};
    Eigen::VectorXd base(2);
    base << 1.0, 0.0;
    CHECK_THROWS_AS(likelihood_martingale(k, q0, seq, base), invalid_base_measure_error);
  }
}

TEST_CASE("relative entropy") {
  auto k = k2();
  SECTION("closed form for K2") {
    const double expected = 0.7 * std::log(0.7 / 0.4) + 0.3 * std::log(0.3 / 0.6);
    CHECK(relative_entropy(k, 0, 1) == Catch::Approx(expected).margin(1e-15));
    CHECK(relative_entropy(k, 0, 1) == Catch::Approx(0.18378689738681217).margin(1e-12));
  }
  SECTION("diagonal vanishes exactly") {
    CHECK(relative_entropy(k, 0, 0) == 0.0);
    CHECK(relative_entropy(k, 1, 1) == 0.0);
  }
  SECTION("support mismatch gives +infinity") {
    Eigen::MatrixXd p(2, 2);
    p << 0.7, 0.3, 1.0, 0.0;
    MeasurementKernel kz({"a", "b"}, {"0", "1"}, p);
    CHECK(std::isinf(relative_entropy(kz, 0, 1)));
    CHECK(std::isfinite(relative_entropy(kz, 1, 0)));
  }
}
