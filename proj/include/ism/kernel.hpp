#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ism/errors.hpp"

namespace ism {

inline constexpr double kExactTol = 1e-12;     // exact-math invariants
inline constexpr double kValidateTol = 1e-9;   // ingestion validation
inline constexpr double kDegeneracyTol = 1e-9; // row distinctness

/// Validation summary for a conditional-probability matrix p(i|alpha)
/// (rows = pointer states, columns = outcomes).
struct KernelReport {
  bool row_stochastic = false;
  double max_row_sum_dev = 0.0;
  double min_entry = 0.0;
  double max_entry = 0.0;
  std::vector<std::pair<int, int>> degenerate_pairs;  // warning, not fatal
  std::vector<std::string> errors;

  bool valid() const { return errors.empty(); }
  bool degenerate() const { return !degenerate_pairs.empty(); }
};

inline KernelReport validate_kernel(const Eigen::MatrixXd& probs,
                                    double degeneracy_threshold = kDegeneracyTol) {
  KernelReport rep;
  if (probs.rows() < 1 || probs.cols() < 1) {
    rep.errors.push_back("kernel matrix is empty");
    return rep;
  }
  rep.min_entry = probs.minCoeff();
  rep.max_entry = probs.maxCoeff();
  if (rep.min_entry < -kValidateTol || rep.max_entry > 1.0 + kValidateTol)
    rep.errors.push_back("kernel entries must lie in [0, 1]");
  rep.max_row_sum_dev = (probs.rowwise().sum().array() - 1.0).abs().maxCoeff();
  rep.row_stochastic = rep.max_row_sum_dev <= kValidateTol;
  if (!rep.row_stochastic)
    rep.errors.push_back("kernel rows must sum to 1 (max deviation " +
                         std::to_string(rep.max_row_sum_dev) + ")");
  for (int a = 0; a < probs.rows(); ++a)
    for (int b = a + 1; b < probs.rows(); ++b)
      if ((probs.row(a) - probs.row(b)).cwiseAbs().maxCoeff() <= degeneracy_threshold)
        rep.degenerate_pairs.emplace_back(a, b);
  return rep;
}

/// Device characteristic: a finite pointer set A, a finite outcome alphabet
/// I, and the conditional outcome law p(i|alpha) for each pointer state.
/// Degenerate kernels (two identical rows) are accepted with a warning flag;
/// the Bayes recursion is still well defined, only the collapse guarantees
/// are void.
class MeasurementKernel {
 public:
  MeasurementKernel(std::vector<std::string> pointer_labels,
                    std::vector<std::string> outcome_labels, Eigen::MatrixXd probs,
                    double degeneracy_threshold = kDegeneracyTol)
      : pointer_labels_(std::move(pointer_labels)),
        outcome_labels_(std::move(outcome_labels)),
        p_(std::move(probs)) {
    if (static_cast<int>(pointer_labels_.size()) != p_.rows() ||
        static_cast<int>(outcome_labels_.size()) != p_.cols())
      throw invalid_kernel_error("kernel label/matrix dimension mismatch");
    const KernelReport rep = validate_kernel(p_, degeneracy_threshold);
    if (!rep.valid()) {
      std::string msg = "invalid kernel";
      for (const auto& e : rep.errors) msg += ": " + e;
      throw invalid_kernel_error(msg);
    }
    degenerate_pairs_ = rep.degenerate_pairs;
  }

  int n_pointers() const { return static_cast<int>(p_.rows()); }
  int n_outcomes() const { return static_cast<int>(p_.cols()); }
  double p(int alpha, int i) const { return p_(alpha, i); }
  const Eigen::MatrixXd& probs() const { return p_; }
  const std::vector<std::string>& pointer_labels() const { return pointer_labels_; }
  const std::vector<std::string>& outcome_labels() const { return outcome_labels_; }
  bool degenerate() const { return !degenerate_pairs_.empty(); }
  const std::vector<std::pair<int, int>>& degenerate_pairs() const {
    return degenerate_pairs_;
  }

 private:
  std::vector<std::string> pointer_labels_;
  std::vector<std::string> outcome_labels_;
  Eigen::MatrixXd p_;
  std::vector<std::pair<int, int>> degenerate_pairs_;
};

inline KernelReport validate_kernel(const MeasurementKernel& k,
                                    double degeneracy_threshold = kDegeneracyTol) {
  return validate_kernel(k.probs(), degeneracy_threshold);
}

/// Probability vector Q over the pointer set; the evolving system-state
/// distribution.  Immutable after construction.
class PointerDistribution {
 public:
  explicit PointerDistribution(Eigen::VectorXd weights) : w_(std::move(weights)) {
    if (w_.size() < 1) throw error("pointer distribution is empty");
    if (w_.minCoeff() < 0.0) throw error("pointer distribution has a negative entry");
    if (std::abs(w_.sum() - 1.0) > kExactTol)
      throw error("pointer distribution does not sum to 1");
  }

  static PointerDistribution uniform(int n) {
    return PointerDistribution(Eigen::VectorXd::Constant(n, 1.0 / n));
  }
  static PointerDistribution peaked(int n, int alpha) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    w[alpha] = 1.0;
    return PointerDistribution(w);
  }

  int size() const { return static_cast<int>(w_.size()); }
  double operator()(int alpha) const { return w_[alpha]; }
  const Eigen::VectorXd& weights() const { return w_; }
  int argmax() const {
    int idx = 0;
    w_.maxCoeff(&idx);
    return idx;
  }

 private:
  Eigen::VectorXd w_;
};

/// First threshold crossing of max_alpha Q_n(alpha): the finite-n stand-in
/// for the almost-sure collapse onto a random target pointer state.
struct CollapseEvent {
  int step;
  int target;
};

/// Measurement record: the outcome sequence (i_1, ..., i_n) and the counts
/// N_n(i) of each outcome.
struct OutcomeRecord {
  std::vector<int> sequence;
  Eigen::VectorXi counts;

  static OutcomeRecord from_sequence(std::vector<int> seq, int n_outcomes) {
    OutcomeRecord rec;
    rec.counts = Eigen::VectorXi::Zero(n_outcomes);
    for (int i : seq) {
      if (i < 0 || i >= n_outcomes) throw error("outcome index out of range");
      ++rec.counts[i];
    }
    rec.sequence = std::move(seq);
    return rec;
  }
};

/// Predictive outcome law pi(i) = sum_alpha p(i|alpha) q(alpha).
inline Eigen::VectorXd predictive(const MeasurementKernel& k, const PointerDistribution& q) {
  Eigen::VectorXd pi = k.probs().transpose() * q.weights();
  pi /= pi.sum();
  return pi;
}

/// One Bayes step: posterior over pointers given outcome `i`, plus the
/// predictive probability of that outcome.  Point masses are exact fixed
/// points (p*1/p == 1 in IEEE arithmetic).
struct BayesStep {
  PointerDistribution posterior;
  double outcome_probability;
};

inline BayesStep bayes_step(const MeasurementKernel& k, const PointerDistribution& q, int i) {
  if (i < 0 || i >= k.n_outcomes()) throw error("outcome index out of range");
  Eigen::VectorXd w = k.probs().col(i).cwiseProduct(q.weights());
  const double pi = w.sum();
  if (!(pi > 0.0))
    throw impossible_outcome_error("outcome " + k.outcome_labels()[i] +
                                   " has zero predictive probability");
  w /= pi;
  return BayesStep{PointerDistribution(std::move(w)), pi};
}

inline PointerDistribution bayes_update(const MeasurementKernel& k,
                                        const PointerDistribution& q, int i) {
  return bayes_step(k, q, i).posterior;
}

/// Closed-form posterior from outcome counts:
///   Q(alpha) proportional to q0(alpha) * prod_i p(i|alpha)^N(i).
/// Evaluated in log-space with max subtraction; p^N underflows for n beyond
/// a few thousand otherwise.
inline PointerDistribution posterior_closed_form(const MeasurementKernel& k,
                                                 const PointerDistribution& q0,
                                                 const Eigen::VectorXi& counts) {
  if (counts.size() != k.n_outcomes()) throw error("counts/outcome dimension mismatch");
  if (counts.minCoeff() < 0) throw error("negative outcome count");
  const int na = k.n_pointers();
  Eigen::VectorXd logw(na);
  for (int a = 0; a < na; ++a) {
    double lw = q0(a) > 0.0 ? std::log(q0(a)) : -std::numeric_limits<double>::infinity();
    for (int i = 0; i < k.n_outcomes(); ++i) {
      if (counts[i] == 0) continue;
      const double p = k.p(a, i);
      lw += p > 0.0 ? counts[i] * std::log(p) : -std::numeric_limits<double>::infinity();
    }
    logw[a] = lw;
  }
  const double lmax = logw.maxCoeff();
  if (!std::isfinite(lmax))
    throw impossible_outcome_error("counts have zero probability under every pointer state");
  Eigen::VectorXd w = (logw.array() - lmax).exp();
  w /= w.sum();
  return PointerDistribution(std::move(w));
}

/// P[B_{i_1..i_n}] = sum_alpha q0(alpha) prod_k p(i_k|alpha).  Evaluated
/// through the outcome counts, so any permutation of the sequence produces
/// bit-identical results (the sequence law is exchangeable).
inline double sequence_probability(const MeasurementKernel& k, const PointerDistribution& q0,
                                   std::span<const int> sequence) {
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(k.n_outcomes());
  for (int i : sequence) {
    if (i < 0 || i >= k.n_outcomes()) throw error("outcome index out of range");
    ++counts[i];
  }
  double total = 0.0;
  for (int a = 0; a < k.n_pointers(); ++a) {
    double prod = q0(a);
    for (int i = 0; i < k.n_outcomes(); ++i)
      if (counts[i] > 0) prod *= std::pow(k.p(a, i), static_cast<double>(counts[i]));
    total += prod;
  }
  return total;
}

/// Doob split of the counting process at one step: N_n(i) = X_n(i) + A_n(i)
/// with A_n(i) = sum_{m<n} pi_m(i) predictable and X_n a martingale.
struct DoobDecomposition {
  Eigen::VectorXd martingale_part;   // X_n(i)
  Eigen::VectorXd predictable_part;  // A_n(i)
};

/// Decomposition along a realized trajectory; element [n] is the split
/// after n outcomes (element [0] is zero).
inline std::vector<DoobDecomposition> doob_decompose(const MeasurementKernel& k,
                                                     const PointerDistribution& q0,
                                                     std::span<const int> sequence) {
  const int ni = k.n_outcomes();
  std::vector<DoobDecomposition> out;
  out.reserve(sequence.size() + 1);
  out.push_back({Eigen::VectorXd::Zero(ni), Eigen::VectorXd::Zero(ni)});
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(ni);
  Eigen::VectorXd compensator = Eigen::VectorXd::Zero(ni);
  PointerDistribution q = q0;
  for (int i : sequence) {
    compensator += predictive(k, q);
    counts[i] += 1.0;
    q = bayes_update(k, q, i);
    out.push_back({counts - compensator, compensator});
  }
  return out;
}

/// Radon-Nikodym likelihood ratios Z_n(alpha) of P_alpha against a strictly
/// positive reference measure P0 on the first n outcomes, with
/// Z_n = sum_alpha q0(alpha) Z_n(alpha).  Satisfies
/// Q_n(alpha) Z_n = Q_0(alpha) Z_n(alpha).
struct LikelihoodMartingale {
  Eigen::VectorXd z_alpha;
  double z_total = 0.0;
  Eigen::VectorXd log_z_alpha;
  double log_z_total = 0.0;

  /// Q_n recovered from the ratio, evaluated stably in log space.
  PointerDistribution posterior(const PointerDistribution& q0) const {
    Eigen::VectorXd logw(log_z_alpha.size());
    for (int a = 0; a < log_z_alpha.size(); ++a)
      logw[a] = q0(a) > 0.0 ? std::log(q0(a)) + log_z_alpha[a]
                            : -std::numeric_limits<double>::infinity();
    const double lmax = logw.maxCoeff();
    if (!std::isfinite(lmax))
      throw impossible_outcome_error("all posterior weights vanish");
    Eigen::VectorXd w = (logw.array() - lmax).exp();
    w /= w.sum();
    return PointerDistribution(std::move(w));
  }
};

/// Base measure given as the log-probability of the observed sequence under
/// an arbitrary P0 (must be finite, i.e. P0 charges the sequence).
inline LikelihoodMartingale likelihood_martingale(const MeasurementKernel& k,
                                                  const PointerDistribution& q0,
                                                  std::span<const int> sequence,
                                                  double log_base_probability) {
  if (!std::isfinite(log_base_probability))
    throw invalid_base_measure_error("base measure assigns zero mass to the sequence");
  const int na = k.n_pointers();
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(k.n_outcomes());
  for (int i : sequence) {
    if (i < 0 || i >= k.n_outcomes()) throw error("outcome index out of range");
    ++counts[i];
  }
  LikelihoodMartingale lm;
  lm.log_z_alpha.resize(na);
  for (int a = 0; a < na; ++a) {
    double lp = 0.0;
    for (int i = 0; i < k.n_outcomes(); ++i) {
      if (counts[i] == 0) continue;
      const double p = k.p(a, i);
      lp += p > 0.0 ? counts[i] * std::log(p) : -std::numeric_limits<double>::infinity();
    }
    lm.log_z_alpha[a] = lp - log_base_probability;
  }
  lm.z_alpha = lm.log_z_alpha.array().exp();
  double z = 0.0;
  for (int a = 0; a < na; ++a) z += q0(a) * lm.z_alpha[a];
  lm.z_total = z;
  lm.log_z_total = std::log(z);
  return lm;
}

/// Base measure given as an i.i.d. per-step outcome distribution (the
/// default choice is uniform over I).
inline LikelihoodMartingale likelihood_martingale(const MeasurementKernel& k,
                                                  const PointerDistribution& q0,
                                                  std::span<const int> sequence,
                                                  const Eigen::VectorXd& base_weights) {
  if (base_weights.size() != k.n_outcomes())
    throw invalid_base_measure_error("base weight dimension mismatch");
  if (base_weights.minCoeff() <= 0.0)
    throw invalid_base_measure_error("base weights must be strictly positive");
  double logz = 0.0;
  for (int i : sequence) logz += std::log(base_weights[i]);
  return likelihood_martingale(k, q0, sequence, logz);
}

inline LikelihoodMartingale likelihood_martingale(const MeasurementKernel& k,
                                                  const PointerDistribution& q0,
                                                  std::span<const int> sequence) {
  return likelihood_martingale(
      k, q0, sequence, Eigen::VectorXd::Constant(k.n_outcomes(), 1.0 / k.n_outcomes()));
}

/// Relative entropy S(gamma|alpha) = sum_i p(i|gamma) log(p(i|gamma)/p(i|alpha))
/// in nats.  +infinity when p(.|gamma) is not absolutely continuous with
/// respect to p(.|alpha); that is informative, not an error.
inline double relative_entropy(const MeasurementKernel& k, int gamma, int alpha) {
  double s = 0.0;
  for (int i = 0; i < k.n_outcomes(); ++i) {
    const double pg = k.p(gamma, i);
    if (pg == 0.0) continue;
    const double pa = k.p(alpha, i);
    if (pa == 0.0) return std::numeric_limits<double>::infinity();
    s += pg * std::log(pg / pa);
  }
  return s < 0.0 ? 0.0 : s;
}

}  // namespace ism
