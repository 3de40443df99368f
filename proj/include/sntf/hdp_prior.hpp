#pragma once

// Log-densities of the finite-partition HDP prior and the entry-index
// likelihood.
//
// Each mode k keeps D_k active nodes plus one aggregated slot (last
// position) holding the mass of all inactive nodes. Weights are softmax
// parameterized: beta^k = softmax(beta_tilde^k), omega^k_r = softmax(omega_tilde^k_r).

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sntf/errors.hpp"

namespace sntf {

inline constexpr double kSimplexFloor = 1e-300;

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline double softplus_inverse(double y) {
  if (!(y > 0.0)) throw DomainError("softplus inverse needs a positive argument");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

inline double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

/// Max-shifted softmax.
inline Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Eigen::VectorXd e = (v.array() - v.maxCoeff()).exp();
  return e / e.sum();
}

inline Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return v.array() - log_sum_exp(v);
}

/// log Beta(x | a, b).
inline double log_beta_pdf(double x, double a, double b) {
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(x) +
         (b - 1.0) * std::log1p(-x);
}

/// Reverse stick-breaking map on the D free coordinates (beta_1..beta_D):
/// xi_j = beta_j / Lambda_j with Lambda_j = 1 - sum_{t<j} beta_t.
inline Eigen::VectorXd stick_reverse_map(const Eigen::Ref<const Eigen::VectorXd>& beta_active) {
  Eigen::VectorXd xi(beta_active.size());
  double lambda = 1.0;
  for (Eigen::Index j = 0; j < beta_active.size(); ++j) {
    if (!(lambda > 0.0)) throw DomainError("stick remainder is not positive");
    xi[j] = beta_active[j] / lambda;
    lambda -= beta_active[j];
  }
  return xi;
}

namespace detail {

/// Lambda_j = sum_{t >= j} beta_t for j = 0..D-1 over a full (D+1) simplex;
/// equal to 1 - sum_{t<j} beta_t on the simplex but without cancellation.
inline Eigen::VectorXd stick_remainders(const Eigen::Ref<const Eigen::VectorXd>& beta) {
  const Eigen::Index D = beta.size() - 1;
  Eigen::VectorXd lambda(D + 1);
  lambda[D] = std::clamp(beta[D], kSimplexFloor, 1.0);
  for (Eigen::Index j = D; j-- > 0;) lambda[j] = lambda[j + 1] + std::clamp(beta[j], kSimplexFloor, 1.0);
  return lambda;
}

}  // namespace detail

/// log |d xi / d beta| = -sum_j log Lambda_j for a full (D+1) simplex.
inline double log_jacobian_beta(const Eigen::Ref<const Eigen::VectorXd>& beta) {
  const auto lambda = detail::stick_remainders(beta);
  return -lambda.head(beta.size() - 1).array().log().sum();
}

/// Transformed stick-breaking prior on a full simplex (D active weights +
/// aggregated slot):
///   log p(beta) = sum_{j<=D} [ log Beta(beta_j / Lambda_j | 1, alpha_tilde) - log Lambda_j ].
inline double log_prior_beta(const Eigen::Ref<const Eigen::VectorXd>& beta, double alpha_tilde) {
  if (beta.size() < 2) throw DomainError("beta needs at least one active weight and the aggregated slot");
  if (!(alpha_tilde > 0.0)) throw DomainError("alpha_tilde must be positive");
  const Eigen::Index D = beta.size() - 1;
  const auto lambda = detail::stick_remainders(beta);
  const double log_norm = std::lgamma(1.0 + alpha_tilde) - std::lgamma(alpha_tilde);
  double lp = 0.0;
  for (Eigen::Index j = 0; j < D; ++j) {
    if (!(lambda[j] > 0.0)) throw DomainError("stick remainder is not positive");
    const double log_one_minus_xi = std::log(lambda[j + 1]) - std::log(lambda[j]);
    lp += log_norm + (alpha_tilde - 1.0) * log_one_minus_xi - std::log(lambda[j]);
  }
  return lp;
}

/// Gradient of log_prior_beta with respect to the full beta vector, using the
/// telescoped form D log a + (a - 1) log beta_{D+1} - sum_{j=2}^{D} log Lambda_j.
inline Eigen::VectorXd log_prior_beta_gradient(const Eigen::Ref<const Eigen::VectorXd>& beta,
                                               double alpha_tilde) {
  const Eigen::Index D = beta.size() - 1;
  const auto lambda = detail::stick_remainders(beta);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(D + 1);
  double acc = 0.0;  // sum_{j=1}^{min(t,D-1)} 1/Lambda_j over 0-based j >= 1
  for (Eigen::Index t = 0; t <= D; ++t) {
    if (t >= 1 && t < D) acc += 1.0 / lambda[t];
    g[t] = -acc;
  }
  g[D] += (alpha_tilde - 1.0) / lambda[D];
  return g;
}

/// log Dir(omega | gamma * beta) over the D+1 partition cells.
inline double log_dirichlet(const Eigen::Ref<const Eigen::VectorXd>& omega, double gamma,
                            const Eigen::Ref<const Eigen::VectorXd>& beta) {
  if (omega.size() != beta.size()) throw DomainError("omega and beta lengths differ");
  if (!(gamma > 0.0)) throw DomainError("gamma must be positive");
  double lp = std::lgamma(gamma);
  for (Eigen::Index j = 0; j < omega.size(); ++j) {
    const double conc = gamma * std::clamp(beta[j], kSimplexFloor, 1.0);
    if (omega[j] <= 0.0 && conc < 1.0) throw DomainError("Dirichlet density is unbounded at a zero component");
    lp += -std::lgamma(conc) + (conc - 1.0) * std::log(std::clamp(omega[j], kSimplexFloor, 1.0));
  }
  return lp;
}

/// log Gamma(gamma | shape 1, rate alpha_tilde).
inline double log_gamma_prior(double gamma, double alpha_tilde) {
  return std::log(alpha_tilde) - alpha_tilde * gamma;
}

// --------------------------------------------------------------------------

/// Free parameters of one mode.
struct ModeParams {
  Eigen::VectorXd beta_tilde;   // D+1
  Eigen::MatrixXd theta_tilde;  // D x R1, theta = alpha * sigmoid(theta_tilde)
  Eigen::VectorXd gamma_tilde;  // R2, gamma = softplus(gamma_tilde)
  Eigen::MatrixXd omega_tilde;  // R2 x (D+1)

  Eigen::Index active_nodes() const { return theta_tilde.rows(); }
  Eigen::Index r1() const { return theta_tilde.cols(); }
  Eigen::Index r2() const { return omega_tilde.rows(); }

  Eigen::VectorXd beta() const { return softmax(beta_tilde); }
  double gamma(Eigen::Index r) const { return softplus(gamma_tilde[r]); }
  Eigen::VectorXd omega(Eigen::Index r) const { return softmax(omega_tilde.row(r).transpose()); }

  /// R2 x (D+1) table of log omega.
  Eigen::MatrixXd log_omega() const {
    Eigen::MatrixXd out(omega_tilde.rows(), omega_tilde.cols());
    for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) = log_softmax(omega_tilde.row(r).transpose());
    return out;
  }

  double theta(Eigen::Index node, Eigen::Index c, double alpha) const {
    return alpha * sigmoid(theta_tilde(node, c));
  }
};

/// Per-mode R2 x (D_k+1) log-sociability tables.
using LogSociabilities = std::vector<Eigen::MatrixXd>;

inline LogSociabilities log_sociabilities(std::span<const ModeParams> modes) {
  LogSociabilities out;
  out.reserve(modes.size());
  for (const auto& m : modes) out.push_back(m.log_omega());
  return out;
}

/// Builds tables from explicit probability vectors (tables[k] is R2 x (D+1)),
/// clamping zeros before the log.
inline LogSociabilities log_sociabilities_from_probabilities(const std::vector<Eigen::MatrixXd>& omega) {
  LogSociabilities out;
  for (const auto& m : omega) out.push_back(m.array().max(kSimplexFloor).log().matrix());
  return out;
}

/// log w_i with w_i = (1/R2) sum_r prod_k omega^k_{r, i_k}. Slot indices must
/// address active nodes unless `allow_aggregated` is set.
inline double entry_log_prob(std::span<const std::uint32_t> indices, const LogSociabilities& tables,
                             bool allow_aggregated = false) {
  if (indices.size() != tables.size()) throw DomainError("index arity does not match the mode count");
  const Eigen::Index R = tables.front().rows();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(R);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto slots = tables[k].cols();
    const auto i = static_cast<Eigen::Index>(indices[k]);
    if (i >= slots || (!allow_aggregated && i == slots - 1))
      throw DomainError("index " + std::to_string(i) + " in mode " + std::to_string(k) +
                        " is not an active node");
    acc += tables[k].col(i);
  }
  return log_sum_exp(acc) - std::log(static_cast<double>(R));
}

inline double entry_log_prob(std::span<const std::uint32_t> indices, std::span<const ModeParams> modes) {
  return entry_log_prob(indices, log_sociabilities(modes));
}

}  // namespace sntf
