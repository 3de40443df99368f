#pragma once

// Random-Fourier-feature surrogate of the GP factorization function,
// f(x) = phi(x)^T g with g ~ N(0, I/M) and variational q(g) = N(mu, L L^T).

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "sntf/errors.hpp"
#include "sntf/random.hpp"

namespace sntf {

struct RffModel {
  Eigen::MatrixXd frequencies;  // M x d, row m is z_m
  double log_tau = 0.0;         // RBF inverse squared lengthscale
  double log_sigma2 = 0.0;      // observation noise variance
  Eigen::VectorXd weight_mean;  // 2M
  Eigen::MatrixXd weight_chol;  // 2M x 2M lower triangular

  Eigen::Index num_freqs() const { return frequencies.rows(); }
  Eigen::Index input_dim() const { return frequencies.cols(); }
  Eigen::Index feature_dim() const { return 2 * frequencies.rows(); }
  double tau() const { return std::exp(log_tau); }
  double sigma2() const { return std::exp(log_sigma2); }
};

/// M x d matrix of frequencies drawn from N(0, tau I).
inline Eigen::MatrixXd draw_frequencies(Eigen::Index num_freqs, Eigen::Index input_dim, double tau,
                                        Rng& rng) {
  Eigen::MatrixXd z(num_freqs, input_dim);
  const double sd = std::sqrt(tau);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = sd * standard_normal(rng);
  return z;
}

/// phi(x) = [cos(z_1^T x), sin(z_1^T x), ..., cos(z_M^T x), sin(z_M^T x)].
inline Eigen::VectorXd feature_map(const Eigen::Ref<const Eigen::VectorXd>& x,
                                   const Eigen::Ref<const Eigen::MatrixXd>& frequencies) {
  if (x.size() != frequencies.cols()) throw DomainError("input dimension does not match the frequencies");
  const Eigen::VectorXd phase = frequencies * x;
  Eigen::VectorXd phi(2 * phase.size());
  for (Eigen::Index m = 0; m < phase.size(); ++m) {
    phi[2 * m] = std::cos(phase[m]);
    phi[2 * m + 1] = std::sin(phase[m]);
  }
  return phi;
}

inline Eigen::VectorXd feature_map(const Eigen::Ref<const Eigen::VectorXd>& x, const RffModel& model) {
  return feature_map(x, model.frequencies);
}

/// Monte-Carlo kernel estimate (kappa(0) / M) phi(x1)^T phi(x2) with kappa(0) = 1.
inline double approx_kernel(const Eigen::Ref<const Eigen::VectorXd>& x1,
                            const Eigen::Ref<const Eigen::VectorXd>& x2, const RffModel& model) {
  return feature_map(x1, model).dot(feature_map(x2, model)) / static_cast<double>(model.num_freqs());
}

inline double rbf_kernel(const Eigen::Ref<const Eigen::VectorXd>& x1,
                         const Eigen::Ref<const Eigen::VectorXd>& x2, double tau) {
  return std::exp(-0.5 * tau * (x1 - x2).squaredNorm());
}

/// E_q[log N(y | phi^T g, sigma^2)] given precomputed features.
inline double expected_log_lik_features(double y, const Eigen::Ref<const Eigen::VectorXd>& phi,
                                        const RffModel& model) {
  const double s2 = model.sigma2();
  const double resid = y - phi.dot(model.weight_mean);
  const double spread = (model.weight_chol.transpose() * phi).squaredNorm();
  return -0.5 * std::log(2.0 * std::numbers::pi * s2) - (resid * resid + spread) / (2.0 * s2);
}

inline double expected_log_lik(double y, const Eigen::Ref<const Eigen::VectorXd>& x, const RffModel& model) {
  return expected_log_lik_features(y, feature_map(x, model), model);
}

/// KL(N(mu, L L^T) || N(0, I/M)) in closed form.
inline double kl_weights(const RffModel& model) {
  const double M = static_cast<double>(model.num_freqs());
  const double P = static_cast<double>(model.feature_dim());
  const auto& L = model.weight_chol;
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    if (!(L(i, i) > 0.0)) throw DomainError("Cholesky diagonal must be positive");
    log_det += 2.0 * std::log(L(i, i));
  }
  const double trace = L.triangularView<Eigen::Lower>().toDenseMatrix().squaredNorm();
  return 0.5 * (M * trace + M * model.weight_mean.squaredNorm() - P - P * std::log(M) - log_det);
}

/// sum_m log N(z_m | 0, tau I).
inline double log_prior_frequencies(const RffModel& model) {
  const double tau = model.tau();
  const double d = static_cast<double>(model.input_dim());
  const double M = static_cast<double>(model.num_freqs());
  return -0.5 * M * d * std::log(2.0 * std::numbers::pi * tau) -
         0.5 * model.frequencies.squaredNorm() / tau;
}

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// Posterior predictive of the surrogate: mean phi^T mu, variance phi^T L L^T phi + sigma^2.
inline Prediction predict_features(const Eigen::Ref<const Eigen::VectorXd>& phi, const RffModel& model) {
  return {phi.dot(model.weight_mean),
          (model.weight_chol.transpose() * phi).squaredNorm() + model.sigma2()};
}

inline Prediction predict(const Eigen::Ref<const Eigen::VectorXd>& x, const RffModel& model) {
  return predict_features(feature_map(x, model), model);
}

}  // namespace sntf
