#pragma once

// ELBO assembly, analytic gradients and mini-batch adaptive-moment training.
//
// Free parameters per mode: beta_tilde, theta_tilde, gamma_tilde, omega_tilde.
// Shared: frequencies Z, log_tau, log_sigma2, q(g) mean mu and Cholesky L.
// Everything except q(g) is a point estimate.

#include <boost/math/special_functions/digamma.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sntf/errors.hpp"
#include "sntf/hdp_prior.hpp"
#include "sntf/random.hpp"
#include "sntf/rff_gp.hpp"
#include "sntf/tensor.hpp"

namespace sntf {

struct TrainConfig {
  int r1 = 1;
  int r2 = 1;
  int num_freqs = 50;
  double learning_rate = 1e-3;
  int batch_size = 200;
  int epochs = 700;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double clip_norm = 1e3;  // global gradient-norm cap; <= 0 disables
  double init_tau = 1.0;

  double alpha_tilde() const { return std::pow(alpha, r1); }
  int input_dim(std::size_t num_modes) const { return static_cast<int>(num_modes) * (r1 + r2); }

  void validate() const {
    if (r1 < 1 || r2 < 1) throw DataError("R1 and R2 must be at least 1");
    if (num_freqs < 1) throw DataError("need at least one frequency");
    if (!(learning_rate > 0.0)) throw DataError("learning rate must be positive");
    if (batch_size < 1) throw DataError("batch size must be positive");
    if (epochs < 0) throw DataError("epochs must be non-negative");
    if (!(alpha > 0.0)) throw DataError("alpha must be positive");
  }
};

struct ModelParams {
  std::vector<ModeParams> modes;
  RffModel rff;

  std::size_t num_modes() const noexcept { return modes.size(); }
  int r1() const { return static_cast<int>(modes.front().r1()); }
  int r2() const { return static_cast<int>(modes.front().r2()); }

  /// Zero-valued bundle with the same shapes.
  ModelParams zeros_like() const {
    ModelParams z;
    for (const auto& m : modes)
      z.modes.push_back({Eigen::VectorXd::Zero(m.beta_tilde.size()),
                         Eigen::MatrixXd::Zero(m.theta_tilde.rows(), m.theta_tilde.cols()),
                         Eigen::VectorXd::Zero(m.gamma_tilde.size()),
                         Eigen::MatrixXd::Zero(m.omega_tilde.rows(), m.omega_tilde.cols())});
    z.rff.frequencies = Eigen::MatrixXd::Zero(rff.frequencies.rows(), rff.frequencies.cols());
    z.rff.log_tau = 0.0;
    z.rff.log_sigma2 = 0.0;
    z.rff.weight_mean = Eigen::VectorXd::Zero(rff.weight_mean.size());
    z.rff.weight_chol = Eigen::MatrixXd::Zero(rff.weight_chol.rows(), rff.weight_chol.cols());
    return z;
  }
};

/// Observed entries in active-node coordinates.
struct TrainingSet {
  std::size_t num_modes = 0;
  std::vector<std::uint32_t> indices;  // flat, entry-major
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  std::span<const std::uint32_t> index(std::size_t n) const {
    return {indices.data() + n * num_modes, num_modes};
  }

  static TrainingSet from(const SparseTensorData& data, const ActiveNodeMap& nodes) {
    TrainingSet t;
    t.num_modes = data.num_modes();
    t.values = data.values();
    t.indices.reserve(data.flat_indices().size());
    for (std::size_t n = 0; n < data.size(); ++n) {
      auto idx = data.index(n);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        bool unseen = false;
        t.indices.push_back(nodes.lookup(k, idx[k], &unseen));
        if (unseen) throw DataError("training entry uses a node outside the active map");
      }
    }
    return t;
  }
};

struct EpochLog {
  int epoch = 0;
  double full_elbo = 0.0;
  double data_term = 0.0;
  double kl_term = 0.0;
  double wall_seconds = 0.0;
};

struct TrainedModel {
  ModelParams params;
  ActiveNodeMap nodes;
  TrainConfig config;
  std::vector<EpochLog> trace;
};

struct ElboTerms {
  double prior = 0.0;  // HDP priors, location prior and log p(Z)
  double kl = 0.0;     // KL(q(g) || p(g))
  double data = 0.0;   // scaled sum of log w_i + E_q log N(y_i | f, sigma^2)
  double total() const { return prior - kl + data; }
};

// --------------------------------------------------------------------------
// Inputs to the value model

/// x_i = [theta^1_{i_1}; omega_tilde^1_{:, i_1}; ...; theta^K_{i_K}; omega_tilde^K_{:, i_K}].
/// Slot index D_k (the aggregated slot) uses the box centre for theta.
inline Eigen::VectorXd build_input(const ModelParams& p, std::span<const std::uint32_t> slots, double alpha) {
  const Eigen::Index R1 = p.r1(), R2 = p.r2();
  Eigen::VectorXd x(static_cast<Eigen::Index>(slots.size()) * (R1 + R2));
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const auto& m = p.modes[k];
    const auto i = static_cast<Eigen::Index>(slots[k]);
    const Eigen::Index off = static_cast<Eigen::Index>(k) * (R1 + R2);
    for (Eigen::Index c = 0; c < R1; ++c)
      x[off + c] = i < m.active_nodes() ? m.theta(i, c, alpha) : 0.5 * alpha;
    x.segment(off + R1, R2) = m.omega_tilde.col(i);
  }
  return x;
}

// --------------------------------------------------------------------------
// ELBO and gradient

namespace detail {

struct ModeCache {
  Eigen::VectorXd beta;
  Eigen::MatrixXd log_omega;  // R2 x (D+1)
  Eigen::MatrixXd omega;
  Eigen::VectorXd gamma;
};

inline std::vector<ModeCache> mode_caches(const ModelParams& p) {
  std::vector<ModeCache> c;
  for (const auto& m : p.modes) {
    ModeCache mc;
    mc.beta = m.beta();
    mc.log_omega = m.log_omega();
    mc.omega = mc.log_omega.array().exp();
    mc.gamma.resize(m.gamma_tilde.size());
    for (Eigen::Index r = 0; r < mc.gamma.size(); ++r) mc.gamma[r] = m.gamma(r);
    c.push_back(std::move(mc));
  }
  return c;
}

/// Softmax backprop: d/d v_tilde given d/d v where v = softmax(v_tilde).
inline Eigen::VectorXd softmax_backward(const Eigen::VectorXd& prob, const Eigen::VectorXd& grad_prob) {
  return prob.array() * (grad_prob.array() - prob.dot(grad_prob));
}

}  // namespace detail

/// Mini-batch ELBO; the data term is scaled by n_total / |batch|.
/// When `grad` is non-null it receives d ELBO / d params, shaped like
/// `params` (the Cholesky entry is with respect to the entries of L).
inline ElboTerms elbo_minibatch(const ModelParams& p, const TrainingSet& data,
                                std::span<const std::size_t> batch, std::size_t n_total, double alpha,
                                ModelParams* grad = nullptr) {
  using boost::math::digamma;
  if (batch.empty()) throw DataError("empty mini-batch");
  const std::size_t K = p.num_modes();
  const Eigen::Index R1 = p.r1(), R2 = p.r2();
  const double alpha_tilde = std::pow(alpha, static_cast<double>(R1));
  const auto caches = detail::mode_caches(p);
  const RffModel& rff = p.rff;
  const Eigen::MatrixXd L = rff.weight_chol.triangularView<Eigen::Lower>();
  const double M = static_cast<double>(rff.num_freqs());
  const double sigma2 = rff.sigma2();
  const double tau = rff.tau();

  if (grad) *grad = p.zeros_like();
  ElboTerms terms;

  // ---- prior terms
  for (std::size_t k = 0; k < K; ++k) {
    const auto& mc = caches[k];
    const auto& m = p.modes[k];
    const Eigen::Index S = mc.beta.size();  // D + 1
    terms.prior += log_prior_beta(mc.beta, alpha_tilde);
    terms.prior += -static_cast<double>(m.active_nodes() * R1) * std::log(alpha);
    Eigen::VectorXd g_beta;
    if (grad) g_beta = log_prior_beta_gradient(mc.beta, alpha_tilde);
    for (Eigen::Index r = 0; r < R2; ++r) {
      const double gamma = mc.gamma[r];
      terms.prior += log_gamma_prior(gamma, alpha_tilde);
      double lp = std::lgamma(gamma);
      double g_gamma = grad ? digamma(gamma) - alpha_tilde : 0.0;
      Eigen::VectorXd c(S);
      for (Eigen::Index j = 0; j < S; ++j) {
        const double conc = gamma * std::max(mc.beta[j], kSimplexFloor);
        const double lo = mc.log_omega(r, j);
        lp += -std::lgamma(conc) + (conc - 1.0) * lo;
        if (grad) {
          const double dconc = lo - digamma(conc);
          g_beta[j] += gamma * dconc;
          g_gamma += mc.beta[j] * dconc;
          c[j] = conc - 1.0;
        }
      }
      terms.prior += lp;
      if (grad) {
        auto& g = grad->modes[k];
        g.gamma_tilde[r] += g_gamma * sigmoid(m.gamma_tilde[r]);
        g.omega_tilde.row(r) += (c - mc.omega.row(r).transpose() * c.sum()).transpose();
      }
    }
    if (grad) grad->modes[k].beta_tilde += detail::softmax_backward(mc.beta, g_beta);
  }
  terms.prior += log_prior_frequencies(rff);
  terms.kl = kl_weights(rff);
  if (grad) {
    auto& g = grad->rff;
    g.frequencies += -rff.frequencies / tau;
    g.log_tau += -0.5 * M * static_cast<double>(rff.input_dim()) + 0.5 * rff.frequencies.squaredNorm() / tau;
    g.weight_mean += -M * rff.weight_mean;
    g.weight_chol += -M * L;
    for (Eigen::Index i = 0; i < L.rows(); ++i) g.weight_chol(i, i) += 1.0 / L(i, i);
  }

  // ---- data terms
  const double scale = static_cast<double>(n_total) / static_cast<double>(batch.size());
  const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * sigma2);
  const Eigen::Index P = rff.feature_dim();
  const Eigen::Index B = R1 + R2;
  std::vector<Eigen::MatrixXd> slot_mass;  // [k] R2 x (D+1): sum of scaled responsibilities
  Eigen::MatrixXd phi_outer;
  if (grad) {
    for (const auto& mc : caches) slot_mass.push_back(Eigen::MatrixXd::Zero(R2, mc.log_omega.cols()));
    phi_outer = Eigen::MatrixXd::Zero(P, P);
  }
  Eigen::VectorXd acc(R2), phi(P), h(rff.num_freqs());
  double data_sum = 0.0;
  for (const auto n : batch) {
    const auto idx = data.index(n);
    // entry log-probability
    acc.setZero();
    for (std::size_t k = 0; k < K; ++k) acc += caches[k].log_omega.col(idx[k]);
    const double lse = log_sum_exp(acc);
    data_sum += lse - std::log(static_cast<double>(R2));
    // value likelihood
    const Eigen::VectorXd x = build_input(p, idx, alpha);
    const Eigen::VectorXd phase = rff.frequencies * x;
    for (Eigen::Index mI = 0; mI < phase.size(); ++mI) {
      phi[2 * mI] = std::cos(phase[mI]);
      phi[2 * mI + 1] = std::sin(phase[mI]);
    }
    const double resid = data.values[n] - phi.dot(rff.weight_mean);
    const Eigen::VectorXd spread = L.transpose() * phi;
    const double sq = resid * resid + spread.squaredNorm();
    data_sum += log_norm - sq / (2.0 * sigma2);

    if (!grad) continue;
    const Eigen::VectorXd resp = (acc.array() - lse).exp();
    for (std::size_t k = 0; k < K; ++k) slot_mass[k].col(idx[k]) += scale * resp;
    grad->rff.weight_mean += (scale * resid / sigma2) * phi;
    phi_outer.noalias() += scale * phi * phi.transpose();
    grad->rff.log_sigma2 += scale * (-0.5 + sq / (2.0 * sigma2));
    const Eigen::VectorXd g_phi = (resid / sigma2) * rff.weight_mean - (L * spread) / sigma2;
    for (Eigen::Index mI = 0; mI < h.size(); ++mI)
      h[mI] = scale * (-phi[2 * mI + 1] * g_phi[2 * mI] + phi[2 * mI] * g_phi[2 * mI + 1]);
    grad->rff.frequencies.noalias() += h * x.transpose();
    const Eigen::VectorXd g_x = rff.frequencies.transpose() * h;
    for (std::size_t k = 0; k < K; ++k) {
      auto& gm = grad->modes[k];
      const auto& m = p.modes[k];
      const auto i = static_cast<Eigen::Index>(idx[k]);
      const Eigen::Index off = static_cast<Eigen::Index>(k) * B;
      for (Eigen::Index c = 0; c < R1; ++c) {
        const double s = sigmoid(m.theta_tilde(i, c));
        gm.theta_tilde(i, c) += g_x[off + c] * alpha * s * (1.0 - s);
      }
      gm.omega_tilde.col(i) += g_x.segment(off + R1, R2);
    }
  }
  terms.data = scale * data_sum;

  if (grad) {
    for (std::size_t k = 0; k < K; ++k) {
      const Eigen::VectorXd total = slot_mass[k].rowwise().sum();
      grad->modes[k].omega_tilde +=
          slot_mass[k] - (caches[k].omega.array().colwise() * total.array()).matrix();
    }
    Eigen::MatrixXd gL = -(phi_outer * L) / sigma2;
    grad->rff.weight_chol += gL.triangularView<Eigen::Lower>().toDenseMatrix();
  }
  return terms;
}

inline ElboTerms elbo_full(const ModelParams& p, const TrainingSet& data, double alpha) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return elbo_minibatch(p, data, all, data.size(), alpha);
}

inline ModelParams gradient(const ModelParams& p, const TrainingSet& data,
                            std::span<const std::size_t> batch, std::size_t n_total, double alpha) {
  ModelParams g;
  elbo_minibatch(p, data, batch, n_total, alpha, &g);
  return g;
}

// --------------------------------------------------------------------------
// Flat parameter layout. The Cholesky diagonal is stored as log L_ii so the
// flat vector is unconstrained.

struct ParamSegment {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};

inline std::vector<ParamSegment> param_layout(const ModelParams& p) {
  std::vector<ParamSegment> segs;
  Eigen::Index off = 0;
  auto add = [&](std::string name, Eigen::Index size) {
    segs.push_back({std::move(name), off, size});
    off += size;
  };
  for (std::size_t k = 0; k < p.modes.size(); ++k) {
    const auto& m = p.modes[k];
    const auto tag = "[" + std::to_string(k) + "]";
    add("beta_tilde" + tag, m.beta_tilde.size());
    add("theta_tilde" + tag, m.theta_tilde.size());
    add("gamma_tilde" + tag, m.gamma_tilde.size());
    add("omega_tilde" + tag, m.omega_tilde.size());
  }
  const Eigen::Index P = p.rff.weight_chol.rows();
  add("frequencies", p.rff.frequencies.size());
  add("log_tau", 1);
  add("log_sigma2", 1);
  add("weight_mean", p.rff.weight_mean.size());
  add("weight_chol", P * (P + 1) / 2);
  return segs;
}

namespace detail {

template <typename Params, typename Visit>
void visit_flat(Params& p, Visit&& visit) {
  for (auto& m : p.modes) {
    for (Eigen::Index i = 0; i < m.beta_tilde.size(); ++i) visit(m.beta_tilde.data()[i], false);
    for (Eigen::Index i = 0; i < m.theta_tilde.size(); ++i) visit(m.theta_tilde.data()[i], false);
    for (Eigen::Index i = 0; i < m.gamma_tilde.size(); ++i) visit(m.gamma_tilde.data()[i], false);
    for (Eigen::Index i = 0; i < m.omega_tilde.size(); ++i) visit(m.omega_tilde.data()[i], false);
  }
  for (Eigen::Index i = 0; i < p.rff.frequencies.size(); ++i) visit(p.rff.frequencies.data()[i], false);
  visit(p.rff.log_tau, false);
  visit(p.rff.log_sigma2, false);
  for (Eigen::Index i = 0; i < p.rff.weight_mean.size(); ++i) visit(p.rff.weight_mean.data()[i], false);
  auto& L = p.rff.weight_chol;
  for (Eigen::Index c = 0; c < L.cols(); ++c)
    for (Eigen::Index r = c; r < L.rows(); ++r) visit(L(r, c), r == c);
}

}  // namespace detail

inline Eigen::VectorXd pack(const ModelParams& p) {
  std::vector<double> out;
  detail::visit_flat(p, [&](const double& v, bool diag) { out.push_back(diag ? std::log(v) : v); });
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

inline void unpack(const Eigen::VectorXd& flat, ModelParams& p) {
  Eigen::Index i = 0;
  detail::visit_flat(p, [&](double& v, bool diag) {
    v = diag ? std::exp(flat[i]) : flat[i];
    ++i;
  });
}

/// Gradient in the flat (log-diagonal) coordinates.
inline Eigen::VectorXd pack_gradient(const ModelParams& grad, const ModelParams& p) {
  std::vector<double> out;
  detail::visit_flat(grad, [&](const double& v, bool) { out.push_back(v); });
  const auto& L = p.rff.weight_chol;
  const Eigen::Index P = L.rows();
  // Diagonal positions inside the column-major lower-triangular block.
  Eigen::Index pos = static_cast<Eigen::Index>(out.size()) - P * (P + 1) / 2;
  for (Eigen::Index c = 0; c < P; ++c) {
    out[static_cast<std::size_t>(pos)] *= L(c, c);
    pos += P - c;
  }
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

// --------------------------------------------------------------------------

/// Initial parameters: beta_tilde, omega_tilde ~ N(0, 0.01); theta at the box
/// centre; gamma = 1; mu = 0; L = 0.1 I; Z ~ N(0, tau0 I);
/// sigma^2 = 0.1 Var(y).
inline TrainedModel init_params(const SparseTensorData& train, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw InsufficientDataError("cannot initialise from an empty tensor");
  auto rng = make_rng(cfg.seed, 0x1417);
  TrainedModel model;
  model.config = cfg;
  model.nodes = reindex_active_nodes(train);
  const auto dims = model.nodes.active_dims();
  const double gamma0 = softplus_inverse(1.0);
  for (auto D : dims) {
    ModeParams m;
    const Eigen::Index S = static_cast<Eigen::Index>(D) + 1;
    m.beta_tilde.resize(S);
    for (Eigen::Index i = 0; i < S; ++i) m.beta_tilde[i] = 0.1 * standard_normal(rng);
    m.theta_tilde = Eigen::MatrixXd::Zero(D, cfg.r1);
    m.gamma_tilde = Eigen::VectorXd::Constant(cfg.r2, gamma0);
    m.omega_tilde.resize(cfg.r2, S);
    for (Eigen::Index i = 0; i < m.omega_tilde.size(); ++i) m.omega_tilde.data()[i] = 0.1 * standard_normal(rng);
    model.params.modes.push_back(std::move(m));
  }
  auto& rff = model.params.rff;
  const Eigen::Index P = 2 * cfg.num_freqs;
  rff.frequencies = draw_frequencies(cfg.num_freqs, cfg.input_dim(dims.size()), cfg.init_tau, rng);
  rff.log_tau = std::log(cfg.init_tau);
  const auto& y = train.values();
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= static_cast<double>(y.size());
  rff.log_sigma2 = std::log(0.1 * (var > 0.0 ? var : 1.0));
  rff.weight_mean = Eigen::VectorXd::Zero(P);
  rff.weight_chol = 0.1 * Eigen::MatrixXd::Identity(P, P);
  return model;
}

/// Non-finite state during training; carries the last finite parameters.
class TrainingError : public NumericalError {
 public:
  TrainingError(const std::string& what, std::shared_ptr<const TrainedModel> snapshot)
      : NumericalError(what), snapshot_(std::move(snapshot)) {}
  const TrainedModel* snapshot() const noexcept { return snapshot_.get(); }

 private:
  std::shared_ptr<const TrainedModel> snapshot_;
};

namespace detail {

inline void check_finite(const Eigen::VectorXd& flat, const std::vector<ParamSegment>& layout,
                         const char* what, const TrainedModel& last_good) {
  for (const auto& seg : layout)
    if (!flat.segment(seg.offset, seg.size).allFinite())
      throw TrainingError(std::string("non-finite ") + what + " in " + seg.name,
                          std::make_shared<const TrainedModel>(last_good));
}

/// exp of every stored log L_ii must stay positive and finite.
inline void check_log_diagonal(const Eigen::VectorXd& flat, const ParamSegment& chol, Eigen::Index P,
                               const TrainedModel& last_good) {
  Eigen::Index pos = chol.offset;
  for (Eigen::Index c = 0; c < P; ++c) {
    const double d = std::exp(flat[pos]);
    if (!(d > 0.0) || !std::isfinite(d))
      throw TrainingError("non-finite parameter in weight_chol", std::make_shared<const TrainedModel>(last_good));
    pos += P - c;
  }
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adaptive-moment gradient ascent over shuffled mini-batches. The last short
/// batch of an epoch is kept. Appends one trace row (full-data ELBO) per epoch.
inline TrainedModel train(const SparseTensorData& data, const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {}) {
  auto model = init_params(data, cfg);
  if (cfg.epochs == 0) return model;
  const auto set = TrainingSet::from(data, model.nodes);
  const std::size_t N = set.size();
  const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), N);
  const auto layout = param_layout(model.params);

  Eigen::VectorXd x = pack(model.params);
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(x.size());
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(x.size());
  std::uint64_t step = 0;
  const auto start = std::chrono::steady_clock::now();
  ModelParams g;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto rng = make_rng(cfg.seed, 0xe90c0000ULL + static_cast<std::uint64_t>(epoch));
    const auto perm = seeded_permutation(N, rng);
    for (std::size_t s = 0; s < N; s += B) {
      const std::span<const std::size_t> batch(perm.data() + s, std::min(B, N - s));
      try {
        elbo_minibatch(model.params, set, batch, N, cfg.alpha, &g);
      } catch (const DomainError& e) {
        throw TrainingError(std::string("degenerate parameters: ") + e.what(),
                            std::make_shared<const TrainedModel>(model));
      }
      Eigen::VectorXd flat_grad = pack_gradient(g, model.params);
      detail::check_finite(flat_grad, layout, "gradient", model);
      const double norm = flat_grad.norm();
      if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) flat_grad *= cfg.clip_norm / norm;
      ++step;
      m1 = cfg.adam_beta1 * m1 + (1.0 - cfg.adam_beta1) * flat_grad;
      m2 = cfg.adam_beta2 * m2 + (1.0 - cfg.adam_beta2) * flat_grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
      Eigen::VectorXd next =
          x.array() + cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.adam_epsilon);
      detail::check_finite(next, layout, "parameter", model);
      detail::check_log_diagonal(next, layout.back(), model.params.rff.weight_chol.rows(), model);
      x = std::move(next);
      unpack(x, model.params);
    }
    ElboTerms terms;
    try {
      terms = elbo_full(model.params, set, cfg.alpha);
    } catch (const DomainError& e) {
      throw TrainingError(std::string("degenerate parameters: ") + e.what(),
                          std::make_shared<const TrainedModel>(model));
    }
    EpochLog log{epoch, terms.total(), terms.data, terms.kl,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
    if (!std::isfinite(log.full_elbo))
      throw TrainingError("non-finite ELBO at epoch " + std::to_string(epoch),
                          std::make_shared<const TrainedModel>(model));
    model.trace.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return model;
}

inline void write_training_log(std::ostream& out, const std::vector<EpochLog>& trace) {
  out << "epoch,full_elbo,data_term,kl_term,wall_seconds\n" << std::setprecision(17);
  for (const auto& e : trace)
    out << e.epoch << ',' << e.full_elbo << ',' << e.data_term << ',' << e.kl_term << ',' << e.wall_seconds
        << '\n';
}

// --------------------------------------------------------------------------
// Prediction with a trained model (original node ids).

struct MappedIndex {
  std::vector<std::uint32_t> slots;
  bool unseen = false;
};

inline MappedIndex map_index(const TrainedModel& model, std::span<const std::uint32_t> original) {
  if (original.size() != model.nodes.num_modes()) throw DataError("index arity does not match the model");
  MappedIndex out;
  for (std::size_t k = 0; k < original.size(); ++k) out.slots.push_back(model.nodes.lookup(k, original[k], &out.unseen));
  return out;
}

struct ValuePrediction {
  double mean = 0.0;
  double variance = 0.0;
  bool unseen = false;
};

/// Predictive mean and variance of an entry value. A node never seen in
/// training is treated as exchangeable with the active nodes of its mode:
/// the prediction is the mixture over those nodes weighted by their
/// renormalized beta. At most `max_components` combinations are used; beyond
/// that each unseen mode keeps only its heaviest nodes.
inline ValuePrediction predict_value(const TrainedModel& model, std::span<const std::uint32_t> original,
                                     std::size_t max_components = 4096) {
  const auto mapped = map_index(model, original);
  const auto& p = model.params;
  const double alpha = model.config.alpha;
  if (!mapped.unseen) {
    const auto pred = predict(build_input(p, mapped.slots, alpha), p.rff);
    return {pred.mean, pred.variance, false};
  }

  struct Choice {
    std::size_t mode;
    std::vector<std::uint32_t> nodes;
    std::vector<double> weights;
  };
  std::vector<Choice> choices;
  std::size_t combos = 1;
  for (std::size_t k = 0; k < mapped.slots.size(); ++k) {
    const auto D = static_cast<std::uint32_t>(p.modes[k].active_nodes());
    if (mapped.slots[k] < D) continue;
    Choice c{k, {}, {}};
    c.nodes.resize(D);
    std::iota(c.nodes.begin(), c.nodes.end(), 0u);
    combos *= D;
    choices.push_back(std::move(c));
  }
  const auto per_mode = static_cast<std::size_t>(
      std::max(1.0, std::floor(std::pow(static_cast<double>(max_components), 1.0 / choices.size()))));
  for (auto& c : choices) {
    const Eigen::VectorXd beta = p.modes[c.mode].beta();
    if (combos > max_components && c.nodes.size() > per_mode) {
      std::stable_sort(c.nodes.begin(), c.nodes.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return beta[a] > beta[b]; });
      c.nodes.resize(per_mode);
    }
    double total = 0.0;
    for (auto j : c.nodes) total += beta[j];
    for (auto j : c.nodes) c.weights.push_back(beta[j] / total);
  }

  std::vector<std::uint32_t> slots = mapped.slots;
  std::vector<std::size_t> pos(choices.size(), 0);
  double mean = 0.0, second = 0.0;
  while (true) {
    double w = 1.0;
    for (std::size_t c = 0; c < choices.size(); ++c) {
      slots[choices[c].mode] = choices[c].nodes[pos[c]];
      w *= choices[c].weights[pos[c]];
    }
    const auto pred = predict(build_input(p, slots, alpha), p.rff);
    mean += w * pred.mean;
    second += w * (pred.variance + pred.mean * pred.mean);
    std::size_t c = 0;
    while (c < choices.size() && ++pos[c] == choices[c].nodes.size()) pos[c++] = 0;
    if (c == choices.size()) break;
  }
  return {mean, std::max(second - mean * mean, 0.0), true};
}

}  // namespace sntf
