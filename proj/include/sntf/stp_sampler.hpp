#pragma once

// Generative simulator for the hierarchical-Gamma-process sparse tensor
// process: total mass -> Poisson entry count -> HDP stick-breaking weights ->
// i.i.d. entry indices. Also the Bernoulli dense-model baselines used as a
// sparsity contrast.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "sntf/errors.hpp"
#include "sntf/random.hpp"
#include "sntf/tensor.hpp"

namespace sntf {

struct StpConfig {
  double alpha = 1.0;
  int r1 = 1;
  int r2 = 1;
  int num_modes = 3;
  double truncation_tol = 1e-12;
  int max_atoms = 5000;
  std::uint64_t seed = 0;

  /// alpha^R1, the top-level concentration.
  double alpha_tilde() const { return std::pow(alpha, r1); }

  void validate() const {
    if (!(alpha > 0.0)) throw DataError("alpha must be positive");
    if (r1 < 1 || r2 < 1) throw DataError("R1 and R2 must be at least 1");
    if (num_modes < 2) throw DataError("need at least 2 modes");
    if (!(truncation_tol > 0.0)) throw DataError("truncation tolerance must be positive");
    if (max_atoms < 1) throw DataError("max_atoms must be positive");
  }
};

/// Truncated stick-breaking realization of the per-mode HDPs.
struct HdpWeights {
  double alpha_tilde = 1.0;
  std::vector<std::vector<double>> beta;                 // [k][j]
  std::vector<Eigen::MatrixXd> locations;                // [k]: atoms x R1
  std::vector<std::vector<double>> gamma;                // [k][r]
  std::vector<std::vector<std::vector<double>>> omega;   // [k][r][j]

  std::size_t num_modes() const noexcept { return beta.size(); }
  std::size_t num_communities() const noexcept { return gamma.empty() ? 0 : gamma[0].size(); }
};

struct SampledTensor {
  std::vector<std::pair<Index, std::uint64_t>> entries;  // distinct index -> count c_i
  std::vector<std::uint32_t> active_dims;
  std::uint64_t total_points = 0;
  std::uint64_t distinct_entries = 0;

  double active_size() const {
    double s = 1.0;
    for (auto d : active_dims) s *= d;
    return s;
  }
};

// --------------------------------------------------------------------------

/// Total mass of the rate measure: sum_r prod_k W_{k,r}, with the per-mode
/// base mass L_k ~ Gamma(alpha^R1, 1) shared across r and
/// W_{k,r} | L_k ~ Gamma(L_k, 1).
inline double sample_total_mass(const StpConfig& cfg, Rng& rng) {
  constexpr double kShapeFloor = 1e-12;
  const double base = cfg.alpha_tilde();
  std::vector<double> log_base(cfg.num_modes);
  for (auto& l : log_base) l = log_gamma_variate(rng, base);
  double mass = 0.0;
  for (int r = 0; r < cfg.r2; ++r) {
    double log_prod = 0.0;
    for (int k = 0; k < cfg.num_modes; ++k)
      log_prod += log_gamma_variate(rng, std::max(std::exp(log_base[k]), kShapeFloor));
    mass += std::exp(log_prod);
  }
  return std::max(mass, std::numeric_limits<double>::min());
}

inline std::uint64_t sample_entry_count(double mass, Rng& rng) {
  if (mass < 0.0) throw DomainError("Poisson mean must be non-negative");
  return poisson_variate(rng, mass);
}

/// Top-level sticks: xi_j ~ Beta(1, alpha_tilde), beta_j = xi_j prod_{t<j}(1 - xi_t).
/// Stops once the remaining stick falls below the tolerance or at max_atoms.
inline std::vector<double> stick_break_top(double alpha_tilde, const StpConfig& cfg, Rng& rng) {
  if (!(alpha_tilde > 0.0)) throw DomainError("alpha_tilde must be positive");
  std::vector<double> beta;
  double remaining = 1.0;
  while (remaining >= cfg.truncation_tol && static_cast<int>(beta.size()) < cfg.max_atoms) {
    const double xi = beta_variate(rng, 1.0, alpha_tilde);
    beta.push_back(xi * remaining);
    remaining *= 1.0 - xi;
  }
  return beta;
}

/// Second-level sticks sharing the atoms of `beta`:
/// nu_j ~ Beta(gamma beta_j, gamma (1 - sum_{l<=j} beta_l)),
/// omega_j = nu_j prod_{t<j}(1 - nu_t).
/// When the top-level stick is exhausted the leftover mass goes to the
/// current atom and the rest are zero.
inline std::vector<double> stick_break_second(double gamma, const std::vector<double>& beta,
                                              Rng& rng) {
  constexpr double kExhausted = 1e-12;
  if (!(gamma > 0.0)) throw DomainError("gamma must be positive");
  std::vector<double> omega(beta.size(), 0.0);
  // tail[j] = sum_{l > j} beta_l, accumulated from the end for accuracy.
  std::vector<double> tail(beta.size(), 0.0);
  for (std::size_t j = beta.size(); j-- > 1;) tail[j - 1] = tail[j] + beta[j];
  double remaining = 1.0;
  for (std::size_t j = 0; j < beta.size(); ++j) {
    const double b = gamma * tail[j];
    if (b <= kExhausted) {
      omega[j] = remaining;
      break;
    }
    const double nu = beta[j] > 0.0 ? beta_variate(rng, gamma * beta[j], b) : 0.0;
    omega[j] = nu * remaining;
    remaining *= 1.0 - nu;
  }
  return omega;
}

/// Samples beta, locations, gamma and omega for every mode. The community
/// concentrations are gamma_r^k ~ Gamma(shape alpha_tilde, rate 1), the law
/// of the top-level total mass L_k that normalizes into H_r^k.
inline HdpWeights sample_hdp_weights(const StpConfig& cfg, Rng& rng) {
  cfg.validate();
  HdpWeights w;
  w.alpha_tilde = cfg.alpha_tilde();
  const auto K = static_cast<std::size_t>(cfg.num_modes);
  w.beta.resize(K);
  w.locations.resize(K);
  w.gamma.resize(K);
  w.omega.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    w.beta[k] = stick_break_top(w.alpha_tilde, cfg, rng);
    auto& loc = w.locations[k];
    loc.resize(static_cast<Eigen::Index>(w.beta[k].size()), cfg.r1);
    for (Eigen::Index j = 0; j < loc.rows(); ++j)
      for (Eigen::Index c = 0; c < loc.cols(); ++c) loc(j, c) = cfg.alpha * uniform_open(rng);
    for (int r = 0; r < cfg.r2; ++r) {
      const double g = std::max(gamma_variate(rng, w.alpha_tilde, 1.0), 1e-300);
      w.gamma[k].push_back(g);
      w.omega[k].push_back(stick_break_second(g, w.beta[k], rng));
    }
  }
  return w;
}

/// Draws `count` i.i.d. points from the normalized rate measure
/// (1/R2) sum_r prod_k omega^k_r: uniform community, then per-mode categorical.
inline SampledTensor sample_entries(const HdpWeights& w, std::uint64_t count, Rng& rng) {
  const std::size_t K = w.num_modes();
  const std::size_t R = w.num_communities();
  SampledTensor out;
  out.total_points = count;
  out.active_dims.assign(K, 0);
  if (count == 0) return out;
  std::vector<std::vector<CategoricalSampler>> samplers(K);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t r = 0; r < R; ++r) samplers[k].emplace_back(w.omega[k][r]);

  std::unordered_map<Index, std::uint64_t, IndexHash> counts;
  std::vector<std::unordered_set<std::uint32_t>> active(K);
  Index idx(K);
  for (std::uint64_t n = 0; n < count; ++n) {
    const auto r = uniform_index(rng, R);
    for (std::size_t k = 0; k < K; ++k) {
      idx[k] = static_cast<std::uint32_t>(samplers[k][r](rng));
      active[k].insert(idx[k]);
    }
    ++counts[idx];
  }
  out.entries.assign(counts.begin(), counts.end());
  std::sort(out.entries.begin(), out.entries.end());
  out.distinct_entries = out.entries.size();
  for (std::size_t k = 0; k < K; ++k) out.active_dims[k] = static_cast<std::uint32_t>(active[k].size());
  return out;
}

inline SampledTensor sample_stp_tensor(const StpConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto weights = sample_hdp_weights(cfg, rng);
  const auto n = sample_entry_count(sample_total_mass(cfg, rng), rng);
  return sample_entries(weights, n, rng);
}

// --------------------------------------------------------------------------

struct SimulationResult {
  double alpha = 0.0;
  int r2 = 0;
  int replicates = 0;         // non-empty replicates averaged
  double mean_entries = 0.0;  // distinct sampled entries
  double mean_active_size = 0.0;
  double mean_ratio = 0.0;
};

namespace detail {

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// Sparsity curve: for each (R2, alpha) runs `replicates` independent STP
/// draws and averages distinct entries, active size and their ratio.
/// Replicates with no sampled points are left out of the averages.
inline std::vector<SimulationResult> run_sparsity_simulation(const std::vector<double>& alphas,
                                                             const std::vector<int>& r2_values,
                                                             int replicates, StpConfig base,
                                                             unsigned threads = 1) {
  if (replicates < 1) throw DataError("replicates must be at least 1");
  if (!std::is_sorted(alphas.begin(), alphas.end())) throw DataError("alpha grid must be ascending");
  std::vector<SimulationResult> results;
  for (std::size_t ri = 0; ri < r2_values.size(); ++ri) {
    for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
      StpConfig cfg = base;
      cfg.alpha = alphas[ai];
      cfg.r2 = r2_values[ri];
      cfg.validate();
      struct Rep {
        bool used = false;
        double entries = 0, size = 0, ratio = 0;
      };
      std::vector<Rep> reps(static_cast<std::size_t>(replicates));
      detail::parallel_for(reps.size(), threads, [&](std::size_t i) {
        auto rng = make_rng(base.seed, (ri * 1000003ULL + ai) * 1000003ULL + i);
        const auto t = sample_stp_tensor(cfg, rng);
        if (t.distinct_entries == 0) return;
        reps[i] = {true, static_cast<double>(t.distinct_entries), t.active_size(),
                   static_cast<double>(t.distinct_entries) / t.active_size()};
      });
      SimulationResult res;
      res.alpha = cfg.alpha;
      res.r2 = cfg.r2;
      for (const auto& r : reps) {
        if (!r.used) continue;
        ++res.replicates;
        res.mean_entries += r.entries;
        res.mean_active_size += r.size;
        res.mean_ratio += r.ratio;
      }
      if (res.replicates > 0) {
        res.mean_entries /= res.replicates;
        res.mean_active_size /= res.replicates;
        res.mean_ratio /= res.replicates;
      }
      results.push_back(res);
    }
  }
  return results;
}

inline void write_simulation_csv(std::ostream& out, const std::vector<SimulationResult>& rows) {
  out << "alpha,r2,replicates,mean_entries,mean_active_size,mean_ratio\n" << std::setprecision(17);
  for (const auto& r : rows)
    out << r.alpha << ',' << r.r2 << ',' << r.replicates << ',' << r.mean_entries << ','
        << r.mean_active_size << ',' << r.mean_ratio << '\n';
}

// --------------------------------------------------------------------------
// Dense Bernoulli baselines: z_i ~ Bern(sigmoid(f(x_i))).

enum class DenseModelKind { cp, gp_rff };

/// Latent factors of a dense baseline. For gp_rff, `frequencies` is M x (K R)
/// and `weights` has 2M entries.
struct DenseModel {
  DenseModelKind kind = DenseModelKind::cp;
  std::vector<Eigen::MatrixXd> factors;  // [k]: dims[k] x R
  Eigen::MatrixXd frequencies;
  Eigen::VectorXd weights;
};

inline DenseModel sample_dense_model(DenseModelKind kind, const std::vector<std::uint32_t>& dims,
                                     int rank, int num_freqs, Rng& rng) {
  if (rank < 1) throw DataError("rank must be at least 1");
  if (kind == DenseModelKind::gp_rff && num_freqs < 1) throw DataError("need at least 1 frequency");
  DenseModel m;
  m.kind = kind;
  for (auto d : dims) {
    if (d == 0) throw DataError("dims must be positive");
    Eigen::MatrixXd u(d, rank);
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = standard_normal(rng);
    m.factors.push_back(std::move(u));
  }
  if (kind == DenseModelKind::gp_rff) {
    const auto in_dim = static_cast<Eigen::Index>(dims.size()) * rank;
    m.frequencies.resize(num_freqs, in_dim);
    for (Eigen::Index i = 0; i < m.frequencies.size(); ++i) m.frequencies.data()[i] = standard_normal(rng);
    m.weights.resize(2 * num_freqs);
    const double sd = 1.0 / std::sqrt(static_cast<double>(num_freqs));
    for (Eigen::Index i = 0; i < m.weights.size(); ++i) m.weights[i] = sd * standard_normal(rng);
  }
  return m;
}

/// Number of present cells when every cell of the full tensor is sampled.
inline std::uint64_t sample_dense_presence(const DenseModel& m, Rng& rng) {
  const std::size_t K = m.factors.size();
  const Eigen::Index R = m.factors.front().cols();
  std::vector<Eigen::MatrixXd> proj;  // gp_rff: per-mode dims[k] x M partial phases
  if (m.kind == DenseModelKind::gp_rff)
    for (std::size_t k = 0; k < K; ++k)
      proj.push_back(m.factors[k] *
                     m.frequencies.middleCols(static_cast<Eigen::Index>(k) * R, R).transpose());
  const Eigen::Index M = m.frequencies.rows();

  std::vector<std::uint32_t> idx(K, 0);
  std::uint64_t present = 0;
  Eigen::VectorXd row(R), phase(M);
  while (true) {
    double f = 0.0;
    if (m.kind == DenseModelKind::cp) {
      row.setOnes();
      for (std::size_t k = 0; k < K; ++k) row.array() *= m.factors[k].row(idx[k]).transpose().array();
      f = row.sum();
    } else {
      phase.setZero();
      for (std::size_t k = 0; k < K; ++k) phase += proj[k].row(idx[k]).transpose();
      for (Eigen::Index j = 0; j < M; ++j)
        f += std::cos(phase[j]) * m.weights[2 * j] + std::sin(phase[j]) * m.weights[2 * j + 1];
    }
    const double p = 1.0 / (1.0 + std::exp(-f));
    if (uniform_open(rng) < p) ++present;
    std::size_t k = K;
    while (k-- > 0) {
      if (++idx[k] < m.factors[k].rows()) break;
      idx[k] = 0;
    }
    if (k == static_cast<std::size_t>(-1)) break;
  }
  return present;
}

struct DenseSample {
  std::uint64_t present_count = 0;
  std::uint64_t size = 0;
};

inline DenseSample sample_dense_baseline(DenseModelKind kind, const std::vector<std::uint32_t>& dims,
                                         int rank, int num_freqs, Rng& rng) {
  const auto m = sample_dense_model(kind, dims, rank, num_freqs, rng);
  std::uint64_t size = 1;
  for (auto d : dims) size *= d;
  return {sample_dense_presence(m, rng), size};
}

struct DenseSimulationRow {
  std::string model;
  std::uint32_t mode_size = 0;
  int replicates = 0;
  double mean_present = 0.0;
  double size = 0.0;
  double mean_fraction = 0.0;
};

inline const char* to_string(DenseModelKind k) { return k == DenseModelKind::cp ? "cp" : "gp-rff"; }

inline std::vector<DenseSimulationRow> run_dense_simulation(DenseModelKind kind,
                                                            const std::vector<std::uint32_t>& sizes,
                                                            int num_modes, int rank, int num_freqs,
                                                            int replicates, std::uint64_t seed,
                                                            unsigned threads = 1) {
  if (replicates < 1) throw DataError("replicates must be at least 1");
  std::vector<DenseSimulationRow> rows;
  for (std::size_t si = 0; si < sizes.size(); ++si) {
    const std::vector<std::uint32_t> dims(static_cast<std::size_t>(num_modes), sizes[si]);
    std::vector<DenseSample> reps(static_cast<std::size_t>(replicates));
    detail::parallel_for(reps.size(), threads, [&](std::size_t i) {
      auto rng = make_rng(seed, (static_cast<std::uint64_t>(kind) * 1000003ULL + si) * 1000003ULL + i);
      reps[i] = sample_dense_baseline(kind, dims, rank, num_freqs, rng);
    });
    DenseSimulationRow row;
    row.model = to_string(kind);
    row.mode_size = sizes[si];
    row.replicates = replicates;
    for (const auto& r : reps) {
      row.mean_present += static_cast<double>(r.present_count);
      row.size = static_cast<double>(r.size);
    }
    row.mean_present /= replicates;
    row.mean_fraction = row.mean_present / row.size;
    rows.push_back(row);
  }
  return rows;
}

inline void write_dense_csv(std::ostream& out, const std::vector<DenseSimulationRow>& rows) {
  out << "model,mode_size,replicates,mean_present,size,mean_fraction\n" << std::setprecision(17);
  for (const auto& r : rows)
    out << r.model << ',' << r.mode_size << ',' << r.replicates << ',' << r.mean_present << ','
        << r.size << ',' << r.mean_fraction << '\n';
}

}  // namespace sntf
