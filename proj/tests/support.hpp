#pragma once

// Shared generators for the unit and acceptance suites.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "sntf/sntf.hpp"

namespace sntf::fixtures {

/// Random model parameters in a well-conditioned region.
inline ModelParams random_params(std::size_t K, Eigen::Index D, Eigen::Index R1, Eigen::Index R2,
                                 Eigen::Index M, Rng& rng) {
  auto normal = [&](double sd) { return sd * standard_normal(rng); };
  ModelParams p;
  for (std::size_t k = 0; k < K; ++k) {
    ModeParams m;
    m.beta_tilde.resize(D + 1);
    for (auto& v : m.beta_tilde) v = normal(0.5);
    m.theta_tilde.resize(D, R1);
    for (Eigen::Index i = 0; i < m.theta_tilde.size(); ++i) m.theta_tilde.data()[i] = normal(1.0);
    m.gamma_tilde.resize(R2);
    for (auto& v : m.gamma_tilde) v = 0.5 + normal(0.3);
    m.omega_tilde.resize(R2, D + 1);
    for (Eigen::Index i = 0; i < m.omega_tilde.size(); ++i) m.omega_tilde.data()[i] = normal(0.5);
    p.modes.push_back(std::move(m));
  }
  const Eigen::Index d = static_cast<Eigen::Index>(K) * (R1 + R2);
  p.rff.frequencies = draw_frequencies(M, d, 1.0, rng);
  p.rff.log_tau = normal(0.2);
  p.rff.log_sigma2 = std::log(0.5) + normal(0.2);
  p.rff.weight_mean.resize(2 * M);
  for (auto& v : p.rff.weight_mean) v = normal(0.3);
  p.rff.weight_chol = Eigen::MatrixXd::Zero(2 * M, 2 * M);
  for (Eigen::Index c = 0; c < 2 * M; ++c) {
    p.rff.weight_chol(c, c) = std::exp(std::log(0.2) + normal(0.2));
    for (Eigen::Index r = c + 1; r < 2 * M; ++r) p.rff.weight_chol(r, c) = normal(0.05);
  }
  return p;
}

/// N entries with uniformly random active slots and N(0, 1) values.
inline TrainingSet random_training_set(std::size_t K, std::uint32_t D, std::size_t N, Rng& rng) {
  TrainingSet t;
  t.num_modes = K;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t k = 0; k < K; ++k) t.indices.push_back(static_cast<std::uint32_t>(uniform_index(rng, D)));
    t.values.push_back(standard_normal(rng));
  }
  return t;
}

/// Data drawn from the generative model: HDP sociabilities place the points,
/// a planted RFF-GP of the node locations gives the values.
struct PlantedData {
  SparseTensorData data;   // node ids compacted to 0..D_k-1 in order of appearance
  std::vector<std::uint32_t> active_dims;
  double sigma2 = 0.0;
  std::vector<Eigen::MatrixXd> true_omega;  // [k]: R2 x D_k sociabilities of the compacted nodes

  /// True entry probability w_i under the generating weights.
  double true_weight(std::span<const std::uint32_t> idx) const {
    const Eigen::Index R = true_omega.front().rows();
    double w = 0.0;
    for (Eigen::Index r = 0; r < R; ++r) {
      double prod = 1.0;
      for (std::size_t k = 0; k < idx.size(); ++k) prod *= true_omega[k](r, idx[k]);
      w += prod;
    }
    return w / static_cast<double>(R);
  }
};

inline PlantedData planted_stp_data(std::uint64_t seed, double alpha, int r2, std::size_t num_points,
                                    double sigma2, double f_tau = 0.5, int f_freqs = 200) {
  StpConfig cfg;
  cfg.alpha = alpha;
  cfg.r1 = 1;
  cfg.r2 = r2;
  cfg.num_modes = 2;
  auto rng = make_rng(seed, 0xda7a);
  const auto w = sample_hdp_weights(cfg, rng);
  const auto sampled = sample_entries(w, num_points, rng);

  const Eigen::MatrixXd Z = draw_frequencies(f_freqs, 2, f_tau, rng);
  Eigen::VectorXd g(2 * f_freqs);
  for (auto& v : g) v = standard_normal(rng) / std::sqrt(static_cast<double>(f_freqs));

  std::vector<std::uint32_t> flat;
  std::vector<double> values;
  for (const auto& [idx, count] : sampled.entries) {
    Eigen::Vector2d x(w.locations[0](idx[0], 0), w.locations[1](idx[1], 0));
    const double f = feature_map(x, Z).dot(g);
    for (std::uint64_t c = 0; c < count; ++c) {
      flat.insert(flat.end(), idx.begin(), idx.end());
      values.push_back(f + std::sqrt(sigma2) * standard_normal(rng));
    }
  }
  // Shuffle so entry order carries no information, then compact node ids.
  const auto perm = seeded_permutation(values.size(), rng);
  std::vector<std::uint32_t> flat_p;
  std::vector<double> values_p;
  for (auto n : perm) {
    flat_p.insert(flat_p.end(), flat.begin() + static_cast<std::ptrdiff_t>(2 * n),
                  flat.begin() + static_cast<std::ptrdiff_t>(2 * n + 2));
    values_p.push_back(values[n]);
  }
  const auto nodes = reindex_active_nodes(flat_p, 2);
  for (std::size_t n = 0; n < values_p.size(); ++n)
    for (std::size_t k = 0; k < 2; ++k) flat_p[2 * n + k] = nodes.lookup(k, flat_p[2 * n + k]);
  PlantedData out{SparseTensorData(nodes.active_dims(), std::move(flat_p), std::move(values_p)),
                  nodes.active_dims(), sigma2, {}};
  for (std::size_t k = 0; k < 2; ++k) {
    Eigen::MatrixXd om(r2, out.active_dims[k]);
    for (int r = 0; r < r2; ++r)
      for (std::uint32_t j = 0; j < out.active_dims[k]; ++j) om(r, j) = w.omega[k][r][nodes.to_original[k][j]];
    out.true_omega.push_back(std::move(om));
  }
  return out;
}

/// FNV-1a over a file's bytes.
inline std::uint64_t file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint64_t h = 1469598103934665603ULL;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sntf_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace sntf::fixtures
