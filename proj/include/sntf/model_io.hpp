#pragma once

// Trained-model container. Layout (all integers unsigned 32-bit unless noted,
// all reals IEEE-754 binary64, everything little-endian):
//
//   magic        8 bytes  "SNTFMDL\0"
//   version      u32      = 1
//   manifest     u32 length + UTF-8 JSON bytes
//   config       i32 r1, r2, num_freqs, batch_size, epochs
//                f64 learning_rate, alpha; u64 seed
//                f64 adam_beta1, adam_beta2, adam_epsilon, clip_norm, init_tau
//   K            u32
//   per mode     u32 D; u32 original_id[D]
//                f64 beta_tilde[D+1]
//                f64 theta_tilde[D][R1]     (row-major)
//                f64 gamma_tilde[R2]
//                f64 omega_tilde[R2][D+1]   (row-major)
//   rff          u32 M; u32 d; f64 frequencies[M][d] (row-major)
//                f64 log_tau; f64 log_sigma2; f64 weight_mean[2M]
//                f64 weight_chol lower triangle, row by row (i, j <= i)
//   trace        u32 n; n x { i32 epoch; f64 full_elbo, data_term, kl_term }
//
// Wall-clock times are not stored so identical runs give identical files.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <json.hpp>

#include "sntf/errors.hpp"
#include "sntf/svi_trainer.hpp"
#include "sntf/tensor.hpp"

namespace sntf {

inline constexpr std::array<char, 8> kModelMagic = {'S', 'N', 'T', 'F', 'M', 'D', 'L', '\0'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}
  void u32(std::uint32_t v) { bytes(v, 4); }
  void i32(std::int32_t v) { bytes(static_cast<std::uint32_t>(v), 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void f64(double v) { bytes(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }

 private:
  void bytes(std::uint64_t v, int n) {
    char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(buf, n);
  }
  std::ostream& out_;
};

class LeReader {
 public:
  explicit LeReader(std::istream& in) : in_(in) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(bytes(4))); }
  std::uint64_t u64() { return bytes(8); }
  double f64() { return std::bit_cast<double>(bytes(8)); }
  std::string raw(std::size_t n) {
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) throw DataError("truncated model file");
    return s;
  }
  /// Sanity bound for element counts read from the file.
  std::uint32_t count(std::uint64_t limit = 1u << 28) {
    const auto n = u32();
    if (n > limit) throw DataError("implausible element count in model file");
    return n;
  }

 private:
  std::uint64_t bytes(int n) {
    unsigned char buf[8];
    in_.read(reinterpret_cast<char*>(buf), n);
    if (!in_) throw DataError("truncated model file");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  std::istream& in_;
};

}  // namespace detail

inline void write_model(std::ostream& out, const TrainedModel& model, const std::string& manifest_json = "{}") {
  detail::LeWriter w(out);
  w.raw(kModelMagic.data(), kModelMagic.size());
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(manifest_json.size()));
  w.raw(manifest_json.data(), manifest_json.size());

  const auto& c = model.config;
  w.i32(c.r1);
  w.i32(c.r2);
  w.i32(c.num_freqs);
  w.i32(c.batch_size);
  w.i32(c.epochs);
  w.f64(c.learning_rate);
  w.f64(c.alpha);
  w.u64(c.seed);
  w.f64(c.adam_beta1);
  w.f64(c.adam_beta2);
  w.f64(c.adam_epsilon);
  w.f64(c.clip_norm);
  w.f64(c.init_tau);

  const auto& p = model.params;
  w.u32(static_cast<std::uint32_t>(p.modes.size()));
  for (std::size_t k = 0; k < p.modes.size(); ++k) {
    const auto& m = p.modes[k];
    const auto D = m.active_nodes();
    w.u32(static_cast<std::uint32_t>(D));
    for (auto id : model.nodes.to_original[k]) w.u32(id);
    for (Eigen::Index i = 0; i <= D; ++i) w.f64(m.beta_tilde[i]);
    for (Eigen::Index i = 0; i < D; ++i)
      for (Eigen::Index j = 0; j < m.theta_tilde.cols(); ++j) w.f64(m.theta_tilde(i, j));
    for (Eigen::Index r = 0; r < m.gamma_tilde.size(); ++r) w.f64(m.gamma_tilde[r]);
    for (Eigen::Index r = 0; r < m.omega_tilde.rows(); ++r)
      for (Eigen::Index j = 0; j <= D; ++j) w.f64(m.omega_tilde(r, j));
  }
  const auto& rff = p.rff;
  w.u32(static_cast<std::uint32_t>(rff.frequencies.rows()));
  w.u32(static_cast<std::uint32_t>(rff.frequencies.cols()));
  for (Eigen::Index i = 0; i < rff.frequencies.rows(); ++i)
    for (Eigen::Index j = 0; j < rff.frequencies.cols(); ++j) w.f64(rff.frequencies(i, j));
  w.f64(rff.log_tau);
  w.f64(rff.log_sigma2);
  for (Eigen::Index i = 0; i < rff.weight_mean.size(); ++i) w.f64(rff.weight_mean[i]);
  for (Eigen::Index i = 0; i < rff.weight_chol.rows(); ++i)
    for (Eigen::Index j = 0; j <= i; ++j) w.f64(rff.weight_chol(i, j));

  w.u32(static_cast<std::uint32_t>(model.trace.size()));
  for (const auto& e : model.trace) {
    w.i32(e.epoch);
    w.f64(e.full_elbo);
    w.f64(e.data_term);
    w.f64(e.kl_term);
  }
}

struct LoadedModel {
  TrainedModel model;
  std::string manifest_json;
};

inline LoadedModel read_model(std::istream& in) {
  detail::LeReader r(in);
  const auto magic = r.raw(kModelMagic.size());
  if (std::memcmp(magic.data(), kModelMagic.data(), kModelMagic.size()) != 0)
    throw DataError("not a model file (bad magic)");
  const auto version = r.u32();
  if (version != kModelVersion) throw DataError("unsupported model version " + std::to_string(version));
  LoadedModel out;
  out.manifest_json = r.raw(r.count());

  auto& c = out.model.config;
  c.r1 = r.i32();
  c.r2 = r.i32();
  c.num_freqs = r.i32();
  c.batch_size = r.i32();
  c.epochs = r.i32();
  c.learning_rate = r.f64();
  c.alpha = r.f64();
  c.seed = r.u64();
  c.adam_beta1 = r.f64();
  c.adam_beta2 = r.f64();
  c.adam_epsilon = r.f64();
  c.clip_norm = r.f64();
  c.init_tau = r.f64();
  c.validate();

  const auto K = r.count(64);
  std::vector<std::vector<std::uint32_t>> originals(K);
  auto& p = out.model.params;
  for (std::uint32_t k = 0; k < K; ++k) {
    const auto D = static_cast<Eigen::Index>(r.count());
    originals[k].resize(static_cast<std::size_t>(D));
    for (auto& id : originals[k]) id = r.u32();
    ModeParams m;
    m.beta_tilde.resize(D + 1);
    for (Eigen::Index i = 0; i <= D; ++i) m.beta_tilde[i] = r.f64();
    m.theta_tilde.resize(D, c.r1);
    for (Eigen::Index i = 0; i < D; ++i)
      for (Eigen::Index j = 0; j < c.r1; ++j) m.theta_tilde(i, j) = r.f64();
    m.gamma_tilde.resize(c.r2);
    for (Eigen::Index i = 0; i < c.r2; ++i) m.gamma_tilde[i] = r.f64();
    m.omega_tilde.resize(c.r2, D + 1);
    for (Eigen::Index i = 0; i < c.r2; ++i)
      for (Eigen::Index j = 0; j <= D; ++j) m.omega_tilde(i, j) = r.f64();
    p.modes.push_back(std::move(m));
  }
  out.model.nodes = ActiveNodeMap::from_originals(std::move(originals));

  auto& rff = p.rff;
  const auto M = static_cast<Eigen::Index>(r.count(1u << 20));
  const auto d = static_cast<Eigen::Index>(r.count(1u << 20));
  if (M != c.num_freqs || d != c.input_dim(K)) throw DataError("frequency matrix shape does not match the config");
  rff.frequencies.resize(M, d);
  for (Eigen::Index i = 0; i < M; ++i)
    for (Eigen::Index j = 0; j < d; ++j) rff.frequencies(i, j) = r.f64();
  rff.log_tau = r.f64();
  rff.log_sigma2 = r.f64();
  rff.weight_mean.resize(2 * M);
  for (Eigen::Index i = 0; i < 2 * M; ++i) rff.weight_mean[i] = r.f64();
  rff.weight_chol = Eigen::MatrixXd::Zero(2 * M, 2 * M);
  for (Eigen::Index i = 0; i < 2 * M; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) rff.weight_chol(i, j) = r.f64();

  const auto n = r.count();
  for (std::uint32_t i = 0; i < n; ++i) {
    EpochLog e;
    e.epoch = r.i32();
    e.full_elbo = r.f64();
    e.data_term = r.f64();
    e.kl_term = r.f64();
    out.model.trace.push_back(e);
  }
  return out;
}

inline void save_model(const std::filesystem::path& path, const TrainedModel& model,
                       const std::string& manifest_json = "{}") {
  write_file_atomic(path, [&](std::ostream& out) { write_model(out, model, manifest_json); }, true);
}

inline LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_model(in);
}

// --------------------------------------------------------------------------

namespace detail {

inline nlohmann::json to_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace detail

/// Human-readable dump of every parameter (plus derived beta, gamma, omega).
inline nlohmann::json model_to_json(const TrainedModel& model) {
  using detail::to_json;
  const auto& c = model.config;
  nlohmann::json j;
  j["config"] = {{"r1", c.r1},       {"r2", c.r2},       {"num_freqs", c.num_freqs},
                 {"batch_size", c.batch_size},          {"epochs", c.epochs},
                 {"learning_rate", c.learning_rate},    {"alpha", c.alpha},
                 {"seed", c.seed}};
  j["modes"] = nlohmann::json::array();
  for (std::size_t k = 0; k < model.params.modes.size(); ++k) {
    const auto& m = model.params.modes[k];
    nlohmann::json jm;
    jm["original_ids"] = model.nodes.to_original[k];
    jm["beta_tilde"] = to_json(m.beta_tilde);
    jm["beta"] = to_json(m.beta());
    jm["theta_tilde"] = to_json(m.theta_tilde);
    jm["gamma_tilde"] = to_json(m.gamma_tilde);
    std::vector<double> gammas;
    for (Eigen::Index r = 0; r < m.gamma_tilde.size(); ++r) gammas.push_back(m.gamma(r));
    jm["gamma"] = gammas;
    jm["omega_tilde"] = to_json(m.omega_tilde);
    jm["omega"] = to_json(Eigen::MatrixXd(m.log_omega().array().exp()));
    j["modes"].push_back(std::move(jm));
  }
  const auto& rff = model.params.rff;
  j["rff"] = {{"frequencies", to_json(rff.frequencies)},
              {"tau", rff.tau()},
              {"sigma2", rff.sigma2()},
              {"weight_mean", to_json(rff.weight_mean)},
              {"weight_chol", to_json(rff.weight_chol)}};
  auto trace = nlohmann::json::array();
  for (const auto& e : model.trace)
    trace.push_back({{"epoch", e.epoch}, {"full_elbo", e.full_elbo}, {"data_term", e.data_term}, {"kl_term", e.kl_term}});
  j["trace"] = std::move(trace);
  return j;
}

}  // namespace sntf
