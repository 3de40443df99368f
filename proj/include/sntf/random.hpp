#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace sntf {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(derive_seed(seed, stream));
}

/// Uniform integer in [0, n) by rejection; independent of the standard
/// library's distribution implementation.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

/// Uniform double in (0, 1).
inline double uniform_open(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

/// log of a Gamma(shape, 1) draw. Uses the boosting identity
/// G(a) = G(a + 1) * U^(1/a) for a < 1 so tiny shapes do not underflow.
inline double log_gamma_variate(Rng& rng, double shape) {
  if (shape >= 1.0) {
    std::gamma_distribution<double> dist(shape, 1.0);
    return std::log(dist(rng));
  }
  std::gamma_distribution<double> dist(shape + 1.0, 1.0);
  const double g = dist(rng);
  return std::log(g) + std::log(uniform_open(rng)) / shape;
}

/// Gamma(shape, rate) draw.
inline double gamma_variate(Rng& rng, double shape, double rate) {
  return std::exp(log_gamma_variate(rng, shape)) / rate;
}

/// Beta(a, b) draw computed from two log-Gamma variates.
inline double beta_variate(Rng& rng, double a, double b) {
  const double la = log_gamma_variate(rng, a);
  const double lb = log_gamma_variate(rng, b);
  // a / (a + b) = 1 / (1 + exp(lb - la))
  return 1.0 / (1.0 + std::exp(lb - la));
}

inline std::uint64_t poisson_variate(Rng& rng, double mean) {
  if (!(mean > 0.0)) return 0;
  std::poisson_distribution<std::uint64_t> dist(mean);
  return dist(rng);
}

/// Categorical sampler over non-negative (not necessarily normalized) weights
/// using cumulative sums and binary search.
class CategoricalSampler {
 public:
  CategoricalSampler() = default;
  explicit CategoricalSampler(const std::vector<double>& weights) {
    cumulative_.reserve(weights.size());
    double acc = 0.0;
    for (double w : weights) {
      acc += w > 0.0 ? w : 0.0;
      cumulative_.push_back(acc);
    }
  }

  std::size_t size() const noexcept { return cumulative_.size(); }
  double total() const noexcept { return cumulative_.empty() ? 0.0 : cumulative_.back(); }

  std::size_t operator()(Rng& rng) const {
    const double u = uniform_open(rng) * total();
    std::size_t lo = 0, hi = cumulative_.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (cumulative_[mid] > u)
        hi = mid;
      else
        lo = mid + 1;
    }
    return lo;
  }

 private:
  std::vector<double> cumulative_;
};

}  // namespace sntf
