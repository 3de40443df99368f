#pragma once

// Sparse tensor data in coordinate form, entry-file I/O, splitting,
// active-node reindexing and negative sampling.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sntf/errors.hpp"
#include "sntf/random.hpp"

namespace sntf {

using Index = std::vector<std::uint32_t>;

struct IndexHash {
  std::size_t operator()(std::span<const std::uint32_t> idx) const noexcept {
    std::uint64_t h = 0x84222325cbf29ce4ULL;
    for (auto v : idx) h = splitmix64(h ^ v);
    return static_cast<std::size_t>(h);
  }
  std::size_t operator()(const Index& idx) const noexcept {
    return (*this)(std::span<const std::uint32_t>(idx));
  }
};

using IndexSet = std::unordered_set<Index, IndexHash>;

/// Observed tensor entries. Indices are stored flat (entry-major) and are
/// validated against `dims` on construction; the object is immutable after.
class SparseTensorData {
 public:
  SparseTensorData() = default;

  SparseTensorData(std::vector<std::uint32_t> dims, std::vector<std::uint32_t> flat_indices,
                   std::vector<double> values)
      : dims_(std::move(dims)), indices_(std::move(flat_indices)), values_(std::move(values)) {
    if (dims_.size() < 2) throw DataError("a tensor needs at least 2 modes");
    for (auto d : dims_)
      if (d == 0) throw DataError("mode dimensions must be positive");
    if (indices_.size() % dims_.size() != 0)
      throw DataError("flat index array length is not a multiple of the mode count");
    if (values_.size() != indices_.size() / dims_.size())
      throw DataError("value count does not match entry count");
    for (std::size_t n = 0; n < size(); ++n) {
      auto idx = index(n);
      for (std::size_t k = 0; k < dims_.size(); ++k)
        if (idx[k] >= dims_[k])
          throw BoundsError("entry " + std::to_string(n) + ": index " + std::to_string(idx[k]) +
                            " out of range for mode " + std::to_string(k) + " (dim " +
                            std::to_string(dims_[k]) + ")");
      if (!std::isfinite(values_[n]))
        throw DataError("entry " + std::to_string(n) + ": non-finite value");
    }
  }

  std::size_t num_modes() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  const std::vector<std::uint32_t>& dims() const noexcept { return dims_; }
  const std::vector<std::uint32_t>& flat_indices() const noexcept { return indices_; }
  const std::vector<double>& values() const noexcept { return values_; }

  std::span<const std::uint32_t> index(std::size_t n) const noexcept {
    return {indices_.data() + n * dims_.size(), dims_.size()};
  }
  double value(std::size_t n) const noexcept { return values_[n]; }

  /// Product of the mode dimensions, as a double (it may exceed 2^64).
  double cell_count() const noexcept {
    double c = 1.0;
    for (auto d : dims_) c *= d;
    return c;
  }

  IndexSet distinct_indices() const {
    IndexSet set;
    set.reserve(size());
    for (std::size_t n = 0; n < size(); ++n) {
      auto idx = index(n);
      set.emplace(idx.begin(), idx.end());
    }
    return set;
  }

  /// Fraction of cells holding at least one observation.
  double density() const { return static_cast<double>(distinct_indices().size()) / cell_count(); }

  /// Subset of entries by position, keeping dims.
  SparseTensorData subset(std::span<const std::size_t> positions) const {
    std::vector<std::uint32_t> idx;
    std::vector<double> vals;
    idx.reserve(positions.size() * num_modes());
    vals.reserve(positions.size());
    for (auto p : positions) {
      auto i = index(p);
      idx.insert(idx.end(), i.begin(), i.end());
      vals.push_back(values_[p]);
    }
    return SparseTensorData(dims_, std::move(idx), std::move(vals));
  }

 private:
  std::vector<std::uint32_t> dims_;
  std::vector<std::uint32_t> indices_;
  std::vector<double> values_;
};

// --------------------------------------------------------------------------
// Entry-file I/O
//
//   # comment
//   K;D_1,...,D_K          (optional header)
//   i_1,...,i_K,value      (value column absent in index-only files)

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::uint32_t parse_index(std::string_view s, std::size_t line) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty() ||
      v > std::numeric_limits<std::uint32_t>::max())
    throw ParseError(line, "invalid index '" + std::string(s) + "'");
  return static_cast<std::uint32_t>(v);
}

inline double parse_value(std::string_view s, std::size_t line) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw ParseError(line, "invalid value '" + std::string(s) + "'");
  if (!std::isfinite(v)) throw ParseError(line, "non-finite value");
  return v;
}

struct ParsedHeader {
  std::size_t num_modes = 0;
  std::vector<std::uint32_t> dims;
};

inline ParsedHeader parse_header(std::string_view s, std::size_t line) {
  auto parts = split(s, ';');
  if (parts.size() != 2) throw ParseError(line, "malformed header");
  ParsedHeader h;
  h.num_modes = parse_index(parts[0], line);
  for (auto d : split(parts[1], ',')) h.dims.push_back(parse_index(d, line));
  if (h.num_modes < 2 || h.dims.size() != h.num_modes)
    throw ParseError(line, "header declares " + std::to_string(h.num_modes) + " modes but " +
                               std::to_string(h.dims.size()) + " dimensions");
  for (auto d : h.dims)
    if (d == 0) throw ParseError(line, "zero dimension in header");
  return h;
}

inline SparseTensorData parse_entries(std::istream& in, bool with_values) {
  std::string raw;
  std::size_t line_no = 0;
  std::size_t num_modes = 0;
  std::vector<std::uint32_t> dims;
  bool have_header = false;
  std::vector<std::uint32_t> flat;
  std::vector<double> values;
  std::vector<std::size_t> entry_lines;
  while (std::getline(in, raw)) {
    ++line_no;
    auto s = trim(raw);
    if (s.empty() || s.front() == '#') continue;
    if (s.find(';') != std::string_view::npos) {
      if (have_header || !values.empty()) throw ParseError(line_no, "unexpected header line");
      auto h = parse_header(s, line_no);
      num_modes = h.num_modes;
      dims = std::move(h.dims);
      have_header = true;
      continue;
    }
    auto fields = split(s, ',');
    const std::size_t extra = with_values ? 1 : 0;
    if (num_modes == 0) {
      if (fields.size() < 2 + extra) throw ParseError(line_no, "too few fields");
      num_modes = fields.size() - extra;
    }
    if (fields.size() != num_modes + extra)
      throw ParseError(line_no, "expected " + std::to_string(num_modes + extra) + " fields, got " +
                                    std::to_string(fields.size()));
    for (std::size_t k = 0; k < num_modes; ++k) {
      const auto v = parse_index(fields[k], line_no);
      if (have_header && v >= dims[k])
        throw BoundsError("line " + std::to_string(line_no) + ": index " + std::to_string(v) +
                          " out of range for mode " + std::to_string(k) + " (dim " +
                          std::to_string(dims[k]) + ")");
      flat.push_back(v);
    }
    values.push_back(with_values ? parse_value(fields[num_modes], line_no) : 0.0);
    entry_lines.push_back(line_no);
  }
  if (num_modes == 0) throw DataError("no header and no entries");
  if (!have_header) {
    dims.assign(num_modes, 0);
    for (std::size_t n = 0; n < values.size(); ++n)
      for (std::size_t k = 0; k < num_modes; ++k)
        dims[k] = std::max(dims[k], flat[n * num_modes + k] + 1);
  }
  return SparseTensorData(std::move(dims), std::move(flat), std::move(values));
}

}  // namespace detail

inline SparseTensorData parse_tensor(std::istream& in) { return detail::parse_entries(in, true); }

/// Loads an entry file with values. Header dims win over the indices;
/// headerless files get dims = 1 + max index per mode.
inline SparseTensorData load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return detail::parse_entries(in, true);
}

/// Loads an index-only file (link lists); values are zero.
inline SparseTensorData load_index_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return detail::parse_entries(in, false);
}

inline void write_tensor(std::ostream& out, const SparseTensorData& data, bool with_values = true) {
  out << data.num_modes() << ';';
  for (std::size_t k = 0; k < data.num_modes(); ++k) out << (k ? "," : "") << data.dims()[k];
  out << '\n' << std::setprecision(17);
  for (std::size_t n = 0; n < data.size(); ++n) {
    auto idx = data.index(n);
    for (std::size_t k = 0; k < idx.size(); ++k) out << (k ? "," : "") << idx[k];
    if (with_values) out << ',' << data.value(n);
    out << '\n';
  }
}

/// Writes `path` atomically (temporary file, then rename).
template <typename Writer>
void write_file_atomic(const std::filesystem::path& path, Writer&& writer, bool binary = false) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    writer(out);
    out.flush();
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void save_tensor(const std::filesystem::path& path, const SparseTensorData& data) {
  write_file_atomic(path, [&](std::ostream& out) { write_tensor(out, data); });
}

// --------------------------------------------------------------------------

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct TrainTestSplit {
  SparseTensorData train;
  SparseTensorData test;
};

/// Seeded Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
  return perm;
}

/// Random partition of entry positions; |train| = round(fraction * N).
inline TrainTestSplit split_train_test(const SparseTensorData& data, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw DataError("train fraction must lie in (0, 1)");
  if (data.size() < 2) throw InsufficientDataError("need at least 2 entries to split");
  auto rng = make_rng(spec.seed, 0x5b1e);
  auto perm = seeded_permutation(data.size(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * data.size()));
  n_train = std::clamp<std::size_t>(n_train, 1, data.size() - 1);
  std::vector<std::size_t> train_pos(perm.begin(), perm.begin() + n_train);
  std::vector<std::size_t> test_pos(perm.begin() + n_train, perm.end());
  std::sort(train_pos.begin(), train_pos.end());
  std::sort(test_pos.begin(), test_pos.end());
  return {data.subset(train_pos), data.subset(test_pos)};
}

/// Per-mode maps between original node ids and compact active ids
/// (first-appearance order).
struct ActiveNodeMap {
  std::vector<std::unordered_map<std::uint32_t, std::uint32_t>> to_active;
  std::vector<std::vector<std::uint32_t>> to_original;

  std::size_t num_modes() const noexcept { return to_original.size(); }
  std::vector<std::uint32_t> active_dims() const {
    std::vector<std::uint32_t> d;
    for (const auto& m : to_original) d.push_back(static_cast<std::uint32_t>(m.size()));
    return d;
  }

  /// Active id for `node` in `mode`, or the aggregated slot id (= D_k) when
  /// the node was never seen.
  std::uint32_t lookup(std::size_t mode, std::uint32_t node, bool* unseen = nullptr) const {
    auto it = to_active[mode].find(node);
    if (it == to_active[mode].end()) {
      if (unseen) *unseen = true;
      return static_cast<std::uint32_t>(to_original[mode].size());
    }
    return it->second;
  }

  static ActiveNodeMap from_originals(std::vector<std::vector<std::uint32_t>> originals) {
    ActiveNodeMap m;
    m.to_original = std::move(originals);
    m.to_active.resize(m.to_original.size());
    for (std::size_t k = 0; k < m.to_original.size(); ++k)
      for (std::uint32_t j = 0; j < m.to_original[k].size(); ++j)
        m.to_active[k].emplace(m.to_original[k][j], j);
    return m;
  }
};

inline ActiveNodeMap reindex_active_nodes(std::span<const std::uint32_t> flat_indices,
                                          std::size_t num_modes) {
  if (num_modes == 0 || flat_indices.empty() || flat_indices.size() % num_modes != 0)
    throw InsufficientDataError("cannot reindex an empty entry list");
  ActiveNodeMap m;
  m.to_active.resize(num_modes);
  m.to_original.resize(num_modes);
  for (std::size_t p = 0; p < flat_indices.size(); ++p) {
    const std::size_t k = p % num_modes;
    const auto node = flat_indices[p];
    auto [it, inserted] =
        m.to_active[k].try_emplace(node, static_cast<std::uint32_t>(m.to_original[k].size()));
    if (inserted) m.to_original[k].push_back(node);
  }
  return m;
}

inline ActiveNodeMap reindex_active_nodes(const SparseTensorData& data) {
  return reindex_active_nodes(data.flat_indices(), data.num_modes());
}

/// Draws `count` distinct cells uniformly from the complement of `observed`.
/// Throws CapacityError if the complement is too small.
inline std::vector<Index> sample_unobserved(const std::vector<std::uint32_t>& dims, const IndexSet& observed,
                                            std::size_t count, std::uint64_t seed) {
  double cells = 1.0;
  for (auto d : dims) cells *= d;
  const double available = cells - static_cast<double>(observed.size());
  if (static_cast<double>(count) > available)
    throw CapacityError("requested " + std::to_string(count) + " negatives but only " +
                        std::to_string(static_cast<std::uint64_t>(available)) + " unobserved cells exist");
  auto rng = make_rng(seed, 0x7e6a);
  std::vector<Index> out;
  out.reserve(count);
  const std::size_t K = dims.size();

  if (static_cast<double>(count) * 2.0 > available && cells <= 5e7) {
    // Dense regime: enumerate the complement and take a random prefix.
    std::vector<Index> complement;
    complement.reserve(static_cast<std::size_t>(available));
    Index cur(K, 0);
    const auto total = static_cast<std::uint64_t>(cells);
    for (std::uint64_t lin = 0; lin < total; ++lin) {
      std::uint64_t rem = lin;
      for (std::size_t k = K; k-- > 0;) {
        cur[k] = static_cast<std::uint32_t>(rem % dims[k]);
        rem /= dims[k];
      }
      if (!observed.contains(cur)) complement.push_back(cur);
    }
    auto perm = seeded_permutation(complement.size(), rng);
    for (std::size_t i = 0; i < count; ++i) out.push_back(std::move(complement[perm[i]]));
    return out;
  }

  // Sparse regime: rejection sampling against the observed set.
  IndexSet taken;
  taken.reserve(count);
  Index cand(K);
  while (out.size() < count) {
    for (std::size_t k = 0; k < K; ++k) cand[k] = static_cast<std::uint32_t>(uniform_index(rng, dims[k]));
    if (observed.contains(cand) || taken.contains(cand)) continue;
    taken.insert(cand);
    out.push_back(cand);
  }
  return out;
}

/// ratio x (distinct observed cells) negatives.
inline std::vector<Index> sample_negatives(const std::vector<std::uint32_t>& dims, const IndexSet& observed,
                                           std::size_t ratio, std::uint64_t seed) {
  if (ratio == 0) throw DataError("negative ratio must be positive");
  return sample_unobserved(dims, observed, ratio * observed.size(), seed);
}

inline std::vector<Index> sample_negatives(const SparseTensorData& data, std::size_t ratio,
                                           std::uint64_t seed) {
  return sample_negatives(data.dims(), data.distinct_indices(), ratio, seed);
}

}  // namespace sntf
