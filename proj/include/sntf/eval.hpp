#pragma once

// Evaluation protocols: value completion (MSE/MAE), link prediction (AUC
// against sampled non-existent entries), the R1/R2 sweep and PCA projection
// of learned factors.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sntf/errors.hpp"
#include "sntf/hdp_prior.hpp"
#include "sntf/svi_trainer.hpp"
#include "sntf/tensor.hpp"

namespace sntf {

struct ErrorMetrics {
  double mse = 0.0;
  double mae = 0.0;
};

inline ErrorMetrics mse_mae(std::span<const double> predictions, std::span<const double> truth) {
  if (predictions.size() != truth.size()) throw DataError("prediction and truth lengths differ");
  if (predictions.empty()) throw DataError("no predictions to score");
  ErrorMetrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double r = predictions[i] - truth[i];
    m.mse += r * r;
    m.mae += std::abs(r);
  }
  m.mse /= static_cast<double>(truth.size());
  m.mae /= static_cast<double>(truth.size());
  return m;
}

/// Mann-Whitney AUC: fraction of (pos, neg) pairs ranked correctly, ties
/// counting one half. Computed from mid-ranks in O(n log n).
inline double auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw DataError("AUC needs both positive and negative scores");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> all;
  all.reserve(pos.size() + neg.size());
  for (double s : pos) all.push_back({s, true});
  for (double s : neg) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    std::size_t npos = 0;
    while (j < all.size() && all[j].score == all[i].score) npos += all[j++].positive ? 1 : 0;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += mid_rank * static_cast<double>(npos);
    i = j;
  }
  const double np = static_cast<double>(pos.size());
  const double nn = static_cast<double>(neg.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

struct LinkScore {
  double score = 0.0;
  bool unseen = false;
};

/// w_i for each candidate entry (original node ids). Nodes never seen in
/// training are scored through their mode's aggregated slot and flagged.
inline std::vector<LinkScore> link_scores(const TrainedModel& model, const std::vector<Index>& indices) {
  const auto tables = log_sociabilities(model.params.modes);
  std::vector<LinkScore> out;
  out.reserve(indices.size());
  for (const auto& idx : indices) {
    const auto mapped = map_index(model, idx);
    out.push_back({std::exp(entry_log_prob(mapped.slots, tables, true)), mapped.unseen});
  }
  return out;
}

// --------------------------------------------------------------------------

struct SweepRow {
  int r1 = 0;
  int r2 = 0;
  double val_mse = 0.0;
  double val_mae = 0.0;
};

struct EvalReport {
  double mse = 0.0;
  double mae = 0.0;
  double auc = 0.0;
  std::size_t test_entries = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t unseen = 0;
  std::vector<SweepRow> sweep;
};

inline std::vector<double> predict_means(const TrainedModel& model, const SparseTensorData& data,
                                         std::size_t* unseen = nullptr) {
  std::vector<double> out;
  out.reserve(data.size());
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto p = predict_value(model, data.index(n));
    if (unseen && p.unseen) ++*unseen;
    out.push_back(p.mean);
  }
  return out;
}

/// Completion and link-prediction metrics on `test`. Positives are the
/// distinct test cells; negatives are `neg_ratio` x as many cells drawn from
/// the index space excluding every cell observed in `test` or `train`.
inline EvalReport evaluate(const TrainedModel& model, const SparseTensorData& test,
                           const SparseTensorData* train, std::size_t neg_ratio, std::uint64_t seed) {
  EvalReport rep;
  rep.test_entries = test.size();
  const auto preds = predict_means(model, test, &rep.unseen);
  const auto err = mse_mae(preds, test.values());
  rep.mse = err.mse;
  rep.mae = err.mae;

  const auto positives_set = test.distinct_indices();
  std::vector<Index> positives(positives_set.begin(), positives_set.end());
  std::sort(positives.begin(), positives.end());
  IndexSet observed = positives_set;
  std::vector<std::uint32_t> dims = test.dims();
  if (train) {
    const auto tr = train->distinct_indices();
    observed.insert(tr.begin(), tr.end());
    for (std::size_t k = 0; k < dims.size(); ++k) dims[k] = std::max(dims[k], train->dims()[k]);
  }
  const auto negatives = sample_unobserved(dims, observed, neg_ratio * positives.size(), seed);
  std::vector<double> ps, ns;
  for (const auto& s : link_scores(model, positives)) ps.push_back(s.score);
  for (const auto& s : link_scores(model, negatives)) ns.push_back(s.score);
  rep.positives = ps.size();
  rep.negatives = ns.size();
  rep.auc = auc(ps, ns);
  return rep;
}

inline void write_eval_csv(std::ostream& out, const EvalReport& r) {
  out << "mse,mae,auc,test_entries,positives,negatives,unseen\n" << std::setprecision(17);
  out << r.mse << ',' << r.mae << ',' << r.auc << ',' << r.test_entries << ',' << r.positives << ','
      << r.negatives << ',' << r.unseen << '\n';
}

// --------------------------------------------------------------------------

struct SweepResult {
  std::vector<SweepRow> rows;
  int best_r1 = 0;
  int best_r2 = 0;
};

/// Trains every (r1, r2) with r1 + r2 = total_rank on 90% of `train` and
/// scores the held-out 10%. Best = lowest validation MSE, ties to larger r2.
inline SweepResult sweep_r1_r2(const SparseTensorData& train, int total_rank, const TrainConfig& templ,
                               std::uint64_t seed) {
  if (total_rank < 2) throw DataError("total rank must be at least 2");
  const auto split = split_train_test(train, {0.9, derive_seed(seed, 0x5eed)});
  SweepResult res;
  for (int r2 = 1; r2 < total_rank; ++r2) {
    TrainConfig cfg = templ;
    cfg.r1 = total_rank - r2;
    cfg.r2 = r2;
    const auto model = sntf::train(split.train, cfg);
    const auto err = mse_mae(predict_means(model, split.test), split.test.values());
    res.rows.push_back({cfg.r1, cfg.r2, err.mse, err.mae});
  }
  std::sort(res.rows.begin(), res.rows.end(), [](const SweepRow& a, const SweepRow& b) { return a.r1 < b.r1; });
  const SweepRow* best = nullptr;
  for (const auto& row : res.rows)
    if (!best || row.val_mse < best->val_mse || (row.val_mse == best->val_mse && row.r2 > best->r2)) best = &row;
  res.best_r1 = best->r1;
  res.best_r2 = best->r2;
  return res;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "r1,r2,val_mse,val_mae\n" << std::setprecision(17);
  for (const auto& r : rows) out << r.r1 << ',' << r.r2 << ',' << r.val_mse << ',' << r.val_mae << '\n';
}

// --------------------------------------------------------------------------

/// Projects rows of `factors` (n x p) onto the top two principal axes of the
/// centred sample covariance. Each axis is signed so its first non-zero
/// loading is positive.
inline Eigen::MatrixXd pca_project(const Eigen::Ref<const Eigen::MatrixXd>& factors) {
  if (factors.rows() < 2 || factors.cols() < 2) throw DataError("PCA needs at least 2 rows and 2 columns");
  const Eigen::MatrixXd centred = factors.rowwise() - factors.colwise().mean();
  const double scale = factors.cwiseAbs().maxCoeff();
  if (centred.cwiseAbs().maxCoeff() <= 1e-14 * std::max(scale, 1.0))
    throw DataError("PCA input has rank 0 (all rows equal)");
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(factors.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index p = cov.rows();
  Eigen::MatrixXd axes(p, 2);
  for (Eigen::Index c = 0; c < 2; ++c) {
    Eigen::VectorXd v = eig.eigenvectors().col(p - 1 - c);  // ascending order from the solver
    for (Eigen::Index i = 0; i < p; ++i)
      if (std::abs(v[i]) > 1e-12) {
        if (v[i] < 0) v = -v;
        break;
      }
    axes.col(c) = v;
  }
  return centred * axes;
}

}  // namespace sntf
