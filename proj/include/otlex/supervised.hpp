#pragma once

// Supervised aligners over a (possibly extended) lexicon: closed-form
// orthogonal Procrustes and stochastic RCSLS minimization.

#include "otlex/common.hpp"
#include "otlex/embed_io.hpp"
#include "otlex/linear_map.hpp"

#include <Eigen/SVD>

#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace otlex {

struct SupConfig {
  Index batch_size = 400;
  double learning_rate = 1.0;
  int iters_per_epoch = 2000;
  Index k = 10;
  Index neighbor_pool = 20000;
  // Singular values of Q are clipped to 1 after each step (convex hull of
  // the orthogonal group). Without it the loss is unbounded below.
  bool spectral_clip = true;
  std::uint64_t seed = 0;
};

/// Orthogonal Q minimizing Σ ||S_i Q - T_i||², i.e. U Vᵀ with U Σ Vᵀ = SVD(Sᵀ T).
/// Rank-deficient cross-covariances still yield an orthogonal minimizer; the
/// optional flag reports that case.
inline LinearMap procrustes(const Matrix& s, const Matrix& t, bool* rank_deficient = nullptr) {
  if (s.rows() != t.rows() || s.cols() != t.cols())
    throw ShapeError("procrustes: S and T must have the same shape");
  if (s.rows() < 1) throw ShapeError("procrustes: need at least one pair");
  const Eigen::MatrixXd m = s.transpose() * t;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (rank_deficient) {
    const auto& sv = svd.singularValues();
    *rank_deficient = sv.size() == 0 || sv(sv.size() - 1) <= 1e-12 * std::max(1.0, sv(0));
  }
  Matrix q = svd.matrixU() * svd.matrixV().transpose();
  return LinearMap(std::move(q), true);
}

inline LinearMap procrustes(const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                            const Lexicon& lex) {
  return procrustes(subset_rows(src, lex, Side::source), subset_rows(tgt, lex, Side::target));
}

/// Indices of the k largest entries of `row`, ties broken by lower index.
inline std::vector<Index> topk_indices(const double* row, Index n, Index k) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [row](Index a, Index b) {
    return row[a] > row[b] || (row[a] == row[b] && a < b);
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

struct RcslsEval {
  double loss = 0.0;
  Matrix grad;
  // Per batch row: indices into the target pool nearest x_i Q, and into the
  // source pool whose mapped rows are nearest y_i.
  std::vector<std::vector<Index>> nn_tgt;
  std::vector<std::vector<Index>> nn_src;
};

/// Batch mean of the RCSLS loss and its gradient in Q with the neighbour
/// sets held at their current values.
inline RcslsEval rcsls_loss_and_grad(const LinearMap& q, const Matrix& s_batch,
                                     const Matrix& t_batch, const Matrix& x_pool,
                                     const Matrix& y_pool, Index k) {
  const Index b = s_batch.rows();
  const Index d = q.dim();
  if (t_batch.rows() != b || s_batch.cols() != d || t_batch.cols() != d || x_pool.cols() != d ||
      y_pool.cols() != d)
    throw ShapeError("rcsls_loss_and_grad: shape mismatch");
  if (b == 0) throw ShapeError("rcsls_loss_and_grad: empty batch");
  if (k < 1 || k > x_pool.rows() || k > y_pool.rows())
    throw RangeError("rcsls_loss_and_grad: k=" + std::to_string(k) + " out of range");

  const Matrix sq = s_batch * q.matrix();
  const Matrix sim_t = sq * y_pool.transpose();                        // b × |Y|
  const Matrix sim_s = t_batch * (x_pool * q.matrix()).transpose();    // b × |X|

  RcslsEval out;
  out.nn_tgt.resize(static_cast<std::size_t>(b));
  out.nn_src.resize(static_cast<std::size_t>(b));
  Matrix y_sum = Matrix::Zero(b, d), x_sum = Matrix::Zero(b, d);
  Vector per_row(b);
  const double inv_k = 1.0 / static_cast<double>(k);
  parallel_rows(b, [&](Index i) {
    auto& nt = out.nn_tgt[static_cast<std::size_t>(i)];
    auto& ns = out.nn_src[static_cast<std::size_t>(i)];
    nt = topk_indices(sim_t.row(i).data(), sim_t.cols(), k);
    ns = topk_indices(sim_s.row(i).data(), sim_s.cols(), k);
    double r_t = 0.0, r_s = 0.0;
    for (Index j : nt) {
      r_t += sim_t(i, j);
      y_sum.row(i) += y_pool.row(j);
    }
    for (Index j : ns) {
      r_s += sim_s(i, j);
      x_sum.row(i) += x_pool.row(j);
    }
    per_row(i) = -2.0 * sq.row(i).dot(t_batch.row(i)) + inv_k * (r_t + r_s);
  });

  const double inv_b = 1.0 / static_cast<double>(b);
  out.loss = per_row.sum() * inv_b;
  out.grad = inv_b * (-2.0 * s_batch.transpose() * t_batch + inv_k * s_batch.transpose() * y_sum +
                      inv_k * x_sum.transpose() * t_batch);
  return out;
}

/// Clips singular values above 1. Matrices already inside the unit spectral
/// ball are returned untouched.
inline Matrix clip_spectral_norm(const Matrix& q) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(q), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) <= 1.0 + 1e-12) return q;
  const Vector clipped = sv.cwiseMin(1.0);
  return svd.matrixU() * clipped.asDiagonal() * svd.matrixV().transpose();
}

struct SupervisedResult {
  LinearMap map;
  std::vector<double> losses;  // one per SGD step, before the update

  double mean_loss() const {
    if (losses.empty()) return 0.0;
    return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
  }
};

/// SGD on the RCSLS loss: batches of lexicon pairs drawn uniformly with
/// replacement, neighbours taken among the first `neighbor_pool` rows of
/// each space (files are frequency ordered).
inline SupervisedResult train_supervised(const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                                         const Lexicon& lex, const LinearMap& init,
                                         const SupConfig& cfg) {
  if (lex.empty()) throw ConfigError("train_supervised: empty lexicon");
  if (init.dim() != src.dim() || src.dim() != tgt.dim())
    throw ShapeError("train_supervised: dimension mismatch");
  if (cfg.batch_size < 1) throw ConfigError("train_supervised: batch_size must be positive");
  lex.validate(src, tgt);

  const Index d = src.dim();
  const Matrix x_pool = src.matrix().topRows(std::min(cfg.neighbor_pool, src.size()));
  const Matrix y_pool = tgt.matrix().topRows(std::min(cfg.neighbor_pool, tgt.size()));

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, lex.size() - 1);
  Matrix q = init.matrix();
  SupervisedResult res;
  res.losses.reserve(static_cast<std::size_t>(std::max(cfg.iters_per_epoch, 0)));
  Matrix sb(cfg.batch_size, d), tb(cfg.batch_size, d);

  for (int it = 0; it < cfg.iters_per_epoch; ++it) {
    for (Index r = 0; r < cfg.batch_size; ++r) {
      const LexPair& p = lex[pick(rng)];
      sb.row(r) = src.matrix().row(p.src);
      tb.row(r) = tgt.matrix().row(p.tgt);
    }
    const RcslsEval ev = rcsls_loss_and_grad(LinearMap(q), sb, tb, x_pool, y_pool, cfg.k);
    res.losses.push_back(ev.loss);
    q -= cfg.learning_rate * ev.grad;
    if (cfg.spectral_clip) q = clip_spectral_norm(q);
    if (!q.allFinite()) throw NumericError("train_supervised: non-finite map at step " +
                                           std::to_string(it));
  }
  res.map = LinearMap(std::move(q), false);
  return res;
}

}  // namespace otlex
