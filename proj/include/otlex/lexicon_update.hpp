#pragma once

// Bi-directional lexicon update: mutual nearest neighbours between the
// forward mapping (x Q vs y) and the backward mapping (x vs y Qᵀ), ranked by
// a two-sided margin ("credit score") and appended to the annotated lexicon.

#include "otlex/common.hpp"
#include "otlex/embed_io.hpp"
#include "otlex/linear_map.hpp"
#include "otlex/ot_core.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

namespace otlex {

enum class DistanceMetric { cosine, sq_euclidean };

struct ScoredPair {
  Index src = 0;
  Index tgt = 0;
  double cs_forward = 0.0;
  double cs_backward = 0.0;
  double cs_total = 0.0;
};

using PairSet = std::vector<std::pair<Index, Index>>;

inline Matrix distance_matrix(const Matrix& a, const Matrix& b, DistanceMetric metric) {
  return metric == DistanceMetric::cosine ? cost_cosine_distance(a, b).values
                                          : cost_sq_euclidean(a, b).values;
}

/// Map used for the backward direction: Qᵀ for orthogonal maps, otherwise the
/// pseudo-inverse.
inline Matrix backward_map(const LinearMap& q, bool* used_pinv = nullptr) {
  const bool orth = q.orthogonal() || orthogonality_error(q.matrix()) <= LinearMap::kOrthogonalityTol;
  if (used_pinv) *used_pinv = !orth;
  if (orth) return q.matrix().transpose();
  return Eigen::MatrixXd(q.matrix()).completeOrthogonalDecomposition().pseudoInverse();
}

namespace detail {

// Index of the smallest entry, lowest index on ties.
inline Index argmin_lowest(const double* v, Index n, Index stride = 1) {
  Index best = 0;
  for (Index t = 1; t < n; ++t)
    if (v[t * stride] < v[best * stride]) best = t;
  return best;
}

// Indices of the `count` smallest entries of v, ordered by (value, index).
inline std::vector<Index> smallest(const std::vector<double>& v, Index count) {
  std::vector<Index> idx(v.size());
  std::iota(idx.begin(), idx.end(), Index{0});
  count = std::min<Index>(count, static_cast<Index>(v.size()));
  std::partial_sort(idx.begin(), idx.begin() + count, idx.end(), [&v](Index a, Index b) {
    const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
    return v[ua] < v[ub] || (v[ua] == v[ub] && a < b);
  });
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

// Mean distance to the K nearest entries other than `exclude`, given the
// K+1 nearest in (value, index) order.
inline double competitor_mean(const std::vector<Index>& nearest, const std::vector<double>& v,
                              Index exclude, Index k) {
  double s = 0.0;
  Index taken = 0;
  for (Index idx : nearest) {
    if (idx == exclude) continue;
    if (taken == k) break;
    s += v[static_cast<std::size_t>(idx)];
    ++taken;
  }
  return s / static_cast<double>(k);
}

}  // namespace detail

/// B = B_fwd ∩ B_bwd where B_fwd pairs each row with its nearest column in
/// d_fwd and B_bwd pairs each column with its nearest row in d_bwd. Sorted by
/// source index.
inline PairSet bidirectional_candidates(const Matrix& d_fwd, const Matrix& d_bwd) {
  if (d_fwd.rows() != d_bwd.rows() || d_fwd.cols() != d_bwd.cols())
    throw ShapeError("bidirectional_candidates: distance matrices differ in shape");
  PairSet out;
  std::vector<Index> col_best(static_cast<std::size_t>(d_bwd.cols()));
  for (Index j = 0; j < d_bwd.cols(); ++j)
    col_best[static_cast<std::size_t>(j)] =
        detail::argmin_lowest(d_bwd.data() + j, d_bwd.rows(), d_bwd.cols());
  for (Index i = 0; i < d_fwd.rows(); ++i) {
    const Index j = detail::argmin_lowest(d_fwd.row(i).data(), d_fwd.cols());
    if (col_best[static_cast<std::size_t>(j)] == i) out.emplace_back(i, j);
  }
  return out;
}

inline PairSet bidirectional_candidates(const Matrix& x, const Matrix& y, const LinearMap& q,
                                        DistanceMetric metric = DistanceMetric::cosine) {
  const Matrix d_fwd = distance_matrix(q.apply(x), y, metric);
  const Matrix d_bwd = distance_matrix(x, y * backward_map(q), metric);
  return bidirectional_candidates(d_fwd, d_bwd);
}

/// Forward score: mean of the K nearest competitors of row i (excluding j)
/// minus D_fwd[i][j]; backward score symmetric over column j of d_bwd.
inline std::vector<ScoredPair> credit_scores(const Matrix& d_fwd, const Matrix& d_bwd,
                                             const PairSet& pairs, Index k) {
  if (d_fwd.rows() != d_bwd.rows() || d_fwd.cols() != d_bwd.cols())
    throw ShapeError("credit_scores: distance matrices differ in shape");
  if (k < 1 || k >= d_fwd.cols() || k >= d_fwd.rows())
    throw RangeError("credit_scores: K=" + std::to_string(k) + " out of range");
  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    std::vector<double> row(d_fwd.row(i).data(), d_fwd.row(i).data() + d_fwd.cols());
    std::vector<double> col(static_cast<std::size_t>(d_bwd.rows()));
    for (Index r = 0; r < d_bwd.rows(); ++r) col[static_cast<std::size_t>(r)] = d_bwd(r, j);
    ScoredPair sp{i, j, 0.0, 0.0, 0.0};
    sp.cs_forward = detail::competitor_mean(detail::smallest(row, k + 1), row, j, k) - d_fwd(i, j);
    sp.cs_backward = detail::competitor_mean(detail::smallest(col, k + 1), col, i, k) - d_bwd(i, j);
    sp.cs_total = sp.cs_forward + sp.cs_backward;
    out.push_back(sp);
  }
  return out;
}

inline void sort_by_credit(std::vector<ScoredPair>& scored) {
  std::sort(scored.begin(), scored.end(), [](const ScoredPair& a, const ScoredPair& b) {
    if (a.cs_total != b.cs_total) return a.cs_total > b.cs_total;
    if (a.src != b.src) return a.src < b.src;
    return a.tgt < b.tgt;
  });
}

/// Top `cap` candidates by credit score that are not already annotated,
/// tagged as additional.
inline Lexicon select_additional(std::vector<ScoredPair> scored, const Lexicon& annotated,
                                 std::size_t cap) {
  sort_by_credit(scored);
  Lexicon out;
  for (const auto& sp : scored) {
    if (out.size() >= cap) break;
    if (annotated.contains(sp.src, sp.tgt)) continue;
    out.add(sp.src, sp.tgt, PairOrigin::additional);
  }
  return out;
}

/// annotated ⊕ additional.
inline Lexicon extend_lexicon(const Lexicon& annotated, const Lexicon& additional) {
  Lexicon out = annotated;
  for (const auto& p : additional.pairs()) out.add(p.src, p.tgt, PairOrigin::additional);
  return out;
}

// ---------------------------------------------------------------------------
// Blocked version over the most frequent rows of two spaces. Distances are
// produced a block of rows at a time; only the K+1 nearest per row and per
// column are retained.

struct BluOptions {
  Index k = 10;
  std::size_t cap = 10000;
  Index pool = 20000;
  DistanceMetric metric = DistanceMetric::cosine;
  Index block_rows = 1024;
};

struct BluResult {
  std::vector<ScoredPair> scored;  // all mutual candidates, credit-sorted
  Lexicon additional;
  bool used_pseudo_inverse = false;
};

namespace detail {

struct Nearest {
  std::vector<Index> idx;     // K+1 nearest in (value, index) order
  std::vector<double> dist;   // matching distances
};

// For every row of `queries`, the K+1 nearest rows of `base`.
inline std::vector<Nearest> nearest_rows(const Matrix& queries, const Matrix& base, Index keep,
                                         DistanceMetric metric, Index block_rows) {
  std::vector<Nearest> out(static_cast<std::size_t>(queries.rows()));
  for (Index lo = 0; lo < queries.rows(); lo += block_rows) {
    const Index len = std::min(block_rows, queries.rows() - lo);
    const Matrix d = distance_matrix(queries.middleRows(lo, len), base, metric);
    parallel_rows(len, [&](Index r) {
      std::vector<double> row(d.row(r).data(), d.row(r).data() + d.cols());
      auto& nr = out[static_cast<std::size_t>(lo + r)];
      nr.idx = smallest(row, keep);
      for (Index t : nr.idx) nr.dist.push_back(row[static_cast<std::size_t>(t)]);
    });
  }
  return out;
}

inline double competitor_mean(const Nearest& n, Index exclude, Index k) {
  double s = 0.0;
  Index taken = 0;
  for (std::size_t t = 0; t < n.idx.size(); ++t) {
    if (n.idx[t] == exclude) continue;
    if (taken == k) break;
    s += n.dist[t];
    ++taken;
  }
  return s / static_cast<double>(k);
}

}  // namespace detail

inline BluResult lexicon_update(const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                                const LinearMap& q, const Lexicon& annotated,
                                const BluOptions& opt) {
  if (src.dim() != tgt.dim() || q.dim() != src.dim())
    throw ShapeError("lexicon_update: dimension mismatch");
  const Matrix x = src.matrix().topRows(std::min(opt.pool, src.size()));
  const Matrix y = tgt.matrix().topRows(std::min(opt.pool, tgt.size()));
  if (opt.k < 1 || opt.k >= x.rows() || opt.k >= y.rows())
    throw RangeError("lexicon_update: K=" + std::to_string(opt.k) + " out of range");

  BluResult res;
  const Matrix back = backward_map(q, &res.used_pseudo_inverse);
  const Index keep = opt.k + 1;
  // Forward: rows x_i Q against y. Backward: columns y_j Qᵀ against x.
  const auto fwd = detail::nearest_rows(q.apply(x), y, keep, opt.metric, opt.block_rows);
  const auto bwd = detail::nearest_rows(y * back, x, keep, opt.metric, opt.block_rows);

  for (Index i = 0; i < x.rows(); ++i) {
    const auto& fi = fwd[static_cast<std::size_t>(i)];
    const Index j = fi.idx.front();
    const auto& bj = bwd[static_cast<std::size_t>(j)];
    if (bj.idx.front() != i) continue;
    ScoredPair sp{i, j, 0.0, 0.0, 0.0};
    sp.cs_forward = detail::competitor_mean(fi, j, opt.k) - fi.dist.front();
    sp.cs_backward = detail::competitor_mean(bj, i, opt.k) - bj.dist.front();
    sp.cs_total = sp.cs_forward + sp.cs_backward;
    res.scored.push_back(sp);
  }
  sort_by_credit(res.scored);
  res.additional = select_additional(res.scored, annotated, opt.cap);
  return res;
}

}  // namespace otlex
