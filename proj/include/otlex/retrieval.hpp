#pragma once

// Translation retrieval (nearest neighbour or CSLS) and precision@k.

#include "otlex/common.hpp"
#include "otlex/embed_io.hpp"
#include "otlex/linear_map.hpp"
#include "otlex/ot_core.hpp"

#include <map>
#include <set>
#include <vector>

namespace otlex {

enum class RetrievalMethod { nn, csls };

struct RetrievalOptions {
  RetrievalMethod method = RetrievalMethod::csls;
  Index csls_k = 10;
  Index top_n = 10;
  Index pool = 200000;  // candidate targets / CSLS neighbourhood pool
  Index block_rows = 1024;
};

namespace detail {

inline Matrix unit_rows(Matrix m) {
  for (Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0.0) m.row(i) /= n;
  }
  return m;
}

// Mean of the k largest cosines of each row of `queries` against `base`.
inline Vector mean_topk_similarity(const Matrix& queries, const Matrix& base, Index k,
                                   Index block_rows) {
  Vector out(queries.rows());
  for (Index lo = 0; lo < queries.rows(); lo += block_rows) {
    const Index len = std::min(block_rows, queries.rows() - lo);
    const Matrix sim = queries.middleRows(lo, len) * base.transpose();
    parallel_rows(len, [&](Index r) {
      std::vector<double> buf(sim.row(r).data(), sim.row(r).data() + sim.cols());
      out(lo + r) = topk_mean(buf, k);
    });
  }
  return out;
}

}  // namespace detail

/// Ranked target indices (best first, at most top_n) for each query source
/// index. nn ranks by cos(x_q Q, y); csls by 2 cos(x_q Q, y) - r_T(x_q Q) - r_S(y).
inline std::vector<std::vector<Index>> retrieve(const LinearMap& q, const EmbeddingSpace& src,
                                                const EmbeddingSpace& tgt,
                                                const std::vector<Index>& queries,
                                                const RetrievalOptions& opt = {}) {
  if (src.dim() != tgt.dim() || q.dim() != src.dim())
    throw ShapeError("retrieve: dimension mismatch");
  const Matrix y = detail::unit_rows(tgt.matrix().topRows(std::min(opt.pool, tgt.size())));
  Matrix xq(static_cast<Index>(queries.size()), src.dim());
  for (std::size_t r = 0; r < queries.size(); ++r) {
    const Index qi = queries[r];
    if (qi < 0 || qi >= src.size()) throw RangeError("retrieve: query index out of range");
    xq.row(static_cast<Index>(r)) = src.matrix().row(qi);
  }
  xq = detail::unit_rows(q.apply(xq));

  Vector r_tgt, r_src;
  if (opt.method == RetrievalMethod::csls) {
    const Matrix x_pool =
        detail::unit_rows(q.apply(src.matrix().topRows(std::min(opt.pool, src.size()))));
    if (opt.csls_k < 1 || opt.csls_k > y.rows() || opt.csls_k > x_pool.rows())
      throw RangeError("retrieve: csls_k=" + std::to_string(opt.csls_k) + " out of range");
    r_tgt = detail::mean_topk_similarity(xq, y, opt.csls_k, opt.block_rows);
    r_src = detail::mean_topk_similarity(y, x_pool, opt.csls_k, opt.block_rows);
  }

  const Index top = std::min(opt.top_n, y.rows());
  std::vector<std::vector<Index>> out(queries.size());
  for (Index lo = 0; lo < xq.rows(); lo += opt.block_rows) {
    const Index len = std::min(opt.block_rows, xq.rows() - lo);
    Matrix score = xq.middleRows(lo, len) * y.transpose();
    if (opt.method == RetrievalMethod::csls) {
      for (Index r = 0; r < len; ++r)
        score.row(r) = 2.0 * score.row(r) - Eigen::RowVectorXd::Constant(y.rows(), r_tgt(lo + r)) -
                       r_src.transpose();
    }
    parallel_rows(len, [&](Index r) {
      std::vector<Index> idx(static_cast<std::size_t>(y.rows()));
      std::iota(idx.begin(), idx.end(), Index{0});
      const double* row = score.row(r).data();
      std::partial_sort(idx.begin(), idx.begin() + top, idx.end(), [row](Index a, Index b) {
        return row[a] > row[b] || (row[a] == row[b] && a < b);
      });
      idx.resize(static_cast<std::size_t>(top));
      out[static_cast<std::size_t>(lo + r)] = std::move(idx);
    });
  }
  return out;
}

/// Fraction of distinct test source words with a gold target among their
/// top-k retrievals. Sources with several gold targets count once.
inline double precision_at_k(const LinearMap& q, const EmbeddingSpace& src,
                             const EmbeddingSpace& tgt, const Lexicon& test, Index k,
                             RetrievalOptions opt = {}) {
  if (test.empty()) throw ConfigError("precision_at_k: empty test lexicon");
  std::map<Index, std::set<Index>> gold;
  for (const auto& p : test.pairs()) gold[p.src].insert(p.tgt);
  std::vector<Index> queries;
  queries.reserve(gold.size());
  for (const auto& [s, _] : gold) queries.push_back(s);
  opt.top_n = std::max(opt.top_n, k);
  const auto ranked = retrieve(q, src, tgt, queries, opt);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < queries.size(); ++r) {
    const auto& targets = gold[queries[r]];
    const auto& list = ranked[r];
    for (Index t = 0; t < k && t < static_cast<Index>(list.size()); ++t) {
      if (targets.count(list[static_cast<std::size_t>(t)])) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

inline double precision_at_1(const LinearMap& q, const EmbeddingSpace& src,
                             const EmbeddingSpace& tgt, const Lexicon& test,
                             const RetrievalOptions& opt = {}) {
  return precision_at_k(q, src, tgt, test, 1, opt);
}

}  // namespace otlex
