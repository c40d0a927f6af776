#pragma once

// Stochastic Wasserstein-Procrustes: alternate a transport plan between
// sampled batches with a gradient step on Q followed by re-projection onto
// the orthogonal group. When a supervised map is available, the plain OT
// subproblem is replaced by prior OT with a Boltzmann prior built from it.

#include "otlex/common.hpp"
#include "otlex/embed_io.hpp"
#include "otlex/linear_map.hpp"
#include "otlex/ot_core.hpp"

#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

namespace otlex {

struct UnsupConfig {
  Index batch_size = 8000;
  double learning_rate = 500.0;
  int iters_per_epoch = 50;
  double epsilon = 0.1;      // entropic coefficient of the no-prior baseline
  double varepsilon = 1.0;   // KL coefficient of prior OT
  double temperature = 0.1;  // Boltzmann prior temperature
  Index k = 10;              // RCSLS neighbourhood for the prior cost
  Index sample_pool = 20000;
  bool use_pot = true;
  SinkhornOptions sinkhorn{};
  std::uint64_t seed = 0;
};

struct Batch {
  std::vector<Index> indices;
  Matrix rows;
};

/// Draws batch_size distinct rows uniformly from the first sample_pool rows
/// (clamped to the vocabulary size) by a partial Fisher-Yates shuffle.
inline Batch sample_batch(const EmbeddingSpace& space, const UnsupConfig& cfg,
                          std::mt19937_64& rng) {
  const Index pool = std::min(cfg.sample_pool, space.size());
  if (cfg.batch_size < 1 || cfg.batch_size > pool)
    throw ConfigError("sample_batch: batch_size " + std::to_string(cfg.batch_size) +
                      " exceeds sample pool " + std::to_string(pool));
  std::vector<Index> idx(static_cast<std::size_t>(pool));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index t = 0; t < cfg.batch_size; ++t) {
    std::uniform_int_distribution<Index> pick(t, pool - 1);
    std::swap(idx[static_cast<std::size_t>(t)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(cfg.batch_size));
  Batch b{std::move(idx), Matrix(cfg.batch_size, space.dim())};
  for (Index r = 0; r < cfg.batch_size; ++r)
    b.rows.row(r) = space.matrix().row(b.indices[static_cast<std::size_t>(r)]);
  return b;
}

/// Gradient of <D(Q), P> in Q for D = squared Euclidean cost of (Xb Q, Yb)
/// with the plan held fixed.
inline Matrix wasserstein_gradient(const Matrix& q, const Matrix& xb, const Matrix& yb,
                                   const Matrix& plan) {
  return 2.0 * xb.transpose() * (xb * q - plan * yb);
}

/// The part of that gradient that varies over the orthogonal group. With unit
/// column sums, sum_ij P_ij ||x_i Q||^2 does not depend on an orthogonal Q, so
/// only the cross term -2 <x_i Q, y_j> contributes.
inline Matrix orthogonal_wasserstein_gradient(const Matrix& xb, const Matrix& yb,
                                              const Matrix& plan) {
  return -2.0 * xb.transpose() * (plan * yb);
}

struct UnsupStep {
  LinearMap map;
  double objective = 0.0;  // <D, P> / m before the update
  TransportPlan plan;
};

inline UnsupStep unsup_step(const LinearMap& q, const Matrix& xb, const Matrix& yb,
                            const PriorPlan* prior, const UnsupConfig& cfg) {
  if (xb.rows() != yb.rows() || xb.cols() != q.dim() || yb.cols() != q.dim())
    throw ShapeError("unsup_step: batch shapes disagree");
  const Index m = xb.rows();
  const CostMatrix d = cost_sq_euclidean(q.apply(xb), yb);
  TransportPlan plan = (prior != nullptr && cfg.use_pot)
                           ? prior_ot(d, *prior, cfg.varepsilon, cfg.sinkhorn)
                           : sinkhorn(d, cfg.epsilon, cfg.sinkhorn);
  const double objective = transport_cost(d.values, plan.values()) / static_cast<double>(m);
  Matrix next = q.matrix() - (cfg.learning_rate / static_cast<double>(m)) *
                                 orthogonal_wasserstein_gradient(xb, yb, plan.values());
  if (!next.allFinite()) throw NumericError("unsup_step: non-finite update");
  return UnsupStep{LinearMap(nearest_orthogonal(next), true), objective, std::move(plan)};
}

struct UnsupervisedResult {
  LinearMap map;
  std::vector<double> objectives;  // per iteration

  double mean_objective() const {
    if (objectives.empty()) return 0.0;
    return std::accumulate(objectives.begin(), objectives.end(), 0.0) /
           static_cast<double>(objectives.size());
  }
};

/// Runs iters_per_epoch stochastic steps. With `prior_source` (a supervised
/// map) and use_pot, each batch gets a Boltzmann prior from the RCSLS cost
/// of the mapped source batch against the target batch.
inline UnsupervisedResult train_unsupervised(const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                                             const LinearMap& init,
                                             const std::optional<LinearMap>& prior_source,
                                             const UnsupConfig& cfg) {
  if (src.dim() != tgt.dim() || init.dim() != src.dim())
    throw ShapeError("train_unsupervised: dimension mismatch");
  if (prior_source && prior_source->dim() != src.dim())
    throw ShapeError("train_unsupervised: prior map dimension mismatch");

  std::mt19937_64 rng(cfg.seed);
  LinearMap q = init.projected();
  UnsupervisedResult res;
  res.objectives.reserve(static_cast<std::size_t>(std::max(cfg.iters_per_epoch, 0)));
  const bool with_prior = prior_source.has_value() && cfg.use_pot;

  for (int it = 0; it < cfg.iters_per_epoch; ++it) {
    const Batch xb = sample_batch(src, cfg, rng);
    const Batch yb = sample_batch(tgt, cfg, rng);
    std::optional<PriorPlan> prior;
    if (with_prior) {
      const Index k = std::min(cfg.k, xb.rows.rows());
      prior = boltzmann_prior(cost_rcsls(xb.rows, yb.rows, *prior_source, k), cfg.temperature);
    }
    UnsupStep step = unsup_step(q, xb.rows, yb.rows, prior ? &*prior : nullptr, cfg);
    res.objectives.push_back(step.objective);
    q = std::move(step.map);
  }
  res.map = std::move(q);
  return res;
}

}  // namespace otlex
