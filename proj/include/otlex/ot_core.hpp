#pragma once

// Optimal-transport primitives: cost matrices, entropic Sinkhorn with unit
// marginals, the Boltzmann prior plan and the KL-regularized "prior OT"
// problem
//
//   min_{P in Π} <D, P> + ε KL(P || Γ),
//
// which reduces to entropic OT on the shifted cost D - ε log Γ.

#include "otlex/common.hpp"
#include "otlex/linear_map.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <vector>

namespace otlex {

enum class CostMetric { sq_euclidean, rcsls, cosine_distance, custom };

struct CostMatrix {
  Matrix values;
  CostMetric metric = CostMetric::custom;

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
};

/// Row-stochastic, strictly positive prior plan Γ.
struct PriorPlan {
  Matrix values;
};

/// A nonnegative plan with unit row and column sums (up to rounding error).
class TransportPlan {
 public:
  TransportPlan() = default;
  TransportPlan(Matrix values, double violation, double residual, int iterations, bool converged)
      : values_(std::move(values)),
        violation_(violation),
        residual_(residual),
        iterations_(iterations),
        converged_(converged) {}

  const Matrix& values() const { return values_; }
  Index size() const { return values_.rows(); }
  /// Max over rows and columns of |sum - 1| of the returned plan.
  double violation() const { return violation_; }
  /// Marginal violation of the last scaling iterate, before rounding onto
  /// the feasible set. converged() is residual() < tol.
  double residual() const { return residual_; }
  int iterations() const { return iterations_; }
  bool converged() const { return converged_; }

 private:
  Matrix values_;
  double violation_ = 0.0;
  double residual_ = 0.0;
  int iterations_ = 0;
  bool converged_ = false;
};

inline double marginal_violation(const Matrix& p) {
  const double rows = (p.rowwise().sum().array() - 1.0).abs().maxCoeff();
  const double cols = (p.colwise().sum().array() - 1.0).abs().maxCoeff();
  return std::max(rows, cols);
}

/// Moves a nonnegative matrix onto the unit-marginal polytope: rows and then
/// columns with excess mass are scaled down, and the remaining deficit is
/// added back as a rank-one term. The L1 change is at most a small multiple
/// of the total marginal error (Altschuler, Weed and Rigollet, 2017).
inline Matrix round_to_unit_marginals(Matrix p) {
  for (Index i = 0; i < p.rows(); ++i) {
    const double s = p.row(i).sum();
    if (s > 1.0) p.row(i) /= s;
  }
  for (Index j = 0; j < p.cols(); ++j) {
    const double s = p.col(j).sum();
    if (s > 1.0) p.col(j) /= s;
  }
  const Vector dr = (1.0 - p.rowwise().sum().array()).max(0.0).matrix();
  const Vector dc = (1.0 - p.colwise().sum().transpose().array()).max(0.0).matrix();
  const double mass = dr.sum();
  if (mass > 0.0) p.noalias() += dr * dc.transpose() / mass;
  return p;
}

// ---------------------------------------------------------------------------
// Process-wide record of every plan the solver hands out. Test drivers use it
// to check feasibility of all plans produced during a run.

struct PlanAuditSnapshot {
  long plans = 0;
  double worst_violation = 0.0;
  long negative_plans = 0;
  long unconverged = 0;  // solves that stopped at the iteration cap
  double worst_residual = 0.0;
};

class PlanAudit {
 public:
  static PlanAudit& instance() {
    static PlanAudit audit;
    return audit;
  }
  void record(const Matrix& p, double violation, double residual, bool converged) {
    std::lock_guard<std::mutex> lock(mu_);
    ++snap_.plans;
    snap_.worst_violation = std::max(snap_.worst_violation, violation);
    snap_.worst_residual = std::max(snap_.worst_residual, residual);
    if (!converged) ++snap_.unconverged;
    if ((p.array() < 0.0).any()) ++snap_.negative_plans;
  }
  PlanAuditSnapshot snapshot() const {
    std::lock_guard<std::mutex> lock(mu_);
    return snap_;
  }
  void reset() {
    std::lock_guard<std::mutex> lock(mu_);
    snap_ = {};
  }

 private:
  mutable std::mutex mu_;
  PlanAuditSnapshot snap_;
};

// ---------------------------------------------------------------------------
// Costs

inline CostMatrix cost_sq_euclidean(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw ShapeError("cost_sq_euclidean: dimension mismatch (" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.cols()) + ")");
  const Vector an = a.rowwise().squaredNorm();
  const Vector bn = b.rowwise().squaredNorm();
  Matrix cross = a * b.transpose();
  CostMatrix c{Matrix(a.rows(), b.rows()), CostMetric::sq_euclidean};
  parallel_rows(a.rows(), [&](Index i) {
    for (Index j = 0; j < b.rows(); ++j)
      c.values(i, j) = std::max(0.0, an(i) + bn(j) - 2.0 * cross(i, j));
  });
  return c;
}

/// 1 - cos(a_i, b_j).
inline CostMatrix cost_cosine_distance(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("cost_cosine_distance: dimension mismatch");
  Matrix an = a, bn = b;
  an.rowwise().normalize();
  bn.rowwise().normalize();
  CostMatrix c{Matrix(a.rows(), b.rows()), CostMetric::cosine_distance};
  c.values = (1.0 - (an * bn.transpose()).array()).matrix();
  return c;
}

/// Mean of the k largest entries of `v`.
inline double topk_mean(std::vector<double>& v, Index k) {
  std::partial_sort(v.begin(), v.begin() + k, v.end(), std::greater<>());
  double s = 0.0;
  for (Index t = 0; t < k; ++t) s += v[static_cast<std::size_t>(t)];
  return s / static_cast<double>(k);
}

/// RCSLS cost between mapped rows a_i·Q and rows b_j:
///
///   -2 (a_i Q)·b_j + mean_{b in N_B(a_i Q)} (a_i Q)·b + mean_{aQ in N_A(b_j)} (aQ)·b_j
///
/// with neighbourhoods taken by dot product inside the argument matrices.
inline CostMatrix cost_rcsls(const Matrix& a, const Matrix& b, const LinearMap& q, Index k) {
  if (a.cols() != b.cols() || a.cols() != q.dim())
    throw ShapeError("cost_rcsls: dimension mismatch");
  if (k < 1 || k > std::min(a.rows(), b.rows()))
    throw RangeError("cost_rcsls: k=" + std::to_string(k) + " out of range [1, " +
                     std::to_string(std::min(a.rows(), b.rows())) + "]");
  const Matrix sim = q.apply(a) * b.transpose();
  Vector row_term(sim.rows()), col_term(sim.cols());
  parallel_rows(sim.rows(), [&](Index i) {
    std::vector<double> buf(sim.row(i).data(), sim.row(i).data() + sim.cols());
    row_term(i) = topk_mean(buf, k);
  });
  parallel_rows(sim.cols(), [&](Index j) {
    std::vector<double> buf(static_cast<std::size_t>(sim.rows()));
    for (Index i = 0; i < sim.rows(); ++i) buf[static_cast<std::size_t>(i)] = sim(i, j);
    col_term(j) = topk_mean(buf, k);
  });
  CostMatrix c{Matrix(sim.rows(), sim.cols()), CostMetric::rcsls};
  parallel_rows(sim.rows(), [&](Index i) {
    for (Index j = 0; j < sim.cols(); ++j)
      c.values(i, j) = -2.0 * sim(i, j) + row_term(i) + col_term(j);
  });
  return c;
}

// ---------------------------------------------------------------------------
// Sinkhorn

struct SinkhornOptions {
  int max_iters = 1000;
  double tol = 1e-6;
  bool overrelax = true;
  double max_omega = 1.9;
  // Warm-start by ε-scaling when (max D - min D) / ε exceeds this.
  double scaling_ratio = 100.0;
};

/// Optional record of the dual objective, sampled every `every` sweeps.
/// Written as a minimization, -(Σf + Σg - ε Σ P), so each exact sweep
/// decreases it.
struct SweepTrace {
  int every = 10;
  std::vector<double> objective;
};

inline double entropic_objective(const Matrix& cost, const Matrix& p, double epsilon) {
  double obj = 0.0;
  for (Index i = 0; i < p.rows(); ++i)
    for (Index j = 0; j < p.cols(); ++j) {
      const double x = p(i, j);
      obj += cost(i, j) * x;
      if (x > 0.0) obj += epsilon * x * (std::log(x) - 1.0);
    }
  return obj;
}

/// Negated dual of entropic OT with unit marginals at potentials (f, g), where
/// P_ij = exp((f_i + g_j - D_ij) / ε).
inline double negated_dual_objective(const Vector& f, const Vector& g, const Matrix& p,
                                     double epsilon) {
  return -(f.sum() + g.sum() - epsilon * p.sum());
}

namespace detail {

inline double log_sum_exp(const double* z, Index n, Index stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Index t = 0; t < n; ++t) mx = std::max(mx, z[t * stride]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (Index t = 0; t < n; ++t) s += std::exp(z[t * stride] - mx);
  return mx + std::log(s);
}

// Dual potentials f, g parameterize P_ij = exp((f_i + g_j - D_ij) / ε).
struct SinkhornState {
  const Matrix& cost;
  double eps;
  Vector f, g;

  SinkhornState(const Matrix& c, double e)
      : cost(c), eps(e), f(Vector::Zero(c.rows())), g(Vector::Zero(c.cols())) {}

  // Exact log-domain half-steps with max subtraction.
  void log_row_update() {
    const Index n = cost.cols();
    parallel_rows(cost.rows(), [&](Index i) {
      std::vector<double> z(static_cast<std::size_t>(n));
      for (Index j = 0; j < n; ++j) z[static_cast<std::size_t>(j)] = (g(j) - cost(i, j)) / eps;
      f(i) = -eps * log_sum_exp(z.data(), n, 1);
    });
  }
  void log_col_update() {
    const Index m = cost.rows();
    parallel_rows(cost.cols(), [&](Index j) {
      std::vector<double> z(static_cast<std::size_t>(m));
      for (Index i = 0; i < m; ++i) z[static_cast<std::size_t>(i)] = (f(i) - cost(i, j)) / eps;
      g(j) = -eps * log_sum_exp(z.data(), m, 1);
    });
  }
  Matrix kernel() const {
    Matrix k(cost.rows(), cost.cols());
    parallel_rows(cost.rows(), [&](Index i) {
      for (Index j = 0; j < cost.cols(); ++j) k(i, j) = std::exp((f(i) + g(j) - cost(i, j)) / eps);
    });
    return k;
  }
};

}  // namespace detail

/// Entropic OT with unit row and column marginals, solved by alternating
/// row/column scaling. Potentials live in the log domain; the inner loop
/// scales a kernel stabilized by the current potentials and folds the
/// scalings back into the potentials whenever they drift far from 1. If a
/// stabilized row underflows, the remaining sweeps run as exact log-sum-exp
/// updates.
inline TransportPlan sinkhorn(const Matrix& cost, double epsilon, const SinkhornOptions& opt = {},
                              SweepTrace* trace = nullptr) {
  if (cost.rows() != cost.cols())
    throw ShapeError("sinkhorn: cost matrix must be square, got " + std::to_string(cost.rows()) +
                     "x" + std::to_string(cost.cols()));
  if (cost.rows() == 0) throw ShapeError("sinkhorn: empty cost matrix");
  if (!(epsilon > 0.0)) throw RangeError("sinkhorn: epsilon must be positive");
  if (!cost.allFinite()) throw NumericError("sinkhorn: cost matrix has non-finite entries");

  constexpr double kAbsorb = 1e20;
  const Index m = cost.rows();
  detail::SinkhornState st(cost, epsilon);
  int sweeps = 0;

  // ε-scaling: when the cost range dwarfs ε, warm-start the potentials by
  // solving a sequence of coarser problems. Uses at most half the budget.
  constexpr int kLevelSweeps = 10;
  const double range = cost.maxCoeff() - cost.minCoeff();
  if (range > opt.scaling_ratio * epsilon) {
    for (double e = range / 2.0; e > epsilon && sweeps < opt.max_iters / 2; e *= 0.5) {
      st.eps = e;
      for (int t = 0; t < kLevelSweeps && sweeps < opt.max_iters / 2; ++t, ++sweeps) {
        st.log_row_update();
        st.log_col_update();
      }
    }
    st.eps = epsilon;
  }
  st.log_row_update();
  st.log_col_update();
  ++sweeps;

  auto record = [&](const Vector& f, const Vector& g, const Matrix& p) {
    trace->objective.push_back(negated_dual_objective(f, g, p, epsilon));
  };
  auto due = [&] { return trace && trace->every > 0 && sweeps % trace->every == 0; };

  bool log_mode = false;
  bool converged = false;
  Matrix k = st.kernel();
  Vector u = Vector::Ones(m), v = Vector::Ones(m);

  // Over-relaxation: u <- u^(1-w) (1/Kv)^w. The fixed point is unchanged.
  // w tracks the observed contraction rate and is halved towards 1 (and then
  // frozen) whenever the violation stops decreasing.
  constexpr int kWindow = 20;
  double omega = 1.0;
  bool stalled = false;
  double col_viol = 0.0;  // exact after the initial log-domain sweep
  std::vector<double> history;

  while (!log_mode) {
    const Vector kv = k * v;
    if (!(kv.array() > 0.0).all() || !kv.allFinite()) {
      log_mode = true;
      break;
    }
    const double viol =
        std::max((u.cwiseProduct(kv).array() - 1.0).abs().maxCoeff(), col_viol);
    history.push_back(viol);
    if (viol < opt.tol) {
      converged = true;
      break;
    }
    if (sweeps >= opt.max_iters) break;

    if (opt.overrelax && sweeps % kWindow == 0 && history.size() > 2 * kWindow) {
      const double before = history[history.size() - 1 - kWindow];
      if (!(viol < before)) {
        omega = 1.0 + 0.5 * (omega - 1.0);
        stalled = true;
      } else if (!stalled) {
        // Observed rate rho of the relaxed sweep gives the plain rate theta
        // through (rho + w - 1)^2 = rho w^2 theta; then w_opt = 2 / (1 + sqrt(1 - theta)).
        const double rho = std::pow(viol / before, 1.0 / kWindow);
        const double theta = std::min(
            1.0 - 1e-12, (rho + omega - 1.0) * (rho + omega - 1.0) / (rho * omega * omega));
        const double target = std::min(opt.max_omega, 2.0 / (1.0 + std::sqrt(1.0 - theta)));
        if (target > omega) omega = target;
      }
    }

    if (omega == 1.0) {
      u = kv.cwiseInverse();
    } else {
      u = ((1.0 - omega) * u.array().log() - omega * kv.array().log()).exp().matrix();
    }
    const Vector ktu = k.transpose() * u;
    if (!(ktu.array() > 0.0).all() || !ktu.allFinite()) {
      log_mode = true;
      break;
    }
    if (omega == 1.0) {
      v = ktu.cwiseInverse();
      col_viol = 0.0;
    } else {
      v = ((1.0 - omega) * v.array().log() - omega * ktu.array().log()).exp().matrix();
      col_viol = (v.cwiseProduct(ktu).array() - 1.0).abs().maxCoeff();
    }
    ++sweeps;
    const double spread = std::max(std::max(u.maxCoeff(), 1.0 / u.minCoeff()),
                                   std::max(v.maxCoeff(), 1.0 / v.minCoeff()));
    if (spread > kAbsorb) {
      st.f.array() += epsilon * u.array().log();
      st.g.array() += epsilon * v.array().log();
      k = st.kernel();
      u.setOnes();
      v.setOnes();
    }
    if (due())
      record(st.f + epsilon * u.array().log().matrix(), st.g + epsilon * v.array().log().matrix(),
             u.asDiagonal() * k * v.asDiagonal());
  }

  Matrix p;
  if (log_mode) {
    st.f.array() += epsilon * u.array().log();
    st.g.array() += epsilon * v.array().log();
    st.log_col_update();
    for (;;) {
      p = st.kernel();
      const double viol = (p.rowwise().sum().array() - 1.0).abs().maxCoeff();
      if (viol < opt.tol) {
        converged = true;
        break;
      }
      if (sweeps >= opt.max_iters) break;
      st.log_row_update();
      st.log_col_update();
      ++sweeps;
      if (due()) record(st.f, st.g, st.kernel());
    }
  } else {
    p = u.asDiagonal() * k * v.asDiagonal();
  }

  if (!p.allFinite())
    throw NumericError("sinkhorn: non-finite scalings; epsilon too small for the cost scale");
  const double residual = marginal_violation(p);
  p = round_to_unit_marginals(std::move(p));
  const double violation = marginal_violation(p);
  PlanAudit::instance().record(p, violation, residual, converged);
  return TransportPlan(std::move(p), violation, residual, sweeps, converged);
}

inline TransportPlan sinkhorn(const CostMatrix& cost, double epsilon,
                              const SinkhornOptions& opt = {}, SweepTrace* trace = nullptr) {
  return sinkhorn(cost.values, epsilon, opt, trace);
}

inline double transport_cost(const Matrix& cost, const Matrix& plan) {
  return (cost.array() * plan.array()).sum();
}

// ---------------------------------------------------------------------------
// Priors

inline constexpr double kPriorFloor = 1e-300;

/// Γ_ij = softmax_j(-C_ij / T), floored at kPriorFloor and renormalized.
inline PriorPlan boltzmann_prior(const CostMatrix& c, double temperature) {
  if (!(temperature > 0.0)) throw RangeError("boltzmann_prior: temperature must be positive");
  if (!c.values.allFinite()) throw NumericError("boltzmann_prior: non-finite cost");
  PriorPlan g{Matrix(c.rows(), c.cols())};
  parallel_rows(c.rows(), [&](Index i) {
    const double mn = c.values.row(i).minCoeff();
    double s = 0.0;
    for (Index j = 0; j < c.cols(); ++j) {
      const double e = std::exp(-(c.values(i, j) - mn) / temperature);
      g.values(i, j) = e;
      s += e;
    }
    double s2 = 0.0;
    for (Index j = 0; j < c.cols(); ++j) {
      g.values(i, j) = std::max(g.values(i, j) / s, kPriorFloor);
      s2 += g.values(i, j);
    }
    g.values.row(i) /= s2;
  });
  return g;
}

/// Generalized KL divergence Σ P log(P/Γ) - P + Γ (with 0 log 0 = 0).
inline double kl_divergence(const Matrix& p, const Matrix& gamma) {
  double kl = 0.0;
  for (Index i = 0; i < p.rows(); ++i)
    for (Index j = 0; j < p.cols(); ++j) {
      const double x = p(i, j), y = gamma(i, j);
      if (x > 0.0) kl += x * std::log(x / y);
      kl += y - x;
    }
  return kl;
}

/// The Γ-prior cost D - ε log Γ.
inline Matrix prior_cost(const Matrix& cost, const PriorPlan& prior, double epsilon) {
  return cost - epsilon * prior.values.array().log().matrix();
}

inline TransportPlan prior_ot(const CostMatrix& cost, const PriorPlan& prior, double epsilon,
                              const SinkhornOptions& opt = {}, SweepTrace* trace = nullptr) {
  if (cost.rows() != prior.values.rows() || cost.cols() != prior.values.cols())
    throw ShapeError("prior_ot: cost and prior shapes differ");
  if (!(epsilon > 0.0)) throw RangeError("prior_ot: epsilon must be positive");
  if (!(prior.values.array() > 0.0).all())
    throw RangeError("prior_ot: prior plan must be strictly positive");
  return sinkhorn(prior_cost(cost.values, prior, epsilon), epsilon, opt, trace);
}

/// <D,P> + ε KL(P || Γ).
inline double prior_ot_objective(const Matrix& cost, const Matrix& plan, const PriorPlan& prior,
                                 double epsilon) {
  return transport_cost(cost, plan) + epsilon * kl_divergence(plan, prior.values);
}

}  // namespace otlex
