// Desk-scale acceptance suite. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include "otlex/framework.hpp"
#include "otlex/map_io.hpp"
#include "otlex/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>

using namespace otlex;
using otlex::testing::gaussian;
using otlex::testing::gram_schmidt_orthogonal;
using otlex::testing::uniform;
using otlex::testing::unit_gaussian;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(const char* name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s  %-28s %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome sinkhorn_vs_assignment() {
  std::mt19937_64 rng(2024);
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const Matrix d = uniform(4, 4, rng);
    const double exact = oracle::assignment_optimum(d);
    const double got = transport_cost(d, sinkhorn(CostMatrix{d}, 0.005).values());
    worst = std::max(worst, std::abs(got - exact) / exact);
  }
  const double sec = seconds_since(t0);
  return {worst <= 0.01 && sec < 5.0, fmt("worst rel gap %.2e, %.3f s", worst, sec)};
}

Outcome prior_reduction() {
  std::mt19937_64 rng(7);
  double worst_uniform = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const CostMatrix d{uniform(8, 8, rng)};
    const PriorPlan g{Matrix::Constant(8, 8, 1.0 / 8.0)};
    const double eps = 0.05 + rep * 0.1;
    worst_uniform = std::max(
        worst_uniform, (prior_ot(d, g, eps).values() - sinkhorn(d, eps).values()).cwiseAbs().maxCoeff());
  }
  double worst_zero = 0.0;
  SinkhornOptions tight;
  tight.tol = 1e-12;
  tight.max_iters = 100000;
  for (int rep = 0; rep < 5; ++rep) {
    const PriorPlan g = boltzmann_prior(CostMatrix{uniform(8, 8, rng, -1.0, 1.0)}, 0.5);
    const TransportPlan p = prior_ot(CostMatrix{Matrix::Zero(8, 8)}, g, 1.0, tight);
    worst_zero = std::max(worst_zero,
                          (p.values() - oracle::scale_to_unit_marginals(g.values)).cwiseAbs().maxCoeff());
  }
  return {worst_uniform <= 1e-10 && worst_zero <= 1e-8,
          fmt("uniform prior %.1e, zero cost %.1e", worst_uniform, worst_zero)};
}

Outcome prior_pull() {
  std::mt19937_64 rng(11);
  const CostMatrix d{uniform(8, 8, rng)};
  const PriorPlan g = boltzmann_prior(CostMatrix{uniform(8, 8, rng)}, 0.1);
  std::ostringstream kls;
  double prev = std::numeric_limits<double>::infinity();
  bool ok = true;
  for (double eps : {0.1, 0.5, 1.0, 5.0, 20.0}) {
    const double kl = kl_divergence(prior_ot(d, g, eps).values(), g.values);
    ok = ok && kl <= prev;
    prev = kl;
    kls << fmt("%.4g ", kl);
  }
  return {ok, "KL " + kls.str()};
}

Outcome procrustes_recovery() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const Matrix s = gaussian(50, 8, rng);
    const Matrix r = gram_schmidt_orthogonal(8, rng);
    worst = std::max(worst, (procrustes(s, s * r).matrix() - r).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-8, fmt("max |Q-R| %.1e", worst)};
}

Outcome rcsls_gradient() {
  std::mt19937_64 rng(99);
  int checked = 0;
  double worst = 0.0;
  for (int attempt = 0; attempt < 500 && checked < 20; ++attempt) {
    const Index d = 5, k = 3;
    const Matrix x = unit_gaussian(15, d, rng), y = unit_gaussian(15, d, rng);
    const Matrix s = x.topRows(6), t = y.topRows(6);
    const Matrix q = gram_schmidt_orthogonal(d, rng) + 0.1 * gaussian(d, d, rng);
    const RcslsEval ev = rcsls_loss_and_grad(LinearMap(q), s, t, x, y, k);
    const double h = 1e-5;
    bool stable = true;
    Matrix fd(d, d);
    for (Index a = 0; a < d && stable; ++a)
      for (Index b = 0; b < d && stable; ++b) {
        Matrix qp = q, qm = q;
        qp(a, b) += h;
        qm(a, b) -= h;
        const RcslsEval ep = rcsls_loss_and_grad(LinearMap(qp), s, t, x, y, k);
        const RcslsEval em = rcsls_loss_and_grad(LinearMap(qm), s, t, x, y, k);
        stable = ep.nn_tgt == ev.nn_tgt && em.nn_tgt == ev.nn_tgt && ep.nn_src == ev.nn_src &&
                 em.nn_src == ev.nn_src;
        fd(a, b) = (ep.loss - em.loss) / (2.0 * h);
      }
    if (!stable) continue;
    ++checked;
    worst = std::max(worst, (fd - ev.grad).norm() / ev.grad.norm());
  }
  return {checked == 20 && worst < 1e-4, fmt("%g points, worst rel err %.1e", checked, worst)};
}

Outcome blu_bruteforce() {
  std::mt19937_64 rng(5150);
  int mismatches = 0, instances = 0;
  std::size_t candidates = 0;
  for (int rep = 0; rep < 30; ++rep) {
    const Matrix f = uniform(20, 20, rng), b = uniform(20, 20, rng);
    for (Index k : {1, 3, 5}) {
      ++instances;
      const oracle::Blu o(f, b, k);
      const PairSet pairs = bidirectional_candidates(f, b);
      std::vector<std::pair<Index, Index>> want_pairs = o.pairs;
      bool same = pairs == want_pairs;
      const std::vector<ScoredPair> scored = credit_scores(f, b, pairs, k);
      for (const auto& sp : scored) {
        const auto it = o.scores.find({sp.src, sp.tgt});
        same = same && it != o.scores.end() && sp.cs_forward == it->second.first &&
               sp.cs_backward == it->second.second;
      }
      Lexicon annotated;
      if (!pairs.empty()) annotated.add(pairs.front().first, pairs.front().second);
      for (std::size_t cap : {std::size_t{1}, std::size_t{3}, pairs.size()}) {
        const Lexicon sel = select_additional(scored, annotated, cap);
        std::vector<std::pair<Index, Index>> got;
        for (const auto& p : sel.pairs()) got.emplace_back(p.src, p.tgt);
        same = same && got == o.top(annotated, cap);
      }
      candidates += pairs.size();
      mismatches += same ? 0 : 1;
    }
  }
  return {mismatches == 0,
          fmt("%g instances, %g candidates, %g mismatches", instances, double(candidates), mismatches)};
}

// ---------------------------------------------------------------------------

StrategyConfig scaled_config(std::uint64_t seed) {
  StrategyConfig c;
  c.epochs = 5;
  c.sup.iters_per_epoch = 200;
  c.sup.batch_size = 128;
  c.unsup.iters_per_epoch = 20;
  c.unsup.batch_size = 512;
  c.seed = seed;
  return c;
}

struct PlantedRun {
  double p_at_1 = 0.0;
  double seconds = 0.0;
};

PlantedRun run_planted(const SynthOptions& so, Strategy s, std::uint64_t seed, bool no_pot = false,
                       bool no_blu = false) {
  const SyntheticInstance inst = generate(so);
  const auto [train, test] = split_gold(inst, 50, 200, 100 + seed);
  StrategyConfig cfg = scaled_config(seed);
  cfg.strategy = s;
  cfg.ablate_pot = no_pot;
  cfg.ablate_blu = no_blu;
  const auto t0 = Clock::now();
  const RunReport rep = run_strategy(inst.src, inst.tgt, train, cfg, RunGold{nullptr, &test});
  return {*rep.p_at_1_nn, seconds_since(t0)};
}

Outcome end_to_end() {
  double mean_css = 0, mean_pss = 0, mean_sup = 0, min_css = 1, min_pss = 1, slowest = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthOptions so;
    so.seed = seed;
    const PlantedRun css = run_planted(so, Strategy::css, seed);
    const PlantedRun pss = run_planted(so, Strategy::pss, seed);
    const PlantedRun sup = run_planted(so, Strategy::sup_only, seed);
    mean_css += css.p_at_1 / 5;
    mean_pss += pss.p_at_1 / 5;
    mean_sup += sup.p_at_1 / 5;
    min_css = std::min(min_css, css.p_at_1);
    min_pss = std::min(min_pss, pss.p_at_1);
    slowest = std::max({slowest, css.seconds, pss.seconds});
  }
  const bool ok = min_css >= 0.95 && min_pss >= 0.95 && slowest < 120.0 && mean_css >= mean_sup &&
                  mean_pss >= mean_sup;
  return {ok, fmt("min P@1 css %.3f pss %.3f; mean css %.3f pss %.3f", min_css, min_pss, mean_css, mean_pss) +
                  fmt(" sup_only %.3f; slowest run %.1f s", mean_sup, slowest)};
}

Outcome ablation_ordering() {
  double full = 0, ablated = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthOptions so;
    so.seed = seed;
    so.hard = true;
    full += run_planted(so, Strategy::css, seed).p_at_1 / 5;
    ablated += run_planted(so, Strategy::css, seed, true, true).p_at_1 / 5;
  }
  return {full - ablated > 0.0, fmt("hard mode mean P@1 css %.3f, without POT and BLU %.3f", full, ablated)};
}

Outcome determinism() {
  const SyntheticInstance inst = generate(600, 8, 0.01, 3);
  const auto [train, test] = split_gold(inst, 40, 100, 1);
  bool same = true;
  for (Strategy s : {Strategy::css, Strategy::pss, Strategy::sup_only, Strategy::unsup_only}) {
    StrategyConfig cfg = scaled_config(17);
    cfg.epochs = 2;
    cfg.strategy = s;
    const auto a = encode_map(run_strategy(inst.src, inst.tgt, train, cfg).final_map);
    const auto b = encode_map(run_strategy(inst.src, inst.tgt, train, cfg).final_map);
    same = same && a == b;
  }
  return {same, "map encodings of all four strategies byte-identical across two runs"};
}

Outcome feasibility() {
  const PlanAuditSnapshot a = PlanAudit::instance().snapshot();
  return {a.plans > 0 && a.worst_violation < 1e-6 && a.negative_plans == 0,
          fmt("%g plans, worst marginal violation %.1e, %g with negative entries", double(a.plans),
              a.worst_violation, double(a.negative_plans)) +
              fmt("; %g stopped at the iteration cap (worst residual before rounding %.1e)",
                  double(a.unconverged), a.worst_residual)};
}

}  // namespace

int main() {
  PlanAudit::instance().reset();
  report("sinkhorn_assignment", sinkhorn_vs_assignment);
  report("prior_ot_reduction", prior_reduction);
  report("prior_pull_monotone", prior_pull);
  report("procrustes_recovery", procrustes_recovery);
  report("rcsls_gradient", rcsls_gradient);
  report("blu_bruteforce", blu_bruteforce);
  report("planted_end_to_end", end_to_end);
  report("ablation_ordering", ablation_ordering);
  report("determinism", determinism);
  // Last, so it covers every plan produced above.
  report("marginal_feasibility", feasibility);
  std::printf("%d failed\n", failures);
  return failures == 0 ? 0 : 1;
}
