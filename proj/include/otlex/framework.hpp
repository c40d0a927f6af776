#pragma once

// Semi-supervised orchestration. Two message-passing channels couple the
// supervised and unsupervised aligners:
//
//   * prior OT: the supervised map shapes the transport prior of the
//     unsupervised aligner;
//   * lexicon update: mutual nearest neighbours under the unsupervised map
//     extend the lexicon of the supervised aligner.
//
// The cyclic strategy (css) feeds one map through Sup -> UnSup -> BLU every
// epoch. The parallel strategy (pss) keeps two maps that only exchange
// messages from the previous epoch, then keeps whichever has the lower
// Wasserstein cost.

#include "otlex/common.hpp"
#include "otlex/embed_io.hpp"
#include "otlex/lexicon_update.hpp"
#include "otlex/linear_map.hpp"
#include "otlex/ot_core.hpp"
#include "otlex/retrieval.hpp"
#include "otlex/supervised.hpp"
#include "otlex/unsupervised.hpp"

#include <cmath>
#include <future>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace otlex {

enum class Strategy { css, pss, sup_only, unsup_only };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::css: return "css";
    case Strategy::pss: return "pss";
    case Strategy::sup_only: return "sup_only";
    case Strategy::unsup_only: return "unsup_only";
  }
  return "?";
}

struct BluConfig {
  Index k = 10;
  std::size_t cap = 10000;
  Index pool = 20000;
  DistanceMetric metric = DistanceMetric::cosine;
};

struct StrategyConfig {
  Strategy strategy = Strategy::css;
  int epochs = 5;
  SupConfig sup{};
  UnsupConfig unsup{};
  BluConfig blu{};
  bool ablate_pot = false;
  bool ablate_blu = false;
  // Only meaningful for css; pss without one side is sup_only / unsup_only.
  bool ablate_sup = false;
  bool ablate_unsup = false;
  bool identity_init = false;
  RetrievalMethod eval_retrieval = RetrievalMethod::csls;
  Index csls_k = 10;
  Index selection_batch = 2000;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (strategy == Strategy::sup_only && ablate_pot)
      throw ConfigError("strategy sup_only has no unsupervised aligner; POT is inapplicable");
    if (strategy == Strategy::unsup_only && ablate_blu)
      throw ConfigError("strategy unsup_only has no supervised aligner; BLU is inapplicable");
    if ((ablate_sup || ablate_unsup) && strategy != Strategy::css)
      throw ConfigError("ablate_sup / ablate_unsup apply to css only");
    if (ablate_sup && ablate_unsup) throw ConfigError("cannot ablate both aligners");
    if (sup.batch_size < 1 || sup.iters_per_epoch < 0 || sup.k < 1)
      throw ConfigError("invalid supervised configuration");
    if (unsup.batch_size < 1 || unsup.batch_size > unsup.sample_pool)
      throw ConfigError("unsup batch_size must be in [1, sample_pool]");
    if (!(unsup.epsilon > 0.0) || !(unsup.varepsilon > 0.0) || !(unsup.temperature > 0.0))
      throw ConfigError("epsilon, varepsilon and temperature must be positive");
    if (blu.k < 1) throw ConfigError("blu.k must be positive");
    if (csls_k < 1) throw ConfigError("csls_k must be positive");
    if (selection_batch < 1) throw ConfigError("selection_batch must be positive");
  }
};

struct EpochRecord {
  int epoch = 0;
  std::optional<double> sup_loss;
  std::optional<double> unsup_objective;
  std::size_t additional_size = 0;
  std::optional<double> additional_precision;
};

struct SelectionResult {
  int chosen = 0;  // 0 = first candidate, 1 = second
  double cost_a = 0.0;
  double cost_b = 0.0;
};

struct RunReport {
  Strategy strategy = Strategy::css;
  std::vector<EpochRecord> epochs;
  LinearMap final_map;
  std::string chosen = "procrustes_init";
  std::optional<SelectionResult> selection;
  std::optional<double> p_at_1_nn;
  std::optional<double> p_at_1_csls;
  Lexicon extended_lexicon;
};

/// Optional references used only for reporting.
struct RunGold {
  const Lexicon* full = nullptr;  // scores additional-lexicon precision
  const Lexicon* test = nullptr;  // final P@1
};

/// Sinkhorn transport cost of each candidate on one seeded pair of batches;
/// mapped source rows are re-normalized so non-orthogonal maps are compared
/// in the same cosine geometry. Ties keep the first candidate.
inline SelectionResult select_by_wasserstein(const LinearMap& qa, const LinearMap& qb,
                                             const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                                             const StrategyConfig& cfg) {
  UnsupConfig sel = cfg.unsup;
  const Index pool = std::min({sel.sample_pool, src.size(), tgt.size()});
  sel.sample_pool = pool;
  sel.batch_size = std::min(cfg.selection_batch, pool);
  std::mt19937_64 rng(derive_seed(cfg.seed, stream::kSelection));
  const Batch xb = sample_batch(src, sel, rng);
  const Batch yb = sample_batch(tgt, sel, rng);

  auto cost_of = [&](const LinearMap& q) {
    Matrix mapped = q.apply(xb.rows);
    normalize_rows(mapped);
    const CostMatrix d = cost_sq_euclidean(mapped, yb.rows);
    const TransportPlan p = sinkhorn(d, sel.epsilon, sel.sinkhorn);
    return transport_cost(d.values, p.values());
  };
  SelectionResult r;
  r.cost_a = cost_of(qa);
  r.cost_b = cost_of(qb);
  r.chosen = r.cost_b < r.cost_a ? 1 : 0;
  return r;
}

namespace detail {

inline SupConfig sup_for_epoch(const StrategyConfig& cfg, int epoch) {
  SupConfig c = cfg.sup;
  c.seed = derive_seed(cfg.seed, stream::kSupervised, static_cast<std::uint64_t>(epoch));
  return c;
}

inline UnsupConfig unsup_for_epoch(const StrategyConfig& cfg, int epoch) {
  UnsupConfig c = cfg.unsup;
  c.seed = derive_seed(cfg.seed, stream::kUnsupervised, static_cast<std::uint64_t>(epoch));
  return c;
}

inline BluOptions blu_options(const StrategyConfig& cfg) {
  return BluOptions{cfg.blu.k, cfg.blu.cap, cfg.blu.pool, cfg.blu.metric};
}

inline std::optional<double> lexicon_precision(const Lexicon& additional, const RunGold& gold) {
  if (gold.full == nullptr || additional.empty()) return std::nullopt;
  std::size_t hit = 0;
  for (const auto& p : additional.pairs()) hit += gold.full->contains(p.src, p.tgt) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(additional.size());
}

inline UnsupervisedResult run_unsup(const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                                    const LinearMap& init, const std::optional<LinearMap>& prior,
                                    const UnsupConfig& cfg, int epoch) {
  try {
    return train_unsupervised(src, tgt, init, prior, cfg);
  } catch (const NumericError& e) {
    throw NumericError("unsupervised aligner diverged in epoch " + std::to_string(epoch) + ": " +
                       e.what());
  }
}

inline void finish_report(RunReport& rep, const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                          const StrategyConfig& cfg, const RunGold& gold) {
  if (gold.test == nullptr || gold.test->empty()) return;
  RetrievalOptions nn{RetrievalMethod::nn, cfg.csls_k};
  RetrievalOptions csls{RetrievalMethod::csls, cfg.csls_k};
  rep.p_at_1_nn = precision_at_1(rep.final_map, src, tgt, *gold.test, nn);
  rep.p_at_1_csls = precision_at_1(rep.final_map, src, tgt, *gold.test, csls);
}

inline LinearMap initial_map(const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                             const Lexicon& annotated, const StrategyConfig& cfg) {
  if (cfg.identity_init) return LinearMap::identity(src.dim());
  return procrustes(src, tgt, annotated);
}

inline void check_inputs(const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                         const Lexicon& annotated) {
  if (src.dim() != tgt.dim())
    throw ShapeError("source and target dimensions differ (" + std::to_string(src.dim()) + " vs " +
                     std::to_string(tgt.dim()) + ")");
  if (annotated.empty()) throw ConfigError("annotated lexicon is empty");
  annotated.validate(src, tgt);
}

}  // namespace detail

/// Cyclic semi-supervision. Each epoch: Sup trains from the fed-in map on the
/// current lexicon, UnSup starts from its orthogonal projection guided by a
/// prior built from it, BLU rebuilds the extended lexicon from the UnSup map,
/// and the UnSup map is fed into the next epoch.
inline RunReport run_css(const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                         const Lexicon& annotated, const StrategyConfig& cfg,
                         const RunGold& gold = {}) {
  detail::check_inputs(src, tgt, annotated);
  RunReport rep;
  rep.strategy = cfg.strategy;
  LinearMap feed = detail::initial_map(src, tgt, annotated, cfg);
  Lexicon train_lex = annotated;

  for (int e = 0; e < cfg.epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    LinearMap current = feed;
    std::optional<LinearMap> q_sup;
    if (!cfg.ablate_sup) {
      SupervisedResult sup = train_supervised(src, tgt, train_lex, feed, detail::sup_for_epoch(cfg, e));
      rec.sup_loss = sup.mean_loss();
      q_sup = sup.map;
      current = sup.map;
      rep.chosen = "sup";
    }
    if (!cfg.ablate_unsup) {
      std::optional<LinearMap> prior;
      if (!cfg.ablate_pot && q_sup) prior = q_sup;
      UnsupervisedResult un = detail::run_unsup(src, tgt, current.projected(), prior,
                                                detail::unsup_for_epoch(cfg, e), e);
      rec.unsup_objective = un.mean_objective();
      current = un.map;
      rep.chosen = "unsup";
    }
    if (!cfg.ablate_blu) {
      BluResult blu = lexicon_update(src, tgt, current.projected(), annotated, detail::blu_options(cfg));
      rec.additional_size = blu.additional.size();
      rec.additional_precision = detail::lexicon_precision(blu.additional, gold);
      train_lex = extend_lexicon(annotated, blu.additional);
    }
    feed = current;
    rep.epochs.push_back(rec);
  }
  rep.final_map = feed;
  rep.extended_lexicon = train_lex;
  detail::finish_report(rep, src, tgt, cfg, gold);
  return rep;
}

/// Parallel semi-supervision. Sup and UnSup keep their own maps; within an
/// epoch each only sees the other's map from the previous epoch (through the
/// lexicon update and the POT prior respectively).
inline RunReport run_pss(const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                         const Lexicon& annotated, const StrategyConfig& cfg,
                         const RunGold& gold = {}) {
  detail::check_inputs(src, tgt, annotated);
  RunReport rep;
  rep.strategy = cfg.strategy;
  const LinearMap init = detail::initial_map(src, tgt, annotated, cfg);
  LinearMap q_sup = init;
  LinearMap q_unsup = init.projected();
  Lexicon train_lex = annotated;

  for (int e = 0; e < cfg.epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    if (!cfg.ablate_blu) {
      BluResult blu = lexicon_update(src, tgt, q_unsup, annotated, detail::blu_options(cfg));
      rec.additional_size = blu.additional.size();
      rec.additional_precision = detail::lexicon_precision(blu.additional, gold);
      train_lex = extend_lexicon(annotated, blu.additional);
    }
    std::optional<LinearMap> prior;
    if (!cfg.ablate_pot) prior = q_sup;

    const SupConfig sc = detail::sup_for_epoch(cfg, e);
    const UnsupConfig uc = detail::unsup_for_epoch(cfg, e);
    auto sup_job = [&] { return train_supervised(src, tgt, train_lex, q_sup, sc); };
    auto unsup_job = [&] { return detail::run_unsup(src, tgt, q_unsup, prior, uc, e); };
    SupervisedResult sup;
    UnsupervisedResult un;
    if (thread_count() > 1) {
      auto fut = std::async(std::launch::async, sup_job);
      un = unsup_job();
      sup = fut.get();
    } else {
      sup = sup_job();
      un = unsup_job();
    }
    rec.sup_loss = sup.mean_loss();
    rec.unsup_objective = un.mean_objective();
    q_sup = sup.map;
    q_unsup = un.map;
    rep.epochs.push_back(rec);
  }

  rep.extended_lexicon = train_lex;
  if (cfg.epochs == 0) {
    rep.final_map = init;
  } else {
    const SelectionResult sel = select_by_wasserstein(q_sup, q_unsup, src, tgt, cfg);
    rep.selection = sel;
    rep.final_map = sel.chosen == 0 ? q_sup : q_unsup;
    rep.chosen = sel.chosen == 0 ? "sup" : "unsup";
  }
  detail::finish_report(rep, src, tgt, cfg, gold);
  return rep;
}

/// Iterated supervised training on the annotated lexicon.
inline RunReport run_sup_only(const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                              const Lexicon& annotated, StrategyConfig cfg,
                              const RunGold& gold = {}) {
  cfg.ablate_pot = cfg.ablate_blu = cfg.ablate_unsup = true;
  cfg.ablate_sup = false;
  RunReport rep = run_css(src, tgt, annotated, cfg, gold);
  rep.strategy = Strategy::sup_only;
  return rep;
}

/// Unsupervised training (no prior), started from the same initialization.
inline RunReport run_unsup_only(const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                                const Lexicon& annotated, StrategyConfig cfg,
                                const RunGold& gold = {}) {
  cfg.ablate_pot = cfg.ablate_blu = cfg.ablate_sup = true;
  cfg.ablate_unsup = false;
  RunReport rep = run_css(src, tgt, annotated, cfg, gold);
  rep.strategy = Strategy::unsup_only;
  return rep;
}

inline RunReport run_strategy(const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                              const Lexicon& annotated, const StrategyConfig& cfg,
                              const RunGold& gold = {}) {
  cfg.validate();
  switch (cfg.strategy) {
    case Strategy::css: return run_css(src, tgt, annotated, cfg, gold);
    case Strategy::pss: return run_pss(src, tgt, annotated, cfg, gold);
    case Strategy::sup_only: return run_sup_only(src, tgt, annotated, cfg, gold);
    case Strategy::unsup_only: return run_unsup_only(src, tgt, annotated, cfg, gold);
  }
  throw ConfigError("unknown strategy");
}

}  // namespace otlex
