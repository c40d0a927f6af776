#pragma once

// JSON mirror of StrategyConfig. Field names follow the struct members;
// unknown keys are rejected so a typo cannot silently fall back to a default.

#include "otlex/framework.hpp"

#include <json.hpp>

#include <set>
#include <string>

namespace otlex::cli {

using json = nlohmann::ordered_json;

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline Strategy parse_strategy(const std::string& s) {
  if (s == "css") return Strategy::css;
  if (s == "pss") return Strategy::pss;
  if (s == "sup_only") return Strategy::sup_only;
  if (s == "unsup_only") return Strategy::unsup_only;
  throw ConfigError("unknown strategy '" + s + "' (css, pss, sup_only, unsup_only)");
}

inline RetrievalMethod parse_retrieval(const std::string& s) {
  if (s == "nn") return RetrievalMethod::nn;
  if (s == "csls") return RetrievalMethod::csls;
  throw ConfigError("unknown retrieval method '" + s + "' (nn, csls)");
}

inline DistanceMetric parse_metric(const std::string& s) {
  if (s == "cosine") return DistanceMetric::cosine;
  if (s == "sq_euclidean") return DistanceMetric::sq_euclidean;
  throw ConfigError("unknown distance metric '" + s + "' (cosine, sq_euclidean)");
}

inline const char* to_string(RetrievalMethod m) { return m == RetrievalMethod::nn ? "nn" : "csls"; }
inline const char* to_string(DistanceMetric m) {
  return m == DistanceMetric::cosine ? "cosine" : "sq_euclidean";
}

inline json to_json(const StrategyConfig& c) {
  json sinkhorn = {{"max_iters", c.unsup.sinkhorn.max_iters},
                   {"tol", c.unsup.sinkhorn.tol},
                   {"overrelax", c.unsup.sinkhorn.overrelax},
                   {"max_omega", c.unsup.sinkhorn.max_omega},
                   {"scaling_ratio", c.unsup.sinkhorn.scaling_ratio}};
  return json{
      {"strategy", otlex::to_string(c.strategy)},
      {"epochs", c.epochs},
      {"sup",
       {{"batch_size", c.sup.batch_size},
        {"learning_rate", c.sup.learning_rate},
        {"iters_per_epoch", c.sup.iters_per_epoch},
        {"k", c.sup.k},
        {"neighbor_pool", c.sup.neighbor_pool},
        {"spectral_clip", c.sup.spectral_clip}}},
      {"unsup",
       {{"batch_size", c.unsup.batch_size},
        {"learning_rate", c.unsup.learning_rate},
        {"iters_per_epoch", c.unsup.iters_per_epoch},
        {"epsilon", c.unsup.epsilon},
        {"varepsilon", c.unsup.varepsilon},
        {"temperature", c.unsup.temperature},
        {"k", c.unsup.k},
        {"sample_pool", c.unsup.sample_pool},
        {"sinkhorn", sinkhorn}}},
      {"blu",
       {{"k", c.blu.k}, {"cap", c.blu.cap}, {"pool", c.blu.pool}, {"metric", to_string(c.blu.metric)}}},
      {"ablate_pot", c.ablate_pot},
      {"ablate_blu", c.ablate_blu},
      {"ablate_sup", c.ablate_sup},
      {"ablate_unsup", c.ablate_unsup},
      {"identity_init", c.identity_init},
      {"eval_retrieval", to_string(c.eval_retrieval)},
      {"csls_k", c.csls_k},
      {"selection_batch", c.selection_batch},
      {"seed", c.seed}};
}

/// Overlays the keys present in `j` onto `c`.
inline void apply_json(const json& j, StrategyConfig& c) {
  using detail::read;
  detail::check_keys(j,
                     {"strategy", "epochs", "sup", "unsup", "blu", "ablate_pot", "ablate_blu",
                      "ablate_sup", "ablate_unsup", "identity_init", "eval_retrieval", "csls_k",
                      "selection_batch", "seed"},
                     "config");
  std::string s;
  if (j.contains("strategy")) {
    read(j, "strategy", s, "config");
    c.strategy = parse_strategy(s);
  }
  read(j, "epochs", c.epochs, "config");
  if (j.contains("sup")) {
    const json& u = j.at("sup");
    detail::check_keys(u, {"batch_size", "learning_rate", "iters_per_epoch", "k", "neighbor_pool",
                           "spectral_clip"},
                       "config.sup");
    read(u, "batch_size", c.sup.batch_size, "config.sup");
    read(u, "learning_rate", c.sup.learning_rate, "config.sup");
    read(u, "iters_per_epoch", c.sup.iters_per_epoch, "config.sup");
    read(u, "k", c.sup.k, "config.sup");
    read(u, "neighbor_pool", c.sup.neighbor_pool, "config.sup");
    read(u, "spectral_clip", c.sup.spectral_clip, "config.sup");
  }
  if (j.contains("unsup")) {
    const json& u = j.at("unsup");
    detail::check_keys(u, {"batch_size", "learning_rate", "iters_per_epoch", "epsilon", "varepsilon",
                           "temperature", "k", "sample_pool", "sinkhorn"},
                       "config.unsup");
    read(u, "batch_size", c.unsup.batch_size, "config.unsup");
    read(u, "learning_rate", c.unsup.learning_rate, "config.unsup");
    read(u, "iters_per_epoch", c.unsup.iters_per_epoch, "config.unsup");
    read(u, "epsilon", c.unsup.epsilon, "config.unsup");
    read(u, "varepsilon", c.unsup.varepsilon, "config.unsup");
    read(u, "temperature", c.unsup.temperature, "config.unsup");
    read(u, "k", c.unsup.k, "config.unsup");
    read(u, "sample_pool", c.unsup.sample_pool, "config.unsup");
    if (u.contains("sinkhorn")) {
      const json& sk = u.at("sinkhorn");
      detail::check_keys(sk, {"max_iters", "tol", "overrelax", "max_omega", "scaling_ratio"},
                        "config.unsup.sinkhorn");
      read(sk, "max_iters", c.unsup.sinkhorn.max_iters, "config.unsup.sinkhorn");
      read(sk, "tol", c.unsup.sinkhorn.tol, "config.unsup.sinkhorn");
      read(sk, "overrelax", c.unsup.sinkhorn.overrelax, "config.unsup.sinkhorn");
      read(sk, "max_omega", c.unsup.sinkhorn.max_omega, "config.unsup.sinkhorn");
      read(sk, "scaling_ratio", c.unsup.sinkhorn.scaling_ratio, "config.unsup.sinkhorn");
    }
  }
  if (j.contains("blu")) {
    const json& b = j.at("blu");
    detail::check_keys(b, {"k", "cap", "pool", "metric"}, "config.blu");
    read(b, "k", c.blu.k, "config.blu");
    read(b, "cap", c.blu.cap, "config.blu");
    read(b, "pool", c.blu.pool, "config.blu");
    if (b.contains("metric")) {
      read(b, "metric", s, "config.blu");
      c.blu.metric = parse_metric(s);
    }
  }
  read(j, "ablate_pot", c.ablate_pot, "config");
  read(j, "ablate_blu", c.ablate_blu, "config");
  read(j, "ablate_sup", c.ablate_sup, "config");
  read(j, "ablate_unsup", c.ablate_unsup, "config");
  read(j, "identity_init", c.identity_init, "config");
  if (j.contains("eval_retrieval")) {
    read(j, "eval_retrieval", s, "config");
    c.eval_retrieval = parse_retrieval(s);
  }
  read(j, "csls_k", c.csls_k, "config");
  read(j, "selection_batch", c.selection_batch, "config");
  read(j, "seed", c.seed, "config");
}

inline StrategyConfig config_from_json(const json& j) {
  StrategyConfig c;
  apply_json(j, c);
  return c;
}

/// One object per epoch followed by a summary object, one per line.
inline std::string report_jsonl(const RunReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  std::string out;
  for (const auto& e : r.epochs) {
    json rec = {{"type", "epoch"},
                {"epoch", e.epoch},
                {"sup_loss", opt(e.sup_loss)},
                {"unsup_objective", opt(e.unsup_objective)},
                {"additional_size", e.additional_size},
                {"additional_precision", opt(e.additional_precision)}};
    out += rec.dump() + "\n";
  }
  json sel = nullptr;
  if (r.selection)
    sel = {{"cost_sup", r.selection->cost_a},
           {"cost_unsup", r.selection->cost_b},
           {"chosen", r.selection->chosen == 0 ? "sup" : "unsup"}};
  json summary = {{"type", "summary"},
                  {"strategy", otlex::to_string(r.strategy)},
                  {"epochs", r.epochs.size()},
                  {"chosen", r.chosen},
                  {"selection", sel},
                  {"p_at_1_nn", opt(r.p_at_1_nn)},
                  {"p_at_1_csls", opt(r.p_at_1_csls)},
                  {"extended_lexicon_size", r.extended_lexicon.size()},
                  {"map_orthogonal", r.final_map.orthogonal()},
                  {"map_orthogonality_error", orthogonality_error(r.final_map.matrix())}};
  out += summary.dump() + "\n";
  return out;
}

}  // namespace otlex::cli
