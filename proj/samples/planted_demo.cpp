// Recovers a planted rotation from 50 annotated pairs with each strategy and
// prints the per-epoch lexicon-update statistics.
//
//   planted_demo [hard]

#include "otlex/framework.hpp"
#include "otlex/synth.hpp"

#include <cstdio>
#include <string>

int main(int argc, char** argv) {
  using namespace otlex;
  SynthOptions so;
  so.hard = argc > 1 && std::string(argv[1]) == "hard";
  const SyntheticInstance inst = generate(so);
  const auto [train, test] = split_gold(inst, 50, 200, 1);
  const Lexicon gold = planted_lexicon(inst);

  StrategyConfig cfg;
  cfg.sup.iters_per_epoch = 200;
  cfg.sup.batch_size = 128;
  cfg.unsup.iters_per_epoch = 20;
  cfg.unsup.batch_size = 512;

  std::printf("%s instance: n=%ld d=%ld\n", so.hard ? "hard" : "isotropic",
              static_cast<long>(so.n), static_cast<long>(so.d));
  for (Strategy s : {Strategy::sup_only, Strategy::unsup_only, Strategy::css, Strategy::pss}) {
    cfg.strategy = s;
    const RunReport rep = run_strategy(inst.src, inst.tgt, train, cfg, RunGold{&gold, &test});
    std::printf("%-10s P@1 nn %.3f csls %.3f (final map: %s)\n", to_string(s), *rep.p_at_1_nn,
                *rep.p_at_1_csls, rep.chosen.c_str());
    for (const auto& e : rep.epochs) {
      if (e.additional_size == 0) continue;
      std::printf("    epoch %d: %zu induced pairs, precision %.3f\n", e.epoch, e.additional_size,
                  e.additional_precision.value_or(0.0));
    }
  }
  return 0;
}
