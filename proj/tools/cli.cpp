#include "cli.hpp"
#include "config_json.hpp"

#include "otlex/framework.hpp"
#include "otlex/map_io.hpp"
#include "otlex/synth.hpp"

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;

namespace otlex::cli {

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw IoError("sha256: digest initialisation failed");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

EmbeddingLoadOptions load_opts(std::size_t max_vocab) {
  EmbeddingLoadOptions o;
  if (max_vocab > 0) o.max_vocab = max_vocab;
  return o;
}

Lexicon read_lexicon(const std::string& path, const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                     std::ostream& err) {
  LexiconLoadStats st;
  Lexicon lex = load_lexicon(path, src, tgt, &st);
  if (st.skipped_oov > 0)
    err << "note: " << path << ": " << st.skipped_oov << " of " << st.lines
        << " pairs skipped (out of vocabulary)\n";
  return lex;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + p.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + p.string());
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string strategy, src, tgt, lex, out, config, test, gold, manifest;
  std::uint64_t seed = 0;
  int epochs = 0;
  std::size_t max_vocab = 0;
  bool ablate_pot = false, ablate_blu = false, ablate_sup = false, ablate_unsup = false;
  bool identity_init = false, save_lexicon = false;
};

struct TrainInputs {
  std::string src, tgt, lex, test, gold;
  std::size_t max_vocab = 0;
};

int do_train(const TrainArgs& a, const CLI::App& cmd, std::ostream& out, std::ostream& err) {
  const auto t_start = Clock::now();
  StrategyConfig cfg;
  TrainInputs in;
  bool save_lex = a.save_lexicon;

  if (!a.manifest.empty()) {
    for (const char* opt : {"--src", "--tgt", "--lex", "--config", "--test", "--gold"})
      if (cmd.count(opt) > 0)
        throw ConfigError(std::string("--from-manifest cannot be combined with ") + opt);
    const json m = read_json_file(a.manifest);
    try {
      cfg = config_from_json(m.at("config"));
      const json& inputs = m.at("inputs");
      auto path_of = [&](const char* key) {
        if (!inputs.contains(key)) return std::string();
        const std::string p = inputs.at(key).at("path").get<std::string>();
        const std::string want = inputs.at(key).at("sha256").get<std::string>();
        if (sha256_file(p) != want) throw IoError("input " + p + " does not match manifest digest");
        return p;
      };
      in.src = path_of("src");
      in.tgt = path_of("tgt");
      in.lex = path_of("lex");
      in.test = path_of("test");
      in.gold = path_of("gold");
      in.max_vocab = m.at("options").at("max_vocab").get<std::size_t>();
      save_lex = m.at("options").at("save_lexicon").get<bool>();
    } catch (const json::exception& e) {
      throw FormatError(a.manifest + ": " + e.what());
    }
  } else {
    if (a.src.empty() || a.tgt.empty() || a.lex.empty())
      throw ConfigError("train needs --src, --tgt and --lex (or --from-manifest)");
    if (!a.config.empty()) apply_json(read_json_file(a.config), cfg);
    if (cmd.count("--strategy") > 0) cfg.strategy = parse_strategy(a.strategy);
    if (cmd.count("--seed") > 0) cfg.seed = a.seed;
    if (cmd.count("--epochs") > 0) cfg.epochs = a.epochs;
    if (a.ablate_pot) cfg.ablate_pot = true;
    if (a.ablate_blu) cfg.ablate_blu = true;
    if (a.ablate_sup) cfg.ablate_sup = true;
    if (a.ablate_unsup) cfg.ablate_unsup = true;
    if (a.identity_init) cfg.identity_init = true;
    in = TrainInputs{fs::absolute(a.src).string(), fs::absolute(a.tgt).string(),
                     fs::absolute(a.lex).string(),
                     a.test.empty() ? "" : fs::absolute(a.test).string(),
                     a.gold.empty() ? "" : fs::absolute(a.gold).string(), a.max_vocab};
  }
  cfg.validate();

  const auto t_load = Clock::now();
  const EmbeddingSpace src = load_embeddings(in.src, load_opts(in.max_vocab));
  const EmbeddingSpace tgt = load_embeddings(in.tgt, load_opts(in.max_vocab));
  const Lexicon annotated = read_lexicon(in.lex, src, tgt, err);
  std::optional<Lexicon> test, gold;
  if (!in.test.empty()) test = read_lexicon(in.test, src, tgt, err);
  if (!in.gold.empty()) gold = read_lexicon(in.gold, src, tgt, err);
  const double load_s = seconds_since(t_load);

  const auto t_train = Clock::now();
  const RunGold rg{gold ? &*gold : nullptr, test ? &*test : nullptr};
  const RunReport rep = run_strategy(src, tgt, annotated, cfg, rg);
  const double train_s = seconds_since(t_train);

  const auto t_write = Clock::now();
  const fs::path dir(a.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  save_map(rep.final_map, (dir / "map.otlx").string());
  write_text(dir / "report.jsonl", report_jsonl(rep));
  if (save_lex) save_lexicon(rep.extended_lexicon, src, tgt, (dir / "lexicon.txt").string(), true);
  const double write_s = seconds_since(t_write);

  json inputs = json::object();
  auto add_input = [&](const char* key, const std::string& p) {
    if (!p.empty()) inputs[key] = {{"path", p}, {"sha256", sha256_file(p)}};
  };
  add_input("src", in.src);
  add_input("tgt", in.tgt);
  add_input("lex", in.lex);
  add_input("test", in.test);
  add_input("gold", in.gold);
  const json manifest = {
      {"toolkit", "otlex"},
      {"version", OTLEX_VERSION},
      {"command", "train"},
      {"seed", cfg.seed},
      {"config", to_json(cfg)},
      {"inputs", inputs},
      {"options", {{"max_vocab", in.max_vocab}, {"save_lexicon", save_lex}}},
      {"threads", thread_count()},
      {"wall_clock_seconds",
       {{"load", load_s}, {"train", train_s}, {"write", write_s}, {"total", seconds_since(t_start)}}}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  out << "strategy " << otlex::to_string(rep.strategy) << ", " << rep.epochs.size()
      << " epochs, final map from " << rep.chosen << "\n";
  if (rep.p_at_1_nn)
    out << "P@1 nn " << *rep.p_at_1_nn << "  csls " << *rep.p_at_1_csls << "\n";
  out << "wrote " << (dir / "map.otlx").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string map, src, tgt, test, method = "both";
  Index csls_k = 10;
  std::size_t max_vocab = 0;
};

int do_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const LinearMap q = load_map(a.map);
  const EmbeddingSpace src = load_embeddings(a.src, load_opts(a.max_vocab));
  const EmbeddingSpace tgt = load_embeddings(a.tgt, load_opts(a.max_vocab));
  if (q.dim() != src.dim() || q.dim() != tgt.dim())
    throw ShapeError("map dimension " + std::to_string(q.dim()) + " does not match embeddings (" +
                     std::to_string(src.dim()) + ", " + std::to_string(tgt.dim()) + ")");
  const Lexicon test = read_lexicon(a.test, src, tgt, err);
  std::vector<RetrievalMethod> methods;
  if (a.method == "both") methods = {RetrievalMethod::nn, RetrievalMethod::csls};
  else methods = {parse_retrieval(a.method)};
  for (RetrievalMethod m : methods) {
    RetrievalOptions opt{m, a.csls_k};
    json line = {{"method", to_string(m)},
                 {"p_at_1", precision_at_k(q, src, tgt, test, 1, opt)},
                 {"p_at_5", precision_at_k(q, src, tgt, test, 5, opt)},
                 {"p_at_10", precision_at_k(q, src, tgt, test, 10, opt)}};
    out << line.dump() << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct InduceArgs {
  std::string map, src, tgt, out, lex, metric = "cosine";
  std::size_t cap = 10000;
  Index k = 10, pool = 20000;
  std::size_t max_vocab = 0;
};

int do_induce(const InduceArgs& a, std::ostream& out, std::ostream& err) {
  const LinearMap q = load_map(a.map);
  const EmbeddingSpace src = load_embeddings(a.src, load_opts(a.max_vocab));
  const EmbeddingSpace tgt = load_embeddings(a.tgt, load_opts(a.max_vocab));
  if (q.dim() != src.dim() || q.dim() != tgt.dim())
    throw ShapeError("map dimension " + std::to_string(q.dim()) + " does not match embeddings");
  Lexicon annotated;
  if (!a.lex.empty()) annotated = read_lexicon(a.lex, src, tgt, err);
  const BluOptions opt{a.k, a.cap, a.pool, parse_metric(a.metric)};
  const BluResult res = lexicon_update(src, tgt, q, annotated, opt);
  if (res.used_pseudo_inverse) err << "note: map is not orthogonal; backward pass used the pseudo-inverse\n";

  std::string text;
  std::size_t written = 0;
  for (const auto& sp : res.scored) {
    if (written >= a.cap) break;
    if (annotated.contains(sp.src, sp.tgt)) continue;
    text += src.word(sp.src) + '\t' + tgt.word(sp.tgt) + '\t' + otlex::detail::format_double(sp.cs_total) + '\n';
    ++written;
  }
  write_text(a.out, text);
  out << written << " pairs (" << res.scored.size() << " mutual candidates) written to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  Index n = 1000, d = 16, train = 50, test = 200;
  double sigma = 0.01, condition = 8.0, structured = 0.5;
  std::uint64_t seed = 0;
  bool hard = false;
};

int do_synth(const SynthArgs& a, std::ostream& out) {
  SynthOptions so;
  so.n = a.n;
  so.d = a.d;
  so.noise_sigma = a.sigma;
  so.seed = a.seed;
  so.hard = a.hard;
  so.condition = a.condition;
  so.structured_noise = a.structured;
  const SyntheticInstance inst = generate(so);
  const auto [train, test] = split_gold(inst, a.train, a.test, derive_seed(a.seed, 0x5eed));
  const fs::path dir(a.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  save_embeddings(inst.src, (dir / "src.vec").string());
  save_embeddings(inst.tgt, (dir / "tgt.vec").string());
  save_lexicon(train, inst.src, inst.tgt, (dir / "train.txt").string());
  save_lexicon(test, inst.src, inst.tgt, (dir / "test.txt").string());
  save_lexicon(planted_lexicon(inst), inst.src, inst.tgt, (dir / "gold.txt").string());
  save_map(inst.planted_map, (dir / "planted.otlx").string());
  out << "synthetic instance n=" << a.n << " d=" << a.d << " written to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"otlex: semi-supervised bilingual lexicon induction"};
  app.name("otlex");
  app.require_subcommand(1);
  app.footer(
      "Environment: OTLEX_THREADS caps internal parallelism (unset or 0 = sequential).\n"
      "Defaults: 5 epochs; sup batch 400, lr 1, 2000 iters, k 10; unsup batch 8000, lr 500,\n"
      "50 iters, epsilon 0.1, varepsilon 1, temperature 0.1; BLU K 10, cap 10000, pool 20000.");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Run a training strategy and write map, report and manifest");
  train->add_option("--strategy", ta.strategy, "css | pss | sup_only | unsup_only (default css)");
  train->add_option("--src", ta.src, "Source embeddings (word2vec text)");
  train->add_option("--tgt", ta.tgt, "Target embeddings (word2vec text)");
  train->add_option("--lex", ta.lex, "Annotated lexicon, one 'src tgt' pair per line");
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--config", ta.config, "JSON config mirroring StrategyConfig field names");
  train->add_option("--seed", ta.seed, "Random seed (default 0)");
  train->add_option("--epochs", ta.epochs, "Number of epochs (default 5)");
  train->add_option("--test", ta.test, "Held-out lexicon; P@1 is added to the report");
  train->add_option("--gold", ta.gold, "Reference lexicon for additional-lexicon precision");
  train->add_option("--max-vocab", ta.max_vocab, "Keep only the first N words of each space (0 = all)");
  train->add_option("--from-manifest", ta.manifest, "Re-run with the config and inputs of a manifest");
  train->add_flag("--ablate-pot", ta.ablate_pot, "Use plain entropic OT instead of prior OT");
  train->add_flag("--ablate-blu", ta.ablate_blu, "Disable the bi-directional lexicon update");
  train->add_flag("--ablate-sup", ta.ablate_sup, "css only: skip the supervised aligner");
  train->add_flag("--ablate-unsup", ta.ablate_unsup, "css only: skip the unsupervised aligner");
  train->add_flag("--identity-init", ta.identity_init, "Start from the identity instead of Procrustes");
  train->add_flag("--save-lexicon", ta.save_lexicon, "Also write the final extended lexicon");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Word translation precision of a map");
  eval->add_option("--map", ea.map, "Map file")->required();
  eval->add_option("--src", ea.src, "Source embeddings")->required();
  eval->add_option("--tgt", ea.tgt, "Target embeddings")->required();
  eval->add_option("--test", ea.test, "Test lexicon")->required();
  eval->add_option("--method", ea.method, "nn | csls | both")
      ->check(CLI::IsMember({"nn", "csls", "both"}))
      ->capture_default_str();
  eval->add_option("--csls-k", ea.csls_k, "CSLS neighbourhood size")->capture_default_str();
  eval->add_option("--max-vocab", ea.max_vocab, "Keep only the first N words (0 = all)");

  InduceArgs ia;
  auto* induce = app.add_subcommand("induce", "Score mutual nearest neighbours and write the top pairs");
  induce->add_option("--map", ia.map, "Map file")->required();
  induce->add_option("--src", ia.src, "Source embeddings")->required();
  induce->add_option("--tgt", ia.tgt, "Target embeddings")->required();
  induce->add_option("--out", ia.out, "Output file (src<TAB>tgt<TAB>score)")->required();
  induce->add_option("--lex", ia.lex, "Annotated pairs to exclude from the output");
  induce->add_option("--cap", ia.cap, "Maximum number of pairs")->capture_default_str();
  induce->add_option("--k", ia.k, "Competitors per side in the credit score")->capture_default_str();
  induce->add_option("--pool", ia.pool, "Most frequent words considered")->capture_default_str();
  induce->add_option("--metric", ia.metric, "cosine | sq_euclidean")
      ->check(CLI::IsMember({"cosine", "sq_euclidean"}))
      ->capture_default_str();
  induce->add_option("--max-vocab", ia.max_vocab, "Keep only the first N words (0 = all)");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a planted-rotation synthetic instance");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--n", sa.n, "Words per space")->capture_default_str();
  synth->add_option("--d", sa.d, "Dimension")->capture_default_str();
  synth->add_option("--sigma", sa.sigma, "Isotropic noise")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Seed")->capture_default_str();
  synth->add_option("--train", sa.train, "Annotated pairs")->capture_default_str();
  synth->add_option("--test", sa.test, "Held-out pairs")->capture_default_str();
  synth->add_flag("--hard", sa.hard, "Anisotropic source with reversed-spectrum noise");
  synth->add_option("--condition", sa.condition, "Hard mode axis scale ratio")->capture_default_str();
  synth->add_option("--structured-noise", sa.structured, "Hard mode noise scale")->capture_default_str();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train) return do_train(ta, *train, out, err);
    if (*eval) return do_eval(ea, out, err);
    if (*induce) return do_induce(ia, out, err);
    if (*synth) return do_synth(sa, out);
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace otlex::cli
