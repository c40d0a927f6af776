#pragma once

// Planted synthetic problems: target row π(i) is source row i rotated by an
// orthogonal R plus Gaussian noise.

#include "otlex/common.hpp"
#include "otlex/embed_io.hpp"
#include "otlex/linear_map.hpp"

#include <Eigen/QR>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

namespace otlex {

struct SynthOptions {
  Index n = 1000;
  Index d = 16;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
  // Hard mode draws source rows from an anisotropic Gaussian whose per-axis
  // standard deviations decay geometrically from 1 to 1/condition, and adds
  // noise with the reversed spectrum (scaled by structured_noise) so the two
  // clouds no longer share their principal axes.
  bool hard = false;
  double condition = 8.0;
  double structured_noise = 0.5;
};

struct SyntheticInstance {
  EmbeddingSpace src;
  EmbeddingSpace tgt;
  LinearMap planted_map;
  std::vector<Index> permutation;  // source i ↦ target row permutation[i]
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

inline Matrix random_orthogonal(Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

inline SyntheticInstance generate(const SynthOptions& opt) {
  if (opt.d < 2 || opt.n < opt.d)
    throw ConfigError("synth: need n >= d >= 2 (n=" + std::to_string(opt.n) +
                      ", d=" + std::to_string(opt.d) + ")");
  if (opt.noise_sigma < 0.0) throw ConfigError("synth: negative noise");
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Vector scale = Vector::Ones(opt.d);
  if (opt.hard) {
    for (Index a = 0; a < opt.d; ++a)
      scale(a) = std::pow(opt.condition, -static_cast<double>(a) / static_cast<double>(opt.d - 1));
  }
  Matrix x(opt.n, opt.d);
  for (Index i = 0; i < opt.n; ++i)
    for (Index a = 0; a < opt.d; ++a) x(i, a) = scale(a) * normal(rng);
  normalize_rows(x);

  const Matrix r = random_orthogonal(opt.d, rng);
  std::vector<Index> perm(static_cast<std::size_t>(opt.n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);

  Matrix y(opt.n, opt.d);
  Matrix xs = x;
  if (opt.hard) {
    for (Index i = 0; i < opt.n; ++i)
      for (Index a = 0; a < opt.d; ++a)
        xs(i, a) += opt.structured_noise * scale(opt.d - 1 - a) * normal(rng);
  }
  const Matrix xr = xs * r;
  for (Index i = 0; i < opt.n; ++i) {
    auto row = y.row(perm[static_cast<std::size_t>(i)]);
    row = xr.row(i);
    for (Index a = 0; a < opt.d; ++a) row(a) += opt.noise_sigma * normal(rng);
  }
  normalize_rows(y);

  std::vector<std::string> sw, tw;
  sw.reserve(static_cast<std::size_t>(opt.n));
  tw.reserve(static_cast<std::size_t>(opt.n));
  for (Index i = 0; i < opt.n; ++i) {
    sw.push_back("s" + std::to_string(i));
    tw.push_back("t" + std::to_string(i));
  }
  return SyntheticInstance{EmbeddingSpace(std::move(sw), std::move(x), Normalization::unit),
                           EmbeddingSpace(std::move(tw), std::move(y), Normalization::unit),
                           LinearMap(r, true), std::move(perm), opt.noise_sigma, opt.seed};
}

inline SyntheticInstance generate(Index n, Index d, double noise_sigma, std::uint64_t seed) {
  return generate(SynthOptions{n, d, noise_sigma, seed});
}

/// `size` planted pairs (i, π(i)) sampled uniformly without replacement.
inline Lexicon gold_lexicon(const SyntheticInstance& inst, Index size, std::uint64_t seed) {
  const Index n = inst.src.size();
  if (size < 0 || size > n) throw RangeError("gold_lexicon: size out of range");
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  Lexicon lex;
  for (Index t = 0; t < size; ++t) {
    const Index i = idx[static_cast<std::size_t>(t)];
    lex.add(i, inst.permutation[static_cast<std::size_t>(i)]);
  }
  return lex;
}

/// Disjoint train/test lexicons: no source index appears in both.
inline std::pair<Lexicon, Lexicon> split_gold(const SyntheticInstance& inst, Index train_size,
                                              Index test_size, std::uint64_t seed) {
  if (train_size < 0 || test_size < 0 || train_size + test_size > inst.src.size())
    throw RangeError("split_gold: sizes exceed vocabulary");
  const Lexicon all = gold_lexicon(inst, train_size + test_size, seed);
  Lexicon train, test;
  for (std::size_t t = 0; t < all.size(); ++t) {
    if (static_cast<Index>(t) < train_size) train.add(all[t].src, all[t].tgt);
    else test.add(all[t].src, all[t].tgt);
  }
  return {std::move(train), std::move(test)};
}

/// The full planted correspondence in source order.
inline Lexicon planted_lexicon(const SyntheticInstance& inst) {
  Lexicon lex;
  for (Index i = 0; i < inst.src.size(); ++i) lex.add(i, inst.permutation[static_cast<std::size_t>(i)]);
  return lex;
}

}  // namespace otlex
