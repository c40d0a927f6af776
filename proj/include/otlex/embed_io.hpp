#pragma once

// Embedding and lexicon ingestion.
//
// Embedding files use the word2vec/fastText text layout:
//
//   <count> <dim>
//   <token> v1 v2 ... v_dim
//
// Lexicon files hold one "<src_token> <tgt_token>" pair per line.

#include "otlex/common.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace otlex {

enum class Normalization { raw, unit };

class EmbeddingSpace {
 public:
  EmbeddingSpace() = default;

  EmbeddingSpace(std::vector<std::string> words, Matrix matrix,
                 Normalization normalized = Normalization::raw)
      : words_(std::move(words)), matrix_(std::move(matrix)), normalized_(normalized) {
    if (static_cast<Index>(words_.size()) != matrix_.rows())
      throw ShapeError("embedding space: " + std::to_string(words_.size()) +
                       " words but " + std::to_string(matrix_.rows()) + " rows");
    if (matrix_.cols() <= 0) throw ShapeError("embedding space: dimension must be positive");
    index_.reserve(words_.size());
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], static_cast<Index>(i)).second)
        throw FormatError("embedding space: duplicate token '" + words_[i] + "'");
    }
    if (normalized_ == Normalization::unit) {
      for (Index i = 0; i < matrix_.rows(); ++i) {
        if (std::abs(matrix_.row(i).norm() - 1.0) > 1e-6)
          throw NumericError("embedding space marked unit but row " + std::to_string(i) +
                             " has norm " + std::to_string(matrix_.row(i).norm()));
      }
    }
  }

  Index size() const { return matrix_.rows(); }
  Index dim() const { return matrix_.cols(); }
  const Matrix& matrix() const { return matrix_; }
  const std::vector<std::string>& words() const { return words_; }
  const std::string& word(Index i) const { return words_.at(static_cast<std::size_t>(i)); }
  Normalization normalized() const { return normalized_; }

  std::optional<Index> find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, Index> index_;
  Matrix matrix_;
  Normalization normalized_ = Normalization::raw;
};

/// Scales every row to unit Euclidean length. Zero rows are rejected.
inline void normalize_rows(Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!(n > 0.0) || !std::isfinite(n))
      throw NumericError("cannot unit-normalize row " + std::to_string(i) + " (norm " +
                         std::to_string(n) + ")");
    m.row(i) /= n;
  }
}

/// Returns a unit-normalized copy; mean-centering first when `center` is set.
inline EmbeddingSpace normalized_copy(const EmbeddingSpace& space, bool center = false) {
  Matrix m = space.matrix();
  if (center) m.rowwise() -= m.colwise().mean();
  normalize_rows(m);
  return EmbeddingSpace(space.words(), std::move(m), Normalization::unit);
}

// ---------------------------------------------------------------------------

struct EmbeddingLoadOptions {
  std::size_t max_vocab = std::numeric_limits<std::size_t>::max();
  bool normalize = true;
  bool center = false;
};

struct EmbeddingLoadStats {
  std::size_t duplicates_skipped = 0;
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

inline EmbeddingSpace load_embeddings(const std::string& path,
                                      const EmbeddingLoadOptions& opts = {},
                                      EmbeddingLoadStats* stats = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty embedding file '" + path + "'");
  const auto header = detail::split_ws(line);
  std::size_t count = 0;
  long long dim = 0;
  if (header.size() != 2 || !detail::parse_number(header[0], count) ||
      !detail::parse_number(header[1], dim) || dim <= 0)
    throw FormatError("malformed header in '" + path + "': expected \"<count> <dim>\"");

  const std::size_t wanted = std::min(count, opts.max_vocab);
  std::vector<std::string> words;
  std::vector<double> values;
  words.reserve(wanted);
  values.reserve(wanted * static_cast<std::size_t>(dim));
  std::unordered_map<std::string, int> seen;
  EmbeddingLoadStats local;

  std::size_t line_no = 1;
  std::size_t rows_read = 0;
  while (words.size() < wanted && rows_read < count && std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    ++rows_read;
    const std::size_t space = line.find(' ');
    if (space == std::string::npos || space == 0)
      throw FormatError(path + ":" + std::to_string(line_no) + ": missing token or values");
    std::string token = line.substr(0, space);
    const auto fields = detail::split_ws(std::string_view(line).substr(space + 1));
    if (static_cast<long long>(fields.size()) != dim)
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(dim) + " values, found " + std::to_string(fields.size()));
    if (!seen.emplace(token, 0).second) {
      ++local.duplicates_skipped;
      continue;
    }
    for (const auto& f : fields) {
      double v = 0.0;
      if (!detail::parse_number(f, v) || !std::isfinite(v))
        throw FormatError(path + ":" + std::to_string(line_no) + ": bad number '" +
                          std::string(f) + "'");
      values.push_back(v);
    }
    words.push_back(std::move(token));
  }
  if (words.empty() && wanted > 0) throw FormatError("no embeddings in '" + path + "'");
  if (words.size() < wanted && rows_read < count)
    throw FormatError("'" + path + "' is truncated: header declares " + std::to_string(count) +
                      " rows");

  Matrix m(static_cast<Index>(words.size()), static_cast<Index>(dim));
  std::copy(values.begin(), values.end(), m.data());
  if (stats) *stats = local;

  if (opts.center) m.rowwise() -= m.colwise().mean();
  if (opts.normalize) {
    normalize_rows(m);
    return EmbeddingSpace(std::move(words), std::move(m), Normalization::unit);
  }
  return EmbeddingSpace(std::move(words), std::move(m), Normalization::raw);
}

/// Writes a space in the text format read by load_embeddings. Values use the
/// shortest representation that round-trips exactly.
inline void save_embeddings(const EmbeddingSpace& space, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write embedding file '" + path + "'");
  out << space.size() << ' ' << space.dim() << '\n';
  for (Index i = 0; i < space.size(); ++i) {
    out << space.word(i);
    for (Index j = 0; j < space.dim(); ++j) out << ' ' << detail::format_double(space.matrix()(i, j));
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------

enum class PairOrigin { annotated, additional };

struct LexPair {
  Index src = 0;
  Index tgt = 0;
  PairOrigin origin = PairOrigin::annotated;

  friend bool operator==(const LexPair& a, const LexPair& b) {
    return a.src == b.src && a.tgt == b.tgt;
  }
};

/// Ordered, duplicate-free list of translation pairs. One source index may map
/// to several targets.
class Lexicon {
 public:
  /// Appends (src, tgt) unless already present. Returns whether it was added.
  bool add(Index src, Index tgt, PairOrigin origin = PairOrigin::annotated) {
    if (!keys_.emplace(src, tgt).second) return false;
    pairs_.push_back({src, tgt, origin});
    return true;
  }

  bool contains(Index src, Index tgt) const { return keys_.count({src, tgt}) != 0; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  const std::vector<LexPair>& pairs() const { return pairs_; }
  const LexPair& operator[](std::size_t i) const { return pairs_[i]; }

  std::size_t count(PairOrigin origin) const {
    return static_cast<std::size_t>(std::count_if(
        pairs_.begin(), pairs_.end(), [&](const LexPair& p) { return p.origin == origin; }));
  }

  void validate(const EmbeddingSpace& src, const EmbeddingSpace& tgt) const {
    for (const auto& p : pairs_) {
      if (p.src < 0 || p.src >= src.size() || p.tgt < 0 || p.tgt >= tgt.size())
        throw RangeError("lexicon pair (" + std::to_string(p.src) + "," + std::to_string(p.tgt) +
                         ") out of vocabulary bounds");
    }
  }

 private:
  std::vector<LexPair> pairs_;
  std::set<std::pair<Index, Index>> keys_;
};

struct LexiconLoadStats {
  std::size_t lines = 0;
  std::size_t skipped_oov = 0;
  std::size_t duplicates = 0;
};

inline Lexicon load_lexicon(const std::string& path, const EmbeddingSpace& src,
                            const EmbeddingSpace& tgt, LexiconLoadStats* stats = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open lexicon file '" + path + "'");
  Lexicon lex;
  LexiconLoadStats local;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_ws(line);
    if (fields.empty()) continue;
    if (fields.size() < 2)
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected two tokens");
    ++local.lines;
    const auto s = src.find(fields[0]);
    const auto t = tgt.find(fields[1]);
    if (!s || !t) {
      ++local.skipped_oov;
      continue;
    }
    if (!lex.add(*s, *t)) ++local.duplicates;
  }
  if (stats) *stats = local;
  return lex;
}

/// One "src tgt" line per pair. With `with_origin` a third column records
/// whether the pair was annotated or added by lexicon induction.
inline void save_lexicon(const Lexicon& lex, const EmbeddingSpace& src, const EmbeddingSpace& tgt,
                         const std::string& path, bool with_origin = false) {
  lex.validate(src, tgt);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write lexicon file '" + path + "'");
  for (const auto& p : lex.pairs()) {
    out << src.word(p.src) << ' ' << tgt.word(p.tgt);
    if (with_origin)
      out << '\t' << (p.origin == PairOrigin::annotated ? "annotated" : "additional");
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

enum class Side { source, target };

/// Stacks the embeddings of each pair's `side` index: row r belongs to pair r.
inline Matrix subset_rows(const EmbeddingSpace& space, const Lexicon& lex, Side side) {
  Matrix out(static_cast<Index>(lex.size()), space.dim());
  for (std::size_t r = 0; r < lex.size(); ++r) {
    const Index idx = side == Side::source ? lex[r].src : lex[r].tgt;
    if (idx < 0 || idx >= space.size()) throw RangeError("subset_rows: index out of bounds");
    out.row(static_cast<Index>(r)) = space.matrix().row(idx);
  }
  return out;
}

}  // namespace otlex
