#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace otlex {

// Row-major so that row i is the contiguous embedding of word i.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Errors. Every error thrown by the toolkit derives from otlex::Error and
// carries a short class name that the CLI prints on failure.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define OTLEX_ERROR_CLASS(Name)                                      \
  class Name : public Error {                                        \
   public:                                                           \
    using Error::Error;                                              \
    const char* kind() const noexcept override { return #Name; }     \
  }

OTLEX_ERROR_CLASS(IoError);
OTLEX_ERROR_CLASS(FormatError);
OTLEX_ERROR_CLASS(ShapeError);
OTLEX_ERROR_CLASS(RangeError);
OTLEX_ERROR_CLASS(NumericError);
OTLEX_ERROR_CLASS(ConfigError);

#undef OTLEX_ERROR_CLASS

// ---------------------------------------------------------------------------
// Threading. Work is split into contiguous row blocks and every row is
// computed independently, so results do not depend on the thread count.

/// Number of worker threads taken from OTLEX_THREADS. 0 or unset means
/// sequential execution on the calling thread.
inline unsigned thread_count() {
  const char* env = std::getenv("OTLEX_THREADS");
  if (env == nullptr || *env == '\0') return 0;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || v <= 0) return 0;
  return static_cast<unsigned>(std::min<long>(v, 256));
}

template <typename Fn>
void parallel_rows(Index n, Fn&& fn) {
  const unsigned workers = thread_count();
  if (workers <= 1 || n < 64) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  const Index chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    const Index lo = w * chunk;
    const Index hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (Index i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Seeds. Independent streams (per module, per epoch) are derived from the
// run seed with splitmix64 so that switching a component off does not shift
// the random numbers seen by the others.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) + index);
}

namespace stream {
inline constexpr std::uint64_t kSupervised = 0x5355;
inline constexpr std::uint64_t kUnsupervised = 0x554E;
inline constexpr std::uint64_t kSelection = 0x5345;
}  // namespace stream

/// Max-abs deviation of QᵀQ from the identity.
inline double orthogonality_error(const Matrix& q) {
  const Matrix gram = q.transpose() * q;
  return (gram - Matrix::Identity(q.rows(), q.cols())).cwiseAbs().maxCoeff();
}

}  // namespace otlex
