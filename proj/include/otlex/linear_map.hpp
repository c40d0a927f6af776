#pragma once

#include "otlex/common.hpp"

#include <Eigen/SVD>

namespace otlex {

/// Nearest orthogonal matrix in Frobenius norm: U Vᵀ from the SVD of `m`.
inline Matrix nearest_orthogonal(const Matrix& m) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(m), Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU() * svd.matrixV().transpose();
}

/// A d×d map applied to row vectors (x ↦ x·Q).
class LinearMap {
 public:
  static constexpr double kOrthogonalityTol = 1e-6;

  LinearMap() = default;

  explicit LinearMap(Matrix q, bool orthogonal = false)
      : q_(std::move(q)), orthogonal_(orthogonal) {
    if (q_.rows() != q_.cols() || q_.rows() == 0)
      throw ShapeError("linear map must be square and non-empty");
    if (!q_.allFinite()) throw NumericError("linear map has non-finite entries");
    if (orthogonal_ && orthogonality_error(q_) > kOrthogonalityTol)
      throw NumericError("linear map flagged orthogonal but ||QᵀQ - I||_max = " +
                         std::to_string(orthogonality_error(q_)));
  }

  static LinearMap identity(Index d) { return LinearMap(Matrix::Identity(d, d), true); }

  Index dim() const { return q_.rows(); }
  const Matrix& matrix() const { return q_; }
  bool orthogonal() const { return orthogonal_; }

  Matrix apply(const Matrix& rows) const { return rows * q_; }

  /// Orthogonal projection of this map (identity on already-orthogonal maps
  /// up to rounding).
  LinearMap projected() const {
    if (orthogonal_) return *this;
    return LinearMap(nearest_orthogonal(q_), true);
  }

  friend bool operator==(const LinearMap& a, const LinearMap& b) {
    return a.orthogonal_ == b.orthogonal_ && a.q_ == b.q_;
  }

 private:
  Matrix q_;
  bool orthogonal_ = false;
};

}  // namespace otlex
