#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>

namespace fanhmm {

/*!
 * Orthonormal basis of the sum-to-zero subspace of R^dim.
 *
 * q is dim x (dim-1) with q^T q = I and 1^T q = 0. It is the thin Q factor of
 * the contrast matrix [I_{dim-1}; -1^T], with each column's sign flipped so
 * that its first nonzero entry is positive.
 */
struct SumToZeroBasis {
  int dim = 0;
  Eigen::MatrixXd q;
};

/// Throws ErrorCode::InvalidDimension for dim < 2.
SumToZeroBasis build_basis(int dim);

/// Cached basis shared by coefficient sets. dim == 1 yields the empty 1 x 0
/// basis used by single-state models (no free parameters).
std::shared_ptr<const SumToZeroBasis> shared_basis(int dim);

/// gamma = Q * eta. Shape error unless eta has dim-1 rows.
Eigen::MatrixXd eta_to_gamma(const Eigen::MatrixXd& eta, const SumToZeroBasis& basis);

/// eta = Q^T * gamma. Rejects gamma whose column sums exceed 1e-8.
Eigen::MatrixXd gamma_to_eta(const Eigen::MatrixXd& gamma, const SumToZeroBasis& basis);

/// Max-subtracted softmax. Non-finite input raises ErrorCode::Numeric.
Eigen::VectorXd softmax(const Eigen::VectorXd& linear_predictor);

/// Sum-to-zero coefficient column whose softmax is p: log p - mean(log p).
Eigen::VectorXd gamma_from_target_probs(const Eigen::VectorXd& p);

/// Unchecked in-place softmax over n contiguous values, for inner loops.
/// Non-finite input propagates NaN instead of throwing.
inline void softmax_inplace(double* values, int n) noexcept {
  double max = values[0];
  for (int i = 1; i < n; ++i) max = values[i] > max ? values[i] : max;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    values[i] = std::exp(values[i] - max);
    sum += values[i];
  }
  const double inv = 1.0 / sum;
  for (int i = 0; i < n; ++i) values[i] *= inv;
}

}  // namespace fanhmm
