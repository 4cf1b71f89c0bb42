#include "core/geometry.hpp"

#include <array>
#include <cmath>
#include <mutex>
#include <string>

#include "core/error.hpp"

namespace fanhmm {

SumToZeroBasis build_basis(int dim) {
  require(dim >= 2, ErrorCode::InvalidDimension,
          "basis dimension must be at least 2, got " + std::to_string(dim));

  Eigen::MatrixXd contrast = Eigen::MatrixXd::Zero(dim, dim - 1);
  contrast.topRows(dim - 1).setIdentity();
  contrast.row(dim - 1).setConstant(-1.0);

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(contrast);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, dim - 1);

  for (int j = 0; j < q.cols(); ++j) {
    for (int i = 0; i < dim; ++i) {
      if (std::abs(q(i, j)) > 1e-12) {
        if (q(i, j) < 0.0) q.col(j) *= -1.0;
        break;
      }
    }
  }
  return SumToZeroBasis{dim, std::move(q)};
}

std::shared_ptr<const SumToZeroBasis> shared_basis(int dim) {
  require(dim >= 1, ErrorCode::InvalidDimension,
          "basis dimension must be positive, got " + std::to_string(dim));
  static std::mutex mutex;
  static std::array<std::shared_ptr<const SumToZeroBasis>, 64> cache;
  if (dim == 1) {
    static const auto trivial =
        std::make_shared<const SumToZeroBasis>(SumToZeroBasis{1, Eigen::MatrixXd(1, 0)});
    return trivial;
  }
  if (dim >= static_cast<int>(cache.size()))
    return std::make_shared<const SumToZeroBasis>(build_basis(dim));
  std::lock_guard<std::mutex> lock(mutex);
  if (!cache[dim]) cache[dim] = std::make_shared<const SumToZeroBasis>(build_basis(dim));
  return cache[dim];
}

Eigen::MatrixXd eta_to_gamma(const Eigen::MatrixXd& eta, const SumToZeroBasis& basis) {
  require(eta.rows() == basis.q.cols(), ErrorCode::Shape,
          "working matrix has " + std::to_string(eta.rows()) + " rows, basis expects " +
              std::to_string(basis.q.cols()));
  return basis.q * eta;
}

Eigen::MatrixXd gamma_to_eta(const Eigen::MatrixXd& gamma, const SumToZeroBasis& basis) {
  require(gamma.rows() == basis.dim, ErrorCode::Shape,
          "coefficient matrix has " + std::to_string(gamma.rows()) + " rows, basis expects " +
              std::to_string(basis.dim));
  for (int j = 0; j < gamma.cols(); ++j) {
    const double sum = gamma.col(j).sum();
    require(std::abs(sum) <= 1e-8, ErrorCode::InvalidGamma,
            "column " + std::to_string(j) + " of gamma sums to " + std::to_string(sum));
  }
  return basis.q.transpose() * gamma;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& linear_predictor) {
  require(linear_predictor.size() > 0, ErrorCode::Shape, "softmax of an empty vector");
  require(linear_predictor.allFinite(), ErrorCode::Numeric, "softmax input is not finite");
  Eigen::VectorXd out = linear_predictor;
  softmax_inplace(out.data(), static_cast<int>(out.size()));
  return out;
}

Eigen::VectorXd gamma_from_target_probs(const Eigen::VectorXd& p) {
  require(p.size() >= 1, ErrorCode::Shape, "empty probability vector");
  for (int i = 0; i < p.size(); ++i) {
    require(p[i] > 0.0 && std::isfinite(p[i]), ErrorCode::DegenerateProbability,
            "target probability " + std::to_string(i) + " is not strictly positive");
  }
  require(std::abs(p.sum() - 1.0) < 1e-9, ErrorCode::DegenerateProbability,
          "target probabilities do not sum to one");
  Eigen::VectorXd logp = p.array().log();
  return (logp.array() - logp.mean()).matrix();
}

}  // namespace fanhmm
