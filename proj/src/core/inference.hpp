#pragma once

#include <Eigen/Dense>
#include <vector>

#include "core/model.hpp"

namespace fanhmm {

/*!
 * Forward pass of one sequence.
 *
 * D[t](s, m) = p(z_t = s, y_t = m | observed responses before t), so every
 * D[t] sums to one. alpha_norm.row(t) is p(z_t | observed responses up to t)
 * and loglik is the sum of scaling_logs.
 */
struct ForwardResult {
  double loglik = 0.0;
  RowMatrix alpha_norm;
  std::vector<Eigen::MatrixXd> D;
  std::vector<double> scaling_logs;
};

/*!
 * Scaled backward quantities, one S x M matrix per time point. Entry (s, m)
 * is p(future observed responses | z_t = s, y_t = m) divided by the product
 * of the forward normalizers after t. At an observed time only column y_t is
 * meaningful. The posterior p(z_t, y_t | all observed) is the elementwise
 * product of the normalized forward filter and beta[t].
 */
struct BackwardResult {
  std::vector<Eigen::MatrixXd> beta;

  /// p(future | z_t = s) under the same scaling, for an observed y_t.
  Eigen::VectorXd state_beta(int t, int y_t) const { return beta[t].col(y_t); }
};

/// Posterior transition weights p(z_{t-1} = s, z_t = r, y_{t-1} = lag | y).
/// lag is kNoLag when the transition does not depend on y_{t-1}.
struct TransitionCount {
  int time = 0;
  int lag = kNoLag;
  Eigen::MatrixXd weight;  // S x S
};

/// Posterior emission weights p(z_t = s, y_t = m, y_{t-1} = lag | y). For an
/// observed y_t only column y_t is nonzero.
struct EmissionCount {
  int time = 0;
  int lag = kNoLag;
  Eigen::MatrixXd weight;  // S x M
};

struct ExpectedCounts {
  Eigen::VectorXd initial;
  std::vector<TransitionCount> transitions;
  std::vector<EmissionCount> emissions;
};

/// Runs the forward recursion up to and including last_time (default: the
/// whole sequence). Throws ErrorCode::Validation when the first response is
/// missing under the y->y edge.
ForwardResult forward(const ModelSpec& spec, const CoefficientSet& coeffs,
                      const SequenceDesign& sequence, int last_time = -1);

BackwardResult backward(const ModelSpec& spec, const CoefficientSet& coeffs,
                        const SequenceDesign& sequence);

ExpectedCounts estep(const ModelSpec& spec, const CoefficientSet& coeffs,
                     const SequenceDesign& sequence);

struct DatasetLoglik {
  double penalized = 0.0;
  double unpenalized = 0.0;
  std::vector<double> per_sequence;
};

/// sum_i loglik_i - lambda/2 * ||eta||^2, reduced in sequence order.
DatasetLoglik loglik_dataset(const ModelSpec& spec, const CoefficientSet& coeffs,
                             const DesignedPanel& panel, double lambda);

struct LoglikGradient {
  double penalized = 0.0;
  double unpenalized = 0.0;
  Eigen::VectorXd gradient;  // d penalized / d packed eta
};

/// Exact score through the expected complete-data score; missing lagged
/// responses are summed out jointly with the states.
LoglikGradient loglik_gradient(const ModelSpec& spec, const CoefficientSet& coeffs,
                               const DesignedPanel& panel, double lambda);

// ---------------------------------------------------------------------------
// EM M-step
// ---------------------------------------------------------------------------

/// Weighted multinomial-logit data for one coefficient block: n rows of
/// design x (n x k) and expected counts w (n x dim).
struct SoftmaxRegressionData {
  int dim = 0;
  int k = 0;
  std::vector<double> x;
  std::vector<double> w;

  std::size_t rows() const { return k == 0 ? 0 : x.size() / static_cast<std::size_t>(k); }
  void add(const double* x_row, const double* w_row);
};

/// Expected counts of a whole dataset arranged per coefficient block.
struct MstepData {
  SoftmaxRegressionData initial;
  std::vector<SoftmaxRegressionData> transition;  // per source state
  std::vector<SoftmaxRegressionData> emission;    // per state
  double loglik = 0.0;                            // unpenalized, at the E-step parameters
};

MstepData estep_dataset(const ModelSpec& spec, const CoefficientSet& coeffs,
                        const DesignedPanel& panel);

struct BlockObjective {
  double value = 0.0;
  Eigen::MatrixXd gradient;  // same shape as the working block
};

/// sum_i sum_j w_ij log softmax(Q eta x_i)_j - lambda/2 ||eta||^2 and its
/// gradient Q^T sum_i (w_i - (1^T w_i) p_i) x_i^T - lambda eta.
BlockObjective mstep_objective_and_gradient(const SoftmaxRegressionData& data,
                                            const SumToZeroBasis& basis,
                                            const Eigen::MatrixXd& eta_block, double lambda);

}  // namespace fanhmm
