#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/estimation.hpp"
#include "core/model.hpp"

namespace fanhmm {

enum class InterventionMode { Recurring, Atomic };

/*!
 * do(x_{t:t+k}) on raw covariates. values holds one row per time offset
 * 0..horizon (a single row is reused for every offset); each row has one
 * value per targeted covariate. Derived design columns (interactions) are
 * rebuilt from the patched raw covariates. In atomic mode only offset 0 is
 * set and later covariates keep their observed values, which is valid when
 * covariates are not autocorrelated.
 */
struct InterventionPlan {
  std::vector<std::string> covariates;
  std::vector<std::vector<double>> values;
  int start = 0;    // 0-based time index t
  int horizon = 0;  // k
  InterventionMode mode = InterventionMode::Recurring;
  bool covariate_autocorrelation = false;

  /// Throws ErrorCode::Validation (or Unsupported for atomic mode with
  /// autocorrelated covariates).
  void validate(const std::vector<std::string>& dataset_covariates) const;
  double value(int offset, int j) const;
};

struct CausalEstimate {
  int time = 0;     // 0-based t + h
  int horizon = 0;  // h
  Eigen::MatrixXd joint;         // S x M
  Eigen::VectorXd y_marginal;    // M
  Eigen::VectorXd z_marginal;    // S
  Eigen::MatrixXd y_given_z;     // S x M, rows renormalized
  int n_sequences = 0;
  int n_excluded = 0;
};

/// Interventional distribution at horizon plan.horizon.
CausalEstimate estimate_do(const ModelSpec& spec, const CoefficientSet& coeffs,
                           const PanelDataset& dataset, const InterventionPlan& plan);

/// Estimates for every horizon 0..plan.horizon from one modified forward pass
/// per sequence. Sequences too short for a horizon are left out of it.
std::vector<CausalEstimate> estimate_do_path(const ModelSpec& spec, const CoefficientSet& coeffs,
                                             const PanelDataset& dataset,
                                             const InterventionPlan& plan);

struct AceEstimate {
  int time = 0;
  int horizon = 0;
  Eigen::VectorXd y;          // M, treat - control
  Eigen::MatrixXd y_given_z;  // S x M
  CausalEstimate treat;
  CausalEstimate control;
};

/// Per-horizon differences treat - control. Plans must share start and horizon.
std::vector<AceEstimate> ace(const ModelSpec& spec, const CoefficientSet& coeffs,
                             const PanelDataset& dataset, const InterventionPlan& treat,
                             const InterventionPlan& control);

struct Alignment {
  std::vector<int> permutation;  // aligned state s = replicate state permutation[s]
  double cost = 0.0;
};

/// Squared distance between the reference gammas and the replicate relabeled by perm.
double alignment_cost(const ModelSpec& spec, const CoefficientSet& reference,
                      const CoefficientSet& replicate, const std::vector<int>& perm);

/// Exhaustive search for S < 4 (lexicographically smallest minimizer);
/// Hungarian assignment on the additive per-state cost otherwise.
Alignment align_states(const ModelSpec& spec, const CoefficientSet& reference,
                       const CoefficientSet& replicate);

/// Minimum-cost assignment for a square cost matrix: row i -> column result[i].
std::vector<int> hungarian(const Eigen::MatrixXd& cost);

/// Type-7 sample quantile (linear interpolation between order statistics).
double quantile(std::vector<double> values, double prob);

struct BootstrapOptions {
  int replicates = 50;
  double level = 0.9;
  int random_starts = 1;
  bool warm_start = true;
  bool original_data = false;  // marginalize over the original sequences
  std::uint64_t seed = 1;
  FitOptions fit;

  void validate() const;
};

struct BootstrapResult {
  std::vector<std::vector<AceEstimate>> replicates;   // kept replicates
  std::vector<Eigen::VectorXd> aligned_parameters;    // packed eta, kept replicates
  std::vector<int> replicate_ids;                     // b of each kept replicate
  std::vector<Eigen::MatrixXd> lower, upper;          // per horizon: 1 x M (ace y)
  std::vector<Eigen::MatrixXd> lower_given_z, upper_given_z;  // per horizon: S x M
  int dropped = 0;
  bool unreliable = false;
  double level = 0.9;
};

BootstrapResult bootstrap_ci(const PanelDataset& dataset, const ModelSpec& spec,
                             const CoefficientSet& point, const InterventionPlan& treat,
                             const InterventionPlan& control, const BootstrapOptions& options);

}  // namespace fanhmm
