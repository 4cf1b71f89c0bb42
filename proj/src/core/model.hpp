#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "core/geometry.hpp"

namespace fanhmm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Response code for an unobserved y. Observed codes are 0-based.
inline constexpr int kMissing = -1;
/// DesignTerm::lag value for terms that do not involve the lagged response.
inline constexpr int kNoLag = -1;

/*!
 * One design column: the product of the listed covariates, times the
 * indicator [y_{t-1} == lag] when lag is set. No covariates and no lag is
 * the intercept. Lagged responses use dummy coding with category 0 as the
 * reference, so lag ranges over 1..M-1.
 */
struct DesignTerm {
  std::vector<int> covariates;
  int lag = kNoLag;

  bool is_intercept() const { return covariates.empty() && lag == kNoLag; }
  bool operator==(const DesignTerm&) const = default;
};

/// Structural description of a FAN-HMM.
struct ModelSpec {
  int states = 1;
  int categories = 2;
  std::vector<std::string> covariates;
  std::vector<DesignTerm> initial_terms;
  std::vector<DesignTerm> transition_terms;
  std::vector<DesignTerm> emission_terms;
  bool edge_y_to_y = false;  // y_{t-1} -> y_t (lag columns in the emission design)
  bool edge_y_to_z = false;  // y_{t-1} -> z_t (lag columns in the transition design)

  int k_pi() const { return static_cast<int>(initial_terms.size()); }
  int k_A() const { return static_cast<int>(transition_terms.size()); }
  int k_B() const { return static_cast<int>(emission_terms.size()); }

  /// (S-1)K_pi + S(S-1)K_A + S(M-1)K_B.
  std::size_t parameter_count() const;

  /// Throws ErrorCode::Validation describing the first violated invariant.
  void validate() const;

  /*!
   * Builds a spec from term lists such as {"x", "lag", "x:lag"}. The intercept
   * is always the first column; the remaining columns are ordered as main
   * effects, lag dummies, then interactions, each group in the order given.
   * Edge flags are derived from the presence of lag terms.
   */
  static ModelSpec from_formulas(int states, int categories,
                                 std::vector<std::string> covariates,
                                 const std::vector<std::string>& initial,
                                 const std::vector<std::string>& transition,
                                 const std::vector<std::string>& emission);
};

std::vector<DesignTerm> expand_terms(const std::vector<std::string>& formula,
                                     const std::vector<std::string>& covariates,
                                     int categories, bool allow_lag,
                                     const std::string& component);

/// Human-readable column label, e.g. "(intercept)", "x:o", "x:lag[3]".
std::string term_label(const DesignTerm& term, const std::vector<std::string>& covariates);

/// Index of the intercept column, or -1.
int intercept_column(const std::vector<DesignTerm>& terms);

/*!
 * Working parameters of all three model components with the derived
 * sum-to-zero coefficients. Immutable once constructed.
 */
class CoefficientSet {
 public:
  CoefficientSet() = default;
  CoefficientSet(const ModelSpec& spec, Eigen::MatrixXd eta_pi,
                 std::vector<Eigen::MatrixXd> eta_A, std::vector<Eigen::MatrixXd> eta_B);

  static CoefficientSet zeros(const ModelSpec& spec);

  int states() const { return states_; }
  int categories() const { return categories_; }

  const Eigen::MatrixXd& eta_pi() const { return eta_pi_; }
  const Eigen::MatrixXd& eta_A(int s) const { return eta_A_[s]; }
  const Eigen::MatrixXd& eta_B(int s) const { return eta_B_[s]; }
  const std::vector<Eigen::MatrixXd>& eta_A() const { return eta_A_; }
  const std::vector<Eigen::MatrixXd>& eta_B() const { return eta_B_; }

  const RowMatrix& gamma_pi() const { return gamma_pi_; }
  const RowMatrix& gamma_A(int s) const { return gamma_A_[s]; }
  const RowMatrix& gamma_B(int s) const { return gamma_B_[s]; }

  const SumToZeroBasis& state_basis() const { return *state_basis_; }
  const SumToZeroBasis& category_basis() const { return *category_basis_; }

  /// Squared Frobenius norm over every working parameter.
  double squared_norm() const;

 private:
  int states_ = 0;
  int categories_ = 0;
  Eigen::MatrixXd eta_pi_;
  std::vector<Eigen::MatrixXd> eta_A_;
  std::vector<Eigen::MatrixXd> eta_B_;
  RowMatrix gamma_pi_;
  std::vector<RowMatrix> gamma_A_;
  std::vector<RowMatrix> gamma_B_;
  std::shared_ptr<const SumToZeroBasis> state_basis_;
  std::shared_ptr<const SumToZeroBasis> category_basis_;
};

/// Flat vector: pi block, A blocks by state, B blocks by state, each block
/// row-major.
Eigen::VectorXd pack_parameters(const CoefficientSet& coeffs);
CoefficientSet unpack_parameters(const ModelSpec& spec, const Eigen::VectorXd& flat);

/// Relabels states: state s of the result is state perm[s] of the input.
/// Transition blocks permute both the source index and the target rows.
CoefficientSet permute_states(const ModelSpec& spec, const CoefficientSet& coeffs,
                              const std::vector<int>& perm);

/// Fills lag factors of a design row from y_prev. Lag columns become zero when
/// y_prev is the reference category; y_prev == kMissing is only accepted
/// when no term depends on the lag.
Eigen::VectorXd complete_row(const std::vector<DesignTerm>& terms, const Eigen::VectorXd& row,
                             int y_prev);

Eigen::VectorXd initial_probs(const CoefficientSet& coeffs, const Eigen::VectorXd& x_pi);
Eigen::MatrixXd transition_matrix(const ModelSpec& spec, const CoefficientSet& coeffs,
                                  const Eigen::VectorXd& x_A, int y_prev);
Eigen::MatrixXd emission_matrix(const ModelSpec& spec, const CoefficientSet& coeffs,
                                const Eigen::VectorXd& x_B, int y_prev);

// ---------------------------------------------------------------------------
// Panel data
// ---------------------------------------------------------------------------

struct Sequence {
  std::string id;
  std::vector<double> times;
  std::vector<int> y;           // 0-based codes or kMissing
  Eigen::MatrixXd covariates;   // T x P raw covariates, columns as in the dataset
  std::vector<int> states;      // latent path for simulated data, else empty

  int length() const { return static_cast<int>(y.size()); }
};

struct PanelDataset {
  int categories = 2;
  std::vector<std::string> category_labels;
  std::vector<std::string> covariate_names;
  std::vector<Sequence> sequences;

  /// Throws ErrorCode::Validation on ragged shapes, bad codes, missing
  /// (non-finite) covariates or empty sequences.
  void validate() const;
};

/*!
 * Design rows of one sequence. Lag-dependent columns of x_A and x_B hold the
 * covariate part of the product only; the lag indicator is applied at
 * evaluation time from the running responses.
 */
struct SequenceDesign {
  std::vector<int> y;
  Eigen::VectorXd x_pi;
  RowMatrix x_A;
  RowMatrix x_B;

  int length() const { return static_cast<int>(y.size()); }
};

struct DesignedPanel {
  std::vector<SequenceDesign> sequences;
  std::vector<int> covariate_columns;  // spec covariate -> dataset column
};

std::vector<int> resolve_covariates(const ModelSpec& spec,
                                    const std::vector<std::string>& dataset_covariates);

/// Evaluates every term on the raw covariates. Initial-state rows use the
/// covariates of the first time point.
SequenceDesign design_sequence(const ModelSpec& spec, const Sequence& sequence,
                               const std::vector<int>& covariate_columns);

DesignedPanel build_design(const PanelDataset& dataset, const ModelSpec& spec);

}  // namespace fanhmm
