#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/causal.hpp"
#include "core/estimation.hpp"
#include "core/model.hpp"
#include "core/rng.hpp"

namespace fanhmm {

enum class CovariateKind {
  Trend,      // x_t ~ N(u + v t, noise^2), u ~ N(0, sd_u^2), v ~ U(-v_max, v_max)
  Normal,     // iid N(mean, sd^2)
  Bernoulli,  // per-sequence constant 0/1 with P(1) = prob
  Step,       // 0 before a per-sequence change time drawn uniformly in [from, to], 1 after
};

struct CovariateProcess {
  std::string name;
  CovariateKind kind = CovariateKind::Trend;
  double mean = 0.0;
  double sd = 1.0;
  double sd_u = 0.5;
  double v_max = 0.05;
  double noise = 0.1;
  double prob = 0.5;
  int step_from = 1;  // 1-based times
  int step_to = 1;
};

const char* covariate_kind_name(CovariateKind kind);
CovariateKind parse_covariate_kind(const std::string& name);

struct DgpConfig {
  ModelSpec spec;
  CoefficientSet coefficients;
  int N = 200;
  int T = 20;
  int T_min = 0;              // > 0: lengths uniform on [T_min, T]
  double missing_rate = 0.0;  // independent masking of responses
  std::vector<CovariateProcess> covariates;
  std::vector<std::string> category_labels;  // default "1".."M"
  std::uint64_t seed = 1;

  void validate() const;
};

/// Ancestral sampling with latent states kept in Sequence::states. Sequence i
/// draws from stream split(i) of the seed, so datasets do not depend on the
/// thread count. Lag columns at the first time point use the reference
/// category.
PanelDataset simulate_dataset(const DgpConfig& config);

/// One sequence of the trend process, times 1..T.
std::vector<double> draw_trend_covariate(int T, CounterRng& rng, double sd_u = 0.5,
                                         double v_max = 0.05, double noise = 0.1);

/// N x T matrix of the trend process; row i uses rng.split(i).
Eigen::MatrixXd generate_covariate_ar(int N, int T, const CounterRng& rng);

/*!
 * Default three-state, four-category design: covariate x from the trend
 * process; pi ~ x, A ~ x + lag, B ~ x + lag. Intercepts reproduce the average
 * probabilities
 *   pi = (0.8, 0.1, 0.1),
 *   A  = [0.85 0.1 0.05; 0.1 0.8 0.1; 0.05 0.05 0.9],
 *   B  = [0.8 0.05 0.1 0.05; 0.15 0.5 0.25 0.1; 0.1 0.05 0.25 0.6].
 * x effects take values in {-1, 0, 1} and lag effects in {-0.5, 0, 0.5}.
 * With null_effect the x columns of every block are zero.
 */
DgpConfig default_dgp(int N, int T, std::uint64_t seed, bool null_effect = false);

/// Intercept-only spec with the same average probabilities (no covariates).
DgpConfig intercept_only_dgp(int N, int T, std::uint64_t seed);

/// Same formulas as default_dgp with another state count.
ModelSpec default_spec(int states);

struct MultistartExperimentConfig {
  DgpConfig dgp;
  std::vector<int> states{2, 3, 4};
  std::vector<double> lambdas{0.0, 0.1};
  std::vector<FitMethod> methods{FitMethod::Direct, FitMethod::Hybrid};
  int replications = 20;  // starts per (S, lambda, method)
  FitOptions fit;
  std::uint64_t seed = 1;
};

struct MultistartRow {
  int states = 0;
  double lambda = 0.0;
  FitMethod method = FitMethod::Direct;
  int runs = 0;
  int successes = 0;
  int failures = 0;
  double success_rate = 0.0;
  double mean_seconds = 0.0;
  double best_loglik = 0.0;  // pooled over methods for (S, lambda)
  std::vector<double> logliks;
};

struct MultistartExperimentReport {
  std::vector<MultistartRow> rows;

  /// Success rate pooled over methods for (S, lambda).
  double pooled_rate(int states, double lambda) const;
};

MultistartExperimentReport run_multistart_experiment(const MultistartExperimentConfig& config);

struct CoverageExperimentConfig {
  DgpConfig dgp;  // truth; dgp.N, dgp.T give the replicate size
  std::vector<int> states{2, 3, 4};
  int start = -1;  // 0-based; default T - horizons
  int horizons = 5;
  std::vector<std::string> target{"x"};
  double treat_value = 1.0;
  double control_value = 0.0;
  int replications = 100;
  int bootstrap = 50;
  double level = 0.9;
  int starts = 5;
  int bootstrap_random_starts = 0;
  int truth_N = 20000;
  FitOptions fit{.method = FitMethod::Direct, .lambda = 0.1};
  FitOptions bootstrap_fit{.method = FitMethod::Direct, .rel_tol = 1e-6, .lambda = 0.1};
  std::uint64_t seed = 1;
};

struct CoverageCell {
  int states = 0;
  int horizon = 0;
  int category = 0;
  double truth = 0.0;
  double rmse = 0.0;
  double bias = 0.0;
  double coverage = 0.0;
  int replications = 0;
};

struct CoverageSummary {
  int states = 0;
  double rmse = 0.0;      // root mean square over replications, horizons, categories
  double coverage = 0.0;  // share of covered (replication, horizon, category) cells
  int replications = 0;
  int unreliable = 0;     // replications with > 20% dropped bootstrap fits
};

struct CoverageExperimentReport {
  std::vector<AceEstimate> truth;  // per horizon
  std::vector<CoverageCell> cells;
  std::vector<CoverageSummary> summary;
  /// estimates[s][r][h](m); lower/upper alike.
  std::vector<std::vector<std::vector<Eigen::VectorXd>>> estimates, lower, upper;
};

CoverageExperimentReport run_rmse_coverage_experiment(const CoverageExperimentConfig& config);

/// Plans do(target = value) over times start..start+horizon.
InterventionPlan make_plan(const std::vector<std::string>& target, double value, int start,
                           int horizon);

}  // namespace fanhmm
