#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/inference.hpp"
#include "core/lbfgs.hpp"
#include "core/model.hpp"
#include "core/rng.hpp"

namespace fanhmm {

enum class FitMethod { Direct, Em, Hybrid };

const char* fit_method_name(FitMethod method);
FitMethod parse_fit_method(const std::string& name);

struct FitOptions {
  FitMethod method = FitMethod::Hybrid;
  int max_em_iterations = 100;
  double em_rel_tol = 1e-8;
  double rel_tol = 1e-8;      // quasi-Newton relative function tolerance
  int max_iterations = 10000; // quasi-Newton iteration cap
  double lambda = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct FitResult {
  CoefficientSet coefficients;
  double penalized_loglik = 0.0;
  double unpenalized_loglik = 0.0;
  int em_iterations = 0;
  int qn_iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string status;
  double wall_seconds = 0.0;
  /// Penalized loglik before every E-step and at the final EM iterate.
  std::vector<double> em_trace;
};

/// Maximizes the penalized loglik from init. Throws ErrorCode::Numeric when
/// the loglik at init is not finite; optimizer trouble only clears
/// `converged`.
FitResult fit(const DesignedPanel& panel, const ModelSpec& spec, const CoefficientSet& init,
              const FitOptions& options);
FitResult fit(const PanelDataset& dataset, const ModelSpec& spec, const CoefficientSet& init,
              const FitOptions& options);

/// One EM iteration's M-step: maximizes each block's expected penalized
/// loglik, starting from (and never falling below) the current block.
CoefficientSet mstep(const ModelSpec& spec, const CoefficientSet& current, const MstepData& data,
                     double lambda, const LbfgsOptions& options = {});

/*!
 * Starting values for multistart. Each scalar working parameter gets a
 * Latin-hypercube sample across starts: the n strata of (0, 1) are randomly
 * permuted, jittered within their stratum and mapped through sigma * Phi^{-1}.
 * Transition intercepts are centred on the working parameters whose rows
 * have 1 - 0.05(S-1) on the diagonal and 0.05 elsewhere.
 */
std::vector<CoefficientSet> sample_initial_values(const ModelSpec& spec, int n_starts,
                                                  CounterRng& rng, double sigma = 2.0);

/// Intercept-centred point shared by every start (the sigma = 0 draw).
CoefficientSet initial_value_center(const ModelSpec& spec);

/// |ll - max ll| < rel_gap * |max ll|; non-finite entries never succeed.
std::vector<bool> success_flags(const std::vector<double>& logliks, double rel_gap = 1e-5);

struct MultistartReport {
  std::vector<FitResult> fits;
  std::vector<bool> failed;  // start threw or ended non-finite
  std::vector<bool> success;
  int best = -1;
  double success_rate = 0.0;

  const FitResult& best_fit() const { return fits.at(best); }
};

/// Fits n_starts sampled initial values (seeded from options.seed). Throws
/// ErrorCode::Compute only when every start fails.
MultistartReport multistart(const DesignedPanel& panel, const ModelSpec& spec, int n_starts,
                            const FitOptions& options);

/// Same, with caller-supplied starting points.
MultistartReport multistart_from(const DesignedPanel& panel, const ModelSpec& spec,
                                 const std::vector<CoefficientSet>& inits,
                                 const FitOptions& options);

}  // namespace fanhmm
