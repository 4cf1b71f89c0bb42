#include "core/estimation.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <chrono>
#include <cmath>
#include <limits>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace fanhmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Eigen::MatrixXd reshape_block(const Eigen::VectorXd& x, Eigen::Index rows, Eigen::Index cols) {
  // Row-major, like the packed parameter vector.
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = x[r * cols + c];
  return out;
}

Eigen::VectorXd flatten_block(const Eigen::MatrixXd& m) {
  Eigen::VectorXd out(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r * m.cols() + c] = m(r, c);
  return out;
}

Eigen::MatrixXd solve_block(const SoftmaxRegressionData& data, const SumToZeroBasis& basis,
                            const Eigen::MatrixXd& start, double lambda,
                            const LbfgsOptions& options) {
  if (start.size() == 0 || (data.rows() == 0 && lambda == 0.0)) return start;
  const Eigen::Index rows = start.rows(), cols = start.cols();
  const Objective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const BlockObjective b =
        mstep_objective_and_gradient(data, basis, reshape_block(x, rows, cols), lambda);
    g = -flatten_block(b.gradient);
    return -b.value;
  };
  const Eigen::VectorXd x0 = flatten_block(start);
  Eigen::VectorXd g0(x0.size());
  const double f0 = objective(x0, g0);
  const LbfgsResult r = lbfgs_minimize(objective, x0, options);
  if (std::isfinite(r.f) && (r.f <= f0 || !std::isfinite(f0))) return reshape_block(r.x, rows, cols);
  return start;
}

struct Evaluator {
  const DesignedPanel& panel;
  const ModelSpec& spec;
  double lambda;

  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd& g) const {
    const CoefficientSet c = unpack_parameters(spec, x);
    const LoglikGradient lg = loglik_gradient(spec, c, panel, lambda);
    g = -lg.gradient;
    return -lg.penalized;
  }
};

void run_direct(const DesignedPanel& panel, const ModelSpec& spec, const FitOptions& options,
                FitResult& result) {
  LbfgsOptions qn;
  qn.f_rel_tol = options.rel_tol;
  qn.max_iterations = options.max_iterations;
  const Evaluator eval{panel, spec, options.lambda};
  const LbfgsResult r = lbfgs_minimize(eval, pack_parameters(result.coefficients), qn);
  result.qn_iterations = r.iterations;
  result.evaluations += r.evaluations;
  result.status = lbfgs_status_name(r.status);
  result.converged = r.converged();
  if (std::isfinite(r.f) && -r.f >= result.penalized_loglik)
    result.coefficients = unpack_parameters(spec, r.x);
}

void run_em(const DesignedPanel& panel, const ModelSpec& spec, const FitOptions& options,
            FitResult& result) {
  double previous = kNegInf;
  result.converged = false;
  result.status = "em-maxiter";
  for (int iter = 0;; ++iter) {
    const MstepData data = estep_dataset(spec, result.coefficients, panel);
    const double current =
        data.loglik - 0.5 * options.lambda * result.coefficients.squared_norm();
    result.em_trace.push_back(current);
    ++result.evaluations;
    if (std::isfinite(previous) &&
        std::abs(current - previous) < options.em_rel_tol * std::abs(current)) {
      result.converged = true;
      result.status = "em-tol";
      break;
    }
    if (iter == options.max_em_iterations) break;
    previous = current;
    result.coefficients = mstep(spec, result.coefficients, data, options.lambda);
    result.em_iterations = iter + 1;
  }
}

}  // namespace

const char* fit_method_name(FitMethod method) {
  switch (method) {
    case FitMethod::Direct: return "direct";
    case FitMethod::Em: return "em";
    case FitMethod::Hybrid: return "hybrid";
  }
  return "unknown";
}

FitMethod parse_fit_method(const std::string& name) {
  if (name == "direct" || name == "lbfgs") return FitMethod::Direct;
  if (name == "em") return FitMethod::Em;
  if (name == "hybrid" || name == "em-lbfgs") return FitMethod::Hybrid;
  fail(ErrorCode::Validation, "fit.method must be one of direct, em, hybrid (got '" + name + "')");
}

void FitOptions::validate() const {
  require(lambda >= 0.0 && std::isfinite(lambda), ErrorCode::Validation,
          "fit.lambda must be non-negative");
  require(rel_tol > 0.0 && em_rel_tol > 0.0, ErrorCode::Validation,
          "fit tolerances must be positive");
  require(max_iterations >= 1, ErrorCode::Validation, "fit.max_iterations must be positive");
  require(max_em_iterations >= 0, ErrorCode::Validation,
          "fit.max_em_iterations must be non-negative");
}

CoefficientSet mstep(const ModelSpec& spec, const CoefficientSet& current, const MstepData& data,
                     double lambda, const LbfgsOptions& options) {
  const int S = spec.states;
  // Block 0 is pi, blocks 1..S transitions, S+1..2S emissions.
  std::vector<Eigen::MatrixXd> solved(1 + 2 * S);
  parallel_for(solved.size(), [&](std::size_t b) {
    if (b == 0) {
      solved[b] = solve_block(data.initial, current.state_basis(), current.eta_pi(), lambda, options);
    } else if (b <= static_cast<std::size_t>(S)) {
      const int s = static_cast<int>(b) - 1;
      solved[b] = solve_block(data.transition[s], current.state_basis(), current.eta_A(s), lambda,
                              options);
    } else {
      const int s = static_cast<int>(b) - 1 - S;
      solved[b] = solve_block(data.emission[s], current.category_basis(), current.eta_B(s),
                              lambda, options);
    }
  });
  std::vector<Eigen::MatrixXd> A(solved.begin() + 1, solved.begin() + 1 + S);
  std::vector<Eigen::MatrixXd> B(solved.begin() + 1 + S, solved.end());
  return CoefficientSet(spec, solved[0], std::move(A), std::move(B));
}

FitResult fit(const DesignedPanel& panel, const ModelSpec& spec, const CoefficientSet& init,
              const FitOptions& options) {
  options.validate();
  const auto start = std::chrono::steady_clock::now();
  FitResult result;
  result.coefficients = init;
  const DatasetLoglik ll0 = loglik_dataset(spec, init, panel, options.lambda);
  require(std::isfinite(ll0.penalized), ErrorCode::Numeric,
          "log-likelihood at the initial values is not finite");
  result.penalized_loglik = ll0.penalized;

  if (options.method == FitMethod::Em || options.method == FitMethod::Hybrid) {
    run_em(panel, spec, options, result);
    result.penalized_loglik = result.em_trace.back();
  }
  if (options.method == FitMethod::Direct || options.method == FitMethod::Hybrid)
    run_direct(panel, spec, options, result);

  const DatasetLoglik ll = loglik_dataset(spec, result.coefficients, panel, options.lambda);
  result.penalized_loglik = ll.penalized;
  result.unpenalized_loglik = ll.unpenalized;
  if (!std::isfinite(ll.penalized)) result.converged = false;
  result.wall_seconds = seconds_since(start);
  return result;
}

FitResult fit(const PanelDataset& dataset, const ModelSpec& spec, const CoefficientSet& init,
              const FitOptions& options) {
  return fit(build_design(dataset, spec), spec, init, options);
}

CoefficientSet initial_value_center(const ModelSpec& spec) {
  CoefficientSet zero = CoefficientSet::zeros(spec);
  const int S = spec.states;
  const int icpt = intercept_column(spec.transition_terms);
  if (S < 2 || icpt < 0) return zero;
  const double off = 0.05;
  const double diag = 1.0 - off * (S - 1);
  std::vector<Eigen::MatrixXd> A = zero.eta_A();
  for (int s = 0; s < S; ++s) {
    Eigen::VectorXd p = Eigen::VectorXd::Constant(S, off);
    p[s] = diag;
    A[s].col(icpt) = gamma_to_eta(gamma_from_target_probs(p), zero.state_basis());
  }
  return CoefficientSet(spec, zero.eta_pi(), std::move(A), zero.eta_B());
}

std::vector<CoefficientSet> sample_initial_values(const ModelSpec& spec, int n_starts,
                                                  CounterRng& rng, double sigma) {
  require(n_starts >= 1, ErrorCode::Validation, "number of starts must be positive");
  require(sigma >= 0.0, ErrorCode::Validation, "initial-value sigma must be non-negative");
  const Eigen::VectorXd center = pack_parameters(initial_value_center(spec));
  const Eigen::Index P = center.size();
  std::vector<Eigen::VectorXd> draws(n_starts, center);
  const boost::math::normal_distribution<double> standard;
  std::vector<int> perm(n_starts);
  for (Eigen::Index j = 0; j < P; ++j) {
    for (int i = 0; i < n_starts; ++i) perm[i] = i;
    for (int i = n_starts - 1; i > 0; --i) {
      const int k = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
      std::swap(perm[i], perm[k]);
    }
    for (int i = 0; i < n_starts; ++i) {
      const double u = (perm[i] + rng.uniform_open()) / n_starts;
      draws[i][j] += sigma * boost::math::quantile(standard, u);
    }
  }
  std::vector<CoefficientSet> out;
  out.reserve(n_starts);
  for (const auto& d : draws) out.push_back(unpack_parameters(spec, d));
  return out;
}

std::vector<bool> success_flags(const std::vector<double>& logliks, double rel_gap) {
  double best = kNegInf;
  for (double v : logliks)
    if (std::isfinite(v)) best = std::max(best, v);
  std::vector<bool> out(logliks.size(), false);
  if (!std::isfinite(best)) return out;
  for (std::size_t i = 0; i < logliks.size(); ++i)
    out[i] = std::isfinite(logliks[i]) && std::abs(logliks[i] - best) < rel_gap * std::abs(best);
  return out;
}

MultistartReport multistart_from(const DesignedPanel& panel, const ModelSpec& spec,
                                 const std::vector<CoefficientSet>& inits,
                                 const FitOptions& options) {
  options.validate();
  require(!inits.empty(), ErrorCode::Validation, "number of starts must be positive");
  const std::size_t n = inits.size();
  MultistartReport report;
  report.fits.resize(n);
  report.failed.assign(n, false);
  std::vector<char> failed(n, 0);
  parallel_for(n, [&](std::size_t i) {
    try {
      report.fits[i] = fit(panel, spec, inits[i], options);
      if (!std::isfinite(report.fits[i].penalized_loglik)) failed[i] = 1;
    } catch (const Error&) {
      failed[i] = 1;
      report.fits[i].coefficients = inits[i];
      report.fits[i].penalized_loglik = kNegInf;
      report.fits[i].unpenalized_loglik = kNegInf;
      report.fits[i].status = "failed";
    }
  });
  std::vector<double> ll(n);
  for (std::size_t i = 0; i < n; ++i) {
    report.failed[i] = failed[i] != 0;
    ll[i] = failed[i] ? kNegInf : report.fits[i].penalized_loglik;
    if (!failed[i] && (report.best < 0 || ll[i] > ll[report.best])) report.best = static_cast<int>(i);
  }
  require(report.best >= 0, ErrorCode::Compute, "every start failed to produce a finite fit");
  report.success = success_flags(ll);
  report.success_rate =
      static_cast<double>(std::count(report.success.begin(), report.success.end(), true)) / n;
  return report;
}

MultistartReport multistart(const DesignedPanel& panel, const ModelSpec& spec, int n_starts,
                            const FitOptions& options) {
  CounterRng rng = CounterRng(options.seed).split(0x5157);
  return multistart_from(panel, spec, sample_initial_values(spec, n_starts, rng), options);
}

}  // namespace fanhmm
