#include "core/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace fanhmm {

namespace {

const double kPi[3] = {0.8, 0.1, 0.1};
const double kA[3][3] = {{0.85, 0.1, 0.05}, {0.1, 0.8, 0.1}, {0.05, 0.05, 0.9}};
const double kB[3][4] = {{0.8, 0.05, 0.1, 0.05}, {0.15, 0.5, 0.25, 0.1}, {0.1, 0.05, 0.25, 0.6}};

const double kPiX[2] = {1.0, -1.0};
const double kAX[3][2] = {{1.0, 0.0}, {-1.0, 1.0}, {0.0, -1.0}};
const double kBX[3][3] = {{1.0, -1.0, 0.0}, {0.0, 1.0, -1.0}, {-1.0, 0.0, 1.0}};
const double kLagCycle[3] = {0.5, -0.5, 0.0};

Eigen::VectorXd intercept_eta(const double* p, int n, const SumToZeroBasis& basis) {
  return gamma_to_eta(gamma_from_target_probs(Eigen::Map<const Eigen::VectorXd>(p, n)), basis);
}

ModelSpec with_states(const ModelSpec& spec, int states) {
  ModelSpec out = spec;
  out.states = states;
  out.validate();
  return out;
}

std::vector<double> draw_covariate(const CovariateProcess& p, int T, CounterRng& rng) {
  std::vector<double> x(T);
  switch (p.kind) {
    case CovariateKind::Trend:
      return draw_trend_covariate(T, rng, p.sd_u, p.v_max, p.noise);
    case CovariateKind::Normal:
      for (int t = 0; t < T; ++t) x[t] = rng.normal(p.mean, p.sd);
      return x;
    case CovariateKind::Bernoulli: {
      const double v = rng.uniform() < p.prob ? 1.0 : 0.0;
      std::fill(x.begin(), x.end(), v);
      return x;
    }
    case CovariateKind::Step: {
      const int span = p.step_to - p.step_from + 1;
      const int change = p.step_from + static_cast<int>(rng() % static_cast<std::uint64_t>(span));
      for (int t = 0; t < T; ++t) x[t] = t + 1 >= change ? 1.0 : 0.0;
      return x;
    }
  }
  return x;
}

}  // namespace

const char* covariate_kind_name(CovariateKind kind) {
  switch (kind) {
    case CovariateKind::Trend: return "trend";
    case CovariateKind::Normal: return "normal";
    case CovariateKind::Bernoulli: return "bernoulli";
    case CovariateKind::Step: return "step";
  }
  return "unknown";
}

CovariateKind parse_covariate_kind(const std::string& name) {
  if (name == "trend") return CovariateKind::Trend;
  if (name == "normal") return CovariateKind::Normal;
  if (name == "bernoulli") return CovariateKind::Bernoulli;
  if (name == "step") return CovariateKind::Step;
  fail(ErrorCode::Validation,
       "covariate process must be one of trend, normal, bernoulli, step (got '" + name + "')");
}

void DgpConfig::validate() const {
  spec.validate();
  require(N >= 1, ErrorCode::Validation, "simulate.N must be positive");
  require(T >= 1, ErrorCode::Validation, "simulate.T must be positive");
  require(T_min >= 0 && T_min <= T, ErrorCode::Validation, "simulate.T_min must lie in [0, T]");
  require(missing_rate >= 0.0 && missing_rate < 1.0, ErrorCode::Validation,
          "simulate.missing_rate must lie in [0, 1)");
  require(coefficients.states() == spec.states && coefficients.categories() == spec.categories,
          ErrorCode::Validation, "simulate coefficients do not match the model");
  require(category_labels.empty() ||
              static_cast<int>(category_labels.size()) == spec.categories,
          ErrorCode::Validation, "simulate.category_labels needs one label per category");
  for (const auto& name : spec.covariates)
    require(std::any_of(covariates.begin(), covariates.end(),
                        [&](const CovariateProcess& p) { return p.name == name; }),
            ErrorCode::Validation, "no covariate process for model covariate '" + name + "'");
  for (const auto& p : covariates) {
    require(p.sd >= 0.0 && p.sd_u >= 0.0 && p.noise >= 0.0 && p.v_max >= 0.0,
            ErrorCode::Validation, "covariate '" + p.name + "' has a negative scale");
    require(p.prob >= 0.0 && p.prob <= 1.0, ErrorCode::Validation,
            "covariate '" + p.name + "' has prob outside [0, 1]");
    if (p.kind == CovariateKind::Step)
      require(p.step_from >= 1 && p.step_to >= p.step_from, ErrorCode::Validation,
              "covariate '" + p.name + "' needs 1 <= step_from <= step_to");
  }
}

std::vector<double> draw_trend_covariate(int T, CounterRng& rng, double sd_u, double v_max,
                                         double noise) {
  const double u = rng.normal(0.0, sd_u);
  const double v = -v_max + 2.0 * v_max * rng.uniform();
  std::vector<double> x(T);
  for (int t = 0; t < T; ++t) x[t] = rng.normal(u + v * (t + 1), noise);
  return x;
}

Eigen::MatrixXd generate_covariate_ar(int N, int T, const CounterRng& rng) {
  require(N >= 1 && T >= 1, ErrorCode::Validation, "N and T must be positive");
  Eigen::MatrixXd out(N, T);
  for (int i = 0; i < N; ++i) {
    CounterRng r = rng.split(static_cast<std::uint64_t>(i));
    const auto x = draw_trend_covariate(T, r);
    for (int t = 0; t < T; ++t) out(i, t) = x[t];
  }
  return out;
}

PanelDataset simulate_dataset(const DgpConfig& config) {
  config.validate();
  const ModelSpec& spec = config.spec;
  const CoefficientSet& coeffs = config.coefficients;
  const int M = spec.categories, S = spec.states;
  PanelDataset data;
  data.categories = M;
  data.category_labels = config.category_labels;
  if (data.category_labels.empty())
    for (int m = 0; m < M; ++m) data.category_labels.push_back(std::to_string(m + 1));
  for (const auto& p : config.covariates) data.covariate_names.push_back(p.name);
  const std::vector<int> cols = resolve_covariates(spec, data.covariate_names);
  const CounterRng master = CounterRng(config.seed).split(0x51A);
  data.sequences.resize(config.N);

  parallel_for(static_cast<std::size_t>(config.N), [&](std::size_t i) {
    CounterRng rng = master.split(i);
    int T = config.T;
    if (config.T_min > 0) {
      CounterRng len = rng.split(1);
      T = config.T_min + static_cast<int>(len() % static_cast<std::uint64_t>(config.T - config.T_min + 1));
    }
    Sequence& seq = data.sequences[i];
    seq.id = std::to_string(i + 1);
    seq.times.resize(T);
    for (int t = 0; t < T; ++t) seq.times[t] = t + 1;
    seq.covariates.resize(T, static_cast<Eigen::Index>(config.covariates.size()));
    for (std::size_t p = 0; p < config.covariates.size(); ++p) {
      CounterRng cr = rng.split(100 + p);
      const auto x = draw_covariate(config.covariates[p], T, cr);
      for (int t = 0; t < T; ++t) seq.covariates(t, static_cast<Eigen::Index>(p)) = x[t];
    }
    seq.y.assign(T, 0);
    seq.states.assign(T, 0);
    const SequenceDesign d = design_sequence(spec, seq, cols);
    CounterRng zr = rng.split(2);
    const Eigen::VectorXd pi = initial_probs(coeffs, d.x_pi);
    int z = sample_categorical(zr, pi, S);
    int y_prev = 0;
    for (int t = 0; t < T; ++t) {
      if (t > 0) {
        const Eigen::MatrixXd A =
            transition_matrix(spec, coeffs, d.x_A.row(t).transpose(), y_prev);
        z = sample_categorical(zr, A.row(z), S);
      }
      const Eigen::MatrixXd B = emission_matrix(spec, coeffs, d.x_B.row(t).transpose(), y_prev);
      const int y = sample_categorical(zr, B.row(z), M);
      seq.states[t] = z;
      seq.y[t] = y;
      y_prev = y;
    }
    if (config.missing_rate > 0.0) {
      CounterRng mr = rng.split(3);
      for (int t = 0; t < T; ++t) {
        const bool keep_first = t == 0 && spec.edge_y_to_y;
        if (mr.uniform() < config.missing_rate && !keep_first) seq.y[t] = kMissing;
      }
    }
  });
  return data;
}

ModelSpec default_spec(int states) {
  return ModelSpec::from_formulas(states, 4, {"x"}, {"x"}, {"x", "lag"}, {"x", "lag"});
}

DgpConfig default_dgp(int N, int T, std::uint64_t seed, bool null_effect) {
  DgpConfig cfg;
  cfg.spec = default_spec(3);
  const int S = 3, M = 4;
  const auto qs_ptr = shared_basis(S);
  const auto qm_ptr = shared_basis(M);
  const SumToZeroBasis& qs = *qs_ptr;
  const SumToZeroBasis& qm = *qm_ptr;
  const double xs = null_effect ? 0.0 : 1.0;

  Eigen::MatrixXd pi(S - 1, 2);
  pi.col(0) = intercept_eta(kPi, S, qs);
  for (int j = 0; j < S - 1; ++j) pi(j, 1) = xs * kPiX[j];

  std::vector<Eigen::MatrixXd> A(S, Eigen::MatrixXd(S - 1, 2 + (M - 1)));
  std::vector<Eigen::MatrixXd> B(S, Eigen::MatrixXd(M - 1, 2 + (M - 1)));
  for (int s = 0; s < S; ++s) {
    A[s].col(0) = intercept_eta(kA[s], S, qs);
    B[s].col(0) = intercept_eta(kB[s], M, qm);
    for (int j = 0; j < S - 1; ++j) {
      A[s](j, 1) = xs * kAX[s][j];
      for (int c = 0; c < M - 1; ++c) A[s](j, 2 + c) = kLagCycle[(s + j + c) % 3];
    }
    for (int j = 0; j < M - 1; ++j) {
      B[s](j, 1) = xs * kBX[s][j];
      for (int c = 0; c < M - 1; ++c) B[s](j, 2 + c) = kLagCycle[(s + j + c + 1) % 3];
    }
  }
  cfg.coefficients = CoefficientSet(cfg.spec, pi, A, B);
  cfg.N = N;
  cfg.T = T;
  CovariateProcess x;
  x.name = "x";
  x.kind = CovariateKind::Trend;
  cfg.covariates = {x};
  cfg.seed = seed;
  return cfg;
}

DgpConfig intercept_only_dgp(int N, int T, std::uint64_t seed) {
  DgpConfig cfg;
  cfg.spec = ModelSpec::from_formulas(3, 4, {}, {}, {}, {});
  const auto qs_ptr = shared_basis(3);
  const auto qm_ptr = shared_basis(4);
  const SumToZeroBasis& qs = *qs_ptr;
  const SumToZeroBasis& qm = *qm_ptr;
  Eigen::MatrixXd pi = intercept_eta(kPi, 3, qs);
  std::vector<Eigen::MatrixXd> A, B;
  for (int s = 0; s < 3; ++s) {
    A.push_back(intercept_eta(kA[s], 3, qs));
    B.push_back(intercept_eta(kB[s], 4, qm));
  }
  cfg.coefficients = CoefficientSet(cfg.spec, pi, A, B);
  cfg.N = N;
  cfg.T = T;
  cfg.seed = seed;
  return cfg;
}

InterventionPlan make_plan(const std::vector<std::string>& target, double value, int start,
                           int horizon) {
  InterventionPlan plan;
  plan.covariates = target;
  plan.values = {std::vector<double>(target.size(), value)};
  plan.start = start;
  plan.horizon = horizon;
  return plan;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

double MultistartExperimentReport::pooled_rate(int states, double lambda) const {
  int runs = 0, successes = 0;
  for (const auto& r : rows) {
    if (r.states != states || r.lambda != lambda) continue;
    runs += r.runs;
    successes += r.successes;
  }
  require(runs > 0, ErrorCode::Validation, "no experiment rows for the requested S and lambda");
  return static_cast<double>(successes) / runs;
}

MultistartExperimentReport run_multistart_experiment(const MultistartExperimentConfig& config) {
  require(!config.states.empty() && !config.lambdas.empty() && !config.methods.empty(),
          ErrorCode::Validation, "experiment grids must be nonempty");
  require(config.replications >= 1, ErrorCode::Validation,
          "experiment.replications must be positive");
  const PanelDataset data = simulate_dataset(config.dgp);
  const CounterRng master = CounterRng(config.seed).split(0xE1);
  MultistartExperimentReport report;

  for (int S : config.states) {
    const ModelSpec spec = with_states(config.dgp.spec, S);
    const DesignedPanel panel = build_design(data, spec);
    CounterRng init_rng = master.split(static_cast<std::uint64_t>(S));
    const auto inits = sample_initial_values(spec, config.replications, init_rng);
    for (double lambda : config.lambdas) {
      const std::size_t n_methods = config.methods.size();
      const std::size_t R = static_cast<std::size_t>(config.replications);
      std::vector<double> ll(n_methods * R), secs(n_methods * R, 0.0);
      std::vector<char> failed(n_methods * R, 0);
      parallel_for(n_methods * R, [&](std::size_t k) {
        FitOptions opts = config.fit;
        opts.lambda = lambda;
        opts.method = config.methods[k / R];
        try {
          const FitResult f = fit(panel, spec, inits[k % R], opts);
          ll[k] = f.penalized_loglik;
          secs[k] = f.wall_seconds;
          if (!std::isfinite(ll[k])) failed[k] = 1;
        } catch (const Error&) {
          ll[k] = -std::numeric_limits<double>::infinity();
          failed[k] = 1;
        }
      });
      const std::vector<bool> ok = success_flags(ll);
      double best = -std::numeric_limits<double>::infinity();
      for (double v : ll)
        if (std::isfinite(v)) best = std::max(best, v);
      for (std::size_t mi = 0; mi < n_methods; ++mi) {
        MultistartRow row;
        row.states = S;
        row.lambda = lambda;
        row.method = config.methods[mi];
        row.runs = static_cast<int>(R);
        row.best_loglik = best;
        double total_secs = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
          const std::size_t k = mi * R + r;
          row.successes += ok[k] ? 1 : 0;
          row.failures += failed[k] ? 1 : 0;
          total_secs += secs[k];
          row.logliks.push_back(ll[k]);
        }
        row.success_rate = static_cast<double>(row.successes) / row.runs;
        row.mean_seconds = total_secs / row.runs;
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

CoverageExperimentReport run_rmse_coverage_experiment(const CoverageExperimentConfig& config) {
  require(!config.states.empty(), ErrorCode::Validation, "experiment.states must be nonempty");
  require(config.horizons >= 1, ErrorCode::Validation, "experiment.horizons must be positive");
  require(config.replications >= 1 && config.bootstrap >= 1 && config.starts >= 1,
          ErrorCode::Validation, "experiment counts must be positive");
  const int start = config.start >= 0 ? config.start : config.dgp.T - config.horizons;
  require(start >= 0 && start + config.horizons <= config.dgp.T, ErrorCode::Validation,
          "experiment.start and horizons do not fit inside T");
  const int K = config.horizons - 1;
  const InterventionPlan treat = make_plan(config.target, config.treat_value, start, K);
  const InterventionPlan control = make_plan(config.target, config.control_value, start, K);
  const CounterRng master = CounterRng(config.seed).split(0xC0);
  const int M = config.dgp.spec.categories;

  CoverageExperimentReport report;
  {
    DgpConfig big = config.dgp;
    big.N = config.truth_N;
    big.seed = master.split(0).key();
    const PanelDataset truth_data = simulate_dataset(big);
    report.truth = ace(big.spec, big.coefficients, truth_data, treat, control);
  }

  const std::size_t nS = config.states.size();
  const std::size_t R = static_cast<std::size_t>(config.replications);
  report.estimates.assign(nS, std::vector<std::vector<Eigen::VectorXd>>(R));
  report.lower = report.estimates;
  report.upper = report.estimates;
  std::vector<std::vector<char>> unreliable(nS, std::vector<char>(R, 0));
  std::vector<std::vector<char>> ok(nS, std::vector<char>(R, 0));

  parallel_for(R, [&](std::size_t r) {
    DgpConfig dgp = config.dgp;
    dgp.seed = master.split(1000 + r).key();
    const PanelDataset data = simulate_dataset(dgp);
    for (std::size_t si = 0; si < nS; ++si) {
      try {
        const ModelSpec spec = with_states(config.dgp.spec, config.states[si]);
        const DesignedPanel panel = build_design(data, spec);
        FitOptions fo = config.fit;
        fo.seed = master.split(2000 + r * 64 + si).key();
        const MultistartReport ms = multistart(panel, spec, config.starts, fo);
        const CoefficientSet& point = ms.best_fit().coefficients;
        const auto est = ace(spec, point, data, treat, control);
        BootstrapOptions bo;
        bo.replicates = config.bootstrap;
        bo.level = config.level;
        bo.random_starts = config.bootstrap_random_starts;
        bo.warm_start = true;
        bo.seed = master.split(3000 + r * 64 + si).key();
        bo.fit = config.bootstrap_fit;
        const BootstrapResult boot = bootstrap_ci(data, spec, point, treat, control, bo);
        auto& e = report.estimates[si][r];
        auto& lo = report.lower[si][r];
        auto& hi = report.upper[si][r];
        for (int h = 0; h <= K; ++h) {
          e.push_back(est[h].y);
          lo.push_back(boot.lower[h].row(0).transpose());
          hi.push_back(boot.upper[h].row(0).transpose());
        }
        unreliable[si][r] = boot.unreliable ? 1 : 0;
        ok[si][r] = 1;
      } catch (const Error&) {
        ok[si][r] = 0;
      }
    }
  });

  for (std::size_t si = 0; si < nS; ++si) {
    CoverageSummary sum;
    sum.states = config.states[si];
    double se_all = 0.0;
    int covered_all = 0, cells_all = 0;
    for (int h = 0; h <= K; ++h) {
      for (int m = 0; m < M; ++m) {
        CoverageCell cell;
        cell.states = config.states[si];
        cell.horizon = h;
        cell.category = m;
        cell.truth = report.truth[h].y[m];
        double se = 0.0, bias = 0.0;
        int covered = 0, n = 0;
        for (std::size_t r = 0; r < R; ++r) {
          if (!ok[si][r]) continue;
          const double est = report.estimates[si][r][h][m];
          se += (est - cell.truth) * (est - cell.truth);
          bias += est - cell.truth;
          covered += report.lower[si][r][h][m] <= cell.truth &&
                     cell.truth <= report.upper[si][r][h][m];
          ++n;
        }
        cell.replications = n;
        cell.rmse = n > 0 ? std::sqrt(se / n) : std::nan("");
        cell.bias = n > 0 ? bias / n : std::nan("");
        cell.coverage = n > 0 ? static_cast<double>(covered) / n : std::nan("");
        se_all += se;
        covered_all += covered;
        cells_all += n;
        report.cells.push_back(cell);
      }
    }
    for (std::size_t r = 0; r < R; ++r) {
      sum.replications += ok[si][r];
      sum.unreliable += unreliable[si][r];
    }
    sum.rmse = cells_all > 0 ? std::sqrt(se_all / cells_all) : std::nan("");
    sum.coverage = cells_all > 0 ? static_cast<double>(covered_all) / cells_all : std::nan("");
    report.summary.push_back(sum);
  }
  return report;
}

}  // namespace fanhmm
