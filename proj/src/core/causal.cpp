#include "core/causal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "core/error.hpp"
#include "core/inference.hpp"
#include "core/parallel.hpp"

namespace fanhmm {

namespace {

std::vector<int> plan_columns(const InterventionPlan& plan,
                              const std::vector<std::string>& dataset_covariates) {
  std::vector<int> cols;
  for (const auto& name : plan.covariates) {
    const auto it = std::find(dataset_covariates.begin(), dataset_covariates.end(), name);
    cols.push_back(static_cast<int>(it - dataset_covariates.begin()));
  }
  return cols;
}

CausalEstimate summarize(const Eigen::MatrixXd& sum, int n, int excluded, int time, int horizon) {
  CausalEstimate e;
  e.time = time;
  e.horizon = horizon;
  e.n_sequences = n;
  e.n_excluded = excluded;
  e.joint = sum / static_cast<double>(n);
  e.y_marginal = e.joint.colwise().sum().transpose();
  e.z_marginal = e.joint.rowwise().sum();
  e.y_given_z = Eigen::MatrixXd::Zero(e.joint.rows(), e.joint.cols());
  for (Eigen::Index s = 0; s < e.joint.rows(); ++s)
    if (e.z_marginal[s] > 0.0) e.y_given_z.row(s) = e.joint.row(s) / e.z_marginal[s];
  return e;
}

double block_distance(const RowMatrix& a, const RowMatrix& b) { return (a - b).squaredNorm(); }

}  // namespace

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

void InterventionPlan::validate(const std::vector<std::string>& dataset_covariates) const {
  require(!covariates.empty(), ErrorCode::Validation, "plan.covariates is empty");
  for (const auto& name : covariates) {
    require(name != "lag", ErrorCode::Validation,
            "plan.covariates cannot target the lagged response");
    require(std::find(dataset_covariates.begin(), dataset_covariates.end(), name) !=
                dataset_covariates.end(),
            ErrorCode::Validation,
            "plan.covariates names '" + name + "', which is not a covariate column");
  }
  require(start >= 0, ErrorCode::Validation, "plan.start must be at least 1");
  require(horizon >= 0, ErrorCode::Validation, "plan.horizon must be non-negative");
  require(values.size() == 1 || static_cast<int>(values.size()) == horizon + 1,
          ErrorCode::Validation, "plan.values needs one row or horizon + 1 rows");
  for (const auto& row : values) {
    require(row.size() == covariates.size(), ErrorCode::Validation,
            "plan.values rows need one value per targeted covariate");
    for (double v : row)
      require(std::isfinite(v), ErrorCode::Validation, "plan.values must be finite");
  }
  if (mode == InterventionMode::Atomic)
    require(!covariate_autocorrelation, ErrorCode::Unsupported,
            "atomic interventions with autocorrelated covariates need a model for "
            "p(x_t | x_{t-1}), which lies outside the FAN-HMM");
}

double InterventionPlan::value(int offset, int j) const {
  return values.size() == 1 ? values[0][j] : values[offset][j];
}

// ---------------------------------------------------------------------------
// Interventional distributions
// ---------------------------------------------------------------------------

std::vector<CausalEstimate> estimate_do_path(const ModelSpec& spec, const CoefficientSet& coeffs,
                                             const PanelDataset& dataset,
                                             const InterventionPlan& plan) {
  spec.validate();
  dataset.validate();
  plan.validate(dataset.covariate_names);
  require(dataset.categories == spec.categories, ErrorCode::Validation,
          "dataset and model disagree on the number of categories");
  if (spec.edge_y_to_y)
    require(plan.start > 0, ErrorCode::Validation,
            "plan.start = 1 masks the first response, which the y->y edge conditions on");
  const std::vector<int> model_cols = resolve_covariates(spec, dataset.covariate_names);
  const std::vector<int> target_cols = plan_columns(plan, dataset.covariate_names);
  const int S = spec.states, M = spec.categories, K = plan.horizon;
  const int t0 = plan.start;
  const std::size_t N = dataset.sequences.size();

  // D_{t0+h} per sequence and horizon; empty when the sequence is too short.
  std::vector<std::vector<Eigen::MatrixXd>> per_seq(N);
  parallel_for(N, [&](std::size_t i) {
    const Sequence& orig = dataset.sequences[i];
    const int T = orig.length();
    if (T <= t0) return;
    const int last = std::min(T - 1, t0 + K);
    Sequence seq = orig;
    const int set_until = plan.mode == InterventionMode::Recurring ? last : t0;
    for (int t = t0; t <= set_until; ++t)
      for (std::size_t j = 0; j < target_cols.size(); ++j)
        seq.covariates(t, target_cols[j]) = plan.value(t - t0, static_cast<int>(j));
    for (int t = t0; t < last; ++t) seq.y[t] = kMissing;
    if (spec.edge_y_to_y && seq.y[0] == kMissing)
      fail(ErrorCode::Validation, "sequence '" + seq.id + "' has a missing first response");
    const SequenceDesign design = design_sequence(spec, seq, model_cols);
    const ForwardResult fr = forward(spec, coeffs, design, last);
    for (int t = t0; t <= last; ++t) per_seq[i].push_back(fr.D[t]);
  });

  std::vector<CausalEstimate> out;
  for (int h = 0; h <= K; ++h) {
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(S, M);
    int used = 0;
    for (std::size_t i = 0; i < N; ++i) {
      if (static_cast<int>(per_seq[i].size()) <= h) continue;
      sum += per_seq[i][h];
      ++used;
    }
    require(used > 0, ErrorCode::Validation,
            "no sequence reaches time " + std::to_string(t0 + h + 1) + " required by the plan");
    out.push_back(summarize(sum, used, static_cast<int>(N) - used, t0 + h, h));
  }
  return out;
}

CausalEstimate estimate_do(const ModelSpec& spec, const CoefficientSet& coeffs,
                           const PanelDataset& dataset, const InterventionPlan& plan) {
  return estimate_do_path(spec, coeffs, dataset, plan).back();
}

std::vector<AceEstimate> ace(const ModelSpec& spec, const CoefficientSet& coeffs,
                             const PanelDataset& dataset, const InterventionPlan& treat,
                             const InterventionPlan& control) {
  require(treat.start == control.start && treat.horizon == control.horizon,
          ErrorCode::Validation, "treat and control plans must share start and horizon");
  const auto a = estimate_do_path(spec, coeffs, dataset, treat);
  const auto b = estimate_do_path(spec, coeffs, dataset, control);
  std::vector<AceEstimate> out(a.size());
  for (std::size_t h = 0; h < a.size(); ++h) {
    out[h].time = a[h].time;
    out[h].horizon = a[h].horizon;
    out[h].y = a[h].y_marginal - b[h].y_marginal;
    out[h].y_given_z = a[h].y_given_z - b[h].y_given_z;
    out[h].treat = a[h];
    out[h].control = b[h];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Label switching
// ---------------------------------------------------------------------------

double alignment_cost(const ModelSpec& spec, const CoefficientSet& reference,
                      const CoefficientSet& replicate, const std::vector<int>& perm) {
  const int S = spec.states;
  double cost = 0.0;
  for (int s = 0; s < S; ++s) {
    cost += (reference.gamma_pi().row(s) - replicate.gamma_pi().row(perm[s])).squaredNorm();
    const RowMatrix& ra = reference.gamma_A(s);
    const RowMatrix& pa = replicate.gamma_A(perm[s]);
    for (int r = 0; r < S; ++r) cost += (ra.row(r) - pa.row(perm[r])).squaredNorm();
    cost += block_distance(reference.gamma_B(s), replicate.gamma_B(perm[s]));
  }
  return cost;
}

std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  require(cost.cols() == n, ErrorCode::Shape, "assignment cost matrix must be square");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // Potentials u (rows), v (columns); p[j] is the row matched to column j,
  // with column 0 as the virtual start. 1-based internally.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) assignment[p[j] - 1] = j - 1;
  return assignment;
}

Alignment align_states(const ModelSpec& spec, const CoefficientSet& reference,
                       const CoefficientSet& replicate) {
  const int S = spec.states;
  require(reference.states() == S && replicate.states() == S &&
              reference.gamma_B(0).cols() == replicate.gamma_B(0).cols() &&
              reference.gamma_A(0).cols() == replicate.gamma_A(0).cols() &&
              reference.gamma_pi().cols() == replicate.gamma_pi().cols(),
          ErrorCode::Validation, "coefficient sets do not share the model spec");
  Alignment best;
  if (S < 4) {
    std::vector<int> perm(S);
    std::iota(perm.begin(), perm.end(), 0);
    best.cost = std::numeric_limits<double>::infinity();
    do {
      const double c = alignment_cost(spec, reference, replicate, perm);
      if (c < best.cost) {
        best.cost = c;
        best.permutation = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
  }
  Eigen::MatrixXd cost(S, S);
  for (int s = 0; s < S; ++s)
    for (int q = 0; q < S; ++q)
      cost(s, q) = (reference.gamma_pi().row(s) - replicate.gamma_pi().row(q)).squaredNorm() +
                   (reference.gamma_A(s).row(s) - replicate.gamma_A(q).row(q)).squaredNorm() +
                   block_distance(reference.gamma_B(s), replicate.gamma_B(q));
  best.permutation = hungarian(cost);
  best.cost = alignment_cost(spec, reference, replicate, best.permutation);
  return best;
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

double quantile(std::vector<double> values, double prob) {
  require(!values.empty(), ErrorCode::Validation, "quantile of an empty sample");
  require(prob >= 0.0 && prob <= 1.0, ErrorCode::Validation, "quantile level outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

void BootstrapOptions::validate() const {
  require(replicates >= 1, ErrorCode::Validation, "bootstrap.replicates must be positive");
  require(level > 0.0 && level < 1.0, ErrorCode::Validation,
          "bootstrap.level must lie in (0, 1)");
  require(random_starts >= 0, ErrorCode::Validation,
          "bootstrap.random_starts must be non-negative");
  require(warm_start || random_starts > 0, ErrorCode::Validation,
          "bootstrap needs the warm start or at least one random start");
  fit.validate();
}

BootstrapResult bootstrap_ci(const PanelDataset& dataset, const ModelSpec& spec,
                             const CoefficientSet& point, const InterventionPlan& treat,
                             const InterventionPlan& control, const BootstrapOptions& options) {
  options.validate();
  dataset.validate();
  treat.validate(dataset.covariate_names);
  control.validate(dataset.covariate_names);
  require(treat.start == control.start && treat.horizon == control.horizon,
          ErrorCode::Validation, "treat and control plans must share start and horizon");
  const int B = options.replicates;
  const std::size_t N = dataset.sequences.size();
  const CounterRng master = CounterRng(options.seed).split(0xB007);

  struct Replicate {
    bool ok = false;
    std::vector<AceEstimate> ace;
    Eigen::VectorXd params;
  };
  std::vector<Replicate> reps(B);
  parallel_for(static_cast<std::size_t>(B), [&](std::size_t b) {
    CounterRng rng = master.split(b);
    PanelDataset sample;
    sample.categories = dataset.categories;
    sample.category_labels = dataset.category_labels;
    sample.covariate_names = dataset.covariate_names;
    sample.sequences.reserve(N);
    for (std::size_t i = 0; i < N; ++i)
      sample.sequences.push_back(dataset.sequences[rng() % N]);
    try {
      const DesignedPanel panel = build_design(sample, spec);
      std::vector<CoefficientSet> inits;
      if (options.warm_start) inits.push_back(point);
      if (options.random_starts > 0) {
        CounterRng init_rng = rng.split(1);
        auto random = sample_initial_values(spec, options.random_starts, init_rng);
        inits.insert(inits.end(), random.begin(), random.end());
      }
      const MultistartReport report = multistart_from(panel, spec, inits, options.fit);
      const CoefficientSet& fitted = report.best_fit().coefficients;
      const Alignment al = align_states(spec, point, fitted);
      const CoefficientSet aligned = permute_states(spec, fitted, al.permutation);
      reps[b].ace = ace(spec, aligned, options.original_data ? dataset : sample, treat, control);
      reps[b].params = pack_parameters(aligned);
      reps[b].ok = true;
    } catch (const Error&) {
      reps[b].ok = false;
    }
  });

  BootstrapResult out;
  out.level = options.level;
  for (int b = 0; b < B; ++b) {
    if (!reps[b].ok) {
      ++out.dropped;
      continue;
    }
    out.replicates.push_back(std::move(reps[b].ace));
    out.aligned_parameters.push_back(std::move(reps[b].params));
    out.replicate_ids.push_back(b);
  }
  out.unreliable = out.dropped > 0.2 * B;
  require(!out.replicates.empty(), ErrorCode::Compute, "every bootstrap replicate failed");

  const double lo_p = 0.5 * (1.0 - options.level), hi_p = 1.0 - lo_p;
  const std::size_t H = out.replicates.front().size();
  const int S = spec.states, M = spec.categories;
  std::vector<double> cell(out.replicates.size());
  for (std::size_t h = 0; h < H; ++h) {
    Eigen::MatrixXd lo(1, M), hi(1, M), lo_z(S, M), hi_z(S, M);
    for (int m = 0; m < M; ++m) {
      for (std::size_t r = 0; r < cell.size(); ++r) cell[r] = out.replicates[r][h].y[m];
      lo(0, m) = quantile(cell, lo_p);
      hi(0, m) = quantile(cell, hi_p);
      for (int s = 0; s < S; ++s) {
        for (std::size_t r = 0; r < cell.size(); ++r) cell[r] = out.replicates[r][h].y_given_z(s, m);
        lo_z(s, m) = quantile(cell, lo_p);
        hi_z(s, m) = quantile(cell, hi_p);
      }
    }
    out.lower.push_back(lo);
    out.upper.push_back(hi);
    out.lower_given_z.push_back(lo_z);
    out.upper_given_z.push_back(hi_z);
  }
  return out;
}

}  // namespace fanhmm
