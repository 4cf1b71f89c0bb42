#pragma once

// Generators and brute-force oracles shared by the unit and acceptance tests.
// Oracles work from the model definition directly (softmax of gamma times the
// completed design row) and never call the inference engine.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "core/inference.hpp"
#include "core/model.hpp"
#include "core/rng.hpp"

namespace fanhmm::testing {

inline int uniform_int(CounterRng& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

struct Instance {
  ModelSpec spec;
  CoefficientSet coeffs;
  PanelDataset data;
  DesignedPanel panel;
};

struct InstanceShape {
  int max_states = 3;
  int max_categories = 4;
  int max_length = 6;
  int max_sequences = 5;
  double missing_rate = 0.25;
  int edges = -1;  // -1 random, else bit 0 = y->z, bit 1 = y->y
  double coef_scale = 1.0;
};

inline ModelSpec random_spec(CounterRng& rng, const InstanceShape& shape) {
  const int S = uniform_int(rng, 1, shape.max_states);
  const int M = uniform_int(rng, 2, shape.max_categories);
  const int edges = shape.edges >= 0 ? shape.edges : uniform_int(rng, 0, 3);
  std::vector<std::string> covs{"x", "w"};
  std::vector<std::string> initial, transition, emission;
  if (rng.uniform() < 0.5) initial.push_back("x");
  if (rng.uniform() < 0.7) transition.push_back("x");
  if (rng.uniform() < 0.7) emission.push_back("w");
  if (rng.uniform() < 0.3) emission.push_back("x:w");
  if (edges & 1) {
    transition.push_back("lag");
    if (rng.uniform() < 0.5) transition.push_back("x:lag");
  }
  if (edges & 2) {
    emission.push_back("lag");
    if (rng.uniform() < 0.5) emission.push_back("w:lag");
  }
  return ModelSpec::from_formulas(S, M, covs, initial, transition, emission);
}

inline CoefficientSet random_coefficients(const ModelSpec& spec, CounterRng& rng,
                                          double scale = 1.0) {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(spec.parameter_count()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = rng.normal(0.0, scale);
  return unpack_parameters(spec, flat);
}

inline PanelDataset random_dataset(const ModelSpec& spec, CounterRng& rng, int N, int max_length,
                                   double missing_rate) {
  PanelDataset data;
  data.categories = spec.categories;
  for (int m = 0; m < spec.categories; ++m) data.category_labels.push_back(std::to_string(m + 1));
  data.covariate_names = spec.covariates;
  for (int i = 0; i < N; ++i) {
    Sequence seq;
    seq.id = std::to_string(i + 1);
    const int T = uniform_int(rng, 1, max_length);
    seq.covariates.resize(T, static_cast<Eigen::Index>(spec.covariates.size()));
    for (int t = 0; t < T; ++t) {
      seq.times.push_back(t + 1);
      for (Eigen::Index c = 0; c < seq.covariates.cols(); ++c)
        seq.covariates(t, c) = rng.normal();
      int y = uniform_int(rng, 0, spec.categories - 1);
      const bool first_fixed = t == 0 && spec.edge_y_to_y;
      if (!first_fixed && rng.uniform() < missing_rate) y = kMissing;
      seq.y.push_back(y);
    }
    data.sequences.push_back(std::move(seq));
  }
  return data;
}

inline Instance random_instance(CounterRng& rng, const InstanceShape& shape) {
  Instance inst;
  inst.spec = random_spec(rng, shape);
  inst.coeffs = random_coefficients(inst.spec, rng, shape.coef_scale);
  inst.data = random_dataset(inst.spec, rng, uniform_int(rng, 1, shape.max_sequences),
                             shape.max_length, shape.missing_rate);
  inst.panel = build_design(inst.data, inst.spec);
  return inst;
}

// ---------------------------------------------------------------------------
// Direct probability evaluation
// ---------------------------------------------------------------------------

inline std::vector<double> softmax_of(const RowMatrix& gamma, const Eigen::VectorXd& x) {
  std::vector<double> v(gamma.rows());
  double mx = -INFINITY;
  for (Eigen::Index r = 0; r < gamma.rows(); ++r) {
    v[r] = gamma.row(r).dot(x);
    mx = std::max(mx, v[r]);
  }
  double total = 0.0;
  for (double& e : v) total += (e = std::exp(e - mx));
  for (double& e : v) e /= total;
  return v;
}

/// Lag columns keep their covariate product only when y_prev matches.
inline Eigen::VectorXd completed(const std::vector<DesignTerm>& terms, const double* row,
                                 int y_prev) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(terms.size()));
  for (std::size_t j = 0; j < terms.size(); ++j)
    x[j] = terms[j].lag == kNoLag ? row[j] : (terms[j].lag == y_prev ? row[j] : 0.0);
  return x;
}

inline double prob_initial(const CoefficientSet& c, const SequenceDesign& d, int s) {
  return softmax_of(c.gamma_pi(), d.x_pi)[s];
}

inline double prob_transition(const ModelSpec& spec, const CoefficientSet& c,
                              const SequenceDesign& d, int t, int y_prev, int from, int to) {
  const Eigen::VectorXd x = completed(spec.transition_terms, d.x_A.row(t).data(), y_prev);
  return softmax_of(c.gamma_A(from), x)[to];
}

inline double prob_emission(const ModelSpec& spec, const CoefficientSet& c,
                            const SequenceDesign& d, int t, int y_prev, int s, int m) {
  const Eigen::VectorXd x = completed(spec.emission_terms, d.x_B.row(t).data(), y_prev);
  return softmax_of(c.gamma_B(s), x)[m];
}

/*!
 * Enumerates every latent path and every completion of the missing responses
 * of one sequence, calling visit(z, y, p) with the joint probability of the
 * completed data. Under the y->y edge the first response is conditioned on
 * (it contributes no emission factor).
 */
inline void enumerate_paths(const ModelSpec& spec, const CoefficientSet& c,
                            const SequenceDesign& d, int T,
                            const std::function<void(const std::vector<int>&,
                                                     const std::vector<int>&, double)>& visit) {
  const int S = spec.states, M = spec.categories;
  std::vector<int> missing;
  for (int t = 0; t < T; ++t)
    if (d.y[t] == kMissing) missing.push_back(t);
  std::vector<int> z(T, 0), y(d.y.begin(), d.y.begin() + T);
  long long paths = 1, fills = 1;
  for (int t = 0; t < T; ++t) paths *= S;
  for (std::size_t k = 0; k < missing.size(); ++k) fills *= M;
  for (long long fi = 0; fi < fills; ++fi) {
    long long code = fi;
    for (int t : missing) {
      y[t] = static_cast<int>(code % M);
      code /= M;
    }
    for (long long pi = 0; pi < paths; ++pi) {
      long long pc = pi;
      for (int t = 0; t < T; ++t) {
        z[t] = static_cast<int>(pc % S);
        pc /= S;
      }
      double p = prob_initial(c, d, z[0]);
      if (!spec.edge_y_to_y) p *= prob_emission(spec, c, d, 0, kNoLag, z[0], y[0]);
      for (int t = 1; t < T; ++t) {
        p *= prob_transition(spec, c, d, t, y[t - 1], z[t - 1], z[t]);
        p *= prob_emission(spec, c, d, t, y[t - 1], z[t], y[t]);
      }
      visit(z, y, p);
    }
  }
}

inline double brute_force_loglik(const ModelSpec& spec, const CoefficientSet& c,
                                 const SequenceDesign& d) {
  double total = 0.0;
  enumerate_paths(spec, c, d, d.length(),
                  [&](const std::vector<int>&, const std::vector<int>&, double p) { total += p; });
  return std::log(total);
}

// ---------------------------------------------------------------------------
// Numerics
// ---------------------------------------------------------------------------

/// Central differences with step h.
inline Eigen::VectorXd central_differences(const std::function<double(const Eigen::VectorXd&)>& f,
                                           const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

/// Largest violation of |a - b| <= max(rel * |b|, floor), as a ratio (< 1 passes).
inline double gradient_violation(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric,
                                 double rel = 1e-6, double floor = 1e-8) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double tol = std::max(rel * std::abs(numeric[i]), floor);
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / tol);
  }
  return worst;
}

/// Textbook Householder QR; returns the thin Q (rows x cols).
inline Eigen::MatrixXd householder_thin_q(Eigen::MatrixXd a) {
  const Eigen::Index m = a.rows(), n = a.cols();
  std::vector<Eigen::VectorXd> reflectors;
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::VectorXd v = a.block(k, k, m - k, 1);
    const double alpha = (v[0] >= 0 ? -1.0 : 1.0) * v.norm();
    v[0] -= alpha;
    const double vn = v.norm();
    if (vn > 0) v /= vn;
    reflectors.push_back(v);
    a.block(k, k, m - k, n - k) -= 2.0 * v * (v.transpose() * a.block(k, k, m - k, n - k));
  }
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(m, n);
  for (Eigen::Index k = n - 1; k >= 0; --k) {
    const Eigen::VectorXd& v = reflectors[k];
    q.block(k, 0, m - k, n) -= 2.0 * v * (v.transpose() * q.block(k, 0, m - k, n));
  }
  return q;
}

inline Eigen::MatrixXd contrast_matrix(int dim) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(dim, dim - 1);
  c.topRows(dim - 1).setIdentity();
  c.row(dim - 1).setConstant(-1.0);
  return c;
}

/// Flips columns so the first entry with |v| > 1e-12 is positive.
inline Eigen::MatrixXd first_nonzero_positive(Eigen::MatrixXd q) {
  for (Eigen::Index c = 0; c < q.cols(); ++c) {
    for (Eigen::Index r = 0; r < q.rows(); ++r) {
      if (std::abs(q(r, c)) > 1e-12) {
        if (q(r, c) < 0) q.col(c) *= -1.0;
        break;
      }
    }
  }
  return q;
}

/// Intercept-only coefficients reproducing the given probabilities. Each
/// target row becomes log p - mean(log p), projected onto the basis.
inline CoefficientSet intercept_coefficients(const ModelSpec& spec, const Eigen::VectorXd& pi,
                                             const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  const auto centered = [](const Eigen::VectorXd& p) {
    Eigen::VectorXd l = p.array().log();
    return Eigen::VectorXd(l.array() - l.mean());
  };
  const Eigen::MatrixXd qs = first_nonzero_positive(householder_thin_q(contrast_matrix(spec.states)));
  const Eigen::MatrixXd qm =
      first_nonzero_positive(householder_thin_q(contrast_matrix(spec.categories)));
  Eigen::MatrixXd eta_pi = qs.transpose() * centered(pi);
  std::vector<Eigen::MatrixXd> eta_A, eta_B;
  for (int s = 0; s < spec.states; ++s) {
    eta_A.push_back(qs.transpose() * centered(A.row(s).transpose()));
    eta_B.push_back(qm.transpose() * centered(B.row(s).transpose()));
  }
  return CoefficientSet(spec, eta_pi, eta_A, eta_B);
}

/// Intercept-only three-state, four-category reference model.
inline Eigen::VectorXd reference_pi() { return (Eigen::VectorXd(3) << 0.8, 0.1, 0.1).finished(); }
inline Eigen::MatrixXd reference_A() {
  return (Eigen::MatrixXd(3, 3) << 0.85, 0.1, 0.05, 0.1, 0.8, 0.1, 0.05, 0.05, 0.9).finished();
}
inline Eigen::MatrixXd reference_B() {
  return (Eigen::MatrixXd(3, 4) << 0.8, 0.05, 0.1, 0.05, 0.15, 0.5, 0.25, 0.1, 0.1, 0.05, 0.25,
          0.6)
      .finished();
}

}  // namespace fanhmm::testing
