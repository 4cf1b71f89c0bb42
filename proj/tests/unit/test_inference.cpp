#include <doctest.h>

#include <map>
#include <numeric>

#include "core/error.hpp"
#include "core/inference.hpp"
#include "support.hpp"

using namespace fanhmm;
using namespace fanhmm::testing;

namespace {

/// Brute-force posterior p(z_t = s, y_t = m | observed) for every t.
std::vector<Eigen::MatrixXd> brute_posteriors(const ModelSpec& spec, const CoefficientSet& c,
                                              const SequenceDesign& d) {
  const int T = d.length();
  std::vector<Eigen::MatrixXd> post(T, Eigen::MatrixXd::Zero(spec.states, spec.categories));
  double total = 0.0;
  enumerate_paths(spec, c, d, T, [&](const std::vector<int>& z, const std::vector<int>& y, double p) {
    total += p;
    for (int t = 0; t < T; ++t) post[t](z[t], y[t]) += p;
  });
  for (auto& m : post) m /= total;
  return post;
}

Instance homogeneous_instance() {
  Instance inst;
  inst.spec = ModelSpec::from_formulas(2, 3, {}, {}, {}, {});
  Eigen::VectorXd pi(2);
  pi << 0.8, 0.2;
  Eigen::MatrixXd A(2, 2), B(2, 3);
  A << 0.85, 0.15, 0.1, 0.9;
  B << 0.8, 0.05, 0.15, 0.15, 0.5, 0.35;
  inst.coeffs = intercept_coefficients(inst.spec, pi, A, B);
  inst.data.categories = 3;
  Sequence seq;
  seq.id = "1";
  seq.y = {0, kMissing, 2, 1};
  seq.covariates.resize(4, 0);
  inst.data.sequences.push_back(seq);
  inst.panel = build_design(inst.data, inst.spec);
  return inst;
}

}  // namespace

TEST_CASE("homogeneous loglik equals path enumeration") {
  const Instance inst = homogeneous_instance();
  const SequenceDesign& d = inst.panel.sequences[0];
  const double ll = forward(inst.spec, inst.coeffs, d).loglik;
  CHECK(std::abs(ll - brute_force_loglik(inst.spec, inst.coeffs, d)) < 1e-10);
}

TEST_CASE("random FAN instances match path enumeration") {
  CounterRng rng(101);
  InstanceShape shape;
  shape.max_length = 5;
  for (int rep = 0; rep < 40; ++rep) {
    const Instance inst = random_instance(rng, shape);
    for (const auto& d : inst.panel.sequences) {
      const ForwardResult fr = forward(inst.spec, inst.coeffs, d);
      CHECK(std::abs(fr.loglik - brute_force_loglik(inst.spec, inst.coeffs, d)) < 1e-10);
      for (int t = 0; t < d.length(); ++t) {
        CHECK(std::abs(fr.D[t].sum() - 1.0) < 1e-12);
        CHECK(std::abs(fr.alpha_norm.row(t).sum() - 1.0) < 1e-12);
        CHECK(fr.alpha_norm.row(t).minCoeff() >= 0.0);
      }
    }
  }
}

TEST_CASE("forward with a last time truncates the sequence") {
  CounterRng rng(4);
  InstanceShape shape;
  shape.max_length = 6;
  const Instance inst = random_instance(rng, shape);
  for (const auto& d : inst.panel.sequences) {
    const int T = d.length();
    for (int last = 0; last < T; ++last) {
      SequenceDesign cut = d;
      cut.y.resize(last + 1);
      cut.x_A.conservativeResize(last + 1, Eigen::NoChange);
      cut.x_B.conservativeResize(last + 1, Eigen::NoChange);
      CHECK(std::abs(forward(inst.spec, inst.coeffs, d, last).loglik -
                     brute_force_loglik(inst.spec, inst.coeffs, cut)) < 1e-10);
    }
    CHECK_THROWS_AS(forward(inst.spec, inst.coeffs, d, T), Error);
  }
}

TEST_CASE("forward-backward posteriors match enumeration") {
  CounterRng rng(55);
  InstanceShape shape;
  shape.max_length = 5;
  shape.missing_rate = 0.35;
  for (int rep = 0; rep < 25; ++rep) {
    const Instance inst = rep == 0 ? homogeneous_instance() : random_instance(rng, shape);
    for (const auto& d : inst.panel.sequences) {
      const ForwardResult fr = forward(inst.spec, inst.coeffs, d);
      const BackwardResult br = backward(inst.spec, inst.coeffs, d);
      const auto oracle = brute_posteriors(inst.spec, inst.coeffs, d);
      for (int t = 0; t < d.length(); ++t) {
        Eigen::MatrixXd filt = fr.D[t];
        if (d.y[t] != kMissing) {
          filt.setZero();
          filt.col(d.y[t]) = fr.alpha_norm.row(t).transpose();
        }
        const Eigen::MatrixXd post = filt.cwiseProduct(br.beta[t]);
        CHECK((post - oracle[t]).cwiseAbs().maxCoeff() < 1e-10);
      }
    }
  }
}

TEST_CASE("expected counts match enumeration") {
  CounterRng rng(77);
  InstanceShape shape;
  shape.max_length = 4;
  shape.missing_rate = 0.4;
  for (int rep = 0; rep < 25; ++rep) {
    const Instance inst = rep == 0 ? homogeneous_instance() : random_instance(rng, shape);
    const int S = inst.spec.states, M = inst.spec.categories;
    for (const auto& d : inst.panel.sequences) {
      const int T = d.length();
      // keyed by (t, lag) with lag = -1 for the sum over lags
      std::map<std::pair<int, int>, Eigen::MatrixXd> trans, emis;
      Eigen::VectorXd initial = Eigen::VectorXd::Zero(S);
      double total = 0.0;
      const auto add = [](std::map<std::pair<int, int>, Eigen::MatrixXd>& map,
                          std::pair<int, int> key, int rows, int cols, int i, int j, double p) {
        auto it = map.find(key);
        if (it == map.end()) it = map.emplace(key, Eigen::MatrixXd::Zero(rows, cols)).first;
        it->second(i, j) += p;
      };
      enumerate_paths(inst.spec, inst.coeffs, d, T,
                      [&](const std::vector<int>& z, const std::vector<int>& y, double p) {
                        total += p;
                        initial[z[0]] += p;
                        add(emis, {0, kNoLag}, S, M, z[0], y[0], p);
                        for (int t = 1; t < T; ++t) {
                          for (int lag : {kNoLag, y[t - 1]}) {
                            add(trans, {t, lag}, S, S, z[t - 1], z[t], p);
                            add(emis, {t, lag}, S, M, z[t], y[t], p);
                          }
                        }
                      });
      const ExpectedCounts counts = estep(inst.spec, inst.coeffs, d);
      CHECK((counts.initial - initial / total).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(std::abs(counts.initial.sum() - 1.0) < 1e-12);
      std::map<int, double> trans_mass;
      for (const auto& tc : counts.transitions) {
        CHECK((tc.weight - trans.at({tc.time, tc.lag}) / total).cwiseAbs().maxCoeff() < 1e-10);
        CHECK(tc.weight.minCoeff() >= 0.0);
        trans_mass[tc.time] += tc.weight.sum();
      }
      for (const auto& [t, mass] : trans_mass) CHECK(std::abs(mass - 1.0) < 1e-12);
      CHECK(static_cast<int>(trans_mass.size()) == T - 1);
      for (const auto& ec : counts.emissions)
        CHECK((ec.weight - emis.at({ec.time, ec.lag}) / total).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("single-time and single-state edge cases") {
  CounterRng rng(9);
  const ModelSpec spec = ModelSpec::from_formulas(1, 3, {"x"}, {}, {"x"}, {"x"});
  const CoefficientSet c = random_coefficients(spec, rng);
  PanelDataset data = random_dataset(spec, rng, 3, 5, 0.3);
  data.sequences[0].y.resize(1);
  data.sequences[0].times.resize(1);
  data.sequences[0].covariates.conservativeResize(1, Eigen::NoChange);
  const DesignedPanel panel = build_design(data, spec);
  const SequenceDesign& one = panel.sequences[0];
  const BackwardResult br = backward(spec, c, one);
  REQUIRE(br.beta.size() == 1);
  const ExpectedCounts counts = estep(spec, c, one);
  CHECK(counts.transitions.empty());
  CHECK(std::abs(counts.initial[0] - 1.0) < 1e-15);
  const LoglikGradient g = loglik_gradient(spec, c, panel, 0.0);
  CHECK(g.gradient.size() == static_cast<Eigen::Index>(spec.parameter_count()));
  for (const auto& d : panel.sequences) {
    const ExpectedCounts e = estep(spec, c, d);
    for (const auto& tc : e.transitions) CHECK(std::abs(tc.weight.sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("dataset loglik adds the penalty") {
  CounterRng rng(31);
  InstanceShape shape;
  for (int rep = 0; rep < 10; ++rep) {
    const Instance inst = random_instance(rng, shape);
    const DatasetLoglik l0 = loglik_dataset(inst.spec, inst.coeffs, inst.panel, 0.0);
    const DatasetLoglik l1 = loglik_dataset(inst.spec, inst.coeffs, inst.panel, 0.1);
    double sum = 0.0;
    for (const auto& d : inst.panel.sequences) sum += forward(inst.spec, inst.coeffs, d).loglik;
    CHECK(std::abs(l0.penalized - sum) < 1e-10);
    CHECK(l0.penalized == l0.unpenalized);
    const double norm2 = pack_parameters(inst.coeffs).squaredNorm();
    CHECK(std::abs(l1.penalized - (sum - 0.05 * norm2)) < 1e-10);
    CHECK(l1.per_sequence.size() == inst.panel.sequences.size());
  }
  const ModelSpec spec = ModelSpec::from_formulas(2, 3, {}, {}, {}, {});
  const Instance z = homogeneous_instance();
  const CoefficientSet zero = CoefficientSet::zeros(spec);
  const auto a = loglik_dataset(spec, zero, z.panel, 0.0), b = loglik_dataset(spec, zero, z.panel, 7.0);
  CHECK(a.penalized == b.penalized);
}

TEST_CASE("gradient matches central differences") {
  CounterRng rng(1234);
  for (int rep = 0; rep < 16; ++rep) {
    InstanceShape shape;
    shape.edges = rep % 4;
    shape.max_sequences = 4;
    const Instance inst = random_instance(rng, shape);
    const double lambda = rep % 2 == 0 ? 0.0 : 0.1;
    const Eigen::VectorXd x = pack_parameters(inst.coeffs);
    const auto f = [&](const Eigen::VectorXd& v) {
      return loglik_dataset(inst.spec, unpack_parameters(inst.spec, v), inst.panel, lambda).penalized;
    };
    const LoglikGradient g = loglik_gradient(inst.spec, inst.coeffs, inst.panel, lambda);
    CHECK(std::abs(g.penalized - f(x)) < 1e-10);
    CHECK(gradient_violation(g.gradient, central_differences(f, x)) < 1.0);
  }
}

TEST_CASE("state relabeling leaves the loglik unchanged") {
  CounterRng rng(66);
  InstanceShape shape;
  shape.max_states = 4;
  for (int rep = 0; rep < 20; ++rep) {
    const Instance inst = random_instance(rng, shape);
    std::vector<int> perm(inst.spec.states);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = inst.spec.states - 1; i > 0; --i) std::swap(perm[i], perm[uniform_int(rng, 0, i)]);
    const CoefficientSet p = permute_states(inst.spec, inst.coeffs, perm);
    const double a = loglik_dataset(inst.spec, inst.coeffs, inst.panel, 0.1).penalized;
    const double b = loglik_dataset(inst.spec, p, inst.panel, 0.1).penalized;
    CHECK(std::abs(a - b) < 1e-10);
  }
}

TEST_CASE("masking a response mixes the forced-value runs") {
  CounterRng rng(404);
  InstanceShape shape;
  shape.missing_rate = 0.0;
  shape.max_length = 6;
  int checked = 0;
  for (int rep = 0; rep < 30; ++rep) {
    const Instance inst = random_instance(rng, shape);
    const int M = inst.spec.categories;
    for (const auto& d : inst.panel.sequences) {
      const int T = d.length();
      if (T < 3) continue;
      const int t = uniform_int(rng, 1, T - 2);
      SequenceDesign masked = d;
      masked.y[t] = kMissing;
      const ForwardResult fm = forward(inst.spec, inst.coeffs, masked, t + 1);
      // predictive p(y_t = m | observed before t)
      const Eigen::VectorXd pred = fm.D[t].colwise().sum().transpose();
      Eigen::MatrixXd mix = Eigen::MatrixXd::Zero(inst.spec.states, M);
      for (int m = 0; m < M; ++m) {
        SequenceDesign forced = d;
        forced.y[t] = m;
        mix += pred[m] * forward(inst.spec, inst.coeffs, forced, t + 1).D[t + 1];
      }
      CHECK((fm.D[t + 1] - mix).cwiseAbs().maxCoeff() < 1e-10);
      ++checked;
    }
  }
  CHECK(checked > 10);
}

TEST_CASE("block objective gradient matches central differences") {
  CounterRng rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    SoftmaxRegressionData data;
    data.dim = uniform_int(rng, 2, 4);
    data.k = uniform_int(rng, 1, 3);
    std::vector<double> x(data.k), w(data.dim);
    for (int i = 0; i < 12; ++i) {
      for (auto& v : x) v = rng.normal();
      x[0] = 1.0;
      for (auto& v : w) v = rng.uniform();
      data.add(x.data(), w.data());
    }
    const SumToZeroBasis basis = build_basis(data.dim);
    Eigen::MatrixXd eta(data.dim - 1, data.k);
    for (Eigen::Index i = 0; i < eta.size(); ++i) eta.data()[i] = rng.normal();
    const double lambda = rep % 2 == 0 ? 0.0 : 0.1;
    const BlockObjective obj = mstep_objective_and_gradient(data, basis, eta, lambda);
    const auto f = [&](const Eigen::VectorXd& v) {
      const Eigen::MatrixXd e = Eigen::Map<const Eigen::MatrixXd>(v.data(), eta.rows(), eta.cols());
      return mstep_objective_and_gradient(data, basis, e, lambda).value;
    };
    const Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(eta.data(), eta.size());
    const Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(obj.gradient.data(), eta.size());
    CHECK(gradient_violation(g, central_differences(f, x0)) < 1.0);

    // independent evaluation of the objective value
    double value = -0.5 * lambda * eta.squaredNorm();
    const Eigen::MatrixXd gamma = basis.q * eta;
    for (std::size_t i = 0; i < data.rows(); ++i) {
      const Eigen::VectorXd xi = Eigen::Map<const Eigen::VectorXd>(&data.x[i * data.k], data.k);
      const RowMatrix gm = gamma;
      const auto p = softmax_of(gm, xi);
      for (int j = 0; j < data.dim; ++j) value += data.w[i * data.dim + j] * std::log(p[j]);
    }
    CHECK(std::abs(value - obj.value) < 1e-10);
  }
}

TEST_CASE("dataset E-step aggregates counts at the current loglik") {
  CounterRng rng(88);
  InstanceShape shape;
  for (int rep = 0; rep < 5; ++rep) {
    const Instance inst = random_instance(rng, shape);
    const MstepData md = estep_dataset(inst.spec, inst.coeffs, inst.panel);
    CHECK(std::abs(md.loglik - loglik_dataset(inst.spec, inst.coeffs, inst.panel, 0.0).penalized) <
          1e-10);
    double initial_mass = 0.0;
    for (double w : md.initial.w) initial_mass += w;
    CHECK(std::abs(initial_mass - static_cast<double>(inst.panel.sequences.size())) < 1e-10);
  }
}
