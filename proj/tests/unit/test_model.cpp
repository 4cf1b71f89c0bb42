#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "core/error.hpp"
#include "core/model.hpp"
#include "support.hpp"

using namespace fanhmm;
using namespace fanhmm::testing;

namespace {

ModelSpec intercept_spec(int S, int M) { return ModelSpec::from_formulas(S, M, {}, {}, {}, {}); }

}  // namespace

TEST_CASE("intercept-only probabilities reproduce their targets") {
  const ModelSpec spec = intercept_spec(3, 4);
  const CoefficientSet c = intercept_coefficients(spec, reference_pi(), reference_A(), reference_B());
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
  CHECK((initial_probs(c, one) - reference_pi()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((transition_matrix(spec, c, one, 2) - reference_A()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((emission_matrix(spec, c, one, kMissing) - reference_B()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero working parameters give uniform rows") {
  const ModelSpec spec = ModelSpec::from_formulas(3, 4, {"x"}, {"x"}, {"x", "lag"}, {"x"});
  const CoefficientSet c = CoefficientSet::zeros(spec);
  Eigen::VectorXd xa(spec.k_A());
  xa.setConstant(0.7);
  CHECK((initial_probs(c, Eigen::VectorXd::Constant(2, 3.0)).array() - 1.0 / 3).abs().maxCoeff() <
        1e-15);
  CHECK((transition_matrix(spec, c, xa, 1).array() - 1.0 / 3).abs().maxCoeff() < 1e-15);
  CHECK((emission_matrix(spec, c, Eigen::VectorXd::Constant(2, 1.0), 0).array() - 0.25)
            .abs()
            .maxCoeff() < 1e-15);
}

TEST_CASE("rows are simplices on random coefficients") {
  CounterRng rng(21);
  InstanceShape shape;
  for (int rep = 0; rep < 30; ++rep) {
    const ModelSpec spec = random_spec(rng, shape);
    const CoefficientSet c = random_coefficients(spec, rng, 2.0);
    Eigen::VectorXd xa(spec.k_A()), xb(spec.k_B());
    for (auto& v : xa) v = rng.normal();
    for (auto& v : xb) v = rng.normal();
    const int y_prev = uniform_int(rng, 0, spec.categories - 1);
    const Eigen::MatrixXd A = transition_matrix(spec, c, xa, y_prev);
    const Eigen::MatrixXd B = emission_matrix(spec, c, xb, y_prev);
    CHECK((A.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK((B.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(A.minCoeff() > 0.0);
    CHECK(B.minCoeff() > 0.0);
    CHECK(B.maxCoeff() < 1.0);
  }
}

TEST_CASE("edges off make rows independent of the previous response") {
  CounterRng rng(2);
  const ModelSpec spec = ModelSpec::from_formulas(3, 3, {"x"}, {}, {"x"}, {"x"});
  const CoefficientSet c = random_coefficients(spec, rng);
  Eigen::VectorXd x(2);
  x << 1.0, -0.4;
  CHECK(transition_matrix(spec, c, x, 1) == transition_matrix(spec, c, x, 2));
  CHECK(emission_matrix(spec, c, x, 0) == emission_matrix(spec, c, x, 2));
}

TEST_CASE("lag dummies use the first category as reference") {
  const ModelSpec spec = ModelSpec::from_formulas(2, 3, {"x"}, {}, {}, {"lag", "x:lag"});
  // intercept, lag[2], lag[3], x:lag[2], x:lag[3] (1-based labels)
  REQUIRE(spec.k_B() == 5);
  Eigen::VectorXd row(5);
  row << 1.0, 1.0, 1.0, 2.0, 2.0;
  CHECK(complete_row(spec.emission_terms, row, 1) ==
        (Eigen::VectorXd(5) << 1.0, 1.0, 0.0, 2.0, 0.0).finished());
  CHECK(complete_row(spec.emission_terms, row, 2) ==
        (Eigen::VectorXd(5) << 1.0, 0.0, 1.0, 0.0, 2.0).finished());
  CHECK(complete_row(spec.emission_terms, row, 0) ==
        (Eigen::VectorXd(5) << 1.0, 0.0, 0.0, 0.0, 0.0).finished());
  CHECK_THROWS_AS(complete_row(spec.emission_terms, row, kMissing), Error);
  CHECK(term_label(spec.emission_terms[4], spec.covariates) == "x:lag[3]");
}

TEST_CASE("column order is intercept, mains, lags, interactions") {
  const ModelSpec spec =
      ModelSpec::from_formulas(2, 3, {"x", "w"}, {}, {"x:w", "lag", "w"}, {"x"});
  std::vector<std::string> labels;
  for (const auto& t : spec.transition_terms) labels.push_back(term_label(t, spec.covariates));
  CHECK(labels ==
        std::vector<std::string>{"(intercept)", "w", "lag[2]", "lag[3]", "x:w"});
  CHECK(spec.edge_y_to_z);
  CHECK_FALSE(spec.edge_y_to_y);
  CHECK_THROWS_AS(ModelSpec::from_formulas(2, 3, {"x"}, {"lag"}, {}, {}), Error);
  CHECK_THROWS_AS(ModelSpec::from_formulas(2, 3, {"x"}, {}, {"zz"}, {}), Error);
}

TEST_CASE("parameter count matches a hand count") {
  // (S-1)K_pi + S(S-1)K_A + S(M-1)K_B
  const ModelSpec spec = ModelSpec::from_formulas(3, 4, {"x"}, {}, {"x"}, {"x"});
  CHECK(spec.parameter_count() == 2 * 1 + 3 * 2 * 2 + 3 * 3 * 2);
  const ModelSpec spec3 = ModelSpec::from_formulas(3, 3, {"x"}, {}, {"x"}, {"x"});
  CHECK(spec3.parameter_count() == 2 + 12 + 12);
  CHECK(intercept_spec(1, 2).parameter_count() == 1);
}

TEST_CASE("pack and unpack round trip exactly") {
  CounterRng rng(8);
  InstanceShape shape;
  for (int rep = 0; rep < 40; ++rep) {
    const ModelSpec spec = random_spec(rng, shape);
    const CoefficientSet c = random_coefficients(spec, rng);
    const Eigen::VectorXd flat = pack_parameters(c);
    REQUIRE(static_cast<std::size_t>(flat.size()) == spec.parameter_count());
    const CoefficientSet back = unpack_parameters(spec, flat);
    CHECK(pack_parameters(back) == flat);
    CHECK(back.gamma_pi() == c.gamma_pi());
    CHECK(std::abs(c.squared_norm() - flat.squaredNorm()) < 1e-12);
  }
  const ModelSpec spec = intercept_spec(2, 3);
  CHECK_THROWS_AS(unpack_parameters(spec, Eigen::VectorXd::Zero(2)), Error);
}

TEST_CASE("permuting states relabels every probability") {
  CounterRng rng(13);
  const ModelSpec spec = ModelSpec::from_formulas(3, 4, {"x"}, {"x"}, {"x", "lag"}, {"lag"});
  const CoefficientSet c = random_coefficients(spec, rng);
  const std::vector<int> perm{2, 0, 1};
  const CoefficientSet p = permute_states(spec, c, perm);
  Eigen::VectorXd xpi(2), xa(spec.k_A()), xb(spec.k_B());
  xpi << 1.0, 0.3;
  for (auto& v : xa) v = rng.normal();
  for (auto& v : xb) v = rng.normal();
  const Eigen::VectorXd pi0 = initial_probs(c, xpi), pi1 = initial_probs(p, xpi);
  const Eigen::MatrixXd A0 = transition_matrix(spec, c, xa, 3), A1 = transition_matrix(spec, p, xa, 3);
  const Eigen::MatrixXd B0 = emission_matrix(spec, c, xb, 1), B1 = emission_matrix(spec, p, xb, 1);
  for (int s = 0; s < 3; ++s) {
    CHECK(std::abs(pi1[s] - pi0[perm[s]]) < 1e-14);
    for (int r = 0; r < 3; ++r) CHECK(std::abs(A1(s, r) - A0(perm[s], perm[r])) < 1e-14);
    CHECK((B1.row(s) - B0.row(perm[s])).cwiseAbs().maxCoeff() < 1e-14);
  }
  CHECK(std::abs(p.squared_norm() - c.squared_norm()) < 1e-12);
  CHECK_THROWS_AS(permute_states(spec, c, {0, 0, 1}), Error);
}

TEST_CASE("design rows hold covariate products") {
  const ModelSpec spec = ModelSpec::from_formulas(2, 3, {"x", "w"}, {"w"}, {"x", "lag"},
                                                  {"x:w", "x:lag"});
  PanelDataset data;
  data.categories = 3;
  data.covariate_names = {"w", "x"};
  Sequence seq;
  seq.id = "a";
  seq.y = {0, 2, kMissing};
  seq.times = {1, 2, 3};
  seq.covariates.resize(3, 2);
  seq.covariates << 5.0, 2.0, 6.0, 3.0, 7.0, 4.0;
  data.sequences.push_back(seq);
  const DesignedPanel panel = build_design(data, spec);
  const SequenceDesign& d = panel.sequences[0];
  CHECK(d.x_pi == (Eigen::VectorXd(2) << 1.0, 5.0).finished());
  // transition: intercept, x, lag[2], lag[3]
  CHECK(d.x_A(1, 1) == 3.0);
  CHECK(d.x_A(1, 2) == 1.0);
  // emission: intercept, x:w, x:lag[2], x:lag[3]; completion happens later
  CHECK(d.x_B(2, 1) == 28.0);
  CHECK(d.x_B(2, 3) == 4.0);
  Eigen::VectorXd row = d.x_B.row(2).transpose();
  CHECK(complete_row(spec.emission_terms, row, 2) ==
        (Eigen::VectorXd(4) << 1.0, 28.0, 0.0, 4.0).finished());

  data.covariate_names = {"w", "z"};
  CHECK_THROWS_AS(build_design(data, spec), Error);
}

TEST_CASE("dataset validation rejects malformed panels") {
  PanelDataset data;
  data.categories = 3;
  data.covariate_names = {"x"};
  Sequence seq;
  seq.id = "a";
  seq.y = {0, 3};
  seq.covariates = Eigen::MatrixXd::Zero(2, 1);
  data.sequences.push_back(seq);
  CHECK_THROWS_AS(data.validate(), Error);
  data.sequences[0].y = {0, 1};
  data.sequences[0].covariates(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(data.validate(), Error);
  data.sequences[0].covariates(1, 0) = 0.0;
  CHECK_NOTHROW(data.validate());
  data.sequences[0].covariates = Eigen::MatrixXd::Zero(3, 1);
  CHECK_THROWS_AS(data.validate(), Error);
}

TEST_CASE("y->y edge needs an observed first response") {
  const ModelSpec spec = ModelSpec::from_formulas(2, 2, {}, {}, {}, {"lag"});
  PanelDataset data;
  data.categories = 2;
  Sequence seq;
  seq.id = "a";
  seq.y = {kMissing, 1};
  seq.covariates.resize(2, 0);
  data.sequences.push_back(seq);
  CHECK_THROWS_AS(build_design(data, spec), Error);
}
