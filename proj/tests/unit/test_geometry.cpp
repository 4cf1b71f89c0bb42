#include <doctest.h>

#include "core/error.hpp"
#include "core/geometry.hpp"
#include "support.hpp"

using namespace fanhmm;
using namespace fanhmm::testing;

TEST_CASE("basis is orthonormal with zero column sums for dims 2..8") {
  for (int dim = 2; dim <= 8; ++dim) {
    const SumToZeroBasis b = build_basis(dim);
    REQUIRE(b.q.rows() == dim);
    REQUIRE(b.q.cols() == dim - 1);
    const Eigen::MatrixXd gram = b.q.transpose() * b.q;
    CHECK((gram - Eigen::MatrixXd::Identity(dim - 1, dim - 1)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(b.q.colwise().sum().cwiseAbs().maxCoeff() < 1e-12);
    for (Eigen::Index c = 0; c < b.q.cols(); ++c) {
      Eigen::Index r = 0;
      while (std::abs(b.q(r, c)) <= 1e-12) ++r;
      CHECK(b.q(r, c) > 0.0);
    }
  }
}

TEST_CASE("basis matches an independent Householder QR") {
  for (int dim : {3, 4, 6}) {
    const Eigen::MatrixXd oracle = first_nonzero_positive(householder_thin_q(contrast_matrix(dim)));
    const Eigen::MatrixXd q = build_basis(dim).q;
    CHECK((q - oracle).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("basis rejects dim below 2") {
  try {
    build_basis(1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidDimension);
  }
}

TEST_CASE("eta to gamma is an isometry into zero-sum matrices") {
  CounterRng rng(11);
  const SumToZeroBasis b = build_basis(4);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::MatrixXd eta(3, 4);
    for (Eigen::Index i = 0; i < eta.size(); ++i) eta.data()[i] = rng.normal();
    const Eigen::MatrixXd gamma = eta_to_gamma(eta, b);
    // direct product oracle
    CHECK((gamma - b.q * eta).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(gamma.colwise().sum().cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(gamma.norm() - eta.norm()) < 1e-12);
    CHECK((gamma_to_eta(gamma, b) - eta).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK(eta_to_gamma(Eigen::MatrixXd::Zero(3, 2), b).isZero(0.0));
  CHECK(gamma_to_eta(Eigen::MatrixXd::Zero(4, 2), b).isZero(0.0));
}

TEST_CASE("gamma to eta to gamma is the identity on zero-sum matrices") {
  CounterRng rng(5);
  for (int dim = 2; dim <= 6; ++dim) {
    const SumToZeroBasis b = build_basis(dim);
    Eigen::MatrixXd g(dim, 3);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    g.rowwise() -= g.colwise().mean();
    CHECK((eta_to_gamma(gamma_to_eta(g, b), b) - g).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("shape and gamma errors") {
  const SumToZeroBasis b = build_basis(3);
  CHECK_THROWS_AS(eta_to_gamma(Eigen::MatrixXd::Zero(3, 1), b), Error);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(3, 1);
  bad(0, 0) = 1e-6;
  try {
    gamma_to_eta(bad, b);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidGamma);
  }
}

TEST_CASE("softmax is shift invariant and overflow safe") {
  CounterRng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = uniform_int(rng, 2, 7);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.normal(0.0, 3.0);
    const double c = rng.normal(0.0, 5.0);
    const Eigen::VectorXd p = softmax(v);
    CHECK((p - softmax(v.array() + c)).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(std::abs(p.sum() - 1.0) < 1e-12);
    CHECK(p.minCoeff() > 0.0);
  }
  const Eigen::VectorXd third = softmax(Eigen::VectorXd::Zero(3));
  CHECK((third.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
  Eigen::VectorXd big(2);
  big << 1000.0, 1000.0;
  CHECK(std::abs(softmax(big)[0] - 0.5) < 1e-15);
  big[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    softmax(big);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Numeric);
  }
}

TEST_CASE("target probabilities round trip through the working parameters") {
  const Eigen::VectorXd pi = reference_pi();
  const Eigen::VectorXd gamma = gamma_from_target_probs(pi);
  const Eigen::VectorXd log_centered = pi.array().log() - pi.array().log().mean();
  CHECK((gamma - log_centered).cwiseAbs().maxCoeff() < 1e-14);
  const SumToZeroBasis b3 = build_basis(3);
  const Eigen::MatrixXd eta = gamma_to_eta(gamma, b3);
  CHECK((softmax(eta_to_gamma(eta, b3).col(0)) - pi).cwiseAbs().maxCoeff() < 1e-12);

  const Eigen::VectorXd row = reference_B().row(0).transpose();
  CHECK((softmax(gamma_from_target_probs(row)) - row).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(gamma_from_target_probs(Eigen::VectorXd::Constant(4, 0.25)).isZero(1e-15));

  Eigen::VectorXd degenerate(3);
  degenerate << 0.5, 0.5, 0.0;
  try {
    gamma_from_target_probs(degenerate);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateProbability);
  }
}
