#pragma once

#include <Eigen/Dense>
#include <functional>

namespace fanhmm {

struct LbfgsOptions {
  int memory = 10;
  int max_iterations = 10000;
  double f_rel_tol = 1e-8;   // stop when |f_k - f_{k+1}| < f_rel_tol * |f_{k+1}|
  double g_abs_tol = 1e-10;  // stop when ||g||_inf falls below this
  int max_line_search = 40;
  double c1 = 1e-4;
  double c2 = 0.9;
};

enum class LbfgsStatus {
  FunctionTolerance,
  GradientTolerance,
  MaxIterations,
  LineSearchFailed,
  NonFiniteStart,
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  LbfgsStatus status = LbfgsStatus::MaxIterations;

  bool converged() const {
    return status == LbfgsStatus::FunctionTolerance || status == LbfgsStatus::GradientTolerance;
  }
};

/// Objective to minimize: returns f(x) and writes the gradient into g.
/// Non-finite values are treated as +infinity.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& g)>;

/// Limited-memory BFGS with a strong-Wolfe line search (bracketing and zoom
/// with cubic interpolation).
LbfgsResult lbfgs_minimize(const Objective& objective, const Eigen::VectorXd& x0,
                           const LbfgsOptions& options = {});

const char* lbfgs_status_name(LbfgsStatus status);

}  // namespace fanhmm
