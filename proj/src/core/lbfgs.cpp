#include "core/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace fanhmm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Point {
  double alpha = 0.0;
  double f = kInf;
  double d = 0.0;  // directional derivative
};

double cubic_minimizer(const Point& a, const Point& b) {
  // Minimizer of the cubic through (a.alpha, a.f, a.d) and (b.alpha, b.f, b.d),
  // falling back to bisection when it is undefined.
  const double lo = std::min(a.alpha, b.alpha), hi = std::max(a.alpha, b.alpha);
  const double mid = 0.5 * (a.alpha + b.alpha);
  if (!std::isfinite(a.f) || !std::isfinite(b.f)) return mid;
  const double d1 = a.d + b.d - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
  const double disc = d1 * d1 - a.d * b.d;
  if (disc < 0.0) return mid;
  const double sign = b.alpha > a.alpha ? 1.0 : -1.0;
  const double d2 = sign * std::sqrt(disc);
  const double denom = b.d - a.d + 2.0 * d2;
  if (denom == 0.0) return mid;
  const double x = b.alpha - (b.alpha - a.alpha) * (b.d + d2 - d1) / denom;
  if (!std::isfinite(x)) return mid;
  const double margin = 0.1 * (hi - lo);
  if (x < lo + margin || x > hi - margin) return mid;
  return x;
}

class LineSearch {
 public:
  LineSearch(const Objective& objective, const LbfgsOptions& options, int& evaluations)
      : objective_(objective), options_(options), evaluations_(evaluations) {}

  /// Returns true on a strong-Wolfe point; x, f, g then hold that point.
  bool run(const Eigen::VectorXd& x0, double f0, const Eigen::VectorXd& g0,
           const Eigen::VectorXd& dir, double alpha0, Eigen::VectorXd& x, double& f,
           Eigen::VectorXd& g) {
    x0_ = &x0;
    dir_ = &dir;
    f0_ = f0;
    d0_ = g0.dot(dir);
    Point prev{0.0, f0, d0_};
    double alpha = alpha0;
    for (int i = 0; i < options_.max_line_search; ++i) {
      Point cur = evaluate(alpha, x, g);
      if (cur.f > f0_ + options_.c1 * alpha * d0_ || (i > 0 && cur.f >= prev.f)) {
        return zoom(prev, cur, x, f, g);
      }
      if (std::abs(cur.d) <= -options_.c2 * d0_) {
        f = cur.f;
        return true;
      }
      if (cur.d >= 0.0) return zoom(cur, prev, x, f, g);
      prev = cur;
      alpha *= 2.0;
    }
    return false;
  }

 private:
  Point evaluate(double alpha, Eigen::VectorXd& x, Eigen::VectorXd& g) {
    x = *x0_ + alpha * *dir_;
    double f = objective_(x, g);
    ++evaluations_;
    if (!std::isfinite(f) || !g.allFinite()) return Point{alpha, kInf, 0.0};
    return Point{alpha, f, g.dot(*dir_)};
  }

  bool zoom(Point lo, Point hi, Eigen::VectorXd& x, double& f, Eigen::VectorXd& g) {
    for (int i = 0; i < options_.max_line_search; ++i) {
      const double alpha = cubic_minimizer(lo, hi);
      if (std::abs(hi.alpha - lo.alpha) < 1e-16 * std::max(1.0, std::abs(lo.alpha))) break;
      Point cur = evaluate(alpha, x, g);
      if (cur.f > f0_ + options_.c1 * alpha * d0_ || cur.f >= lo.f) {
        hi = cur;
      } else {
        if (std::abs(cur.d) <= -options_.c2 * d0_) {
          f = cur.f;
          return true;
        }
        if (cur.d * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
        lo = cur;
      }
    }
    // Accept the best sufficient-decrease point found, if any.
    if (lo.alpha > 0.0 && lo.f < f0_) {
      Point p = evaluate(lo.alpha, x, g);
      f = p.f;
      return std::isfinite(p.f);
    }
    return false;
  }

  const Objective& objective_;
  const LbfgsOptions& options_;
  int& evaluations_;
  const Eigen::VectorXd* x0_ = nullptr;
  const Eigen::VectorXd* dir_ = nullptr;
  double f0_ = 0.0;
  double d0_ = 0.0;
};

}  // namespace

const char* lbfgs_status_name(LbfgsStatus status) {
  switch (status) {
    case LbfgsStatus::FunctionTolerance: return "ftol";
    case LbfgsStatus::GradientTolerance: return "gtol";
    case LbfgsStatus::MaxIterations: return "maxiter";
    case LbfgsStatus::LineSearchFailed: return "linesearch";
    case LbfgsStatus::NonFiniteStart: return "nonfinite-start";
  }
  return "unknown";
}

LbfgsResult lbfgs_minimize(const Objective& objective, const Eigen::VectorXd& x0,
                           const LbfgsOptions& options) {
  LbfgsResult result;
  const Eigen::Index n = x0.size();
  Eigen::VectorXd x = x0, g(n);
  double f = objective(x, g);
  result.evaluations = 1;
  result.x = x;
  result.f = f;
  if (!std::isfinite(f) || !g.allFinite()) {
    result.status = LbfgsStatus::NonFiniteStart;
    return result;
  }
  if (n == 0 || g.lpNorm<Eigen::Infinity>() <= options.g_abs_tol) {
    result.status = LbfgsStatus::GradientTolerance;
    return result;
  }

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  std::vector<double> alpha_buf(options.memory);
  LineSearch search(objective, options, result.evaluations);
  Eigen::VectorXd dir(n), x_new(n), g_new(n);

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    // Two-loop recursion.
    dir = -g;
    const int m = static_cast<int>(s_hist.size());
    for (int i = m - 1; i >= 0; --i) {
      alpha_buf[i] = rho_hist[i] * s_hist[i].dot(dir);
      dir -= alpha_buf[i] * y_hist[i];
    }
    if (m > 0) dir *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (int i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(dir);
      dir += (alpha_buf[i] - beta) * s_hist[i];
    }
    if (g.dot(dir) >= 0.0) {
      dir = -g;
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }
    const double alpha0 = s_hist.empty() ? std::min(1.0, 1.0 / g.lpNorm<Eigen::Infinity>()) : 1.0;

    double f_new = f;
    bool ok = search.run(x, f, g, dir, alpha0, x_new, f_new, g_new);
    if (!ok && !s_hist.empty()) {
      // Retry once along steepest descent with a fresh memory.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g;
      ok = search.run(x, f, g, dir, std::min(1.0, 1.0 / g.lpNorm<Eigen::Infinity>()), x_new,
                      f_new, g_new);
    }
    if (!ok) {
      result.status = LbfgsStatus::LineSearchFailed;
      result.iterations = iter;
      result.x = x;
      result.f = f;
      return result;
    }
    {
      Eigen::VectorXd s = x_new - x;
      Eigen::VectorXd y = g_new - g;
      const double sy = s.dot(y);
      const double f_old = f;
      x = x_new;
      g = g_new;
      f = f_new;
      result.iterations = iter + 1;
      if (sy > 1e-12 * s.norm() * y.norm()) {
        if (static_cast<int>(s_hist.size()) == options.memory) {
          s_hist.pop_front();
          y_hist.pop_front();
          rho_hist.pop_front();
        }
        s_hist.push_back(std::move(s));
        y_hist.push_back(std::move(y));
        rho_hist.push_back(1.0 / sy);
      }
      if (std::abs(f_old - f) < options.f_rel_tol * std::abs(f)) {
        result.status = LbfgsStatus::FunctionTolerance;
        break;
      }
      if (g.lpNorm<Eigen::Infinity>() <= options.g_abs_tol) {
        result.status = LbfgsStatus::GradientTolerance;
        break;
      }
    }
  }
  result.x = x;
  result.f = f;
  return result;
}

}  // namespace fanhmm
