#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>

namespace ssdgp {

struct LbfgsOptions {
  int memory = 8;
  double grad_tol = 1e-6;     // terminate when the gradient max-norm drops below
  int max_iters = 200;
  double armijo_c = 1e-4;
  double wolfe_c = 0.9;       // curvature threshold of the weak Wolfe test
  int max_line_steps = 40;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  bool converged = false;
};

// Limited-memory quasi-Newton descent with a weak Wolfe line search. The
// objective returns (value, gradient) at a point; a throwing or non-finite
// evaluation is treated as a too-long step. The curvature condition keeps
// s'y positive so the implicit Hessian stays positive definite; a step that
// cannot produce finite decrease ends the run at the best point seen.
inline LbfgsResult lbfgs_minimise(
    const std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd&)>& objective,
    const Eigen::VectorXd& x0, const LbfgsOptions& opts = {}) {
  if (opts.memory < 1 || opts.max_iters < 1 || !(opts.grad_tol > 0.0))
    throw std::invalid_argument("lbfgs: memory, max_iters, and grad_tol must be positive");

  LbfgsResult res;
  res.x = x0;
  std::tie(res.value, res.gradient) = objective(res.x);
  if (!std::isfinite(res.value) || !res.gradient.allFinite())
    throw std::invalid_argument("lbfgs: objective is not finite at the initial point");

  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> pairs;  // (s, y)
  double h0 = 1.0;

  for (int it = 0; it < opts.max_iters; ++it) {
    if (res.gradient.cwiseAbs().maxCoeff() < opts.grad_tol) {
      res.converged = true;
      return res;
    }

    // Two-loop recursion applied to the stored curvature pairs.
    Eigen::VectorXd q = res.gradient;
    std::deque<double> alpha(pairs.size());
    for (std::size_t i = pairs.size(); i-- > 0;) {
      const auto& [s, y] = pairs[i];
      alpha[i] = s.dot(q) / s.dot(y);
      q -= alpha[i] * y;
    }
    q *= h0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& [s, y] = pairs[i];
      q += (alpha[i] - y.dot(q) / s.dot(y)) * s;
    }
    Eigen::VectorXd direction = -q;
    double slope = res.gradient.dot(direction);
    if (!(slope < 0.0) || !direction.allFinite()) {
      direction = -res.gradient;
      slope = -res.gradient.squaredNorm();
      pairs.clear();
      h0 = 1.0;
    }

    // Bisection on the weak Wolfe conditions: an Armijo failure caps the
    // step, a still-steep directional derivative raises the floor. A point
    // meeting only the Armijo test is kept as a fallback.
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double step = 1.0;
    double trial_value = res.value;
    Eigen::VectorXd trial_x, trial_grad;
    bool accepted = false;
    for (int ls = 0; ls < opts.max_line_steps; ++ls) {
      const Eigen::VectorXd cand = res.x + step * direction;
      double v = std::numeric_limits<double>::quiet_NaN();
      Eigen::VectorXd g;
      try {
        std::tie(v, g) = objective(cand);
      } catch (const std::runtime_error&) {
      }
      if (!std::isfinite(v) || !g.allFinite() ||
          v > res.value + opts.armijo_c * step * slope) {
        hi = step;
      } else if (g.dot(direction) < opts.wolfe_c * slope) {
        trial_x = cand;
        trial_value = v;
        trial_grad = std::move(g);
        accepted = true;
        lo = step;
      } else {
        trial_x = cand;
        trial_value = v;
        trial_grad = std::move(g);
        accepted = true;
        break;
      }
      step = std::isinf(hi) ? 2.0 * lo : 0.5 * (lo + hi);
    }
    if (!accepted) {
      res.iterations = it;
      return res;  // no finite decrease along a descent direction
    }

    const Eigen::VectorXd s = trial_x - res.x;
    const Eigen::VectorXd y = trial_grad - res.gradient;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      pairs.emplace_back(s, y);
      if (static_cast<int>(pairs.size()) > opts.memory) pairs.pop_front();
      h0 = sy / y.squaredNorm();
    }
    res.x = std::move(trial_x);
    res.value = trial_value;
    res.gradient = std::move(trial_grad);
    res.iterations = it + 1;
  }
  res.converged = res.gradient.cwiseAbs().maxCoeff() < opts.grad_tol;
  return res;
}

}  // namespace ssdgp
