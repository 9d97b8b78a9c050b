#pragma once

#include <ssdgp/linalg.hpp>
#include <ssdgp/rng.hpp>
#include <ssdgp/sde_model.hpp>

#include <unsupported/Eigen/MatrixFunctions>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ssdgp {

// One-step Gaussian transition x_{k+1} ~ N(f(x_k, dt), Q(x_k, dt)).
// `repair_events` counts covariance repairs performed inside Q so filters can
// surface them as structured warnings. `f_jacobian` is optional; schemes that
// can produce it cheaply do so for linearisation-based filters.
struct TransitionPair {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)> f;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&, double)> Q;
  std::string scheme_tag;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&, double)> f_jacobian;
  std::shared_ptr<std::atomic<long>> repair_events = std::make_shared<std::atomic<long>>(0);
};

struct PathSample {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;
  std::uint64_t seed = 0;
};

inline TransitionPair euler_maruyama(const SdeModel& model) {
  TransitionPair pair;
  pair.scheme_tag = "euler_maruyama";
  pair.f = [model](const Eigen::VectorXd& x, double dt) -> Eigen::VectorXd {
    return x + model.drift(x) * dt;
  };
  pair.Q = [model](const Eigen::VectorXd& x, double dt) -> Eigen::MatrixXd {
    return model.gamma(x) * dt;
  };
  pair.f_jacobian = [model](const Eigen::VectorXd& x, double dt) -> Eigen::MatrixXd {
    return Eigen::MatrixXd::Identity(model.dim_state(), model.dim_state()) + model.drift_jacobian(x) * dt;
  };
  return pair;
}

// F = exp(A dt), Q = int_0^dt exp(A s) LL exp(A^T s) ds, computed through the
// block exponential of [[A, LL], [0, -A^T]]: its (1,2) block times F^T is Q.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> exact_linear(const Eigen::MatrixXd& A,
                                                                const Eigen::MatrixXd& LL,
                                                                double dt) {
  const Eigen::Index d = A.rows();
  if (A.cols() != d || LL.rows() != d || LL.cols() != d)
    throw std::invalid_argument("exact_linear: A must be square and LL of matching size");
  if (dt < 0.0) throw std::invalid_argument("exact_linear: dt must be nonnegative");
  if (dt == 0.0) return {Eigen::MatrixXd::Identity(d, d), Eigen::MatrixXd::Zero(d, d)};

  if (d == 1) {
    const double a = A(0, 0), ll = LL(0, 0);
    const double F = std::exp(a * dt);
    const double Q = std::abs(a) < 1e-300 ? ll * dt : ll * std::expm1(2.0 * a * dt) / (2.0 * a);
    Eigen::MatrixXd Fm(1, 1), Qm(1, 1);
    Fm(0, 0) = F;
    Qm(0, 0) = Q;
    if (!std::isfinite(F) || !std::isfinite(Q))
      throw std::runtime_error("exact_linear: non-finite exponential");
    return {Fm, Qm};
  }

  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  block.topLeftCorner(d, d) = A;
  block.topRightCorner(d, d) = LL;
  block.bottomRightCorner(d, d) = -A.transpose();
  const Eigen::MatrixXd e = (block * dt).exp();
  if (!all_finite(e)) throw std::runtime_error("exact_linear: non-finite exponential");
  const Eigen::MatrixXd F = e.topLeftCorner(d, d);
  const Eigen::MatrixXd Q = symmetrize(e.topRightCorner(d, d) * F.transpose());
  return {F, Q};
}

namespace detail {

// a, a', a'' of a scalar drift at x.
inline void drift_derivatives_1d(const SdeModel& model, double x, double& a, double& a1,
                                 double& a2) {
  dvec_t<0> x0(1);
  x0[0] = x;
  const auto out = model.drift_at<2>(seed_directions<1>(seed_directions<0>(x0)));
  const dual_t<2>& y = out[0];
  a = y.v.v;
  a1 = y.v.d.size() > 0 ? y.v.d[0] : 0.0;
  a2 = (y.d.size() > 0 && y.d[0].d.size() > 0) ? y.d[0].d[0] : 0.0;
}

}  // namespace detail

// Strong order-1.5 Ito-Taylor step for scalar state with constant dispersion.
// The iterated integral pair (int W ds, W) is jointly Gaussian with covariance
// [[dt^3/3, dt^2/2], [dt^2/2, dt]]; folding it through the update gives the
// closed-form variance below.
inline TransitionPair ito15_scalar(const SdeModel& model) {
  if (model.dim_state() != 1 || model.dim_wiener() != 1)
    throw std::runtime_error("unsupported scheme: ito15 requires a scalar state");
  // Constancy probe; the scheme has no valid extension to state-dependent b.
  Eigen::VectorXd probe(1);
  probe[0] = 0.0;
  const double b0 = model.dispersion(probe)(0, 0);
  for (double px : {-1.3, 0.7, 2.1}) {
    probe[0] = px;
    if (std::abs(model.dispersion(probe)(0, 0) - b0) > 1e-14 * std::max(1.0, std::abs(b0)))
      throw std::runtime_error("unsupported scheme: ito15 requires constant dispersion");
  }
  TransitionPair pair;
  pair.scheme_tag = "ito15";
  pair.f = [model, b0](const Eigen::VectorXd& x, double dt) -> Eigen::VectorXd {
    double a, a1, a2;
    detail::drift_derivatives_1d(model, x[0], a, a1, a2);
    Eigen::VectorXd out(1);
    out[0] = x[0] + a * dt + 0.5 * (a1 * a + 0.5 * a2 * b0 * b0) * dt * dt;
    return out;
  };
  pair.Q = [model, b0](const Eigen::VectorXd& x, double dt) -> Eigen::MatrixXd {
    double a, a1, a2;
    detail::drift_derivatives_1d(model, x[0], a, a1, a2);
    Eigen::MatrixXd out(1, 1);
    out(0, 0) = b0 * b0 * dt * (1.0 + a1 * dt + a1 * a1 * dt * dt / 3.0);
    return out;
  };
  return pair;
}

// Iterates x_{k+1} = f(x_k, dt) + sqrt(Q(x_k, dt)) xi_k over the grid. The
// noise factor is the clamped symmetric square root, so rank-deficient Q
// (partially observed diffusions) is fine. Streams derive from
// (seed, replicate), making parallel replicates order-independent.
inline PathSample simulate(const SdeModel& model, const TransitionPair& pair,
                           const Eigen::VectorXd& x0, const std::vector<double>& grid,
                           std::uint64_t seed, std::uint64_t replicate = 0) {
  if (grid.size() < 1) throw std::invalid_argument("simulate: empty time grid");
  for (std::size_t k = 1; k < grid.size(); ++k)
    if (!(grid[k] > grid[k - 1])) throw std::invalid_argument("simulate: grid must increase");
  if (x0.size() != model.dim_state()) throw std::invalid_argument("simulate: x0 has wrong dimension");

  PhiloxRng rng(seed, replicate);
  PathSample path;
  path.seed = seed;
  path.times = grid;
  path.states.resize(grid.size());
  path.states[0] = x0;
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double dt = grid[k] - grid[k - 1];
    const Eigen::VectorXd& x = path.states[k - 1];
    const Eigen::MatrixXd root = psd_sqrt(pair.Q(x, dt));
    path.states[k] = pair.f(x, dt) + root * rng.normal_vector(model.dim_state());
    if (!path.states[k].allFinite())
      throw std::runtime_error("simulate: non-finite state at step " + std::to_string(k));
  }
  return path;
}

// Transition density of the unit-dispersion tanh-drift model:
// (cosh x_t / cosh x_s) e^{-dt/2} N(x_t | x_s, dt). Evaluated in log space so
// the cosh ratio stays finite for large |x|.
inline double benes_density(double x_t, double x_s, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("benes_density: dt must be positive");
  const auto log_cosh = [](double x) {
    const double ax = std::abs(x);
    return ax + std::log1p(std::exp(-2.0 * ax)) - 0.6931471805599453094;
  };
  const double diff = x_t - x_s;
  const double two_pi = 6.283185307179586476925286766559;
  const double log_p = log_cosh(x_t) - log_cosh(x_s) - 0.5 * dt -
                       0.5 * std::log(two_pi * dt) - diff * diff / (2.0 * dt);
  return std::exp(log_p);
}

}  // namespace ssdgp
