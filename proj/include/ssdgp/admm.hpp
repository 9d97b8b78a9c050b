#pragma once

#include <ssdgp/dgp.hpp>
#include <ssdgp/lbfgs.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ssdgp {

enum class RegMode { batch, statespace };

// L1-regularised MAP regression over the shallow three-element hierarchy:
// the observed series u1 with its length scale driven by u2 and magnitude by
// u3 through the transform. Objective variables are the three series stacked
// as [u1; u2; u3], each of length T.
struct RegProblem {
  TimeSeries data;                 // scalar observations
  Eigen::VectorXd xi;              // measurement noise variance per node
  Eigen::MatrixXd phi1, phi2, phi3;
  double lambda1 = 0.0, lambda2 = 0.0, lambda3 = 0.0;
  double rho1 = 0.0, rho2 = 0.0, rho3 = 0.0;  // 0 resolves to 2 lambda + 0.1
  RegMode mode = RegMode::statespace;
  double nu = 0.5;                 // smoothness of the observed element
  MaternParams leaf2{0.5, 1.0, 1.0};
  MaternParams leaf3{0.5, 1.0, 1.0};
  Transform transform = make_transform("exp");

  int size() const { return static_cast<int>(data.times.size()); }

  double lambda(int i) const { return i == 1 ? lambda1 : i == 2 ? lambda2 : lambda3; }

  double rho(int i) const {
    const double given = i == 1 ? rho1 : i == 2 ? rho2 : rho3;
    return given > 0.0 ? given : 2.0 * lambda(i) + 0.1;
  }

  const Eigen::MatrixXd& phi(int i) const { return i == 1 ? phi1 : i == 2 ? phi2 : phi3; }

  void validate() const {
    const int T = size();
    if (T == 0) throw std::invalid_argument("regularised problem: empty dataset (T = 0)");
    data.validate();
    for (const auto& y : data.values)
      if (y.size() != 1)
        throw std::invalid_argument("regularised problem: measurements must be scalar");
    if (xi.size() != T)
      throw std::invalid_argument("regularised problem: need one noise variance per node");
    if ((xi.array() <= 0.0).any())
      throw std::invalid_argument("regularised problem: noise variances must be positive");
    for (int i = 1; i <= 3; ++i) {
      const auto& f = phi(i);
      if (f.rows() != T || f.cols() != T)
        throw std::invalid_argument("regularised problem: sparsity matrix " + std::to_string(i) +
                                    " must be " + std::to_string(T) + "x" + std::to_string(T));
      if (lambda(i) < 0.0)
        throw std::invalid_argument("regularised problem: regularisation strengths must be >= 0");
      const double given = i == 1 ? rho1 : i == 2 ? rho2 : rho3;
      if (given < 0.0)
        throw std::invalid_argument("regularised problem: penalty parameters must be positive");
    }
    if (!(nu > 0.0)) throw std::invalid_argument("regularised problem: nu must be positive");
    leaf2.validate();
    leaf3.validate();
  }
};

struct AdmmState {
  Eigen::VectorXd u1, u2, u3;
  Eigen::VectorXd theta1, theta2, theta3;
  Eigen::VectorXd eta1, eta2, eta3;
  int iterations = 0;
  std::vector<double> lagrangian_history;      // entry 0 is the initial value
  std::vector<double> primal_residual_history;

  void validate() const {
    const auto n = u1.size();
    for (const auto* v : {&u2, &u3, &theta1, &theta2, &theta3, &eta1, &eta2, &eta3})
      if (v->size() != n)
        throw std::invalid_argument("admm state: blocks must share one length");
    for (double l : lagrangian_history)
      if (!std::isfinite(l))
        throw std::invalid_argument("admm state: lagrangian history must stay finite");
  }
};

inline Eigen::VectorXd soft_threshold(const Eigen::VectorXd& x, double kappa) {
  if (kappa < 0.0) throw std::invalid_argument("soft threshold: threshold must be >= 0");
  return x.array().sign() * (x.array().abs() - kappa).max(0.0);
}

namespace detail {

inline void split_reg_vars(const Eigen::VectorXd& v, int T, Eigen::VectorXd& u1,
                           Eigen::VectorXd& u2, Eigen::VectorXd& u3) {
  if (v.size() != 3 * T)
    throw std::invalid_argument("regularised objective: expected a stacked vector of length " +
                                std::to_string(3 * T));
  u1 = v.segment(0, T);
  u2 = v.segment(T, T);
  u3 = v.segment(2 * T, T);
}

// Cholesky with escalating diagonal jitter, starting at 1e-9 of the mean
// diagonal. Exhaustion (or non-finite entries) is an error: the objective is
// only defined where the covariance is strictly positive definite.
inline Eigen::LLT<Eigen::MatrixXd> chol_with_jitter(const Eigen::MatrixXd& C,
                                                    const std::string& context) {
  const int n = static_cast<int>(C.rows());
  const Eigen::MatrixXd sym = symmetrize(C);
  if (sym.allFinite()) {
    Eigen::LLT<Eigen::MatrixXd> llt(sym);
    if (llt.info() == Eigen::Success) return llt;
    double jitter = 1e-9 * std::max(1.0, sym.trace() / n);
    for (int attempt = 0; attempt < 7; ++attempt) {
      llt.compute(sym + jitter * Eigen::MatrixXd::Identity(n, n));
      if (llt.info() == Eigen::Success) return llt;
      jitter *= 10.0;
    }
  }
  throw std::runtime_error(context + ": covariance is not positive definite even with jitter");
}

inline double logdet_2pi(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  const int n = static_cast<int>(llt.matrixLLT().rows());
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum() +
         n * std::log(2.0 * std::numbers::pi);
}

inline Eigen::MatrixXd stationary_leaf_gram(const std::vector<double>& t,
                                            const MaternParams& p) {
  const int T = static_cast<int>(t.size());
  Eigen::MatrixXd C(T, T);
  for (int a = 0; a < T; ++a)
    for (int b = 0; b <= a; ++b) C(a, b) = C(b, a) = matern_cov(t[a] - t[b], p);
  return C;
}

// Nonstationary Gram of the observed element from per-node length scales and
// magnitudes.
inline Eigen::MatrixXd ns_gram(const std::vector<double>& t, const Eigen::VectorXd& ell,
                               const Eigen::VectorXd& sigma, double nu) {
  const int T = static_cast<int>(t.size());
  Eigen::MatrixXd C(T, T);
  for (int a = 0; a < T; ++a)
    for (int b = 0; b <= a; ++b) {
      const double v = ns_matern_cov<double>(
          t[a], t[b], [&](double tt) { return tt == t[a] ? ell[a] : ell[b]; },
          [&](double tt) { return tt == t[a] ? sigma[a] : sigma[b]; }, nu);
      C(a, b) = C(b, a) = v;
    }
  return C;
}

}  // namespace detail

// Batch MAP objective: data-fit and observed-element Gaussian terms under the
// nonstationary covariance, plus the two leaf Gaussian terms. The factor 1/2
// is omitted throughout. The gradient in the latent series differentiates the
// covariance entries with dual numbers row by row.
inline std::pair<double, Eigen::VectorXd> objective_batch(const Eigen::VectorXd& v,
                                                          const RegProblem& problem) {
  problem.validate();
  const int T = problem.size();
  Eigen::VectorXd u1, u2, u3;
  detail::split_reg_vars(v, T, u1, u2, u3);
  Eigen::VectorXd y(T);
  for (int k = 0; k < T; ++k) y[k] = problem.data.values[k][0];

  Eigen::VectorXd ell(T), sigma(T);
  for (int k = 0; k < T; ++k) {
    ell[k] = problem.transform.forward(u2[k]);
    sigma[k] = problem.transform.forward(u3[k]);
  }

  const Eigen::MatrixXd C1 = detail::ns_gram(problem.data.times, ell, sigma, problem.nu);
  const auto llt1 = detail::chol_with_jitter(C1, "batch objective: observed element");
  const auto llt2 = detail::chol_with_jitter(
      detail::stationary_leaf_gram(problem.data.times, problem.leaf2),
      "batch objective: leaf 2");
  const auto llt3 = detail::chol_with_jitter(
      detail::stationary_leaf_gram(problem.data.times, problem.leaf3),
      "batch objective: leaf 3");

  const Eigen::VectorXd resid = u1 - y;
  const Eigen::VectorXd alpha = llt1.solve(u1);
  const Eigen::VectorXd beta2 = llt2.solve(u2);
  const Eigen::VectorXd beta3 = llt3.solve(u3);

  double value = resid.cwiseQuotient(problem.xi).dot(resid);
  value += u1.dot(alpha) + detail::logdet_2pi(llt1);
  value += u2.dot(beta2) + detail::logdet_2pi(llt2);
  value += u3.dot(beta3) + detail::logdet_2pi(llt3);

  Eigen::VectorXd grad(3 * T);
  grad.segment(0, T) = 2.0 * resid.cwiseQuotient(problem.xi) + 2.0 * alpha;
  grad.segment(T, T) = 2.0 * beta2;
  grad.segment(2 * T, T) = 2.0 * beta3;

  const Eigen::MatrixXd M = llt1.solve(Eigen::MatrixXd::Identity(T, T));
  const auto& times = problem.data.times;
  using D = Dual<double>;
  for (int block = 0; block < 2; ++block) {
    for (int j = 0; j < T; ++j) {
      // Derivative of row j of the Gram in the latent coordinate behind node
      // j; the perturbation acts on the row and column simultaneously.
      const D seeded(block == 0 ? u2[j] : u3[j], Eigen::VectorXd::Ones(1));
      const D ell_j = block == 0 ? problem.transform.forward(seeded) : D(ell[j]);
      const D sigma_j = block == 1 ? problem.transform.forward(seeded) : D(sigma[j]);
      Eigen::VectorXd r(T);
      for (int b = 0; b < T; ++b) {
        const D cv = ns_matern_cov<D>(
            times[j], times[b],
            [&](double tt) { return tt == times[j] ? ell_j : D(ell[b]); },
            [&](double tt) { return tt == times[j] ? sigma_j : D(sigma[b]); }, problem.nu);
        r[b] = cv.d.size() > 0 ? cv.d[0] : 0.0;
      }
      const double ralpha = r.dot(alpha);
      const double mr_j = (M * r)[j];
      const double g = 2.0 * mr_j - r[j] * M(j, j) -
                       (2.0 * alpha[j] * ralpha - r[j] * alpha[j] * alpha[j]);
      grad[(block + 1) * T + j] += g;
    }
  }
  return {value, grad};
}

namespace detail {

// One-step transition of a frozen first-order element over a gap dt: decay
// factor and accumulated noise variance, generic in the scalar so the
// objective can carry derivatives through the frozen parameters.
template <class S>
std::pair<S, S> frozen_ou_step(const S& ell_v, const S& sigma_v, double dt) {
  using std::exp;
  const S decay = exp(S(-dt) / ell_v);
  const S q = sigma_v * sigma_v * (S(1.0) - decay * decay);
  return {decay, q};
}

template <class S>
double value_of(const S& x) {
  if constexpr (std::is_same_v<S, double>) return x;
  else return x.v;
}

}  // namespace detail

// State-space MAP objective: initial quadratic at the first node, then per
// node a measurement term plus the frozen-coefficient transition quadratic
// and its log determinant. All three elements are first-order here, so the
// transitions are the scalar frozen steps. Vanishing transition variances are
// floored by the jitter policy before the logarithm.
inline std::pair<double, Eigen::VectorXd> objective_statespace(const Eigen::VectorXd& v,
                                                               const RegProblem& problem) {
  problem.validate();
  if (problem.nu != 0.5 || problem.leaf2.nu != 0.5 || problem.leaf3.nu != 0.5)
    throw std::invalid_argument(
        "state-space objective: elements must be first order (nu = 1/2)");
  const int T = problem.size();
  Eigen::VectorXd u1, u2, u3;
  detail::split_reg_vars(v, T, u1, u2, u3);

  const double g0 = problem.transform.forward(0.0);
  Eigen::Vector3d p0_diag(g0 * g0, problem.leaf2.sigma * problem.leaf2.sigma,
                          problem.leaf3.sigma * problem.leaf3.sigma);

  double value = 0.0;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(3 * T);

  // Initial quadratic and measurement terms.
  for (int i = 0; i < 3; ++i) {
    const double ui = i == 0 ? u1[0] : i == 1 ? u2[0] : u3[0];
    value += ui * ui / p0_diag[i];
    grad[i * T] += 2.0 * ui / p0_diag[i];
  }
  for (int k = 0; k < T; ++k) {
    const double r = u1[k] - problem.data.values[k][0];
    value += r * r / problem.xi[k];
    grad[k] += 2.0 * r / problem.xi[k];
  }

  using D = Dual<double>;
  const double log2pi = std::log(2.0 * std::numbers::pi);
  for (int k = 1; k < T; ++k) {
    const double dt = problem.data.times[k] - problem.data.times[k - 1];

    // Observed element: the frozen parameters carry derivatives in the
    // parent coordinates at the previous node.
    {
      Eigen::VectorXd s2 = Eigen::VectorXd::Zero(4), s3 = Eigen::VectorXd::Zero(4);
      s2[2] = 1.0;
      s3[3] = 1.0;
      const D ell_v = problem.transform.forward(D(u2[k - 1], s2));
      const D sigma_v = problem.transform.forward(D(u3[k - 1], s3));
      auto [decay, q] = detail::frozen_ou_step<D>(ell_v, sigma_v, dt);
      const double qfloor = 1e-9 * detail::value_of(sigma_v) * detail::value_of(sigma_v);
      if (!(detail::value_of(q) > qfloor)) q = D(qfloor);
      Eigen::VectorXd sp = Eigen::VectorXd::Zero(4), sc = Eigen::VectorXd::Zero(4);
      sp[0] = 1.0;
      sc[1] = 1.0;
      const D diff = D(u1[k], sc) - decay * D(u1[k - 1], sp);
      const D term = diff * diff / q + log(q) + D(log2pi);
      value += term.v;
      if (term.d.size() > 0) {
        grad[k - 1] += term.d[0];
        grad[k] += term.d[1];
        grad[T + k - 1] += term.d[2];
        grad[2 * T + k - 1] += term.d[3];
      }
    }

    // Leaves: constant coefficients, analytic partials.
    for (int i = 1; i <= 2; ++i) {
      const MaternParams& leaf = i == 1 ? problem.leaf2 : problem.leaf3;
      const Eigen::VectorXd& u = i == 1 ? u2 : u3;
      const auto [decay, q] = detail::frozen_ou_step<double>(leaf.ell, leaf.sigma, dt);
      const double qf = std::max(q, 1e-9 * leaf.sigma * leaf.sigma);
      const double diff = u[k] - decay * u[k - 1];
      value += diff * diff / qf + std::log(qf) + log2pi;
      grad[i * T + k] += 2.0 * diff / qf;
      grad[i * T + k - 1] += -2.0 * decay * diff / qf;
    }
  }
  return {value, grad};
}

inline std::pair<double, Eigen::VectorXd> reg_objective(const Eigen::VectorXd& v,
                                                        const RegProblem& problem) {
  return problem.mode == RegMode::batch ? objective_batch(v, problem)
                                        : objective_statespace(v, problem);
}

struct InnerOptions {
  double grad_tol = 1e-6;
  int max_iters = 200;
  int memory = 8;
  std::string abort_dump_path;  // non-finite aborts also dump the iterate here
};

inline void write_admm_csv(const std::string& path, const AdmmState& state,
                           const TimeSeries& data);

namespace detail {

inline double augmented_lagrangian(const RegProblem& problem, const AdmmState& s,
                                   double objective_value) {
  double L = objective_value;
  for (int i = 1; i <= 3; ++i) {
    const Eigen::VectorXd& u = i == 1 ? s.u1 : i == 2 ? s.u2 : s.u3;
    const Eigen::VectorXd& theta = i == 1 ? s.theta1 : i == 2 ? s.theta2 : s.theta3;
    const Eigen::VectorXd& eta = i == 1 ? s.eta1 : i == 2 ? s.eta2 : s.eta3;
    const Eigen::VectorXd r = problem.phi(i) * u - theta;
    L += problem.lambda(i) * theta.lpNorm<1>() + eta.dot(r) +
         0.5 * problem.rho(i) * r.squaredNorm();
  }
  return L;
}

inline double primal_residual(const RegProblem& problem, const AdmmState& s) {
  double sq = 0.0;
  sq += (problem.phi1 * s.u1 - s.theta1).squaredNorm();
  sq += (problem.phi2 * s.u2 - s.theta2).squaredNorm();
  sq += (problem.phi3 * s.u3 - s.theta3).squaredNorm();
  return std::sqrt(sq);
}

[[noreturn]] inline void abort_with_dump(const RegProblem& problem, const AdmmState& s,
                                         int iteration, const std::string& reason,
                                         const std::string& dump_path) {
  std::ostringstream msg;
  msg << "admm: non-finite iterate at iteration " << iteration << " (" << reason << ")";
  if (!dump_path.empty()) {
    write_admm_csv(dump_path, s, problem.data);
    msg << "; iterate dumped to " << dump_path;
  }
  msg << "\nk,u1,u2,u3,theta1,theta2,theta3,eta1,eta2,eta3";
  const int T = static_cast<int>(s.u1.size());
  const int shown = std::min(T, 40);
  msg << std::setprecision(9);
  for (int k = 0; k < shown; ++k)
    msg << "\n"
        << k << "," << s.u1[k] << "," << s.u2[k] << "," << s.u3[k] << "," << s.theta1[k] << ","
        << s.theta2[k] << "," << s.theta3[k] << "," << s.eta1[k] << "," << s.eta2[k] << ","
        << s.eta3[k];
  if (shown < T) msg << "\n... (" << (T - shown) << " more rows)";
  throw std::runtime_error(msg.str());
}

}  // namespace detail

// ADMM over the stacked series: a limited-memory quasi-Newton pass on the
// smooth part, a closed-form shrinkage for the auxiliary variables, then the
// multiplier step. The augmented Lagrangian and the primal residual are
// recorded once per iteration (entry 0 describes the initial state).
inline AdmmState admm_solve(const RegProblem& problem, const AdmmState& init, int iters,
                            const InnerOptions& inner = {}) {
  problem.validate();
  if (iters < 1) throw std::invalid_argument("admm: need at least one iteration");
  const int T = problem.size();

  AdmmState s = init;
  for (auto* blk : {&s.u1, &s.u2, &s.u3, &s.theta1, &s.theta2, &s.theta3, &s.eta1, &s.eta2,
                    &s.eta3})
    if (blk->size() == 0) *blk = Eigen::VectorXd::Zero(T);
  s.validate();
  if (s.u1.size() != T)
    throw std::invalid_argument("admm: initial state length does not match the dataset");
  s.lagrangian_history.clear();
  s.primal_residual_history.clear();

  LbfgsOptions lopts;
  lopts.grad_tol = inner.grad_tol;
  lopts.max_iters = inner.max_iters;
  lopts.memory = inner.memory;

  const auto penalised = [&](const Eigen::VectorXd& v) -> std::pair<double, Eigen::VectorXd> {
    auto [value, grad] = reg_objective(v, problem);
    for (int i = 1; i <= 3; ++i) {
      const Eigen::VectorXd vi = v.segment((i - 1) * T, T);
      const Eigen::VectorXd& theta = i == 1 ? s.theta1 : i == 2 ? s.theta2 : s.theta3;
      const Eigen::VectorXd& eta = i == 1 ? s.eta1 : i == 2 ? s.eta2 : s.eta3;
      const Eigen::VectorXd r = problem.phi(i) * vi - theta;
      value += eta.dot(r) + 0.5 * problem.rho(i) * r.squaredNorm();
      grad.segment((i - 1) * T, T) += problem.phi(i).transpose() * (eta + problem.rho(i) * r);
    }
    return {value, grad};
  };

  Eigen::VectorXd v(3 * T);
  v << s.u1, s.u2, s.u3;

  const auto record = [&](int iteration) {
    double obj;
    try {
      obj = reg_objective(v, problem).first;
    } catch (const std::runtime_error& e) {
      detail::abort_with_dump(problem, s, iteration, e.what(), inner.abort_dump_path);
    }
    const double L = detail::augmented_lagrangian(problem, s, obj);
    if (!std::isfinite(L))
      detail::abort_with_dump(problem, s, iteration, "augmented Lagrangian is not finite",
                              inner.abort_dump_path);
    s.lagrangian_history.push_back(L);
    s.primal_residual_history.push_back(detail::primal_residual(problem, s));
  };
  record(0);

  for (int it = 1; it <= iters; ++it) {
    LbfgsResult step;
    try {
      step = lbfgs_minimise(penalised, v, lopts);
    } catch (const std::invalid_argument& e) {
      detail::abort_with_dump(problem, s, it, e.what(), inner.abort_dump_path);
    }
    if (!step.x.allFinite() || !std::isfinite(step.value))
      detail::abort_with_dump(problem, s, it, "inner minimiser left the finite domain",
                              inner.abort_dump_path);
    v = step.x;
    detail::split_reg_vars(v, T, s.u1, s.u2, s.u3);

    s.theta1 = soft_threshold(problem.phi1 * s.u1 + s.eta1 / problem.rho(1),
                              problem.lambda1 / problem.rho(1));
    s.theta2 = soft_threshold(problem.phi2 * s.u2 + s.eta2 / problem.rho(2),
                              problem.lambda2 / problem.rho(2));
    s.theta3 = soft_threshold(problem.phi3 * s.u3 + s.eta3 / problem.rho(3),
                              problem.lambda3 / problem.rho(3));

    s.eta1 += problem.rho(1) * (problem.phi1 * s.u1 - s.theta1);
    s.eta2 += problem.rho(2) * (problem.phi2 * s.u2 - s.theta2);
    s.eta3 += problem.rho(3) * (problem.phi3 * s.u3 - s.theta3);

    s.iterations = it;
    record(it);
  }
  return s;
}

// Posterior of the observed series with the latent series frozen at their
// MAP estimates. The batch variant conditions on the nonstationary Gram; the
// state-space variant runs a forward-backward pass on the piecewise-frozen
// realisation. The frozen per-node length scale is calibrated so a constant
// latent reproduces the same stationary covariance as the Gram, which makes
// the two variants two implementations of one model.
struct MapUncertainty {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  Eigen::MatrixXd cov;  // filled by the batch variant only
};

inline MapUncertainty map_uncertainty(const Eigen::VectorXd& map_u2,
                                      const Eigen::VectorXd& map_u3, const TimeSeries& data,
                                      const RegProblem& problem) {
  problem.validate();
  const int T = problem.size();
  if (map_u2.size() != T || map_u3.size() != T)
    throw std::invalid_argument("map uncertainty: latent estimates must have one entry per node");
  if (static_cast<int>(data.times.size()) != T)
    throw std::invalid_argument("map uncertainty: dataset length does not match the problem");

  Eigen::VectorXd ell(T), sigma(T), y(T);
  for (int k = 0; k < T; ++k) {
    ell[k] = problem.transform.forward(map_u2[k]);
    sigma[k] = problem.transform.forward(map_u3[k]);
    y[k] = data.values[k][0];
  }

  MapUncertainty out;
  if (problem.mode == RegMode::batch) {
    const Eigen::MatrixXd C1 = detail::ns_gram(data.times, ell, sigma, problem.nu);
    auto [mean, cov] = batch_gp_posterior(C1, problem.xi, y);
    out.mean = std::move(mean);
    out.cov = std::move(cov);
    out.var = out.cov.diagonal();
    return out;
  }

  // Frozen state-space pass. The stationary covariance of the companion
  // realisation at length scale sqrt(ell/2) equals the Gram's diagonal
  // regime, so both variants agree when the latents are constant.
  std::vector<MaternParams> params(T);
  for (int k = 0; k < T; ++k) params[k] = MaternParams{problem.nu, std::sqrt(ell[k] / 2.0), sigma[k]};

  const SsgpModel head = matern_ssm(params[0]);
  const int d = static_cast<int>(head.A.rows());
  const Eigen::MatrixXd H = head.H_out;

  std::vector<Eigen::VectorXd> m_pred(T), m_filt(T);
  std::vector<Eigen::MatrixXd> P_pred(T), P_filt(T), F_step(T);
  std::vector<std::string> warnings;

  Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd P = head.P0;
  for (int k = 0; k < T; ++k) {
    if (k > 0) {
      const SsgpModel prev = matern_ssm(params[k - 1]);
      const double dt = data.times[k] - data.times[k - 1];
      const auto [F, Q] = exact_linear(prev.A, prev.B * prev.B.transpose(), dt);
      m = F * m;
      P = symmetrize(F * P * F.transpose() + Q);
      F_step[k] = F;
    }
    m_pred[k] = m;
    P_pred[k] = P;
    const Eigen::MatrixXd R = Eigen::MatrixXd::Constant(1, 1, problem.xi[k]);
    const auto up = detail::kalman_update(m, P, H, R, y.segment(k, 1), k, "map uncertainty");
    m = up.m;
    P = symmetrize(up.P);
    m_filt[k] = m;
    P_filt[k] = P;
  }

  Eigen::VectorXd ms = m_filt[T - 1];
  Eigen::MatrixXd Ps = P_filt[T - 1];
  out.mean = Eigen::VectorXd(T);
  out.var = Eigen::VectorXd(T);
  out.mean[T - 1] = ms[0];
  out.var[T - 1] = Ps(0, 0);
  for (int k = T - 2; k >= 0; --k) {
    const auto llt = detail::invert_predictive(P_pred[k + 1], k + 1, "map uncertainty", warnings);
    const Eigen::MatrixXd G = llt.solve(F_step[k + 1] * P_filt[k]).transpose();
    ms = m_filt[k] + G * (ms - m_pred[k + 1]);
    Ps = symmetrize(P_filt[k] + G * (Ps - P_pred[k + 1]) * G.transpose());
    out.mean[k] = ms[0];
    out.var[k] = Ps(0, 0);
  }
  return out;
}

inline void write_admm_csv(const std::string& path, const AdmmState& state,
                           const TimeSeries& data) {
  state.validate();
  if (static_cast<std::size_t>(state.u1.size()) != data.times.size())
    throw std::invalid_argument("admm csv: state and dataset lengths differ");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("admm csv: cannot open '" + path + "'");
  out << std::setprecision(17);
  out << "k,t,u1,u2,u3,theta1,theta2,theta3,eta1,eta2,eta3\n";
  for (Eigen::Index k = 0; k < state.u1.size(); ++k)
    out << k << "," << data.times[static_cast<std::size_t>(k)] << "," << state.u1[k] << ","
        << state.u2[k] << "," << state.u3[k] << "," << state.theta1[k] << "," << state.theta2[k]
        << "," << state.theta3[k] << "," << state.eta1[k] << "," << state.eta2[k] << ","
        << state.eta3[k] << "\n";
}

inline void write_admm_convergence_csv(const std::string& path, const AdmmState& state) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("admm csv: cannot open '" + path + "'");
  out << std::setprecision(17);
  out << "iter,lagrangian,primal_residual\n";
  for (std::size_t i = 0; i < state.lagrangian_history.size(); ++i)
    out << i << "," << state.lagrangian_history[i] << "," << state.primal_residual_history[i]
        << "\n";
}

}  // namespace ssdgp
