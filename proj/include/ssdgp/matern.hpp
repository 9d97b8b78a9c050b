#pragma once

#include <ssdgp/kalman.hpp>
#include <ssdgp/linalg.hpp>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <stdexcept>
#include <type_traits>
#include <utility>

namespace ssdgp {

// Half-integer Matern family. gamma = nu + 1/2 is the state dimension of the
// companion realisation; kappa = sqrt(2 nu)/ell its frequency scale. The SSM
// path caps nu at 7/2 because the companion matrix becomes badly conditioned
// beyond that; covariance values for other nu fall back to Bessel evaluation.
struct MaternParams {
  double nu = 1.5;
  double ell = 1.0;
  double sigma = 1.0;

  int gamma() const { return static_cast<int>(std::lround(nu + 0.5)); }
  double kappa() const { return std::sqrt(2.0 * nu) / ell; }

  void validate() const {
    if (!(ell > 0.0) || !(sigma > 0.0))
      throw std::invalid_argument("matern: ell and sigma must be positive");
    const double g = nu + 0.5;
    if (std::abs(g - std::round(g)) > 1e-12 || g < 1.0 || g > 4.0)
      throw std::invalid_argument("matern: nu must be one of 1/2, 3/2, 5/2, 7/2");
  }
};

// Solves A P + P A^T + LL = 0 through the Kronecker-vectorised linear system.
// The dimensions here are tiny (<= 10), so a dense solve is exact enough; the
// residual is checked and a failure indicates a non-Hurwitz A.
inline Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& A, const Eigen::MatrixXd& LL) {
  const int d = static_cast<int>(A.rows());
  if (A.cols() != d || LL.rows() != d || LL.cols() != d)
    throw std::invalid_argument("lyapunov: shape mismatch");
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd system =
      Eigen::kroneckerProduct(eye, A).eval() + Eigen::kroneckerProduct(A, eye).eval();
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
  if (!lu.isInvertible())
    throw std::runtime_error("lyapunov: singular system; A must be Hurwitz");
  const Eigen::VectorXd vec_ll = Eigen::Map<const Eigen::VectorXd>(LL.data(), d * d);
  const Eigen::VectorXd vec_p = lu.solve(-vec_ll);
  Eigen::MatrixXd P = symmetrize(Eigen::Map<const Eigen::MatrixXd>(vec_p.data(), d, d));
  const double residual = (A * P + P * A.transpose() + LL).cwiseAbs().maxCoeff();
  if (!(residual < 1e-10 * std::max(1.0, LL.cwiseAbs().maxCoeff())))
    throw std::runtime_error("lyapunov: residual too large; A must be Hurwitz");
  return P;
}

// Companion-form realisation of a Matern GP: the state stacks the function
// value and its first gamma-1 derivatives, started from the stationary law.
struct SsgpModel {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;  // gamma x 1
  Eigen::MatrixXd P0;
  Eigen::MatrixXd H_out;  // selects the function value
  MaternParams params;

  LinearSdeModel to_linear() const {
    LinearSdeModel m;
    m.A = A;
    m.B = B;
    m.m0 = Eigen::VectorXd::Zero(A.rows());
    m.P0 = P0;
    return m;
  }
};

inline SsgpModel matern_ssm(const MaternParams& p) {
  p.validate();
  const int g = p.gamma();
  const double k = p.kappa();
  SsgpModel model;
  model.params = p;
  model.A = Eigen::MatrixXd::Zero(g, g);
  for (int i = 0; i + 1 < g; ++i) model.A(i, i + 1) = 1.0;
  for (int r = 0; r < g; ++r) model.A(g - 1, r) = -detail::binomial(g, r) * std::pow(k, g - r);
  model.B = Eigen::MatrixXd::Zero(g, 1);
  model.B(g - 1, 0) =
      p.sigma * std::tgamma(g) * std::pow(2.0 * k, g - 0.5) / std::sqrt(std::tgamma(2.0 * g - 1.0));
  model.P0 = solve_lyapunov(model.A, model.B * model.B.transpose());
  model.H_out = Eigen::MatrixXd::Zero(1, g);
  model.H_out(0, 0) = 1.0;
  return model;
}

namespace detail {

// Normalised Matern shape 2^{1-nu}/Gamma(nu) z^nu K_nu(z), equal to 1 at
// z = 0. Half-integer orders use the exponential-polynomial identities so the
// expression stays valid for generic (dual) scalars.
template <typename S>
S matern_shape(double nu, const S& z) {
  using std::exp;
  const S e = exp(-z);
  if (nu == 0.5) return e;
  if (nu == 1.5) return (1.0 + z) * e;
  if (nu == 2.5) return (1.0 + z + z * z / 3.0) * e;
  if (nu == 3.5) return (1.0 + z + 2.0 * z * z / 5.0 + z * z * z / 15.0) * e;
  if constexpr (std::is_same_v<S, double>) {
    if (z == 0.0) return 1.0;
    return std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(z, nu) * std::cyl_bessel_k(nu, z);
  } else {
    throw std::invalid_argument("matern: no closed form for this nu");
  }
}

}  // namespace detail

inline double matern_cov(double tau, const MaternParams& p) {
  if (!(p.ell > 0.0) || !(p.sigma > 0.0))
    throw std::invalid_argument("matern: ell and sigma must be positive");
  const double z = std::sqrt(2.0 * p.nu) * std::abs(tau) / p.ell;
  return p.sigma * p.sigma * detail::matern_shape(p.nu, z);
}

// Non-stationary Matern covariance with time-varying length scale and
// magnitude. With constant parameters it reduces to the stationary form at an
// effective length scale sqrt(ell/2). Generic scalar so the ADMM objective
// can differentiate through the parameter fields.
template <typename S, typename EllFn, typename SigmaFn>
S ns_matern_cov(double t, double t_prime, EllFn&& ell, SigmaFn&& sigma, double nu) {
  using std::sqrt;
  const S l1 = ell(t);
  const S l2 = ell(t_prime);
  const S s1 = sigma(t);
  const S s2 = sigma(t_prime);
  const S sum = l1 + l2;
  const double tau2 = (t - t_prime) * (t - t_prime);
  // tau = 0 keeps u identically zero along any parameter path; skipping the
  // sqrt avoids a 0/0 derivative there.
  const S u = tau2 == 0.0 ? S(0.0) : sqrt(S(8.0 * nu * tau2) / sum);
  return s1 * s2 * sqrt(sqrt(l1 * l2)) * sqrt(2.0 / sum) * detail::matern_shape(nu, u);
}

inline double ns_matern_cov(double t, double t_prime, const std::function<double(double)>& ell,
                            const std::function<double(double)>& sigma, double nu) {
  return ns_matern_cov<double>(t, t_prime, ell, sigma, nu);
}

// Batch Gaussian-process posterior for y = f + noise with Gram matrix C and
// diagonal noise Xi: mean = C (C + Xi)^{-1} y, cov = C - C (C + Xi)^{-1} C.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> batch_gp_posterior(
    const Eigen::MatrixXd& C, const Eigen::VectorXd& Xi_diag, const Eigen::VectorXd& y) {
  const int n = static_cast<int>(C.rows());
  if (C.cols() != n || Xi_diag.size() != n || y.size() != n)
    throw std::invalid_argument("batch posterior: dimension mismatch");
  Eigen::MatrixXd gram = symmetrize(C);
  gram.diagonal() += Xi_diag;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  const Eigen::VectorXd alpha = ldlt.solve(y);
  if (ldlt.info() != Eigen::Success ||
      (gram * alpha - y).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, y.cwiseAbs().maxCoeff()))
    throw std::runtime_error(
        "batch posterior: gram matrix numerically singular; add jitter to the noise");
  const Eigen::VectorXd mean = C * alpha;
  const Eigen::MatrixXd cov = symmetrize(C - C * ldlt.solve(C));
  return {mean, cov};
}

// State-space GP regression: Kalman filtering plus RTS smoothing of the
// companion realisation, observing the function value under noise xi.
inline PosteriorTrack ssgp_regress(const SsgpModel& model, const TimeSeries& data, double xi) {
  const auto meas =
      MeasurementModel::linear_constant(model.H_out, Eigen::MatrixXd::Constant(1, 1, xi));
  const LinearSdeModel linear = model.to_linear();
  return rts_smoother(kalman_filter(linear, meas, data), linear, data);
}

}  // namespace ssdgp
