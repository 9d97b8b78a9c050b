#pragma once

#include <ssdgp/discretise.hpp>
#include <ssdgp/generator.hpp>
#include <ssdgp/linalg.hpp>

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssdgp {

// Evaluated Taylor data at one start state: Theta_1..Theta_M and the iterated
// drift terms of the mean expansion.
struct TmeCoefficients {
  int order = 0;
  std::vector<Eigen::MatrixXd> theta;       // Theta_r, r = 1..M
  std::vector<Eigen::VectorXd> mean_terms;  // r-fold generator of the identity, r = 0..M
};

struct PdVerdict {
  enum class Kind { pd_for_all_dt, pd_up_to, not_pd_at };
  enum class Method { corollary_1, corollary_2, corollary_3, numeric_root_scan };

  std::vector<double> polynomial_coeffs;  // lambda_min(Theta_r)/r!, r = 1..M
  Kind verdict = Kind::not_pd_at;
  // pd_up_to: the certified bound; not_pd_at: the first failing step size.
  double dt = std::numeric_limits<double>::infinity();
  Method method = Method::numeric_root_scan;

  // Weyl lower bound on lambda_min of the covariance expansion at step t.
  double chi(double t) const {
    double sum = 0.0, power = 1.0;
    for (double c : polynomial_coeffs) {
      power *= t;
      sum += c * power;
    }
    return sum;
  }
};

namespace detail {

inline std::vector<FieldMatrix> mean_chain(const SdeModel& model, int M) {
  std::vector<FieldMatrix> chain(M + 1);
  chain[0] = FieldMatrix::state_identity(model.dim_state());
  for (int r = 1; r <= M; ++r) chain[r] = apply_generator_elementwise(chain[r - 1], model);
  return chain;
}

inline std::vector<FieldMatrix> second_moment_chain(const SdeModel& model, int M) {
  std::vector<FieldMatrix> chain(M + 1);
  chain[0] = FieldMatrix::state_outer(model.dim_state());
  for (int r = 1; r <= M; ++r) chain[r] = apply_generator_elementwise(chain[r - 1], model);
  return chain;
}

}  // namespace detail

// Theta_r as symbolic fields, from the definition: the r-fold elementwise
// generator of x x^T minus the binomial cross products of the mean iterates.
inline std::vector<FieldMatrix> tme_theta_fields(const SdeModel& model, int M) {
  if (M < 1) throw std::invalid_argument("tme_theta_fields: order must be >= 1");
  const int d = model.dim_state();
  const std::vector<FieldMatrix> mean = detail::mean_chain(model, M);
  const std::vector<FieldMatrix> second = detail::second_moment_chain(model, M);
  std::vector<FieldMatrix> theta(M);
  for (int r = 1; r <= M; ++r) {
    FieldMatrix t(d, d);
    for (int u = 0; u < d; ++u)
      for (int v = 0; v < d; ++v) {
        if (r == 1) {
          // The binomial expression collapses to the dispersion Gram matrix;
          // computing it directly keeps Theta_1 = Gamma free of cancellation.
          t.at(u, v) = gamma_gradient_form(mean[0].at(u, 0), mean[0].at(v, 0), model);
          continue;
        }
        SmoothScalarField acc = second[r].at(u, v);
        for (int k = 0; k <= r; ++k)
          acc = linear_combination(1.0, acc, -detail::binomial(r, k),
                                   mean[k].at(u, 0) * mean[r - k].at(v, 0));
        t.at(u, v) = acc;
      }
    theta[r - 1] = t;
  }
  return theta;
}

// Same matrices through the recursion available when the dispersion does not
// depend on the state: Theta_r = sum_k C(r-1,k) (grad a_k)^T Gamma (grad a_j)
// + generator of Theta_{r-1}, with a_k the mean iterates and j = r-1-k.
// Cheaper in differentiation depth than the definition; callers must ensure
// constant dispersion.
inline std::vector<FieldMatrix> tme_theta_fields_homogeneous(const SdeModel& model, int M) {
  if (M < 1) throw std::invalid_argument("tme_theta_fields_homogeneous: order must be >= 1");
  const int d = model.dim_state();
  const std::vector<FieldMatrix> mean = detail::mean_chain(model, M - 1);
  std::vector<FieldMatrix> theta(M);
  for (int r = 1; r <= M; ++r) {
    FieldMatrix t(d, d);
    for (int u = 0; u < d; ++u)
      for (int v = 0; v < d; ++v) {
        SmoothScalarField acc;
        for (int k = 0; k <= r - 1; ++k) {
          const SmoothScalarField form =
              gamma_gradient_form(mean[k].at(u, 0), mean[r - 1 - k].at(v, 0), model);
          acc = acc.valid() ? linear_combination(1.0, acc, detail::binomial(r - 1, k), form)
                            : linear_combination(detail::binomial(r - 1, k), form, 0.0,
                                                 SmoothScalarField());
        }
        if (r >= 2)
          acc = acc + apply_generator(theta[r - 2].at(u, v), model);
        t.at(u, v) = acc;
      }
    theta[r - 1] = t;
  }
  return theta;
}

inline Eigen::VectorXd tme_mean(const SdeModel& model, const Eigen::VectorXd& x_s, double dt,
                                int M) {
  if (dt < 0.0) throw std::invalid_argument("tme_mean: dt must be nonnegative");
  if (M < 0) throw std::invalid_argument("tme_mean: order must be nonnegative");
  const std::vector<FieldMatrix> chain = detail::mean_chain(model, M);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(model.dim_state());
  double weight = 1.0;
  for (int r = 0; r <= M; ++r) {
    if (r > 0) weight *= dt / r;
    sum += weight * chain[r].evaluate_vector(x_s);
  }
  return sum;
}

inline Eigen::MatrixXd tme_second_moment(const SdeModel& model, const Eigen::VectorXd& x_s,
                                         double dt, int M) {
  if (dt < 0.0) throw std::invalid_argument("tme_second_moment: dt must be nonnegative");
  if (M < 0) throw std::invalid_argument("tme_second_moment: order must be nonnegative");
  const std::vector<FieldMatrix> chain = detail::second_moment_chain(model, M);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(model.dim_state(), model.dim_state());
  double weight = 1.0;
  for (int r = 0; r <= M; ++r) {
    if (r > 0) weight *= dt / r;
    sum += weight * chain[r].evaluate(x_s);
  }
  return symmetrize(sum);
}

inline Eigen::MatrixXd tme_cov(const SdeModel& model, const Eigen::VectorXd& x_s, double dt,
                               int M) {
  if (dt < 0.0) throw std::invalid_argument("tme_cov: dt must be nonnegative");
  if (M < 1) throw std::invalid_argument("tme_cov: order must be >= 1");
  const std::vector<FieldMatrix> theta = tme_theta_fields(model, M);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(model.dim_state(), model.dim_state());
  double weight = 1.0;
  for (int r = 1; r <= M; ++r) {
    weight *= dt / r;
    sum += weight * theta[r - 1].evaluate(x_s);
  }
  return symmetrize(sum);
}

inline TmeCoefficients tme_coefficients(const SdeModel& model, const Eigen::VectorXd& x_s,
                                        int M) {
  if (M < 1) throw std::invalid_argument("tme_coefficients: order must be >= 1");
  TmeCoefficients out;
  out.order = M;
  const std::vector<FieldMatrix> mean = detail::mean_chain(model, M);
  out.mean_terms.reserve(M + 1);
  for (int r = 0; r <= M; ++r) out.mean_terms.push_back(mean[r].evaluate_vector(x_s));
  const std::vector<FieldMatrix> theta = tme_theta_fields(model, M);
  out.theta.reserve(M);
  for (int r = 1; r <= M; ++r) out.theta.push_back(theta[r - 1].evaluate(x_s));
  return out;
}

// Sufficient-condition analysis of the covariance expansion. For M <= 3 the
// closed-form cases are tried first (they certify every step size); otherwise
// the Weyl polynomial chi is scanned on 512 log-spaced points in (0, dt_max].
inline PdVerdict pd_analysis(const TmeCoefficients& coeffs, double dt_max) {
  if (coeffs.order < 1) throw std::invalid_argument("pd_analysis: order must be >= 1");
  if (!(dt_max > 0.0)) throw std::invalid_argument("pd_analysis: dt_max must be positive");
  const int M = coeffs.order;

  PdVerdict v;
  std::vector<double> lmin(M);
  std::vector<double> tol(M);
  v.polynomial_coeffs.resize(M);
  double factorial = 1.0;
  for (int r = 1; r <= M; ++r) {
    factorial *= r;
    lmin[r - 1] = min_eigenvalue(coeffs.theta[r - 1]);
    tol[r - 1] = 1e-12 * std::max(1.0, coeffs.theta[r - 1].cwiseAbs().maxCoeff());
    v.polynomial_coeffs[r - 1] = lmin[r - 1] / factorial;
  }
  const auto psd = [&](int r) { return lmin[r - 1] >= -tol[r - 1]; };
  const auto pd = [&](int r) { return lmin[r - 1] > tol[r - 1]; };

  if (M == 1 && pd(1)) {
    v.verdict = PdVerdict::Kind::pd_for_all_dt;
    v.method = PdVerdict::Method::corollary_1;
    return v;
  }
  if (M == 2 && psd(1) && psd(2) && (pd(1) || pd(2))) {
    v.verdict = PdVerdict::Kind::pd_for_all_dt;
    v.method = PdVerdict::Method::corollary_2;
    return v;
  }
  if (M == 3 && psd(3)) {
    const double rhs = -(2.0 * std::sqrt(6.0) / 3.0) *
                       std::sqrt(std::max(0.0, lmin[0]) * std::max(0.0, lmin[2]));
    if (lmin[1] > rhs) {
      v.verdict = PdVerdict::Kind::pd_for_all_dt;
      v.method = PdVerdict::Method::corollary_3;
      return v;
    }
  }

  v.method = PdVerdict::Method::numeric_root_scan;
  for (double t : log_spaced(dt_max * 1e-6, dt_max, 512)) {
    if (!(v.chi(t) > 0.0)) {
      v.verdict = PdVerdict::Kind::not_pd_at;
      v.dt = t;
      return v;
    }
  }
  v.verdict = PdVerdict::Kind::pd_up_to;
  v.dt = dt_max;
  return v;
}

inline double tme_expectation(const SdeModel& model, const SmoothScalarField& phi,
                              const Eigen::VectorXd& x_s, double dt, int M) {
  if (dt < 0.0) throw std::invalid_argument("tme_expectation: dt must be nonnegative");
  if (M < 0) throw std::invalid_argument("tme_expectation: order must be nonnegative");
  if (phi.smoothness_order() < 2 * M)
    throw GeneratorDepthError("tme_expectation: smoothness exhausted: the target function "
                              "supports order " +
                              std::to_string(phi.smoothness_order() / 2) + ", requested " +
                              std::to_string(M));
  double sum = 0.0, weight = 1.0;
  SmoothScalarField iterate = phi;
  for (int r = 0; r <= M; ++r) {
    if (r > 0) {
      weight *= dt / r;
      iterate = apply_generator(iterate, model);
    }
    sum += weight * iterate.evaluate(x_s);
  }
  return sum;
}

// Transition closures over the expansion, with the symbolic chains built once.
// Q is symmetrised and, when indefinite, shifted to PSD; each shift bumps
// repair_events so filters can report it.
inline TransitionPair tme_discretise(const SdeModel& model, int M) {
  if (M < 1) throw std::invalid_argument("tme_discretise: order must be >= 1");
  const auto mean = std::make_shared<const std::vector<FieldMatrix>>(detail::mean_chain(model, M));
  const auto theta =
      std::make_shared<const std::vector<FieldMatrix>>(tme_theta_fields(model, M));
  TransitionPair pair;
  pair.scheme_tag = "tme(" + std::to_string(M) + ")";
  const int d = model.dim_state();
  pair.f = [mean, d, M](const Eigen::VectorXd& x, double dt) -> Eigen::VectorXd {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
    double weight = 1.0;
    for (int r = 0; r <= M; ++r) {
      if (r > 0) weight *= dt / r;
      sum += weight * (*mean)[r].evaluate_vector(x);
    }
    return sum;
  };
  auto events = pair.repair_events;
  pair.Q = [theta, events, d, M](const Eigen::VectorXd& x, double dt) -> Eigen::MatrixXd {
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(d, d);
    double weight = 1.0;
    for (int r = 1; r <= M; ++r) {
      weight *= dt / r;
      sum += weight * (*theta)[r - 1].evaluate(x);
    }
    PsdRepair rep = repair_psd(sum);
    if (rep.repaired) ++(*events);
    return rep.matrix;
  };
  pair.f_jacobian = [mean, d, M](const Eigen::VectorXd& x, double dt) -> Eigen::MatrixXd {
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(d, d);
    double weight = 1.0;
    for (int r = 0; r <= M; ++r) {
      if (r > 0) weight *= dt / r;
      for (int i = 0; i < d; ++i)
        jac.row(i) += weight * (*mean)[r].at(i, 0).gradient(x).transpose();
    }
    return jac;
  };
  return pair;
}

}  // namespace ssdgp
