#pragma once

#include <ssdgp/sde_model.hpp>

namespace ssdgp {

namespace detail {
template <class Vec>
using scalar_of = typename std::decay_t<Vec>::Scalar;
template <class Vec>
using vec_of = Eigen::Matrix<scalar_of<Vec>, Eigen::Dynamic, 1>;
template <class Vec>
using mat_of = Eigen::Matrix<scalar_of<Vec>, Eigen::Dynamic, Eigen::Dynamic>;
}  // namespace detail

// Scalar SDE dX = tanh(X) dt + dW; its transition density is known in closed
// form, which makes it the main ground-truth model of the test suite.
inline SdeModel benes_model() {
  return SdeModel(
      1, 1,
      [](const auto& x) {
        detail::vec_of<decltype(x)> a(1);
        a[0] = tanh(x[0]);
        return a;
      },
      [](const auto& x) {
        detail::mat_of<decltype(x)> b(1, 1);
        b(0, 0) = 1.0;
        return b;
      },
      "benes");
}

// Ornstein-Uhlenbeck dX = -rate X dt + diffusion dW.
inline SdeModel ou_model(double rate = 1.0, double diffusion = 1.0) {
  return SdeModel(
      1, 1,
      [rate](const auto& x) {
        detail::vec_of<decltype(x)> a(1);
        a[0] = x[0] * (-rate);
        return a;
      },
      [diffusion](const auto& x) {
        detail::mat_of<decltype(x)> b(1, 1);
        b(0, 0) = diffusion;
        return b;
      },
      "ou");
}

// dX1 = X2 dt, dX2 = (X1 (kappa - X1^2) - X2) dt + X1 dW. The dispersion
// vanishes with X1, so one-step discretisation covariances can be singular.
inline SdeModel duffing_van_der_pol_model(double kappa = 2.0) {
  return SdeModel(
      2, 1,
      [kappa](const auto& x) {
        detail::vec_of<decltype(x)> a(2);
        a[0] = x[1];
        a[1] = x[0] * (kappa - x[0] * x[0]) - x[1];
        return a;
      },
      [](const auto& x) {
        detail::mat_of<decltype(x)> b(2, 1);
        b(0, 0) = 0.0;
        b(1, 0) = x[0];
        return b;
      },
      "duffing_van_der_pol");
}

// Two-dimensional coupled softplus drift with unit dispersion; the coupling
// strength controls whether the expansion covariance stays positive definite.
inline SdeModel softplus2d_model(double kappa) {
  return SdeModel(
      2, 2,
      [kappa](const auto& x) {
        detail::vec_of<decltype(x)> a(2);
        a[0] = softplus(x[0]) + x[1] * kappa;
        a[1] = softplus(x[1]) + x[0] * kappa;
        return a;
      },
      [](const auto& x) {
        detail::mat_of<decltype(x)> b(2, 2);
        b.setZero();
        b(0, 0) = 1.0;
        b(1, 1) = 1.0;
        return b;
      },
      "softplus2d");
}

// Coordinated-turn motion in 3-D Cartesian coordinates. State
// [px, vx, py, vy, pz, vz, omega]: positions, velocities, turn rate. The turn
// couples the horizontal velocities; noise enters the velocities and the turn
// rate.
inline SdeModel coordinated_turn_model(double sigma_v = 0.1, double sigma_omega = 0.05) {
  return SdeModel(
      7, 4,
      [](const auto& x) {
        detail::vec_of<decltype(x)> a(7);
        a[0] = x[1];
        a[1] = -x[6] * x[3];
        a[2] = x[3];
        a[3] = x[6] * x[1];
        a[4] = x[5];
        a[5] = 0.0;
        a[6] = 0.0;
        return a;
      },
      [sigma_v, sigma_omega](const auto& x) {
        detail::mat_of<decltype(x)> b(7, 4);
        b.setZero();
        b(1, 0) = sigma_v;
        b(3, 1) = sigma_v;
        b(5, 2) = sigma_v;
        b(6, 3) = sigma_omega;
        return b;
      },
      "coordinated_turn");
}

// Range, azimuth, elevation of the position components of the state above.
inline Eigen::VectorXd coordinated_turn_measurement(const Eigen::VectorXd& x) {
  Eigen::VectorXd y(3);
  const double px = x[0], py = x[2], pz = x[4];
  const double horiz = std::sqrt(px * px + py * py);
  y[0] = std::sqrt(px * px + py * py + pz * pz);
  y[1] = std::atan2(py, px);
  y[2] = std::atan2(pz, horiz);
  return y;
}

}  // namespace ssdgp
