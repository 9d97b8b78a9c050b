#pragma once

#include <ssdgp/discretise.hpp>
#include <ssdgp/linalg.hpp>
#include <ssdgp/timeseries.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cstddef>
#include <fstream>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ssdgp {

namespace detail {

inline void check_linear_model(const LinearSdeModel& model) {
  const auto d = model.m0.size();
  if (d < 1) throw std::invalid_argument("linear model: empty prior mean");
  if (model.P0.rows() != d || model.P0.cols() != d)
    throw std::invalid_argument("linear model: P0 shape mismatch");
  if ((model.P0 - model.P0.transpose()).cwiseAbs().maxCoeff() >
      1e-9 * std::max(1.0, model.P0.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("linear model: P0 must be symmetric");
  if (min_eigenvalue(symmetrize(model.P0)) < -1e-9)
    throw std::invalid_argument("linear model: P0 must be positive semidefinite");
  if (!model.time_varying() &&
      (model.A.rows() != d || model.A.cols() != d || model.B.rows() != d))
    throw std::invalid_argument("linear model: coefficient shape mismatch");
}

}  // namespace detail

// Observation y = h(x) + noise. The linear case stores the matrix (constant
// or as a function of time) so filters can use the exact Kalman update.
struct MeasurementModel {
  int dim_y = 0;
  bool linear = false;
  Eigen::MatrixXd H;
  std::function<Eigen::MatrixXd(double)> H_of_t;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> h;
  Eigen::MatrixXd noise_cov;

  static MeasurementModel linear_constant(Eigen::MatrixXd H, Eigen::MatrixXd noise_cov) {
    MeasurementModel m;
    m.dim_y = static_cast<int>(H.rows());
    m.linear = true;
    m.H = std::move(H);
    m.noise_cov = std::move(noise_cov);
    m.check_noise();
    return m;
  }

  static MeasurementModel linear_time_varying(int dim_y,
                                              std::function<Eigen::MatrixXd(double)> H_of_t,
                                              Eigen::MatrixXd noise_cov) {
    MeasurementModel m;
    m.dim_y = dim_y;
    m.linear = true;
    m.H_of_t = std::move(H_of_t);
    m.noise_cov = std::move(noise_cov);
    m.check_noise();
    return m;
  }

  static MeasurementModel nonlinear(int dim_y,
                                    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> h,
                                    Eigen::MatrixXd noise_cov) {
    MeasurementModel m;
    m.dim_y = dim_y;
    m.h = std::move(h);
    m.noise_cov = std::move(noise_cov);
    m.check_noise();
    return m;
  }

  Eigen::MatrixXd matrix_at(double t) const { return H_of_t ? H_of_t(t) : H; }

  Eigen::VectorXd observe(const Eigen::VectorXd& x, double t) const {
    if (linear) return matrix_at(t) * x;
    return h(x);
  }

  void check_noise() const {
    if (dim_y < 1) throw std::invalid_argument("measurement model: dim_y must be positive");
    if (noise_cov.rows() != dim_y || noise_cov.cols() != dim_y)
      throw std::invalid_argument("measurement model: noise covariance shape mismatch");
    if (min_eigenvalue(symmetrize(noise_cov)) < -1e-12)
      throw std::invalid_argument("measurement model: noise covariance must be PSD");
  }
};

struct TrackNode {
  double t = 0.0;
  bool has_measurement = false;
  Eigen::VectorXd m_pred, m_filt, m_smooth;
  Eigen::MatrixXd P_pred, P_filt, P_smooth;
  Eigen::MatrixXd gain;
  double loglik_increment = 0.0;
};

struct PosteriorTrack {
  std::vector<TrackNode> nodes;
  double loglik = 0.0;
  bool smoothed = false;
  std::vector<std::string> warnings;
};

namespace detail {

// Transition matrix and accumulated process noise over [t0, t1]. Constant
// coefficients use the exact matrix-fraction form; time-varying ones
// integrate Phi' = A(t)Phi, Q' = A Q + Q A^T + B B^T with fixed-step RK4.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> linear_predict(const LinearSdeModel& model,
                                                                  double t0, double t1,
                                                                  int ode_substeps = 16) {
  const double dt = t1 - t0;
  if (!(dt >= 0.0)) throw std::invalid_argument("linear predict: negative gap");
  if (!model.time_varying())
    return exact_linear(model.A, model.B * model.B.transpose(), dt);

  const int d = static_cast<int>(model.dim());
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(d, d);
  const double h = dt / ode_substeps;
  auto deriv = [&](double t, const Eigen::MatrixXd& p, const Eigen::MatrixXd& qq,
                   Eigen::MatrixXd& dp, Eigen::MatrixXd& dq) {
    const Eigen::MatrixXd a = model.A_at(t);
    const Eigen::MatrixXd bbt = model.B_at(t) * model.B_at(t).transpose();
    dp = a * p;
    dq = a * qq + qq * a.transpose() + bbt;
  };
  for (int s = 0; s < ode_substeps; ++s) {
    const double t = t0 + s * h;
    Eigen::MatrixXd k1p, k1q, k2p, k2q, k3p, k3q, k4p, k4q;
    deriv(t, phi, q, k1p, k1q);
    deriv(t + 0.5 * h, phi + 0.5 * h * k1p, q + 0.5 * h * k1q, k2p, k2q);
    deriv(t + 0.5 * h, phi + 0.5 * h * k2p, q + 0.5 * h * k2q, k3p, k3q);
    deriv(t + h, phi + h * k3p, q + h * k3q, k4p, k4q);
    phi += (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
    q += (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
  }
  return {phi, symmetrize(q)};
}

struct GaussianUpdate {
  Eigen::VectorXd m;
  Eigen::MatrixXd P;
  Eigen::MatrixXd gain;
  double loglik_increment = 0.0;
};

// Moment-form update shared by the Kalman and sigma-point filters:
// gain = C S^{-1}, posterior covariance P - gain S gain^T, Gaussian
// innovation log-likelihood. S must be invertible.
inline GaussianUpdate moment_update(const Eigen::VectorXd& m, const Eigen::MatrixXd& P,
                                    const Eigen::VectorXd& innovation, const Eigen::MatrixXd& S,
                                    const Eigen::MatrixXd& cross_cov, std::size_t step,
                                    const std::string& context) {
  const Eigen::MatrixXd S_sym = symmetrize(S);
  Eigen::LLT<Eigen::MatrixXd> llt(S_sym);
  if (llt.info() != Eigen::Success || !S_sym.allFinite())
    throw std::runtime_error(context + ": singular innovation covariance at step " +
                             std::to_string(step));
  GaussianUpdate out;
  out.gain = llt.solve(cross_cov.transpose()).transpose();
  out.m = m + out.gain * innovation;
  out.P = symmetrize(P - out.gain * S_sym * out.gain.transpose());
  const double quad = innovation.dot(llt.solve(innovation));
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double d_y = static_cast<double>(innovation.size());
  out.loglik_increment = -0.5 * (quad + logdet + d_y * std::log(2.0 * std::numbers::pi));
  return out;
}

// Joseph-form linear update: numerically stable for zero or tiny noise.
inline GaussianUpdate kalman_update(const Eigen::VectorXd& m, const Eigen::MatrixXd& P,
                                    const Eigen::MatrixXd& H, const Eigen::MatrixXd& noise_cov,
                                    const Eigen::VectorXd& y, std::size_t step,
                                    const std::string& context) {
  const Eigen::MatrixXd S = H * P * H.transpose() + noise_cov;
  const Eigen::MatrixXd cross = P * H.transpose();
  GaussianUpdate out = moment_update(m, P, y - H * m, S, cross, step, context);
  const Eigen::MatrixXd i_kh =
      Eigen::MatrixXd::Identity(P.rows(), P.cols()) - out.gain * H;
  out.P = symmetrize(i_kh * P * i_kh.transpose() +
                     out.gain * noise_cov * out.gain.transpose());
  return out;
}

inline Eigen::MatrixXd step_noise_cov(const MeasurementModel& meas, const TimeSeries& data,
                                      std::size_t k) {
  if (!data.noise_covs.empty()) return data.noise_covs[k];
  return meas.noise_cov;
}

// Inverts a predictive covariance for a smoother gain. Escalating jitter
// (trace-scaled, x10 per retry, 3 retries) with a warning per attempt;
// exhaustion is an error naming the step.
inline Eigen::LLT<Eigen::MatrixXd> invert_predictive(Eigen::MatrixXd P, std::size_t step,
                                                     const std::string& context,
                                                     std::vector<std::string>& warnings) {
  P = symmetrize(P);
  Eigen::LLT<Eigen::MatrixXd> llt(P);
  if (llt.info() == Eigen::Success) return llt;
  const int d = static_cast<int>(P.rows());
  double jitter = 1e-10 * std::max(1.0, P.trace() / d);
  for (int attempt = 0; attempt < 3; ++attempt) {
    warnings.push_back(context + ": jittered predictive covariance at step " +
                       std::to_string(step));
    llt.compute(P + jitter * Eigen::MatrixXd::Identity(d, d));
    if (llt.info() == Eigen::Success) return llt;
    jitter *= 10.0;
  }
  throw std::runtime_error(context + ": singular predictive covariance at step " +
                           std::to_string(step));
}

}  // namespace detail

// Continuous-discrete Kalman filter. The prior (m0, P0) is taken to sit at
// the first data time; prediction across each gap is exact for constant
// coefficients. Missing measurements (empty value vectors) leave the
// predictive moments as the filtered ones.
inline PosteriorTrack kalman_filter(const LinearSdeModel& model, const MeasurementModel& meas,
                                    const TimeSeries& data) {
  detail::check_linear_model(model);
  data.validate();
  if (!meas.linear) throw std::invalid_argument("kalman filter: measurement must be linear");
  if (data.size() == 0) throw std::invalid_argument("kalman filter: empty time series");

  PosteriorTrack track;
  track.nodes.reserve(data.size());
  Eigen::VectorXd m = model.m0;
  Eigen::MatrixXd P = model.P0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const double t = data.times[k];
    if (k > 0) {
      const auto [F, Q] = detail::linear_predict(model, data.times[k - 1], t);
      m = F * m;
      P = symmetrize(F * P * F.transpose() + Q);
    }
    TrackNode node;
    node.t = t;
    node.m_pred = m;
    node.P_pred = P;
    if (data.values[k].size() > 0) {
      node.has_measurement = true;
      const auto up = detail::kalman_update(m, P, meas.matrix_at(t),
                                            detail::step_noise_cov(meas, data, k),
                                            data.values[k], k, "kalman filter");
      m = up.m;
      P = up.P;
      node.gain = up.gain;
      node.loglik_increment = up.loglik_increment;
      track.loglik += up.loglik_increment;
    }
    node.m_filt = m;
    node.P_filt = P;
    track.nodes.push_back(std::move(node));
  }
  return track;
}

// RTS smoothing pass. Gap transitions are recomputed from the model, so the
// call needs the same model and data the filter ran with. Smoothed moments
// at the last step coincide with the filtered ones.
inline PosteriorTrack rts_smoother(PosteriorTrack track, const LinearSdeModel& model,
                                   const TimeSeries& data) {
  if (track.nodes.empty()) throw std::invalid_argument("rts smoother: empty track");
  if (track.nodes.size() != data.size())
    throw std::invalid_argument("rts smoother: track/data length mismatch");

  const std::size_t n = track.nodes.size();
  track.nodes[n - 1].m_smooth = track.nodes[n - 1].m_filt;
  track.nodes[n - 1].P_smooth = track.nodes[n - 1].P_filt;
  for (std::size_t k = n - 1; k-- > 0;) {
    auto& cur = track.nodes[k];
    const auto& next = track.nodes[k + 1];
    const auto [F, Q] = detail::linear_predict(model, cur.t, next.t);
    (void)Q;
    const auto llt = detail::invert_predictive(next.P_pred, k + 1, "rts smoother",
                                               track.warnings);
    // G_k = P^f_k F^T (P^-_{k+1})^{-1}, computed as a solve against the
    // symmetric predictive covariance.
    const Eigen::MatrixXd G = llt.solve(F * cur.P_filt).transpose();
    cur.m_smooth = cur.m_filt + G * (next.m_smooth - next.m_pred);
    cur.P_smooth = symmetrize(cur.P_filt + G * (next.P_smooth - next.P_pred) * G.transpose());
  }
  track.smoothed = true;
  return track;
}

// Header: k,t,m_pred...,var_pred...,m_filt...,var_filt...,m_smooth...,
// var_smooth...,loglik. Variances are covariance diagonals; the loglik
// column is the running accumulator. Unsmoothed tracks emit nan in the
// smoothed columns.
inline void write_track_csv(const PosteriorTrack& track, const std::string& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("write_track_csv: cannot open " + file);
  const int d = track.nodes.empty() ? 0 : static_cast<int>(track.nodes[0].m_pred.size());
  out << "k,t";
  const char* groups[] = {"m_pred", "var_pred", "m_filt", "var_filt", "m_smooth", "var_smooth"};
  for (const char* g : groups)
    for (int i = 1; i <= d; ++i) out << "," << g << i;
  out << ",loglik\n";
  double acc = 0.0;
  for (std::size_t k = 0; k < track.nodes.size(); ++k) {
    const auto& node = track.nodes[k];
    acc += node.loglik_increment;
    out << k << "," << detail::csv_number(node.t);
    auto emit = [&](const Eigen::VectorXd& v) {
      for (int i = 0; i < d; ++i)
        out << "," << (v.size() == d ? detail::csv_number(v[i]) : "nan");
    };
    emit(node.m_pred);
    emit(node.P_pred.size() > 0 ? node.P_pred.diagonal().eval() : Eigen::VectorXd());
    emit(node.m_filt);
    emit(node.P_filt.size() > 0 ? node.P_filt.diagonal().eval() : Eigen::VectorXd());
    emit(node.m_smooth);
    emit(node.P_smooth.size() > 0 ? node.P_smooth.diagonal().eval() : Eigen::VectorXd());
    out << "," << detail::csv_number(acc) << "\n";
  }
}

}  // namespace ssdgp
