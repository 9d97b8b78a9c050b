#pragma once

#include <ssdgp/discretise.hpp>
#include <ssdgp/kalman.hpp>
#include <ssdgp/matern.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssdgp {

// Coefficient priors for the Fourier expansion
// y(t) = a0(t) + sum_n [ a_n(t) cos(2 pi f_n t) + b_n(t) sin(2 pi f_n t) ].
// ou and matern32 model each of the 2N+1 coefficients independently and put
// the oscillation into the measurement row; resonator folds the oscillation
// into the prior itself (one rotating 2-D block per frequency), which leaves
// the measurement row constant and a steady-state filter applicable.
enum class SpectroPrior { ou, matern32, resonator };

struct SpectroParams {
  SpectroPrior prior = SpectroPrior::ou;
  double ell = 1.0;
  double sigma = 1.0;

  void validate() const {
    if (!(ell > 0.0) || !(sigma > 0.0))
      throw std::invalid_argument("spectro: ell and sigma must be positive");
  }
};

inline SpectroPrior parse_spectro_prior(const std::string& name) {
  if (name == "ou") return SpectroPrior::ou;
  if (name == "matern32") return SpectroPrior::matern32;
  if (name == "resonator") return SpectroPrior::resonator;
  throw std::invalid_argument("spectro: unknown prior '" + name +
                              "' (expected ou, matern32, or resonator)");
}

// Joint linear prior over all Fourier coefficients plus the measurement row
// tying the state to the scalar signal. Coefficient blocks are stacked as
// [a0][a1][b1][a2][b2]... for the per-coefficient priors and as
// [a0][resonator f1][resonator f2]... for the resonator.
struct FourierSsm {
  std::vector<double> freqs;
  SpectroParams params;
  LinearSdeModel model;
  int block_dim = 1;

  std::size_t n_freqs() const { return freqs.size(); }
  std::size_t dim() const { return model.dim(); }
  bool constant_measurement() const { return params.prior == SpectroPrior::resonator; }

  Eigen::RowVectorXd h_row(double t) const {
    Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(dim()));
    h[0] = 1.0;
    for (std::size_t n = 0; n < freqs.size(); ++n) {
      if (params.prior == SpectroPrior::resonator) {
        h[static_cast<Eigen::Index>(1 + 2 * n)] = 1.0;
      } else {
        const double theta = 2.0 * std::numbers::pi * freqs[n] * t;
        h[block_dim * static_cast<Eigen::Index>(1 + 2 * n)] = std::cos(theta);
        h[block_dim * static_cast<Eigen::Index>(2 + 2 * n)] = std::sin(theta);
      }
    }
    return h;
  }

  // Stacked coefficient values [a0, a1..aN, b1..bN] read off a joint state.
  // The resonator state holds each coefficient pair in a frame rotating at
  // 2 pi f_n, so it is demodulated back: the rotation preserves the pair's
  // norm, hence the magnitudes are frame-independent.
  Eigen::VectorXd coefficient_means(const Eigen::VectorXd& state, double t) const {
    if (state.size() != static_cast<Eigen::Index>(dim()))
      throw std::invalid_argument("spectro: state has wrong dimension");
    const std::size_t n_f = freqs.size();
    Eigen::VectorXd c(static_cast<Eigen::Index>(1 + 2 * n_f));
    c[0] = state[0];
    for (std::size_t n = 0; n < n_f; ++n) {
      if (params.prior == SpectroPrior::resonator) {
        const double theta = 2.0 * std::numbers::pi * freqs[n] * t;
        const double z1 = state[static_cast<Eigen::Index>(1 + 2 * n)];
        const double z2 = state[static_cast<Eigen::Index>(2 + 2 * n)];
        c[static_cast<Eigen::Index>(1 + n)] = std::cos(theta) * z1 + std::sin(theta) * z2;
        c[static_cast<Eigen::Index>(1 + n_f + n)] = std::sin(theta) * z1 - std::cos(theta) * z2;
      } else {
        c[static_cast<Eigen::Index>(1 + n)] = state[block_dim * (1 + 2 * static_cast<int>(n))];
        c[static_cast<Eigen::Index>(1 + n_f + n)] =
            state[block_dim * (2 + 2 * static_cast<int>(n))];
      }
    }
    return c;
  }
};

inline FourierSsm build_fourier_ssm(const std::vector<double>& freqs,
                                    const SpectroParams& params) {
  params.validate();
  if (freqs.empty()) throw std::invalid_argument("spectro: needs at least one frequency");
  for (double f : freqs)
    if (!(f > 0.0) || !std::isfinite(f))
      throw std::invalid_argument("spectro: frequencies must be positive and finite");
  std::vector<double> sorted = freqs;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw std::invalid_argument("spectro: duplicate frequency");

  FourierSsm ssm;
  ssm.freqs = freqs;
  ssm.params = params;

  const double ell = params.ell;
  const double sigma = params.sigma;
  const int n = static_cast<int>(freqs.size());

  struct Block {
    Eigen::MatrixXd A, B, P0;
  };
  std::vector<Block> blocks;
  const auto ou_block = [&] {
    Block b;
    b.A = Eigen::MatrixXd::Constant(1, 1, -1.0 / ell);
    b.B = Eigen::MatrixXd::Constant(1, 1, sigma * std::sqrt(2.0 / ell));
    b.P0 = Eigen::MatrixXd::Constant(1, 1, sigma * sigma);
    return b;
  };

  if (params.prior == SpectroPrior::resonator) {
    ssm.block_dim = 1;
    blocks.push_back(ou_block());
    for (double f : freqs) {
      const double omega = 2.0 * std::numbers::pi * f;
      Block b;
      b.A.resize(2, 2);
      b.A << -1.0 / ell, -omega, omega, -1.0 / ell;
      b.B = sigma * std::sqrt(2.0 / ell) * Eigen::MatrixXd::Identity(2, 2);
      b.P0 = sigma * sigma * Eigen::MatrixXd::Identity(2, 2);
      blocks.push_back(std::move(b));
    }
  } else if (params.prior == SpectroPrior::ou) {
    ssm.block_dim = 1;
    blocks.assign(static_cast<std::size_t>(2 * n + 1), ou_block());
  } else {
    const SsgpModel coeff = matern_ssm(MaternParams{1.5, ell, sigma});
    Block b{coeff.A, coeff.B, coeff.P0};
    ssm.block_dim = static_cast<int>(b.A.rows());
    blocks.assign(static_cast<std::size_t>(2 * n + 1), std::move(b));
  }

  Eigen::Index dim = 0, wiener = 0;
  for (const auto& b : blocks) {
    dim += b.A.rows();
    wiener += b.B.cols();
  }
  ssm.model.A = Eigen::MatrixXd::Zero(dim, dim);
  ssm.model.B = Eigen::MatrixXd::Zero(dim, wiener);
  ssm.model.P0 = Eigen::MatrixXd::Zero(dim, dim);
  ssm.model.m0 = Eigen::VectorXd::Zero(dim);
  Eigen::Index r = 0, c = 0;
  for (const auto& b : blocks) {
    ssm.model.A.block(r, r, b.A.rows(), b.A.cols()) = b.A;
    ssm.model.B.block(r, c, b.B.rows(), b.B.cols()) = b.B;
    ssm.model.P0.block(r, r, b.P0.rows(), b.P0.cols()) = b.P0;
    r += b.A.rows();
    c += b.B.cols();
  }
  return ssm;
}

// Steady predictive covariance of the discrete model (F, Q) observed through
// (H, R): fixed point of P -> F (P - P H' (H P H' + R)^{-1} H P) F' + Q,
// iterated from P = Q to 1e-12 relative change.
inline Eigen::MatrixXd solve_dare(const Eigen::MatrixXd& F, const Eigen::MatrixXd& H,
                                  const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R) {
  const Eigen::Index d = F.rows();
  if (F.cols() != d || Q.rows() != d || Q.cols() != d || H.cols() != d || R.rows() != H.rows() ||
      R.cols() != H.rows())
    throw std::invalid_argument("dare: inconsistent matrix dimensions");

  Eigen::MatrixXd P = symmetrize(Q);
  constexpr int kMaxIters = 10000;
  for (int it = 0; it < kMaxIters; ++it) {
    const Eigen::MatrixXd S = symmetrize(H * P * H.transpose() + R);
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success || !S.allFinite())
      throw std::runtime_error("dare: singular innovation covariance at iteration " +
                               std::to_string(it));
    const Eigen::MatrixXd HP = H * P;
    const Eigen::MatrixXd next =
        symmetrize(F * (P - HP.transpose() * llt.solve(HP)) * F.transpose() + Q);
    if (!next.allFinite())
      throw std::runtime_error("dare: fixed-point iteration diverged at iteration " +
                               std::to_string(it));
    const double rel = (next - P).cwiseAbs().maxCoeff() /
                       std::max(1.0, next.cwiseAbs().maxCoeff());
    P = next;
    if (rel < 1e-12) return P;
  }
  throw std::runtime_error("dare: fixed-point iteration did not converge within 10000 iterations");
}

enum class SpectroMode { kf_rts, steady_state };

struct SpectroEstimate {
  std::vector<double> times;
  std::vector<double> freqs;
  Eigen::VectorXd alpha0;     // offset coefficient per time
  Eigen::MatrixXd alpha;      // times x freqs
  Eigen::MatrixXd beta;       // times x freqs
  Eigen::MatrixXd magnitude;  // sqrt(alpha^2 + beta^2)
  PosteriorTrack track;
};

namespace detail {

// Steady-state Kalman filter and smoother for a constant measurement row on
// a uniform grid: the predictive covariance comes from the Riccati fixed
// point, so gain and covariances are the same at every step.
inline PosteriorTrack steady_state_track(const FourierSsm& ssm, const TimeSeries& data,
                                         double xi) {
  if (!ssm.constant_measurement())
    throw std::invalid_argument(
        "spectro: steady-state mode needs the resonator prior (constant measurement row)");
  if (data.size() < 2)
    throw std::invalid_argument("spectro: steady-state mode needs at least two samples");
  const double dt = data.times[1] - data.times[0];
  for (std::size_t k = 1; k < data.size(); ++k)
    if (std::abs(data.times[k] - data.times[k - 1] - dt) > 1e-9 * std::max(1.0, std::abs(dt)))
      throw std::invalid_argument("spectro: steady-state mode needs a uniform time grid");
  for (const auto& v : data.values)
    if (v.size() == 0)
      throw std::invalid_argument("spectro: steady-state mode cannot skip measurements");

  const auto [F, Q] =
      exact_linear(ssm.model.A, ssm.model.B * ssm.model.B.transpose(), dt);
  const Eigen::MatrixXd H = ssm.h_row(data.times[0]);
  const Eigen::MatrixXd R = Eigen::MatrixXd::Constant(1, 1, xi);

  const Eigen::MatrixXd P_pred = solve_dare(F, H, Q, R);
  const Eigen::MatrixXd S = H * P_pred * H.transpose() + R;
  const double s = S(0, 0);
  const Eigen::MatrixXd K = P_pred * H.transpose() / s;
  const Eigen::MatrixXd i_kh =
      Eigen::MatrixXd::Identity(P_pred.rows(), P_pred.cols()) - K * H;
  const Eigen::MatrixXd P_filt =
      symmetrize(i_kh * P_pred * i_kh.transpose() + K * R * K.transpose());

  Eigen::LLT<Eigen::MatrixXd> pred_llt(symmetrize(P_pred));
  if (pred_llt.info() != Eigen::Success)
    throw std::runtime_error("spectro: steady predictive covariance is not positive definite");
  const Eigen::MatrixXd G = pred_llt.solve(F * P_filt).transpose();

  // Steady smoothed covariance: fixed point of its own recursion, reached
  // geometrically because the smoother gain is stable.
  Eigen::MatrixXd P_smooth = P_filt;
  for (int it = 0; it < 10000; ++it) {
    const Eigen::MatrixXd next =
        symmetrize(P_filt + G * (P_smooth - P_pred) * G.transpose());
    const double rel = (next - P_smooth).cwiseAbs().maxCoeff() /
                       std::max(1.0, next.cwiseAbs().maxCoeff());
    P_smooth = next;
    if (rel < 1e-13) break;
  }

  PosteriorTrack track;
  track.nodes.reserve(data.size());
  Eigen::VectorXd m = ssm.model.m0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (k > 0) m = F * m;
    TrackNode node;
    node.t = data.times[k];
    node.has_measurement = true;
    node.m_pred = m;
    node.P_pred = P_pred;
    const double innovation = data.values[k][0] - (H * m)(0, 0);
    m = m + K * innovation;
    node.m_filt = m;
    node.P_filt = P_filt;
    node.gain = K;
    node.loglik_increment =
        -0.5 * (innovation * innovation / s + std::log(s) + std::log(2.0 * std::numbers::pi));
    track.loglik += node.loglik_increment;
    track.nodes.push_back(std::move(node));
  }
  const std::size_t n = track.nodes.size();
  track.nodes[n - 1].m_smooth = track.nodes[n - 1].m_filt;
  track.nodes[n - 1].P_smooth = P_smooth;
  for (std::size_t k = n - 1; k-- > 0;) {
    auto& cur = track.nodes[k];
    const auto& next = track.nodes[k + 1];
    cur.m_smooth = cur.m_filt + G * (next.m_smooth - next.m_pred);
    cur.P_smooth = P_smooth;
  }
  track.smoothed = true;
  return track;
}

}  // namespace detail

inline SpectroEstimate spectro_estimate(const FourierSsm& ssm, const TimeSeries& data,
                                        SpectroMode mode = SpectroMode::kf_rts,
                                        double xi = 1e-2) {
  data.validate();
  if (data.size() == 0) throw std::invalid_argument("spectro: empty time series");
  if (!(xi > 0.0) || !std::isfinite(xi))
    throw std::invalid_argument("spectro: measurement noise must be positive");
  for (const auto& v : data.values)
    if (v.size() > 1) throw std::invalid_argument("spectro: data must be scalar");

  SpectroEstimate est;
  est.times = data.times;
  est.freqs = ssm.freqs;

  if (mode == SpectroMode::steady_state) {
    est.track = detail::steady_state_track(ssm, data, xi);
  } else {
    const auto H_of_t = [&ssm](double t) -> Eigen::MatrixXd { return ssm.h_row(t); };
    const auto meas = MeasurementModel::linear_time_varying(
        1, H_of_t, Eigen::MatrixXd::Constant(1, 1, xi));
    est.track = rts_smoother(kalman_filter(ssm.model, meas, data), ssm.model, data);
  }

  const Eigen::Index T = static_cast<Eigen::Index>(data.size());
  const Eigen::Index N = static_cast<Eigen::Index>(ssm.n_freqs());
  est.alpha0.resize(T);
  est.alpha.resize(T, N);
  est.beta.resize(T, N);
  est.magnitude.resize(T, N);
  for (Eigen::Index k = 0; k < T; ++k) {
    const auto& node = est.track.nodes[static_cast<std::size_t>(k)];
    const Eigen::VectorXd c = ssm.coefficient_means(node.m_smooth, node.t);
    est.alpha0[k] = c[0];
    for (Eigen::Index n = 0; n < N; ++n) {
      est.alpha(k, n) = c[1 + n];
      est.beta(k, n) = c[1 + N + n];
      est.magnitude(k, n) = std::hypot(est.alpha(k, n), est.beta(k, n));
    }
  }
  return est;
}

// One row per (time, frequency) pair; the offset coefficient is reported as
// the f = 0 row.
inline void write_spectro_csv(const std::string& path, const SpectroEstimate& est) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("spectro csv: cannot open '" + path + "'");
  out << std::setprecision(17);
  out << "t,f,alpha_mean,beta_mean,magnitude\n";
  for (Eigen::Index k = 0; k < est.alpha0.size(); ++k) {
    const double t = est.times[static_cast<std::size_t>(k)];
    out << t << ",0," << est.alpha0[k] << ",0," << std::abs(est.alpha0[k]) << "\n";
    for (Eigen::Index n = 0; n < est.alpha.cols(); ++n)
      out << t << "," << est.freqs[static_cast<std::size_t>(n)] << "," << est.alpha(k, n) << ","
          << est.beta(k, n) << "," << est.magnitude(k, n) << "\n";
  }
}

}  // namespace ssdgp
