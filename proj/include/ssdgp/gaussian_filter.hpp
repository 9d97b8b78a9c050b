#pragma once

#include <ssdgp/kalman.hpp>
#include <ssdgp/quadrature.hpp>

#include <Eigen/Core>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssdgp {

namespace detail {

// Columns are m + sqrt(P) xi_i for the rule's unit-Gaussian nodes xi_i.
inline Eigen::MatrixXd sigma_points(const Eigen::VectorXd& m, const Eigen::MatrixXd& P,
                                    const QuadratureRule& rule) {
  Eigen::MatrixXd X = psd_sqrt(P) * rule.nodes;
  X.colwise() += m;
  return X;
}

// Accepts covariances whose smallest eigenvalue is above -1e-9 as rounding
// noise. Anything worse is flagged and patched with escalating trace-scaled
// jitter (x10, three attempts); if that cannot restore PSD the filter has
// genuinely diverged and we stop.
inline Eigen::MatrixXd ensure_psd(Eigen::MatrixXd P, std::size_t step, const std::string& context,
                                  std::vector<std::string>& warnings) {
  P = symmetrize(P);
  if (min_eigenvalue(P) >= -1e-9) return P;
  const int d = static_cast<int>(P.rows());
  double jitter = 1e-10 * std::max(1.0, P.trace() / d);
  for (int attempt = 0; attempt < 3; ++attempt) {
    warnings.push_back(context + ": repaired indefinite covariance at step " +
                       std::to_string(step));
    P += jitter * Eigen::MatrixXd::Identity(d, d);
    if (min_eigenvalue(P) >= -1e-12) return P;
    jitter *= 10.0;
  }
  throw std::runtime_error(context + ": covariance repair exhausted at step " +
                           std::to_string(step));
}

struct NodePlan {
  double t;
  std::ptrdiff_t data_index;  // -1 for an inserted integration node
};

inline std::vector<NodePlan> plan_nodes(const TimeSeries& data, int substeps) {
  std::vector<NodePlan> plan;
  plan.push_back({data.times[0], 0});
  for (std::size_t k = 1; k < data.size(); ++k) {
    const double t0 = data.times[k - 1];
    const double gap = data.times[k] - t0;
    for (int s = 1; s < substeps; ++s)
      plan.push_back({t0 + gap * s / substeps, -1});
    plan.push_back({data.times[k], static_cast<std::ptrdiff_t>(k)});
  }
  return plan;
}

}  // namespace detail

// Sigma-point Gaussian filter for a (generally nonlinear) transition pair.
// The prior (m0, P0) sits at the first data time. substeps > 1 splits each
// inter-measurement gap into equal prediction steps; the inserted nodes
// appear in the returned track without measurements. A linear measurement
// model uses the exact Kalman update.
inline PosteriorTrack gaussian_filter(const TransitionPair& pair, const MeasurementModel& meas,
                                      const TimeSeries& data, const QuadratureRule& rule,
                                      int substeps, const Eigen::VectorXd& m0,
                                      const Eigen::MatrixXd& P0) {
  data.validate();
  if (data.size() == 0) throw std::invalid_argument("gaussian filter: empty time series");
  if (substeps < 1) throw std::invalid_argument("gaussian filter: substeps must be >= 1");
  if (rule.dim() != m0.size())
    throw std::invalid_argument("gaussian filter: rule dimension does not match the state");
  if (P0.rows() != m0.size() || P0.cols() != m0.size())
    throw std::invalid_argument("gaussian filter: prior covariance shape mismatch");

  const long repairs_before = pair.repair_events ? pair.repair_events->load() : 0;
  const auto plan = detail::plan_nodes(data, substeps);
  const Eigen::VectorXd& w = rule.weights;
  const int n_pts = static_cast<int>(rule.size());

  PosteriorTrack track;
  track.nodes.reserve(plan.size());
  Eigen::VectorXd m = m0;
  Eigen::MatrixXd P = symmetrize(P0);
  for (std::size_t k = 0; k < plan.size(); ++k) {
    if (k > 0) {
      const double dt = plan[k].t - plan[k - 1].t;
      const Eigen::MatrixXd X = detail::sigma_points(m, P, rule);
      Eigen::MatrixXd fx(m.size(), n_pts);
      Eigen::MatrixXd q_mean = Eigen::MatrixXd::Zero(m.size(), m.size());
      for (int i = 0; i < n_pts; ++i) {
        fx.col(i) = pair.f(X.col(i), dt);
        q_mean += w[i] * pair.Q(X.col(i), dt);
      }
      m = fx * w;
      const Eigen::MatrixXd fc = fx.colwise() - m;
      P = detail::ensure_psd(fc * w.asDiagonal() * fc.transpose() + q_mean, k,
                             "gaussian filter", track.warnings);
    }
    TrackNode node;
    node.t = plan[k].t;
    node.m_pred = m;
    node.P_pred = P;

    const std::ptrdiff_t di = plan[k].data_index;
    if (di >= 0 && data.values[di].size() > 0) {
      node.has_measurement = true;
      const Eigen::MatrixXd noise = detail::step_noise_cov(meas, data, di);
      detail::GaussianUpdate up;
      if (meas.linear) {
        up = detail::kalman_update(m, P, meas.matrix_at(node.t), noise, data.values[di], k,
                                   "gaussian filter");
      } else {
        const Eigen::MatrixXd Y = detail::sigma_points(m, P, rule);
        Eigen::MatrixXd hz(meas.dim_y, n_pts);
        for (int i = 0; i < n_pts; ++i) hz.col(i) = meas.h(Y.col(i));
        const Eigen::VectorXd z_hat = hz * w;
        const Eigen::MatrixXd zc = hz.colwise() - z_hat;
        const Eigen::MatrixXd yc = Y.colwise() - m;
        const Eigen::MatrixXd S = zc * w.asDiagonal() * zc.transpose() + noise;
        const Eigen::MatrixXd C = yc * w.asDiagonal() * zc.transpose();
        up = detail::moment_update(m, P, data.values[di] - z_hat, S, C, k, "gaussian filter");
      }
      m = up.m;
      P = detail::ensure_psd(up.P, k, "gaussian filter", track.warnings);
      node.gain = up.gain;
      node.loglik_increment = up.loglik_increment;
      track.loglik += up.loglik_increment;
    }
    node.m_filt = m;
    node.P_filt = P;
    track.nodes.push_back(std::move(node));
  }
  if (pair.repair_events) {
    const long delta = pair.repair_events->load() - repairs_before;
    if (delta > 0)
      track.warnings.push_back("transition covariance repaired " + std::to_string(delta) +
                               " time(s)");
  }
  return track;
}

// Sigma-point smoothing pass. The cross-covariance between consecutive
// states is recomputed from the filtered moments with the same transition
// pair and rule the filter used, so no per-gap state is carried in the track.
inline PosteriorTrack gaussian_smoother(PosteriorTrack track, const TransitionPair& pair,
                                        const QuadratureRule& rule, const TimeSeries& data) {
  if (track.nodes.empty()) throw std::invalid_argument("gaussian smoother: empty track");
  if (track.nodes.front().t != data.times.front() || track.nodes.back().t != data.times.back())
    throw std::invalid_argument("gaussian smoother: track does not span the data");

  const std::size_t n = track.nodes.size();
  const Eigen::VectorXd& w = rule.weights;
  const int n_pts = static_cast<int>(rule.size());
  track.nodes[n - 1].m_smooth = track.nodes[n - 1].m_filt;
  track.nodes[n - 1].P_smooth = track.nodes[n - 1].P_filt;
  for (std::size_t k = n - 1; k-- > 0;) {
    auto& cur = track.nodes[k];
    const auto& next = track.nodes[k + 1];
    const double dt = next.t - cur.t;
    const Eigen::MatrixXd X = detail::sigma_points(cur.m_filt, cur.P_filt, rule);
    Eigen::MatrixXd fx(cur.m_filt.size(), n_pts);
    for (int i = 0; i < n_pts; ++i) fx.col(i) = pair.f(X.col(i), dt);
    const Eigen::MatrixXd xc = X.colwise() - cur.m_filt;
    const Eigen::MatrixXd fc = fx.colwise() - next.m_pred;
    const Eigen::MatrixXd D = xc * w.asDiagonal() * fc.transpose();
    const auto llt = detail::invert_predictive(next.P_pred, k + 1, "gaussian smoother",
                                               track.warnings);
    const Eigen::MatrixXd G = llt.solve(D.transpose()).transpose();
    cur.m_smooth = cur.m_filt + G * (next.m_smooth - next.m_pred);
    cur.P_smooth = symmetrize(cur.P_filt + G * (next.P_smooth - next.P_pred) * G.transpose());
  }
  track.smoothed = true;
  return track;
}

}  // namespace ssdgp
