#pragma once

#include <ssdgp/discretise.hpp>
#include <ssdgp/gaussian_filter.hpp>
#include <ssdgp/matern.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssdgp {

// Regression data for recovering the drift of dX = a(X) dt + b dW from a
// discretely observed path. Each sample pairs a previous state with the
// increment to the next one; the state axis plays the role of time for the
// process prior over a, so it is kept sorted and strictly increasing.
struct DriftDataset {
  std::vector<double> x;   // sorted previous states
  std::vector<double> y;   // increment to the following sample
  std::vector<double> dt;  // time gap of each pair
  double b = 1.0;

  std::size_t size() const { return x.size(); }

  // Time series over the state axis. The per-pair noise b^2 dt is the
  // discretisation step noise, structural rather than tunable.
  TimeSeries to_timeseries() const {
    TimeSeries ts;
    ts.times = x;
    for (std::size_t k = 0; k < y.size(); ++k) {
      ts.values.push_back(Eigen::VectorXd::Constant(1, y[k]));
      ts.noise_covs.push_back(Eigen::MatrixXd::Constant(1, 1, b * b * dt[k]));
    }
    return ts;
  }
};

inline DriftDataset make_drift_dataset(const std::vector<PathSample>& paths, double b) {
  if (!(b > 0.0))
    throw std::invalid_argument("drift estimation: diffusion constant must be positive");
  struct Triple {
    double x, y, dt;
  };
  std::vector<Triple> pairs;
  for (const auto& path : paths) {
    if (path.times.size() != path.states.size())
      throw std::invalid_argument("drift estimation: path times and states differ in length");
    for (const auto& state : path.states)
      if (state.size() != 1) throw std::invalid_argument("drift estimation: paths must be scalar");
    for (std::size_t k = 1; k < path.times.size(); ++k) {
      const double gap = path.times[k] - path.times[k - 1];
      if (!(gap > 0.0))
        throw std::invalid_argument("drift estimation: path times must strictly increase");
      pairs.push_back({path.states[k - 1][0], path.states[k][0] - path.states[k - 1][0], gap});
    }
  }
  if (pairs.size() < 2) throw std::invalid_argument("drift estimation: fewer than 2 samples");

  std::sort(pairs.begin(), pairs.end(), [](const Triple& a, const Triple& c) { return a.x < c.x; });

  // Repeated states would give zero-gap transitions and a singular prior;
  // nudge ties apart by a fixed fraction of the axis range.
  const double range = pairs.back().x - pairs.front().x;
  const double nudge = 1e-9 * (range > 0.0 ? range : 1.0);
  DriftDataset ds;
  ds.b = b;
  for (auto& p : pairs) {
    if (!ds.x.empty() && p.x <= ds.x.back()) p.x = ds.x.back() + nudge;
    ds.x.push_back(p.x);
    ds.y.push_back(p.y);
    ds.dt.push_back(p.dt);
  }
  return ds;
}

// Mean and marginal variance of the strong order-1.5 Taylor step observation
// Y = a dt + (a' a / 2 + a'' b^2 / 4) dt^2 + b dW + a' b dZ, where dW is the
// step's Wiener increment (variance dt) and dZ its time integral, with
// Cov(dW, dZ) = dt^2/2 and Var(dZ) = dt^3/3. The variance is positive for
// every a' because the quadratic's discriminant dt^4 (1 - 4/3) is negative,
// and it collapses to the coarse-step noise b^2 dt as dt -> 0.
inline double ito15_measurement_mean(double a, double a1, double a2, double b, double dt) {
  return a * dt + 0.5 * (a1 * a + 0.5 * a2 * b * b) * dt * dt;
}

inline double ito15_measurement_var(double a1, double b, double dt) {
  return b * b * (dt + a1 * dt * dt + a1 * a1 * dt * dt * dt / 3.0);
}

namespace detail {

// State axis with optional measurement-free evaluation points merged in.
// `dts` carries the per-node time gap (zero marks an evaluation node).
inline std::pair<TimeSeries, std::vector<double>> drift_eval_series(
    const DriftDataset& ds, const std::vector<double>& eval_x) {
  struct Node {
    double x, y, dt;
    bool data;
  };
  std::vector<Node> nodes;
  for (std::size_t k = 0; k < ds.size(); ++k) nodes.push_back({ds.x[k], ds.y[k], ds.dt[k], true});
  for (double x : eval_x) {
    if (!std::isfinite(x))
      throw std::invalid_argument("drift estimation: evaluation points must be finite");
    nodes.push_back({x, 0.0, 0.0, false});
  }
  std::stable_sort(nodes.begin(), nodes.end(),
                   [](const Node& a, const Node& b) { return a.x < b.x; });
  const double range = nodes.back().x - nodes.front().x;
  const double nudge = 1e-9 * (range > 0.0 ? range : 1.0);

  TimeSeries ts;
  std::vector<double> dts;
  for (auto& n : nodes) {
    if (!ts.times.empty() && n.x <= ts.times.back()) n.x = ts.times.back() + nudge;
    ts.times.push_back(n.x);
    ts.values.push_back(n.data ? Eigen::VectorXd::Constant(1, n.y) : Eigen::VectorXd());
    ts.noise_covs.push_back(Eigen::MatrixXd::Constant(1, 1, n.data ? ds.b * ds.b * n.dt : 1.0));
    dts.push_back(n.data ? n.dt : 0.0);
  }
  return {std::move(ts), std::move(dts)};
}

}  // namespace detail

// Drift estimation with the coarse step model Y_k = a(x_{k-1}) dt_k + noise,
// noise variance b^2 dt_k: a linear observation of the process prior on a
// over the sorted state axis, solved by Kalman filtering and smoothing.
inline PosteriorTrack drift_estimate_em(const DriftDataset& ds, const MaternParams& prior,
                                        const std::vector<double>& eval_x = {}) {
  const SsgpModel prior_ssm = matern_ssm(prior);
  const LinearSdeModel linear = prior_ssm.to_linear();
  auto [ts, dts] = detail::drift_eval_series(ds, eval_x);

  const int dim = static_cast<int>(linear.dim());
  const auto axis = std::make_shared<std::vector<double>>(ts.times);
  const auto gaps = std::make_shared<std::vector<double>>(std::move(dts));
  const auto H_of_t = [axis, gaps, dim](double t) -> Eigen::MatrixXd {
    const auto it = std::lower_bound(axis->begin(), axis->end(), t);
    if (it == axis->end() || *it != t)
      throw std::logic_error("drift estimation: measurement queried off the node axis");
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(1, dim);
    H(0, 0) = (*gaps)[static_cast<std::size_t>(it - axis->begin())];
    return H;
  };
  const auto meas = MeasurementModel::linear_time_varying(1, H_of_t,
                                                          Eigen::MatrixXd::Identity(1, 1));
  return rts_smoother(kalman_filter(linear, meas, ts), linear, ts);
}

inline PosteriorTrack drift_estimate_em(const std::vector<PathSample>& paths,
                                        const MaternParams& prior, double b,
                                        const std::vector<double>& eval_x = {}) {
  return drift_estimate_em(make_drift_dataset(paths, b), prior, eval_x);
}

// Drift estimation with the order-1.5 Taylor step observation. The prior must
// carry two derivatives (nu = 5/2), so the observation is a function of the
// state (a, a', a''); a sigma-point update handles the nonlinearity and the
// observation variance is refreshed from the predicted mean of a' each step.
inline PosteriorTrack drift_estimate_ito15(const DriftDataset& ds, const MaternParams& prior,
                                           const std::vector<double>& eval_x = {},
                                           const std::string& rule_family = "unscented") {
  if (prior.nu != 2.5)
    throw std::invalid_argument(
        "drift estimation: the order-1.5 pipeline needs a nu = 5/2 prior");
  const SsgpModel prior_ssm = matern_ssm(prior);
  const LinearSdeModel linear = prior_ssm.to_linear();
  auto [ts, dts] = detail::drift_eval_series(ds, eval_x);
  const QuadratureRule rule = make_rule(rule_family, static_cast<int>(linear.dim()));
  const Eigen::VectorXd& w = rule.weights;
  const int n_pts = static_cast<int>(rule.size());

  PosteriorTrack track;
  track.nodes.reserve(ts.size());
  Eigen::VectorXd m = linear.m0;
  Eigen::MatrixXd P = linear.P0;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    if (k > 0) {
      const auto [F, Q] = detail::linear_predict(linear, ts.times[k - 1], ts.times[k]);
      m = F * m;
      P = symmetrize(F * P * F.transpose() + Q);
    }
    TrackNode node;
    node.t = ts.times[k];
    node.m_pred = m;
    node.P_pred = P;
    if (ts.values[k].size() > 0) {
      node.has_measurement = true;
      const double step_dt = dts[k];
      Eigen::MatrixXd R(1, 1);
      R(0, 0) = ito15_measurement_var(m[1], ds.b, step_dt);
      const Eigen::MatrixXd X = detail::sigma_points(m, P, rule);
      Eigen::MatrixXd hz(1, n_pts);
      for (int i = 0; i < n_pts; ++i)
        hz(0, i) = ito15_measurement_mean(X(0, i), X(1, i), X(2, i), ds.b, step_dt);
      const Eigen::VectorXd z_hat = hz * w;
      const Eigen::MatrixXd zc = hz.colwise() - z_hat;
      const Eigen::MatrixXd yc = X.colwise() - m;
      const Eigen::MatrixXd S = zc * w.asDiagonal() * zc.transpose() + R;
      const Eigen::MatrixXd C = yc * w.asDiagonal() * zc.transpose();
      const auto up = detail::moment_update(m, P, ts.values[k] - z_hat, S, C, k,
                                            "drift estimation");
      m = up.m;
      P = detail::ensure_psd(up.P, k, "drift estimation", track.warnings);
      node.gain = up.gain;
      node.loglik_increment = up.loglik_increment;
      track.loglik += up.loglik_increment;
    }
    node.m_filt = m;
    node.P_filt = P;
    track.nodes.push_back(std::move(node));
  }
  return rts_smoother(std::move(track), linear, ts);
}

inline PosteriorTrack drift_estimate_ito15(const std::vector<PathSample>& paths,
                                           const MaternParams& prior, double b,
                                           const std::vector<double>& eval_x = {},
                                           const std::string& rule_family = "unscented") {
  return drift_estimate_ito15(make_drift_dataset(paths, b), prior, eval_x, rule_family);
}

// Posterior of a over the node axis: x,mean,var rows, smoothed moments when
// the track carries them.
inline void write_drift_csv(const std::string& path, const PosteriorTrack& track) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("drift csv: cannot open '" + path + "'");
  out << std::setprecision(17);
  out << "x,mean,var\n";
  for (const auto& node : track.nodes) {
    const Eigen::VectorXd& mean = track.smoothed ? node.m_smooth : node.m_filt;
    const Eigen::MatrixXd& cov = track.smoothed ? node.P_smooth : node.P_filt;
    out << node.t << "," << mean[0] << "," << cov(0, 0) << "\n";
  }
}

}  // namespace ssdgp
