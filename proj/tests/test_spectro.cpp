#include <catch2/catch_amalgamated.hpp>

#include <ssdgp/rng.hpp>
#include <ssdgp/spectro.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <vector>

using namespace ssdgp;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

TimeSeries sampled_signal(double dt, std::size_t steps, const std::function<double(double)>& f,
                          double noise_sd = 0.0, std::uint64_t seed = 1) {
  PhiloxRng rng(seed, 0);
  TimeSeries ts;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = dt * static_cast<double>(k);
    ts.times.push_back(t);
    ts.values.push_back(Eigen::VectorXd::Constant(1, f(t) + noise_sd * rng.normal()));
  }
  return ts;
}

double lyapunov_residual(const LinearSdeModel& m) {
  return (m.A * m.P0 + m.P0 * m.A.transpose() + m.B * m.B.transpose()).cwiseAbs().maxCoeff();
}

Eigen::MatrixXd riccati_map(const Eigen::MatrixXd& P, const Eigen::MatrixXd& F,
                            const Eigen::MatrixXd& H, const Eigen::MatrixXd& Q,
                            const Eigen::MatrixXd& R) {
  const Eigen::MatrixXd S = H * P * H.transpose() + R;
  return F * (P - P * H.transpose() * S.inverse() * H * P) * F.transpose() + Q;
}

std::filesystem::path scratch_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "ssdgp_spectro_tests";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("fourier state-space assembly shapes blocks and measurement rows") {
  const std::vector<double> freqs{1.0, 2.5};

  SECTION("independent scalar coefficients") {
    const auto ssm = build_fourier_ssm(freqs, {SpectroPrior::ou, 2.0, 0.7});
    REQUIRE(ssm.dim() == 5);
    REQUIRE(ssm.block_dim == 1);
    REQUIRE_FALSE(ssm.constant_measurement());
    REQUIRE_THAT(lyapunov_residual(ssm.model), WithinAbs(0.0, 1e-12));

    const double t = 0.3;
    const Eigen::RowVectorXd h = ssm.h_row(t);
    REQUIRE(h[0] == 1.0);
    REQUIRE_THAT(h[1], WithinRel(std::cos(kTau * 1.0 * t), 1e-15));
    REQUIRE_THAT(h[2], WithinRel(std::sin(kTau * 1.0 * t), 1e-15));
    REQUIRE_THAT(h[3], WithinRel(std::cos(kTau * 2.5 * t), 1e-15));
    REQUIRE_THAT(h[4], WithinRel(std::sin(kTau * 2.5 * t), 1e-15));

    Eigen::VectorXd state(5);
    state << 7.0, 1.0, 2.0, 3.0, 4.0;
    const Eigen::VectorXd c = ssm.coefficient_means(state, t);
    REQUIRE(c.size() == 5);
    REQUIRE(c[0] == 7.0);  // offset
    REQUIRE(c[1] == 1.0);  // alpha_1
    REQUIRE(c[2] == 3.0);  // alpha_2
    REQUIRE(c[3] == 2.0);  // beta_1
    REQUIRE(c[4] == 4.0);  // beta_2
  }

  SECTION("once-differentiable coefficients double the block size") {
    const auto ssm = build_fourier_ssm(freqs, {SpectroPrior::matern32, 1.5, 1.2});
    REQUIRE(ssm.dim() == 10);
    REQUIRE(ssm.block_dim == 2);
    REQUIRE_THAT(lyapunov_residual(ssm.model), WithinAbs(0.0, 1e-12));

    const Eigen::RowVectorXd h = ssm.h_row(0.3);
    for (int idx : {1, 3, 5, 7, 9}) REQUIRE(h[idx] == 0.0);
    REQUIRE(h[0] == 1.0);
    REQUIRE_THAT(h[2], WithinRel(std::cos(kTau * 1.0 * 0.3), 1e-15));
    REQUIRE_THAT(h[4], WithinRel(std::sin(kTau * 1.0 * 0.3), 1e-15));
    REQUIRE_THAT(h[6], WithinRel(std::cos(kTau * 2.5 * 0.3), 1e-15));
    REQUIRE_THAT(h[8], WithinRel(std::sin(kTau * 2.5 * 0.3), 1e-15));
  }

  SECTION("resonator blocks keep the measurement row constant") {
    const auto ssm = build_fourier_ssm(freqs, {SpectroPrior::resonator, 4.0, 0.9});
    REQUIRE(ssm.dim() == 5);
    REQUIRE(ssm.constant_measurement());
    REQUIRE_THAT(lyapunov_residual(ssm.model), WithinAbs(0.0, 1e-12));

    const Eigen::RowVectorXd h = ssm.h_row(0.3);
    REQUIRE(h == ssm.h_row(1.7));
    Eigen::RowVectorXd expected(5);
    expected << 1.0, 1.0, 0.0, 1.0, 0.0;
    REQUIRE(h == expected);

    // A constant coefficient pair sits in the rotating frame as
    // z = R(theta) [alpha; -beta]; reading it back must invert that exactly.
    const double alpha = 0.8, beta = -0.45, t = 1.234;
    Eigen::VectorXd state = Eigen::VectorXd::Zero(5);
    for (std::size_t n = 0; n < 2; ++n) {
      const double theta = kTau * freqs[n] * t;
      state[1 + 2 * n] = alpha * std::cos(theta) + beta * std::sin(theta);
      state[2 + 2 * n] = alpha * std::sin(theta) - beta * std::cos(theta);
    }
    const Eigen::VectorXd c = ssm.coefficient_means(state, t);
    for (int n = 0; n < 2; ++n) {
      REQUIRE_THAT(c[1 + n], WithinAbs(alpha, 1e-14));
      REQUIRE_THAT(c[3 + n], WithinAbs(beta, 1e-14));
      REQUIRE_THAT(std::hypot(state[1 + 2 * n], state[2 + 2 * n]),
                   WithinRel(std::hypot(alpha, beta), 1e-14));
    }
  }

  SECTION("malformed configurations are rejected") {
    REQUIRE_THROWS_MATCHES(build_fourier_ssm({}, {}), std::invalid_argument,
                           MessageMatches(ContainsSubstring("at least one frequency")));
    REQUIRE_THROWS_MATCHES(build_fourier_ssm({1.0, 1.0}, {}), std::invalid_argument,
                           MessageMatches(ContainsSubstring("duplicate frequency")));
    REQUIRE_THROWS_MATCHES(build_fourier_ssm({1.0, -2.0}, {}), std::invalid_argument,
                           MessageMatches(ContainsSubstring("must be positive")));
    REQUIRE_THROWS_MATCHES(build_fourier_ssm({0.0}, {}), std::invalid_argument,
                           MessageMatches(ContainsSubstring("must be positive")));
    REQUIRE_THROWS_MATCHES(build_fourier_ssm({1.0}, {SpectroPrior::ou, -1.0, 1.0}),
                           std::invalid_argument,
                           MessageMatches(ContainsSubstring("ell and sigma")));

    const auto ssm = build_fourier_ssm({1.0}, {});
    REQUIRE_THROWS_MATCHES(ssm.coefficient_means(Eigen::VectorXd::Zero(7), 0.0),
                           std::invalid_argument,
                           MessageMatches(ContainsSubstring("wrong dimension")));

    REQUIRE(parse_spectro_prior("ou") == SpectroPrior::ou);
    REQUIRE(parse_spectro_prior("matern32") == SpectroPrior::matern32);
    REQUIRE(parse_spectro_prior("resonator") == SpectroPrior::resonator);
    REQUIRE_THROWS_MATCHES(parse_spectro_prior("periodic"), std::invalid_argument,
                           MessageMatches(ContainsSubstring("unknown prior")));
  }
}

TEST_CASE("near-constant coefficients reproduce the least-squares fourier fit") {
  const double f = 3.0, dt = 0.01;
  const std::size_t T = 200;
  const Eigen::Vector3d truth(0.3, 0.8, -0.5);
  const auto ts = sampled_signal(
      dt, T,
      [&](double t) {
        return truth[0] + truth[1] * std::cos(kTau * f * t) + truth[2] * std::sin(kTau * f * t);
      },
      0.1, 11);

  const auto ssm = build_fourier_ssm({f}, {SpectroPrior::ou, 1e6, 1.0});
  const auto est = spectro_estimate(ssm, ts, SpectroMode::kf_rts, 0.01);

  Eigen::MatrixXd X(T, 3);
  Eigen::VectorXd y(T);
  for (std::size_t k = 0; k < T; ++k) {
    const double t = ts.times[k];
    X(static_cast<Eigen::Index>(k), 0) = 1.0;
    X(static_cast<Eigen::Index>(k), 1) = std::cos(kTau * f * t);
    X(static_cast<Eigen::Index>(k), 2) = std::sin(kTau * f * t);
    y[static_cast<Eigen::Index>(k)] = ts.values[k][0];
  }
  const Eigen::Vector3d ls = X.colPivHouseholderQr().solve(y);

  double worst = 0.0;
  for (Eigen::Index k = 0; k < est.alpha0.size(); ++k) {
    worst = std::max(worst, std::abs(est.alpha0[k] - ls[0]));
    worst = std::max(worst, std::abs(est.alpha(k, 0) - ls[1]));
    worst = std::max(worst, std::abs(est.beta(k, 0) - ls[2]));
  }
  INFO("largest gap to the least-squares fit " << worst);
  REQUIRE(worst < 0.01);
}

TEST_CASE("zero signal keeps every coefficient at its prior") {
  const auto ts = sampled_signal(0.05, 100, [](double) { return 0.0; });
  for (const SpectroPrior prior :
       {SpectroPrior::ou, SpectroPrior::matern32, SpectroPrior::resonator}) {
    const double sigma = 0.8;
    const auto ssm = build_fourier_ssm({1.0, 2.0}, {prior, 2.0, sigma});
    const auto est = spectro_estimate(ssm, ts, SpectroMode::kf_rts, 0.01);
    REQUIRE(est.alpha0.cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(est.alpha.cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(est.beta.cwiseAbs().maxCoeff() < 1e-12);
    for (const auto& node : est.track.nodes) {
      const double var = node.P_smooth(0, 0);
      REQUIRE(var > 0.0);
      REQUIRE(var <= sigma * sigma + 1e-12);
    }
  }
}

TEST_CASE("two tones are recovered and the noiseless residual vanishes") {
  const double f1 = 1.0, f2 = 2.5, dt = 0.05;
  const std::size_t T = 400;
  const auto signal = [&](double t) {
    return std::cos(kTau * f1 * t) + 0.5 * std::sin(kTau * f2 * t);
  };
  const auto ts = sampled_signal(dt, T, signal);
  const auto ssm = build_fourier_ssm({f1, f2}, {SpectroPrior::matern32, 5.0, 1.0});

  const auto est = spectro_estimate(ssm, ts, SpectroMode::kf_rts, 1e-4);
  const Eigen::Index last = est.alpha0.size() - 1;
  REQUIRE_THAT(est.alpha(last, 0), WithinAbs(1.0, 0.05));
  REQUIRE_THAT(est.beta(last, 1), WithinAbs(0.5, 0.05));
  REQUIRE(std::abs(est.alpha0[last]) < 0.05);
  REQUIRE(std::abs(est.beta(last, 0)) < 0.05);
  REQUIRE(std::abs(est.alpha(last, 1)) < 0.05);
  REQUIRE_THAT(est.magnitude(last, 0), WithinAbs(1.0, 0.05));
  REQUIRE_THAT(est.magnitude(last, 1), WithinAbs(0.5, 0.05));

  const auto sharp = spectro_estimate(ssm, ts, SpectroMode::kf_rts, 1e-10);
  double worst = 0.0;
  for (std::size_t k = 0; k < T; ++k) {
    const double fitted = ssm.h_row(ts.times[k]).dot(sharp.track.nodes[k].m_smooth);
    worst = std::max(worst, std::abs(ts.values[k][0] - fitted));
  }
  INFO("largest residual " << worst);
  REQUIRE(worst < 1e-6);
}

TEST_CASE("steady-state filter matches the transient one after burn-in") {
  const double f1 = 1.0, f2 = 2.5, dt = 0.05;
  const auto ts = sampled_signal(
      dt, 512,
      [&](double t) { return std::cos(kTau * f1 * t) + 0.3 * std::sin(kTau * f2 * t); }, 0.05,
      21);
  const auto ssm = build_fourier_ssm({f1, f2}, {SpectroPrior::resonator, 10.0, 1.0});

  const auto transient = spectro_estimate(ssm, ts, SpectroMode::kf_rts, 0.01);
  const auto steady = spectro_estimate(ssm, ts, SpectroMode::steady_state, 0.01);

  double worst_mean = 0.0;
  for (std::size_t k = 50; k < 512; ++k)
    worst_mean = std::max(
        worst_mean, (transient.track.nodes[k].m_filt - steady.track.nodes[k].m_filt)
                        .cwiseAbs()
                        .maxCoeff());
  INFO("largest filtered-mean gap after burn-in " << worst_mean);
  REQUIRE(worst_mean < 1e-3);

  const double gain_gap = (transient.track.nodes[511].gain - steady.track.nodes[511].gain)
                              .cwiseAbs()
                              .maxCoeff();
  INFO("gain gap at the last step " << gain_gap);
  REQUIRE(gain_gap < 1e-6);

  // The steady covariances must agree with the transient limits as well.
  REQUIRE((transient.track.nodes[511].P_pred - steady.track.nodes[511].P_pred)
              .cwiseAbs()
              .maxCoeff() < 1e-6);
}

TEST_CASE("riccati fixed point solves its equation") {
  SECTION("scalar reference") {
    const auto F = Eigen::MatrixXd::Constant(1, 1, 0.5);
    const auto H = Eigen::MatrixXd::Constant(1, 1, 1.0);
    const auto Q = Eigen::MatrixXd::Constant(1, 1, 1.0);
    const auto R = Eigen::MatrixXd::Constant(1, 1, 1.0);
    const double P = solve_dare(F, H, Q, R)(0, 0);
    REQUIRE(P > 0.0);
    REQUIRE_THAT(P, WithinAbs(0.25 * P - 0.25 * P * P / (P + 1.0) + 1.0, 1e-10));
  }

  SECTION("resonator system residual and positivity") {
    const auto ssm = build_fourier_ssm({1.0, 2.5}, {SpectroPrior::resonator, 10.0, 1.0});
    const auto [F, Q] = exact_linear(ssm.model.A, ssm.model.B * ssm.model.B.transpose(), 0.05);
    const Eigen::MatrixXd H = ssm.h_row(0.0);
    const auto R = Eigen::MatrixXd::Constant(1, 1, 0.01);
    const Eigen::MatrixXd P = solve_dare(F, H, Q, R);
    REQUIRE((P - riccati_map(P, F, H, Q, R)).cwiseAbs().maxCoeff() < 1e-9);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P, Eigen::EigenvaluesOnly);
    REQUIRE(es.eigenvalues().minCoeff() > -1e-12);
  }

  SECTION("no process noise collapses the fixed point") {
    const auto F = Eigen::MatrixXd::Constant(1, 1, 0.5);
    const auto H = Eigen::MatrixXd::Constant(1, 1, 1.0);
    const auto Z = Eigen::MatrixXd::Zero(1, 1);
    const auto R = Eigen::MatrixXd::Constant(1, 1, 1.0);
    REQUIRE(solve_dare(F, H, Z, R).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("an unobserved unstable mode fails loudly") {
    const auto F = Eigen::MatrixXd::Constant(1, 1, 2.0);
    const auto H = Eigen::MatrixXd::Zero(1, 1);
    const auto Q = Eigen::MatrixXd::Constant(1, 1, 1.0);
    const auto R = Eigen::MatrixXd::Constant(1, 1, 1.0);
    REQUIRE_THROWS_MATCHES(solve_dare(F, H, Q, R), std::runtime_error,
                           MessageMatches(ContainsSubstring("dare:")));
    REQUIRE_THROWS_MATCHES(solve_dare(F, Eigen::MatrixXd::Zero(1, 2), Q, R),
                           std::invalid_argument,
                           MessageMatches(ContainsSubstring("inconsistent matrix dimensions")));
  }
}

TEST_CASE("frequency hopping concentrates the spectrogram on the active band") {
  const double dt = 0.05;
  const std::size_t T = 600;
  const auto hop_freq = [](double t) { return t < 10.0 ? 1.0 : (t < 20.0 ? 3.0 : 2.0); };
  const auto ts = sampled_signal(
      dt, T, [&](double t) { return std::sin(kTau * hop_freq(t) * t); }, 0.05, 33);

  const auto ssm = build_fourier_ssm({1.0, 2.0, 3.0}, {SpectroPrior::ou, 0.5, 1.0});
  const auto est = spectro_estimate(ssm, ts, SpectroMode::kf_rts, 0.01);

  std::size_t hits = 0;
  for (std::size_t k = 0; k < T; ++k) {
    Eigen::Index argmax = 0;
    est.magnitude.row(static_cast<Eigen::Index>(k)).maxCoeff(&argmax);
    if (est.freqs[static_cast<std::size_t>(argmax)] == hop_freq(ts.times[k])) ++hits;
  }
  INFO("band matched at " << hits << " of " << T << " steps");
  REQUIRE(hits >= static_cast<std::size_t>(0.9 * T));
}

TEST_CASE("spectro csv lists offset and per-frequency rows") {
  const auto ts = sampled_signal(0.1, 5, [](double t) { return std::sin(kTau * t); });
  const auto ssm = build_fourier_ssm({1.0, 2.0}, {SpectroPrior::ou, 1.0, 1.0});
  const auto est = spectro_estimate(ssm, ts, SpectroMode::kf_rts, 0.01);

  const auto file = scratch_dir() / "spectro.csv";
  write_spectro_csv(file.string(), est);

  std::ifstream in(file);
  std::string line;
  REQUIRE(std::getline(in, line));
  REQUIRE(line == "t,f,alpha_mean,beta_mean,magnitude");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(row, cell, ',')) vals.push_back(std::stod(cell));
    REQUIRE(vals.size() == 5);
    rows.push_back(vals);
  }
  REQUIRE(rows.size() == 5 * 3);
  for (std::size_t k = 0; k < 5; ++k) {
    const auto& offset = rows[3 * k];
    REQUIRE(offset[0] == ts.times[k]);
    REQUIRE(offset[1] == 0.0);
    REQUIRE(offset[2] == est.alpha0[static_cast<Eigen::Index>(k)]);
    REQUIRE(offset[3] == 0.0);
    REQUIRE(offset[4] == std::abs(est.alpha0[static_cast<Eigen::Index>(k)]));
    for (Eigen::Index n = 0; n < 2; ++n) {
      const auto& band = rows[3 * k + 1 + static_cast<std::size_t>(n)];
      REQUIRE(band[1] == est.freqs[static_cast<std::size_t>(n)]);
      REQUIRE(band[2] == est.alpha(static_cast<Eigen::Index>(k), n));
      REQUIRE(band[3] == est.beta(static_cast<Eigen::Index>(k), n));
      REQUIRE(band[4] == est.magnitude(static_cast<Eigen::Index>(k), n));
    }
  }

  REQUIRE_THROWS_MATCHES(write_spectro_csv("/nonexistent_dir_zz/s.csv", est), std::runtime_error,
                         MessageMatches(ContainsSubstring("cannot open")));
}

TEST_CASE("estimation rejects malformed requests") {
  const auto ts = sampled_signal(0.1, 20, [](double t) { return std::sin(kTau * t); });
  const auto resonator = build_fourier_ssm({1.0}, {SpectroPrior::resonator, 5.0, 1.0});
  const auto ou = build_fourier_ssm({1.0}, {SpectroPrior::ou, 5.0, 1.0});

  REQUIRE_THROWS_MATCHES(spectro_estimate(ou, ts, SpectroMode::steady_state, 0.01),
                         std::invalid_argument,
                         MessageMatches(ContainsSubstring("resonator prior")));

  TimeSeries jittered = ts;
  jittered.times[10] += 0.01;
  REQUIRE_THROWS_MATCHES(spectro_estimate(resonator, jittered, SpectroMode::steady_state, 0.01),
                         std::invalid_argument,
                         MessageMatches(ContainsSubstring("uniform time grid")));

  TimeSeries gappy = ts;
  gappy.values[5] = Eigen::VectorXd();
  REQUIRE_THROWS_MATCHES(spectro_estimate(resonator, gappy, SpectroMode::steady_state, 0.01),
                         std::invalid_argument,
                         MessageMatches(ContainsSubstring("cannot skip measurements")));

  TimeSeries tiny;
  tiny.times = {0.0};
  tiny.values = {Eigen::VectorXd::Zero(1)};
  REQUIRE_THROWS_MATCHES(spectro_estimate(resonator, tiny, SpectroMode::steady_state, 0.01),
                         std::invalid_argument,
                         MessageMatches(ContainsSubstring("at least two samples")));

  REQUIRE_THROWS_MATCHES(spectro_estimate(ou, ts, SpectroMode::kf_rts, 0.0),
                         std::invalid_argument,
                         MessageMatches(ContainsSubstring("noise must be positive")));

  TimeSeries planar = ts;
  planar.values[0] = Eigen::VectorXd::Zero(2);
  REQUIRE_THROWS_MATCHES(spectro_estimate(ou, planar, SpectroMode::kf_rts, 0.01),
                         std::invalid_argument,
                         MessageMatches(ContainsSubstring("data must be scalar")));

  TimeSeries empty;
  REQUIRE_THROWS_MATCHES(spectro_estimate(ou, empty, SpectroMode::kf_rts, 0.01),
                         std::invalid_argument,
                         MessageMatches(ContainsSubstring("empty time series")));
}
