#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace ssdgp {

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

struct PsdRepair {
  Eigen::MatrixXd matrix;
  bool repaired = false;
  double min_eigenvalue = 0.0;
};

// Shift-to-PSD policy used everywhere a covariance must be fed to a Cholesky
// or a filter: symmetrise, and if the smallest eigenvalue is negative add
// (|lambda_min| + jitter) I. Callers log via the `repaired` flag.
inline PsdRepair repair_psd(const Eigen::MatrixXd& m, double jitter = 1e-9) {
  PsdRepair out;
  out.matrix = symmetrize(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.matrix, Eigen::EigenvaluesOnly);
  out.min_eigenvalue = es.eigenvalues().minCoeff();
  if (out.min_eigenvalue < 0.0) {
    out.matrix += (std::abs(out.min_eigenvalue) + jitter) *
                  Eigen::MatrixXd::Identity(m.rows(), m.cols());
    out.repaired = true;
  }
  return out;
}

// Symmetric square root with negative eigenvalues clamped to zero. Unlike a
// Cholesky factor this tolerates the rank-deficient noise covariances that
// partially observed diffusions produce.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(m));
  if (es.info() != Eigen::Success) throw std::runtime_error("psd_sqrt: eigen decomposition failed");
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

inline double min_eigenvalue(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

// count log-spaced points on [lo, hi], endpoints included.
inline std::vector<double> log_spaced(double lo, double hi, int count) {
  if (!(lo > 0.0) || !(hi >= lo) || count < 1)
    throw std::invalid_argument("log_spaced: need 0 < lo <= hi and count >= 1");
  std::vector<double> out(count);
  if (count == 1) {
    out[0] = hi;
    return out;
  }
  const double la = std::log(lo), lb = std::log(hi);
  for (int i = 0; i < count; ++i)
    out[i] = std::exp(la + (lb - la) * static_cast<double>(i) / (count - 1));
  out.back() = hi;
  return out;
}

namespace detail {

inline double binomial(int n, int k) {
  double v = 1.0;
  for (int i = 0; i < k; ++i) v = v * (n - i) / (i + 1);
  return v;
}

}  // namespace detail

}  // namespace ssdgp
