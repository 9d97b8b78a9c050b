#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssdgp {

// Sigma-point rule for expectations against a unit Gaussian in `dim`
// dimensions: E[g(Z)] ~ sum_i w_i g(node_i). Nodes are columns.
struct QuadratureRule {
  Eigen::MatrixXd nodes;
  Eigen::VectorXd weights;
  std::string family;
  int dim() const { return static_cast<int>(nodes.rows()); }
  int size() const { return static_cast<int>(nodes.cols()); }
};

namespace detail {

// Order-p rule for the unit Gaussian on the line, from the eigenvalue
// decomposition of the Jacobi matrix of the (probabilists') Hermite
// recurrence: off-diagonal sqrt(k), weights from the first eigenvector row.
inline void gauss_hermite_1d(int p, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
  if (p < 1) throw std::invalid_argument("gauss_hermite: order must be >= 1");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(p, p);
  for (int k = 1; k < p; ++k) {
    jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
    jacobi(k - 1, k) = jacobi(k, k - 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
  nodes = es.eigenvalues();
  weights.resize(p);
  for (int i = 0; i < p; ++i) {
    const double v = es.eigenvectors()(0, i);
    weights[i] = v * v;
  }
}

inline QuadratureRule gauss_hermite(int p, int dim) {
  Eigen::VectorXd n1, w1;
  gauss_hermite_1d(p, n1, w1);
  long count = 1;
  for (int i = 0; i < dim; ++i) count *= p;
  QuadratureRule rule;
  rule.nodes.resize(dim, count);
  rule.weights.resize(count);
  for (long j = 0; j < count; ++j) {
    long rest = j;
    double w = 1.0;
    for (int i = 0; i < dim; ++i) {
      const int digit = static_cast<int>(rest % p);
      rest /= p;
      rule.nodes(i, j) = n1[digit];
      w *= w1[digit];
    }
    rule.weights[j] = w;
  }
  rule.family = "gauss_hermite(" + std::to_string(p) + ")";
  return rule;
}

inline QuadratureRule unscented(double alpha, double beta, double lambda, int dim) {
  const double lam_eff = alpha * alpha * (dim + lambda) - dim;
  if (!(dim + lam_eff > 0.0))
    throw std::invalid_argument("unscented: alpha^2 (dim + lambda) must be positive");
  const double spread = std::sqrt(dim + lam_eff);
  QuadratureRule rule;
  rule.nodes = Eigen::MatrixXd::Zero(dim, 2 * dim + 1);
  rule.weights.resize(2 * dim + 1);
  rule.weights[0] = lam_eff / (dim + lam_eff);
  for (int i = 0; i < dim; ++i) {
    rule.nodes(i, 1 + i) = spread;
    rule.nodes(i, 1 + dim + i) = -spread;
    rule.weights[1 + i] = rule.weights[1 + dim + i] = 0.5 / (dim + lam_eff);
  }
  rule.family = "unscented(" + std::to_string(alpha) + "," + std::to_string(beta) + "," +
                std::to_string(lambda) + ")";
  return rule;
}

inline QuadratureRule spherical_cubature(int dim) {
  QuadratureRule rule;
  rule.nodes = Eigen::MatrixXd::Zero(dim, 2 * dim);
  rule.weights = Eigen::VectorXd::Constant(2 * dim, 0.5 / dim);
  const double spread = std::sqrt(static_cast<double>(dim));
  for (int i = 0; i < dim; ++i) {
    rule.nodes(i, i) = spread;
    rule.nodes(i, dim + i) = -spread;
  }
  rule.family = "spherical_cubature";
  return rule;
}

}  // namespace detail

// family: "gauss_hermite(p)" (alias "gh(p)"), "unscented" or
// "unscented(alpha,beta,lambda)" with lambda defaulting to 3 - dim, and
// "spherical_cubature" (alias "cubature").
inline QuadratureRule make_rule(const std::string& family, int dim) {
  if (dim < 1) throw std::invalid_argument("make_rule: dim must be >= 1");
  const auto args_of = [&](std::size_t open) {
    std::vector<double> args;
    std::size_t close = family.find(')', open);
    if (close == std::string::npos) throw std::invalid_argument("make_rule: unbalanced '('");
    std::string inner = family.substr(open + 1, close - open - 1);
    std::size_t pos = 0;
    while (pos < inner.size()) {
      std::size_t next = inner.find(',', pos);
      if (next == std::string::npos) next = inner.size();
      args.push_back(std::stod(inner.substr(pos, next - pos)));
      pos = next + 1;
    }
    return args;
  };

  const std::size_t open = family.find('(');
  const std::string head = family.substr(0, open);
  if (head == "gauss_hermite" || head == "gh") {
    if (open == std::string::npos)
      throw std::invalid_argument("make_rule: gauss_hermite needs an order, e.g. gauss_hermite(3)");
    const auto args = args_of(open);
    return detail::gauss_hermite(static_cast<int>(args.at(0)), dim);
  }
  if (head == "unscented") {
    double alpha = 1.0, beta = 0.0, lambda = 3.0 - dim;
    if (open != std::string::npos) {
      const auto args = args_of(open);
      if (args.size() > 0) alpha = args[0];
      if (args.size() > 1) beta = args[1];
      if (args.size() > 2) lambda = args[2];
    }
    return detail::unscented(alpha, beta, lambda, dim);
  }
  if (head == "spherical_cubature" || head == "cubature") return detail::spherical_cubature(dim);
  throw std::invalid_argument("make_rule: unsupported family '" + family + "'");
}

}  // namespace ssdgp
