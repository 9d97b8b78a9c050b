#pragma once

#include <ssdgp/fields.hpp>

#include <functional>
#include <memory>
#include <string>
#include <utility>

namespace ssdgp {

namespace detail {

class VectorFieldImpl {
 public:
  virtual ~VectorFieldImpl() = default;
  virtual dvec_t<0> eval_l0(const dvec_t<0>& x) const = 0;
  virtual dvec_t<1> eval_l1(const dvec_t<1>& x) const = 0;
  virtual dvec_t<2> eval_l2(const dvec_t<2>& x) const = 0;
  virtual dvec_t<3> eval_l3(const dvec_t<3>& x) const = 0;
  virtual dvec_t<4> eval_l4(const dvec_t<4>& x) const = 0;
  virtual dvec_t<5> eval_l5(const dvec_t<5>& x) const = 0;
  virtual dvec_t<6> eval_l6(const dvec_t<6>& x) const = 0;
  virtual dvec_t<7> eval_l7(const dvec_t<7>& x) const = 0;
  virtual dvec_t<8> eval_l8(const dvec_t<8>& x) const = 0;
};

class MatrixFieldImpl {
 public:
  virtual ~MatrixFieldImpl() = default;
  virtual dmat_t<0> eval_l0(const dvec_t<0>& x) const = 0;
  virtual dmat_t<1> eval_l1(const dvec_t<1>& x) const = 0;
  virtual dmat_t<2> eval_l2(const dvec_t<2>& x) const = 0;
  virtual dmat_t<3> eval_l3(const dvec_t<3>& x) const = 0;
  virtual dmat_t<4> eval_l4(const dvec_t<4>& x) const = 0;
  virtual dmat_t<5> eval_l5(const dvec_t<5>& x) const = 0;
  virtual dmat_t<6> eval_l6(const dvec_t<6>& x) const = 0;
  virtual dmat_t<7> eval_l7(const dvec_t<7>& x) const = 0;
  virtual dmat_t<8> eval_l8(const dvec_t<8>& x) const = 0;
};

template <class F>
class FunctorVectorField final : public VectorFieldImpl {
 public:
  explicit FunctorVectorField(F f) : f_(std::move(f)) {}
  dvec_t<0> eval_l0(const dvec_t<0>& x) const override { return f_(x); }
  dvec_t<1> eval_l1(const dvec_t<1>& x) const override { return f_(x); }
  dvec_t<2> eval_l2(const dvec_t<2>& x) const override { return f_(x); }
  dvec_t<3> eval_l3(const dvec_t<3>& x) const override { return f_(x); }
  dvec_t<4> eval_l4(const dvec_t<4>& x) const override { return f_(x); }
  dvec_t<5> eval_l5(const dvec_t<5>& x) const override { return f_(x); }
  dvec_t<6> eval_l6(const dvec_t<6>& x) const override { return f_(x); }
  dvec_t<7> eval_l7(const dvec_t<7>& x) const override { return f_(x); }
  dvec_t<8> eval_l8(const dvec_t<8>& x) const override { return f_(x); }

 private:
  F f_;
};

template <class F>
class FunctorMatrixField final : public MatrixFieldImpl {
 public:
  explicit FunctorMatrixField(F f) : f_(std::move(f)) {}
  dmat_t<0> eval_l0(const dvec_t<0>& x) const override { return f_(x); }
  dmat_t<1> eval_l1(const dvec_t<1>& x) const override { return f_(x); }
  dmat_t<2> eval_l2(const dvec_t<2>& x) const override { return f_(x); }
  dmat_t<3> eval_l3(const dvec_t<3>& x) const override { return f_(x); }
  dmat_t<4> eval_l4(const dvec_t<4>& x) const override { return f_(x); }
  dmat_t<5> eval_l5(const dvec_t<5>& x) const override { return f_(x); }
  dmat_t<6> eval_l6(const dvec_t<6>& x) const override { return f_(x); }
  dmat_t<7> eval_l7(const dvec_t<7>& x) const override { return f_(x); }
  dmat_t<8> eval_l8(const dvec_t<8>& x) const override { return f_(x); }

 private:
  F f_;
};

}  // namespace detail

// Time-homogeneous SDE dX = a(X) dt + b(X) dW. Drift and dispersion are
// stored behind a level-polymorphic interface so the infinitesimal generator
// can consume them at any differentiation depth. Time-varying systems are
// handled by augmenting the state with a clock component (unit drift, zero
// dispersion) rather than by a time argument.
class SdeModel {
 public:
  SdeModel() = default;

  // drift: dvec_t<L> -> dvec_t<L>, dispersion: dvec_t<L> -> dmat_t<L> (d x w),
  // both callable at every dual level.
  template <class FA, class FB>
  SdeModel(int dim_state, int dim_wiener, FA drift, FB dispersion, std::string name = "sde",
           int differentiation_depth = kMaxDualLevel)
      : dim_state_(dim_state),
        dim_wiener_(dim_wiener),
        depth_(differentiation_depth),
        name_(std::move(name)),
        drift_(std::make_shared<detail::FunctorVectorField<FA>>(std::move(drift))),
        dispersion_(std::make_shared<detail::FunctorMatrixField<FB>>(std::move(dispersion))) {}

  int dim_state() const { return dim_state_; }
  int dim_wiener() const { return dim_wiener_; }
  int differentiation_depth() const { return depth_; }
  const std::string& name() const { return name_; }

  template <int L>
  dvec_t<L> drift_at(const dvec_t<L>& x) const {
    static_assert(L >= 0 && L <= kMaxDualLevel);
    if constexpr (L == 0) return drift_->eval_l0(x);
    else if constexpr (L == 1) return drift_->eval_l1(x);
    else if constexpr (L == 2) return drift_->eval_l2(x);
    else if constexpr (L == 3) return drift_->eval_l3(x);
    else if constexpr (L == 4) return drift_->eval_l4(x);
    else if constexpr (L == 5) return drift_->eval_l5(x);
    else if constexpr (L == 6) return drift_->eval_l6(x);
    else if constexpr (L == 7) return drift_->eval_l7(x);
    else return drift_->eval_l8(x);
  }

  template <int L>
  dmat_t<L> dispersion_at(const dvec_t<L>& x) const {
    static_assert(L >= 0 && L <= kMaxDualLevel);
    if constexpr (L == 0) return dispersion_->eval_l0(x);
    else if constexpr (L == 1) return dispersion_->eval_l1(x);
    else if constexpr (L == 2) return dispersion_->eval_l2(x);
    else if constexpr (L == 3) return dispersion_->eval_l3(x);
    else if constexpr (L == 4) return dispersion_->eval_l4(x);
    else if constexpr (L == 5) return dispersion_->eval_l5(x);
    else if constexpr (L == 6) return dispersion_->eval_l6(x);
    else if constexpr (L == 7) return dispersion_->eval_l7(x);
    else return dispersion_->eval_l8(x);
  }

  // Gamma = b b^T.
  template <int L>
  dmat_t<L> gamma_at(const dvec_t<L>& x) const {
    const dmat_t<L> b = dispersion_at<L>(x);
    return b * b.transpose();
  }

  Eigen::VectorXd drift(const Eigen::VectorXd& x) const { return drift_at<0>(x); }
  Eigen::MatrixXd dispersion(const Eigen::VectorXd& x) const { return dispersion_at<0>(x); }
  Eigen::MatrixXd gamma(const Eigen::VectorXd& x) const { return gamma_at<0>(x); }

  // Drift Jacobian at x, column j = d(drift)/dx_j.
  Eigen::MatrixXd drift_jacobian(const Eigen::VectorXd& x) const {
    const dvec_t<1> a = drift_at<1>(seed_directions<0>(x));
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(dim_state_, x.size());
    for (int i = 0; i < dim_state_; ++i)
      if (a[i].d.size() > 0) J.row(i) = a[i].d.transpose();
    return J;
  }

 private:
  int dim_state_ = 0;
  int dim_wiener_ = 0;
  int depth_ = kMaxDualLevel;
  std::string name_;
  std::shared_ptr<const detail::VectorFieldImpl> drift_;
  std::shared_ptr<const detail::MatrixFieldImpl> dispersion_;
};

// Linear SDE dU = A(t) U dt + B(t) dW with Gaussian initial law.
struct LinearSdeModel {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  Eigen::VectorXd m0;
  Eigen::MatrixXd P0;
  std::function<Eigen::MatrixXd(double)> A_t;  // set for time-varying systems
  std::function<Eigen::MatrixXd(double)> B_t;

  bool time_varying() const { return static_cast<bool>(A_t); }
  Eigen::MatrixXd A_at(double t) const { return A_t ? A_t(t) : A; }
  Eigen::MatrixXd B_at(double t) const { return B_t ? B_t(t) : B; }
  Eigen::Index dim() const { return A.rows() > 0 ? A.rows() : m0.size(); }
};

}  // namespace ssdgp
