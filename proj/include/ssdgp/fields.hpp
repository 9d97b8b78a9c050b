#pragma once

#include <ssdgp/dual.hpp>

#include <algorithm>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ssdgp {

// Differentiation budget: nesting depth of the dual-number tower. Each
// generator application consumes two levels, so depth 8 supports four
// iterated applications (expansion order M <= 4).
inline constexpr int kMaxDualLevel = 8;

namespace detail {
template <int L>
struct DualLevelT {
  using type = Dual<typename DualLevelT<L - 1>::type>;
};
template <>
struct DualLevelT<0> {
  using type = double;
};
}  // namespace detail

template <int L>
using dual_t = typename detail::DualLevelT<L>::type;
template <int L>
using dvec_t = Eigen::Matrix<dual_t<L>, Eigen::Dynamic, 1>;
template <int L>
using dmat_t = Eigen::Matrix<dual_t<L>, Eigen::Dynamic, Eigen::Dynamic>;

struct GeneratorDepthError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Lift a state vector one dual level, seeding the identity directions so a
// subsequent evaluation carries first derivatives with respect to every
// component.
template <int L>
dvec_t<L + 1> seed_directions(const dvec_t<L>& x) {
  const Eigen::Index n = x.size();
  dvec_t<L + 1> out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out[i].v = x[i];
    out[i].d.setZero(n);
    out[i].d[i] = dual_t<L>(1.0);
  }
  return out;
}

// Scalar field evaluable at every dual level; implementations are immutable.
class ScalarFieldImpl {
 public:
  virtual ~ScalarFieldImpl() = default;
  virtual dual_t<0> eval_l0(const dvec_t<0>& x) const = 0;
  virtual dual_t<1> eval_l1(const dvec_t<1>& x) const = 0;
  virtual dual_t<2> eval_l2(const dvec_t<2>& x) const = 0;
  virtual dual_t<3> eval_l3(const dvec_t<3>& x) const = 0;
  virtual dual_t<4> eval_l4(const dvec_t<4>& x) const = 0;
  virtual dual_t<5> eval_l5(const dvec_t<5>& x) const = 0;
  virtual dual_t<6> eval_l6(const dvec_t<6>& x) const = 0;
  virtual dual_t<7> eval_l7(const dvec_t<7>& x) const = 0;
  virtual dual_t<8> eval_l8(const dvec_t<8>& x) const = 0;
};

template <class F>
class FunctorScalarField final : public ScalarFieldImpl {
 public:
  explicit FunctorScalarField(F f) : f_(std::move(f)) {}
  dual_t<0> eval_l0(const dvec_t<0>& x) const override { return f_(x); }
  dual_t<1> eval_l1(const dvec_t<1>& x) const override { return f_(x); }
  dual_t<2> eval_l2(const dvec_t<2>& x) const override { return f_(x); }
  dual_t<3> eval_l3(const dvec_t<3>& x) const override { return f_(x); }
  dual_t<4> eval_l4(const dvec_t<4>& x) const override { return f_(x); }
  dual_t<5> eval_l5(const dvec_t<5>& x) const override { return f_(x); }
  dual_t<6> eval_l6(const dvec_t<6>& x) const override { return f_(x); }
  dual_t<7> eval_l7(const dvec_t<7>& x) const override { return f_(x); }
  dual_t<8> eval_l8(const dvec_t<8>& x) const override { return f_(x); }

 private:
  F f_;
};

class SmoothScalarField {
 public:
  SmoothScalarField() = default;
  SmoothScalarField(std::shared_ptr<const ScalarFieldImpl> impl, int dim, int order)
      : impl_(std::move(impl)), dim_(dim), order_(order) {}

  // f must accept dvec_t<L> for every level and return the matching scalar.
  template <class F>
  static SmoothScalarField from_callable(int dim, F f, int order = kMaxDualLevel) {
    return SmoothScalarField(std::make_shared<FunctorScalarField<F>>(std::move(f)), dim, order);
  }

  static SmoothScalarField constant(int dim, double c) {
    return from_callable(dim, [c](const auto& x) {
      using S = std::decay_t<decltype(x[0])>;
      (void)x;
      return S(c);
    });
  }

  static SmoothScalarField coordinate(int dim, int i) {
    return from_callable(dim, [i](const auto& x) { return x[i]; });
  }

  bool valid() const { return impl_ != nullptr; }
  int dim() const { return dim_; }
  // Remaining derivative orders; one generator application costs two.
  int smoothness_order() const { return order_; }
  SmoothScalarField with_order(int order) const { return {impl_, dim_, order}; }

  template <int L>
  dual_t<L> eval(const dvec_t<L>& x) const {
    static_assert(L >= 0 && L <= kMaxDualLevel);
    if constexpr (L == 0) return impl_->eval_l0(x);
    else if constexpr (L == 1) return impl_->eval_l1(x);
    else if constexpr (L == 2) return impl_->eval_l2(x);
    else if constexpr (L == 3) return impl_->eval_l3(x);
    else if constexpr (L == 4) return impl_->eval_l4(x);
    else if constexpr (L == 5) return impl_->eval_l5(x);
    else if constexpr (L == 6) return impl_->eval_l6(x);
    else if constexpr (L == 7) return impl_->eval_l7(x);
    else return impl_->eval_l8(x);
  }

  double evaluate(const Eigen::VectorXd& x) const { return eval<0>(x); }

  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const {
    const dual_t<1> y = eval<1>(seed_directions<0>(x));
    Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
    if (y.d.size() > 0) g = y.d;
    return g;
  }

  Eigen::MatrixXd hessian(const Eigen::VectorXd& x) const {
    const Eigen::Index n = x.size();
    const dual_t<2> y = eval<2>(seed_directions<1>(seed_directions<0>(x)));
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
    if (y.d.size() > 0)
      for (Eigen::Index i = 0; i < n; ++i)
        if (y.d[i].d.size() > 0) h.row(i) = y.d[i].d.transpose();
    return h;
  }

 private:
  std::shared_ptr<const ScalarFieldImpl> impl_;
  int dim_ = 0;
  int order_ = 0;
};

namespace detail {
template <class Op>
class CombinedScalarField final : public ScalarFieldImpl {
 public:
  explicit CombinedScalarField(Op op) : op_(std::move(op)) {}
  dual_t<0> eval_l0(const dvec_t<0>& x) const override { return op_.template eval<0>(x); }
  dual_t<1> eval_l1(const dvec_t<1>& x) const override { return op_.template eval<1>(x); }
  dual_t<2> eval_l2(const dvec_t<2>& x) const override { return op_.template eval<2>(x); }
  dual_t<3> eval_l3(const dvec_t<3>& x) const override { return op_.template eval<3>(x); }
  dual_t<4> eval_l4(const dvec_t<4>& x) const override { return op_.template eval<4>(x); }
  dual_t<5> eval_l5(const dvec_t<5>& x) const override { return op_.template eval<5>(x); }
  dual_t<6> eval_l6(const dvec_t<6>& x) const override { return op_.template eval<6>(x); }
  dual_t<7> eval_l7(const dvec_t<7>& x) const override { return op_.template eval<7>(x); }
  dual_t<8> eval_l8(const dvec_t<8>& x) const override { return op_.template eval<8>(x); }

 private:
  Op op_;
};

struct AxpyOp {
  double alpha;
  SmoothScalarField f;
  double beta;
  SmoothScalarField g;
  template <int L>
  dual_t<L> eval(const dvec_t<L>& x) const {
    dual_t<L> r = f.eval<L>(x) * alpha;
    if (g.valid()) r += g.eval<L>(x) * beta;
    return r;
  }
};

struct MulOp {
  SmoothScalarField f;
  SmoothScalarField g;
  template <int L>
  dual_t<L> eval(const dvec_t<L>& x) const {
    return f.eval<L>(x) * g.eval<L>(x);
  }
};
}  // namespace detail

inline SmoothScalarField linear_combination(double alpha, const SmoothScalarField& f, double beta,
                                            const SmoothScalarField& g) {
  const int order = g.valid() ? std::min(f.smoothness_order(), g.smoothness_order())
                              : f.smoothness_order();
  return SmoothScalarField(
      std::make_shared<detail::CombinedScalarField<detail::AxpyOp>>(detail::AxpyOp{alpha, f, beta, g}),
      f.dim(), order);
}

inline SmoothScalarField operator+(const SmoothScalarField& f, const SmoothScalarField& g) {
  return linear_combination(1.0, f, 1.0, g);
}
inline SmoothScalarField operator-(const SmoothScalarField& f, const SmoothScalarField& g) {
  return linear_combination(1.0, f, -1.0, g);
}
inline SmoothScalarField operator*(double a, const SmoothScalarField& f) {
  return linear_combination(a, f, 0.0, SmoothScalarField());
}

// Pointwise product; differentiation budget is the smaller of the factors'.
inline SmoothScalarField operator*(const SmoothScalarField& f, const SmoothScalarField& g) {
  return SmoothScalarField(
      std::make_shared<detail::CombinedScalarField<detail::MulOp>>(detail::MulOp{f, g}), f.dim(),
      std::min(f.smoothness_order(), g.smoothness_order()));
}

// Dense grid of scalar fields sharing one state dimension. Holds the vector
// and matrix expansion targets (x, x x^T) and their generator iterates.
class FieldMatrix {
 public:
  FieldMatrix() = default;
  FieldMatrix(int rows, int cols) : rows_(rows), cols_(cols), entries_(rows * cols) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  SmoothScalarField& at(int i, int j) { return entries_[i * cols_ + j]; }
  const SmoothScalarField& at(int i, int j) const { return entries_[i * cols_ + j]; }

  // phi(x) = x as a dim x 1 grid.
  static FieldMatrix state_identity(int dim) {
    FieldMatrix m(dim, 1);
    for (int i = 0; i < dim; ++i) m.at(i, 0) = SmoothScalarField::coordinate(dim, i);
    return m;
  }

  // phi(x) = x x^T.
  static FieldMatrix state_outer(int dim) {
    FieldMatrix m(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j)
        m.at(i, j) = SmoothScalarField::from_callable(dim, [i, j](const auto& x) { return x[i] * x[j]; });
    return m;
  }

  Eigen::MatrixXd evaluate(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd out(rows_, cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) out(i, j) = at(i, j).evaluate(x);
    return out;
  }

  Eigen::VectorXd evaluate_vector(const Eigen::VectorXd& x) const {
    Eigen::VectorXd out(rows_);
    for (int i = 0; i < rows_; ++i) out[i] = at(i, 0).evaluate(x);
    return out;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<SmoothScalarField> entries_;
};

struct FdReport {
  double max_grad_rel_err = 0.0;
  double max_hess_rel_err = 0.0;
};

// Central-difference cross-check of the built-in differentiation; relative
// errors are scaled by max(1, |exact|).
inline FdReport finite_difference_check(const SmoothScalarField& field,
                                        const std::vector<Eigen::VectorXd>& points,
                                        double h = 1e-5) {
  FdReport report;
  for (const Eigen::VectorXd& x : points) {
    const Eigen::VectorXd g = field.gradient(x);
    const Eigen::MatrixXd hess = field.hessian(x);
    const Eigen::Index n = x.size();
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double fd = (field.evaluate(xp) - field.evaluate(xm)) / (2.0 * h);
      const double denom = std::max(1.0, std::abs(g[i]));
      report.max_grad_rel_err = std::max(report.max_grad_rel_err, std::abs(fd - g[i]) / denom);
      for (Eigen::Index j = 0; j < n; ++j) {
        Eigen::VectorXd xpj = xp, xmj = xm;
        xpj[j] += h;
        xmj[j] += h;
        Eigen::VectorXd xpm = xp, xmm = xm;
        xpm[j] -= h;
        xmm[j] -= h;
        const double fd2 = (field.evaluate(xpj) - field.evaluate(xpm) - field.evaluate(xmj) +
                            field.evaluate(xmm)) /
                           (4.0 * h * h);
        const double denom2 = std::max(1.0, std::abs(hess(i, j)));
        report.max_hess_rel_err =
            std::max(report.max_hess_rel_err, std::abs(fd2 - hess(i, j)) / denom2);
      }
    }
  }
  return report;
}

}  // namespace ssdgp
