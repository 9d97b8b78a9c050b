#pragma once

#include <Eigen/Core>
#include <cmath>
#include <type_traits>
#include <utility>

namespace ssdgp {

// Forward-mode dual number over a scalar type S. The derivative block `d`
// holds one component per differentiation direction; an empty block means
// "structurally zero derivative", which keeps constants cheap. Nesting
// Dual<Dual<...>> gives higher derivative orders.
template <class S>
struct Dual {
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  S v{};
  Vec d;

  Dual() = default;
  Dual(double x) : v(x) {}  // NOLINT: implicit, constants carry no derivative
  template <class T = S, class = std::enable_if_t<!std::is_same_v<T, double>>>
  Dual(const S& value) : v(value) {}  // NOLINT: implicit lift of one level
  Dual(S value, Vec deriv) : v(std::move(value)), d(std::move(deriv)) {}

  Dual& operator+=(const Dual& o) { *this = *this + o; return *this; }
  Dual& operator-=(const Dual& o) { *this = *this - o; return *this; }
  Dual& operator*=(const Dual& o) { *this = *this * o; return *this; }
  Dual& operator/=(const Dual& o) { *this = *this / o; return *this; }

  Dual operator-() const {
    Dual r;
    r.v = -v;
    if (d.size() > 0) r.d = -d;
    return r;
  }

  friend Dual operator+(const Dual& a, const Dual& b) {
    Dual r;
    r.v = a.v + b.v;
    if (a.d.size() > 0 && b.d.size() > 0) r.d = a.d + b.d;
    else if (a.d.size() > 0) r.d = a.d;
    else if (b.d.size() > 0) r.d = b.d;
    return r;
  }
  friend Dual operator-(const Dual& a, const Dual& b) {
    Dual r;
    r.v = a.v - b.v;
    if (a.d.size() > 0 && b.d.size() > 0) r.d = a.d - b.d;
    else if (a.d.size() > 0) r.d = a.d;
    else if (b.d.size() > 0) r.d = -b.d;
    return r;
  }
  friend Dual operator*(const Dual& a, const Dual& b) {
    Dual r;
    r.v = a.v * b.v;
    if (a.d.size() > 0 && b.d.size() > 0) r.d = a.d * b.v + b.d * a.v;
    else if (a.d.size() > 0) r.d = a.d * b.v;
    else if (b.d.size() > 0) r.d = b.d * a.v;
    return r;
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    Dual r;
    const S inv = S(1.0) / b.v;
    r.v = a.v * inv;
    if (a.d.size() > 0 && b.d.size() > 0) r.d = (a.d - b.d * r.v) * inv;
    else if (a.d.size() > 0) r.d = a.d * inv;
    else if (b.d.size() > 0) r.d = b.d * (-r.v * inv);
    return r;
  }

  friend Dual operator+(const Dual& a, double b) { Dual r(a); r.v = a.v + S(b); return r; }
  friend Dual operator+(double a, const Dual& b) { return b + a; }
  friend Dual operator-(const Dual& a, double b) { Dual r(a); r.v = a.v - S(b); return r; }
  friend Dual operator-(double a, const Dual& b) { return -b + a; }
  friend Dual operator*(const Dual& a, double b) {
    Dual r;
    r.v = a.v * S(b);
    if (a.d.size() > 0) r.d = a.d * S(b);
    return r;
  }
  friend Dual operator*(double a, const Dual& b) { return b * a; }
  friend Dual operator/(const Dual& a, double b) { return a * (1.0 / b); }
  friend Dual operator/(double a, const Dual& b) { return Dual(a) / b; }
};

// Innermost value of an arbitrarily nested dual; used for branching and tests.
inline double leaf(double x) { return x; }
template <class S>
double leaf(const Dual<S>& x) { return leaf(x.v); }

template <class S> bool operator<(const Dual<S>& a, const Dual<S>& b) { return leaf(a) < leaf(b); }
template <class S> bool operator>(const Dual<S>& a, const Dual<S>& b) { return leaf(a) > leaf(b); }
template <class S> bool operator<=(const Dual<S>& a, const Dual<S>& b) { return leaf(a) <= leaf(b); }
template <class S> bool operator>=(const Dual<S>& a, const Dual<S>& b) { return leaf(a) >= leaf(b); }
template <class S> bool operator==(const Dual<S>& a, const Dual<S>& b) { return leaf(a) == leaf(b); }
template <class S> bool operator!=(const Dual<S>& a, const Dual<S>& b) { return leaf(a) != leaf(b); }
template <class S> bool operator<(const Dual<S>& a, double b) { return leaf(a) < b; }
template <class S> bool operator>(const Dual<S>& a, double b) { return leaf(a) > b; }
template <class S> bool operator<=(const Dual<S>& a, double b) { return leaf(a) <= b; }
template <class S> bool operator>=(const Dual<S>& a, double b) { return leaf(a) >= b; }
template <class S> bool operator<(double a, const Dual<S>& b) { return a < leaf(b); }
template <class S> bool operator>(double a, const Dual<S>& b) { return a > leaf(b); }

namespace detail {
// Chain rule u -> (f(u.v), df(u.v) * u.d).
template <class S, class FwdValue>
Dual<S> chain(const Dual<S>& u, const S& value, const FwdValue& dvalue) {
  Dual<S> r;
  r.v = value;
  if (u.d.size() > 0) r.d = u.d * dvalue;
  return r;
}
}  // namespace detail

template <class S>
Dual<S> exp(const Dual<S>& u) {
  using std::exp;
  const S e = exp(u.v);
  return detail::chain(u, e, e);
}
template <class S>
Dual<S> log(const Dual<S>& u) {
  using std::log;
  return detail::chain(u, log(u.v), S(1.0) / u.v);
}
template <class S>
Dual<S> log1p(const Dual<S>& u) {
  using std::log1p;
  return detail::chain(u, log1p(u.v), S(1.0) / (S(1.0) + u.v));
}
template <class S>
Dual<S> sqrt(const Dual<S>& u) {
  using std::sqrt;
  const S r = sqrt(u.v);
  return detail::chain(u, r, S(0.5) / r);
}
template <class S>
Dual<S> sin(const Dual<S>& u) {
  using std::cos;
  using std::sin;
  return detail::chain(u, sin(u.v), cos(u.v));
}
template <class S>
Dual<S> cos(const Dual<S>& u) {
  using std::cos;
  using std::sin;
  return detail::chain(u, cos(u.v), -sin(u.v));
}
template <class S>
Dual<S> tan(const Dual<S>& u) {
  using std::cos;
  using std::tan;
  const S c = cos(u.v);
  return detail::chain(u, tan(u.v), S(1.0) / (c * c));
}
template <class S>
Dual<S> tanh(const Dual<S>& u) {
  using std::tanh;
  const S t = tanh(u.v);
  return detail::chain(u, t, S(1.0) - t * t);
}
template <class S>
Dual<S> sinh(const Dual<S>& u) {
  using std::cosh;
  using std::sinh;
  return detail::chain(u, sinh(u.v), cosh(u.v));
}
template <class S>
Dual<S> cosh(const Dual<S>& u) {
  using std::cosh;
  using std::sinh;
  return detail::chain(u, cosh(u.v), sinh(u.v));
}
template <class S>
Dual<S> atan(const Dual<S>& u) {
  using std::atan;
  return detail::chain(u, atan(u.v), S(1.0) / (S(1.0) + u.v * u.v));
}
template <class S>
Dual<S> pow(const Dual<S>& u, double p) {
  using std::pow;
  return detail::chain(u, pow(u.v, p), pow(u.v, p - 1.0) * S(p));
}
template <class S>
Dual<S> abs(const Dual<S>& u) {
  return leaf(u) < 0.0 ? -u : u;
}

// Make the std overloads visible next to the dual ones so generic numeric
// code written inside this namespace resolves both double and dual scalars.
using std::abs;
using std::atan;
using std::cos;
using std::cosh;
using std::exp;
using std::log;
using std::log1p;
using std::pow;
using std::sin;
using std::sinh;
using std::sqrt;
using std::tan;
using std::tanh;

// Numerically stable softplus log(1 + e^u), safe for large |u|.
inline double softplus(double u) { return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }
template <class S>
Dual<S> softplus(const Dual<S>& u) {
  return leaf(u) > 0.0 ? u + log1p(exp(-u)) : log1p(exp(u));
}

}  // namespace ssdgp

namespace Eigen {

template <class S>
struct NumTraits<ssdgp::Dual<S>> : GenericNumTraits<ssdgp::Dual<S>> {
  using Real = ssdgp::Dual<S>;
  using NonInteger = ssdgp::Dual<S>;
  using Nested = ssdgp::Dual<S>;
  using Literal = ssdgp::Dual<S>;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 4,
    MulCost = 8,
  };
  static Real epsilon() { return Real(NumTraits<double>::epsilon()); }
  static Real dummy_precision() { return Real(NumTraits<double>::dummy_precision()); }
  static Real highest() { return Real(NumTraits<double>::highest()); }
  static Real lowest() { return Real(NumTraits<double>::lowest()); }
  static int digits10() { return NumTraits<double>::digits10(); }
};

}  // namespace Eigen
