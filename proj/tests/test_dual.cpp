#include <catch2/catch_amalgamated.hpp>

#include <ssdgp/dual.hpp>

#include <cmath>

using ssdgp::Dual;
using ssdgp::leaf;

namespace {

using D1 = Dual<double>;
using D2 = Dual<D1>;

D1 var1(double x) {
  D1 r;
  r.v = x;
  r.d.resize(1);
  r.d[0] = 1.0;
  return r;
}

// Two nested levels seeded on the same single direction: f(var2(x)) exposes
// f(x), f'(x) twice, and f''(x).
D2 var2(double x) {
  D2 r;
  r.v = var1(x);
  r.d.resize(1);
  r.d[0] = D1(1.0);
  return r;
}

double second(const D2& y) { return y.d.size() > 0 && y.d[0].d.size() > 0 ? y.d[0].d[0] : 0.0; }
double first(const D2& y) { return y.v.d.size() > 0 ? y.v.d[0] : 0.0; }

}  // namespace

TEST_CASE("first derivatives of arithmetic") {
  const D1 x = var1(1.7);
  const D1 y = (x * x + 3.0) / (x - 0.5) - 2.0 * x;
  const double xv = 1.7;
  const double expect = (xv * xv + 3.0) / (xv - 0.5) - 2.0 * xv;
  const double dexpect = (2.0 * xv * (xv - 0.5) - (xv * xv + 3.0)) / ((xv - 0.5) * (xv - 0.5)) - 2.0;
  REQUIRE(y.v == Catch::Approx(expect).epsilon(1e-14));
  REQUIRE(y.d[0] == Catch::Approx(dexpect).epsilon(1e-14));
}

TEST_CASE("empty derivative blocks behave as zeros") {
  const D1 c(4.0);
  REQUIRE(c.d.size() == 0);
  const D1 x = var1(2.0);
  REQUIRE((c + x).d[0] == 1.0);
  REQUIRE((c - x).d[0] == -1.0);
  REQUIRE((c * x).d[0] == 4.0);
  REQUIRE((x / c).d[0] == 0.25);
  REQUIRE((c / x).d[0] == Catch::Approx(-1.0));
  REQUIRE((c * D1(3.0)).d.size() == 0);
}

TEST_CASE("second derivatives through nesting") {
  const double x = 0.8;
  const D2 y = ssdgp::tanh(var2(x));
  const double t = std::tanh(x);
  REQUIRE(leaf(y) == Catch::Approx(t).epsilon(1e-15));
  REQUIRE(first(y) == Catch::Approx(1.0 - t * t).epsilon(1e-14));
  REQUIRE(second(y) == Catch::Approx(-2.0 * t * (1.0 - t * t)).epsilon(1e-13));
}

TEST_CASE("math functions match central differences") {
  const double h = 1e-6;
  auto check = [&](auto f, double x, double tol) {
    const D1 y = f(var1(x));
    const double fd = (leaf(f(D1(x + h))) - leaf(f(D1(x - h)))) / (2.0 * h);
    REQUIRE(y.d[0] == Catch::Approx(fd).margin(tol));
  };
  check([](auto u) { return ssdgp::exp(u); }, 0.4, 1e-8);
  check([](auto u) { return ssdgp::log(u); }, 1.3, 1e-8);
  check([](auto u) { return ssdgp::log1p(u); }, 0.2, 1e-8);
  check([](auto u) { return ssdgp::sqrt(u); }, 2.1, 1e-8);
  check([](auto u) { return ssdgp::sin(u); }, 0.9, 1e-8);
  check([](auto u) { return ssdgp::cos(u); }, 0.9, 1e-8);
  check([](auto u) { return ssdgp::tan(u); }, 0.4, 1e-7);
  check([](auto u) { return ssdgp::atan(u); }, 0.7, 1e-8);
  check([](auto u) { return ssdgp::sinh(u); }, 0.5, 1e-8);
  check([](auto u) { return ssdgp::cosh(u); }, 0.5, 1e-8);
  check([](auto u) { return ssdgp::pow(u, 2.5); }, 1.4, 1e-7);
  check([](auto u) { return ssdgp::softplus(u); }, -0.3, 1e-8);
  check([](auto u) { return ssdgp::softplus(u); }, 25.0, 1e-6);
}

TEST_CASE("softplus is stable far from zero") {
  REQUIRE(ssdgp::softplus(800.0) == Catch::Approx(800.0));
  REQUIRE(ssdgp::softplus(-800.0) == Catch::Approx(0.0).margin(1e-300));
  REQUIRE(std::isfinite(leaf(ssdgp::softplus(var1(800.0)))));
}

TEST_CASE("leaf comparisons") {
  const D2 a = var2(1.0);
  const D2 b = var2(2.0);
  REQUIRE(a < b);
  REQUIRE(b > 1.5);
  REQUIRE(leaf(a) == 1.0);
}

TEST_CASE("Eigen vectors and matrices of duals") {
  Eigen::Matrix<D1, Eigen::Dynamic, 1> v(2);
  v[0] = var1(3.0);
  v[1] = D1(2.0);
  Eigen::Matrix<D1, Eigen::Dynamic, Eigen::Dynamic> M(2, 2);
  M.setZero();
  M(0, 0) = D1(1.0);
  M(0, 1) = D1(2.0);
  M(1, 0) = var1(1.0);
  M(1, 1) = D1(1.0);
  const Eigen::Matrix<D1, Eigen::Dynamic, 1> w = M * v;
  REQUIRE(leaf(w[0]) == Catch::Approx(7.0));
  REQUIRE(w[0].d[0] == Catch::Approx(1.0));   // d/dx (x + 4) with x = 3
  REQUIRE(leaf(w[1]) == Catch::Approx(5.0));  // x*3 + 2 at x = 1 seeded through M
  REQUIRE(w[1].d[0] == Catch::Approx(3.0 + 1.0));
}
