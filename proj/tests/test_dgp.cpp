#include <ssdgp/dgp.hpp>
#include <ssdgp/dgp_json.hpp>
#include <ssdgp/rng.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

using Catch::Matchers::ContainsSubstring;
using ssdgp::DgpElementSpec;
using ssdgp::DgpGraph;
using ssdgp::MaternParams;
using ssdgp::ParentRole;
using ssdgp::SsdgpModel;

namespace {

// Three elements: 2 drives the length scale of 1, 3 drives its magnitude.
std::vector<DgpElementSpec> chain3_spec(int dim = 1) {
  return {{1, 0, ParentRole::length_scale, dim},
          {2, 1, ParentRole::length_scale, dim},
          {3, 1, ParentRole::magnitude, dim}};
}

SsdgpModel make_m12(double ell2, double sig2, double ell3, double sig3,
                    const std::string& transform = "exp") {
  const DgpGraph graph = ssdgp::build_graph(chain3_spec());
  const std::vector<MaternParams> params = {
      {0.5, 1.0, 1.0}, {0.5, ell2, sig2}, {0.5, ell3, sig3}};
  return ssdgp::assemble(graph, params, {{1, ssdgp::make_transform(transform)}});
}

SsdgpModel make_m32(double ell2, double sig2, double ell3, double sig3,
                    const std::string& transform = "exp") {
  const DgpGraph graph = ssdgp::build_graph(chain3_spec(2));
  const std::vector<MaternParams> params = {
      {1.5, 1.0, 1.0}, {1.5, ell2, sig2}, {1.5, ell3, sig3}};
  return ssdgp::assemble(graph, params, {{1, ssdgp::make_transform(transform)}});
}

std::vector<double> make_grid(double t0, double t1, int n) {
  std::vector<double> g(n);
  for (int k = 0; k < n; ++k) g[k] = t0 + (t1 - t0) * k / (n - 1);
  return g;
}

Eigen::MatrixXd fd_jacobian(const ssdgp::SdeModel& model, const Eigen::VectorXd& x,
                            double h = 1e-5) {
  const int d = model.dim_state();
  Eigen::MatrixXd J(d, d);
  for (int j = 0; j < d; ++j) {
    Eigen::VectorXd hi = x, lo = x;
    hi[j] += h;
    lo[j] -= h;
    J.col(j) = (model.drift(hi) - model.drift(lo)) / (2.0 * h);
  }
  return J;
}

std::filesystem::path scratch_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "ssdgp_dgp_tests";
  std::filesystem::create_directories(dir);
  return dir;
}

void write_file(const std::filesystem::path& p, const std::string& body) {
  std::ofstream out(p);
  out << body;
}

}  // namespace

TEST_CASE("graph construction accepts the reference topologies") {
  const DgpGraph chain = ssdgp::build_graph(chain3_spec());
  CHECK(chain.size() == 3);
  CHECK(chain.joint_dim() == 3);
  CHECK(chain.parent_sets[0] == std::vector<int>{1});
  CHECK(chain.parent_sets[1] == std::vector<int>{2, 3});
  CHECK(chain.role_parent(1, ParentRole::length_scale) == 2);
  CHECK(chain.role_parent(1, ParentRole::magnitude) == 3);
  CHECK(chain.role_parent(2, ParentRole::length_scale) == 0);

  // Seven elements in two levels: 2,3 drive 1; 4,5 drive 2; 6,7 drive 3.
  const DgpGraph tree = ssdgp::build_graph({{1, 0, ParentRole::length_scale, 1},
                                            {2, 1, ParentRole::length_scale, 1},
                                            {3, 1, ParentRole::magnitude, 1},
                                            {4, 2, ParentRole::length_scale, 1},
                                            {5, 2, ParentRole::magnitude, 1},
                                            {6, 3, ParentRole::length_scale, 1},
                                            {7, 3, ParentRole::magnitude, 1}});
  CHECK(tree.parent_sets[1] == std::vector<int>{2, 3});
  CHECK(tree.parent_sets[3] == std::vector<int>{6, 7});
  CHECK(tree.joint_dim() == 7);
  CHECK(tree.offset(7) == 6);

  // Two outputs side by side are allowed; only element 1 is forced to be one.
  const DgpGraph twin = ssdgp::build_graph({{1, 0, ParentRole::length_scale, 1},
                                            {2, 0, ParentRole::length_scale, 2},
                                            {3, 1, ParentRole::magnitude, 1}});
  CHECK(twin.parent_sets[0] == std::vector<int>{1, 2});
  CHECK(twin.offset(3) == 3);
}

TEST_CASE("graph construction rejects malformed hierarchies") {
  CHECK_THROWS_WITH(ssdgp::build_graph({}), ContainsSubstring("at least one element"));
  CHECK_THROWS_WITH(ssdgp::build_graph({{1, 0, ParentRole::length_scale, 1},
                                        {2, 2, ParentRole::length_scale, 1}}),
                    ContainsSubstring("earlier element"));
  CHECK_THROWS_WITH(ssdgp::build_graph({{1, 0, ParentRole::length_scale, 1},
                                        {2, 3, ParentRole::length_scale, 1},
                                        {3, 1, ParentRole::length_scale, 1}}),
                    ContainsSubstring("earlier element"));
  CHECK_THROWS_WITH(ssdgp::build_graph({{1, 0, ParentRole::length_scale, 1},
                                        {2, 1, ParentRole::length_scale, 1},
                                        {2, 1, ParentRole::magnitude, 1}}),
                    ContainsSubstring("duplicate element index 2"));
  CHECK_THROWS_WITH(ssdgp::build_graph({{1, 0, ParentRole::length_scale, 1},
                                        {3, 1, ParentRole::length_scale, 1}}),
                    ContainsSubstring("missing index 2"));
  CHECK_THROWS_WITH(ssdgp::build_graph({{1, 1, ParentRole::length_scale, 1}}),
                    ContainsSubstring("element 1 must be an output"));
  CHECK_THROWS_WITH(ssdgp::build_graph({{1, 0, ParentRole::length_scale, 1},
                                        {2, 1, ParentRole::magnitude, 1},
                                        {3, 1, ParentRole::magnitude, 1}}),
                    ContainsSubstring("both drive the magnitude of element 1"));
  CHECK_THROWS_WITH(ssdgp::build_graph({{1, 0, ParentRole::length_scale, 0}}),
                    ContainsSubstring("non-positive state dimension"));
}

TEST_CASE("random hierarchies satisfy the partition axioms") {
  ssdgp::PhiloxRng rng(314, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const int L = 2 + static_cast<int>(rng.uniform() * 7.0);
    std::vector<DgpElementSpec> spec;
    // Track free (target, role) slots so valid specs never duplicate a role.
    std::vector<std::array<bool, 2>> free_role(L + 1, {true, true});
    for (int i = 1; i <= L; ++i) {
      DgpElementSpec e;
      e.index = i;
      e.dim = 1;
      if (i > 1) {
        std::vector<std::pair<int, int>> slots = {{0, 0}};
        for (int j = 1; j < i; ++j)
          for (int role = 0; role < 2; ++role)
            if (free_role[j][role]) slots.emplace_back(j, role);
        const auto pick = slots[static_cast<std::size_t>(rng.uniform() * slots.size())];
        e.parent_of = pick.first;
        e.role = pick.second == 0 ? ParentRole::length_scale : ParentRole::magnitude;
        if (pick.first > 0) free_role[pick.first][pick.second] = false;
      }
      spec.push_back(e);
    }
    const DgpGraph graph = ssdgp::build_graph(spec);

    // Every element sits in exactly one parent collection.
    std::vector<int> seen(L + 1, 0);
    for (const auto& set : graph.parent_sets)
      for (int p : set) ++seen[p];
    for (int i = 1; i <= L; ++i) CHECK(seen[i] == 1);

    // Corrupting the same spec breaks validation.
    auto forward = spec;
    forward.back().parent_of = L;
    CHECK_THROWS_AS(ssdgp::build_graph(forward), std::invalid_argument);
    if (L >= 3) {
      auto duped = spec;
      duped[2].parent_of = duped[1].parent_of = 1;
      duped[2].role = duped[1].role = ParentRole::length_scale;
      CHECK_THROWS_AS(ssdgp::build_graph(duped), std::invalid_argument);
    }
  }
}

TEST_CASE("transforms are positive, increasing, and validated by name") {
  const auto exp_t = ssdgp::make_transform("exp");
  const auto soft = ssdgp::make_transform("softplus");
  const auto arct = ssdgp::make_transform("shifted_arctan");
  CHECK(exp_t.forward(0.0) == 1.0);
  CHECK(soft.forward(0.0) == Catch::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(arct.forward(0.0) == Catch::Approx(std::numbers::pi / 2.0).epsilon(1e-14));
  for (double u : {-4.0, -1.0, 0.3, 2.5}) {
    for (const auto& t : {exp_t, soft, arct}) {
      CHECK(t.forward(u) > 0.0);
      CHECK(t.forward(u + 0.5) > t.forward(u));
    }
    CHECK(soft.forward(u) == Catch::Approx(std::log1p(std::exp(u))).epsilon(1e-12));
    CHECK(arct.forward(u) == Catch::Approx(std::atan(u) + std::numbers::pi / 2).epsilon(1e-12));
  }
  CHECK_THROWS_WITH(ssdgp::make_transform("logit"), ContainsSubstring("unknown transform"));
}

TEST_CASE("assembly reproduces the exponential three-element coefficients") {
  const double ell2 = 0.8, sig2 = 1.3, ell3 = 2.0, sig3 = 0.6;
  const SsdgpModel model = make_m12(ell2, sig2, ell3, sig3);
  CHECK(model.dim() == 3);
  CHECK(model.joint.dim_wiener() == 3);
  CHECK(model.value_index(2) == 1);

  ssdgp::PhiloxRng rng(42, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::VectorXd x = rng.normal_vector(3);
    const double l1 = std::exp(x[1]);
    const double s1 = std::exp(x[2]);
    const Eigen::VectorXd a = model.joint.drift(x);
    CHECK(a[0] == Catch::Approx(-x[0] / l1).margin(1e-14));
    CHECK(a[1] == Catch::Approx(-x[1] / ell2).margin(1e-14));
    CHECK(a[2] == Catch::Approx(-x[2] / ell3).margin(1e-14));
    const Eigen::MatrixXd b = model.joint.dispersion(x);
    REQUIRE(b.rows() == 3);
    REQUIRE(b.cols() == 3);
    CHECK(b(0, 0) == Catch::Approx(std::sqrt(2.0) * s1 / std::sqrt(l1)).epsilon(1e-13));
    CHECK(b(1, 1) == Catch::Approx(std::sqrt(2.0) * sig2 / std::sqrt(ell2)).epsilon(1e-13));
    CHECK(b(2, 2) == Catch::Approx(std::sqrt(2.0) * sig3 / std::sqrt(ell3)).epsilon(1e-13));
    CHECK(b(0, 1) == 0.0);
    CHECK(b(1, 0) == 0.0);
    CHECK(b(2, 1) == 0.0);
  }
}

TEST_CASE("assembly with fixed parameters stacks independent stationary models") {
  const DgpGraph graph = ssdgp::build_graph(
      {{1, 0, ParentRole::length_scale, 1}, {2, 0, ParentRole::length_scale, 2}});
  const std::vector<MaternParams> params = {{0.5, 0.7, 1.2}, {1.5, 1.4, 0.9}};
  const SsdgpModel model = ssdgp::assemble(graph, params);
  const auto sub1 = ssdgp::matern_ssm(params[0]);
  const auto sub2 = ssdgp::matern_ssm(params[1]);

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(3, 3);
  A.block(0, 0, 1, 1) = sub1.A;
  A.block(1, 1, 2, 2) = sub2.A;
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(3, 2);
  B.block(0, 0, 1, 1) = sub1.B;
  B.block(1, 1, 2, 1) = sub2.B;

  ssdgp::PhiloxRng rng(7, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::VectorXd x = rng.normal_vector(3);
    CHECK((model.joint.drift(x) - A * x).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((model.joint.dispersion(x) - B).cwiseAbs().maxCoeff() < 1e-14);
  }
  const auto [m0, P0] = ssdgp::stationary_prior(model);
  CHECK(m0.isZero(0.0));
  CHECK((P0.block(0, 0, 1, 1) - sub1.P0).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((P0.block(1, 1, 2, 2) - sub2.P0).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(P0.block(0, 1, 1, 2).isZero(0.0));
}

TEST_CASE("assembly rejects inconsistent inputs") {
  const DgpGraph graph = ssdgp::build_graph(chain3_spec());
  const std::vector<MaternParams> params = {{0.5, 1.0, 1.0}, {0.5, 1.0, 1.0}, {0.5, 1.0, 1.0}};
  CHECK_THROWS_WITH(ssdgp::assemble(graph, params, {}), ContainsSubstring("none was given"));
  CHECK_THROWS_WITH(ssdgp::assemble(graph, {params[0], params[1]}),
                    ContainsSubstring("expected 3 parameter sets"));
  CHECK_THROWS_WITH(
      ssdgp::assemble(graph, {MaternParams{1.5, 1.0, 1.0}, params[1], params[2]}),
      ContainsSubstring("state dimension"));
  CHECK_THROWS_WITH(
      ssdgp::assemble(graph, {MaternParams{2.0, 1.0, 1.0}, params[1], params[2]}),
      ContainsSubstring("nu"));
}

TEST_CASE("smooth hierarchy assembles with a singular explicit-step covariance") {
  const double ell2 = 0.5, sig2 = 2.0, ell3 = 0.5, sig3 = 2.0;
  const SsdgpModel model = make_m32(ell2, sig2, ell3, sig3);
  CHECK(model.dim() == 6);
  CHECK(model.joint.dim_wiener() == 3);

  ssdgp::PhiloxRng rng(11, 0);
  const Eigen::VectorXd x = rng.normal_vector(6);
  const double l1 = std::exp(x[2]);  // transform reads the parent value component
  const double s1 = std::exp(x[4]);
  const double k1 = std::sqrt(3.0) / l1;
  const double k2 = std::sqrt(3.0) / ell2;
  const Eigen::VectorXd a = model.joint.drift(x);
  CHECK(a[0] == Catch::Approx(x[1]).margin(1e-15));
  CHECK(a[1] == Catch::Approx(-k1 * k1 * x[0] - 2.0 * k1 * x[1]).epsilon(1e-13));
  CHECK(a[2] == Catch::Approx(x[3]).margin(1e-15));
  CHECK(a[3] == Catch::Approx(-k2 * k2 * x[2] - 2.0 * k2 * x[3]).epsilon(1e-13));
  const Eigen::MatrixXd b = model.joint.dispersion(x);
  CHECK(b(1, 0) == Catch::Approx(2.0 * s1 * std::pow(k1, 1.5)).epsilon(1e-13));
  CHECK(b(3, 1) == Catch::Approx(2.0 * sig2 * std::pow(k2, 1.5)).epsilon(1e-13));
  CHECK(b(0, 0) == 0.0);

  // The explicit scheme inherits rank-one blocks: only the derivative row of
  // each element receives noise, so the observed block's covariance is
  // singular.
  const ssdgp::TransitionPair em = ssdgp::euler_maruyama(model.joint);
  const Eigen::MatrixXd Q = em.Q(x, 0.01);
  CHECK(Q(0, 0) == 0.0);
  CHECK(Q(1, 1) > 0.0);
  CHECK(Q.block(0, 0, 2, 2).determinant() == 0.0);
}

TEST_CASE("joint drift Jacobian matches finite differences") {
  ssdgp::PhiloxRng rng(2024, 3);
  const SsdgpModel narrow = make_m12(0.8, 1.3, 2.0, 0.6, "softplus");
  const SsdgpModel smooth = make_m32(0.5, 2.0, 1.5, 0.7, "shifted_arctan");
  for (const SsdgpModel* model : {&narrow, &smooth}) {
    for (int trial = 0; trial < 4; ++trial) {
      const Eigen::VectorXd x = rng.normal_vector(model->dim());
      const Eigen::MatrixXd J = model->joint.drift_jacobian(x);
      const Eigen::MatrixXd J_fd = fd_jacobian(model->joint, x);
      const double scale = std::max(1.0, J.cwiseAbs().maxCoeff());
      CHECK((J - J_fd).cwiseAbs().maxCoeff() / scale < 1e-5);
    }
  }
}

TEST_CASE("frozen-coefficient stepping matches the scalar exponential formulas") {
  const double ell2 = 0.8, sig2 = 1.3, ell3 = 2.0, sig3 = 0.6;
  const SsdgpModel model = make_m12(ell2, sig2, ell3, sig3);
  const ssdgp::TransitionPair pair = ssdgp::lcd(model);
  CHECK(pair.scheme_tag == "lcd");

  Eigen::VectorXd x(3);
  x << 0.4, -0.3, 0.9;
  const double dt = 0.13;
  const double l1 = std::exp(x[1]), s1 = std::exp(x[2]);
  const Eigen::VectorXd f = pair.f(x, dt);
  const Eigen::MatrixXd Q = pair.Q(x, dt);
  const double ells[3] = {l1, ell2, ell3};
  const double sigs[3] = {s1, sig2, sig3};
  for (int i = 0; i < 3; ++i) {
    CHECK(f[i] == Catch::Approx(std::exp(-dt / ells[i]) * x[i]).epsilon(1e-12));
    CHECK(Q(i, i) ==
          Catch::Approx(sigs[i] * sigs[i] * (1.0 - std::exp(-2.0 * dt / ells[i]))).epsilon(1e-12));
    for (int j = 0; j < 3; ++j)
      if (i != j) CHECK(Q(i, j) == 0.0);
  }
}

TEST_CASE("freezing is exact when every parameter is fixed") {
  const DgpGraph graph = ssdgp::build_graph({{1, 0, ParentRole::length_scale, 2}});
  const MaternParams p{1.5, 0.9, 1.1};
  const SsdgpModel model = ssdgp::assemble(graph, {p});
  const auto sub = ssdgp::matern_ssm(p);
  const ssdgp::TransitionPair pair = ssdgp::lcd(model);

  ssdgp::PhiloxRng rng(5, 0);
  for (double dt : {0.01, 0.1, 1.0}) {
    const auto [F, Q] = ssdgp::exact_linear(sub.A, sub.B * sub.B.transpose(), dt);
    const Eigen::VectorXd x = rng.normal_vector(2);
    CHECK((pair.f(x, dt) - F * x).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((pair.Q(x, dt) - Q).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("frozen stepping names the element when a transform degenerates") {
  const SsdgpModel model = make_m12(1.0, 1.0, 1.0, 1.0);
  const ssdgp::TransitionPair pair = ssdgp::lcd(model);
  Eigen::VectorXd x(3);
  x << 0.0, -1e9, 0.0;  // exp underflows to an exactly zero length scale
  CHECK_THROWS_WITH(pair.f(x, 0.1), ContainsSubstring("element 1"));
}

TEST_CASE("sampling is reproducible and stays finite over long horizons") {
  const SsdgpModel model = make_m12(2.0, 2.0, 2.0, 2.0);
  const std::vector<double> grid = make_grid(0.0, 10.0, 1001);
  const ssdgp::PathSample a = ssdgp::sample_ssdgp(model, "lcd", grid, 77);
  const ssdgp::PathSample b = ssdgp::sample_ssdgp(model, "lcd", grid, 77);
  REQUIRE(a.states.size() == grid.size());
  for (std::size_t k = 0; k < a.states.size(); ++k) {
    CHECK(a.states[k].allFinite());
    CHECK(a.states[k] == b.states[k]);
  }
  const ssdgp::PathSample c = ssdgp::sample_ssdgp(model, "lcd", grid, 77, 1);
  CHECK(a.states[1] != c.states[1]);

  const std::vector<double> short_grid = make_grid(0.0, 1.0, 101);
  for (const char* scheme : {"tme(2)", "euler_maruyama"}) {
    const ssdgp::PathSample s = ssdgp::sample_ssdgp(model, scheme, short_grid, 13);
    CHECK(s.states.back().allFinite());
  }
  CHECK_THROWS_WITH(ssdgp::sample_ssdgp(model, "milstein", short_grid, 1),
                    ContainsSubstring("unknown discretisation scheme"));
}

TEST_CASE("frozen stepping tracks a fine reference more closely than explicit stepping") {
  // One Wiener path drives a fine-grid reference and both coarse schemes. The
  // explicit scheme consumes the aggregated increments; the frozen scheme
  // consumes them through the exponential kernel of its one-step solution.
  const SsdgpModel model = make_m12(1.0, 0.1, 1.0, 0.1);
  const int steps = 200, refine = 64;
  const double dt = 0.02, dtf = dt / refine;

  ssdgp::PhiloxRng rng(2025, 11);
  Eigen::VectorXd x_ref = rng.normal_vector(3);
  Eigen::VectorXd x_em = x_ref, x_lcd = x_ref;
  double err_em = 0.0, err_lcd = 0.0;

  for (int k = 0; k < steps; ++k) {
    std::vector<Eigen::VectorXd> dw(refine);
    for (int j = 0; j < refine; ++j) dw[j] = std::sqrt(dtf) * rng.normal_vector(3);

    Eigen::VectorXd dw_sum = Eigen::VectorXd::Zero(3);
    for (int j = 0; j < refine; ++j) {
      x_ref += model.joint.drift(x_ref) * dtf + model.joint.dispersion(x_ref) * dw[j];
      dw_sum += dw[j];
    }
    x_em += model.joint.drift(x_em) * dt + model.joint.dispersion(x_em) * dw_sum;

    const double ells[3] = {std::exp(x_lcd[1]), 1.0, 1.0};
    const double sigs[3] = {std::exp(x_lcd[2]), 0.1, 0.1};
    Eigen::VectorXd next(3);
    for (int i = 0; i < 3; ++i) {
      const double a = -1.0 / ells[i];
      const double b = std::sqrt(2.0) * sigs[i] / std::sqrt(ells[i]);
      double noise = 0.0;
      for (int j = 0; j < refine; ++j) noise += std::exp(a * (dt - j * dtf)) * dw[j][i];
      next[i] = std::exp(a * dt) * x_lcd[i] + b * noise;
    }
    x_lcd = next;

    err_em += std::abs(x_em[0] - x_ref[0]);
    err_lcd += std::abs(x_lcd[0] - x_ref[0]);
  }
  CHECK(err_em > 0.0);
  CHECK(err_lcd < err_em);
}

TEST_CASE("regression on a degenerate hierarchy equals the linear smoother") {
  const std::vector<double> grid = make_grid(0.0, 2.0, 41);

  // Zero-noise reduction on a one-dimensional element, where the expansion
  // error of the transition is uniformly small relative to the step noise.
  {
    const MaternParams p{0.5, 0.9, 1.1};
    const SsdgpModel model =
        ssdgp::assemble(ssdgp::build_graph({{1, 0, ParentRole::length_scale, 1}}), {p});
    const ssdgp::PathSample path = ssdgp::sample_ssdgp(model, "lcd", grid, 321);
    ssdgp::TimeSeries data;
    data.times = grid;
    for (const auto& s : path.states) data.values.push_back(s);

    const ssdgp::PosteriorTrack kal = ssdgp::ssgp_regress(ssdgp::matern_ssm(p), data, 0.0);
    const ssdgp::PosteriorTrack gh = ssdgp::ssdgp_regress(model, data, 0.0, "ghkf_tme(3)", 8);
    REQUIRE(gh.smoothed);
    std::size_t j = 0;  // kal has no substep nodes; walk the measured ones
    for (const auto& node : gh.nodes) {
      if (!node.has_measurement) continue;
      const auto& ref = kal.nodes.at(j++);
      REQUIRE(ref.t == node.t);
      CHECK((node.m_smooth - ref.m_smooth).cwiseAbs().maxCoeff() < 1e-5);
      CHECK((node.P_smooth - ref.P_smooth).cwiseAbs().maxCoeff() < 1e-5);
    }
    CHECK(j == kal.nodes.size());
  }

  // Noisy observations of a once-differentiable element: all four methods
  // reduce to the same linear smoother.
  const MaternParams p{1.5, 1.0, 1.0};
  const DgpGraph graph = ssdgp::build_graph({{1, 0, ParentRole::length_scale, 2}});
  const SsdgpModel model = ssdgp::assemble(graph, {p});

  const ssdgp::PathSample path = ssdgp::sample_ssdgp(model, "lcd", grid, 321);
  ssdgp::PhiloxRng noise(321, 1000);
  ssdgp::TimeSeries data;
  data.times = grid;
  for (const auto& s : path.states) {
    Eigen::VectorXd y(1);
    y << s[0] + 0.1 * noise.normal();
    data.values.push_back(y);
  }
  const double xi = 0.01;

  const ssdgp::PosteriorTrack kal = ssdgp::ssgp_regress(ssdgp::matern_ssm(p), data, xi);
  const ssdgp::PosteriorTrack gh = ssdgp::ssdgp_regress(model, data, xi, "ghkf_tme(3)", 4);
  const ssdgp::PosteriorTrack ck = ssdgp::ssdgp_regress(model, data, xi, "ckf_tme(3)", 4);
  const ssdgp::PosteriorTrack ekf = ssdgp::ssdgp_regress(model, data, xi, "ekf_style_tme", 4);

  // The observed component's step noise has leading order dt^3, so an
  // order-3 expansion carries O(dt) relative error there; agreement with the
  // exact transition is at that truncation level.
  std::size_t j = 0;
  for (const auto& node : gh.nodes) {
    if (!node.has_measurement) continue;
    const auto& ref = kal.nodes.at(j++);
    CHECK((node.m_smooth - ref.m_smooth).cwiseAbs().maxCoeff() < 5e-4);
    CHECK((node.P_smooth - ref.P_smooth).cwiseAbs().maxCoeff() < 5e-4);
  }
  CHECK(j == kal.nodes.size());

  // On a linear model every sigma-point family propagates the same moments,
  // and the Jacobian-based filter coincides with quadrature at equal
  // transition order.
  const ssdgp::PosteriorTrack gh2 = ssdgp::ssdgp_regress(model, data, xi, "ghkf_tme(2)", 4);
  for (std::size_t k = 0; k < gh.nodes.size(); ++k) {
    CHECK((gh.nodes[k].m_smooth - ck.nodes[k].m_smooth).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((gh2.nodes[k].m_smooth - ekf.nodes[k].m_smooth).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((gh2.nodes[k].P_smooth - ekf.nodes[k].P_smooth).cwiseAbs().maxCoeff() < 1e-8);
  }

  const ssdgp::PosteriorTrack em = ssdgp::ssdgp_regress(model, data, xi, "ghkf_em", 8);
  CHECK(std::isfinite(em.loglik));
  CHECK_THROWS_WITH(ssdgp::ssdgp_regress(model, data, xi, "ukf", 1),
                    ContainsSubstring("unknown regression method"));
}

TEST_CASE("regression recovers parameter curves over the hierarchy") {
  const SsdgpModel model = make_m12(2.0, 0.5, 2.0, 0.5);
  const std::vector<double> grid = make_grid(0.0, 6.0, 61);
  const ssdgp::PathSample path = ssdgp::sample_ssdgp(model, "lcd", grid, 99);

  ssdgp::PhiloxRng noise(99, 1000);
  ssdgp::TimeSeries data;
  data.times = grid;
  for (const auto& s : path.states) {
    Eigen::VectorXd y(1);
    y << s[0] + 0.1 * noise.normal();
    data.values.push_back(y);
  }

  const ssdgp::PosteriorTrack track = ssdgp::ssdgp_regress(model, data, 0.01, "ghkf_tme(2)", 2);
  REQUIRE(track.nodes.size() >= grid.size());  // substeps insert prediction nodes
  const auto ell1 = ssdgp::posterior_length_scale(model, track, 1);
  const auto sig1 = ssdgp::posterior_magnitude(model, track, 1);
  const auto ell2 = ssdgp::posterior_length_scale(model, track, 2);
  REQUIRE(ell1.size() == track.nodes.size());
  for (std::size_t k = 0; k < ell1.size(); ++k) {
    CHECK(ell1[k] > 0.0);
    CHECK(sig1[k] > 0.0);
    CHECK(ell2[k] == 2.0);  // fixed parameter yields a constant curve
  }
  CHECK_THROWS_WITH(ssdgp::posterior_length_scale(model, track, 9),
                    ContainsSubstring("out of range"));
}

TEST_CASE("cross-covariance estimator sees the initial coupling and independence") {
  const SsdgpModel model = make_m12(0.1, 0.1, 0.1, 0.1);
  const ssdgp::TransitionPair pair = ssdgp::lcd(model);
  const std::vector<double> grid = make_grid(0.0, 2.0, 21);

  Eigen::MatrixXd P0 = Eigen::MatrixXd::Identity(3, 3);
  P0(0, 2) = P0(2, 0) = 0.5;
  const auto coupled = ssdgp::mc_cross_covariance(model, pair, grid, 4000, 500, {1, 3},
                                                  Eigen::VectorXd::Zero(3), P0);
  REQUIRE(coupled.covariance.size() == 21);
  CHECK(std::abs(coupled.covariance[0] - 0.5) < 3.0 * coupled.standard_error[0]);
  CHECK(coupled.standard_error[0] > 0.0);
  CHECK(coupled.standard_error[0] < 0.05);

  const auto indep = ssdgp::mc_cross_covariance(model, pair, grid, 4000, 501, {1, 3});
  CHECK(std::abs(indep.covariance[0]) < 3.0 * indep.standard_error[0]);

  CHECK_THROWS_WITH(ssdgp::mc_cross_covariance(model, pair, grid, 999, 1, {1, 3}),
                    ContainsSubstring("at least 1000 samples"));
  CHECK_THROWS_WITH(ssdgp::mc_cross_covariance(model, pair, grid, 1000, 1, {0, 3}),
                    ContainsSubstring("element index out of range"));
}

TEST_CASE("stationary prior freezes driven parameters at the transform of zero") {
  const double s2 = 1.7, s3 = 0.4;
  const SsdgpModel model = make_m12(0.5, s2, 2.0, s3);
  const auto [m0, P0] = ssdgp::stationary_prior(model);
  CHECK(m0.isZero(0.0));
  CHECK(P0(0, 0) == Catch::Approx(1.0).epsilon(1e-12));  // ell = sigma = exp(0)
  CHECK(P0(1, 1) == Catch::Approx(s2 * s2).epsilon(1e-12));
  CHECK(P0(2, 2) == Catch::Approx(s3 * s3).epsilon(1e-12));
  CHECK(P0(0, 1) == 0.0);

  const SsdgpModel smooth = make_m32(0.5, 2.0, 0.5, 2.0);
  const auto [m1, P1] = ssdgp::stationary_prior(smooth);
  CHECK(P1(0, 0) == Catch::Approx(1.0).epsilon(1e-10));
  CHECK(P1(1, 1) == Catch::Approx(3.0).epsilon(1e-10));  // sigma^2 3 / ell^2 at 1
  CHECK(P1(2, 2) == Catch::Approx(4.0).epsilon(1e-10));
  CHECK(P1(3, 3) == Catch::Approx(4.0 * 3.0 / 0.25).epsilon(1e-10));
}

TEST_CASE("graph documents load with strict keys") {
  const auto dir = scratch_dir();
  const auto good = dir / "m12.json";
  write_file(good, R"({"elements": [
    {"index": 1, "nu": 0.5, "parents": {"length_scale": 2, "magnitude": 3}, "transform": "exp"},
    {"index": 2, "parent_of": 1, "nu": 0.5, "fixed": {"ell": 0.8, "sigma": 1.3}},
    {"index": 3, "nu": 0.5, "fixed": {"ell": 2.0, "sigma": 0.6}}
  ]})");
  const SsdgpModel loaded = ssdgp::load_ssdgp_model(good.string());
  const SsdgpModel wanted = make_m12(0.8, 1.3, 2.0, 0.6);
  ssdgp::PhiloxRng rng(3, 0);
  for (int trial = 0; trial < 3; ++trial) {
    const Eigen::VectorXd x = rng.normal_vector(3);
    CHECK((loaded.joint.drift(x) - wanted.joint.drift(x)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((loaded.joint.dispersion(x) - wanted.joint.dispersion(x)).cwiseAbs().maxCoeff() <
          1e-15);
  }

  const auto check_rejects = [&](const char* name, const std::string& body,
                                 const std::string& needle) {
    const auto p = dir / name;
    write_file(p, body);
    CHECK_THROWS_WITH(ssdgp::load_ssdgp_model(p.string()), ContainsSubstring(needle));
  };
  check_rejects("unknown_root.json", R"({"elements": [], "comment": 1})", "unknown key");
  check_rejects("unknown_elem.json",
                R"({"elements": [{"index": 1, "nu": 0.5, "kernel": "se"}]})", "unknown key");
  check_rejects("missing_nu.json", R"({"elements": [{"index": 1}]})", "missing nu");
  check_rejects("bad_parent_ref.json", R"({"elements": [
      {"index": 1, "nu": 0.5, "parents": {"length_scale": 7}},
      {"index": 2, "parent_of": 1, "nu": 0.5}]})",
                "does not exist");
  check_rejects("mismatch.json", R"({"elements": [
      {"index": 1, "nu": 0.5, "parents": {"length_scale": 2}},
      {"index": 2, "parent_of": 3, "nu": 0.5},
      {"index": 3, "nu": 0.5}]})",
                "lists it as a parent");
  check_rejects("orphan_target.json", R"({"elements": [
      {"index": 1, "nu": 0.5},
      {"index": 2, "parent_of": 1, "nu": 0.5}]})",
                "role is unknown");
  check_rejects("double_fixed.json", R"({"elements": [
      {"index": 1, "nu": 0.5, "parents": {"length_scale": 2}, "fixed": {"ell": 1.0}},
      {"index": 2, "parent_of": 1, "nu": 0.5}]})",
                "both fixed and parent-driven");
  check_rejects("double_claim.json", R"({"elements": [
      {"index": 1, "nu": 0.5, "parents": {"length_scale": 2, "magnitude": 2}},
      {"index": 2, "nu": 0.5}]})",
                "more than once");
  CHECK_THROWS_WITH(ssdgp::load_ssdgp_model((dir / "nope.json").string()),
                    ContainsSubstring("cannot open"));
  std::filesystem::remove_all(dir);
}
