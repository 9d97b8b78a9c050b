#pragma once

#include <ssdgp/discretise.hpp>
#include <ssdgp/gaussian_filter.hpp>
#include <ssdgp/matern.hpp>
#include <ssdgp/quadrature.hpp>
#include <ssdgp/tme.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <future>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace ssdgp {

enum class ParentRole { length_scale, magnitude };

inline const char* to_string(ParentRole role) {
  return role == ParentRole::length_scale ? "length_scale" : "magnitude";
}

// One element of a deep GP hierarchy. `parent_of` names the element whose
// kernel this one drives (0 = drives nothing, an output element) and `role`
// says which parameter it drives there. `dim` is the state dimension of the
// element's companion-form representation.
struct DgpElementSpec {
  int index = 0;
  int parent_of = 0;
  ParentRole role = ParentRole::length_scale;
  int dim = 1;
};

// Validated hierarchy. Elements are stored sorted by index 1..L and the joint
// state stacks their blocks in that order. parent_sets[j] lists the element
// indices driving element j, slot 0 holding the outputs; the slots partition
// {1..L} because every element drives exactly one earlier target.
struct DgpGraph {
  std::vector<DgpElementSpec> elements;
  std::vector<std::vector<int>> parent_sets;

  int size() const { return static_cast<int>(elements.size()); }

  const DgpElementSpec& element(int index) const { return elements.at(index - 1); }

  int joint_dim() const {
    int d = 0;
    for (const auto& e : elements) d += e.dim;
    return d;
  }

  // First state row of the element's block in the joint state.
  int offset(int index) const {
    int o = 0;
    for (int i = 1; i < index; ++i) o += elements.at(i - 1).dim;
    return o;
  }

  // Index of the element driving `role` of `index`, or 0 when the parameter
  // is fixed.
  int role_parent(int index, ParentRole role) const {
    for (int p : parent_sets.at(index))
      if (elements.at(p - 1).role == role) return p;
    return 0;
  }
};

inline DgpGraph build_graph(std::vector<DgpElementSpec> spec) {
  if (spec.empty()) throw std::invalid_argument("dgp graph: must contain at least one element");
  std::sort(spec.begin(), spec.end(),
            [](const DgpElementSpec& a, const DgpElementSpec& b) { return a.index < b.index; });
  const int L = static_cast<int>(spec.size());
  for (int i = 0; i < L; ++i) {
    if (spec[i].index != i + 1) {
      if (i > 0 && spec[i].index == spec[i - 1].index)
        throw std::invalid_argument("dgp graph: duplicate element index " +
                                    std::to_string(spec[i].index));
      throw std::invalid_argument("dgp graph: element indices must enumerate 1.." +
                                  std::to_string(L) + "; missing index " + std::to_string(i + 1));
    }
    if (spec[i].dim < 1)
      throw std::invalid_argument("dgp graph: element " + std::to_string(i + 1) +
                                  " has a non-positive state dimension");
  }
  if (spec[0].parent_of != 0)
    throw std::invalid_argument("dgp graph: element 1 must be an output (parent target 0)");
  for (const auto& e : spec)
    if (e.parent_of < 0 || e.parent_of >= e.index)
      throw std::invalid_argument("dgp graph: element " + std::to_string(e.index) + " targets " +
                                  std::to_string(e.parent_of) +
                                  "; an element can only drive an earlier element");
  for (const auto& e : spec)
    for (const auto& o : spec)
      if (e.index < o.index && e.parent_of == o.parent_of && e.parent_of > 0 && e.role == o.role)
        throw std::invalid_argument("dgp graph: elements " + std::to_string(e.index) + " and " +
                                    std::to_string(o.index) + " both drive the " +
                                    std::string(to_string(e.role)) + " of element " +
                                    std::to_string(e.parent_of));

  DgpGraph graph;
  graph.elements = std::move(spec);
  graph.parent_sets.assign(L + 1, {});
  for (const auto& e : graph.elements) graph.parent_sets[e.parent_of].push_back(e.index);

  // Partition axioms over {1..L}: the collections are pairwise disjoint and
  // exhaustive. Structurally guaranteed by the single-target rule above, but
  // re-checked so the construction postcondition is explicit.
  std::vector<int> hits(L + 1, 0);
  for (int j = 0; j < L; ++j)
    for (int p : graph.parent_sets[j]) ++hits[p];
  for (int i = 1; i <= L; ++i)
    if (hits[i] != 1)
      throw std::logic_error("dgp graph: parent collections do not partition the element set");
  return graph;
}

// Positive reparameterisation g applied to a parent's value component. All
// kinds are smooth and strictly increasing with positive range; construction
// re-checks those facts on a coarse grid.
struct Transform {
  enum class Kind { exp, softplus, shifted_arctan };
  Kind kind = Kind::exp;
  std::string name = "exp";

  template <class S>
  S forward(const S& u) const {
    switch (kind) {
      case Kind::exp: {
        using std::exp;
        return exp(u);
      }
      case Kind::softplus:
        return softplus(u);
      case Kind::shifted_arctan: {
        using std::atan;
        return atan(u) + std::numbers::pi / 2.0;
      }
    }
    throw std::logic_error("transform: unreachable kind");
  }
};

inline Transform make_transform(const std::string& name) {
  Transform t;
  t.name = name;
  if (name == "exp")
    t.kind = Transform::Kind::exp;
  else if (name == "softplus")
    t.kind = Transform::Kind::softplus;
  else if (name == "shifted_arctan")
    t.kind = Transform::Kind::shifted_arctan;
  else
    throw std::invalid_argument("unknown transform '" + name +
                                "' (expected exp, softplus, or shifted_arctan)");
  double prev = 0.0;
  for (int i = 0; i <= 32; ++i) {
    const double u = -8.0 + 0.5 * i;
    const dual_t<1> y = t.forward(dual_t<1>(u, Eigen::VectorXd::Ones(1)));
    const double slope = y.d.size() > 0 ? y.d[0] : 0.0;
    if (!(y.v > 0.0) || !std::isfinite(y.v) || !(slope > 0.0) || !std::isfinite(slope) ||
        (i > 0 && !(y.v > prev)))
      throw std::logic_error("transform '" + name + "' failed the positivity/monotonicity check");
    prev = y.v;
  }
  return t;
}

namespace detail {

// Flattened per-element wiring captured by the joint drift/dispersion and by
// the frozen-coefficient discretisation. `ell_row`/`sigma_row` are joint
// state rows of the driving parents' value components, or -1 when fixed.
struct ElementWiring {
  int index = 0;
  int offset = 0;
  int gamma = 1;
  double sqrt_2nu = 1.0;
  int ell_row = -1;
  int sigma_row = -1;
  double fixed_ell = 1.0;
  double fixed_sigma = 1.0;
  double b_const = 1.0;  // Gamma(gamma) 2^{gamma-1/2} / sqrt(Gamma(2 gamma - 1))
  std::array<double, 4> binom{};
  Transform tf;
};

inline std::vector<ElementWiring> wire_elements(const DgpGraph& graph,
                                                const std::vector<MaternParams>& params,
                                                const std::map<int, Transform>& transforms) {
  const int L = graph.size();
  if (static_cast<int>(params.size()) != L)
    throw std::invalid_argument("assemble: expected " + std::to_string(L) +
                                " parameter sets, got " + std::to_string(params.size()));
  std::vector<ElementWiring> wirings(L);
  for (int i = 1; i <= L; ++i) {
    const MaternParams& p = params[i - 1];
    p.validate();
    ElementWiring& w = wirings[i - 1];
    w.index = i;
    w.offset = graph.offset(i);
    w.gamma = p.gamma();
    if (w.gamma != graph.element(i).dim)
      throw std::invalid_argument("assemble: element " + std::to_string(i) + " has state dimension " +
                                  std::to_string(graph.element(i).dim) + " but nu=" +
                                  std::to_string(p.nu) + " needs " + std::to_string(w.gamma));
    w.sqrt_2nu = std::sqrt(2.0 * p.nu);
    w.fixed_ell = p.ell;
    w.fixed_sigma = p.sigma;
    const int mp = graph.role_parent(i, ParentRole::length_scale);
    const int np = graph.role_parent(i, ParentRole::magnitude);
    if (mp > 0) w.ell_row = graph.offset(mp);
    if (np > 0) w.sigma_row = graph.offset(np);
    if (mp > 0 || np > 0) {
      const auto it = transforms.find(i);
      if (it == transforms.end())
        throw std::invalid_argument("assemble: element " + std::to_string(i) +
                                    " reads parents through a transform but none was given");
      w.tf = it->second;
    }
    w.b_const = std::tgamma(w.gamma) * std::pow(2.0, w.gamma - 0.5) /
                std::sqrt(std::tgamma(2.0 * w.gamma - 1.0));
    for (int r = 0; r < w.gamma; ++r) w.binom[r] = binomial(w.gamma, r);
  }
  return wirings;
}

template <class S, class Vec>
S wiring_ell(const ElementWiring& w, const Vec& x) {
  return w.ell_row >= 0 ? w.tf.forward(x[w.ell_row]) : S(w.fixed_ell);
}

template <class S, class Vec>
S wiring_sigma(const ElementWiring& w, const Vec& x) {
  return w.sigma_row >= 0 ? w.tf.forward(x[w.sigma_row]) : S(w.fixed_sigma);
}

}  // namespace detail

// Joint Matern hierarchy as one nonlinear SDE. Each element's block is the
// companion-form system of matern_ssm with ell / sigma replaced by the
// transformed parent values wherever the graph wires a parent to that role;
// each block rides its own scalar Wiener process.
struct SsdgpModel {
  DgpGraph graph;
  std::vector<MaternParams> params;
  std::map<int, Transform> transforms;
  SdeModel joint;
  std::vector<int> offsets;

  int dim() const { return joint.dim_state(); }

  // Joint state row carrying the element's value component.
  int value_index(int element) const { return offsets.at(element - 1); }
};

inline SsdgpModel assemble(const DgpGraph& graph, const std::vector<MaternParams>& params,
                           const std::map<int, Transform>& transforms) {
  const auto wirings = detail::wire_elements(graph, params, transforms);
  const int d = graph.joint_dim();
  const int L = graph.size();

  auto drift = [wirings, d](const auto& x) {
    using V = std::decay_t<decltype(x)>;
    using S = typename V::Scalar;
    V out(d);
    for (const auto& w : wirings) {
      for (int r = 0; r + 1 < w.gamma; ++r) out[w.offset + r] = x[w.offset + r + 1];
      const S ell = detail::wiring_ell<S>(w, x);
      const S kappa = S(w.sqrt_2nu) / ell;
      S acc = S(0.0);
      S kpow = kappa;  // kappa^{gamma-r}, built from r = gamma-1 downward
      for (int r = w.gamma - 1; r >= 0; --r) {
        acc += S(w.binom[static_cast<std::size_t>(r)]) * kpow * x[w.offset + r];
        kpow *= kappa;
      }
      out[w.offset + w.gamma - 1] = -acc;
    }
    return out;
  };
  auto dispersion = [wirings, d, L](const auto& x) {
    using V = std::decay_t<decltype(x)>;
    using S = typename V::Scalar;
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> out(d, L);
    out.setZero();
    int col = 0;
    for (const auto& w : wirings) {
      const S ell = detail::wiring_ell<S>(w, x);
      const S sigma = detail::wiring_sigma<S>(w, x);
      const S kappa = S(w.sqrt_2nu) / ell;
      using std::sqrt;
      S kp = sqrt(kappa);  // kappa^{gamma - 1/2}
      for (int i = 0; i + 1 < w.gamma; ++i) kp *= kappa;
      out(w.offset + w.gamma - 1, col) = sigma * S(w.b_const) * kp;
      ++col;
    }
    return out;
  };

  SsdgpModel model;
  model.graph = graph;
  model.params = params;
  model.transforms = transforms;
  model.joint = SdeModel(d, L, drift, dispersion, "matern_ssdgp");
  model.offsets.resize(L);
  for (int i = 1; i <= L; ++i) model.offsets[i - 1] = graph.offset(i);
  return model;
}

// Convenience: exp for every parametrised element.
inline SsdgpModel assemble(const DgpGraph& graph, const std::vector<MaternParams>& params) {
  std::map<int, Transform> transforms;
  for (int i = 1; i <= graph.size(); ++i)
    if (graph.role_parent(i, ParentRole::length_scale) > 0 ||
        graph.role_parent(i, ParentRole::magnitude) > 0)
      transforms.emplace(i, make_transform("exp"));
  return assemble(graph, params, transforms);
}

// Zero mean with block-diagonal stationary covariance; driven parameters are
// frozen at the transform of the parents' prior mean (zero).
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> stationary_prior(const SsdgpModel& model) {
  const int d = model.dim();
  Eigen::MatrixXd P0 = Eigen::MatrixXd::Zero(d, d);
  for (int i = 1; i <= model.graph.size(); ++i) {
    MaternParams p = model.params[i - 1];
    const auto it = model.transforms.find(i);
    if (model.graph.role_parent(i, ParentRole::length_scale) > 0)
      p.ell = it->second.forward(0.0);
    if (model.graph.role_parent(i, ParentRole::magnitude) > 0)
      p.sigma = it->second.forward(0.0);
    const int o = model.value_index(i);
    P0.block(o, o, p.gamma(), p.gamma()) = matern_ssm(p).P0;
  }
  return {Eigen::VectorXd::Zero(d), P0};
}

namespace detail {

struct FrozenBlock {
  Eigen::MatrixXd F;
  Eigen::MatrixXd Q;
};

// Per-element exact linear transition with coefficients frozen at the parent
// values carried by x.
inline std::vector<FrozenBlock> lcd_blocks(const std::vector<ElementWiring>& wirings,
                                           const Eigen::VectorXd& x, double dt) {
  std::vector<FrozenBlock> blocks;
  blocks.reserve(wirings.size());
  for (const auto& w : wirings) {
    const double ell = wiring_ell<double>(w, x);
    const double sigma = wiring_sigma<double>(w, x);
    if (!(ell > 0.0) || !std::isfinite(ell))
      throw std::runtime_error("lcd: element " + std::to_string(w.index) +
                               " produced a non-positive length scale");
    if (!(sigma > 0.0) || !std::isfinite(sigma))
      throw std::runtime_error("lcd: element " + std::to_string(w.index) +
                               " produced a non-positive magnitude");
    const double kappa = w.sqrt_2nu / ell;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(w.gamma, w.gamma);
    for (int r = 0; r + 1 < w.gamma; ++r) A(r, r + 1) = 1.0;
    for (int r = 0; r < w.gamma; ++r)
      A(w.gamma - 1, r) = -w.binom[static_cast<std::size_t>(r)] * std::pow(kappa, w.gamma - r);
    const double b = sigma * w.b_const * std::pow(kappa, w.gamma - 0.5);
    Eigen::MatrixXd LL = Eigen::MatrixXd::Zero(w.gamma, w.gamma);
    LL(w.gamma - 1, w.gamma - 1) = b * b;
    auto [F, Q] = exact_linear(A, LL, dt);
    blocks.push_back({std::move(F), std::move(Q)});
  }
  return blocks;
}

}  // namespace detail

// Locally conditional discretisation: freezes every element's coefficients at
// the parent values carried by the incoming state and advances each block
// with the exact linear transition. Exact whenever the parents are constant
// over the step.
inline TransitionPair lcd(const SsdgpModel& model) {
  const auto wirings = detail::wire_elements(model.graph, model.params, model.transforms);
  const int d = model.dim();
  TransitionPair pair;
  pair.scheme_tag = "lcd";
  pair.f = [wirings, d](const Eigen::VectorXd& x, double dt) -> Eigen::VectorXd {
    const auto blocks = detail::lcd_blocks(wirings, x, dt);
    Eigen::VectorXd out(d);
    for (std::size_t i = 0; i < wirings.size(); ++i) {
      const auto& w = wirings[i];
      out.segment(w.offset, w.gamma) = blocks[i].F * x.segment(w.offset, w.gamma);
    }
    return out;
  };
  pair.Q = [wirings, d](const Eigen::VectorXd& x, double dt) -> Eigen::MatrixXd {
    const auto blocks = detail::lcd_blocks(wirings, x, dt);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < wirings.size(); ++i) {
      const auto& w = wirings[i];
      out.block(w.offset, w.offset, w.gamma, w.gamma) = blocks[i].Q;
    }
    return out;
  };
  return pair;
}

// scheme: lcd | tme(M) | euler_maruyama.
inline TransitionPair make_ssdgp_scheme(const SsdgpModel& model, const std::string& scheme) {
  if (scheme == "lcd") return lcd(model);
  if (scheme == "euler_maruyama") return euler_maruyama(model.joint);
  if (scheme.rfind("tme(", 0) == 0 && scheme.back() == ')') {
    const std::string inner = scheme.substr(4, scheme.size() - 5);
    try {
      std::size_t used = 0;
      const int M = std::stoi(inner, &used);
      if (used == inner.size()) return tme_discretise(model.joint, M);
    } catch (const std::logic_error&) {
    }
  }
  throw std::invalid_argument("unknown discretisation scheme '" + scheme +
                              "' (expected lcd, tme(M), or euler_maruyama)");
}

// Samples one hierarchy path on the grid. The initial draw and the path noise
// use disjoint (even/odd) streams derived from the same seed, so replicates
// stay independent and bitwise reproducible.
inline PathSample sample_ssdgp(const SsdgpModel& model, const std::string& scheme,
                               const std::vector<double>& grid, std::uint64_t seed,
                               std::uint64_t replicate, const Eigen::VectorXd& m0,
                               const Eigen::MatrixXd& P0) {
  if (m0.size() != model.dim() || P0.rows() != model.dim() || P0.cols() != model.dim())
    throw std::invalid_argument("sample_ssdgp: initial moments have the wrong dimension");
  const TransitionPair pair = make_ssdgp_scheme(model, scheme);
  PhiloxRng init_rng(seed, 2 * replicate);
  const Eigen::VectorXd x0 = m0 + psd_sqrt(P0) * init_rng.normal_vector(model.dim());
  return simulate(model.joint, pair, x0, grid, seed, 2 * replicate + 1);
}

// Default initial law N(0, I).
inline PathSample sample_ssdgp(const SsdgpModel& model, const std::string& scheme,
                               const std::vector<double>& grid, std::uint64_t seed,
                               std::uint64_t replicate = 0) {
  return sample_ssdgp(model, scheme, grid, seed, replicate, Eigen::VectorXd::Zero(model.dim()),
                      Eigen::MatrixXd::Identity(model.dim(), model.dim()));
}

namespace detail {

// Prediction by first-order linearisation of the transition at the running
// mean; the update is the standard linear-measurement step. Counterpart of
// the sigma-point filter for schemes that expose a transition Jacobian.
inline PosteriorTrack linearised_filter(const TransitionPair& pair, const MeasurementModel& meas,
                                        const TimeSeries& data, int substeps,
                                        const Eigen::VectorXd& m0, const Eigen::MatrixXd& P0) {
  data.validate();
  if (data.size() == 0) throw std::invalid_argument("linearised filter: empty time series");
  if (substeps < 1) throw std::invalid_argument("linearised filter: substeps must be >= 1");
  if (!pair.f_jacobian)
    throw std::invalid_argument("linearised filter: scheme provides no transition Jacobian");
  if (!meas.linear) throw std::invalid_argument("linearised filter: measurement must be linear");
  if (m0.size() != P0.rows() || P0.rows() != P0.cols())
    throw std::invalid_argument("linearised filter: prior moments have mismatched shapes");

  const long before = pair.repair_events->load();
  const std::vector<NodePlan> plan = plan_nodes(data, substeps);
  PosteriorTrack track;
  track.nodes.reserve(plan.size());

  Eigen::VectorXd m = m0;
  Eigen::MatrixXd P = P0;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    TrackNode node;
    node.t = plan[k].t;
    if (k > 0) {
      const double dt = plan[k].t - plan[k - 1].t;
      const Eigen::MatrixXd F = pair.f_jacobian(m, dt);
      const Eigen::VectorXd mp = pair.f(m, dt);
      P = ensure_psd(F * P * F.transpose() + pair.Q(m, dt), k, "linearised filter",
                     track.warnings);
      m = mp;
    }
    node.m_pred = m;
    node.P_pred = P;
    const std::ptrdiff_t di = plan[k].data_index;
    if (di >= 0 && data.values[di].size() > 0) {
      node.has_measurement = true;
      const GaussianUpdate up =
          kalman_update(m, P, meas.matrix_at(node.t), step_noise_cov(meas, data, di),
                        data.values[di], k, "linearised filter");
      m = up.m;
      P = ensure_psd(up.P, k, "linearised filter", track.warnings);
      node.gain = up.gain;
      node.loglik_increment = up.loglik_increment;
      track.loglik += up.loglik_increment;
    }
    node.m_filt = m;
    node.P_filt = P;
    track.nodes.push_back(std::move(node));
  }
  const long repaired = pair.repair_events->load() - before;
  if (repaired > 0)
    track.warnings.push_back("linearised filter: transition covariance repaired " +
                             std::to_string(repaired) + " time(s)");
  return track;
}

// Rauch-style backward pass with the gap dynamics re-linearised at each
// filtered mean, against the stored one-step predicted moments.
inline PosteriorTrack linearised_smoother(PosteriorTrack track, const TransitionPair& pair,
                                          const TimeSeries& data) {
  if (track.nodes.empty()) throw std::invalid_argument("linearised smoother: empty track");
  if (track.nodes.front().t != data.times.front() || track.nodes.back().t != data.times.back())
    throw std::invalid_argument("linearised smoother: track does not span the data");
  if (!pair.f_jacobian)
    throw std::invalid_argument("linearised smoother: scheme provides no transition Jacobian");

  const std::size_t n = track.nodes.size();
  track.nodes[n - 1].m_smooth = track.nodes[n - 1].m_filt;
  track.nodes[n - 1].P_smooth = track.nodes[n - 1].P_filt;
  for (std::size_t k = n - 1; k-- > 0;) {
    TrackNode& cur = track.nodes[k];
    const TrackNode& next = track.nodes[k + 1];
    const double dt = next.t - cur.t;
    const Eigen::MatrixXd F = pair.f_jacobian(cur.m_filt, dt);
    const auto llt = invert_predictive(next.P_pred, k, "linearised smoother", track.warnings);
    const Eigen::MatrixXd G = llt.solve(F * cur.P_filt).transpose();
    cur.m_smooth = cur.m_filt + G * (next.m_smooth - next.m_pred);
    cur.P_smooth =
        symmetrize(cur.P_filt + G * (next.P_smooth - next.P_pred) * G.transpose());
  }
  track.smoothed = true;
  return track;
}

// "name(M)" -> M; -1 when the string does not match.
inline int parse_method_order(const std::string& method, const std::string& prefix) {
  if (method.rfind(prefix + "(", 0) != 0 || method.back() != ')') return -1;
  const std::string inner = method.substr(prefix.size() + 1, method.size() - prefix.size() - 2);
  try {
    std::size_t used = 0;
    const int M = std::stoi(inner, &used);
    if (used == inner.size() && M >= 1) return M;
  } catch (const std::logic_error&) {
  }
  return -1;
}

}  // namespace detail

// Smoothed regression posterior over the whole hierarchy given noisy
// observations of the first element's value component. method selects the
// transition scheme and the moment propagation:
//   ekf_style_tme  second-order expansion with Jacobian linearisation
//   ghkf_tme(M)    order-M expansion under 3rd-order Gauss-Hermite points
//   ckf_tme(M)     order-M expansion under spherical-cubature points
//   ghkf_em        Euler-Maruyama under 3rd-order Gauss-Hermite points
inline PosteriorTrack ssdgp_regress(const SsdgpModel& model, const TimeSeries& data, double xi,
                                    const std::string& method, int substeps,
                                    const Eigen::VectorXd& m0, const Eigen::MatrixXd& P0) {
  if (!(xi >= 0.0)) throw std::invalid_argument("ssdgp_regress: noise variance must be >= 0");
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(1, model.dim());
  H(0, model.value_index(1)) = 1.0;
  Eigen::MatrixXd Xi(1, 1);
  Xi(0, 0) = xi;
  const MeasurementModel meas = MeasurementModel::linear_constant(H, Xi);

  if (method == "ekf_style_tme") {
    const TransitionPair pair = tme_discretise(model.joint, 2);
    PosteriorTrack track = detail::linearised_filter(pair, meas, data, substeps, m0, P0);
    return detail::linearised_smoother(std::move(track), pair, data);
  }
  TransitionPair pair;
  QuadratureRule rule;
  if (method == "ghkf_em") {
    pair = euler_maruyama(model.joint);
    rule = make_rule("gauss_hermite(3)", model.dim());
  } else if (const int M = detail::parse_method_order(method, "ghkf_tme"); M > 0) {
    pair = tme_discretise(model.joint, M);
    rule = make_rule("gauss_hermite(3)", model.dim());
  } else if (const int M2 = detail::parse_method_order(method, "ckf_tme"); M2 > 0) {
    pair = tme_discretise(model.joint, M2);
    rule = make_rule("spherical_cubature", model.dim());
  } else {
    throw std::invalid_argument("unknown regression method '" + method +
                                "' (expected ekf_style_tme, ghkf_tme(M), ckf_tme(M), or ghkf_em)");
  }
  PosteriorTrack track = gaussian_filter(pair, meas, data, rule, substeps, m0, P0);
  return gaussian_smoother(std::move(track), pair, rule, data);
}

// Default prior: stationary_prior(model).
inline PosteriorTrack ssdgp_regress(const SsdgpModel& model, const TimeSeries& data, double xi,
                                    const std::string& method, int substeps = 1) {
  const auto [m0, P0] = stationary_prior(model);
  return ssdgp_regress(model, data, xi, method, substeps, m0, P0);
}

namespace detail {

inline std::vector<double> posterior_parameter(const SsdgpModel& model, const PosteriorTrack& track,
                                               int element, ParentRole role, bool smoothed) {
  if (element < 1 || element > model.graph.size())
    throw std::invalid_argument("posterior parameter: element index out of range");
  if (smoothed && !track.smoothed)
    throw std::invalid_argument("posterior parameter: track has no smoothing pass");
  const int parent = model.graph.role_parent(element, role);
  std::vector<double> out;
  out.reserve(track.nodes.size());
  const MaternParams& p = model.params[element - 1];
  const double fixed = role == ParentRole::length_scale ? p.ell : p.sigma;
  for (const auto& node : track.nodes) {
    if (parent == 0) {
      out.push_back(fixed);
      continue;
    }
    const Eigen::VectorXd& m = smoothed ? node.m_smooth : node.m_filt;
    out.push_back(model.transforms.at(element).forward(m[model.value_index(parent)]));
  }
  return out;
}

}  // namespace detail

// Parameter curves recovered from a regression track: the transform of the
// posterior mean of the driving parent, not the posterior mean of the
// transform. Elements with fixed parameters yield constant curves.
inline std::vector<double> posterior_length_scale(const SsdgpModel& model,
                                                  const PosteriorTrack& track, int element,
                                                  bool smoothed = true) {
  return detail::posterior_parameter(model, track, element, ParentRole::length_scale, smoothed);
}

inline std::vector<double> posterior_magnitude(const SsdgpModel& model, const PosteriorTrack& track,
                                               int element, bool smoothed = true) {
  return detail::posterior_parameter(model, track, element, ParentRole::magnitude, smoothed);
}

struct CrossCovEstimate {
  std::vector<double> times;
  Eigen::VectorXd covariance;
  Eigen::VectorXd standard_error;
};

// Monte Carlo covariance between the value components of two elements along
// the grid. Standard errors are the delta-method estimate for a sample
// covariance: the empirical standard deviation of the centred products over
// sqrt(n). Replicates parallelise over disjoint seed streams.
inline CrossCovEstimate mc_cross_covariance(const SsdgpModel& model, const TransitionPair& pair,
                                            const std::vector<double>& grid, int n_samples,
                                            std::uint64_t seed, std::pair<int, int> element_pair,
                                            const Eigen::VectorXd& m0, const Eigen::MatrixXd& P0) {
  if (n_samples < 1000)
    throw std::invalid_argument("mc_cross_covariance: need at least 1000 samples");
  const int L = model.graph.size();
  if (element_pair.first < 1 || element_pair.first > L || element_pair.second < 1 ||
      element_pair.second > L)
    throw std::invalid_argument("mc_cross_covariance: element index out of range");
  if (m0.size() != model.dim() || P0.rows() != model.dim() || P0.cols() != model.dim())
    throw std::invalid_argument("mc_cross_covariance: initial moments have the wrong dimension");

  const int T = static_cast<int>(grid.size());
  const int row_a = model.value_index(element_pair.first);
  const int row_b = model.value_index(element_pair.second);
  const Eigen::MatrixXd root = psd_sqrt(P0);
  Eigen::MatrixXd a(n_samples, T), b(n_samples, T);

  const auto run_chunk = [&](int begin, int end) {
    for (int r = begin; r < end; ++r) {
      PhiloxRng init_rng(seed, 2 * static_cast<std::uint64_t>(r));
      const Eigen::VectorXd x0 = m0 + root * init_rng.normal_vector(model.dim());
      const PathSample path =
          simulate(model.joint, pair, x0, grid, seed, 2 * static_cast<std::uint64_t>(r) + 1);
      for (int t = 0; t < T; ++t) {
        a(r, t) = path.states[static_cast<std::size_t>(t)][row_a];
        b(r, t) = path.states[static_cast<std::size_t>(t)][row_b];
      }
    }
  };
  const int workers = std::max(1, std::min<int>(static_cast<int>(std::thread::hardware_concurrency()), 8));
  std::vector<std::future<void>> futures;
  const int chunk = (n_samples + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int begin = w * chunk;
    const int end = std::min(n_samples, begin + chunk);
    if (begin >= end) break;
    futures.push_back(std::async(std::launch::async, run_chunk, begin, end));
  }
  for (auto& f : futures) f.get();

  CrossCovEstimate est;
  est.times = grid;
  est.covariance.resize(T);
  est.standard_error.resize(T);
  for (int t = 0; t < T; ++t) {
    const double am = a.col(t).mean();
    const double bm = b.col(t).mean();
    const Eigen::ArrayXd prod = (a.col(t).array() - am) * (b.col(t).array() - bm);
    const double cov = prod.sum() / (n_samples - 1);
    const double var_prod = (prod - prod.mean()).square().sum() / (n_samples - 1);
    est.covariance[t] = cov;
    est.standard_error[t] = std::sqrt(var_prod / n_samples);
  }
  return est;
}

// Default initial law N(0, I).
inline CrossCovEstimate mc_cross_covariance(const SsdgpModel& model, const TransitionPair& pair,
                                            const std::vector<double>& grid, int n_samples,
                                            std::uint64_t seed, std::pair<int, int> element_pair) {
  return mc_cross_covariance(model, pair, grid, n_samples, seed, element_pair,
                             Eigen::VectorXd::Zero(model.dim()),
                             Eigen::MatrixXd::Identity(model.dim(), model.dim()));
}

}  // namespace ssdgp
