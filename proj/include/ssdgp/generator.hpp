#pragma once

#include <ssdgp/sde_model.hpp>

#include <memory>
#include <string>

namespace ssdgp {

namespace detail {

// A phi = (grad phi)^T a + 1/2 tr(Gamma H phi), evaluated by seeding two dual
// levels through phi and combining with drift and Gamma at the base level.
template <int L>
dual_t<L> generator_value(const SmoothScalarField& phi, const SdeModel& model, const dvec_t<L>& x) {
  if constexpr (L + 2 > kMaxDualLevel) {
    (void)phi;
    (void)model;
    (void)x;
    throw GeneratorDepthError("generator depth exceeded: differentiation budget of " +
                              std::to_string(kMaxDualLevel) + " dual levels is exhausted");
  } else {
    using S = dual_t<L>;
    const Eigen::Index n = x.size();
    const dual_t<L + 2> y = phi.eval<L + 2>(seed_directions<L + 1>(seed_directions<L>(x)));
    const dvec_t<L> a = model.drift_at<L>(x);
    S acc{};
    if (y.v.d.size() > 0)
      for (Eigen::Index i = 0; i < n; ++i) acc += y.v.d[i] * a[i];
    if (y.d.size() > 0) {
      const dmat_t<L> G = model.gamma_at<L>(x);
      S quad{};
      for (Eigen::Index i = 0; i < n; ++i)
        if (y.d[i].d.size() > 0)
          for (Eigen::Index j = 0; j < n; ++j) quad += G(i, j) * y.d[i].d[j];
      acc += quad * 0.5;
    }
    return acc;
  }
}

struct GeneratorOp {
  SmoothScalarField phi;
  SdeModel model;
  template <int L>
  dual_t<L> eval(const dvec_t<L>& x) const {
    return generator_value<L>(phi, model, x);
  }
};

// x -> (grad p)^T Gamma (grad q); costs one dual level on p and q.
struct GammaQuadraticOp {
  SmoothScalarField p;
  SmoothScalarField q;
  SdeModel model;
  template <int L>
  dual_t<L> eval(const dvec_t<L>& x) const {
    if constexpr (L + 1 > kMaxDualLevel) {
      (void)x;
      throw GeneratorDepthError("generator depth exceeded: gradient form needs one more dual level");
    } else {
      using S = dual_t<L>;
      const Eigen::Index n = x.size();
      const dvec_t<L + 1> xs = seed_directions<L>(x);
      const dual_t<L + 1> pv = p.eval<L + 1>(xs);
      const dual_t<L + 1> qv = q.eval<L + 1>(xs);
      const dmat_t<L> G = model.gamma_at<L>(x);
      S acc{};
      if (pv.d.size() > 0 && qv.d.size() > 0)
        for (Eigen::Index i = 0; i < n; ++i)
          for (Eigen::Index j = 0; j < n; ++j) acc += pv.d[i] * G(i, j) * qv.d[j];
      return acc;
    }
  }
};

}  // namespace detail

inline SmoothScalarField apply_generator(const SmoothScalarField& field, const SdeModel& model) {
  const int avail = std::min(field.smoothness_order(), model.differentiation_depth());
  if (avail < 2)
    throw GeneratorDepthError(
        "generator depth exceeded: field admits no further application (remaining order " +
        std::to_string(avail) + ", iteration " +
        std::to_string((model.differentiation_depth() - avail) / 2 + 1) + ")");
  return SmoothScalarField(
      std::make_shared<detail::CombinedScalarField<detail::GeneratorOp>>(
          detail::GeneratorOp{field, model}),
      field.dim(), avail - 2);
}

inline FieldMatrix apply_generator_elementwise(const FieldMatrix& fields, const SdeModel& model) {
  FieldMatrix out(fields.rows(), fields.cols());
  for (int i = 0; i < fields.rows(); ++i)
    for (int j = 0; j < fields.cols(); ++j) out.at(i, j) = apply_generator(fields.at(i, j), model);
  return out;
}

// Scalar field x -> (grad p(x))^T Gamma(x) (grad q(x)); used by the
// start-state homogeneity recursion for constant-dispersion models.
inline SmoothScalarField gamma_gradient_form(const SmoothScalarField& p, const SmoothScalarField& q,
                                             const SdeModel& model) {
  const int order = std::min(p.smoothness_order(), q.smoothness_order()) - 1;
  return SmoothScalarField(
      std::make_shared<detail::CombinedScalarField<detail::GammaQuadraticOp>>(
          detail::GammaQuadraticOp{p, q, model}),
      p.dim(), order);
}

}  // namespace ssdgp
