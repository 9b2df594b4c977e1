#pragma once

// Dual-domain objective
//   Phi(x, z) = 1/2 |Ax - z|^2 + lambda/2 |P0 z - s|^2 + R(x) + Q(z)
// and its smoothed counterpart Phi_eps, where R and Q are replaced by their
// Huber surrogates.

#include <memory>
#include <span>
#include <utility>

#include "lama/core.hpp"
#include "lama/regularizer.hpp"
#include "lama/tomo.hpp"

namespace lama {

struct DualState {
  Image x;
  Sinogram z;  // full-view

  bool operator==(const DualState&) const = default;
};

struct ProblemSpec {
  std::shared_ptr<const Projector> projector;
  ViewMask mask;
  Sinogram s;             // measured rows, view_indices == mask.selected
  double lambda = 10.0;   // must be > 0 for a well-posed model; 0 isolates the coupling term
  ConvStack image_reg;    // theta_1
  ConvStack sino_reg;     // theta_2

  const ScanGeometry& geometry() const { return projector->geometry(); }

  void validate() const {
    if (!projector) throw ConfigError("problem has no projector");
    mask.validate();
    if (mask.n_views_full != geometry().n_views_full()) throw ConfigError("view mask does not match geometry");
    if (s.n_views_full != geometry().n_views_full() || s.n_dets != geometry().n_dets)
      throw ConfigError("measured sinogram does not match geometry");
    if (s.view_indices != mask.selected) throw ConfigError("measured sinogram rows do not match the view mask");
    s.validate();
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ParameterError("lambda must be a finite non-negative number");
    image_reg.validate();
    sino_reg.validate();
  }

  void check_state(const DualState& st) const {
    if (!(st.x.grid == geometry().grid)) throw ConfigError("state image grid does not match geometry");
    if (st.x.values.size() != geometry().grid.size()) throw InputError("state image has the wrong size");
    if (!st.z.is_full() || st.z.n_views_full != geometry().n_views_full() || st.z.n_dets != geometry().n_dets ||
        st.z.values.size() != st.z.n_views_full * st.z.n_dets)
      throw ConfigError("state sinogram must be full-view and match geometry");
  }
};

/// Precomputed pieces of the data term on raw buffers. x is the image
/// (ny * nx), z the full sinogram (n_views_full * n_dets).
class DataTerm {
 public:
  explicit DataTerm(const ProblemSpec& spec) : spec_(&spec) {
    spec.validate();
    const auto& geo = spec.geometry();
    const std::size_t n = geo.n_views_full() * geo.n_dets;
    selected_.assign(n, 0.0);
    s_full_.assign(n, 0.0);
    for (std::size_t r = 0; r < spec.s.n_rows(); ++r) {
      const std::size_t v = spec.s.view_indices[r];
      for (std::size_t d = 0; d < geo.n_dets; ++d) {
        selected_[v * geo.n_dets + d] = 1.0;
        s_full_[v * geo.n_dets + d] = spec.s.values[r * geo.n_dets + d];
      }
    }
  }

  const ProblemSpec& spec() const { return *spec_; }
  std::size_t image_size() const { return spec_->geometry().grid.size(); }
  std::size_t sino_size() const { return selected_.size(); }

  Vec project(std::span<const double> x) const {
    Vec ax(sino_size());
    spec_->projector->forward_into(x, ax);
    return ax;
  }

  Vec back(std::span<const double> r) const {
    Vec out(image_size());
    spec_->projector->back_into(r, out);
    return out;
  }

  /// f given a precomputed Ax.
  double value(std::span<const double> ax, std::span<const double> z) const {
    double fit = 0.0, cons = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double r = ax[k] - z[k];
      fit += r * r;
      const double c = selected_[k] * z[k] - s_full_[k];
      cons += c * c;
    }
    return 0.5 * fit + 0.5 * spec_->lambda * cons;
  }

  /// grad_z f = -(Ax - z) + lambda P0^T (P0 z - s).
  Vec grad_z(std::span<const double> ax, std::span<const double> z) const {
    Vec g(z.size());
    for (std::size_t k = 0; k < z.size(); ++k)
      g[k] = -(ax[k] - z[k]) + spec_->lambda * (selected_[k] * z[k] - s_full_[k]);
    return g;
  }

  /// grad_x f = A^T (Ax - z).
  Vec grad_x(std::span<const double> ax, std::span<const double> z) const { return back(subtract(ax, z)); }

  /// Hessian-vector product of f on the stacked (x, z) vector.
  std::pair<Vec, Vec> hessian_apply(std::span<const double> vx, std::span<const double> vz) const {
    const Vec avx = project(vx);
    const Vec r = subtract(avx, vz);
    Vec hx = back(r);
    Vec hz(vz.size());
    for (std::size_t k = 0; k < vz.size(); ++k) hz[k] = -r[k] + spec_->lambda * selected_[k] * vz[k];
    return {std::move(hx), std::move(hz)};
  }

 private:
  const ProblemSpec* spec_;
  Vec selected_;  // diagonal of P0^T P0
  Vec s_full_;    // P0^T s
};

inline FieldView image_field(const ProblemSpec& spec, std::span<const double> x) {
  return {spec.geometry().grid.ny, spec.geometry().grid.nx, x};
}

inline FieldView sino_field(const ProblemSpec& spec, std::span<const double> z) {
  return {spec.geometry().n_views_full(), spec.geometry().n_dets, z};
}

inline double data_term(const DualState& st, const ProblemSpec& spec) {
  spec.check_state(st);
  const DataTerm f(spec);
  return f.value(f.project(st.x.values), st.z.values);
}

inline Image grad_f_x(const DualState& st, const ProblemSpec& spec) {
  spec.check_state(st);
  const DataTerm f(spec);
  return Image(st.x.grid, f.grad_x(f.project(st.x.values), st.z.values));
}

inline Sinogram grad_f_z(const DualState& st, const ProblemSpec& spec) {
  spec.check_state(st);
  const DataTerm f(spec);
  Sinogram g = st.z;
  g.values = f.grad_z(f.project(st.x.values), st.z.values);
  return g;
}

/// Unsmoothed objective Phi with the exact l2,1 regularizers.
inline double phi(const DualState& st, const ProblemSpec& spec) {
  spec.check_state(st);
  const DataTerm f(spec);
  return f.value(f.project(st.x.values), st.z.values) +
         l21_norm(feature_forward(image_field(spec, st.x.values), spec.image_reg).features) +
         l21_norm(feature_forward(sino_field(spec, st.z.values), spec.sino_reg).features);
}

/// Everything the solver needs at one point for one epsilon.
struct Evaluation {
  double f = 0.0;
  double reg_x = 0.0;  // R_eps(x)
  double reg_z = 0.0;  // Q_eps(z)
  Vec ax;              // A x
  Vec gx_f, gz_f;      // data-term partial gradients
  Vec gx_reg, gz_reg;  // grad R_eps(x), grad Q_eps(z)

  double phi() const { return f + reg_x + reg_z; }
  Vec grad_x() const { return add_scaled(gx_f, 1.0, gx_reg); }
  Vec grad_z() const { return add_scaled(gz_f, 1.0, gz_reg); }
  /// Euclidean norm of the concatenated (image, sinogram) gradient.
  double grad_norm() const { return std::sqrt(squared_norm(grad_x()) + squared_norm(grad_z())); }
};

inline Evaluation evaluate(const DataTerm& f, std::span<const double> x, std::span<const double> z, double eps) {
  const ProblemSpec& spec = f.spec();
  Evaluation e;
  e.ax = f.project(x);
  e.f = f.value(e.ax, z);
  e.gx_f = f.grad_x(e.ax, z);
  e.gz_f = f.grad_z(e.ax, z);
  // Fixed order: image-domain term first, then sinogram-domain term.
  auto rx = smoothed_value_grad(image_field(spec, x), spec.image_reg, eps);
  auto rz = smoothed_value_grad(sino_field(spec, z), spec.sino_reg, eps);
  e.reg_x = rx.value;
  e.reg_z = rz.value;
  e.gx_reg = std::move(rx.grad);
  e.gz_reg = std::move(rz.grad);
  return e;
}

/// Phi_eps from raw buffers, given A x.
inline double phi_eps_value(const DataTerm& f, std::span<const double> ax, std::span<const double> x,
                            std::span<const double> z, double eps) {
  const ProblemSpec& spec = f.spec();
  return f.value(ax, z) + smoothed_value(image_field(spec, x), spec.image_reg, eps) +
         smoothed_value(sino_field(spec, z), spec.sino_reg, eps);
}

inline double phi_eps(const DualState& st, const ProblemSpec& spec, double eps) {
  spec.check_state(st);
  check_eps(eps);
  const DataTerm f(spec);
  return phi_eps_value(f, f.project(st.x.values), st.x.values, st.z.values, eps);
}

struct DualGradient {
  Image x;
  Sinogram z;
  double norm() const { return std::sqrt(squared_norm(x.values) + squared_norm(z.values)); }
};

inline DualGradient grad_phi_eps(const DualState& st, const ProblemSpec& spec, double eps) {
  spec.check_state(st);
  check_eps(eps);
  const DataTerm f(spec);
  const Evaluation e = evaluate(f, st.x.values, st.z.values, eps);
  DualGradient g{Image(st.x.grid, e.grad_x()), st.z};
  g.z.values = e.grad_z();
  return g;
}

// ----------------------------------------------------------------------------
// Lipschitz model of grad Phi_eps
// ----------------------------------------------------------------------------

struct LipschitzModel {
  double f_full = 0.0;  // spectral norm of the data-term Hessian
  double f_x = 0.0;     // |A^T A|
  double f_z = 0.0;     // 1 + lambda
  RegLipschitz image;
  RegLipschitz sino;

  double reg_image(double eps) const { return image.at(eps); }
  double reg_sino(double eps) const { return sino.at(eps); }
  /// Composite estimate L_f + L_R(eps) + L_Q(eps).
  double total(double eps) const { return f_full + image.at(eps) + sino.at(eps); }
};

inline LipschitzModel estimate_lipschitz(const ProblemSpec& spec, int iterations = 50) {
  spec.validate();
  const DataTerm f(spec);
  LipschitzModel m;
  m.f_x = spec.projector->normal_operator_norm(iterations);
  m.f_z = 1.0 + spec.lambda;

  Vec vx(f.image_size()), vz(f.sino_size());
  for (std::size_t i = 0; i < vx.size(); ++i) vx[i] = 1.0 + 0.3 * std::sin(1.7 * static_cast<double>(i));
  for (std::size_t i = 0; i < vz.size(); ++i) vz[i] = 1.0 + 0.3 * std::cos(0.9 * static_cast<double>(i));
  double lam = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const double n = std::sqrt(squared_norm(vx) + squared_norm(vz));
    if (n == 0.0) break;
    for (auto& v : vx) v /= n;
    for (auto& v : vz) v /= n;
    auto [hx, hz] = f.hessian_apply(vx, vz);
    lam = dot(vx, hx) + dot(vz, hz);
    vx.swap(hx);
    vz.swap(hz);
  }
  // The block bounds are exact-ish; never report less than either of them.
  m.f_full = std::max({lam, m.f_x, m.f_z});

  const auto& geo = spec.geometry();
  m.image = lipschitz_components(spec.image_reg, {geo.grid.ny, geo.grid.nx}, iterations);
  m.sino = lipschitz_components(spec.sino_reg, {geo.n_views_full(), geo.n_dets}, iterations);
  return m;
}

}  // namespace lama
