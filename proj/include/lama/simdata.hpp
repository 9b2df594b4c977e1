#pragma once

// Phantoms, measurement simulation and the deterministic (x0, z0) initializer.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lama/core.hpp"
#include "lama/objective.hpp"
#include "lama/tomo.hpp"

namespace lama {

/// Ellipse in coordinates normalized to the grid half-extent ([-1, 1] spans
/// the grid along each axis). Angle in degrees, counter-clockwise.
struct Ellipse {
  double cx = 0.0;
  double cy = 0.0;
  double a = 1.0;  // semi-axis along the rotated x direction
  double b = 1.0;
  double angle_deg = 0.0;
  double intensity = 1.0;

  bool contains(double x, double y) const {
    const double t = angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(t), s = std::sin(t);
    const double dx = x - cx, dy = y - cy;
    const double u = dx * c + dy * s;
    const double v = -dx * s + dy * c;
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
  }
};

enum class PhantomKind { shepp_logan_modified, disk, custom_ellipses };

struct PhantomSpec {
  PhantomKind kind = PhantomKind::shepp_logan_modified;
  std::vector<Ellipse> ellipses;  // custom_ellipses only
  double disk_radius = 0.5;       // disk only, normalized
  double disk_intensity = 1.0;
  GridSpec grid;

  void validate() const {
    grid.validate();
    for (const auto& e : ellipses) {
      if (!(e.a > 0.0) || !(e.b > 0.0)) throw ConfigError("ellipse axes must be positive");
      if (!std::isfinite(e.intensity) || !std::isfinite(e.cx) || !std::isfinite(e.cy) || !std::isfinite(e.angle_deg))
        throw ConfigError("ellipse parameters must be finite");
    }
    if (kind == PhantomKind::disk && !(disk_radius > 0.0)) throw ConfigError("disk radius must be positive");
    if (kind == PhantomKind::disk && !std::isfinite(disk_intensity)) throw ConfigError("disk intensity must be finite");
  }
};

/// Modified (higher-contrast) Shepp-Logan head phantom.
inline std::vector<Ellipse> modified_shepp_logan() {
  return {
      {0.0, 0.0, 0.69, 0.92, 0.0, 1.0},        {0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8},
      {0.22, 0.0, 0.11, 0.31, -18.0, -0.2},    {-0.22, 0.0, 0.16, 0.41, 18.0, -0.2},
      {0.0, 0.35, 0.21, 0.25, 0.0, 0.1},       {0.0, 0.1, 0.046, 0.046, 0.0, 0.1},
      {0.0, -0.1, 0.046, 0.046, 0.0, 0.1},     {-0.08, -0.605, 0.046, 0.023, 0.0, 0.1},
      {0.0, -0.606, 0.023, 0.023, 0.0, 0.1},   {0.06, -0.605, 0.023, 0.046, 0.0, 0.1},
  };
}

inline std::vector<Ellipse> phantom_ellipses(const PhantomSpec& spec) {
  switch (spec.kind) {
    case PhantomKind::shepp_logan_modified:
      return modified_shepp_logan();
    case PhantomKind::disk:
      return {{0.0, 0.0, spec.disk_radius, spec.disk_radius, 0.0, spec.disk_intensity}};
    case PhantomKind::custom_ellipses:
      return spec.ellipses;
  }
  return {};
}

/// Ellipse-sum value at a normalized point.
inline double phantom_value(const std::vector<Ellipse>& ellipses, double x, double y) {
  double v = 0.0;
  for (const auto& e : ellipses)
    if (e.contains(x, y)) v += e.intensity;
  return v;
}

inline Image make_phantom(const PhantomSpec& spec) {
  spec.validate();
  const auto ellipses = phantom_ellipses(spec);
  const GridSpec& g = spec.grid;
  const double hx = 0.5 * static_cast<double>(g.nx) * g.pixel_size;
  const double hy = 0.5 * static_cast<double>(g.ny) * g.pixel_size;
  Image img(g);
  for (std::size_t j = 0; j < g.ny; ++j)
    for (std::size_t i = 0; i < g.nx; ++i)
      img.at(i, j) = phantom_value(ellipses, (g.x_center(i) - g.origin_x) / hx, (g.y_center(j) - g.origin_y) / hy);
  return img;
}

enum class NoiseModel { none, gaussian, poisson_transmission };

struct NoiseSpec {
  NoiseModel model = NoiseModel::none;
  double sigma = 0.0;             // gaussian standard deviation
  double incident_photons = 1e6;  // I0 for transmission noise
  std::uint64_t seed = 0;

  void validate() const {
    if (model == NoiseModel::gaussian && !(sigma >= 0.0 && std::isfinite(sigma)))
      throw ParameterError("gaussian noise sigma must be non-negative");
    if (model == NoiseModel::poisson_transmission && !(incident_photons > 0.0 && std::isfinite(incident_photons)))
      throw ParameterError("incident photon count must be positive");
  }
};

struct Measurement {
  Sinogram sparse;  // s = P0 z_true
  Sinogram full;    // z_true
};

/// Photon counts N ~ Poisson(I0 exp(-p)); the noisy line integral is
/// -log(max(N, 1) / I0).
inline void apply_noise(Sinogram& z, const NoiseSpec& noise) {
  noise.validate();
  if (noise.model == NoiseModel::none) return;
  std::mt19937_64 rng(noise.seed);
  if (noise.model == NoiseModel::gaussian) {
    if (noise.sigma == 0.0) return;
    std::normal_distribution<double> nd(0.0, noise.sigma);
    for (double& v : z.values) v += nd(rng);
    return;
  }
  for (double& v : z.values) {
    std::poisson_distribution<long long> pd(noise.incident_photons * std::exp(-v));
    const double n = static_cast<double>(std::max<long long>(pd(rng), 1));
    v = -std::log(n / noise.incident_photons);
  }
}

inline Measurement simulate_measurement(const Image& phantom, const Projector& projector, const ViewMask& mask,
                                        const NoiseSpec& noise) {
  noise.validate();
  mask.validate();
  Measurement m;
  m.full = projector.forward(phantom);
  apply_noise(m.full, noise);
  m.sparse = subsample_views(m.full, mask);
  return m;
}

inline Measurement simulate_measurement(const Image& phantom, const ScanGeometry& geo, const ViewMask& mask,
                                        const NoiseSpec& noise) {
  return simulate_measurement(phantom, Projector(geo), mask, noise);
}

/// z0: view interpolation of s; x0: FBP of z0 clamped to be non-negative.
inline DualState initialize(const Sinogram& s, const ScanGeometry& geo, const ViewMask& mask,
                            FbpWindow window = FbpWindow::ram_lak) {
  mask.validate();
  if (s.view_indices != mask.selected) throw ConfigError("sinogram rows do not match the view mask");
  if (s.n_views_full != geo.n_views_full() || s.n_dets != geo.n_dets)
    throw ConfigError("sinogram does not match geometry");
  DualState st;
  st.z = s.is_full() ? s : upsample_sinogram_linear(s, geo.n_views_full(), geo.kind);
  st.x = fbp_reconstruct(st.z, geo, window);
  for (double& v : st.x.values) v = std::max(v, 0.0);
  return st;
}

}  // namespace lama
