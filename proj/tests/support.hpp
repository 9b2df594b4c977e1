#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "lama/lama.hpp"

namespace lama::testing {

inline Vec random_vec(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline Image random_image(std::mt19937_64& rng, const GridSpec& g, double lo = -1.0, double hi = 1.0) {
  return Image(g, random_vec(rng, g.size(), lo, hi));
}

inline Sinogram random_full_sinogram(std::mt19937_64& rng, const ScanGeometry& geo, double lo = -1.0,
                                     double hi = 1.0) {
  Sinogram s = Sinogram::zeros_full(geo.n_views_full(), geo.n_dets);
  s.values = random_vec(rng, s.values.size(), lo, hi);
  return s;
}

inline GridSpec square_grid(std::size_t n, double pixel_size = 1.0) { return GridSpec{n, n, pixel_size, 0.0, 0.0}; }

/// Detector row covering the grid diagonal, `per_pixel` bins per pixel width.
inline ScanGeometry parallel_geometry(std::size_t n, std::size_t n_views, double pixel_size = 1.0,
                                      std::size_t per_pixel = 1) {
  const auto nd = static_cast<std::size_t>(std::ceil(1.4143 * static_cast<double>(n * per_pixel))) | 1u;
  return ScanGeometry::parallel(square_grid(n, pixel_size), n_views, nd,
                                pixel_size / static_cast<double>(per_pixel));
}

inline ScanGeometry fan_geometry(std::size_t n, std::size_t n_views) {
  const double R = 2.0 * static_cast<double>(n);
  const std::size_t nd = 2 * n + 2;
  const double half_fan = std::asin(0.75 * static_cast<double>(n) / R);
  return ScanGeometry::fan(square_grid(n), n_views, nd, 2.0 * half_fan / static_cast<double>(nd), R, 2.0 * R);
}

/// Length of the segment p + a d, a in [a_lo, a_hi], inside the box
/// [x0, x1] x [y0, y1] (Liang-Barsky clipping).
inline double clip_length(double px, double py, double dx, double dy, double a_lo, double a_hi, double x0, double x1,
                          double y0, double y1) {
  auto slab = [&](double p, double d, double lo, double hi) {
    if (d == 0.0) {
      if (p < lo || p > hi) a_hi = a_lo;
      return;
    }
    double t0 = (lo - p) / d, t1 = (hi - p) / d;
    if (t0 > t1) std::swap(t0, t1);
    a_lo = std::max(a_lo, t0);
    a_hi = std::min(a_hi, t1);
  };
  slab(px, dx, x0, x1);
  slab(py, dy, y0, y1);
  return a_hi > a_lo ? (a_hi - a_lo) * std::hypot(dx, dy) : 0.0;
}

/// Dense system matrix built pixel by pixel: every (ray, pixel) entry is the
/// ray's chord through that pixel square. Center rays only.
inline Eigen::MatrixXd dense_system_matrix(const ScanGeometry& geo) {
  const GridSpec& g = geo.grid;
  const std::size_t nd = geo.n_dets;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(geo.n_views_full() * nd),
                                            static_cast<Eigen::Index>(g.size()));
  const double inf = std::numeric_limits<double>::infinity();
  const double half = 0.5 * static_cast<double>(nd - 1);
  for (std::size_t v = 0; v < geo.n_views_full(); ++v) {
    const double c = std::cos(geo.angles[v]), s = std::sin(geo.angles[v]);
    for (std::size_t d = 0; d < nd; ++d) {
      const double u = static_cast<double>(d) - half;
      double px, py, dx, dy, lo, hi;
      if (geo.kind == BeamKind::parallel) {
        const double t = u * geo.det_spacing;
        px = t * c, py = t * s, dx = -s, dy = c, lo = -inf, hi = inf;
      } else {
        const double gm = u * geo.det_spacing;
        px = geo.source_radius * c, py = geo.source_radius * s;
        dx = -std::cos(geo.angles[v] + gm), dy = -std::sin(geo.angles[v] + gm);
        lo = 0.0, hi = geo.source_to_detector;
      }
      for (std::size_t j = 0; j < g.ny; ++j)
        for (std::size_t i = 0; i < g.nx; ++i) {
          const double h = 0.5 * g.pixel_size;
          const double len = clip_length(px, py, dx, dy, lo, hi, g.x_center(i) - h, g.x_center(i) + h,
                                         g.y_center(j) - h, g.y_center(j) + h);
          A(static_cast<Eigen::Index>(v * nd + d), static_cast<Eigen::Index>(j * g.nx + i)) = len;
        }
    }
  }
  return A;
}

inline Eigen::Map<const Eigen::VectorXd> as_eigen(const Vec& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

inline double rel_err(const Vec& a, const Vec& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

/// Central-difference gradient of a scalar function.
inline Vec fd_gradient(const std::function<double(const Vec&)>& fn, Vec x, double h = 1e-6) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = fn(x);
    x[i] = xi - h;
    const double fm = fn(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Isotropic Huber-TV with forward differences and a zero difference on the
/// last row/column, coded directly on the pixel array.
inline double huber_tv(const Vec& img, std::size_t h, std::size_t w, double weight, double eps) {
  double total = 0.0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double v = img[r * w + c];
      const double gx = c + 1 < w ? weight * (img[r * w + c + 1] - v) : 0.0;
      const double gy = r + 1 < h ? weight * (img[(r + 1) * w + c] - v) : 0.0;
      const double n = std::sqrt(gx * gx + gy * gy);
      total += n <= eps ? n * n / (2.0 * eps) : n - eps / 2.0;
    }
  return total;
}

}  // namespace lama::testing
