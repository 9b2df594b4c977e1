#pragma once

// Tomographic geometry and operators: ray-driven forward projection with an
// exactly matched back-projection, view subsampling, view interpolation and a
// parallel-beam filtered back-projection baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <fftw3.h>

#include "lama/core.hpp"

namespace lama {

struct GridSpec {
  std::size_t nx = 1;
  std::size_t ny = 1;
  double pixel_size = 1.0;
  double origin_x = 0.0;  // physical coordinates of the grid center
  double origin_y = 0.0;

  std::size_t size() const { return nx * ny; }

  void validate() const {
    if (nx < 1 || ny < 1) throw ConfigError("grid must have at least one pixel per axis");
    if (!(pixel_size > 0.0) || !std::isfinite(pixel_size))
      throw ConfigError("grid pixel_size must be positive");
    if (!std::isfinite(origin_x) || !std::isfinite(origin_y))
      throw ConfigError("grid origin must be finite");
  }

  // Column i runs along +x, row j runs from the top (+y) downwards.
  double x_center(std::size_t i) const {
    return origin_x + (static_cast<double>(i) - 0.5 * static_cast<double>(nx - 1)) * pixel_size;
  }
  double y_center(std::size_t j) const {
    return origin_y + (0.5 * static_cast<double>(ny - 1) - static_cast<double>(j)) * pixel_size;
  }
  double x_min() const { return origin_x - 0.5 * static_cast<double>(nx) * pixel_size; }
  double y_max() const { return origin_y + 0.5 * static_cast<double>(ny) * pixel_size; }

  bool operator==(const GridSpec&) const = default;
};

enum class BeamKind { parallel, fan_equiangular };

inline std::string to_string(BeamKind k) {
  return k == BeamKind::parallel ? "parallel" : "fan-equiangular";
}

struct ScanGeometry {
  BeamKind kind = BeamKind::parallel;
  std::vector<double> angles;  // radians, strictly increasing
  std::size_t n_dets = 1;
  // Detector pitch: a length for parallel beam, an angle (radians) for the
  // equiangular fan.
  double det_spacing = 1.0;
  double source_radius = 0.0;       // fan-beam only
  double source_to_detector = 0.0;  // fan-beam only
  std::size_t rays_per_bin = 1;     // supersampling factor across a detector bin
  GridSpec grid;

  std::size_t n_views_full() const { return angles.size(); }

  /// Evenly spaced views over [0, pi).
  static ScanGeometry parallel(const GridSpec& grid, std::size_t n_views, std::size_t n_dets,
                               double det_spacing) {
    ScanGeometry g;
    g.kind = BeamKind::parallel;
    g.grid = grid;
    g.n_dets = n_dets;
    g.det_spacing = det_spacing;
    g.angles = even_angles(n_views, std::numbers::pi);
    g.validate();
    return g;
  }

  /// Evenly spaced source positions over [0, 2 pi).
  static ScanGeometry fan(const GridSpec& grid, std::size_t n_views, std::size_t n_dets,
                          double det_angle, double source_radius, double source_to_detector) {
    ScanGeometry g;
    g.kind = BeamKind::fan_equiangular;
    g.grid = grid;
    g.n_dets = n_dets;
    g.det_spacing = det_angle;
    g.source_radius = source_radius;
    g.source_to_detector = source_to_detector;
    g.angles = even_angles(n_views, 2.0 * std::numbers::pi);
    g.validate();
    return g;
  }

  static std::vector<double> even_angles(std::size_t n, double span) {
    std::vector<double> a(n);
    for (std::size_t k = 0; k < n; ++k) a[k] = span * static_cast<double>(k) / static_cast<double>(n);
    return a;
  }

  void validate() const {
    grid.validate();
    if (angles.empty()) throw ConfigError("geometry needs at least one view angle");
    for (std::size_t k = 0; k < angles.size(); ++k) {
      if (!std::isfinite(angles[k])) throw ConfigError("view angles must be finite");
      if (k > 0 && !(angles[k] > angles[k - 1]))
        throw ConfigError("view angles must be strictly increasing");
    }
    if (n_dets < 1) throw ConfigError("geometry needs at least one detector");
    if (!(det_spacing > 0.0)) throw ConfigError("det_spacing must be positive");
    if (rays_per_bin < 1) throw ConfigError("rays_per_bin must be at least 1");
    if (kind == BeamKind::fan_equiangular) {
      if (!(source_radius > 0.0) || !(source_to_detector > 0.0))
        throw ConfigError("fan-beam geometry needs positive source_radius and source_to_detector");
      if (!(source_to_detector > source_radius))
        throw ConfigError("fan-beam detector must lie beyond the rotation center");
      if (static_cast<double>(n_dets) * det_spacing >= std::numbers::pi)
        throw ConfigError("fan angle must be below pi");
    }
  }
};

struct Image {
  GridSpec grid;
  Vec values;

  Image() = default;
  explicit Image(const GridSpec& g, double fill = 0.0) : grid(g), values(g.size(), fill) {}
  Image(const GridSpec& g, Vec v) : grid(g), values(std::move(v)) {
    if (values.size() != grid.size()) throw InputError("image value count does not match grid");
  }

  double& at(std::size_t col, std::size_t row) { return values[row * grid.nx + col]; }
  double at(std::size_t col, std::size_t row) const { return values[row * grid.nx + col]; }

  bool operator==(const Image&) const = default;
};

struct ViewMask {
  std::size_t n_views_full = 0;
  std::vector<std::size_t> selected;

  void validate() const {
    if (selected.empty()) throw ConfigError("view mask selects no views");
    for (std::size_t k = 0; k < selected.size(); ++k) {
      if (selected[k] >= n_views_full) throw ConfigError("view mask index out of range");
      if (k > 0 && selected[k] <= selected[k - 1])
        throw ConfigError("view mask indices must be sorted and unique");
    }
  }

  static ViewMask full(std::size_t n_views_full) {
    ViewMask m{n_views_full, {}};
    m.selected.resize(n_views_full);
    for (std::size_t k = 0; k < n_views_full; ++k) m.selected[k] = k;
    return m;
  }

  /// Uniform stride n_views_full / n_views. When the division is not exact,
  /// view k maps to the nearest full index round(k * n_views_full / n_views).
  static ViewMask uniform(std::size_t n_views_full, std::size_t n_views) {
    if (n_views < 1 || n_views > n_views_full)
      throw ConfigError("sparse view count must be in [1, n_views_full]");
    ViewMask m{n_views_full, {}};
    m.selected.resize(n_views);
    for (std::size_t k = 0; k < n_views; ++k)
      m.selected[k] = (2 * k * n_views_full + n_views) / (2 * n_views);
    m.validate();
    return m;
  }

  bool operator==(const ViewMask&) const = default;
};

struct Sinogram {
  std::size_t n_views_full = 0;
  std::size_t n_dets = 0;
  std::vector<std::size_t> view_indices;  // rows held, as indices into the full view set
  Vec values;                             // (row, detector), row-major

  Sinogram() = default;

  static Sinogram zeros_full(std::size_t n_views_full, std::size_t n_dets) {
    Sinogram s;
    s.n_views_full = n_views_full;
    s.n_dets = n_dets;
    s.view_indices.resize(n_views_full);
    for (std::size_t k = 0; k < n_views_full; ++k) s.view_indices[k] = k;
    s.values.assign(n_views_full * n_dets, 0.0);
    return s;
  }

  static Sinogram zeros_like(const Sinogram& other) {
    Sinogram s = other;
    std::fill(s.values.begin(), s.values.end(), 0.0);
    return s;
  }

  std::size_t n_rows() const { return view_indices.size(); }
  bool is_full() const { return view_indices.size() == n_views_full; }

  std::span<double> row(std::size_t r) { return {values.data() + r * n_dets, n_dets}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * n_dets, n_dets}; }

  void validate() const {
    if (values.size() != view_indices.size() * n_dets)
      throw InputError("sinogram value count does not match rows x detectors");
    for (std::size_t k = 0; k < view_indices.size(); ++k) {
      if (view_indices[k] >= n_views_full) throw InputError("sinogram view index out of range");
      if (k > 0 && view_indices[k] <= view_indices[k - 1])
        throw InputError("sinogram view indices must be sorted and unique");
    }
    if (!all_finite(values)) throw InputError("sinogram contains non-finite values");
  }

  bool same_layout(const Sinogram& o) const {
    return n_views_full == o.n_views_full && n_dets == o.n_dets && view_indices == o.view_indices;
  }

  bool operator==(const Sinogram&) const = default;
};

enum class Execution { sequential, parallel };

namespace detail {

struct Segment {
  std::uint32_t pixel;
  double length;
};

// Exact intersection lengths of the segment p(a) = (px, py) + a (dx, dy),
// a in [a_lo, a_hi], with every pixel of the grid; (dx, dy) must be a unit vector.
inline void trace_ray(const GridSpec& g, double px, double py, double dx, double dy, double a_lo,
                      double a_hi, double scale, std::vector<Segment>& out) {
  const double ps = g.pixel_size;
  const double x0 = g.x_min();
  const double x1 = x0 + static_cast<double>(g.nx) * ps;
  const double y1 = g.y_max();
  const double y0 = y1 - static_cast<double>(g.ny) * ps;

  auto clip = [&](double p, double d, double lo, double hi) {
    if (d == 0.0) {
      if (p < lo || p > hi) a_hi = a_lo - 1.0;
      return;
    }
    double t0 = (lo - p) / d;
    double t1 = (hi - p) / d;
    if (t0 > t1) std::swap(t0, t1);
    a_lo = std::max(a_lo, t0);
    a_hi = std::min(a_hi, t1);
  };
  clip(px, dx, x0, x1);
  clip(py, dy, y0, y1);
  if (!(a_hi > a_lo)) return;

  std::vector<double> alphas;
  alphas.reserve(g.nx + g.ny + 4);
  alphas.push_back(a_lo);
  alphas.push_back(a_hi);
  if (dx != 0.0) {
    for (std::size_t i = 0; i <= g.nx; ++i) {
      const double a = (x0 + static_cast<double>(i) * ps - px) / dx;
      if (a > a_lo && a < a_hi) alphas.push_back(a);
    }
  }
  if (dy != 0.0) {
    for (std::size_t j = 0; j <= g.ny; ++j) {
      const double a = (y0 + static_cast<double>(j) * ps - py) / dy;
      if (a > a_lo && a < a_hi) alphas.push_back(a);
    }
  }
  std::sort(alphas.begin(), alphas.end());

  const auto nx = static_cast<std::ptrdiff_t>(g.nx);
  const auto ny = static_cast<std::ptrdiff_t>(g.ny);
  for (std::size_t k = 0; k + 1 < alphas.size(); ++k) {
    const double len = alphas[k + 1] - alphas[k];
    if (!(len > 0.0)) continue;
    const double am = 0.5 * (alphas[k] + alphas[k + 1]);
    const double xm = px + am * dx;
    const double ym = py + am * dy;
    auto col = static_cast<std::ptrdiff_t>(std::floor((xm - x0) / ps));
    auto row = static_cast<std::ptrdiff_t>(std::floor((y1 - ym) / ps));
    col = std::clamp<std::ptrdiff_t>(col, 0, nx - 1);
    row = std::clamp<std::ptrdiff_t>(row, 0, ny - 1);
    out.push_back({static_cast<std::uint32_t>(row * nx + col), len * scale});
  }
}

inline unsigned worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  if (workers <= 1 || n < 2) {
    fn(std::size_t{0}, n, 0u);
    return;
  }
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi, w] { fn(lo, hi, w); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

/// Ray-driven projector. The per-ray intersection lists are traced once at
/// construction; forward and back projection then apply the same weights, so
/// the pair is an exact transpose up to round-off.
class Projector {
 public:
  explicit Projector(ScanGeometry geo, Execution exec = Execution::sequential)
      : geo_(std::move(geo)), exec_(exec) {
    geo_.validate();
    build();
  }

  const ScanGeometry& geometry() const { return geo_; }
  Execution execution() const { return exec_; }
  void set_execution(Execution e) { exec_ = e; }

  std::size_t n_rays() const { return row_ptr_.size() - 1; }
  std::size_t nonzeros() const { return segs_.size(); }

  /// Intersection weights of the ray at (full view, detector).
  std::span<const detail::Segment> ray(std::size_t view, std::size_t det) const {
    const std::size_t r = view * geo_.n_dets + det;
    return {segs_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }

  Sinogram forward(const Image& img) const {
    check_image(img);
    Sinogram out = Sinogram::zeros_full(geo_.n_views_full(), geo_.n_dets);
    forward_into(img.values, out.values);
    return out;
  }

  // Raw variant on full-view buffers, used by the solver's inner loop.
  void forward_into(std::span<const double> x, std::span<double> out) const {
    const unsigned workers = exec_ == Execution::parallel ? detail::worker_count() : 1u;
    detail::parallel_for(n_rays(), workers, [&](std::size_t lo, std::size_t hi, unsigned) {
      for (std::size_t r = lo; r < hi; ++r) {
        double s = 0.0;
        for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) s += segs_[k].length * x[segs_[k].pixel];
        out[r] = s;
      }
    });
  }

  /// Transpose of forward(). Accepts full or view-subset sinograms; missing
  /// rows contribute nothing.
  Image back(const Sinogram& sino) const {
    check_sinogram(sino);
    Image out(geo_.grid);
    if (sino.is_full()) {
      back_into(sino.values, out.values);
      return out;
    }
    for (std::size_t r = 0; r < sino.n_rows(); ++r) {
      const std::size_t v = sino.view_indices[r];
      for (std::size_t d = 0; d < geo_.n_dets; ++d) {
        const double val = sino.values[r * geo_.n_dets + d];
        if (val == 0.0) continue;
        for (const auto& s : ray(v, d)) out.values[s.pixel] += s.length * val;
      }
    }
    return out;
  }

  void back_into(std::span<const double> sino, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    const unsigned workers = exec_ == Execution::parallel ? detail::worker_count() : 1u;
    if (workers <= 1) {
      accumulate_back(sino, out, 0, n_rays());
      return;
    }
    // Per-worker partial images, reduced in fixed worker order.
    std::vector<Vec> partial(workers, Vec(out.size(), 0.0));
    detail::parallel_for(n_rays(), workers, [&](std::size_t lo, std::size_t hi, unsigned w) {
      accumulate_back(sino, partial[w], lo, hi);
    });
    for (const auto& p : partial) axpy(1.0, p, out);
  }

  /// Largest eigenvalue of A^T A by power iteration (deterministic start).
  double normal_operator_norm(int iterations = 50) const {
    Vec x(geo_.grid.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 1.0 + 0.1 * std::sin(static_cast<double>(i));
    Vec ax(n_rays()), atax(x.size());
    double lam = 0.0;
    for (int it = 0; it < iterations; ++it) {
      const double n = norm2(x);
      if (n == 0.0) return 0.0;
      for (auto& v : x) v /= n;
      forward_into(x, ax);
      back_into(ax, atax);
      lam = dot(x, atax);
      x.swap(atax);
    }
    return lam;
  }

 private:
  void accumulate_back(std::span<const double> sino, std::span<double> out, std::size_t lo,
                       std::size_t hi) const {
    for (std::size_t r = lo; r < hi; ++r) {
      const double v = sino[r];
      if (v == 0.0) continue;
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out[segs_[k].pixel] += segs_[k].length * v;
    }
  }

  void check_image(const Image& img) const {
    if (!(img.grid == geo_.grid)) throw ConfigError("image grid does not match projector geometry");
    if (img.values.size() != geo_.grid.size()) throw InputError("image value count does not match grid");
    if (!all_finite(img.values)) throw InputError("image contains non-finite values");
  }

  void check_sinogram(const Sinogram& s) const {
    if (s.n_views_full != geo_.n_views_full() || s.n_dets != geo_.n_dets)
      throw ConfigError("sinogram shape does not match projector geometry");
    s.validate();
  }

  void build() {
    const std::size_t nv = geo_.n_views_full();
    const std::size_t nd = geo_.n_dets;
    const std::size_t sub = geo_.rays_per_bin;
    const double scale = 1.0 / static_cast<double>(sub);
    const double half = 0.5 * static_cast<double>(nd - 1);
    row_ptr_.assign(1, 0);
    row_ptr_.reserve(nv * nd + 1);
    std::vector<detail::Segment> ray;
    for (std::size_t v = 0; v < nv; ++v) {
      const double th = geo_.angles[v];
      const double c = std::cos(th), s = std::sin(th);
      for (std::size_t d = 0; d < nd; ++d) {
        ray.clear();
        for (std::size_t k = 0; k < sub; ++k) {
          const double u = static_cast<double>(d) - half +
                           (static_cast<double>(k) + 0.5) / static_cast<double>(sub) - 0.5;
          if (geo_.kind == BeamKind::parallel) {
            // Line {t (c, s) + a (-s, c)}, detector coordinate t.
            const double t = u * geo_.det_spacing;
            detail::trace_ray(geo_.grid, t * c, t * s, -s, c, -std::numeric_limits<double>::infinity(),
                              std::numeric_limits<double>::infinity(), scale, ray);
          } else {
            const double gamma = u * geo_.det_spacing;
            const double sx = geo_.source_radius * c, sy = geo_.source_radius * s;
            // Central ray points from the source through the rotation center.
            const double cg = std::cos(gamma), sg = std::sin(gamma);
            const double dx = -(c * cg - s * sg);
            const double dy = -(s * cg + c * sg);
            detail::trace_ray(geo_.grid, sx, sy, dx, dy, 0.0, geo_.source_to_detector, scale, ray);
          }
        }
        merge_ray(ray);
        segs_.insert(segs_.end(), ray.begin(), ray.end());
        row_ptr_.push_back(segs_.size());
      }
    }
  }

  static void merge_ray(std::vector<detail::Segment>& ray) {
    std::stable_sort(ray.begin(), ray.end(),
                     [](const auto& a, const auto& b) { return a.pixel < b.pixel; });
    std::size_t w = 0;
    for (std::size_t k = 0; k < ray.size(); ++k) {
      if (w > 0 && ray[w - 1].pixel == ray[k].pixel)
        ray[w - 1].length += ray[k].length;
      else
        ray[w++] = ray[k];
    }
    ray.resize(w);
  }

  ScanGeometry geo_;
  Execution exec_;
  std::vector<std::size_t> row_ptr_;
  std::vector<detail::Segment> segs_;
};

inline Sinogram forward_project(const Image& img, const ScanGeometry& geo) {
  return Projector(geo).forward(img);
}

inline Image back_project(const Sinogram& sino, const ScanGeometry& geo) {
  return Projector(geo).back(sino);
}

/// Restrict a full-view sinogram to the rows selected by the mask (P0).
inline Sinogram subsample_views(const Sinogram& sino, const ViewMask& mask) {
  mask.validate();
  if (!sino.is_full()) throw ConfigError("subsample_views expects a full-view sinogram");
  if (mask.n_views_full != sino.n_views_full) throw ConfigError("view mask does not match sinogram");
  Sinogram out;
  out.n_views_full = sino.n_views_full;
  out.n_dets = sino.n_dets;
  out.view_indices = mask.selected;
  out.values.reserve(mask.selected.size() * sino.n_dets);
  for (std::size_t v : mask.selected) {
    auto r = sino.row(v);
    out.values.insert(out.values.end(), r.begin(), r.end());
  }
  return out;
}

/// Embed a view subset into a full-view sinogram with zero rows elsewhere (P0^T).
inline Sinogram zero_fill_views(const Sinogram& sparse) {
  sparse.validate();
  Sinogram out = Sinogram::zeros_full(sparse.n_views_full, sparse.n_dets);
  for (std::size_t r = 0; r < sparse.n_rows(); ++r) {
    auto src = sparse.row(r);
    std::copy(src.begin(), src.end(), out.row(sparse.view_indices[r]).begin());
  }
  return out;
}

/// Per-detector linear interpolation along the view axis. The view axis is
/// periodic; for parallel beam, wrapping past the last view continues at view
/// 0 with the detector axis mirrored (p(theta + pi, t) = p(theta, -t)).
inline Sinogram upsample_sinogram_linear(const Sinogram& sparse, std::size_t n_views_full,
                                         BeamKind kind = BeamKind::parallel) {
  sparse.validate();
  if (sparse.n_rows() < 2) throw InputError("view interpolation needs at least two views");
  if (sparse.n_views_full != n_views_full) throw ConfigError("sparse sinogram has a different full view count");
  const std::size_t nd = sparse.n_dets;
  const std::size_t nr = sparse.n_rows();
  const auto& idx = sparse.view_indices;
  const bool mirror_on_wrap = kind == BeamKind::parallel;
  Sinogram out = Sinogram::zeros_full(n_views_full, nd);

  std::size_t r_next = 0;  // first retained row with index > v
  for (std::size_t v = 0; v < n_views_full; ++v) {
    while (r_next < nr && idx[r_next] <= v) ++r_next;
    auto dst = out.row(v);
    if (r_next > 0 && idx[r_next - 1] == v) {
      auto src = sparse.row(r_next - 1);
      std::copy(src.begin(), src.end(), dst.begin());
      continue;
    }
    // Bracketing rows in an unwrapped view coordinate; a side reached through
    // the wrap is flagged so parallel-beam data can be mirrored.
    const bool lo_wraps = r_next == 0;
    const bool hi_wraps = r_next == nr;
    const std::size_t r_lo = lo_wraps ? nr - 1 : r_next - 1;
    const std::size_t r_hi = hi_wraps ? 0 : r_next;
    const double v_lo = static_cast<double>(idx[r_lo]) - (lo_wraps ? static_cast<double>(n_views_full) : 0.0);
    const double v_hi = static_cast<double>(idx[r_hi]) + (hi_wraps ? static_cast<double>(n_views_full) : 0.0);
    const double t = (static_cast<double>(v) - v_lo) / (v_hi - v_lo);
    auto a = sparse.row(r_lo);
    auto b = sparse.row(r_hi);
    const bool flip_a = lo_wraps && mirror_on_wrap;
    const bool flip_b = hi_wraps && mirror_on_wrap;
    for (std::size_t d = 0; d < nd; ++d) {
      const double av = flip_a ? a[nd - 1 - d] : a[d];
      const double bv = flip_b ? b[nd - 1 - d] : b[d];
      dst[d] = (1.0 - t) * av + t * bv;
    }
  }
  return out;
}

enum class FbpWindow { ram_lak, hann };

namespace detail {

struct FftwDeleter {
  void operator()(double* p) const { fftw_free(p); }
  void operator()(fftw_complex* p) const { fftw_free(p); }
};

class FftwPlan {
 public:
  explicit FftwPlan(fftw_plan p) : p_(p) {
    if (!p_) throw NumericalError("FFTW plan creation failed");
  }
  ~FftwPlan() { fftw_destroy_plan(p_); }
  FftwPlan(const FftwPlan&) = delete;
  FftwPlan& operator=(const FftwPlan&) = delete;
  void execute() const { fftw_execute(p_); }

 private:
  fftw_plan p_;
};

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Frequency response of the band-limited ramp filter (spatial-domain samples
// h(0) = 1/(4 tau^2), h(n odd) = -1/(n pi tau)^2), times the window.
inline Vec ramp_response(std::size_t n_pad, double tau, FbpWindow window) {
  const double pi = std::numbers::pi;
  Vec h(n_pad, 0.0);
  h[0] = 1.0 / (4.0 * tau * tau);
  for (std::size_t k = 1; k < n_pad / 2 + 1; ++k) {
    if (k % 2 == 1) {
      const double v = -1.0 / (static_cast<double>(k * k) * pi * pi * tau * tau);
      h[k] = v;
      h[n_pad - k] = v;
    }
  }
  const std::size_t nc = n_pad / 2 + 1;
  std::unique_ptr<fftw_complex, FftwDeleter> spec(fftw_alloc_complex(nc));
  std::unique_ptr<double, FftwDeleter> buf(fftw_alloc_real(n_pad));
  std::copy(h.begin(), h.end(), buf.get());
  FftwPlan plan(fftw_plan_dft_r2c_1d(static_cast<int>(n_pad), buf.get(), spec.get(), FFTW_ESTIMATE));
  plan.execute();
  Vec resp(nc);
  for (std::size_t k = 0; k < nc; ++k) {
    double r = spec.get()[k][0];
    if (window == FbpWindow::hann) {
      const double f = static_cast<double>(k) / static_cast<double>(n_pad);
      r *= 0.5 + 0.5 * std::cos(2.0 * pi * f);
    }
    resp[k] = r;
  }
  return resp;
}

}  // namespace detail

/// Parallel-beam filtered back-projection. Each held view is weighted by its
/// angular gap to its neighbours (pi / n_views for uniform views).
inline Image fbp_reconstruct(const Sinogram& sino, const ScanGeometry& geo,
                             FbpWindow window = FbpWindow::ram_lak) {
  geo.validate();
  if (geo.kind != BeamKind::parallel) throw UnsupportedGeometry("FBP supports parallel-beam geometry only");
  if (sino.n_views_full != geo.n_views_full() || sino.n_dets != geo.n_dets)
    throw ConfigError("sinogram shape does not match geometry");
  sino.validate();

  const double pi = std::numbers::pi;
  const std::size_t nd = geo.n_dets;
  const std::size_t nr = sino.n_rows();
  const double tau = geo.det_spacing;

  // Angular weights, periodic over [0, pi).
  Vec weight(nr, pi);
  if (nr > 1) {
    for (std::size_t r = 0; r < nr; ++r) {
      const double th = geo.angles[sino.view_indices[r]];
      const double prev = r == 0 ? geo.angles[sino.view_indices[nr - 1]] - pi : geo.angles[sino.view_indices[r - 1]];
      const double next = r + 1 == nr ? geo.angles[sino.view_indices[0]] + pi : geo.angles[sino.view_indices[r + 1]];
      weight[r] = 0.5 * ((th - prev) + (next - th));
    }
  }

  const std::size_t n_pad = detail::next_pow2(2 * nd);
  const std::size_t nc = n_pad / 2 + 1;
  const Vec resp = detail::ramp_response(n_pad, tau, window);
  std::unique_ptr<double, detail::FftwDeleter> buf(fftw_alloc_real(n_pad));
  std::unique_ptr<fftw_complex, detail::FftwDeleter> spec(fftw_alloc_complex(nc));
  detail::FftwPlan fwd(fftw_plan_dft_r2c_1d(static_cast<int>(n_pad), buf.get(), spec.get(), FFTW_ESTIMATE));
  detail::FftwPlan inv(fftw_plan_dft_c2r_1d(static_cast<int>(n_pad), spec.get(), buf.get(), FFTW_ESTIMATE));

  Vec filtered(nr * nd);
  for (std::size_t r = 0; r < nr; ++r) {
    auto row = sino.row(r);
    std::fill(buf.get(), buf.get() + n_pad, 0.0);
    std::copy(row.begin(), row.end(), buf.get());
    fwd.execute();
    for (std::size_t k = 0; k < nc; ++k) {
      spec.get()[k][0] *= resp[k];
      spec.get()[k][1] *= resp[k];
    }
    inv.execute();
    // c2r is unnormalized; tau converts the discrete convolution to an integral.
    const double norm = tau / static_cast<double>(n_pad);
    for (std::size_t d = 0; d < nd; ++d) filtered[r * nd + d] = buf.get()[d] * norm;
  }

  const GridSpec& g = geo.grid;
  Image out(g);
  const double half = 0.5 * static_cast<double>(nd - 1);
  for (std::size_t r = 0; r < nr; ++r) {
    const double th = geo.angles[sino.view_indices[r]];
    const double c = std::cos(th), s = std::sin(th);
    const double* q = filtered.data() + r * nd;
    for (std::size_t j = 0; j < g.ny; ++j) {
      const double y = g.y_center(j);
      for (std::size_t i = 0; i < g.nx; ++i) {
        const double t = g.x_center(i) * c + y * s;
        const double u = t / tau + half;
        const double fl = std::floor(u);
        const auto b0 = static_cast<std::ptrdiff_t>(fl);
        const double w1 = u - fl;
        double val = 0.0;
        if (b0 >= 0 && b0 < static_cast<std::ptrdiff_t>(nd)) val += (1.0 - w1) * q[b0];
        if (b0 + 1 >= 0 && b0 + 1 < static_cast<std::ptrdiff_t>(nd)) val += w1 * q[b0 + 1];
        out.values[j * g.nx + i] += weight[r] * val;
      }
    }
  }
  return out;
}

}  // namespace lama
