#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>

#include <json.hpp>

#include "lama/core.hpp"
#include "lama/objective.hpp"
#include "lama/tomo.hpp"

namespace lama {

/// max(ref) - min(ref), or 1 for a constant reference.
inline double default_data_range(std::span<const double> ref) {
  if (ref.empty()) return 1.0;
  const auto [lo, hi] = std::minmax_element(ref.begin(), ref.end());
  return *hi > *lo ? *hi - *lo : 1.0;
}

inline void check_pair(const Image& a, const Image& b) {
  if (!(a.grid.nx == b.grid.nx && a.grid.ny == b.grid.ny) || a.values.size() != b.values.size())
    throw InputError("metric inputs must have the same shape");
}

/// 10 log10(range^2 / MSE). Identical inputs give +infinity.
inline double psnr(const Image& test, const Image& ref, std::optional<double> data_range = std::nullopt) {
  check_pair(test, ref);
  const double range = data_range.value_or(default_data_range(ref.values));
  if (!(range > 0.0)) throw ParameterError("data_range must be positive");
  const double mse = squared_distance(test.values, ref.values) / static_cast<double>(ref.values.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(range * range / mse);
}

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over all fully contained Gaussian windows.
inline double ssim(const Image& test, const Image& ref, std::optional<double> data_range = std::nullopt,
                   const SsimOptions& opt = {}) {
  check_pair(test, ref);
  const std::size_t W = opt.window;
  const std::size_t nx = ref.grid.nx, ny = ref.grid.ny;
  if (nx < W || ny < W) throw InputError("SSIM needs images at least as large as the window");
  const double range = data_range.value_or(default_data_range(ref.values));
  if (!(range > 0.0)) throw ParameterError("data_range must be positive");
  const double c1 = (opt.k1 * range) * (opt.k1 * range);
  const double c2 = (opt.k2 * range) * (opt.k2 * range);

  Vec kern(W * W);
  const double half = 0.5 * static_cast<double>(W - 1);
  double ksum = 0.0;
  for (std::size_t a = 0; a < W; ++a)
    for (std::size_t b = 0; b < W; ++b) {
      const double dy = static_cast<double>(a) - half, dx = static_cast<double>(b) - half;
      kern[a * W + b] = std::exp(-(dx * dx + dy * dy) / (2.0 * opt.sigma * opt.sigma));
      ksum += kern[a * W + b];
    }
  for (double& k : kern) k /= ksum;

  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + W <= ny; ++y0) {
    for (std::size_t x0 = 0; x0 + W <= nx; ++x0) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t a = 0; a < W; ++a)
        for (std::size_t b = 0; b < W; ++b) {
          const double w = kern[a * W + b];
          const double u = test.values[(y0 + a) * nx + x0 + b];
          const double v = ref.values[(y0 + a) * nx + x0 + b];
          mx += w * u;
          my += w * v;
          sxx += w * u * u;
          syy += w * v * v;
          sxy += w * u * v;
        }
      sxx -= mx * mx;
      syy -= my * my;
      sxy -= mx * my;
      total += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

struct MetricReport {
  double psnr_db = 0.0;  // +inf for identical images
  double ssim = 0.0;
  std::optional<double> loss;
  double data_range = 1.0;

  bool identical() const { return std::isinf(psnr_db); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    if (identical())
      j["psnr_db"] = "inf";
    else
      j["psnr_db"] = psnr_db;
    j["ssim"] = ssim;
    j["data_range"] = data_range;
    if (loss) j["loss"] = *loss;
    return j;
  }
};

inline MetricReport compare(const Image& test, const Image& ref, std::optional<double> data_range = std::nullopt) {
  MetricReport r;
  r.data_range = data_range.value_or(default_data_range(ref.values));
  r.psnr_db = psnr(test, ref, r.data_range);
  r.ssim = ssim(test, ref, r.data_range);
  return r;
}

/// |x - x_true|^2 + |z - A x_true|^2 + mu (1 - SSIM(x, x_true)).
inline double evaluate_loss(const DualState& recon, const Image& truth, const Projector& projector,
                            double mu = 0.01, std::optional<double> data_range = std::nullopt) {
  check_pair(recon.x, truth);
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw ParameterError("mu must be non-negative");
  const Sinogram ax = projector.forward(truth);
  if (!recon.z.same_layout(ax)) throw InputError("reconstructed sinogram must be full-view and match geometry");
  return squared_distance(recon.x.values, truth.values) + squared_distance(recon.z.values, ax.values) +
         mu * (1.0 - ssim(recon.x, truth, data_range));
}

inline double evaluate_loss(const DualState& recon, const Image& truth, const ScanGeometry& geo, double mu = 0.01,
                            std::optional<double> data_range = std::nullopt) {
  return evaluate_loss(recon, truth, Projector(geo), mu, data_range);
}

}  // namespace lama
