#pragma once

// Composite l2,1 regularizer r(y) = || g(y) ||_{2,1} where g is a small
// convolutional feature extractor, together with its Huber-smoothed surrogate
// r_eps and the gradient of r_eps obtained by a manual reverse pass through g.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lama/core.hpp"
#include "lama/tomo.hpp"

namespace lama {

/// Smoothed ReLU: 0 below -delta, t above delta, and the C1 quadratic
/// (t + delta)^2 / (4 delta) in between.
inline double smoothed_relu(double t, double delta) {
  if (t <= -delta) return 0.0;
  if (t >= delta) return t;
  const double u = t + delta;
  return u * u / (4.0 * delta);
}

inline double smoothed_relu_deriv(double t, double delta) {
  if (t <= -delta) return 0.0;
  if (t >= delta) return 1.0;
  return (t + delta) / (2.0 * delta);
}

enum class Padding : std::uint32_t { zero = 0, replicate = 1 };

enum class Domain { image, sinogram };

struct ConvLayer {
  std::size_t kh = 3;
  std::size_t kw = 3;
  std::size_t cin = 1;
  std::size_t cout = 1;
  Vec weights;  // (out-channel, in-channel, ky, kx), row-major

  ConvLayer() = default;
  ConvLayer(std::size_t kh_, std::size_t kw_, std::size_t cin_, std::size_t cout_)
      : kh(kh_), kw(kw_), cin(cin_), cout(cout_), weights(kh_ * kw_ * cin_ * cout_, 0.0) {}

  double& w(std::size_t o, std::size_t c, std::size_t ky, std::size_t kx) {
    return weights[((o * cin + c) * kh + ky) * kw + kx];
  }
  double w(std::size_t o, std::size_t c, std::size_t ky, std::size_t kx) const {
    return weights[((o * cin + c) * kh + ky) * kw + kx];
  }

  bool operator==(const ConvLayer&) const = default;
};

/// Convolution stack without biases: conv, activation, conv, ..., conv.
struct ConvStack {
  std::vector<ConvLayer> layers;
  double activation_delta = 0.01;
  Padding padding = Padding::zero;

  std::size_t out_channels() const { return layers.empty() ? 0 : layers.back().cout; }

  void validate() const {
    if (layers.empty()) throw ConfigError("conv stack has no layers");
    if (!(activation_delta > 0.0) || !std::isfinite(activation_delta))
      throw ConfigError("activation delta must be positive");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      if (L.kh % 2 == 0 || L.kw % 2 == 0) throw ConfigError("kernel dimensions must be odd");
      if (L.cin < 1 || L.cout < 1) throw ConfigError("layer channel counts must be positive");
      if (L.weights.size() != L.kh * L.kw * L.cin * L.cout)
        throw ConfigError("layer weight count does not match its dimensions");
      const std::size_t expected_in = l == 0 ? 1 : layers[l - 1].cout;
      if (L.cin != expected_in) throw ConfigError("layer channel counts do not chain");
      if (!all_finite(L.weights)) throw ConfigError("layer weights must be finite");
    }
  }

  bool all_zero() const {
    for (const auto& L : layers)
      for (double v : L.weights)
        if (v != 0.0) return false;
    return true;
  }

  bool operator==(const ConvStack&) const = default;
};

/// g(y): one d-vector per spatial site, stored (site, channel).
struct FeatureField {
  std::size_t sites = 0;
  std::size_t channels = 0;
  Vec values;

  std::span<const double> site(std::size_t i) const { return {values.data() + i * channels, channels}; }
  std::span<double> site(std::size_t i) { return {values.data() + i * channels, channels}; }
};

/// Borrowed 2-D scalar field: images are (ny, nx), sinograms (rows, n_dets).
struct FieldView {
  std::size_t h = 0;
  std::size_t w = 0;
  std::span<const double> values;
};

inline FieldView field_of(const Image& img) { return {img.grid.ny, img.grid.nx, img.values}; }
inline FieldView field_of(const Sinogram& s) { return {s.n_rows(), s.n_dets, s.values}; }

namespace detail {

// out[o] (+)= sum_c w[o, c] (*) in[c], planes are (channel, h, w).
inline void conv_forward(const ConvLayer& L, Padding pad, std::size_t h, std::size_t w,
                         std::span<const double> in, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  const auto H = static_cast<std::ptrdiff_t>(h);
  const auto W = static_cast<std::ptrdiff_t>(w);
  const auto ph = static_cast<std::ptrdiff_t>(L.kh / 2);
  const auto pw = static_cast<std::ptrdiff_t>(L.kw / 2);
  for (std::size_t o = 0; o < L.cout; ++o) {
    double* dst = out.data() + o * h * w;
    for (std::size_t c = 0; c < L.cin; ++c) {
      const double* src = in.data() + c * h * w;
      for (std::size_t ky = 0; ky < L.kh; ++ky) {
        for (std::size_t kx = 0; kx < L.kw; ++kx) {
          const double wt = L.w(o, c, ky, kx);
          if (wt == 0.0) continue;
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
          for (std::ptrdiff_t y = 0; y < H; ++y) {
            std::ptrdiff_t sy = y + dy;
            if (sy < 0 || sy >= H) {
              if (pad == Padding::zero) continue;
              sy = std::clamp<std::ptrdiff_t>(sy, 0, H - 1);
            }
            const double* srow = src + sy * W;
            double* drow = dst + y * W;
            if (pad == Padding::zero) {
              const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
              const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - dx);
              for (std::ptrdiff_t x = x0; x < x1; ++x) drow[x] += wt * srow[x + dx];
            } else {
              for (std::ptrdiff_t x = 0; x < W; ++x)
                drow[x] += wt * srow[std::clamp<std::ptrdiff_t>(x + dx, 0, W - 1)];
            }
          }
        }
      }
    }
  }
}

// Adjoint of conv_forward with respect to its input.
inline void conv_transpose(const ConvLayer& L, Padding pad, std::size_t h, std::size_t w,
                           std::span<const double> grad_out, std::span<double> grad_in) {
  std::fill(grad_in.begin(), grad_in.end(), 0.0);
  const auto H = static_cast<std::ptrdiff_t>(h);
  const auto W = static_cast<std::ptrdiff_t>(w);
  const auto ph = static_cast<std::ptrdiff_t>(L.kh / 2);
  const auto pw = static_cast<std::ptrdiff_t>(L.kw / 2);
  for (std::size_t o = 0; o < L.cout; ++o) {
    const double* go = grad_out.data() + o * h * w;
    for (std::size_t c = 0; c < L.cin; ++c) {
      double* gi = grad_in.data() + c * h * w;
      for (std::size_t ky = 0; ky < L.kh; ++ky) {
        for (std::size_t kx = 0; kx < L.kw; ++kx) {
          const double wt = L.w(o, c, ky, kx);
          if (wt == 0.0) continue;
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
          for (std::ptrdiff_t y = 0; y < H; ++y) {
            std::ptrdiff_t sy = y + dy;
            if (sy < 0 || sy >= H) {
              if (pad == Padding::zero) continue;
              sy = std::clamp<std::ptrdiff_t>(sy, 0, H - 1);
            }
            double* irow = gi + sy * W;
            const double* orow = go + y * W;
            if (pad == Padding::zero) {
              const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
              const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - dx);
              for (std::ptrdiff_t x = x0; x < x1; ++x) irow[x + dx] += wt * orow[x];
            } else {
              for (std::ptrdiff_t x = 0; x < W; ++x)
                irow[std::clamp<std::ptrdiff_t>(x + dx, 0, W - 1)] += wt * orow[x];
            }
          }
        }
      }
    }
  }
}

inline void planes_to_sites(std::span<const double> planes, std::size_t channels, std::size_t sites,
                            std::span<double> out) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < sites; ++i) out[i * channels + c] = planes[c * sites + i];
}

inline void sites_to_planes(std::span<const double> sitewise, std::size_t channels, std::size_t sites,
                            std::span<double> out) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < sites; ++i) out[c * sites + i] = sitewise[i * channels + c];
}

}  // namespace detail

/// Forward pass with every pre-activation kept for the reverse pass.
struct FeatureTrace {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<Vec> pre;  // pre-activation planes of each layer
  FeatureField features;
};

inline FeatureTrace feature_forward(FieldView y, const ConvStack& theta) {
  theta.validate();
  if (y.values.size() != y.h * y.w) throw InputError("field value count does not match its shape");
  const std::size_t m = y.h * y.w;
  FeatureTrace tr;
  tr.h = y.h;
  tr.w = y.w;
  Vec act(y.values.begin(), y.values.end());
  for (std::size_t l = 0; l < theta.layers.size(); ++l) {
    const auto& L = theta.layers[l];
    Vec pre(L.cout * m);
    detail::conv_forward(L, theta.padding, y.h, y.w, act, pre);
    if (l + 1 < theta.layers.size()) {
      act.resize(pre.size());
      for (std::size_t k = 0; k < pre.size(); ++k) act[k] = smoothed_relu(pre[k], theta.activation_delta);
    }
    tr.pre.push_back(std::move(pre));
  }
  const std::size_t d = theta.out_channels();
  tr.features.sites = m;
  tr.features.channels = d;
  tr.features.values.resize(m * d);
  detail::planes_to_sites(tr.pre.back(), d, m, tr.features.values);
  return tr;
}

/// Jacobian-transpose of g at the traced point applied to a (site, channel) cotangent.
inline Vec feature_vjp(const FeatureTrace& tr, const ConvStack& theta, const FeatureField& cotangent) {
  const std::size_t m = tr.h * tr.w;
  if (cotangent.sites != m || cotangent.channels != theta.out_channels() ||
      cotangent.values.size() != m * cotangent.channels)
    throw InputError("cotangent shape does not match the feature field");
  Vec g(cotangent.values.size());
  detail::sites_to_planes(cotangent.values, cotangent.channels, m, g);
  for (std::size_t l = theta.layers.size(); l-- > 0;) {
    const auto& L = theta.layers[l];
    if (l + 1 < theta.layers.size()) {
      const Vec& pre = tr.pre[l];
      for (std::size_t k = 0; k < g.size(); ++k) g[k] *= smoothed_relu_deriv(pre[k], theta.activation_delta);
    }
    Vec gin(L.cin * m);
    detail::conv_transpose(L, theta.padding, tr.h, tr.w, g, gin);
    g.swap(gin);
  }
  return g;
}

inline Vec feature_vjp(FieldView y, const ConvStack& theta, const FeatureField& cotangent) {
  return feature_vjp(feature_forward(y, theta), theta, cotangent);
}

/// Directional derivative of g at the traced point along `tangent`.
inline FeatureField feature_jvp(const FeatureTrace& tr, const ConvStack& theta, std::span<const double> tangent) {
  const std::size_t m = tr.h * tr.w;
  if (tangent.size() != m) throw InputError("tangent shape does not match the input field");
  Vec t(tangent.begin(), tangent.end());
  for (std::size_t l = 0; l < theta.layers.size(); ++l) {
    const auto& L = theta.layers[l];
    Vec out(L.cout * m);
    detail::conv_forward(L, theta.padding, tr.h, tr.w, t, out);
    if (l + 1 < theta.layers.size()) {
      const Vec& pre = tr.pre[l];
      for (std::size_t k = 0; k < out.size(); ++k) out[k] *= smoothed_relu_deriv(pre[k], theta.activation_delta);
    }
    t.swap(out);
  }
  FeatureField f;
  f.sites = m;
  f.channels = theta.out_channels();
  f.values.resize(m * f.channels);
  detail::planes_to_sites(t, f.channels, m, f.values);
  return f;
}

inline double l21_norm(const FeatureField& F) {
  double s = 0.0;
  for (std::size_t i = 0; i < F.sites; ++i) s += norm2(F.site(i));
  return s;
}

inline void check_eps(double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ParameterError("smoothing epsilon must be positive");
}

/// Huber-smoothed l2,1 value of a feature field. Sites with norm <= eps are
/// in the quadratic branch.
inline double huber_l21(const FeatureField& F, double eps) {
  check_eps(eps);
  double s = 0.0;
  for (std::size_t i = 0; i < F.sites; ++i) {
    const double n = norm2(F.site(i));
    s += n <= eps ? n * n / (2.0 * eps) : n - 0.5 * eps;
  }
  return s;
}

/// d huber_l21 / dF: g_i / eps on the quadratic branch, g_i / |g_i| otherwise.
inline FeatureField huber_l21_cotangent(const FeatureField& F, double eps) {
  check_eps(eps);
  FeatureField h = F;
  for (std::size_t i = 0; i < F.sites; ++i) {
    auto gi = h.site(i);
    const double n = norm2(F.site(i));
    const double s = n <= eps ? 1.0 / eps : 1.0 / n;
    for (double& v : gi) v *= s;
  }
  return h;
}

inline double smoothed_value(FieldView y, const ConvStack& theta, double eps) {
  check_eps(eps);
  return huber_l21(feature_forward(y, theta).features, eps);
}

inline Vec smoothed_grad(FieldView y, const ConvStack& theta, double eps) {
  check_eps(eps);
  const FeatureTrace tr = feature_forward(y, theta);
  return feature_vjp(tr, theta, huber_l21_cotangent(tr.features, eps));
}

struct ValueGrad {
  double value = 0.0;
  Vec grad;
};

inline ValueGrad smoothed_value_grad(FieldView y, const ConvStack& theta, double eps) {
  check_eps(eps);
  const FeatureTrace tr = feature_forward(y, theta);
  return {huber_l21(tr.features, eps), feature_vjp(tr, theta, huber_l21_cotangent(tr.features, eps))};
}

// ----------------------------------------------------------------------------
// Lipschitz estimate of grad r_eps: sqrt(m) * L_g + M^2 / eps.
// ----------------------------------------------------------------------------

struct RegLipschitz {
  double sqrt_m_lg = 0.0;  // sqrt(m) * curvature constant of g
  double m_squared = 0.0;  // sampled || dg ||^2
  double at(double eps) const {
    check_eps(eps);
    return sqrt_m_lg + m_squared / eps;
  }
};

// Schur-test bound on the operator norm of one convolution layer.
inline double conv_layer_norm_bound(const ConvLayer& L) {
  std::vector<double> row(L.cout, 0.0), col(L.cin, 0.0);
  for (std::size_t o = 0; o < L.cout; ++o)
    for (std::size_t c = 0; c < L.cin; ++c)
      for (std::size_t ky = 0; ky < L.kh; ++ky)
        for (std::size_t kx = 0; kx < L.kw; ++kx) {
          const double a = std::abs(L.w(o, c, ky, kx));
          row[o] += a;
          col[c] += a;
        }
  return std::sqrt(*std::max_element(row.begin(), row.end()) * *std::max_element(col.begin(), col.end()));
}

struct ProbeShape {
  std::size_t h = 0;
  std::size_t w = 0;
};

inline RegLipschitz lipschitz_components(const ConvStack& theta, ProbeShape probe, int iterations = 50,
                                         std::uint64_t seed = 12345) {
  theta.validate();
  const std::size_t m = probe.h * probe.w;
  if (m == 0) throw ConfigError("probe shape must be non-empty");
  RegLipschitz out;
  if (theta.layers.size() > 1) {
    double prod = 1.0;
    for (const auto& L : theta.layers) prod *= conv_layer_norm_bound(L);
    out.sqrt_m_lg = std::sqrt(static_cast<double>(m)) * prod / (2.0 * theta.activation_delta);
  }
  if (theta.all_zero()) return out;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Vec point(m), v(m);
  for (auto& p : point) p = uni(rng);
  for (auto& p : v) p = uni(rng);
  const FeatureTrace tr = feature_forward({probe.h, probe.w, point}, theta);
  double lam = 0.0;
  for (int it = 0; it < std::max(iterations, 1); ++it) {
    const double n = norm2(v);
    if (n == 0.0) break;
    for (auto& x : v) x /= n;
    const FeatureField jv = feature_jvp(tr, theta, v);
    Vec jtjv = feature_vjp(tr, theta, jv);
    lam = dot(v, jtjv);
    v.swap(jtjv);
  }
  out.m_squared = lam;
  return out;
}

inline double lipschitz_estimate(const ConvStack& theta, double eps, ProbeShape probe, int iterations = 50) {
  return lipschitz_components(theta, probe, iterations).at(eps);
}

// ----------------------------------------------------------------------------
// Weight provisioning
// ----------------------------------------------------------------------------

inline std::pair<std::size_t, std::size_t> default_kernel(Domain d) {
  return d == Domain::image ? std::pair<std::size_t, std::size_t>{3, 3} : std::pair<std::size_t, std::size_t>{3, 15};
}

/// Forward differences along the two axes of the domain (discrete gradient),
/// with replicate padding so the last row/column difference is zero.
inline ConvStack make_tv_weights(Domain domain, double weight = 1.0) {
  const auto [kh, kw] = default_kernel(domain);
  ConvLayer L(kh, kw, 1, 2);
  const std::size_t cy = kh / 2, cx = kw / 2;
  L.w(0, 0, cy, cx) = -weight;
  L.w(0, 0, cy, cx + 1) = weight;
  L.w(1, 0, cy, cx) = -weight;
  L.w(1, 0, cy + 1, cx) = weight;
  ConvStack s;
  s.layers.push_back(std::move(L));
  s.padding = Padding::replicate;
  return s;
}

/// A stack whose every weight is zero: r == 0 and grad r == 0.
inline ConvStack make_zero_weights(Domain domain) {
  const auto [kh, kw] = default_kernel(domain);
  ConvStack s;
  s.layers.emplace_back(kh, kw, 1, 1);
  return s;
}

struct RandomStackSpec {
  Domain domain = Domain::image;
  std::size_t depth = 3;
  std::size_t channels = 16;
  double gain = 1.0;  // weights ~ N(0, gain^2 / fan_in)
  double activation_delta = 0.01;
  Padding padding = Padding::zero;
};

inline ConvStack make_random_weights(std::uint64_t seed, const RandomStackSpec& spec = {}) {
  if (spec.depth < 1 || spec.channels < 1) throw ConfigError("random stack needs depth and channels >= 1");
  const auto [kh, kw] = default_kernel(spec.domain);
  std::mt19937_64 rng(seed);
  ConvStack s;
  s.activation_delta = spec.activation_delta;
  s.padding = spec.padding;
  std::size_t cin = 1;
  for (std::size_t l = 0; l < spec.depth; ++l) {
    ConvLayer L(kh, kw, cin, spec.channels);
    std::normal_distribution<double> nd(0.0, spec.gain / std::sqrt(static_cast<double>(cin * kh * kw)));
    for (double& w : L.weights) w = nd(rng);
    s.layers.push_back(std::move(L));
    cin = spec.channels;
  }
  s.validate();
  return s;
}

}  // namespace lama
