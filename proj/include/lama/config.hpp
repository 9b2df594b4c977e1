#pragma once

// Run configuration: one JSON tree holding geometry, phantom, noise, view
// mask, regularizer sources, solver parameters and the output directory.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lama/io.hpp"
#include "lama/regularizer.hpp"
#include "lama/simdata.hpp"
#include "lama/solver.hpp"
#include "lama/tomo.hpp"

namespace lama {

inline constexpr const char* kVersion = "0.1.0";

enum class WeightSourceKind { tv, zero, random, file };

struct WeightSource {
  WeightSourceKind kind = WeightSourceKind::tv;
  double weight = 1.0;  // tv
  std::uint64_t seed = 0;  // random
  std::size_t depth = 3;
  std::size_t channels = 16;
  double gain = 1.0;
  double activation_delta = 0.01;
  Padding padding = Padding::zero;
  std::string path;  // file
};

struct RunConfig {
  ScanGeometry geometry;
  PhantomSpec phantom;
  NoiseSpec noise;
  std::vector<std::size_t> views;  // selected view indices
  double lambda = 10.0;
  WeightSource image_weights;
  WeightSource sino_weights;
  SolverParams solver;
  FbpWindow fbp_window = FbpWindow::ram_lak;
  Execution execution = Execution::sequential;
  std::filesystem::path output_dir = "lama_out";
  nlohmann::json resolved;  // the tree the config was built from

  ViewMask mask() const { return {geometry.n_views_full(), views}; }
};

namespace config_detail {

using nlohmann::json;

inline void allow_keys(const json& j, const char* section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be an object");
  const std::set<std::string> ok(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + section);
}

template <typename T>
T get(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

inline PhantomSpec phantom_from_json(const json& j, const GridSpec& grid) {
  allow_keys(j, "phantom", {"kind", "disk_radius", "disk_intensity", "ellipses"});
  PhantomSpec p;
  p.grid = grid;
  const auto kind = get<std::string>(j, "kind", "shepp_logan_modified");
  if (kind == "shepp_logan_modified" || kind == "shepp_logan")
    p.kind = PhantomKind::shepp_logan_modified;
  else if (kind == "disk")
    p.kind = PhantomKind::disk;
  else if (kind == "ellipses")
    p.kind = PhantomKind::custom_ellipses;
  else
    throw ConfigError("unknown phantom kind '" + kind + "'");
  p.disk_radius = get(j, "disk_radius", p.disk_radius);
  p.disk_intensity = get(j, "disk_intensity", p.disk_intensity);
  if (j.contains("ellipses")) {
    for (const auto& e : j.at("ellipses")) {
      allow_keys(e, "ellipse", {"center", "axes", "angle_deg", "intensity"});
      try {
        Ellipse el;
        el.cx = e.at("center").at(0).get<double>();
        el.cy = e.at("center").at(1).get<double>();
        el.a = e.at("axes").at(0).get<double>();
        el.b = e.at("axes").at(1).get<double>();
        el.angle_deg = e.value("angle_deg", 0.0);
        el.intensity = e.value("intensity", 1.0);
        p.ellipses.push_back(el);
      } catch (const json::exception& ex) {
        throw ConfigError(std::string("ellipse: ") + ex.what());
      }
    }
  }
  p.validate();
  return p;
}

inline NoiseSpec noise_from_json(const json& j) {
  allow_keys(j, "noise", {"model", "sigma", "incident_photons", "seed"});
  NoiseSpec n;
  const auto model = get<std::string>(j, "model", "none");
  if (model == "none")
    n.model = NoiseModel::none;
  else if (model == "gaussian")
    n.model = NoiseModel::gaussian;
  else if (model == "poisson")
    n.model = NoiseModel::poisson_transmission;
  else
    throw ConfigError("unknown noise model '" + model + "'");
  n.sigma = get(j, "sigma", n.sigma);
  n.incident_photons = get(j, "incident_photons", n.incident_photons);
  n.seed = get(j, "seed", n.seed);
  n.validate();
  return n;
}

inline Padding padding_from_string(const std::string& s) {
  if (s == "zero") return Padding::zero;
  if (s == "replicate") return Padding::replicate;
  throw ConfigError("unknown padding '" + s + "'");
}

inline WeightSource weights_from_json(const json& j, const char* section) {
  allow_keys(j, section,
             {"source", "weight", "seed", "depth", "channels", "gain", "activation_delta", "padding", "path"});
  WeightSource w;
  const auto src = get<std::string>(j, "source", "tv");
  if (src == "tv")
    w.kind = WeightSourceKind::tv;
  else if (src == "zero")
    w.kind = WeightSourceKind::zero;
  else if (src == "random")
    w.kind = WeightSourceKind::random;
  else if (src == "file")
    w.kind = WeightSourceKind::file;
  else
    throw ConfigError("unknown weight source '" + src + "'");
  w.weight = get(j, "weight", w.weight);
  w.seed = get(j, "seed", w.seed);
  w.depth = get(j, "depth", w.depth);
  w.channels = get(j, "channels", w.channels);
  w.gain = get(j, "gain", w.gain);
  w.activation_delta = get(j, "activation_delta", w.activation_delta);
  w.padding = padding_from_string(get<std::string>(j, "padding", "zero"));
  w.path = get<std::string>(j, "path", "");
  if (!std::isfinite(w.weight)) throw ParameterError("tv weight must be finite");
  if (w.kind == WeightSourceKind::file) {
    if (w.path.empty()) throw ConfigError(std::string(section) + ": file source needs a path");
    if (!std::filesystem::exists(w.path)) throw IoError("weights file not found: " + w.path);
  }
  return w;
}

inline SolverParams solver_from_json(const json& j) {
  allow_keys(j, "solver",
             {"alpha", "beta", "alpha_hat", "beta_hat", "alpha_bar0", "beta_bar0", "rho", "delta", "eta", "eps0",
              "gamma", "sigma", "eps_tol", "max_iters", "max_backtracks", "mode", "phases",
              "lipschitz_iterations"});
  SolverParams p;
  auto opt = [&](const char* key, std::optional<double>& dst) {
    if (j.contains(key) && !j.at(key).is_null()) dst = get(j, key, 0.0);
  };
  opt("alpha", p.alpha);
  opt("beta", p.beta);
  opt("alpha_hat", p.alpha_hat);
  opt("beta_hat", p.beta_hat);
  p.alpha_bar0 = get(j, "alpha_bar0", p.alpha_bar0);
  p.beta_bar0 = get(j, "beta_bar0", p.beta_bar0);
  p.rho = get(j, "rho", p.rho);
  p.delta = get(j, "delta", p.delta);
  p.eta = get(j, "eta", p.eta);
  p.eps0 = get(j, "eps0", p.eps0);
  p.gamma = get(j, "gamma", p.gamma);
  p.sigma = get(j, "sigma", p.sigma);
  p.eps_tol = get(j, "eps_tol", p.eps_tol);
  p.max_iters = get(j, "max_iters", p.max_iters);
  p.max_backtracks = get(j, "max_backtracks", p.max_backtracks);
  const auto mode = get<std::string>(j, "mode", "converge");
  if (mode == "converge")
    p.mode = SolverMode::converge;
  else if (mode == "phases")
    p.mode = SolverMode::phases;
  else
    throw ConfigError("unknown solver mode '" + mode + "'");
  p.phases = get(j, "phases", p.phases);
  p.lipschitz_iterations = get(j, "lipschitz_iterations", p.lipschitz_iterations);
  p.validate();
  return p;
}

}  // namespace config_detail

/// Builds a RunConfig from a JSON tree. Unknown keys are rejected.
inline RunConfig config_from_json(const nlohmann::json& j) {
  using namespace config_detail;
  allow_keys(j, "config",
             {"geometry", "phantom", "noise", "mask", "lambda", "regularizer", "solver", "fbp", "execution",
              "output_dir"});
  if (!j.contains("geometry")) throw ConfigError("config has no geometry section");
  RunConfig c;
  c.resolved = j;
  c.geometry = io::geometry_from_json(j.at("geometry"));
  c.phantom = phantom_from_json(j.value("phantom", nlohmann::json::object()), c.geometry.grid);
  c.noise = noise_from_json(j.value("noise", nlohmann::json::object()));

  const auto mask = j.value("mask", nlohmann::json::object());
  allow_keys(mask, "mask", {"n_views", "views"});
  if (mask.contains("views")) {
    c.views = get<std::vector<std::size_t>>(mask, "views", {});
  } else {
    const auto n = get<std::size_t>(mask, "n_views", c.geometry.n_views_full());
    c.views = ViewMask::uniform(c.geometry.n_views_full(), n).selected;
  }
  c.mask().validate();

  c.lambda = get(j, "lambda", c.lambda);
  if (!(c.lambda > 0.0) || !std::isfinite(c.lambda)) throw ParameterError("lambda must be positive");

  const auto reg = j.value("regularizer", nlohmann::json::object());
  allow_keys(reg, "regularizer", {"image", "sinogram"});
  c.image_weights = weights_from_json(reg.value("image", nlohmann::json::object()), "regularizer.image");
  c.sino_weights = weights_from_json(reg.value("sinogram", nlohmann::json::object()), "regularizer.sinogram");

  c.solver = solver_from_json(j.value("solver", nlohmann::json::object()));

  const auto fbp = j.value("fbp", nlohmann::json::object());
  allow_keys(fbp, "fbp", {"window"});
  const auto window = get<std::string>(fbp, "window", "ram_lak");
  if (window == "ram_lak")
    c.fbp_window = FbpWindow::ram_lak;
  else if (window == "hann")
    c.fbp_window = FbpWindow::hann;
  else
    throw ConfigError("unknown fbp window '" + window + "'");

  const auto exec = get<std::string>(j, "execution", "sequential");
  if (exec == "sequential")
    c.execution = Execution::sequential;
  else if (exec == "parallel")
    c.execution = Execution::parallel;
  else
    throw ConfigError("unknown execution mode '" + exec + "'");

  c.output_dir = get<std::string>(j, "output_dir", c.output_dir.string());
  return c;
}

/// Sets a dotted key ("solver.max_iters") in a JSON tree. The value is parsed
/// as JSON when possible and kept as a string otherwise.
inline void apply_override(nlohmann::json& j, const std::string& dotted, const std::string& value) {
  if (dotted.empty()) throw ConfigError("empty override key");
  std::string ptr;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed override key '" + dotted + "'");
    ptr += "/" + part;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  nlohmann::json v;
  try {
    v = nlohmann::json::parse(value);
  } catch (const nlohmann::json::parse_error&) {
    v = value;
  }
  try {
    j[nlohmann::json::json_pointer(ptr)] = v;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot apply override '" + dotted + "': " + e.what());
  }
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string config_hash(const nlohmann::json& resolved) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(resolved.dump())));
  return buf;
}

inline ConvStack build_weights(const WeightSource& w, Domain domain) {
  switch (w.kind) {
    case WeightSourceKind::tv:
      return make_tv_weights(domain, w.weight);
    case WeightSourceKind::zero:
      return make_zero_weights(domain);
    case WeightSourceKind::random: {
      RandomStackSpec spec;
      spec.domain = domain;
      spec.depth = w.depth;
      spec.channels = w.channels;
      spec.gain = w.gain;
      spec.activation_delta = w.activation_delta;
      spec.padding = w.padding;
      return make_random_weights(w.seed, spec);
    }
    case WeightSourceKind::file:
      return io::load_weights(w.path);
  }
  throw ConfigError("unknown weight source");
}

}  // namespace lama
