#pragma once

// File formats:
//  * images and sinograms: raw little-endian float64 values plus a JSON
//    sidecar (same stem, ".json") describing shape and geometry;
//  * conv stacks: versioned binary ("LAMACONV", u32 version, u32 layer count,
//    f64 activation delta, u32 padding, per-layer u32 kh/kw/cin/cout, then all
//    weights as little-endian float64 in (out, in, ky, kx) order) plus a JSON
//    metadata sidecar;
//  * 16-bit binary PGM export for viewing.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lama/core.hpp"
#include "lama/regularizer.hpp"
#include "lama/tomo.hpp"

namespace lama::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr std::array<char, 8> kWeightsMagic{'L', 'A', 'M', 'A', 'C', 'O', 'N', 'V'};
inline constexpr std::uint32_t kWeightsVersion = 1;

// ----------------------------------------------------------------------------
// Byte-level helpers
// ----------------------------------------------------------------------------

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFFu));
}

inline void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFFu));
}

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + k])) << (8 * k);
    pos_ += 4;
    return v;
  }

  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + k])) << (8 * k);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) throw FormatError(std::string("truncated file while reading ") + what, pos_);
  }

  std::string data_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& p, const std::string& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + p.string());
}

inline json read_json(const fs::path& p) {
  const std::string text = read_file(p);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError("malformed JSON in " + p.string() + ": " + e.what(), e.byte);
  }
}

inline void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

inline fs::path sidecar_path(const fs::path& raw) {
  fs::path s = raw;
  s.replace_extension(".json");
  return s;
}

inline std::string encode_f64(std::span<const double> v) {
  std::string out;
  out.reserve(v.size() * 8);
  for (double d : v) put_f64(out, d);
  return out;
}

inline Vec decode_f64(const std::string& bytes, std::size_t expected, const fs::path& p) {
  if (bytes.size() != expected * 8)
    throw FormatError(p.string() + ": expected " + std::to_string(expected * 8) + " bytes, found " +
                          std::to_string(bytes.size()),
                      std::min(bytes.size(), expected * 8));
  ByteReader r(bytes);
  Vec v(expected);
  for (auto& d : v) d = r.f64("value");
  return v;
}

// ----------------------------------------------------------------------------
// Geometry <-> JSON
// ----------------------------------------------------------------------------

inline json grid_to_json(const GridSpec& g) {
  return {{"nx", g.nx}, {"ny", g.ny}, {"pixel_size", g.pixel_size}, {"origin", {g.origin_x, g.origin_y}}};
}

inline GridSpec grid_from_json(const json& j) {
  try {
    GridSpec g;
    g.nx = j.at("nx").get<std::size_t>();
    g.ny = j.value("ny", g.nx);
    g.pixel_size = j.value("pixel_size", 1.0);
    if (j.contains("origin")) {
      g.origin_x = j.at("origin").at(0).get<double>();
      g.origin_y = j.at("origin").at(1).get<double>();
    }
    g.validate();
    return g;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
}

inline json geometry_to_json(const ScanGeometry& geo) {
  json j{{"kind", to_string(geo.kind)},
         {"n_views_full", geo.n_views_full()},
         {"n_dets", geo.n_dets},
         {"det_spacing", geo.det_spacing},
         {"rays_per_bin", geo.rays_per_bin},
         {"angles", geo.angles},
         {"grid", grid_to_json(geo.grid)}};
  if (geo.kind == BeamKind::fan_equiangular) {
    j["source_radius"] = geo.source_radius;
    j["source_to_detector"] = geo.source_to_detector;
  }
  return j;
}

/// Geometry config: "angles" may be given explicitly; otherwise n_views_full
/// evenly spaced angles are generated over [0, pi) or [0, 2 pi).
inline ScanGeometry geometry_from_json(const json& j) {
  try {
    ScanGeometry geo;
    const std::string kind = j.value("kind", std::string("parallel"));
    if (kind == "parallel")
      geo.kind = BeamKind::parallel;
    else if (kind == "fan" || kind == "fan-equiangular")
      geo.kind = BeamKind::fan_equiangular;
    else
      throw ConfigError("unknown geometry kind '" + kind + "'");
    geo.grid = grid_from_json(j.at("grid"));
    geo.n_dets = j.at("n_dets").get<std::size_t>();
    geo.det_spacing = j.value("det_spacing", 1.0);
    geo.rays_per_bin = j.value("rays_per_bin", std::size_t{1});
    geo.source_radius = j.value("source_radius", 0.0);
    geo.source_to_detector = j.value("source_to_detector", 0.0);
    if (j.contains("angles")) {
      geo.angles = j.at("angles").get<std::vector<double>>();
      if (j.contains("n_views_full") && j.at("n_views_full").get<std::size_t>() != geo.angles.size())
        throw ConfigError("n_views_full does not match the number of angles");
    } else {
      const double span = geo.kind == BeamKind::parallel ? std::numbers::pi : 2.0 * std::numbers::pi;
      geo.angles = ScanGeometry::even_angles(j.at("n_views_full").get<std::size_t>(), span);
    }
    geo.validate();
    return geo;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("geometry: ") + e.what());
  }
}

// ----------------------------------------------------------------------------
// Images and sinograms
// ----------------------------------------------------------------------------

inline void write_image(const fs::path& raw, const Image& img) {
  write_file(raw, encode_f64(img.values));
  write_json(sidecar_path(raw), {{"type", "image"}, {"dtype", "float64-le"}, {"grid", grid_to_json(img.grid)}});
}

inline Image read_image(const fs::path& raw) {
  const json meta = read_json(sidecar_path(raw));
  if (meta.value("type", std::string()) != "image") throw FormatError(raw.string() + ": sidecar is not an image", 0);
  const GridSpec g = grid_from_json(meta.at("grid"));
  Image img(g, decode_f64(read_file(raw), g.size(), raw));
  if (!all_finite(img.values)) throw InputError(raw.string() + ": non-finite pixel values");
  return img;
}

inline void write_sinogram(const fs::path& raw, const Sinogram& s) {
  write_file(raw, encode_f64(s.values));
  write_json(sidecar_path(raw), {{"type", "sinogram"},
                                 {"dtype", "float64-le"},
                                 {"n_views_full", s.n_views_full},
                                 {"n_dets", s.n_dets},
                                 {"view_indices", s.view_indices}});
}

inline Sinogram read_sinogram(const fs::path& raw) {
  const json meta = read_json(sidecar_path(raw));
  if (meta.value("type", std::string()) != "sinogram")
    throw FormatError(raw.string() + ": sidecar is not a sinogram", 0);
  Sinogram s;
  try {
    s.n_views_full = meta.at("n_views_full").get<std::size_t>();
    s.n_dets = meta.at("n_dets").get<std::size_t>();
    s.view_indices = meta.at("view_indices").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw FormatError(raw.string() + ": bad sinogram sidecar: " + e.what(), 0);
  }
  s.values = decode_f64(read_file(raw), s.view_indices.size() * s.n_dets, raw);
  s.validate();
  return s;
}

/// 16-bit PGM, linearly mapped from [lo, hi] (defaults to the value range).
inline void write_pgm16(const fs::path& p, std::span<const double> v, std::size_t w, std::size_t h) {
  double lo = 0.0, hi = 0.0;
  if (!v.empty()) {
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    lo = *mn;
    hi = *mx;
  }
  const double span = hi > lo ? hi - lo : 1.0;
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n65535\n";
  for (double d : v) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp((d - lo) / span, 0.0, 1.0) * 65535.0));
    out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xFF));
  }
  write_file(p, out);
}

// ----------------------------------------------------------------------------
// Conv stack weights
// ----------------------------------------------------------------------------

inline std::string encode_weights(const ConvStack& s) {
  s.validate();
  std::string out(kWeightsMagic.begin(), kWeightsMagic.end());
  put_u32(out, kWeightsVersion);
  put_u32(out, static_cast<std::uint32_t>(s.layers.size()));
  put_f64(out, s.activation_delta);
  put_u32(out, static_cast<std::uint32_t>(s.padding));
  for (const auto& L : s.layers) {
    put_u32(out, static_cast<std::uint32_t>(L.kh));
    put_u32(out, static_cast<std::uint32_t>(L.kw));
    put_u32(out, static_cast<std::uint32_t>(L.cin));
    put_u32(out, static_cast<std::uint32_t>(L.cout));
  }
  for (const auto& L : s.layers)
    for (double w : L.weights) put_f64(out, w);
  return out;
}

inline ConvStack decode_weights(std::string bytes) {
  ByteReader r(std::move(bytes));
  const std::string magic = r.bytes(kWeightsMagic.size(), "magic");
  if (magic != std::string(kWeightsMagic.begin(), kWeightsMagic.end())) throw FormatError("bad weights magic", 0);
  const std::size_t version_at = r.offset();
  if (r.u32("version") != kWeightsVersion) throw FormatError("unsupported weights version", version_at);
  const std::size_t count_at = r.offset();
  const std::uint32_t n_layers = r.u32("layer count");
  if (n_layers == 0 || n_layers > 1024) throw FormatError("implausible layer count", count_at);
  ConvStack s;
  s.activation_delta = r.f64("activation delta");
  const std::size_t pad_at = r.offset();
  const std::uint32_t pad = r.u32("padding");
  if (pad > 1) throw FormatError("unknown padding mode", pad_at);
  s.padding = static_cast<Padding>(pad);
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const std::size_t at = r.offset();
    const std::size_t kh = r.u32("kernel height"), kw = r.u32("kernel width");
    const std::size_t cin = r.u32("input channels"), cout = r.u32("output channels");
    if (kh == 0 || kw == 0 || cin == 0 || cout == 0 || kh * kw * cin * cout > (std::size_t{1} << 28))
      throw FormatError("implausible layer dimensions", at);
    s.layers.emplace_back(kh, kw, cin, cout);
  }
  for (auto& L : s.layers)
    for (double& w : L.weights) w = r.f64("weights");
  if (!r.at_end()) throw FormatError("trailing bytes after weights", r.offset());
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid conv stack: ") + e.what(), r.offset());
  }
  return s;
}

inline json weights_metadata(const ConvStack& s) {
  json layers = json::array();
  for (const auto& L : s.layers)
    layers.push_back({{"kernel", {L.kh, L.kw}}, {"in_channels", L.cin}, {"out_channels", L.cout}});
  return {{"format", "LAMACONV"},
          {"version", kWeightsVersion},
          {"activation_delta", s.activation_delta},
          {"padding", s.padding == Padding::zero ? "zero" : "replicate"},
          {"weight_order", "out,in,ky,kx"},
          {"layers", layers}};
}

inline void save_weights(const fs::path& p, const ConvStack& s) {
  write_file(p, encode_weights(s));
  write_json(sidecar_path(p), weights_metadata(s));
}

inline ConvStack load_weights(const fs::path& p) { return decode_weights(read_file(p)); }

}  // namespace lama::io
