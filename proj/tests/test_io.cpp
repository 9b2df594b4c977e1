#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>

#include "support.hpp"

using namespace lama;
using namespace lama::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("lama_io_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

json base_config() {
  return json::parse(R"({
    "geometry": {"kind": "parallel", "grid": {"nx": 16}, "n_views_full": 20, "n_dets": 23},
    "mask": {"n_views": 5}
  })");
}

}  // namespace

TEST(Files, ImageRoundTrip) {
  const fs::path d = scratch_dir("image");
  std::mt19937_64 rng(1);
  GridSpec g{7, 5, 0.25, 1.5, -2.0};
  const Image img = random_image(rng, g);
  io::write_image(d / "a.f64", img);
  EXPECT_EQ(fs::file_size(d / "a.f64"), 35u * 8u);
  EXPECT_EQ(io::read_image(d / "a.f64"), img);
}

TEST(Files, SparseSinogramRoundTrip) {
  const fs::path d = scratch_dir("sino");
  std::mt19937_64 rng(2);
  const auto geo = parallel_geometry(8, 12);
  const Sinogram s = subsample_views(random_full_sinogram(rng, geo), ViewMask::uniform(12, 4));
  io::write_sinogram(d / "s.f64", s);
  EXPECT_EQ(io::read_sinogram(d / "s.f64"), s);
}

TEST(Files, TruncatedDataIsFormatError) {
  const fs::path d = scratch_dir("trunc");
  const Image img(square_grid(4));
  io::write_image(d / "a.f64", img);
  fs::resize_file(d / "a.f64", 100);
  try {
    io::read_image(d / "a.f64");
    FAIL() << "truncated file accepted";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 100u);
  }
}

TEST(Files, MissingFileIsIoError) {
  EXPECT_THROW(io::read_image(scratch_dir("missing") / "nope.f64"), IoError);
}

TEST(Files, GeometryJsonRoundTrip) {
  for (const auto& geo : {parallel_geometry(12, 9), fan_geometry(10, 14)}) {
    const ScanGeometry back = io::geometry_from_json(io::geometry_to_json(geo));
    EXPECT_EQ(back.kind, geo.kind);
    EXPECT_EQ(back.angles, geo.angles);
    EXPECT_EQ(back.n_dets, geo.n_dets);
    EXPECT_EQ(back.det_spacing, geo.det_spacing);
    EXPECT_EQ(back.grid, geo.grid);
    EXPECT_EQ(back.source_radius, geo.source_radius);
  }
}

TEST(Config, Defaults) {
  const RunConfig c = config_from_json(base_config());
  EXPECT_EQ(c.geometry.n_views_full(), 20u);
  EXPECT_EQ(c.mask(), ViewMask::uniform(20, 5));
  EXPECT_EQ(c.lambda, 10.0);
  EXPECT_EQ(c.solver.eps0, 0.1);
  EXPECT_EQ(c.image_weights.kind, WeightSourceKind::tv);
  EXPECT_EQ(c.execution, Execution::sequential);
  EXPECT_EQ(c.noise.model, NoiseModel::none);
}

TEST(Config, ShippedAcceptanceConfigParses) {
  const RunConfig c = config_from_json(io::read_json(fs::path(LAMA_CONFIG_DIR) / "shepp32.json"));
  EXPECT_EQ(c.geometry.grid.nx, 32u);
  EXPECT_EQ(c.views.size(), 30u);
  EXPECT_EQ(c.solver.max_iters, 500u);
  EXPECT_EQ(c.image_weights.weight, 0.3);
}

TEST(Config, DottedOverrides) {
  json j = base_config();
  apply_override(j, "solver.max_iters", "7");
  apply_override(j, "solver.mode", "phases");
  apply_override(j, "regularizer.image.weight", "0.25");
  apply_override(j, "mask.views", "[0, 3, 9]");
  const RunConfig c = config_from_json(j);
  EXPECT_EQ(c.solver.max_iters, 7u);
  EXPECT_EQ(c.solver.mode, SolverMode::phases);
  EXPECT_EQ(c.image_weights.weight, 0.25);
  EXPECT_EQ(c.views, (std::vector<std::size_t>{0, 3, 9}));
  EXPECT_THROW(apply_override(j, "solver..rho", "0.5"), ConfigError);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  json j = base_config();
  j["solver"] = {{"max_iter", 5}};
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = base_config();
  j["bogus"] = 1;
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = base_config();
  j["lambda"] = 0.0;
  EXPECT_THROW(config_from_json(j), ParameterError);
  j = base_config();
  j["solver"] = {{"rho", 1.5}};
  EXPECT_THROW(config_from_json(j), ParameterError);
  j = base_config();
  j["mask"] = {{"views", {3, 1}}};
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = base_config();
  j["regularizer"] = {{"image", {{"source", "file"}, {"path", "/nonexistent/w.lcw"}}}};
  EXPECT_THROW(config_from_json(j), IoError);
}

TEST(Config, HashTracksContent) {
  json a = base_config(), b = base_config();
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  apply_override(b, "lambda", "5");
  EXPECT_NE(config_hash(a), config_hash(b));
  // FNV-1a reference values.
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
}

TEST(Config, BuildsEveryWeightSource) {
  const fs::path d = scratch_dir("weights");
  WeightSource w;
  w.kind = WeightSourceKind::random;
  w.depth = 2;
  w.channels = 4;
  w.seed = 9;
  const ConvStack r = build_weights(w, Domain::sinogram);
  io::save_weights(d / "w.lcw", r);
  WeightSource f;
  f.kind = WeightSourceKind::file;
  f.path = (d / "w.lcw").string();
  EXPECT_EQ(build_weights(f, Domain::sinogram), r);
  w.kind = WeightSourceKind::zero;
  EXPECT_EQ(build_weights(w, Domain::image), make_zero_weights(Domain::image));
  w.kind = WeightSourceKind::tv;
  w.weight = 0.4;
  EXPECT_EQ(build_weights(w, Domain::image), make_tv_weights(Domain::image, 0.4));
}
