#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <fftw3.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "lama/lama.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lama;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

json load_tree(const Common& c) {
  json tree = json::object();
  if (!c.config_path.empty()) {
    try {
      tree = io::read_json(c.config_path);
    } catch (const FormatError& e) {
      throw ConfigError(e.what());
    }
  }
  const auto& args = c.overrides;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + a + "'");
    std::string key = a.substr(2), value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= args.size()) throw ConfigError("option --" + key + " needs a value");
      value = args[++i];
    }
    apply_override(tree, key, value);
  }
  return tree;
}

RunConfig load_config(const Common& c) { return config_from_json(load_tree(c)); }

fs::path or_default(const std::string& given, const RunConfig& cfg, const char* name) {
  return given.empty() ? cfg.output_dir / name : fs::path(given);
}

void write_image_with_preview(const fs::path& p, const Image& img) {
  io::write_image(p, img);
  fs::path pgm = p;
  pgm.replace_extension(".pgm");
  io::write_pgm16(pgm, img.values, img.grid.nx, img.grid.ny);
}

void check_grid(const Image& img, const RunConfig& cfg, const fs::path& p) {
  if (!(img.grid == cfg.geometry.grid)) throw ConfigError(p.string() + ": image grid does not match the geometry");
}

void check_sparse(const Sinogram& s, const RunConfig& cfg, const fs::path& p) {
  if (s.n_views_full != cfg.geometry.n_views_full() || s.n_dets != cfg.geometry.n_dets)
    throw ConfigError(p.string() + ": sinogram does not match the geometry");
  if (s.view_indices != cfg.views) throw ConfigError(p.string() + ": sinogram rows do not match the view mask");
}

json weight_seed(const WeightSource& w) {
  return w.kind == WeightSourceKind::random ? json(w.seed) : json(nullptr);
}

json manifest(const RunConfig& cfg, const char* command, const json& inputs, const json& result) {
  return {{"tool", "lama"},
          {"command", command},
          {"config_hash", config_hash(cfg.resolved)},
          {"config", cfg.resolved},
          {"seeds",
           {{"noise", cfg.noise.seed},
            {"image_weights", weight_seed(cfg.image_weights)},
            {"sinogram_weights", weight_seed(cfg.sino_weights)}}},
          {"execution", cfg.execution == Execution::sequential ? "sequential" : "parallel"},
          {"versions", {{"lama", kVersion}, {"fftw", std::string(fftw_version)}, {"compiler", __VERSION__}}},
          {"inputs", inputs},
          {"result", result}};
}

int cmd_phantom(const Common& c, const std::string& out) {
  const RunConfig cfg = load_config(c);
  const fs::path p = or_default(out, cfg, "phantom.f64");
  const Image img = make_phantom(cfg.phantom);
  write_image_with_preview(p, img);
  std::cout << "phantom: " << img.grid.nx << "x" << img.grid.ny << " -> " << p.string() << "\n";
  return 0;
}

int cmd_simulate(const Common& c, const std::string& phantom_in) {
  const RunConfig cfg = load_config(c);
  const fs::path pin = or_default(phantom_in, cfg, "phantom.f64");
  const Image img = io::read_image(pin);
  check_grid(img, cfg, pin);
  const Measurement m = simulate_measurement(img, Projector(cfg.geometry, cfg.execution), cfg.mask(), cfg.noise);
  io::write_sinogram(cfg.output_dir / "sino_full.f64", m.full);
  io::write_sinogram(cfg.output_dir / "sino_sparse.f64", m.sparse);
  std::cout << "simulate: " << m.sparse.n_rows() << " of " << m.full.n_views_full << " views, " << m.full.n_dets
            << " detectors -> " << cfg.output_dir.string() << "\n";
  return 0;
}

int cmd_init(const Common& c, const std::string& sino_in) {
  const RunConfig cfg = load_config(c);
  const fs::path sp = or_default(sino_in, cfg, "sino_sparse.f64");
  const Sinogram s = io::read_sinogram(sp);
  check_sparse(s, cfg, sp);
  const DualState st = initialize(s, cfg.geometry, cfg.mask(), cfg.fbp_window);
  write_image_with_preview(cfg.output_dir / "x0.f64", st.x);
  io::write_sinogram(cfg.output_dir / "z0.f64", st.z);
  std::cout << "init: x0, z0 -> " << cfg.output_dir.string() << "\n";
  return 0;
}

int cmd_fbp(const Common& c, const std::string& sino_in, const std::string& out) {
  const RunConfig cfg = load_config(c);
  const fs::path sp = or_default(sino_in, cfg, "sino_sparse.f64");
  const fs::path op = or_default(out, cfg, "fbp.f64");
  const Sinogram s = io::read_sinogram(sp);
  if (s.n_views_full != cfg.geometry.n_views_full() || s.n_dets != cfg.geometry.n_dets)
    throw ConfigError(sp.string() + ": sinogram does not match the geometry");
  const Image img = fbp_reconstruct(s, cfg.geometry, cfg.fbp_window);
  write_image_with_preview(op, img);
  std::cout << "fbp: " << s.n_rows() << " views -> " << op.string() << "\n";
  return 0;
}

int cmd_reconstruct(const Common& c, const std::string& sino_in, const std::string& x0_in,
                    const std::string& z0_in) {
  const RunConfig cfg = load_config(c);
  const fs::path sp = or_default(sino_in, cfg, "sino_sparse.f64");
  const fs::path xp = or_default(x0_in, cfg, "x0.f64");
  const fs::path zp = or_default(z0_in, cfg, "z0.f64");
  const Sinogram s = io::read_sinogram(sp);
  check_sparse(s, cfg, sp);

  DualState init;
  json inputs{{"sinogram", sp.string()}};
  if (fs::exists(xp) || fs::exists(zp) || !x0_in.empty() || !z0_in.empty()) {
    init.x = io::read_image(xp);
    init.z = io::read_sinogram(zp);
    check_grid(init.x, cfg, xp);
    inputs["x0"] = xp.string();
    inputs["z0"] = zp.string();
  } else {
    init = initialize(s, cfg.geometry, cfg.mask(), cfg.fbp_window);
    inputs["x0"] = "computed";
    inputs["z0"] = "computed";
  }

  ProblemSpec spec;
  spec.projector = std::make_shared<Projector>(cfg.geometry, cfg.execution);
  spec.mask = cfg.mask();
  spec.s = s;
  spec.lambda = cfg.lambda;
  spec.image_reg = build_weights(cfg.image_weights, Domain::image);
  spec.sino_reg = build_weights(cfg.sino_weights, Domain::sinogram);

  const fs::path dir = cfg.output_dir;
  auto write_log = [&](const IterateLog& log) {
    io::write_file(dir / "log.csv", log.to_csv());
    io::write_json(dir / "log.json", log.to_json());
  };

  RunResult res;
  try {
    res = run(spec, init, cfg.solver);
  } catch (const SolverError& e) {
    write_log(e.log());
    io::write_json(dir / "manifest.json",
                   manifest(cfg, "reconstruct", inputs,
                            {{"status", "failed"}, {"error", e.what()}, {"iterations", e.log().records.size()}}));
    throw;
  }

  io::write_image(dir / "x_final.f64", res.state.x);
  io::write_pgm16(dir / "x_final.pgm", res.state.x.values, res.state.x.grid.nx, res.state.x.grid.ny);
  io::write_sinogram(dir / "z_final.f64", res.state.z);
  write_log(res.log);
  const double phi_final = phi_eps(res.state, spec, res.final_eps);
  io::write_json(dir / "manifest.json",
                 manifest(cfg, "reconstruct", inputs,
                          {{"status", "ok"},
                           {"iterations", res.log.records.size()},
                           {"stop_reason", res.stop_reason},
                           {"final_eps", res.final_eps},
                           {"final_phi_eps", phi_final}}));
  std::cout << "reconstruct: " << res.log.records.size() << " iterations (" << res.stop_reason
            << "), final eps " << res.final_eps << ", smoothed objective " << phi_final << " -> " << dir.string() << "\n";
  return 0;
}

int cmd_metrics(const Common& c, const std::string& test, const std::string& ref, std::optional<double> range,
                const std::string& sino, double mu, const std::string& out) {
  const Image a = io::read_image(test);
  const Image b = io::read_image(ref);
  MetricReport rep = compare(a, b, range);
  if (!sino.empty()) {
    const RunConfig cfg = load_config(c);
    DualState recon{a, io::read_sinogram(sino)};
    rep.loss = evaluate_loss(recon, b, cfg.geometry, mu, range);
  }
  const json j = rep.to_json();
  if (!out.empty()) io::write_json(out, j);
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_weights(const Common& c, const std::string& domain_name, const std::string& out,
                const std::string& inspect) {
  if (!inspect.empty()) {
    const ConvStack s = io::load_weights(inspect);
    std::cout << io::weights_metadata(s).dump() << "\n";
    return 0;
  }
  Domain domain;
  if (domain_name == "image")
    domain = Domain::image;
  else if (domain_name == "sinogram")
    domain = Domain::sinogram;
  else
    throw ConfigError("domain must be 'image' or 'sinogram'");
  const json tree = load_tree(c);
  json section = json::object();
  if (tree.contains("regularizer") && tree.at("regularizer").contains(domain_name))
    section = tree.at("regularizer").at(domain_name);
  const std::string label = "regularizer." + domain_name;
  const WeightSource src = config_detail::weights_from_json(section, label.c_str());
  const ConvStack s = build_weights(src, domain);
  const fs::path dir = tree.value("output_dir", std::string("lama_out"));
  const fs::path p = out.empty() ? dir / ("weights_" + domain_name + ".lcw") : fs::path(out);
  io::save_weights(p, s);
  std::cout << "weights: " << s.layers.size() << " layer(s), " << s.out_channels() << " feature channels -> "
            << p.string() << "\n";
  return 0;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParameterError*>(&e) ||
      dynamic_cast<const UnsupportedGeometry*>(&e))
    return 2;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const fs::filesystem_error*>(&e))
    return 3;
  return 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LAMA dual-domain sparse-view CT reconstruction"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Common common;
  std::string out, phantom_in, sino_in, x0_in, z0_in, test, ref, sino, domain = "image", inspect;
  std::optional<double> range;
  double mu = 0.01;

  auto sub = [&](const char* name, const char* desc) {
    CLI::App* s = app.add_subcommand(name, desc);
    s->add_option("--config", common.config_path, "JSON run configuration");
    s->allow_extras();
    return s;
  };

  auto* phantom = sub("phantom", "Render the configured phantom");
  phantom->add_option("-o,--out", out, "Output image path");

  auto* simulate = sub("simulate", "Project a phantom into full and sparse sinograms");
  simulate->add_option("--phantom", phantom_in, "Phantom image path");

  auto* init = sub("init", "Compute the initial image and full-view sinogram");
  init->add_option("--sinogram", sino_in, "Sparse sinogram path");

  auto* fbp = sub("fbp", "Filtered back-projection of a sinogram");
  fbp->add_option("--sinogram", sino_in, "Sinogram path");
  fbp->add_option("-o,--out", out, "Output image path");

  auto* recon = sub("reconstruct", "Run the LAMA solver");
  recon->add_option("--sinogram", sino_in, "Sparse sinogram path");
  recon->add_option("--x0", x0_in, "Initial image path");
  recon->add_option("--z0", z0_in, "Initial full-view sinogram path");

  auto* metrics = sub("metrics", "PSNR, SSIM and the dual-domain loss");
  metrics->add_option("--test", test, "Test image")->required();
  metrics->add_option("--ref", ref, "Reference image")->required();
  metrics->add_option("--data-range", range, "Intensity range (default: reference max - min)");
  metrics->add_option("--sinogram", sino, "Reconstructed full-view sinogram; enables the loss");
  metrics->add_option("--mu", mu, "SSIM weight in the loss");
  metrics->add_option("-o,--out", out, "Write the report as JSON");

  auto* weights = sub("weights", "Write or inspect a regularizer weight file");
  weights->add_option("--domain", domain, "image or sinogram");
  weights->add_option("-o,--out", out, "Output weights path");
  weights->add_option("--inspect", inspect, "Print the header of an existing weights file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    for (CLI::App* s : app.get_subcommands()) common.overrides = s->remaining();
    if (*phantom) return cmd_phantom(common, out);
    if (*simulate) return cmd_simulate(common, phantom_in);
    if (*init) return cmd_init(common, sino_in);
    if (*fbp) return cmd_fbp(common, sino_in, out);
    if (*recon) return cmd_reconstruct(common, sino_in, x0_in, z0_in);
    if (*metrics) return cmd_metrics(common, test, ref, range, sino, mu, out);
    if (*weights) return cmd_weights(common, domain, out, inspect);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  }
  return 2;
}
