#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>

#include "support.hpp"

using namespace lama;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kConfig = fs::path(LAMA_CONFIG_DIR) / "shepp32.json";

struct Result {
  int code = -1;
  std::string out;
};

Result lama_cli(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / ("lama_cli_stdout_" + std::to_string(::getpid()) + ".txt");
  const std::string cmd = std::string(LAMA_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = io::read_file(log);
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("lama_cli_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(d);
  return d;
}

std::string with_config(const fs::path& out, const std::string& extra = "") {
  return "--config " + kConfig.string() + " --output_dir=" + out.string() + " " + extra;
}

}  // namespace

TEST(Cli, FullPipeline) {
  const fs::path d = fresh_dir("pipeline");
  ASSERT_EQ(lama_cli("phantom " + with_config(d)).code, 0);
  ASSERT_EQ(lama_cli("simulate " + with_config(d)).code, 0);
  ASSERT_EQ(lama_cli("init " + with_config(d)).code, 0);
  ASSERT_EQ(lama_cli("fbp " + with_config(d)).code, 0);
  const Result rec = lama_cli("reconstruct " + with_config(d, "--solver.max_iters 40"));
  ASSERT_EQ(rec.code, 0) << rec.out;
  for (const char* f : {"phantom.f64", "sino_full.f64", "sino_sparse.f64", "x0.f64", "z0.f64", "fbp.f64",
                        "x_final.f64", "z_final.f64", "log.csv", "log.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(d / f)) << f;

  const json manifest = io::read_json(d / "manifest.json");
  EXPECT_EQ(manifest.at("command"), "reconstruct");
  EXPECT_EQ(manifest.at("config_hash").get<std::string>().size(), 16u);
  EXPECT_EQ(manifest.at("config").at("solver").at("max_iters"), 40);
  EXPECT_TRUE(manifest.contains("seeds"));
  EXPECT_TRUE(manifest.contains("versions"));

  const json log = io::read_json(d / "log.json");
  EXPECT_EQ(log.at("iterations"), 40);
  EXPECT_EQ(log.at("records").size(), 40u);

  const Image truth = io::read_image(d / "phantom.f64");
  const Image x = io::read_image(d / "x_final.f64");
  EXPECT_EQ(x.grid, truth.grid);

  const Result m = lama_cli("metrics --test " + (d / "x_final.f64").string() + " --ref " +
                            (d / "phantom.f64").string() + " --sinogram " + (d / "z_final.f64").string() +
                            " --config " + kConfig.string());
  ASSERT_EQ(m.code, 0) << m.out;
  const json report = json::parse(m.out);
  EXPECT_NEAR(report.at("psnr_db").get<double>(), psnr(x, truth), 1e-9);
  EXPECT_TRUE(report.contains("loss"));
}

TEST(Cli, MetricsOfIdenticalImages) {
  const fs::path d = fresh_dir("metrics");
  ASSERT_EQ(lama_cli("phantom " + with_config(d)).code, 0);
  const std::string p = (d / "phantom.f64").string();
  const Result m = lama_cli("metrics --test " + p + " --ref " + p);
  ASSERT_EQ(m.code, 0) << m.out;
  const json report = json::parse(m.out);
  EXPECT_EQ(report.at("psnr_db"), "inf");
  EXPECT_EQ(report.at("ssim"), 1.0);
}

TEST(Cli, ZeroIterationsReturnInitialState) {
  const fs::path d = fresh_dir("zero");
  ASSERT_EQ(lama_cli("phantom " + with_config(d)).code, 0);
  ASSERT_EQ(lama_cli("simulate " + with_config(d)).code, 0);
  ASSERT_EQ(lama_cli("init " + with_config(d)).code, 0);
  ASSERT_EQ(lama_cli("reconstruct " + with_config(d, "--solver.max_iters=0")).code, 0);
  EXPECT_EQ(io::read_file(d / "x_final.f64"), io::read_file(d / "x0.f64"));
  EXPECT_EQ(io::read_file(d / "z_final.f64"), io::read_file(d / "z0.f64"));
}

TEST(Cli, RepeatedRunsAreByteIdentical) {
  std::vector<std::string> logs, images;
  for (int t = 0; t < 2; ++t) {
    const fs::path d = fresh_dir("repeat" + std::to_string(t));
    ASSERT_EQ(lama_cli("phantom " + with_config(d)).code, 0);
    ASSERT_EQ(lama_cli("simulate " + with_config(d)).code, 0);
    ASSERT_EQ(lama_cli("reconstruct " + with_config(d, "--solver.max_iters 30")).code, 0);
    logs.push_back(io::read_file(d / "log.csv"));
    images.push_back(io::read_file(d / "x_final.f64"));
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(images[0], images[1]);
}

TEST(Cli, WeightsWriteAndInspect) {
  const fs::path d = fresh_dir("weights");
  const fs::path w = d / "img.lcw";
  ASSERT_EQ(lama_cli("weights " + with_config(d, "--regularizer.image.source random --domain image -o " + w.string()))
                .code,
            0);
  const Result r = lama_cli("weights --inspect " + w.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(json::parse(r.out).at("format"), "LAMACONV");
  const fs::path bad = d / "bad.lcw";
  io::write_file(bad, "not a weights file");
  EXPECT_EQ(lama_cli("weights --inspect " + bad.string()).code, 3);
}

TEST(Cli, ExitCodes) {
  const fs::path d = fresh_dir("codes");
  EXPECT_EQ(lama_cli("").code, 2);
  EXPECT_EQ(lama_cli("reconstruct --bogus-flag").code, 2);
  EXPECT_EQ(lama_cli("phantom " + with_config(d, "--solver.rho 2")).code, 2);
  EXPECT_EQ(lama_cli("phantom " + with_config(d, "--solver.unknown 1")).code, 2);
  EXPECT_EQ(lama_cli("phantom --config " + (d / "missing.json").string()).code, 3);
  EXPECT_EQ(lama_cli("reconstruct " + with_config(d, "--sinogram " + (d / "none.f64").string())).code, 3);
  EXPECT_EQ(lama_cli("metrics --test a.f64").code, 2);
}
