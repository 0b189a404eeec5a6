#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "micronet_cli/commands.hpp"
#include "micronet_cli/run_config.hpp"

using namespace micronet;
using namespace micronet::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("micronet_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

int invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "micronet");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run(static_cast<int>(argv.size()), argv.data());
}

int shell(const std::string& args) {
  const std::string cmd = std::string(MICRONET_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

void write_config(const fs::path& path, const fs::path& manifest) {
  std::ofstream(path) << "[run]\nseed = 4\n"
                      << "[network]\nwidth = 0.125\n"
                      << "[data]\nmanifest = " << manifest.string() << "\n"
                      << "[augment]\nenabled = false\n"
                      << "[train]\nepochs = 1\nbatch_size = 1\npatches_per_image = 1\nmax_steps = 2\n"
                      << "[postprocess]\nmin_area_px = 20\n";
}

}  // namespace

TEST_CASE("config defaults and round trip") {
  const RunConfig d = parse_config("");
  CHECK(d.variant == nn::VariantName::micronet252);
  CHECK(d.train.epochs == 25);
  CHECK(d.train.batch_size == 5);
  CHECK(d.train.base_lr == 0.001);
  CHECK(d.post.min_area_px == 100);
  CHECK(d.snr_grid == std::vector<double>{20, 15, 10, 5, 3, 1});
  CHECK(d.patch_spec().crop_size == 252);
  CHECK(d.patch_spec().sample_size == 300);

  RunConfig c;
  set_key(c, "network", "variant", "micronet508");
  set_key(c, "train", "epochs", "7");
  set_key(c, "sweep", "snr_db", "20, inf");
  set_key(c, "run", "seed", "99");
  CHECK(c.patch_spec().crop_size == 508);
  CHECK(c.patch_spec().sample_size == 600);
  const std::string ini = to_ini(c);
  CHECK(to_ini(parse_config(ini)) == ini);
  CHECK(parse_config(ini).train.epochs == 7);
  CHECK(parse_config(ini).seed == 99);
}

TEST_CASE("config rejects unknown keys and bad values together") {
  try {
    parse_config("[train]\nepochs = 3\nlearning_rate = 0.1\n[network]\nwidth = wide\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.problems().size() == 2);
  }
  std::vector<std::string> problems;
  parse_config("[bogus]\nx = 1\n", &problems);
  CHECK(problems.size() == 1);
  RunConfig c;
  CHECK_THROWS_AS(set_key(c, "train", "nope", "1"), ConfigError);
}

TEST_CASE("crop and variant must agree") {
  RunConfig c;
  c.variant = nn::VariantName::micronet252;
  c.crop_size = 508;
  CHECK_FALSE(c.problems().empty());
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.crop_size = 252;
  CHECK(c.problems().empty());
}

TEST_CASE("exit codes") {
  TempDir d("exit");
  CHECK(shell("defaults") == 0);
  CHECK(shell("") == 1);
  CHECK(shell("train --variant nonsense") == 1);
  CHECK(shell("train --out " + (d.path / "r").string()) == 1);  // no manifest
  std::ofstream(d.path / "bad.ini") << "[train]\nepochs = -1\n";
  CHECK(shell("train --config " + (d.path / "bad.ini").string()) == 1);
  CHECK(shell("predict --checkpoint " + (d.path / "missing.ckpt").string() + " --out " + (d.path / "p").string() +
              " x.tif") == 2);
}

TEST_CASE("config snapshot is written before training starts") {
  TempDir d("snapshot");
  // Valid config whose manifest has nothing to train on: fails after the snapshot.
  std::ofstream(d.path / "m.ini") << "[dataset]\nmodality = fluorescence\n[images]\na = a.tif\n[split]\na = test\n";
  std::ofstream(d.path / "c.ini") << "[data]\nmanifest = " << (d.path / "m.ini").string() << "\n";
  CHECK(invoke({"train", "--config", (d.path / "c.ini").string(), "--out", (d.path / "run").string()}) != 0);
  REQUIRE(fs::exists(d.path / "run" / "config.ini"));
  CHECK(slurp(d.path / "run" / "config.ini").find("[train]") != std::string::npos);
}

TEST_CASE("evaluate reports missing predictions by id") {
  TempDir d("eval");
  const fs::path data = d.path / "data";
  REQUIRE(invoke({"synth", "--out", data.string(), "--n", "2", "--size", "64", "--density", "0.2"}) == 0);
  fs::create_directories(d.path / "pred");
  fs::copy_file(data / "synth_000_mask.png", d.path / "pred" / "synth_000_mask.png");
  CHECK_THROWS_WITH(cmd_evaluate(d.path / "pred", data, d.path / "out"), doctest::Contains("synth_001"));
  CHECK(invoke({"evaluate", "--pred", (d.path / "pred").string(), "--truth", data.string(), "--out",
                (d.path / "out").string()}) == 1);

  fs::copy_file(data / "synth_001_mask.png", d.path / "pred" / "synth_001_mask.png");
  const auto report = cmd_evaluate(d.path / "pred", data, d.path / "out");
  CHECK(report.aggregate.dice == 1.0);
  CHECK(report.aggregate.f1 == 1.0);
  CHECK(report.aggregate.object_hausdorff.value() == 0.0);
  CHECK(fs::exists(d.path / "out" / "metrics.csv"));
}

TEST_CASE("train, predict and evaluate rerun byte-identically") {
  TempDir d("e2e");
  const fs::path data = d.path / "data";
  REQUIRE(invoke({"synth", "--out", data.string(), "--seed", "1"}) == 0);
  write_config(d.path / "run.ini", data / "manifest.ini");
  fs::create_directories(d.path / "truth");
  fs::copy_file(data / "synth_002_mask.png", d.path / "truth" / "synth_002_mask.png");

  std::vector<std::string> curves, metrics;
  for (const char* tag : {"a", "b"}) {
    const fs::path root = d.path / tag;
    REQUIRE(invoke({"train", "--config", (d.path / "run.ini").string(), "--out", (root / "train").string()}) == 0);
    const fs::path ckpt = root / "train" / "checkpoints" / "epoch_001.ckpt";
    REQUIRE(fs::exists(ckpt));
    REQUIRE(invoke({"predict", "--config", (d.path / "run.ini").string(), "--checkpoint", ckpt.string(), "--out",
                    (root / "pred").string()}) == 0);
    CHECK(fs::exists(root / "pred" / "synth_002_mask.png"));
    CHECK(fs::exists(root / "pred" / "synth_002_overlay.png"));
    REQUIRE(invoke({"evaluate", "--pred", (root / "pred").string(), "--truth", (d.path / "truth").string(), "--out",
                    (root / "eval").string()}) == 0);
    curves.push_back(slurp(root / "train" / "curves.csv"));
    metrics.push_back(slurp(root / "eval" / "metrics.csv"));
  }
  CHECK(curves[0] == curves[1]);
  CHECK(metrics[0] == metrics[1]);
  CHECK(std::count(curves[0].begin(), curves[0].end(), '\n') == 2);
}
