#include <algorithm>
#include <filesystem>
#include <fstream>
#include <opencv2/imgcodecs.hpp>
#include <random>
#include <set>

#include "doctest.h"
#include "micronet/dataset_io.hpp"
#include "micronet/errors.hpp"
#include "oracles.hpp"

using namespace micronet;
using namespace micronet::io;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("micronet_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ImageSample random_sample(const std::string& id, Modality m, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageSample s;
  s.id = id;
  s.modality = m;
  s.channels = Image(channel_count(m), h, w);
  for (auto& v : s.channels.data) v = u(rng);
  InstanceMask t(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) t.at(y, x) = (y / 8 + x / 8) % 3 == 0 ? 1 + (y / 8) * 40 + x / 8 : 0;
  s.truth = canonicalize(t);
  return s;
}

std::vector<std::string> ids(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("img" + std::to_string(i));
  return out;
}

}  // namespace

TEST_CASE("save and load round-trip within one 16-bit step") {
  TempDir dir("roundtrip");
  for (Modality m : {Modality::fluorescence, Modality::he_rgb}) {
    const auto s = random_sample(m == Modality::he_rgb ? "he" : "fl", m, 37, 53, 3);
    const fs::path p = save_sample(s, dir.path);
    const auto back = load_sample(p, m, Scaling::native);
    CHECK(back.id == s.id);
    CHECK(back.channels.channels == s.channels.channels);
    double worst = 0.0;
    for (std::size_t i = 0; i < s.channels.data.size(); ++i)
      worst = std::max(worst, std::abs(back.channels.data[i] - s.channels.data[i]));
    CHECK(worst <= 1.0 / 65535.0);
    REQUIRE(back.truth);
    CHECK(*back.truth == *s.truth);
  }
}

TEST_CASE("a 2048 fluorescence pair loads as C=2") {
  TempDir dir("large");
  const auto s = random_sample("big", Modality::fluorescence, 2048, 2048, 1);
  const auto back = load_sample(save_sample(s, dir.path), Modality::fluorescence);
  CHECK(back.channels.channels == 2);
  CHECK(back.channels.height == 2048);
  CHECK(back.channels.width == 2048);
  CHECK(back.modality == Modality::fluorescence);
}

TEST_CASE("fluorescence is min-max scaled per channel by default") {
  TempDir dir("minmax");
  auto s = random_sample("mm", Modality::fluorescence, 20, 20, 2);
  for (double& v : s.channels.data) v = 0.25 + 0.5 * v;
  const auto back = load_sample(save_sample(s, dir.path), Modality::fluorescence);
  for (int c = 0; c < 2; ++c) {
    const double* p = back.channels.plane(c);
    CHECK(*std::min_element(p, p + 400) == 0.0);
    CHECK(*std::max_element(p, p + 400) == 1.0);
  }
}

TEST_CASE("all-zero truth is all background") {
  TempDir dir("zero");
  auto s = random_sample("rgb", Modality::he_rgb, 16, 16, 4);
  s.truth = InstanceMask(16, 16);
  const auto back = load_sample(save_sample(s, dir.path), Modality::he_rgb);
  REQUIRE(back.truth);
  CHECK(back.truth->max_label() == 0);
}

TEST_CASE("8-bit labels {0,3,7} become {0,1,2}") {
  TempDir dir("labels8");
  cv::Mat m(6, 6, CV_8U, cv::Scalar(0));
  m(cv::Rect(0, 0, 2, 2)).setTo(3);
  m(cv::Rect(3, 3, 3, 2)).setTo(7);
  REQUIRE(cv::imwrite((dir.path / "x_mask.png").string(), m));
  cv::Mat img(6, 6, CV_16UC3, cv::Scalar(100, 200, 300));
  img.at<cv::Vec3w>(0, 0) = cv::Vec3w(1, 2, 3);
  REQUIRE(cv::imwrite((dir.path / "x.png").string(), img));
  const auto s = load_sample(dir.path / "x.png", Modality::he_rgb);
  REQUIRE(s.truth);
  // Oracle: sorted distinct positive labels map to 1..K.
  std::set<int> raw;
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x)
      if (m.at<std::uint8_t>(y, x)) raw.insert(m.at<std::uint8_t>(y, x));
  std::map<int, int> rank;
  for (int v : raw) rank[v] = static_cast<int>(rank.size()) + 1;
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      const int v = m.at<std::uint8_t>(y, x);
      CHECK(s.truth->at(y, x) == (v ? rank[v] : 0));
    }
}

TEST_CASE("load errors") {
  TempDir dir("errors");
  CHECK_THROWS_AS(load_sample(dir.path / "missing.tif", Modality::fluorescence), IoError);
  const auto s = random_sample("fl", Modality::fluorescence, 8, 8, 1);
  const auto p = save_sample(s, dir.path);
  CHECK_THROWS_AS(load_sample(p, Modality::he_rgb), ShapeError);
  cv::imwrite((dir.path / "bad_mask.png").string(), cv::Mat(5, 5, CV_16U, cv::Scalar(1)));
  cv::imwrite((dir.path / "bad.png").string(), cv::Mat(6, 6, CV_16UC3, cv::Scalar(1, 2, 3)));
  CHECK_THROWS_AS(load_sample(dir.path / "bad.png", Modality::he_rgb), ShapeError);
}

TEST_CASE("labels above 16 bits are refused") {
  TempDir dir("big_labels");
  InstanceMask m(2, 2);
  m.at(0, 0) = 70000;
  CHECK_THROWS_AS(write_labels(m, dir.path / "m.png"), IoError);
  m.at(0, 0) = 65535;
  write_labels(m, dir.path / "m.png");
  CHECK(read_labels(dir.path / "m.png").at(0, 0) == 65535);
}

TEST_CASE("split examples") {
  const auto a = make_split(ids(10), 0.2, 7);
  CHECK(a.train.size() == 8);
  CHECK(a.validation.size() == 2);
  for (const auto& v : a.validation) CHECK(std::find(a.train.begin(), a.train.end(), v) == a.train.end());
  const auto b = make_split(ids(10), 0.2, 7);
  CHECK(a.train == b.train);
  CHECK(a.validation == b.validation);
  const auto z = make_split(ids(5), 0.0, 1);
  CHECK(z.train == ids(5));
  CHECK(z.validation.empty());
  CHECK_THROWS_AS(make_split(ids(3), 1.0, 1), InvalidArgument);
  CHECK_THROWS_AS(make_split({"a", "a"}, 0.5, 1), InvalidArgument);
}

TEST_CASE("splits partition their input") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 40);
    const double f = static_cast<double>(rng() % 90) / 100.0;
    const auto s = make_split(ids(n), f, rng());
    std::multiset<std::string> all(s.train.begin(), s.train.end());
    all.insert(s.validation.begin(), s.validation.end());
    const auto input = ids(n);
    CHECK(all == std::multiset<std::string>(input.begin(), input.end()));
  }
}

TEST_CASE("synthetic data") {
  SynthOptions o;
  o.seed = 12;
  const auto a = synth_dataset(o);
  const auto b = synth_dataset(o);
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].channels == b[i].channels);
    CHECK(*a[i].truth == *b[i].truth);
    CHECK(is_canonical(*a[i].truth));
    CHECK(a[i].truth->max_label() > 5);
    CHECK_NOTHROW(a[i].validate());
  }
  CHECK(a[0].id == "synth_000");
  o.seed = 13;
  CHECK(synth_dataset(o)[0].channels != a[0].channels);
}

TEST_CASE("synthetic single object") {
  SynthOptions o;
  o.n_images = 1;
  o.density = 1e-9;
  o.min_objects = 1;
  const auto s = synth_dataset(o);
  REQUIRE(s.size() == 1);
  CHECK(s[0].truth->max_label() == 1);
}

TEST_CASE("synthetic membrane is brighter on object rims") {
  SynthOptions o;
  o.seed = 3;
  const auto s = synth_dataset(o)[0];
  const InstanceMask& t = *s.truth;
  double rim = 0.0, rest = 0.0;
  int n_rim = 0, n_rest = 0;
  for (int y = 1; y < t.height - 1; ++y)
    for (int x = 1; x < t.width - 1; ++x) {
      const int v = t.at(y, x);
      const bool edge = v > 0 && (t.at(y - 1, x) != v || t.at(y + 1, x) != v || t.at(y, x - 1) != v || t.at(y, x + 1) != v);
      (edge ? rim : rest) += s.channels.at(0, y, x);
      (edge ? n_rim : n_rest) += 1;
    }
  CHECK(rim / n_rim > rest / n_rest);
}

TEST_CASE("infeasible density is reported") {
  SynthOptions o;
  o.density = 1.0;
  CHECK_THROWS_WITH_AS(synth_dataset(o), doctest::Contains("infeasible"), Error);
  o.density = 0.0;
  CHECK_THROWS_AS(synth_dataset(o), InvalidArgument);
}

TEST_CASE("manifest round trip") {
  TempDir dir("manifest");
  SynthOptions o;
  o.n_images = 3;
  o.size = 64;
  o.density = 0.2;
  Manifest m;
  m.modality = Modality::fluorescence;
  const char* splits[] = {"train", "validation", "test"};
  int i = 0;
  for (const auto& s : synth_dataset(o)) {
    const auto p = save_sample(s, dir.path / "data");
    m.entries.push_back({s.id, p, splits[i++]});
  }
  write_manifest(m, dir.path / "manifest.ini");
  const Manifest back = read_manifest(dir.path / "manifest.ini");
  CHECK(back.modality == Modality::fluorescence);
  REQUIRE(back.entries.size() == 3);
  CHECK(fs::equivalent(back.entry("synth_001").image, m.entries[1].image));
  const auto split = back.split();
  CHECK(split.train == std::vector<std::string>{"synth_000"});
  CHECK(split.validation == std::vector<std::string>{"synth_001"});
  CHECK(split.test == std::vector<std::string>{"synth_002"});
  CHECK_THROWS_AS(back.entry("nope"), InvalidArgument);

  std::ofstream(dir.path / "bad.ini") << "[dataset]\nmodality = fluorescence\n[images]\na = x.tif\n[split]\na = holdout\n";
  CHECK_THROWS_AS(read_manifest(dir.path / "bad.ini").split(), InvalidArgument);
  std::ofstream(dir.path / "empty.ini") << "[dataset]\nmodality = fluorescence\n";
  CHECK_THROWS_AS(read_manifest(dir.path / "empty.ini"), IoError);
}
