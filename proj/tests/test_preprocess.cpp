#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"
#include "micronet/errors.hpp"
#include "micronet/preprocess.hpp"
#include "oracles.hpp"

using namespace micronet;
using namespace micronet::preprocess;

namespace {

// l-alpha-beta of one RGB triple, written out from the published coefficients.
std::array<double, 3> lab_of(double r, double g, double b) {
  const double L = 0.3811 * r + 0.5783 * g + 0.0402 * b;
  const double M = 0.1967 * r + 0.7244 * g + 0.0782 * b;
  const double S = 0.0241 * r + 0.1288 * g + 0.8444 * b;
  const double l = std::log10(L + 1e-6), m = std::log10(M + 1e-6), s = std::log10(S + 1e-6);
  return {(l + m + s) / std::sqrt(3.0), (l + m - 2 * s) / std::sqrt(6.0), (l - m) / std::sqrt(2.0)};
}

Image random_rgb(std::uint64_t seed, int h, int w, double lo = 0.2, double hi = 0.8) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(3, h, w);
  for (auto& v : img.data) v = u(rng);
  return img;
}

std::array<double, 6> stats(const Image& lab) {
  std::array<double, 6> out{};
  const double n = static_cast<double>(lab.plane_size());
  for (int c = 0; c < 3; ++c) {
    double s = 0.0, sq = 0.0;
    for (std::size_t p = 0; p < lab.plane_size(); ++p) s += lab.plane(c)[p];
    const double mean = s / n;
    for (std::size_t p = 0; p < lab.plane_size(); ++p) sq += (lab.plane(c)[p] - mean) * (lab.plane(c)[p] - mean);
    out[c] = mean;
    out[3 + c] = std::sqrt(sq / n);
  }
  return out;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

ImageSample sample_with_truth(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ImageSample s;
  s.id = "s";
  s.modality = Modality::fluorescence;
  s.channels = Image(2, h, w);
  for (auto& v : s.channels.data) v = static_cast<double>(rng() % 1000) / 999.0;
  s.truth = InstanceMask(h, w);
  for (auto& v : s.truth->labels) v = static_cast<std::int32_t>(rng() % 5);
  return s;
}

}  // namespace

TEST_CASE("colour transform matches the published coefficients") {
  const Image rgb = random_rgb(1, 4, 5, 0.0, 1.0);
  const Image lab = rgb_to_lab(rgb);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) {
      const auto e = lab_of(rgb.at(0, y, x), rgb.at(1, y, x), rgb.at(2, y, x));
      for (int c = 0; c < 3; ++c) CHECK(lab.at(c, y, x) == doctest::Approx(e[c]).epsilon(1e-12));
    }
  CHECK(max_abs_diff(lab_to_rgb(lab), rgb) < 1e-12);
}

TEST_CASE("two-pixel transfer lands on mean plus or minus std") {
  Image rgb(3, 1, 2);
  rgb.at(0, 0, 0) = 0.7, rgb.at(1, 0, 0) = 0.3, rgb.at(2, 0, 0) = 0.5;
  rgb.at(0, 0, 1) = 0.4, rgb.at(1, 0, 1) = 0.6, rgb.at(2, 0, 1) = 0.2;
  const StainTarget t{{-0.4, 0.05, 0.02}, {0.1, 0.03, 0.04}};
  const Image out = reinhard_transfer_lab(rgb, t);
  const auto a = lab_of(0.7, 0.3, 0.5), b = lab_of(0.4, 0.6, 0.2);
  for (int c = 0; c < 3; ++c) {
    const double sign = a[c] > b[c] ? 1.0 : -1.0;
    CHECK(out.at(c, 0, 0) == doctest::Approx(t.means[c] + sign * t.stds[c]).epsilon(1e-12));
    CHECK(out.at(c, 0, 1) == doctest::Approx(t.means[c] - sign * t.stds[c]).epsilon(1e-12));
  }
}

TEST_CASE("normalising against its own statistics is the identity") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Image rgb = random_rgb(seed, 16, 16, 0.0, 1.0);
    const StainTarget own = stain_target_from(rgb);
    CHECK(max_abs_diff(reinhard_normalize(rgb, own), rgb) < 1e-6);
  }
}

TEST_CASE("transfer matches target statistics before clipping") {
  const StainTarget t = stain_target_from(random_rgb(11, 20, 20, 0.3, 0.9));
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto s = stats(reinhard_transfer_lab(random_rgb(seed, 17, 23, 0.05, 0.6), t));
    for (int c = 0; c < 3; ++c) {
      CHECK(std::abs(s[c] - t.means[c]) < 1e-6);
      CHECK(std::abs(s[3 + c] - t.stds[c]) < 1e-6);
    }
  }
}

TEST_CASE("normalisation is idempotent when nothing clips") {
  const StainTarget t = stain_target_from(random_rgb(3, 20, 20, 0.35, 0.65));
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Image once = reinhard_normalize(random_rgb(seed + 100, 12, 12, 0.3, 0.7), t);
    bool clipped = false;
    for (double v : once.data) clipped = clipped || v <= 0.0 || v >= 1.0;
    if (clipped) continue;
    CHECK(max_abs_diff(reinhard_normalize(once, t), once) < 1e-6);
    ++checked;
  }
  CHECK(checked >= 5);
}

TEST_CASE("constant colour is degenerate") {
  const Image flat(3, 4, 4, 0.5);
  CHECK_THROWS_AS(stain_target_from(flat), DegenerateImage);
  CHECK_THROWS_AS(reinhard_normalize(flat, StainTarget{}), DegenerateImage);
  CHECK_THROWS_AS(rgb_to_lab(Image(2, 4, 4)), ShapeError);
}

TEST_CASE("stain target persists as six numbers") {
  const auto dir = std::filesystem::temp_directory_path() / "micronet_test_stain";
  std::filesystem::create_directories(dir);
  const StainTarget t{{-0.123456789012345, 0.5, 1e-7}, {0.25, 1.0 / 3.0, 2.0}};
  t.save(dir / "t.txt");
  const StainTarget back = StainTarget::load(dir / "t.txt");
  CHECK(back.means == t.means);
  CHECK(back.stds == t.stds);
  CHECK_THROWS(StainTarget{{0, 0, 0}, {1, 0, 1}}.validate());
  std::filesystem::remove_all(dir);
}

TEST_CASE("mirror index") {
  for (int n : {1, 2, 5, 300})
    for (int i = -3 * n - 2; i < 4 * n + 3; ++i) CHECK(mirror_index(i, n) == oracle::reflect(i, n));
}

TEST_CASE("padding reflects rows past the edge") {
  auto s = sample_with_truth(200, 300, 1);
  const auto p = pad_symmetric(s, 300);
  REQUIRE(p.channels.height == 300);
  REQUIRE(p.channels.width == 300);
  for (int i = 0; i < 100; ++i)
    for (int x = 0; x < 300; x += 7) {
      CHECK(p.channels.at(0, 200 + i, x) == s.channels.at(0, 199 - i, x));
      CHECK(p.truth->at(200 + i, x) == s.truth->at(199 - i, x));
    }
}

TEST_CASE("padding a small image reflects repeatedly") {
  auto s = sample_with_truth(100, 100, 2);
  const auto p = pad_symmetric(s, 300);
  REQUIRE(p.channels.height == 300);
  std::set<std::int32_t> before(s.truth->labels.begin(), s.truth->labels.end());
  for (int y = 0; y < 300; ++y)
    for (int x = 0; x < 300; ++x) {
      const int sy = oracle::reflect(y, 100), sx = oracle::reflect(x, 100);
      CHECK(p.channels.at(1, y, x) == s.channels.at(1, sy, sx));
      CHECK(p.truth->at(y, x) == s.truth->at(sy, sx));
      CHECK(before.count(p.truth->at(y, x)) == 1);
    }
}

TEST_CASE("padding a large-enough image is a no-op") {
  auto s = sample_with_truth(300, 300, 3);
  const auto p = pad_symmetric(s, 300);
  CHECK(p.channels == s.channels);
  CHECK(*p.truth == *s.truth);
}

TEST_CASE("patch spec") {
  CHECK(PatchSpec::for_crop(252).sample_size == 300);
  CHECK(PatchSpec::for_crop(508).sample_size == 600);
  CHECK_NOTHROW(PatchSpec{300, 252}.validate());
  CHECK_THROWS_AS(PatchSpec({300, 300}).validate(), InvalidArgument);
  CHECK_THROWS_AS(PatchSpec({300, 250}).validate(), InvalidArgument);
  CHECK_THROWS_AS(PatchSpec({500, 508}).validate(), InvalidArgument);
}

TEST_CASE("a 300 sample has one window") {
  auto s = sample_with_truth(300, 300, 4);
  const auto p = sample_patch(s, PatchSpec{300, 252}, 99);
  CHECK(p.top == 24);
  CHECK(p.left == 24);
  for (int y = 0; y < 252; y += 5)
    for (int x = 0; x < 252; x += 3) CHECK(p.image.at(0, y, x) == s.channels.at(0, y + 24, x + 24));
}

TEST_CASE("patches are seed-deterministic and copy truth at congruent pixels") {
  auto s = sample_with_truth(420, 390, 5);
  std::set<std::pair<int, int>> origins;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = sample_patch(s, PatchSpec{300, 252}, seed);
    const auto b = sample_patch(s, PatchSpec{300, 252}, seed);
    CHECK(a.image == b.image);
    CHECK(a.truth == b.truth);
    CHECK(a.top >= 24);
    CHECK(a.top + 252 + 24 <= 420);
    CHECK(a.left + 252 + 24 <= 390);
    origins.insert({a.top, a.left});
    bool same = true;
    for (int y = 0; y < 252; ++y)
      for (int x = 0; x < 252; ++x) same = same && a.truth.at(y, x) == s.truth->at(y + a.top, x + a.left);
    CHECK(same);
  }
  CHECK(origins.size() > 10);
  CHECK_THROWS_AS(sample_patch(sample_with_truth(290, 400, 1), PatchSpec{300, 252}, 0), ShapeError);
}

TEST_CASE("tiling 504 gives four exact tiles") {
  auto s = sample_with_truth(504, 504, 6);
  const auto tiles = tile_patches(s, 252);
  REQUIRE(tiles.size() == 4);
  const std::array<std::pair<int, int>, 4> origins{{{0, 0}, {0, 252}, {252, 0}, {252, 252}}};
  std::vector<int> covered(504 * 504, 0);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(tiles[i].top == origins[i].first);
    CHECK(tiles[i].left == origins[i].second);
    for (int y = 0; y < 252; ++y)
      for (int x = 0; x < 252; ++x) {
        ++covered[(y + tiles[i].top) * 504 + x + tiles[i].left];
        if ((x + y) % 11 == 0) CHECK(tiles[i].image.at(0, y, x) == s.channels.at(0, y + tiles[i].top, x + tiles[i].left));
      }
  }
  CHECK(std::all_of(covered.begin(), covered.end(), [](int c) { return c == 1; }));
}

TEST_CASE("tiling pads ragged edges by mirroring") {
  auto s = sample_with_truth(260, 100, 7);
  const auto tiles = tile_patches(s, 252);
  REQUIRE(tiles.size() == 2);
  CHECK(tiles[1].top == 252);
  for (int y = 0; y < 252; ++y)
    for (int x = 0; x < 252; ++x)
      CHECK(tiles[1].image.at(0, y, x) == s.channels.at(0, oracle::reflect(y + 252, 260), oracle::reflect(x, 100)));
}
