#include <functional>
#include <random>

#include "doctest.h"
#include "micronet/kernels.hpp"
#include "oracles.hpp"

using namespace micronet::nn::kernels;

namespace {

std::vector<double> randn(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Central-difference derivative of f at every coordinate of x.
std::vector<double> numeric_grad(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f) {
  std::vector<double> g(x.size());
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    x[i] = v + h;
    const double up = f(x);
    x[i] = v - h;
    const double down = f(x);
    x[i] = v;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("conv forward matches the direct sum") {
  std::mt19937_64 rng(1);
  for (auto [k, pad] : {std::pair{3, 0}, std::pair{3, 1}, std::pair{1, 0}, std::pair{5, 0}}) {
    ConvGeometry g{3, 9, 8, 4, k, pad};
    auto in = randn(rng, 3 * 9 * 8), w = randn(rng, 4 * 3 * k * k), b = randn(rng, 4);
    std::vector<double> out(static_cast<std::size_t>(4) * g.out_height() * g.out_width()), scratch;
    conv_forward(g, in.data(), w.data(), b.data(), out.data(), scratch);
    CHECK(max_abs_diff(out, oracle::conv(in, 3, 9, 8, w, b, 4, k, pad)) < 1e-12);
  }
}

TEST_CASE("conv backward matches finite differences") {
  std::mt19937_64 rng(2);
  for (auto [k, pad] : {std::pair{3, 0}, std::pair{3, 1}, std::pair{5, 0}}) {
    ConvGeometry g{2, 7, 6, 3, k, pad};
    auto in = randn(rng, 2 * 7 * 6), w = randn(rng, 3 * 2 * k * k), b = randn(rng, 3);
    const auto dout = randn(rng, static_cast<std::size_t>(3) * g.out_height() * g.out_width());
    std::vector<double> din(in.size()), dw(w.size()), db(b.size()), scratch;
    conv_backward(g, in.data(), w.data(), dout.data(), din.data(), dw.data(), db.data(), scratch);
    auto f_in = [&](const std::vector<double>& x) { return dot(oracle::conv(x, 2, 7, 6, w, b, 3, k, pad), dout); };
    auto f_w = [&](const std::vector<double>& x) { return dot(oracle::conv(in, 2, 7, 6, x, b, 3, k, pad), dout); };
    auto f_b = [&](const std::vector<double>& x) { return dot(oracle::conv(in, 2, 7, 6, w, x, 3, k, pad), dout); };
    CHECK(max_abs_diff(din, numeric_grad(in, f_in)) < 1e-7);
    CHECK(max_abs_diff(dw, numeric_grad(w, f_w)) < 1e-7);
    CHECK(max_abs_diff(db, numeric_grad(b, f_b)) < 1e-7);
  }
}

TEST_CASE("deconv forward and backward") {
  std::mt19937_64 rng(3);
  for (auto [k, s] : {std::pair{2, 2}, std::pair{5, 1}, std::pair{4, 4}}) {
    DeconvGeometry g{3, 4, 5, 2, k, s};
    auto in = randn(rng, 3 * 4 * 5), w = randn(rng, 3 * 2 * k * k), b = randn(rng, 2);
    std::vector<double> out(static_cast<std::size_t>(2) * g.out_height() * g.out_width()), scratch;
    deconv_forward(g, in.data(), w.data(), b.data(), out.data(), scratch);
    CHECK(max_abs_diff(out, oracle::deconv(in, 3, 4, 5, w, b, 2, k, s)) < 1e-12);

    const auto dout = randn(rng, out.size());
    std::vector<double> din(in.size()), dw(w.size()), db(b.size());
    deconv_backward(g, in.data(), w.data(), dout.data(), din.data(), dw.data(), db.data(), scratch);
    auto f_in = [&](const std::vector<double>& x) { return dot(oracle::deconv(x, 3, 4, 5, w, b, 2, k, s), dout); };
    auto f_w = [&](const std::vector<double>& x) { return dot(oracle::deconv(in, 3, 4, 5, x, b, 2, k, s), dout); };
    CHECK(max_abs_diff(din, numeric_grad(in, f_in)) < 1e-7);
    CHECK(max_abs_diff(dw, numeric_grad(w, f_w)) < 1e-7);
    double sum = 0.0;
    for (std::size_t i = 0; i < dout.size() / 2; ++i) sum += dout[i];
    CHECK(db[0] == doctest::Approx(sum).epsilon(1e-12));
  }
}

TEST_CASE("backward accumulates into its outputs") {
  ConvGeometry g{1, 4, 4, 1, 3, 0};
  std::vector<double> in(16, 1.0), w(9, 1.0), dout(4, 1.0), scratch;
  std::vector<double> din(16, 0.0), dw(9, 5.0), db(1, 2.0);
  conv_backward(g, in.data(), w.data(), dout.data(), din.data(), dw.data(), db.data(), scratch);
  CHECK(dw[0] == 9.0);
  CHECK(db[0] == 6.0);
}

TEST_CASE("maxpool picks the window maximum and routes gradients to it") {
  std::mt19937_64 rng(4);
  auto in = randn(rng, 2 * 6 * 7);
  std::vector<double> out(2 * 3 * 3);
  std::vector<std::int32_t> arg(out.size());
  maxpool2_forward(2, 6, 7, in.data(), out.data(), arg.data());
  CHECK(max_abs_diff(out, oracle::maxpool2(in, 2, 6, 7)) == 0.0);
  std::vector<double> dout(out.size(), 1.0), din(in.size(), 0.0);
  maxpool2_backward(2, 3, 3, arg.data(), dout.data(), din.data());
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(din[arg[i]] == 1.0);
  double total = 0.0;
  for (double v : din) total += v;
  CHECK(total == 18.0);
}

TEST_CASE("maxpool ties keep the first element in raster order") {
  std::vector<double> in(4, 1.0), out(1);
  std::vector<std::int32_t> arg(1);
  maxpool2_forward(1, 2, 2, in.data(), out.data(), arg.data());
  CHECK(arg[0] == 0);
}

TEST_CASE("bicubic resize matches per-pixel evaluation") {
  std::mt19937_64 rng(6);
  for (auto [h, w, th, tw] : {std::array{8, 8, 12, 12}, std::array{252, 252, 128, 128}, std::array{10, 7, 3, 9}}) {
    auto in = randn(rng, static_cast<std::size_t>(2) * h * w);
    std::vector<double> out(static_cast<std::size_t>(2) * th * tw);
    resize_forward(2, h, w, th, tw, bicubic_matrix(h, th), bicubic_matrix(w, tw), in.data(), out.data());
    CHECK(max_abs_diff(out, oracle::resize_bicubic(in, 2, h, w, th, tw)) < 1e-10);
  }
}

TEST_CASE("bicubic rows sum to one and backward is the adjoint") {
  const auto m = bicubic_matrix(9, 5);
  for (int i = 0; i < 5; ++i) {
    double s = 0.0;
    for (int j = 0; j < 9; ++j) s += m[i * 9 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
  std::mt19937_64 rng(7);
  const auto ry = bicubic_matrix(6, 11), rx = bicubic_matrix(5, 4);
  auto x = randn(rng, 6 * 5), y = randn(rng, 11 * 4);
  std::vector<double> ax(11 * 4), aty(6 * 5, 0.0);
  resize_forward(1, 6, 5, 11, 4, ry, rx, x.data(), ax.data());
  resize_backward(1, 6, 5, 11, 4, ry, rx, y.data(), aty.data());
  CHECK(dot(ax, y) == doctest::Approx(dot(x, aty)).epsilon(1e-12));
}
