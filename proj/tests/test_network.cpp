#include <random>
#include <set>

#include "doctest.h"
#include "gradcheck.hpp"
#include "micronet/errors.hpp"
#include "micronet/network.hpp"

using namespace micronet;
using namespace micronet::nn;

namespace {

// 8x8 graph that contains every layer kind once or more and ends in four 2x8x8 heads.
LayerGraph tiny_graph() {
  GraphBuilder b(NetVariant{VariantName::micronet252, 2, 1.0}, 8);
  auto in = b.add_input();
  auto x0 = b.add(LayerKind::batchnorm, {in}, 0, 1, 1, "bn");
  auto a = b.add(LayerKind::conv3_valid, {x0}, 3, 1, 1, "conv3v");
  a = b.add(LayerKind::tanh, {a}, 0, 1, 1, "tanh1");
  auto p = b.add(LayerKind::maxpool2, {a}, 0, 1, 1, "pool");
  auto r = b.add_resize(x0, 3, 3, 1, 1, "resize");
  auto cat = b.add(LayerKind::concat, {p, r}, 0, 1, 1, "cat");

  auto h1 = b.add(LayerKind::deconv_up, {cat}, 4, 4, 2, "up4", 4);
  h1 = b.add(LayerKind::conv5_valid, {h1}, 4, 4, 2, "conv5");
  auto m1 = b.add(LayerKind::tanh, {h1}, 0, 4, 2, "m1");
  auto l1 = b.add(LayerKind::dropout50, {m1}, 0, 4, 2, "drop");
  l1 = b.add(LayerKind::conv1, {l1}, 2, 4, 2, "logits1");
  auto p1 = b.add(LayerKind::softmax, {l1}, 0, 4, 2, "p1");

  auto q = b.add(LayerKind::maxpool2, {x0}, 0, 3, 3, "pool2");
  auto h2 = b.add(LayerKind::deconv5_s1, {q}, 3, 3, 3, "skip");
  h2 = b.add(LayerKind::conv3_same, {h2}, 3, 3, 3, "conv3s");
  auto m2 = b.add(LayerKind::tanh, {h2}, 0, 3, 3, "m2");
  auto p2 = b.add(LayerKind::softmax, {b.add(LayerKind::conv1, {m2}, 2, 3, 3, "logits2")}, 0, 3, 3, "p2");

  auto h3 = b.add(LayerKind::deconv2_s2, {q}, 3, 3, 4, "up2");
  auto m3 = b.add(LayerKind::tanh, {h3}, 0, 3, 4, "m3");
  auto p3 = b.add(LayerKind::softmax, {b.add(LayerKind::conv1, {m3}, 2, 3, 4, "logits3")}, 0, 3, 4, "p3");

  auto mcat = b.add(LayerKind::concat, {m1, m2, m3}, 0, 5, 5, "mcat");
  auto mo = b.add(LayerKind::tanh, {b.add(LayerKind::conv3_same, {mcat}, 3, 5, 5, "conv_main")}, 0, 5, 5, "tanh_main");
  auto po = b.add(LayerKind::softmax, {b.add(LayerKind::conv1, {mo}, 2, 5, 5, "logits_main")}, 0, 5, 5, "po");
  b.set_outputs(po, p1, p2, p3);
  return std::move(b).finish();
}

gradcheck::Problem random_problem(int n, int size, int channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  gradcheck::Problem p;
  p.input = Tensor(n, channels, size, size);
  for (auto& v : p.input.data) v = u(rng);
  for (int i = 0; i < n; ++i) {
    BinaryMask t(size, size);
    train::WeightMap w{size, size, std::vector<double>(static_cast<std::size_t>(size) * size)};
    for (auto& v : t.values) v = u(rng) < 0.4;
    for (auto& v : w.w) v = 1.0 + 3.0 * u(rng);
    p.truth.push_back(t);
    p.weights.push_back(w);
  }
  return p;
}

Tensor constant_input(const Shape& s, double v) { return Tensor(1, s.channels, s.height, s.width, v); }

}  // namespace

TEST_CASE("every layer kind passes a finite-difference check on an 8x8 graph") {
  Network net(tiny_graph());
  net.initialize({0.5, 9});
  const auto problem = random_problem(2, 8, 2, 21);
  const auto report = gradcheck::check(net, problem, 1000, 4);
  std::set<LayerKind> kinds;
  for (const auto& [kind, r] : report) {
    INFO(to_string(kind), " max rel ", r.max_rel);
    CHECK(r.max_rel < 1e-5);
    kinds.insert(kind);
  }
  for (auto k : {LayerKind::conv3_valid, LayerKind::conv3_same, LayerKind::conv1, LayerKind::conv5_valid,
                 LayerKind::deconv2_s2, LayerKind::deconv5_s1, LayerKind::deconv_up, LayerKind::batchnorm})
    CHECK(kinds.count(k) == 1);
}

TEST_CASE("every trainable tensor receives gradient on the full network") {
  Network net(build_variant(NetVariant{VariantName::micronet252, 2, 0.125}));
  net.initialize({0.1, 3});
  const auto problem = random_problem(1, 252, 2, 5);
  gradcheck::analytic(net, problem);
  for (const auto& p : net.parameters()) {
    bool any = false;
    for (double g : p.grad) any = any || g != 0.0;
    INFO(p.name);
    CHECK(any);
  }
}

TEST_CASE("zero logits give uniform probabilities") {
  Network net(build_variant(NetVariant{VariantName::micronet252, 2, 0.125}));
  net.initialize({0.1, 3});
  for (auto& p : net.parameters())
    if (p.kind == LayerKind::conv1) std::fill(p.value.begin(), p.value.end(), 0.0);
  const auto out = net.forward(constant_input(net.graph().input_shape(), 0.3), Mode::eval);
  for (const Tensor* t : {out.p_o, out.p_a1, out.p_a2, out.p_a3})
    for (double v : t->data) CHECK(v == 0.5);
}

TEST_CASE("eval mode is deterministic and ignores the dropout seed") {
  Network net(build_variant(NetVariant{VariantName::micronet252, 2, 0.125}));
  net.initialize({0.1, 3});
  const auto x = random_problem(1, 252, 2, 8).input;
  const Tensor a = *net.forward(x, Mode::eval, 1).p_o;
  const Tensor b = *net.forward(x, Mode::eval, 2).p_o;
  CHECK(a.data == b.data);
  const Tensor c = *net.forward(x, Mode::train, 1).p_a1;
  const Tensor d = *net.forward(x, Mode::train, 2).p_a1;
  const Tensor e = *net.forward(x, Mode::train, 1).p_a1;
  CHECK(c.data != d.data);
  CHECK(c.data == e.data);
}

TEST_CASE("frozen pool routing reuses the previous argmax") {
  Network net(tiny_graph());
  net.initialize({0.5, 9});
  const auto x = random_problem(1, 8, 2, 30).input;
  Tensor flipped = x;
  for (auto& v : flipped.data) v = -v;
  const Tensor base = *net.forward(x, Mode::eval).p_o;
  const Tensor free_flipped = *net.forward(flipped, Mode::eval).p_o;
  net.forward(x, Mode::eval);
  net.freeze_pool_routing = true;
  CHECK(net.forward(x, Mode::eval).p_o->data == base.data);
  CHECK(net.forward(flipped, Mode::eval).p_o->data != free_flipped.data);
  net.freeze_pool_routing = false;
  CHECK(net.forward(flipped, Mode::eval).p_o->data == free_flipped.data);
}

TEST_CASE("probabilities sum to one") {
  Network net(build_variant(NetVariant{VariantName::micronet_minus, 2, 0.125}));
  net.initialize({0.1, 4});
  const auto out = net.forward(random_problem(1, 252, 2, 9).input, Mode::eval);
  const std::size_t plane = out.p_o->plane();
  for (std::size_t i = 0; i < plane; i += 97)
    CHECK(out.p_o->data[i] + out.p_o->data[plane + i] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("input channel mismatch is rejected") {
  Network net(build_variant(NetVariant{VariantName::micronet252, 2, 0.125}));
  net.initialize({0.1, 3});
  CHECK_THROWS_AS(net.forward(Tensor(1, 3, 252, 252), Mode::eval), ShapeError);
  CHECK_THROWS_AS(net.forward(Tensor(1, 2, 250, 250), Mode::eval), ShapeError);
}

TEST_CASE("uninitialised network and backward without forward are errors") {
  Network net(tiny_graph());
  CHECK_THROWS_AS(net.forward(Tensor(1, 2, 8, 8), Mode::eval), InvalidArgument);
  net.initialize({0.1, 1});
  CHECK_THROWS_AS(net.backward({}), InvalidArgument);
}

TEST_CASE("truncated normal initialisation") {
  Network net(build_variant(NetVariant{VariantName::micronet252, 2, 0.125}));
  net.initialize({0.1, 7});
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& p : net.parameters()) {
    if (p.kind == LayerKind::batchnorm || p.name.ends_with("/bias")) continue;
    for (double v : p.value) {
      CHECK(std::abs(v) <= 0.2);
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  // Variance of a standard normal truncated at two sigma is about 0.774.
  CHECK(std::abs(sum / n) < 1e-3);
  CHECK(std::sqrt(sq / n) == doctest::Approx(0.1 * std::sqrt(0.774)).epsilon(0.01));
}

TEST_CASE("constant input gives spatially constant encoder features") {
  Network net(build_variant(NetVariant{VariantName::micronet252, 2, 0.125}));
  net.initialize({0.1, 3});
  net.forward(constant_input(net.graph().input_shape(), 0.4), Mode::eval);
  for (const char* name : {"b1/concat", "b2/concat", "b3/concat", "b4/concat", "b5/tanh_b"}) {
    const Tensor& t = net.activation(net.graph().find(name));
    double spread = 0.0;
    for (int c = 0; c < t.c; ++c) {
      const double ref = t.at(0, c, 0, 0);
      for (int y = 0; y < t.h; ++y)
        for (int x = 0; x < t.w; ++x) spread = std::max(spread, std::abs(t.at(0, c, y, x) - ref));
    }
    INFO(name);
    CHECK(spread < 1e-12);
  }
}

TEST_CASE("to_tensor packs images") {
  Image a(2, 3, 3, 0.1), b(2, 3, 3, 0.2);
  const Tensor t = to_tensor({&a, &b});
  CHECK(t.n == 2);
  CHECK(t.at(1, 1, 2, 2) == 0.2);
  Image c(2, 4, 3);
  CHECK_THROWS_AS(to_tensor({&a, &c}), ShapeError);
}
