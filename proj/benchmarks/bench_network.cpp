#include <benchmark/benchmark.h>

#include <array>

#include "micronet/graph.hpp"
#include "micronet/network.hpp"

namespace {

using micronet::nn::Mode;
using micronet::nn::Network;
using micronet::nn::Tensor;

Network make_net(double width) {
  micronet::nn::NetVariant v{micronet::nn::VariantName::micronet252, 2, width};
  Network net(micronet::nn::build_variant(v));
  net.initialize({0.1, 1});
  return net;
}

Tensor make_input(int n) {
  Tensor x(n, 2, 252, 252);
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = static_cast<double>((i * 2654435761U) % 1000) / 1000.0;
  return x;
}

void BM_Forward252(benchmark::State& state) {
  Network net = make_net(0.125);
  const Tensor x = make_input(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto out = net.forward(x, Mode::eval);
    benchmark::DoNotOptimize(out.p_o->data.data());
  }
}
BENCHMARK(BM_Forward252)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TrainStep252(benchmark::State& state) {
  Network net = make_net(0.125);
  const Tensor x = make_input(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto out = net.forward(x, Mode::train, 3);
    std::array<Tensor, 4> grads;
    grads[0] = Tensor(out.p_o->n, 2, 252, 252, 1e-3);
    net.zero_grad();
    net.backward(grads);
    benchmark::DoNotOptimize(net.parameters().front().grad.data());
  }
}
BENCHMARK(BM_TrainStep252)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
