#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "micronet/network.hpp"
#include "micronet/training.hpp"

namespace gradcheck {

using micronet::BinaryMask;
using micronet::nn::LayerKind;
using micronet::nn::Mode;
using micronet::nn::Network;
using micronet::nn::Tensor;
using micronet::train::WeightMap;

struct Problem {
  Tensor input;
  std::vector<BinaryMask> truth;
  std::vector<WeightMap> weights;
  int epoch = 2;
  std::uint64_t dropout_seed = 11;
};

// total_loss over the four heads in train mode (fixed dropout masks).
inline double loss(Network& net, const Problem& p) {
  const auto out = net.forward(p.input, Mode::train, p.dropout_seed);
  using micronet::train::weighted_ce;
  return micronet::train::total_loss(weighted_ce(*out.p_o, p.truth, p.weights),
                                     weighted_ce(*out.p_a1, p.truth, p.weights),
                                     weighted_ce(*out.p_a2, p.truth, p.weights),
                                     weighted_ce(*out.p_a3, p.truth, p.weights), p.epoch);
}

inline void analytic(Network& net, const Problem& p) {
  const auto out = net.forward(p.input, Mode::train, p.dropout_seed);
  std::array<Tensor, 4> g;
  const std::array<const Tensor*, 4> heads{out.p_o, out.p_a1, out.p_a2, out.p_a3};
  for (int i = 0; i < 4; ++i)
    micronet::train::weighted_ce(*heads[i], p.truth, p.weights, &g[i], i == 0 ? 1.0 : 1.0 / p.epoch);
  net.zero_grad();
  net.backward(g);
}

struct KindReport {
  int sampled = 0;
  double max_rel = 0.0;
};

// Relative error with a floor so that gradients at round-off scale compare absolutely.
inline double relative_error(double a, double n, double floor = 1e-8) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline double central(Network& net, const Problem& p, double& slot, double h) {
  const double v = slot;
  slot = v + h;
  const double up = loss(net, p);
  slot = v - h;
  const double down = loss(net, p);
  slot = v;
  return (up - down) / (2.0 * h);
}

// Samples `per_kind` scalars uniformly across all parameters of each layer kind and
// compares the analytic gradient with a central difference of step h. Disagreements
// above `refine_above` are re-measured with the fourth-order stencil (Richardson
// extrapolation of steps h and 2h), which removes the O(h^2) truncation term that
// dominates for gradients near 1e-7. Max-pool routing is held at the analytic
// pass's argmax, so the differenced loss is the smooth branch the gradient
// belongs to rather than one that crosses pooling switches inside [-h, h].
inline std::map<LayerKind, KindReport> check(Network& net, const Problem& p, int per_kind, std::uint64_t seed,
                                             double h = 1e-4, double refine_above = 1e-5) {
  analytic(net, p);
  net.freeze_pool_routing = true;
  auto& params = net.parameters();
  std::map<LayerKind, std::vector<std::pair<std::size_t, std::size_t>>> pool;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].value.size(); ++j) pool[params[i].kind].push_back({i, j});
  std::mt19937_64 rng(seed);
  std::map<LayerKind, KindReport> report;
  for (auto& [kind, all] : pool) {
    std::shuffle(all.begin(), all.end(), rng);
    const std::size_t n = std::min<std::size_t>(all.size(), static_cast<std::size_t>(per_kind));
    for (std::size_t s = 0; s < n; ++s) {
      auto [i, j] = all[s];
      const double a = params[i].grad[j];
      double numeric = central(net, p, params[i].value[j], h);
      if (relative_error(a, numeric) > refine_above)
        numeric = (4.0 * numeric - central(net, p, params[i].value[j], 2.0 * h)) / 3.0;
      auto& r = report[kind];
      ++r.sampled;
      r.max_rel = std::max(r.max_rel, relative_error(a, numeric));
    }
  }
  net.freeze_pool_routing = false;
  return report;
}

}  // namespace gradcheck
