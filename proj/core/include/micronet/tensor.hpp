#pragma once

#include <cstddef>
#include <vector>

#include "micronet/graph.hpp"

namespace micronet::nn {

/// Dense NCHW batch of double-precision feature maps.
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, double fill = 0.0)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t image_stride() const { return static_cast<std::size_t>(c) * plane(); }
  std::size_t size() const { return data.size(); }
  double* image(int i) { return data.data() + i * image_stride(); }
  const double* image(int i) const { return data.data() + i * image_stride(); }
  double& at(int i, int ch, int y, int x) { return data[i * image_stride() + ch * plane() + static_cast<std::size_t>(y) * w + x]; }
  double at(int i, int ch, int y, int x) const { return data[i * image_stride() + ch * plane() + static_cast<std::size_t>(y) * w + x]; }
  Shape shape() const { return {c, h, w}; }
  bool empty() const { return data.empty(); }

  /// Reshapes in place, zero-filling; reuses the allocation when possible.
  void reset(int n_, int c_, int h_, int w_) {
    n = n_; c = c_; h = h_; w = w_;
    data.assign(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0);
  }
};

}  // namespace micronet::nn
