#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "micronet/graph.hpp"
#include "micronet/image.hpp"
#include "micronet/tensor.hpp"

namespace micronet::nn {

enum class Mode { train, eval };

/// Trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;  // "<node>/weight", "<node>/bias", "<node>/gamma", "<node>/beta"
  LayerKind kind = LayerKind::input;
  std::vector<double> value;
  std::vector<double> grad;
};

/// Non-trainable state persisted with the weights (batch-norm running moments).
struct Buffer {
  std::string name;
  std::vector<double> value;
};

/// The four probability maps, each N x 2 x crop x crop (channel 0 background, 1 object).
struct Outputs {
  const Tensor* p_o = nullptr;
  const Tensor* p_a1 = nullptr;
  const Tensor* p_a2 = nullptr;
  const Tensor* p_a3 = nullptr;
};

struct InitOptions {
  double stddev = 0.1;      // truncated at two standard deviations
  std::uint64_t seed = 0;
};

/// Reverse-mode differentiable executor for a LayerGraph.
///
/// Owns one weight set. forward() caches every activation so that backward() can
/// run; gradients accumulate until zero_grad(). Not safe for concurrent use; a
/// frozen network can be copied per worker for parallel inference.
class Network {
 public:
  explicit Network(LayerGraph graph);

  const LayerGraph& graph() const { return graph_; }

  void initialize(const InitOptions& options);
  bool initialized() const { return initialized_; }

  Outputs forward(const Tensor& input, Mode mode, std::uint64_t dropout_seed = 0);

  /// Back-propagates gradients of a scalar loss w.r.t. the four probability maps
  /// (any may be empty, meaning zero). Requires a preceding forward().
  void backward(const std::array<Tensor, 4>& output_grads);

  void zero_grad();

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Buffer>& buffers() { return buffers_; }
  const std::vector<Buffer>& buffers() const { return buffers_; }

  /// Activation cached by the last forward pass for a node.
  const Tensor& activation(int node) const { return acts_.at(static_cast<std::size_t>(node)); }

  /// When set, max-pool layers reuse the routing of the previous forward pass
  /// instead of recomputing the argmax. Used for finite-difference checks.
  bool freeze_pool_routing = false;

  double batchnorm_momentum = 0.1;
  double batchnorm_epsilon = 1e-5;

 private:
  struct NodeSlots {
    int weight = -1;  // index into params_ (weight or gamma)
    int bias = -1;    // bias or beta
    int running_mean = -1;
    int running_var = -1;
  };
  struct BatchNormCache {
    std::vector<double> mean;
    std::vector<double> inv_std;
  };

  void forward_node(int id, Mode mode, std::uint64_t dropout_seed);
  void backward_node(int id);
  Tensor& grad_of(int id);

  LayerGraph graph_;
  std::vector<Parameter> params_;
  std::vector<Buffer> buffers_;
  std::vector<NodeSlots> slots_;
  std::vector<Tensor> acts_;
  std::vector<Tensor> grads_;
  std::vector<std::vector<std::int32_t>> pool_index_;
  std::vector<std::vector<std::uint8_t>> dropout_mask_;
  std::vector<BatchNormCache> bn_cache_;
  std::vector<std::vector<double>> resize_ry_;
  std::vector<std::vector<double>> resize_rx_;
  std::vector<double> scratch_;
  Mode last_mode_ = Mode::eval;
  bool initialized_ = false;
  bool has_forward_ = false;
};

/// Packs image rasters (all the same shape) into an N x C x H x W tensor.
Tensor to_tensor(const std::vector<const Image*>& images);

/// Runs one eval-mode forward pass on a single crop x crop x C patch.
/// Returns the four maps as 2-channel Images (background, object), in
/// p_o, p_a1, p_a2, p_a3 order.
std::array<Image, 4> infer(Network& net, const Image& patch);

}  // namespace micronet::nn
