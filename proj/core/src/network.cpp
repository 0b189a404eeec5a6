#include "micronet/network.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "micronet/errors.hpp"
#include "micronet/kernels.hpp"
#include "micronet/random.hpp"

namespace micronet::nn {

namespace {

// 1 - 2 / (e^{2x} + 1) through Eigen's packet exp. Runs in aligned fixed-size blocks so
// every element takes the packet path: an unaligned map would send the head to the
// scalar exp and make results depend on where the buffer was allocated.
void packet_tanh(const double* in, double* out, std::size_t n) {
  constexpr int block = 64;
  Eigen::Array<double, block, 1> buf;
  for (std::size_t start = 0; start < n; start += block) {
    const std::size_t len = std::min<std::size_t>(block, n - start);
    buf.setZero();
    std::copy_n(in + start, len, buf.data());
    buf = 1.0 - 2.0 / ((2.0 * buf).exp() + 1.0);
    std::copy_n(buf.data(), len, out + start);
  }
}

kernels::ConvGeometry conv_geometry(const LayerNode& node, const Shape& in) {
  kernels::ConvGeometry g;
  g.in_channels = in.channels;
  g.in_height = in.height;
  g.in_width = in.width;
  g.out_channels = node.channels_out;
  g.kernel = kernel_size(node.kind);
  g.pad = node.kind == LayerKind::conv3_same ? 1 : 0;
  return g;
}

kernels::DeconvGeometry deconv_geometry(const LayerNode& node, const Shape& in) {
  kernels::DeconvGeometry g;
  g.in_channels = in.channels;
  g.in_height = in.height;
  g.in_width = in.width;
  g.out_channels = node.channels_out;
  g.kernel = kernel_size(node.kind, node.stride);
  g.stride = node.kind == LayerKind::deconv5_s1 ? 1 : g.kernel;
  return g;
}

}  // namespace

Network::Network(LayerGraph graph) : graph_(std::move(graph)) {
  const std::size_t n = graph_.nodes.size();
  slots_.resize(n);
  acts_.resize(n);
  grads_.resize(n);
  pool_index_.resize(n);
  dropout_mask_.resize(n);
  bn_cache_.resize(n);
  resize_ry_.resize(n);
  resize_rx_.resize(n);
  for (std::size_t id = 0; id < n; ++id) {
    const LayerNode& node = graph_.nodes[id];
    if (node.kind == LayerKind::batchnorm) {
      const auto c = static_cast<std::size_t>(node.shape.channels);
      slots_[id].weight = static_cast<int>(params_.size());
      params_.push_back({node.name + "/gamma", node.kind, std::vector<double>(c, 1.0), std::vector<double>(c, 0.0)});
      slots_[id].bias = static_cast<int>(params_.size());
      params_.push_back({node.name + "/beta", node.kind, std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)});
      slots_[id].running_mean = static_cast<int>(buffers_.size());
      buffers_.push_back({node.name + "/running_mean", std::vector<double>(c, 0.0)});
      slots_[id].running_var = static_cast<int>(buffers_.size());
      buffers_.push_back({node.name + "/running_var", std::vector<double>(c, 1.0)});
    } else if (is_convolution(node.kind) || is_deconvolution(node.kind)) {
      const auto count = static_cast<std::size_t>(param_count(graph_, node) - node.channels_out);
      const auto co = static_cast<std::size_t>(node.channels_out);
      slots_[id].weight = static_cast<int>(params_.size());
      params_.push_back({node.name + "/weight", node.kind, std::vector<double>(count, 0.0),
                         std::vector<double>(count, 0.0)});
      slots_[id].bias = static_cast<int>(params_.size());
      params_.push_back({node.name + "/bias", node.kind, std::vector<double>(co, 0.0), std::vector<double>(co, 0.0)});
    } else if (node.kind == LayerKind::resize_bicubic) {
      const Shape in = graph_.node(node.inputs[0]).shape;
      resize_ry_[id] = kernels::bicubic_matrix(in.height, node.target_height);
      resize_rx_[id] = kernels::bicubic_matrix(in.width, node.target_width);
    }
  }
}

void Network::initialize(const InitOptions& options) {
  if (!(options.stddev >= 0.0)) throw InvalidArgument("initialisation stddev must be non-negative");
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t id = 0; id < graph_.nodes.size(); ++id) {
    const LayerNode& node = graph_.nodes[id];
    if (slots_[id].weight < 0) continue;
    if (node.kind == LayerKind::batchnorm) {
      std::fill(params_[slots_[id].weight].value.begin(), params_[slots_[id].weight].value.end(), 1.0);
      std::fill(params_[slots_[id].bias].value.begin(), params_[slots_[id].bias].value.end(), 0.0);
      std::fill(buffers_[slots_[id].running_mean].value.begin(), buffers_[slots_[id].running_mean].value.end(), 0.0);
      std::fill(buffers_[slots_[id].running_var].value.begin(), buffers_[slots_[id].running_var].value.end(), 1.0);
      continue;
    }
    for (double& v : params_[slots_[id].weight].value) {
      double z = normal(rng);
      while (std::abs(z) > 2.0) z = normal(rng);
      v = z * options.stddev;
    }
    std::fill(params_[slots_[id].bias].value.begin(), params_[slots_[id].bias].value.end(), 0.0);
  }
  initialized_ = true;
}

void Network::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

Outputs Network::forward(const Tensor& input, Mode mode, std::uint64_t dropout_seed) {
  if (!initialized_) throw InvalidArgument("network weights are not initialised");
  const Shape expected = graph_.input_shape();
  if (input.shape() != expected || input.n < 1) {
    std::ostringstream msg;
    msg << "network input must be N x " << expected.channels << " x " << expected.height << " x " << expected.width
        << ", got " << input.n << " x " << input.c << " x " << input.h << " x " << input.w;
    throw ShapeError(msg.str());
  }
  acts_[graph_.input] = input;
  for (std::size_t id = 0; id < graph_.nodes.size(); ++id)
    if (static_cast<int>(id) != graph_.input) forward_node(static_cast<int>(id), mode, dropout_seed);
  last_mode_ = mode;
  has_forward_ = true;
  return {&acts_[graph_.outputs[0]], &acts_[graph_.outputs[1]], &acts_[graph_.outputs[2]],
          &acts_[graph_.outputs[3]]};
}

void Network::forward_node(int id, Mode mode, std::uint64_t dropout_seed) {
  const LayerNode& node = graph_.nodes[id];
  const Tensor& x = acts_[node.inputs[0]];
  Tensor& y = acts_[id];
  const int n = x.n;
  y.reset(n, node.shape.channels, node.shape.height, node.shape.width);
  switch (node.kind) {
    case LayerKind::conv3_valid:
    case LayerKind::conv3_same:
    case LayerKind::conv1:
    case LayerKind::conv5_valid: {
      const auto g = conv_geometry(node, x.shape());
      const auto& w = params_[slots_[id].weight].value;
      const auto& b = params_[slots_[id].bias].value;
      for (int i = 0; i < n; ++i) kernels::conv_forward(g, x.image(i), w.data(), b.data(), y.image(i), scratch_);
      break;
    }
    case LayerKind::deconv2_s2:
    case LayerKind::deconv5_s1:
    case LayerKind::deconv_up: {
      const auto g = deconv_geometry(node, x.shape());
      const auto& w = params_[slots_[id].weight].value;
      const auto& b = params_[slots_[id].bias].value;
      for (int i = 0; i < n; ++i) kernels::deconv_forward(g, x.image(i), w.data(), b.data(), y.image(i), scratch_);
      break;
    }
    case LayerKind::maxpool2: {
      auto& idx = pool_index_[id];
      if (freeze_pool_routing && idx.size() == y.size()) {
        for (int i = 0; i < n; ++i) {
          const double* src = x.image(i);
          const std::int32_t* route = idx.data() + i * y.image_stride();
          double* dst = y.image(i);
          for (std::size_t o = 0; o < y.image_stride(); ++o) dst[o] = src[route[o]];
        }
        break;
      }
      idx.resize(y.size());
      for (int i = 0; i < n; ++i)
        kernels::maxpool2_forward(x.c, x.h, x.w, x.image(i), y.image(i), idx.data() + i * y.image_stride());
      break;
    }
    case LayerKind::resize_bicubic:
      for (int i = 0; i < n; ++i)
        kernels::resize_forward(x.c, x.h, x.w, y.h, y.w, resize_ry_[id], resize_rx_[id], x.image(i), y.image(i));
      break;
    case LayerKind::concat: {
      for (int i = 0; i < n; ++i) {
        double* dst = y.image(i);
        for (int in_id : node.inputs) {
          const Tensor& part = acts_[in_id];
          std::copy(part.image(i), part.image(i) + part.image_stride(), dst);
          dst += part.image_stride();
        }
      }
      break;
    }
    case LayerKind::batchnorm: {
      const auto& gamma = params_[slots_[id].weight].value;
      const auto& beta = params_[slots_[id].bias].value;
      auto& rmean = buffers_[slots_[id].running_mean].value;
      auto& rvar = buffers_[slots_[id].running_var].value;
      auto& cache = bn_cache_[id];
      cache.mean.assign(x.c, 0.0);
      cache.inv_std.assign(x.c, 0.0);
      const std::size_t plane = x.plane();
      const double count = static_cast<double>(n) * plane;
      for (int c = 0; c < x.c; ++c) {
        double mean;
        double var;
        if (mode == Mode::train) {
          double s = 0.0;
          for (int i = 0; i < n; ++i) {
            const double* p = x.image(i) + c * plane;
            for (std::size_t k = 0; k < plane; ++k) s += p[k];
          }
          mean = s / count;
          double ss = 0.0;
          for (int i = 0; i < n; ++i) {
            const double* p = x.image(i) + c * plane;
            for (std::size_t k = 0; k < plane; ++k) ss += (p[k] - mean) * (p[k] - mean);
          }
          var = ss / count;
          rmean[c] = (1.0 - batchnorm_momentum) * rmean[c] + batchnorm_momentum * mean;
          rvar[c] = (1.0 - batchnorm_momentum) * rvar[c] + batchnorm_momentum * var;
        } else {
          mean = rmean[c];
          var = rvar[c];
        }
        const double inv = 1.0 / std::sqrt(var + batchnorm_epsilon);
        cache.mean[c] = mean;
        cache.inv_std[c] = inv;
        for (int i = 0; i < n; ++i) {
          const double* p = x.image(i) + c * plane;
          double* q = y.image(i) + c * plane;
          for (std::size_t k = 0; k < plane; ++k) q[k] = gamma[c] * (p[k] - mean) * inv + beta[c];
        }
      }
      break;
    }
    case LayerKind::tanh: {
      packet_tanh(x.data.data(), y.data.data(), x.size());
      break;
    }
    case LayerKind::softmax: {
      const std::size_t plane = x.plane();
      for (int i = 0; i < n; ++i) {
        const double* in = x.image(i);
        double* out = y.image(i);
        for (std::size_t p = 0; p < plane; ++p) {
          double mx = in[p];
          for (int c = 1; c < x.c; ++c) mx = std::max(mx, in[c * plane + p]);
          double sum = 0.0;
          for (int c = 0; c < x.c; ++c) {
            const double e = std::exp(in[c * plane + p] - mx);
            out[c * plane + p] = e;
            sum += e;
          }
          for (int c = 0; c < x.c; ++c) out[c * plane + p] /= sum;
        }
      }
      break;
    }
    case LayerKind::dropout50: {
      auto& mask = dropout_mask_[id];
      if (mode == Mode::eval) {
        mask.clear();
        y.data = x.data;
        break;
      }
      mask.resize(x.size());
      std::mt19937_64 rng(mix_seed(dropout_seed, static_cast<std::uint64_t>(id)));
      std::uint64_t bits = 0;
      for (std::size_t k = 0; k < x.size(); ++k) {
        if (k % 64 == 0) bits = rng();
        mask[k] = static_cast<std::uint8_t>((bits >> (k % 64)) & 1U);
        y.data[k] = mask[k] ? 2.0 * x.data[k] : 0.0;
      }
      break;
    }
    case LayerKind::input: break;
  }
}

Tensor& Network::grad_of(int id) {
  Tensor& g = grads_[id];
  const Tensor& a = acts_[id];
  if (g.empty()) g.reset(a.n, a.c, a.h, a.w);
  return g;
}

void Network::backward(const std::array<Tensor, 4>& output_grads) {
  if (!has_forward_) throw InvalidArgument("backward() called without a preceding forward()");
  for (auto& g : grads_) g = Tensor();
  for (int k = 0; k < 4; ++k) {
    if (output_grads[k].empty()) continue;
    const Tensor& a = acts_[graph_.outputs[k]];
    if (output_grads[k].size() != a.size()) throw ShapeError("output gradient does not match output shape");
    Tensor& g = grad_of(graph_.outputs[k]);
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += output_grads[k].data[i];
  }
  for (int id = static_cast<int>(graph_.nodes.size()) - 1; id >= 0; --id) {
    if (id == graph_.input || grads_[id].empty()) continue;
    backward_node(id);
    grads_[id] = Tensor();
  }
}

void Network::backward_node(int id) {
  const LayerNode& node = graph_.nodes[id];
  const Tensor& dy = grads_[id];
  const Tensor& y = acts_[id];
  const int src = node.inputs[0];
  const Tensor& x = acts_[src];
  const bool need_dx = src != graph_.input;
  const int n = x.n;
  switch (node.kind) {
    case LayerKind::conv3_valid:
    case LayerKind::conv3_same:
    case LayerKind::conv1:
    case LayerKind::conv5_valid: {
      const auto g = conv_geometry(node, x.shape());
      auto& w = params_[slots_[id].weight];
      auto& b = params_[slots_[id].bias];
      double* dx = need_dx ? grad_of(src).data.data() : nullptr;
      for (int i = 0; i < n; ++i)
        kernels::conv_backward(g, x.image(i), w.value.data(), dy.image(i), dx ? dx + i * x.image_stride() : nullptr,
                               w.grad.data(), b.grad.data(), scratch_);
      break;
    }
    case LayerKind::deconv2_s2:
    case LayerKind::deconv5_s1:
    case LayerKind::deconv_up: {
      const auto g = deconv_geometry(node, x.shape());
      auto& w = params_[slots_[id].weight];
      auto& b = params_[slots_[id].bias];
      double* dx = need_dx ? grad_of(src).data.data() : nullptr;
      for (int i = 0; i < n; ++i)
        kernels::deconv_backward(g, x.image(i), w.value.data(), dy.image(i),
                                 dx ? dx + i * x.image_stride() : nullptr, w.grad.data(), b.grad.data(), scratch_);
      break;
    }
    case LayerKind::maxpool2: {
      if (!need_dx) break;
      Tensor& dx = grad_of(src);
      for (int i = 0; i < n; ++i)
        kernels::maxpool2_backward(y.c, y.h, y.w, pool_index_[id].data() + i * y.image_stride(), dy.image(i),
                                   dx.image(i));
      break;
    }
    case LayerKind::resize_bicubic: {
      if (!need_dx) break;
      Tensor& dx = grad_of(src);
      for (int i = 0; i < n; ++i)
        kernels::resize_backward(x.c, x.h, x.w, y.h, y.w, resize_ry_[id], resize_rx_[id], dy.image(i), dx.image(i));
      break;
    }
    case LayerKind::concat: {
      std::size_t offset = 0;
      for (int in_id : node.inputs) {
        const Tensor& part = acts_[in_id];
        if (in_id != graph_.input) {
          Tensor& dpart = grad_of(in_id);
          for (int i = 0; i < n; ++i) {
            const double* s = dy.image(i) + offset;
            double* d = dpart.image(i);
            for (std::size_t k = 0; k < part.image_stride(); ++k) d[k] += s[k];
          }
        }
        offset += part.image_stride();
      }
      break;
    }
    case LayerKind::batchnorm: {
      auto& gamma = params_[slots_[id].weight];
      auto& beta = params_[slots_[id].bias];
      const auto& cache = bn_cache_[id];
      const std::size_t plane = x.plane();
      const double count = static_cast<double>(n) * plane;
      Tensor* dx = need_dx ? &grad_of(src) : nullptr;
      for (int c = 0; c < x.c; ++c) {
        const double mean = cache.mean[c];
        const double inv = cache.inv_std[c];
        double sum_dy = 0.0;
        double sum_dy_xhat = 0.0;
        for (int i = 0; i < n; ++i) {
          const double* p = x.image(i) + c * plane;
          const double* d = dy.image(i) + c * plane;
          for (std::size_t k = 0; k < plane; ++k) {
            sum_dy += d[k];
            sum_dy_xhat += d[k] * (p[k] - mean) * inv;
          }
        }
        gamma.grad[c] += sum_dy_xhat;
        beta.grad[c] += sum_dy;
        if (!dx) continue;
        const double gi = gamma.value[c] * inv;
        for (int i = 0; i < n; ++i) {
          const double* p = x.image(i) + c * plane;
          const double* d = dy.image(i) + c * plane;
          double* q = dx->image(i) + c * plane;
          if (last_mode_ == Mode::train) {
            for (std::size_t k = 0; k < plane; ++k) {
              const double xhat = (p[k] - mean) * inv;
              q[k] += gi * (d[k] - sum_dy / count - xhat * sum_dy_xhat / count);
            }
          } else {
            for (std::size_t k = 0; k < plane; ++k) q[k] += gi * d[k];
          }
        }
      }
      break;
    }
    case LayerKind::tanh: {
      if (!need_dx) break;
      Tensor& dx = grad_of(src);
      for (std::size_t k = 0; k < y.size(); ++k) dx.data[k] += dy.data[k] * (1.0 - y.data[k] * y.data[k]);
      break;
    }
    case LayerKind::softmax: {
      if (!need_dx) break;
      Tensor& dx = grad_of(src);
      const std::size_t plane = y.plane();
      for (int i = 0; i < n; ++i) {
        const double* p = y.image(i);
        const double* d = dy.image(i);
        double* q = dx.image(i);
        for (std::size_t s = 0; s < plane; ++s) {
          double dot = 0.0;
          for (int c = 0; c < y.c; ++c) dot += p[c * plane + s] * d[c * plane + s];
          for (int c = 0; c < y.c; ++c) q[c * plane + s] += p[c * plane + s] * (d[c * plane + s] - dot);
        }
      }
      break;
    }
    case LayerKind::dropout50: {
      if (!need_dx) break;
      Tensor& dx = grad_of(src);
      const auto& mask = dropout_mask_[id];
      if (mask.empty()) {
        for (std::size_t k = 0; k < dy.size(); ++k) dx.data[k] += dy.data[k];
      } else {
        for (std::size_t k = 0; k < dy.size(); ++k) dx.data[k] += mask[k] ? 2.0 * dy.data[k] : 0.0;
      }
      break;
    }
    case LayerKind::input: break;
  }
}

Tensor to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw InvalidArgument("cannot build a tensor from zero images");
  const Image& first = *images.front();
  Tensor t(static_cast<int>(images.size()), first.channels, first.height, first.width);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& im = *images[i];
    if (im.channels != first.channels || im.height != first.height || im.width != first.width)
      throw ShapeError("all images in a batch must share one shape");
    std::copy(im.data.begin(), im.data.end(), t.image(static_cast<int>(i)));
  }
  return t;
}

std::array<Image, 4> infer(Network& net, const Image& patch) {
  const Shape expected = net.graph().input_shape();
  if (patch.channels != expected.channels) {
    std::ostringstream msg;
    msg << "network expects " << expected.channels << " input channels, patch has " << patch.channels;
    throw ShapeError(msg.str());
  }
  if (patch.height != expected.height || patch.width != expected.width) {
    std::ostringstream msg;
    msg << "network expects a " << expected.height << "x" << expected.width << " patch, got " << patch.height << "x"
        << patch.width;
    throw ShapeError(msg.str());
  }
  const Outputs out = net.forward(to_tensor({&patch}), Mode::eval);
  std::array<Image, 4> maps;
  const Tensor* tensors[4] = {out.p_o, out.p_a1, out.p_a2, out.p_a3};
  for (int k = 0; k < 4; ++k) {
    maps[k] = Image(tensors[k]->c, tensors[k]->h, tensors[k]->w);
    std::copy(tensors[k]->data.begin(), tensors[k]->data.end(), maps[k].data.begin());
  }
  return maps;
}

}  // namespace micronet::nn
