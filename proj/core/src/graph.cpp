#include "micronet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "micronet/errors.hpp"

namespace micronet::nn {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::input: return "input";
    case LayerKind::conv3_valid: return "conv3_valid";
    case LayerKind::conv3_same: return "conv3_same";
    case LayerKind::conv1: return "conv1";
    case LayerKind::conv5_valid: return "conv5_valid";
    case LayerKind::maxpool2: return "maxpool2";
    case LayerKind::resize_bicubic: return "resize_bicubic";
    case LayerKind::concat: return "concat";
    case LayerKind::deconv2_s2: return "deconv2_s2";
    case LayerKind::deconv5_s1: return "deconv5_s1";
    case LayerKind::deconv_up: return "deconv_up_k_sk";
    case LayerKind::dropout50: return "dropout50";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::tanh: return "tanh";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

int kernel_size(LayerKind kind, int stride) {
  switch (kind) {
    case LayerKind::conv3_valid:
    case LayerKind::conv3_same: return 3;
    case LayerKind::conv1: return 1;
    case LayerKind::conv5_valid:
    case LayerKind::deconv5_s1: return 5;
    case LayerKind::deconv2_s2: return 2;
    case LayerKind::deconv_up: return stride;
    default: return 0;
  }
}

bool is_convolution(LayerKind kind) {
  return kind == LayerKind::conv3_valid || kind == LayerKind::conv3_same || kind == LayerKind::conv1 ||
         kind == LayerKind::conv5_valid;
}

bool is_deconvolution(LayerKind kind) {
  return kind == LayerKind::deconv2_s2 || kind == LayerKind::deconv5_s1 || kind == LayerKind::deconv_up;
}

bool has_parameters(LayerKind kind) {
  return is_convolution(kind) || is_deconvolution(kind) || kind == LayerKind::batchnorm;
}

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << s.height << "x" << s.width << "x" << s.channels;
  return os.str();
}

std::string to_string(VariantName v) {
  switch (v) {
    case VariantName::micronet252: return "micronet252";
    case VariantName::micronet508: return "micronet508";
    case VariantName::micronet_minus: return "micronet_minus";
  }
  return "?";
}

VariantName parse_variant(const std::string& name) {
  if (name == "micronet252") return VariantName::micronet252;
  if (name == "micronet508") return VariantName::micronet508;
  if (name == "micronet_minus") return VariantName::micronet_minus;
  throw InvalidArgument("unknown network variant '" + name + "'");
}

int crop_size(VariantName v) { return v == VariantName::micronet508 ? 508 : 252; }

int NetVariant::scaled(int nominal_channels) const {
  return std::max(4, static_cast<int>(std::lround(nominal_channels * width_multiplier)));
}

void NetVariant::validate() const {
  if (in_channels < 1) throw InvalidArgument("in_channels must be positive");
  if (!(width_multiplier > 0.0) || !std::isfinite(width_multiplier))
    throw InvalidArgument("width_multiplier must be a positive finite number");
}

int LayerGraph::group_count() const {
  std::set<int> groups;
  for (const auto& n : nodes)
    if (n.group > 0) groups.insert(n.group);
  return static_cast<int>(groups.size());
}

int LayerGraph::branch_count() const {
  std::set<int> branches;
  for (const auto& n : nodes)
    if (n.branch > 0) branches.insert(n.branch);
  return static_cast<int>(branches.size());
}

int LayerGraph::find(std::string_view name) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].name == name) return static_cast<int>(i);
  throw InvalidArgument("no node named '" + std::string(name) + "'");
}

std::int64_t param_count(const LayerGraph& graph, const LayerNode& node) {
  if (node.kind == LayerKind::batchnorm) return 2LL * node.shape.channels;
  if (!is_convolution(node.kind) && !is_deconvolution(node.kind)) return 0;
  const auto k = static_cast<std::int64_t>(kernel_size(node.kind, node.stride));
  const auto ci = static_cast<std::int64_t>(graph.node(node.inputs.at(0)).shape.channels);
  const auto co = static_cast<std::int64_t>(node.channels_out);
  return ci * co * k * k + co;
}

std::int64_t param_count(const LayerGraph& graph) {
  std::int64_t total = 0;
  for (const auto& n : graph.nodes) total += param_count(graph, n);
  return total;
}

GraphBuilder::GraphBuilder(NetVariant variant, int crop) {
  variant.validate();
  graph_.variant = variant;
  graph_.crop = crop;
}

ShapedNode GraphBuilder::add_input() {
  LayerNode n;
  n.name = "input";
  n.kind = LayerKind::input;
  n.channels_out = graph_.variant.in_channels;
  n.shape = {graph_.variant.in_channels, graph_.crop, graph_.crop};
  graph_.nodes.push_back(n);
  graph_.input = static_cast<int>(graph_.nodes.size()) - 1;
  return {graph_.input, n.shape};
}

Shape GraphBuilder::infer(const LayerNode& node) const {
  if (node.inputs.empty()) throw ShapeError(node.name + ": node has no inputs");
  const Shape in = graph_.nodes.at(node.inputs[0]).shape;
  Shape out{node.channels_out, in.height, in.width};
  switch (node.kind) {
    case LayerKind::conv3_valid: out.height -= 2; out.width -= 2; break;
    case LayerKind::conv5_valid: out.height -= 4; out.width -= 4; break;
    case LayerKind::conv3_same:
    case LayerKind::conv1: break;
    case LayerKind::maxpool2: out.height /= 2; out.width /= 2; break;
    case LayerKind::resize_bicubic: out.height = node.target_height; out.width = node.target_width; break;
    case LayerKind::deconv2_s2: out.height *= 2; out.width *= 2; break;
    case LayerKind::deconv5_s1: out.height += 4; out.width += 4; break;
    case LayerKind::deconv_up: out.height *= node.stride; out.width *= node.stride; break;
    case LayerKind::concat: {
      out.channels = 0;
      for (int id : node.inputs) {
        const Shape s = graph_.nodes.at(id).shape;
        if (s.height != in.height || s.width != in.width)
          throw ShapeError(node.name + ": concat inputs disagree spatially (" + to_string(in) + " vs " +
                           to_string(s) + ")");
        out.channels += s.channels;
      }
      break;
    }
    case LayerKind::dropout50:
    case LayerKind::batchnorm:
    case LayerKind::tanh:
    case LayerKind::softmax: break;
    case LayerKind::input: throw ShapeError("input nodes are added with add_input()");
  }
  if (out.height <= 0 || out.width <= 0 || out.channels <= 0)
    throw ShapeError(node.name + ": non-positive output shape " + to_string(out));
  return out;
}

ShapedNode GraphBuilder::add(LayerKind kind, std::vector<ShapedNode> inputs, int channels_out, int group,
                             int branch, std::string name, int stride) {
  LayerNode n;
  n.name = std::move(name);
  n.kind = kind;
  n.group = group;
  n.branch = branch;
  n.stride = stride;
  for (const auto& in : inputs) {
    if (in.id < 0 || in.id >= static_cast<int>(graph_.nodes.size()))
      throw ShapeError(n.name + ": input refers to a node not yet in the graph");
    n.inputs.push_back(in.id);
  }
  if (!has_parameters(kind) || kind == LayerKind::batchnorm)
    channels_out = kind == LayerKind::concat ? 0 : graph_.nodes.at(n.inputs.at(0)).shape.channels;
  n.channels_out = channels_out;
  if (kind == LayerKind::deconv_up && stride < 1) throw InvalidArgument(n.name + ": stride must be >= 1");
  n.shape = infer(n);
  if (kind == LayerKind::concat) n.channels_out = n.shape.channels;
  graph_.nodes.push_back(std::move(n));
  const int id = static_cast<int>(graph_.nodes.size()) - 1;
  return {id, graph_.nodes.back().shape};
}

ShapedNode GraphBuilder::add_resize(ShapedNode input, int target_height, int target_width, int group, int branch,
                                    std::string name) {
  LayerNode n;
  n.name = std::move(name);
  n.kind = LayerKind::resize_bicubic;
  n.group = group;
  n.branch = branch;
  n.inputs = {input.id};
  n.channels_out = input.shape.channels;
  n.target_height = target_height;
  n.target_width = target_width;
  n.shape = infer(n);
  graph_.nodes.push_back(std::move(n));
  const int id = static_cast<int>(graph_.nodes.size()) - 1;
  return {id, graph_.nodes.back().shape};
}

void GraphBuilder::set_outputs(ShapedNode p_o, ShapedNode p_a1, ShapedNode p_a2, ShapedNode p_a3) {
  graph_.outputs = {p_o.id, p_a1.id, p_a2.id, p_a3.id};
  outputs_set_ = true;
}

LayerGraph GraphBuilder::finish() && {
  if (!outputs_set_) throw ShapeError("graph outputs were never set");
  const Shape expected{2, graph_.crop, graph_.crop};
  for (int id : graph_.outputs) {
    const auto& n = graph_.nodes.at(id);
    if (n.shape != expected)
      throw ShapeError("output " + n.name + " has shape " + to_string(n.shape) + ", expected " +
                       to_string(expected));
  }
  return std::move(graph_);
}

namespace {

std::string node_name(int branch, const std::string& role) { return "b" + std::to_string(branch) + "/" + role; }

// conv -> tanh -> conv -> tanh
ShapedNode double_conv(GraphBuilder& b, LayerKind kind, ShapedNode x, int channels, int group, int branch,
                       const std::string& prefix) {
  x = b.add(kind, {x}, channels, group, branch, node_name(branch, prefix + "conv_a"));
  x = b.add(LayerKind::tanh, {x}, 0, group, branch, node_name(branch, prefix + "tanh_a"));
  x = b.add(kind, {x}, channels, group, branch, node_name(branch, prefix + "conv_b"));
  return b.add(LayerKind::tanh, {x}, 0, group, branch, node_name(branch, prefix + "tanh_b"));
}

}  // namespace

ShapedNode build_down_branch(GraphBuilder& b, int idx, ShapedNode prev, ShapedNode raw_input) {
  if (idx < 1 || idx > 4) throw InvalidArgument("down branch index must be in 1..4");
  const auto& v = b.variant();
  const int half_depth = v.scaled(64 << (idx - 1));
  constexpr int group = 1;

  ShapedNode pooled = double_conv(b, LayerKind::conv3_valid, prev, half_depth, group, idx, "pool_");
  if (pooled.shape.height % 2 != 0 || pooled.shape.width % 2 != 0)
    throw ShapeError(node_name(idx, "pool") + ": odd spatial size " + to_string(pooled.shape) + " before max-pooling");
  pooled = b.add(LayerKind::maxpool2, {pooled}, 0, group, idx, node_name(idx, "pool"));
  if (v.name == VariantName::micronet_minus) return pooled;

  // Bypass path: resized raw input, sized so two valid convs land on the pooled size.
  const int th = pooled.shape.height + 4;
  const int tw = pooled.shape.width + 4;
  ShapedNode bypass = b.add_resize(raw_input, th, tw, group, idx, node_name(idx, "resize"));
  bypass = b.add(LayerKind::batchnorm, {bypass}, 0, group, idx, node_name(idx, "resize_bn"));
  bypass = double_conv(b, LayerKind::conv3_valid, bypass, half_depth, group, idx, "bypass_");
  if (bypass.shape.height != pooled.shape.height || bypass.shape.width != pooled.shape.width)
    throw ShapeError(node_name(idx, "concat") + ": bypass " + to_string(bypass.shape) + " vs pooled " +
                     to_string(pooled.shape));
  return b.add(LayerKind::concat, {pooled, bypass}, 0, group, idx, node_name(idx, "concat"));
}

ShapedNode build_bridge(GraphBuilder& b, ShapedNode prev) {
  const auto& v = b.variant();
  const int depth = v.scaled(2048);
  constexpr int group = 2;
  constexpr int branch = 5;
  ShapedNode x = prev;
  if (v.name == VariantName::micronet508) {
    x = double_conv(b, LayerKind::conv3_valid, x, depth, group, branch, "pre_");
    if (x.shape.height % 2 != 0) throw ShapeError("bridge: odd spatial size before pooling");
    x = b.add(LayerKind::maxpool2, {x}, 0, group, branch, node_name(branch, "pool"));
  }
  x = double_conv(b, LayerKind::conv3_valid, x, depth, group, branch, "");
  if (x.shape.height != 8 || x.shape.width != 8)
    throw ShapeError("bridge: minimum feature map is " + to_string(x.shape) + ", expected 8x8");
  if (v.name == VariantName::micronet508) {
    constexpr int extra = 6;
    x = b.add(LayerKind::deconv2_s2, {x}, depth, group, extra, node_name(extra, "deconv"));
    x = double_conv(b, LayerKind::conv3_same, x, depth, group, extra, "");
  }
  return x;
}

ShapedNode build_up_branch(GraphBuilder& b, int branch, int nominal_depth, ShapedNode prev, ShapedNode skip) {
  const auto& v = b.variant();
  const int depth = v.scaled(nominal_depth);
  constexpr int group = 3;
  ShapedNode up = b.add(LayerKind::deconv2_s2, {prev}, depth, group, branch, node_name(branch, "deconv"));
  ShapedNode side =
      b.add(LayerKind::deconv5_s1, {skip}, skip.shape.channels, group, branch, node_name(branch, "skip_deconv"));
  if (up.shape.height != side.shape.height || up.shape.width != side.shape.width)
    throw ShapeError(node_name(branch, "concat") + ": upsampled " + to_string(up.shape) + " vs skip " +
                     to_string(side.shape));
  ShapedNode x = b.add(LayerKind::concat, {up, side}, 0, group, branch, node_name(branch, "concat"));
  return double_conv(b, LayerKind::conv3_same, x, depth, group, branch, "");
}

OutputHeads build_outputs(GraphBuilder& b, int first_branch, ShapedNode b7, ShapedNode b8, ShapedNode b9) {
  const auto& v = b.variant();
  const int crop = b.crop();
  const int mask_depth = v.scaled(64);
  const std::array<ShapedNode, 3> sources{b7, b8, b9};
  const std::array<int, 3> strides{8, 4, 2};
  std::array<ShapedNode, 3> masks;
  std::array<ShapedNode, 3> probs;
  for (int i = 0; i < 3; ++i) {
    const int branch = first_branch + i;
    constexpr int group = 4;
    const std::string tag = "aux" + std::to_string(i + 1) + "_";
    ShapedNode x = b.add(LayerKind::deconv_up, {sources[i]}, mask_depth, group, branch,
                         node_name(branch, tag + "deconv"), strides[i]);
    if (x.shape.height - 4 != crop || x.shape.width - 4 != crop)
      throw ShapeError(node_name(branch, tag + "deconv") + ": upsampled to " + to_string(x.shape) +
                       ", expected crop + 4");
    x = b.add(LayerKind::conv5_valid, {x}, mask_depth, group, branch, node_name(branch, tag + "conv"));
    masks[i] = b.add(LayerKind::tanh, {x}, 0, group, branch, node_name(branch, tag + "mask"));
    x = b.add(LayerKind::dropout50, {masks[i]}, 0, group, branch, node_name(branch, tag + "dropout"));
    x = b.add(LayerKind::conv1, {x}, 2, group, branch, node_name(branch, tag + "logits"));
    probs[i] = b.add(LayerKind::softmax, {x}, 0, group, branch, node_name(branch, tag + "softmax"));
  }
  const int main_branch = first_branch + 3;
  constexpr int group = 5;
  ShapedNode x = b.add(LayerKind::concat, {masks[0], masks[1], masks[2]}, 0, group, main_branch,
                       node_name(main_branch, "concat"));
  x = b.add(LayerKind::conv3_same, {x}, mask_depth, group, main_branch, node_name(main_branch, "conv"));
  x = b.add(LayerKind::tanh, {x}, 0, group, main_branch, node_name(main_branch, "tanh"));
  x = b.add(LayerKind::conv1, {x}, 2, group, main_branch, node_name(main_branch, "logits"));
  ShapedNode p_o = b.add(LayerKind::softmax, {x}, 0, group, main_branch, node_name(main_branch, "softmax"));
  return {p_o, probs[0], probs[1], probs[2]};
}

LayerGraph build_variant(const NetVariant& variant) {
  variant.validate();
  GraphBuilder b(variant, crop_size(variant.name));
  const ShapedNode raw = b.add_input();
  ShapedNode x = b.add(LayerKind::batchnorm, {raw}, 0, 1, 1, "b1/input_bn");

  std::array<ShapedNode, 4> down;
  for (int i = 0; i < 4; ++i) {
    x = build_down_branch(b, i + 1, x, raw);
    down[i] = x;
  }
  x = build_bridge(b, x);

  int branch = variant.name == VariantName::micronet508 ? 7 : 6;
  std::array<ShapedNode, 4> up;
  for (int i = 0; i < 4; ++i) {
    x = build_up_branch(b, branch++, 1024 >> i, x, down[3 - i]);
    up[i] = x;
  }
  const OutputHeads heads = build_outputs(b, branch, up[1], up[2], up[3]);
  b.set_outputs(heads.p_o, heads.p_a1, heads.p_a2, heads.p_a3);
  return std::move(b).finish();
}

}  // namespace micronet::nn
