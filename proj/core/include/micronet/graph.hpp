#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace micronet::nn {

enum class LayerKind {
  input,
  conv3_valid,
  conv3_same,
  conv1,
  conv5_valid,
  maxpool2,
  resize_bicubic,
  concat,
  deconv2_s2,
  deconv5_s1,
  deconv_up,  // transposed conv with kernel == stride
  dropout50,
  batchnorm,
  tanh,
  softmax,
};

std::string_view to_string(LayerKind kind);

/// Kernel extent of a convolution/transposed-convolution kind (0 for parameter-free kinds).
int kernel_size(LayerKind kind, int stride = 1);
bool is_convolution(LayerKind kind);
bool is_deconvolution(LayerKind kind);
bool has_parameters(LayerKind kind);

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

struct LayerNode {
  std::string name;
  LayerKind kind = LayerKind::input;
  std::vector<int> inputs;
  int channels_out = 0;
  int group = 0;   // 1..5; 0 only for the raw input
  int branch = 0;  // 1..14; 0 only for the raw input
  int stride = 1;  // deconv_up upsampling factor
  int target_height = 0;  // resize_bicubic destination
  int target_width = 0;
  Shape shape;     // inferred output shape
};

enum class VariantName { micronet252, micronet508, micronet_minus };

std::string to_string(VariantName v);
VariantName parse_variant(const std::string& name);

/// Crop (= network input and output) size of a variant: 252 or 508.
int crop_size(VariantName v);

struct NetVariant {
  VariantName name = VariantName::micronet252;
  int in_channels = 2;
  double width_multiplier = 1.0;

  /// Channel count after width scaling, floored at 4.
  int scaled(int nominal_channels) const;
  void validate() const;
};

/// Declarative description of one network variant. Nodes are stored in a
/// topological order: every input index is smaller than the node's own index.
struct LayerGraph {
  NetVariant variant;
  int crop = 0;
  std::vector<LayerNode> nodes;
  int input = 0;
  std::array<int, 4> outputs{};  // p_o, p_a1, p_a2, p_a3

  const LayerNode& node(int id) const { return nodes.at(static_cast<std::size_t>(id)); }
  Shape input_shape() const { return nodes.at(static_cast<std::size_t>(input)).shape; }
  int group_count() const;
  int branch_count() const;
  /// Index of the node with the given name; throws if absent.
  int find(std::string_view name) const;
};

/// Number of trainable scalars of one node (weights + bias, or BN scale + shift).
std::int64_t param_count(const LayerGraph& graph, const LayerNode& node);
std::int64_t param_count(const LayerGraph& graph);

/// Reference to a node together with its inferred output shape.
struct ShapedNode {
  int id = -1;
  Shape shape;
};

/// Incremental graph construction with shape inference and consistency checks.
class GraphBuilder {
 public:
  explicit GraphBuilder(NetVariant variant, int crop);

  ShapedNode add_input();
  ShapedNode add(LayerKind kind, std::vector<ShapedNode> inputs, int channels_out, int group, int branch,
                 std::string name, int stride = 1);
  ShapedNode add_resize(ShapedNode input, int target_height, int target_width, int group, int branch,
                        std::string name);
  void set_outputs(ShapedNode p_o, ShapedNode p_a1, ShapedNode p_a2, ShapedNode p_a3);

  const NetVariant& variant() const { return graph_.variant; }
  int crop() const { return graph_.crop; }
  LayerGraph finish() &&;

 private:
  Shape infer(const LayerNode& node) const;
  LayerGraph graph_;
  bool outputs_set_ = false;
};

struct OutputHeads {
  ShapedNode p_o;
  ShapedNode p_a1;
  ShapedNode p_a2;
  ShapedNode p_a3;
};

// Branch builders. `branch` arguments are the 1-based branch numbers used for node
// naming and grouping.
ShapedNode build_down_branch(GraphBuilder& b, int idx, ShapedNode prev, ShapedNode raw_input);
ShapedNode build_bridge(GraphBuilder& b, ShapedNode prev);
ShapedNode build_up_branch(GraphBuilder& b, int branch, int nominal_depth, ShapedNode prev, ShapedNode skip);
OutputHeads build_outputs(GraphBuilder& b, int first_branch, ShapedNode b7, ShapedNode b8, ShapedNode b9);

LayerGraph build_variant(const NetVariant& variant);

}  // namespace micronet::nn
