#pragma once

// Declarative layer graph. Nodes are stored in topological order (a node's
// inputs always have smaller ids), so forward, backward and cost analysis
// are all plain sweeps over the same vector.

#include "linknet/ops.hpp"

#include <map>
#include <string>
#include <vector>

namespace linknet {

enum class NodeKind { Input, Conv, FullConv, BatchNorm, Relu, MaxPool, Add };

const char* kind_name(NodeKind kind);

using NodeId = int;

struct Node {
  std::string path;
  NodeKind kind = NodeKind::Input;
  std::vector<NodeId> inputs;
  ConvSpec conv;        // Conv, FullConv
  PoolSpec pool;        // MaxPool
  Index channels = 0;   // BatchNorm
  // FullConv only: node whose spatial size this output tracks when shapes
  // are inferred in ShapeMode::Fit (output_pad is re-chosen in [0, stride)).
  NodeId fit_to = -1;
};

enum class ParamRole { Weight, Bias, Gamma, Beta, RunningMean, RunningVar };

struct ParamInfo {
  std::string key;
  Shape shape;
  ParamRole role;
  NodeId node;
  Index fan_in = 0;  // weights only
  bool trainable() const { return role != ParamRole::RunningMean && role != ParamRole::RunningVar; }
};

// A named span of the graph, used for architecture summaries.
struct BlockInfo {
  std::string name;
  NodeId input;
  NodeId output;
};

class Graph {
 public:
  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  NodeId input() const { return 0; }
  NodeId output() const { return output_; }
  Index input_channels() const { return input_channels_; }
  // Spatial dims of inputs to `forward` must be multiples of this.
  Index spatial_multiple() const { return spatial_multiple_; }
  const std::vector<ParamInfo>& params() const { return params_; }
  const std::vector<BlockInfo>& blocks() const { return blocks_; }
  std::map<std::string, Shape> param_shapes() const;
  NodeId find(const std::string& path) const;

 private:
  friend class GraphBuilder;
  std::vector<Node> nodes_;
  std::vector<ParamInfo> params_;
  std::vector<BlockInfo> blocks_;
  NodeId output_ = 0;
  Index input_channels_ = 0;
  Index spatial_multiple_ = 1;
};

class GraphBuilder {
 public:
  explicit GraphBuilder(Index input_channels);

  NodeId input() const { return 0; }
  NodeId conv(const std::string& path, NodeId in, const ConvSpec& spec);
  NodeId full_conv(const std::string& path, NodeId in, const ConvSpec& spec, NodeId fit_to = -1);
  NodeId batchnorm(const std::string& path, NodeId in, Index channels);
  NodeId relu(const std::string& path, NodeId in);
  NodeId maxpool(const std::string& path, NodeId in, const PoolSpec& pool);
  NodeId add(const std::string& path, NodeId a, NodeId b);

  // conv -> batchnorm -> relu (relu optional); returns the last node.
  NodeId conv_bn(const std::string& prefix, NodeId in, const ConvSpec& spec, bool with_relu);
  NodeId full_conv_bn(const std::string& prefix, NodeId in, const ConvSpec& spec, bool with_relu,
                      NodeId fit_to = -1);

  void mark_block(std::string name, NodeId in, NodeId out);
  void set_spatial_multiple(Index m) { graph_.spatial_multiple_ = m; }

  Graph finish(NodeId output) &&;

 private:
  NodeId push(Node node);
  Graph graph_;
};

enum class ShapeMode {
  Strict,  // every layer uses its own spec; Add operands must agree
  Fit,     // full-convs with a fit target adjust output_pad to match it
};

/// Output shape of every node for the given input shape (N, C, H, W).
/// Throws ShapeError naming the offending node path.
std::vector<Shape> infer_shapes(const Graph& g, const Shape& input, ShapeMode mode = ShapeMode::Strict);

/// The spec a full-conv node runs with under `mode`, given inferred shapes.
ConvSpec effective_spec(const Graph& g, NodeId id, const std::vector<Shape>& shapes, ShapeMode mode);

}  // namespace linknet
