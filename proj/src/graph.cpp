#include "linknet/graph.hpp"

#include <set>

namespace linknet {

const char* kind_name(NodeKind kind) {
  switch (kind) {
    case NodeKind::Input: return "input";
    case NodeKind::Conv: return "conv";
    case NodeKind::FullConv: return "full-conv";
    case NodeKind::BatchNorm: return "batchnorm";
    case NodeKind::Relu: return "relu";
    case NodeKind::MaxPool: return "maxpool";
    case NodeKind::Add: return "add";
  }
  return "?";
}

std::map<std::string, Shape> Graph::param_shapes() const {
  std::map<std::string, Shape> out;
  for (const ParamInfo& p : params_) out.emplace(p.key, p.shape);
  return out;
}

NodeId Graph::find(const std::string& path) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].path == path) return static_cast<NodeId>(i);
  throw std::out_of_range("no graph node named '" + path + "'");
}

GraphBuilder::GraphBuilder(Index input_channels) {
  if (input_channels < 1) throw ShapeError("graph input needs >= 1 channel");
  graph_.input_channels_ = input_channels;
  Node in;
  in.path = "input";
  in.kind = NodeKind::Input;
  graph_.nodes_.push_back(std::move(in));
}

NodeId GraphBuilder::push(Node node) {
  const auto id = static_cast<NodeId>(graph_.nodes_.size());
  for (NodeId in : node.inputs)
    if (in < 0 || in >= id) throw std::invalid_argument("node '" + node.path + "' references a later node");
  for (const Node& existing : graph_.nodes_)
    if (existing.path == node.path) throw std::invalid_argument("duplicate node path '" + node.path + "'");

  const std::string& p = node.path;
  switch (node.kind) {
    case NodeKind::Conv:
    case NodeKind::FullConv: {
      const ConvSpec& s = node.conv;
      validate(s, node.kind == NodeKind::FullConv);
      Shape w = node.kind == NodeKind::Conv ? Shape{s.out_channels, s.in_channels, s.kernel.h, s.kernel.w}
                                            : Shape{s.in_channels, s.out_channels, s.kernel.h, s.kernel.w};
      graph_.params_.push_back({p + ".weight", w, ParamRole::Weight, id, s.in_channels * s.kernel.h * s.kernel.w});
      if (s.has_bias) graph_.params_.push_back({p + ".bias", {s.out_channels}, ParamRole::Bias, id});
      break;
    }
    case NodeKind::BatchNorm:
      if (node.channels < 1) throw ShapeError("batchnorm '" + p + "' needs >= 1 channel");
      graph_.params_.push_back({p + ".gamma", {node.channels}, ParamRole::Gamma, id});
      graph_.params_.push_back({p + ".beta", {node.channels}, ParamRole::Beta, id});
      graph_.params_.push_back({p + ".running_mean", {node.channels}, ParamRole::RunningMean, id});
      graph_.params_.push_back({p + ".running_var", {node.channels}, ParamRole::RunningVar, id});
      break;
    default:
      break;
  }
  graph_.nodes_.push_back(std::move(node));
  return id;
}

NodeId GraphBuilder::conv(const std::string& path, NodeId in, const ConvSpec& spec) {
  Node n;
  n.path = path;
  n.kind = NodeKind::Conv;
  n.inputs = {in};
  n.conv = spec;
  return push(std::move(n));
}

NodeId GraphBuilder::full_conv(const std::string& path, NodeId in, const ConvSpec& spec, NodeId fit_to) {
  Node n;
  n.path = path;
  n.kind = NodeKind::FullConv;
  n.inputs = {in};
  n.conv = spec;
  n.fit_to = fit_to;
  return push(std::move(n));
}

NodeId GraphBuilder::batchnorm(const std::string& path, NodeId in, Index channels) {
  Node n;
  n.path = path;
  n.kind = NodeKind::BatchNorm;
  n.inputs = {in};
  n.channels = channels;
  return push(std::move(n));
}

NodeId GraphBuilder::relu(const std::string& path, NodeId in) {
  Node n;
  n.path = path;
  n.kind = NodeKind::Relu;
  n.inputs = {in};
  return push(std::move(n));
}

NodeId GraphBuilder::maxpool(const std::string& path, NodeId in, const PoolSpec& pool) {
  Node n;
  n.path = path;
  n.kind = NodeKind::MaxPool;
  n.inputs = {in};
  n.pool = pool;
  return push(std::move(n));
}

NodeId GraphBuilder::add(const std::string& path, NodeId a, NodeId b) {
  Node n;
  n.path = path;
  n.kind = NodeKind::Add;
  n.inputs = {a, b};
  return push(std::move(n));
}

NodeId GraphBuilder::conv_bn(const std::string& prefix, NodeId in, const ConvSpec& spec, bool with_relu) {
  NodeId x = conv(prefix, in, spec);
  x = batchnorm(prefix + "_bn", x, spec.out_channels);
  return with_relu ? relu(prefix + "_relu", x) : x;
}

NodeId GraphBuilder::full_conv_bn(const std::string& prefix, NodeId in, const ConvSpec& spec, bool with_relu,
                                  NodeId fit_to) {
  NodeId x = full_conv(prefix, in, spec, fit_to);
  x = batchnorm(prefix + "_bn", x, spec.out_channels);
  return with_relu ? relu(prefix + "_relu", x) : x;
}

void GraphBuilder::mark_block(std::string name, NodeId in, NodeId out) {
  graph_.blocks_.push_back({std::move(name), in, out});
}

Graph GraphBuilder::finish(NodeId output) && {
  if (output < 0 || output >= static_cast<NodeId>(graph_.nodes_.size()))
    throw std::invalid_argument("graph output node out of range");
  graph_.output_ = output;
  return std::move(graph_);
}

ConvSpec effective_spec(const Graph& g, NodeId id, const std::vector<Shape>& shapes, ShapeMode mode) {
  const Node& n = g.node(id);
  ConvSpec s = n.conv;
  if (n.kind != NodeKind::FullConv || mode != ShapeMode::Fit || n.fit_to < 0) return s;
  const Shape& in = shapes.at(static_cast<std::size_t>(n.inputs[0]));
  const Shape& target = shapes.at(static_cast<std::size_t>(n.fit_to));
  const Index base_h = (in[2] - 1) * s.stride.h - 2 * s.pad.h + s.kernel.h;
  const Index base_w = (in[3] - 1) * s.stride.w - 2 * s.pad.w + s.kernel.w;
  s.output_pad = {target[2] - base_h, target[3] - base_w};
  if (s.output_pad.h < 0 || s.output_pad.h >= s.stride.h || s.output_pad.w < 0 || s.output_pad.w >= s.stride.w)
    throw ShapeError("node '" + n.path + "': cannot fit output of " + to_string(in) + " to spatial size of " +
                     to_string(target));
  return s;
}

std::vector<Shape> infer_shapes(const Graph& g, const Shape& input, ShapeMode mode) {
  if (input.size() != 4) throw ShapeError("graph input must be rank 4 (N,C,H,W), got " + to_string(input));
  element_count(input);
  if (input[1] != g.input_channels())
    throw ShapeError("graph input has " + std::to_string(input[1]) + " channels, expected " +
                     std::to_string(g.input_channels()));
  std::vector<Shape> shapes(g.nodes().size());
  shapes[0] = input;
  for (std::size_t i = 1; i < g.nodes().size(); ++i) {
    const Node& n = g.nodes()[i];
    const Shape& in = shapes[static_cast<std::size_t>(n.inputs[0])];
    try {
      switch (n.kind) {
        case NodeKind::Conv: {
          if (in[1] != n.conv.in_channels)
            throw ShapeError("expects " + std::to_string(n.conv.in_channels) + " input channels, got " +
                             to_string(in));
          const Extent2 o = conv_output_hw(n.conv, in[2], in[3]);
          shapes[i] = {in[0], n.conv.out_channels, o.h, o.w};
          break;
        }
        case NodeKind::FullConv: {
          if (in[1] != n.conv.in_channels)
            throw ShapeError("expects " + std::to_string(n.conv.in_channels) + " input channels, got " +
                             to_string(in));
          const ConvSpec s = effective_spec(g, static_cast<NodeId>(i), shapes, mode);
          const Extent2 o = conv_transpose_output_hw(s, in[2], in[3]);
          shapes[i] = {in[0], s.out_channels, o.h, o.w};
          break;
        }
        case NodeKind::BatchNorm:
          if (in[1] != n.channels)
            throw ShapeError("expects " + std::to_string(n.channels) + " channels, got " + to_string(in));
          shapes[i] = in;
          break;
        case NodeKind::Relu:
          shapes[i] = in;
          break;
        case NodeKind::MaxPool: {
          const Extent2 o = pool_output_hw(n.pool, in[2], in[3]);
          shapes[i] = {in[0], in[1], o.h, o.w};
          break;
        }
        case NodeKind::Add: {
          const Shape& other = shapes[static_cast<std::size_t>(n.inputs[1])];
          if (in != other) throw ShapeError("operand shapes differ: " + to_string(in) + " vs " + to_string(other));
          shapes[i] = in;
          break;
        }
        case NodeKind::Input:
          throw ShapeError("second input node");
      }
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      if (msg.rfind("node '", 0) == 0) throw;
      throw ShapeError("node '" + n.path + "': " + msg);
    }
  }
  return shapes;
}

}  // namespace linknet
