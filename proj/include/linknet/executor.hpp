#pragma once

// Forward and reverse sweeps over a Graph, templated on the scalar so the
// same code runs in float for training and in double for gradient checks.

#include "linknet/graph.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace linknet {

template <typename Scalar>
using ParamStore = std::map<std::string, Tensor<Scalar>>;

/// He-normal kernels (fan_in = Cin*kh*kw), gamma 1, beta 0, running mean 0,
/// running var 1, biases 0. Draws follow graph parameter order.
template <typename Scalar>
ParamStore<Scalar> init_params(const Graph& g, std::uint64_t seed) {
  Prng rng(seed);
  ParamStore<Scalar> store;
  for (const ParamInfo& p : g.params()) {
    switch (p.role) {
      case ParamRole::Weight: store.emplace(p.key, he_normal_init<Scalar>(rng, p.shape, p.fan_in)); break;
      case ParamRole::Gamma:
      case ParamRole::RunningVar: store.emplace(p.key, Tensor<Scalar>(p.shape, Scalar(1))); break;
      default: store.emplace(p.key, Tensor<Scalar>(p.shape, Scalar(0))); break;
    }
  }
  return store;
}

/// Throws unless `params` has exactly the graph's keys with matching shapes.
template <typename Scalar>
void check_params(const Graph& g, const ParamStore<Scalar>& params) {
  for (const ParamInfo& p : g.params()) {
    auto it = params.find(p.key);
    if (it == params.end()) throw ShapeError("missing parameter '" + p.key + "'");
    if (it->second.shape() != p.shape)
      throw ShapeError("parameter '" + p.key + "' has shape " + to_string(it->second.shape()) + ", expected " +
                       to_string(p.shape));
  }
  if (params.size() != g.params().size()) {
    for (const auto& [key, t] : params) {
      bool known = false;
      for (const ParamInfo& p : g.params()) known = known || p.key == key;
      if (!known) throw ShapeError("unexpected parameter '" + key + "'");
    }
  }
}

template <typename Scalar>
struct ForwardCache {
  Mode mode = Mode::Infer;
  std::vector<Tensor<Scalar>> values;  // output of every node (train mode)
  std::map<NodeId, BatchNormCache<Scalar>> batchnorm;
  std::map<NodeId, std::vector<Index>> argmax;
};

template <typename Scalar>
struct ForwardResult {
  Tensor<Scalar> logits;
  ForwardCache<Scalar> cache;
  ParamStore<Scalar> running_stats;  // updated running mean/var (train mode)
};

namespace detail {

template <typename Scalar>
BatchNormState<Scalar> bn_state(const ParamStore<Scalar>& params, const std::string& path) {
  return {params.at(path + ".gamma"), params.at(path + ".beta"), params.at(path + ".running_mean"),
          params.at(path + ".running_var")};
}

template <typename Scalar>
const Tensor<Scalar>* find_bias(const ParamStore<Scalar>& params, const Node& n) {
  if (!n.conv.has_bias) return nullptr;
  return &params.at(n.path + ".bias");
}

}  // namespace detail

/// Evaluates the graph on x (N, C, H, W). Train mode normalizes with batch
/// statistics, keeps every activation for `backward`, and returns the
/// updated running statistics; infer mode releases activations as soon as
/// their last consumer has run.
template <typename Scalar>
ForwardResult<Scalar> forward(const Graph& g, const ParamStore<Scalar>& params, const Tensor<Scalar>& x, Mode mode) {
  if (x.rank() != 4) throw ShapeError("forward: input must be rank 4, got " + to_string(x.shape()));
  const Index mult = g.spatial_multiple();
  if (x.dim(2) % mult != 0 || x.dim(3) % mult != 0)
    throw ShapeError("forward: input height and width must be divisible by " + std::to_string(mult) + ", got " +
                     to_string(x.shape()));
  if (x.dim(1) != g.input_channels())
    throw ShapeError("forward: input has " + std::to_string(x.dim(1)) + " channels, expected " +
                     std::to_string(g.input_channels()));

  const auto& nodes = g.nodes();
  const std::size_t count = nodes.size();
  ForwardResult<Scalar> r;
  r.cache.mode = mode;
  auto& values = r.cache.values;
  values.resize(count);
  values[0] = x;

  std::vector<int> remaining(count, 0);
  for (const Node& n : nodes)
    for (NodeId in : n.inputs) ++remaining[static_cast<std::size_t>(in)];
  ++remaining[static_cast<std::size_t>(g.output())];

  for (std::size_t i = 1; i < count; ++i) {
    const Node& n = nodes[i];
    const auto id = static_cast<NodeId>(i);
    const Tensor<Scalar>& in = values[static_cast<std::size_t>(n.inputs[0])];
    try {
      switch (n.kind) {
        case NodeKind::Conv:
          values[i] = conv2d(in, n.conv, params.at(n.path + ".weight"), detail::find_bias(params, n));
          break;
        case NodeKind::FullConv:
          values[i] = conv_transpose2d(in, n.conv, params.at(n.path + ".weight"), detail::find_bias(params, n));
          break;
        case NodeKind::BatchNorm: {
          auto bn = batchnorm2d(in, detail::bn_state(params, n.path), mode);
          values[i] = std::move(bn.y);
          if (mode == Mode::Train) {
            r.running_stats[n.path + ".running_mean"] = std::move(bn.state.running_mean);
            r.running_stats[n.path + ".running_var"] = std::move(bn.state.running_var);
            r.cache.batchnorm.emplace(id, std::move(bn.cache));
          }
          break;
        }
        case NodeKind::Relu:
          values[i] = relu(in);
          break;
        case NodeKind::MaxPool: {
          auto mp = maxpool2d(in, n.pool);
          values[i] = std::move(mp.y);
          if (mode == Mode::Train) r.cache.argmax.emplace(id, std::move(mp.argmax));
          break;
        }
        case NodeKind::Add:
          values[i] = add(in, values[static_cast<std::size_t>(n.inputs[1])]);
          break;
        case NodeKind::Input:
          throw ShapeError("unexpected input node");
      }
    } catch (const ShapeError& e) {
      throw ShapeError("node '" + n.path + "': " + e.what());
    } catch (const std::out_of_range&) {
      throw ShapeError("node '" + n.path + "': parameter missing from store");
    }
    if (mode == Mode::Infer) {
      for (NodeId in_id : n.inputs)
        if (--remaining[static_cast<std::size_t>(in_id)] == 0) values[static_cast<std::size_t>(in_id)] = {};
    }
  }
  r.logits = values[static_cast<std::size_t>(g.output())];
  if (mode == Mode::Infer) values.clear();
  return r;
}

/// Reverse sweep. Returns gradients for every trainable parameter (running
/// statistics excluded). Additions send the incoming gradient to both
/// operands.
template <typename Scalar>
ParamStore<Scalar> backward(const Graph& g, const ParamStore<Scalar>& params, const ForwardCache<Scalar>& cache,
                            const Tensor<Scalar>& grad_logits) {
  if (cache.mode != Mode::Train || cache.values.size() != g.nodes().size())
    throw std::invalid_argument("backward needs a train-mode forward cache");
  const auto& nodes = g.nodes();
  const auto& values = cache.values;
  require_same_shape(values[static_cast<std::size_t>(g.output())], grad_logits, "backward");

  ParamStore<Scalar> grads;
  for (const ParamInfo& p : g.params())
    if (p.trainable()) grads.emplace(p.key, Tensor<Scalar>(p.shape));

  std::vector<std::optional<Tensor<Scalar>>> node_grad(nodes.size());
  node_grad[static_cast<std::size_t>(g.output())] = grad_logits;
  auto accumulate = [&](NodeId id, Tensor<Scalar>&& gr) {
    auto& slot = node_grad[static_cast<std::size_t>(id)];
    if (slot)
      add_inplace(*slot, gr);
    else
      slot = std::move(gr);
  };

  for (std::size_t i = nodes.size(); i-- > 1;) {
    if (!node_grad[i]) continue;
    const Node& n = nodes[i];
    const auto id = static_cast<NodeId>(i);
    const Tensor<Scalar> go = std::move(*node_grad[i]);
    node_grad[i].reset();
    const NodeId in_id = n.inputs[0];
    const Tensor<Scalar>& in = values[static_cast<std::size_t>(in_id)];
    switch (n.kind) {
      case NodeKind::Conv:
      case NodeKind::FullConv: {
        const Tensor<Scalar>& w = params.at(n.path + ".weight");
        auto cg = n.kind == NodeKind::Conv ? conv2d_vjp(in, n.conv, w, go) : conv_transpose2d_vjp(in, n.conv, w, go);
        add_inplace(grads.at(n.path + ".weight"), cg.grad_weight);
        if (cg.grad_bias) add_inplace(grads.at(n.path + ".bias"), *cg.grad_bias);
        if (in_id != g.input()) accumulate(in_id, std::move(cg.grad_x));
        break;
      }
      case NodeKind::BatchNorm: {
        auto bg = batchnorm2d_vjp(cache.batchnorm.at(id), go);
        add_inplace(grads.at(n.path + ".gamma"), bg.grad_gamma);
        add_inplace(grads.at(n.path + ".beta"), bg.grad_beta);
        accumulate(in_id, std::move(bg.grad_x));
        break;
      }
      case NodeKind::Relu:
        accumulate(in_id, relu_vjp(in, go));
        break;
      case NodeKind::MaxPool:
        accumulate(in_id, maxpool2d_vjp(cache.argmax.at(id), go, in.shape()));
        break;
      case NodeKind::Add:
        accumulate(n.inputs[1], Tensor<Scalar>(go));
        accumulate(in_id, Tensor<Scalar>(go));
        break;
      case NodeKind::Input:
        break;
    }
  }
  return grads;
}

/// Copies updated running statistics from a train-mode forward into params.
template <typename Scalar>
void apply_running_stats(ParamStore<Scalar>& params, ParamStore<Scalar>&& stats) {
  for (auto& [key, t] : stats) params.at(key) = std::move(t);
}

}  // namespace linknet
