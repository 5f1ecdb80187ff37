#ifndef LFHN_GRAPH_HPP
#define LFHN_GRAPH_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "layers.hpp"

namespace lfhn {

enum class OpKind { input, conv, relu, maxpool, lrn, concat, flatten, fc };

inline const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::input: return "input";
    case OpKind::conv: return "conv";
    case OpKind::relu: return "relu";
    case OpKind::maxpool: return "maxpool";
    case OpKind::lrn: return "lrn";
    case OpKind::concat: return "concat";
    case OpKind::flatten: return "flatten";
    case OpKind::fc: return "fc";
  }
  return "?";
}

using NodeId = std::size_t;

struct Node {
  std::string name;
  OpKind kind = OpKind::input;
  std::vector<NodeId> inputs;
  Shape out_shape;  // per sample, without the batch axis

  // conv / maxpool geometry
  std::size_t window_h = 0, window_w = 0, stride = 1, pad = 0;
  LrnParams lrn;
  // parameter names, empty for parameter-free ops
  std::string weight;
  std::string bias;
};

struct Parameter {
  std::string name;
  std::string group;  // owning node; the unit of freezing
  Shape shape;
  std::size_t fan_in = 1;
  Tensor value;
};

using GradientRegistry = std::map<std::string, Tensor>;

/// Directed acyclic graph of layer ops. Nodes can only consume nodes that
/// already exist, so insertion order is a topological order.
class NetworkGraph {
 public:
  NodeId add_input(const std::string& name, Shape sample_shape) {
    if (!nodes_.empty()) detail::raise<config_error>("graph: input must be the first node");
    Node n{name, OpKind::input, {}, std::move(sample_shape)};
    for (std::size_t e : n.out_shape)
      if (e == 0) detail::raise<config_error>(name, ": zero input extent");
    return push(std::move(n));
  }

  NodeId add_conv(const std::string& name, NodeId in, std::size_t kh, std::size_t kw, std::size_t out_channels,
                  std::size_t stride = 1, std::size_t pad = 0) {
    const Shape& s = spatial_input(name, in);
    if (out_channels == 0) detail::raise<config_error>(name, ": zero output channels");
    Node n{name, OpKind::conv, {in}, {}};
    n.window_h = kh;
    n.window_w = kw;
    n.stride = stride;
    n.pad = pad;
    n.out_shape = {window_output_extent(s[0], kh, stride, pad, name + " height"),
                   window_output_extent(s[1], kw, stride, pad, name + " width"), out_channels};
    n.weight = name + ".kernel";
    n.bias = name + ".bias";
    add_parameter(n.weight, name, {kh, kw, s[2], out_channels}, kh * kw * s[2]);
    add_parameter(n.bias, name, {out_channels}, 0);
    return push(std::move(n));
  }

  NodeId add_relu(const std::string& name, NodeId in) {
    return push(Node{name, OpKind::relu, {in}, node(in).out_shape});
  }

  NodeId add_maxpool(const std::string& name, NodeId in, std::size_t window = 3, std::size_t stride = 2) {
    const Shape& s = spatial_input(name, in);
    Node n{name, OpKind::maxpool, {in}, {}};
    n.window_h = n.window_w = window;
    n.stride = stride;
    n.out_shape = {window_output_extent(s[0], window, stride, 0, name + " height"),
                   window_output_extent(s[1], window, stride, 0, name + " width"), s[2]};
    return push(std::move(n));
  }

  NodeId add_lrn(const std::string& name, NodeId in, const LrnParams& params) {
    params.validate();
    Node n{name, OpKind::lrn, {in}, spatial_input(name, in)};
    n.lrn = params;
    return push(std::move(n));
  }

  NodeId add_concat(const std::string& name, const std::vector<NodeId>& inputs) {
    if (inputs.empty()) detail::raise<config_error>(name, ": concat needs at least one input");
    Shape out = spatial_input(name, inputs.front());
    out[2] = 0;
    for (NodeId id : inputs) {
      const Shape& s = spatial_input(name, id);
      if (s[0] != out[0] || s[1] != out[1])
        detail::raise<shape_error>(name, ": spatial mismatch ", to_string(node(inputs.front()).out_shape), " vs ",
                                   to_string(s));
      out[2] += s[2];
    }
    return push(Node{name, OpKind::concat, inputs, out});
  }

  NodeId add_flatten(const std::string& name, NodeId in) {
    return push(Node{name, OpKind::flatten, {in}, {shape_size(node(in).out_shape)}});
  }

  NodeId add_fc(const std::string& name, NodeId in, std::size_t out_features) {
    const Shape& s = node(in).out_shape;
    if (s.size() != 1) detail::raise<shape_error>(name, ": fc expects a flat input, got ", to_string(s));
    if (out_features == 0) detail::raise<config_error>(name, ": zero output features");
    Node n{name, OpKind::fc, {in}, {out_features}};
    n.weight = name + ".weight";
    n.bias = name + ".bias";
    add_parameter(n.weight, name, {s[0], out_features}, s[0]);
    add_parameter(n.bias, name, {out_features}, 0);
    return push(std::move(n));
  }

  /// He initialization: weights ~ N(0, 2/fan_in), biases zero.
  void initialize_parameters(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (Parameter& p : params_) {
      p.value = Tensor(p.shape);
      if (p.fan_in == 0) continue;
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(p.fan_in)));
      for (double& v : p.value.data()) v = dist(rng);
    }
  }

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const Node& node(NodeId id) const {
    if (id >= nodes_.size()) detail::raise<config_error>("graph: unknown node id ", id);
    return nodes_[id];
  }
  NodeId output() const {
    if (nodes_.empty()) detail::raise<config_error>("graph: empty");
    return nodes_.size() - 1;
  }
  const Shape& input_shape() const { return node(0).out_shape; }

  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }

  Parameter& parameter(const std::string& name) { return params_[param_index(name)]; }
  const Parameter& parameter(const std::string& name) const { return params_[param_index(name)]; }
  bool has_parameter(const std::string& name) const { return param_lookup_.count(name) != 0; }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const Parameter& p : params_) total += shape_size(p.shape);
    return total;
  }

  void set_frozen(const std::string& group, bool frozen) {
    bool known = false;
    for (const Parameter& p : params_) known |= p.group == group;
    if (!known) detail::raise<config_error>("graph: no parameter group named '", group, "'");
    if (frozen)
      frozen_.insert(group);
    else
      frozen_.erase(group);
  }
  bool is_frozen(const std::string& group) const { return frozen_.count(group) != 0; }
  bool is_trainable(const Parameter& p) const { return !is_frozen(p.group); }

  /// Free-form key=value description of how the graph was built (checkpointed).
  std::vector<std::pair<std::string, std::string>> metadata;

 private:
  const Shape& spatial_input(const std::string& name, NodeId in) const {
    const Shape& s = node(in).out_shape;
    if (s.size() != 3) detail::raise<shape_error>(name, ": expected an HxWxC input, got ", to_string(s));
    return s;
  }

  NodeId push(Node n) {
    for (const Node& existing : nodes_)
      if (existing.name == n.name) detail::raise<config_error>("graph: duplicate node name '", n.name, "'");
    if (n.kind != OpKind::input && nodes_.empty()) detail::raise<config_error>("graph: first node must be the input");
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  void add_parameter(const std::string& name, const std::string& group, Shape shape, std::size_t fan_in) {
    param_lookup_[name] = params_.size();
    params_.push_back(Parameter{name, group, std::move(shape), fan_in, Tensor{}});
  }

  std::size_t param_index(const std::string& name) const {
    auto it = param_lookup_.find(name);
    if (it == param_lookup_.end()) detail::raise<config_error>("graph: unknown parameter '", name, "'");
    return it->second;
  }

  std::vector<Node> nodes_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> param_lookup_;
  std::set<std::string> frozen_;
};

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct ActivationCache {
  std::vector<Tensor> outputs;                       // one per node
  std::vector<std::optional<PoolIndexMap>> pooling;  // set for maxpool nodes
};

struct ForwardResult {
  Tensor logits;  // N x K
  ActivationCache cache;
};

namespace detail {

inline ConvRef conv_params_of(const NetworkGraph& net, const Node& n) {
  return ConvRef{net.parameter(n.weight).value, net.parameter(n.bias).value, n.stride, n.pad};
}

inline FcRef fc_params_of(const NetworkGraph& net, const Node& n) {
  return FcRef{net.parameter(n.weight).value, net.parameter(n.bias).value};
}

inline void require_allocated(const NetworkGraph& net) {
  for (const Parameter& p : net.parameters())
    if (p.value.shape() != p.shape) raise<config_error>("graph: parameter '", p.name, "' is not initialized");
}

inline void accumulate(Tensor& into, Tensor&& g) {
  if (into.empty()) {
    into = std::move(g);
    return;
  }
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

}  // namespace detail

inline ForwardResult forward(const NetworkGraph& net, const Tensor& batch) {
  detail::require_allocated(net);
  const Shape& in = net.input_shape();
  if (batch.rank() != in.size() + 1 || !std::equal(in.begin(), in.end(), batch.shape().begin() + 1))
    detail::raise<shape_error>("forward: batch ", to_string(batch.shape()), " does not match input N x ",
                               to_string(in));
  const std::size_t n = batch.dim(0);
  const auto& nodes = net.nodes();
  ActivationCache cache{std::vector<Tensor>(nodes.size()), std::vector<std::optional<PoolIndexMap>>(nodes.size())};
  for (NodeId id = 0; id < nodes.size(); ++id) {
    const Node& node = nodes[id];
    Tensor& out = cache.outputs[id];
    switch (node.kind) {
      case OpKind::input: out = batch; break;
      case OpKind::conv: {
        const ConvRef p = detail::conv_params_of(net, node);
        const Tensor& x = cache.outputs[node.inputs[0]];
        out = p.is_pointwise() ? conv1x1_forward(x, p) : conv_forward(x, p);
        break;
      }
      case OpKind::relu: out = relu(cache.outputs[node.inputs[0]]); break;
      case OpKind::maxpool: {
        PoolResult r = maxpool_forward(cache.outputs[node.inputs[0]], node.window_h, node.stride);
        out = std::move(r.output);
        cache.pooling[id] = std::move(r.index_map);
        break;
      }
      case OpKind::lrn: out = lrn_forward(cache.outputs[node.inputs[0]], node.lrn); break;
      case OpKind::concat: {
        std::vector<Tensor> parts;
        for (NodeId src : node.inputs) parts.push_back(cache.outputs[src]);
        out = concat_channels(parts);
        break;
      }
      case OpKind::flatten: out = cache.outputs[node.inputs[0]].reshaped({n, node.out_shape[0]}); break;
      case OpKind::fc: out = fc_forward(cache.outputs[node.inputs[0]], detail::fc_params_of(net, node)); break;
    }
  }
  Tensor logits = cache.outputs.back();
  if (logits.rank() != 2) logits = std::move(logits).reshaped({n, logits.size() / n});
  return ForwardResult{std::move(logits), std::move(cache)};
}

/// Adjoint of forward. Returns one gradient per trainable parameter; frozen
/// groups get no entry and branches feeding only frozen parameters are skipped.
inline GradientRegistry backward(const NetworkGraph& net, const ActivationCache& cache, const Tensor& grad_logits) {
  const auto& nodes = net.nodes();
  if (cache.outputs.size() != nodes.size() || cache.pooling.size() != nodes.size())
    detail::raise<config_error>("backward: activation cache missing or from a different graph");
  const Tensor& out = cache.outputs.back();
  if (grad_logits.size() != out.size())
    detail::raise<shape_error>("backward: grad_logits ", to_string(grad_logits.shape()), " does not match output ",
                               to_string(out.shape()));

  // needs_grad[id]: the node's output depends on some trainable parameter.
  std::vector<bool> needs_grad(nodes.size(), false);
  for (NodeId id = 0; id < nodes.size(); ++id) {
    const Node& node = nodes[id];
    if (!node.weight.empty() && !net.is_frozen(node.name)) needs_grad[id] = true;
    for (NodeId src : node.inputs) needs_grad[id] = needs_grad[id] || needs_grad[src];
  }

  GradientRegistry grads;
  std::vector<Tensor> node_grads(nodes.size());
  node_grads.back() = grad_logits.reshaped(out.shape());
  for (NodeId id = nodes.size(); id-- > 0;) {
    const Node& node = nodes[id];
    if (!needs_grad[id] || node_grads[id].empty()) continue;
    Tensor g = std::move(node_grads[id]);
    const bool want_input = !node.inputs.empty() && needs_grad[node.inputs[0]];
    switch (node.kind) {
      case OpKind::input: break;
      case OpKind::conv: {
        ConvGrads cg =
            conv_backward(cache.outputs[node.inputs[0]], detail::conv_params_of(net, node), g, want_input);
        if (!net.is_frozen(node.name)) {
          grads[node.weight] = std::move(cg.kernel);
          grads[node.bias] = std::move(cg.bias);
        }
        if (want_input) detail::accumulate(node_grads[node.inputs[0]], std::move(cg.input));
        break;
      }
      case OpKind::fc: {
        FcGrads fg = fc_backward(cache.outputs[node.inputs[0]], detail::fc_params_of(net, node), g, want_input);
        if (!net.is_frozen(node.name)) {
          grads[node.weight] = std::move(fg.weight);
          grads[node.bias] = std::move(fg.bias);
        }
        if (want_input) detail::accumulate(node_grads[node.inputs[0]], std::move(fg.input));
        break;
      }
      case OpKind::relu:
        if (want_input)
          detail::accumulate(node_grads[node.inputs[0]], relu_backward(cache.outputs[node.inputs[0]], std::move(g)));
        break;
      case OpKind::maxpool:
        if (want_input) detail::accumulate(node_grads[node.inputs[0]], maxpool_backward(*cache.pooling[id], g));
        break;
      case OpKind::lrn:
        if (want_input)
          detail::accumulate(node_grads[node.inputs[0]], lrn_backward(cache.outputs[node.inputs[0]], node.lrn, g));
        break;
      case OpKind::concat: {
        std::vector<std::size_t> extents;
        for (NodeId src : node.inputs) extents.push_back(nodes[src].out_shape[2]);
        std::vector<Tensor> parts = split_channels(g, extents);
        for (std::size_t i = 0; i < parts.size(); ++i)
          if (needs_grad[node.inputs[i]]) detail::accumulate(node_grads[node.inputs[i]], std::move(parts[i]));
        break;
      }
      case OpKind::flatten:
        if (want_input)
          detail::accumulate(node_grads[node.inputs[0]],
                             std::move(g).reshaped(cache.outputs[node.inputs[0]].shape()));
        break;
    }
  }
  return grads;
}

struct LossAndGradients {
  double loss = 0.0;
  Tensor logits;
  GradientRegistry grads;
};

inline LossAndGradients loss_and_gradients(const NetworkGraph& net, const Tensor& batch,
                                           std::span<const std::size_t> labels) {
  ForwardResult f = forward(net, batch);
  XentResult x = softmax_xent(f.logits, labels);
  return LossAndGradients{x.loss, std::move(f.logits), backward(net, f.cache, x.grad)};
}

inline double loss_only(const NetworkGraph& net, const Tensor& batch, std::span<const std::size_t> labels) {
  return softmax_xent(forward(net, batch).logits, labels).loss;
}

}  // namespace lfhn

#endif  // LFHN_GRAPH_HPP
