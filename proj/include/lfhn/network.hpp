#ifndef LFHN_NETWORK_HPP
#define LFHN_NETWORK_HPP

#include <charconv>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "graph.hpp"

namespace lfhn {

/// Architecture of the multi-stream local feature hierarchy network.
///
/// Root:    conv (root_kernel, root_channels, root_stride) -> ReLU -> maxpool -> LRN
/// Streams: each stream is a chain of 1x1 convolutions fed by the root output
/// Head:    concat -> 1x1 conv (post_concat) -> flatten -> FC(fc_hidden) -> FC(classes)
struct LfhnConfig {
  std::size_t input_height = 227;
  std::size_t input_width = 227;
  std::size_t input_channels = 3;
  std::size_t root_kernel = 11;
  std::size_t root_channels = 96;
  std::size_t root_stride = 4;
  std::size_t root_pad = 0;
  std::size_t pool_window = 3;
  std::size_t pool_stride = 2;
  std::vector<std::size_t> stream_a = {200, 400};
  std::vector<std::size_t> stream_b = {300};
  std::size_t post_concat = 500;
  std::size_t fc_hidden = 512;
  std::size_t classes = 337;
  bool relu_after_pointwise = true;
  bool relu_after_hidden = true;
  LrnParams lrn;

  std::size_t concat_width() const {
    std::size_t w = 0;
    if (!stream_a.empty()) w += stream_a.back();
    if (!stream_b.empty()) w += stream_b.back();
    return w;
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* key) {
      if (v == 0) detail::raise<config_error>("config: ", key, " must be >= 1");
    };
    positive(input_height, "input_height");
    positive(input_width, "input_width");
    positive(input_channels, "input_channels");
    positive(root_kernel, "root_kernel");
    positive(root_channels, "root_channels");
    positive(root_stride, "root_stride");
    positive(pool_window, "pool_window");
    positive(pool_stride, "pool_stride");
    positive(post_concat, "post_concat");
    positive(fc_hidden, "fc_hidden");
    positive(classes, "classes");
    for (std::size_t w : stream_a) positive(w, "stream_a width");
    for (std::size_t w : stream_b) positive(w, "stream_b width");
    if (stream_a.empty() && stream_b.empty()) detail::raise<config_error>("config: at least one stream is required");
    lrn.validate();
  }

  friend bool operator==(const LfhnConfig&, const LfhnConfig&) = default;
};

/// 67x67 input: the root conv gives 15x15x96 and the pool 7x7x96.
inline LfhnConfig desk_config(std::size_t classes) {
  LfhnConfig cfg;
  cfg.input_height = cfg.input_width = 67;
  cfg.classes = classes;
  return cfg;
}

/// 8x8x3 input, root 4x4/1 with 4 channels, streams {4, 6} and {5},
/// post-concat 5, hidden 6, three classes. Small enough for exhaustive
/// finite-difference checks.
inline LfhnConfig tiny_config() {
  LfhnConfig cfg;
  cfg.input_height = cfg.input_width = 8;
  cfg.root_kernel = 4;
  cfg.root_stride = 1;
  cfg.root_channels = 4;
  cfg.stream_a = {4, 6};
  cfg.stream_b = {5};
  cfg.post_concat = 5;
  cfg.fc_hidden = 6;
  cfg.classes = 3;
  cfg.lrn.alpha = 0.5;  // large enough that cross-channel terms matter at this scale
  cfg.lrn.k = 1.0;
  return cfg;
}

// ---------------------------------------------------------------------------
// key = value serialization
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string format_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::size_t parse_size(std::string_view key, std::string_view text) {
  text = trim(text);
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty())
    raise<config_error>("config: ", key, " expects a non-negative integer, got '", text, "'");
  return v;
}

inline double parse_double(std::string_view key, std::string_view text) {
  text = trim(text);
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty())
    raise<config_error>("config: ", key, " expects a number, got '", text, "'");
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  text = trim(text);
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  raise<config_error>("config: ", key, " expects a boolean, got '", text, "'");
}

inline std::vector<std::size_t> parse_list(std::string_view key, std::string_view text) {
  std::vector<std::size_t> out;
  text = trim(text);
  while (!text.empty()) {
    const std::size_t comma = text.find(',');
    out.push_back(parse_size(key, text.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace detail

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline KeyValues to_key_values(const LfhnConfig& c) {
  using detail::format_double;
  return {
      {"input_height", std::to_string(c.input_height)},
      {"input_width", std::to_string(c.input_width)},
      {"input_channels", std::to_string(c.input_channels)},
      {"root_kernel", std::to_string(c.root_kernel)},
      {"root_channels", std::to_string(c.root_channels)},
      {"root_stride", std::to_string(c.root_stride)},
      {"root_pad", std::to_string(c.root_pad)},
      {"pool_window", std::to_string(c.pool_window)},
      {"pool_stride", std::to_string(c.pool_stride)},
      {"stream_a", detail::format_list(c.stream_a)},
      {"stream_b", detail::format_list(c.stream_b)},
      {"post_concat", std::to_string(c.post_concat)},
      {"fc_hidden", std::to_string(c.fc_hidden)},
      {"classes", std::to_string(c.classes)},
      {"relu_after_pointwise", c.relu_after_pointwise ? "true" : "false"},
      {"relu_after_hidden", c.relu_after_hidden ? "true" : "false"},
      {"lrn_size", std::to_string(c.lrn.n)},
      {"lrn_k", format_double(c.lrn.k)},
      {"lrn_alpha", format_double(c.lrn.alpha)},
      {"lrn_beta", format_double(c.lrn.beta)},
  };
}

/// Applies one key to the config. Returns false when the key is not an
/// architecture key, so callers can layer their own schema on top.
inline bool apply_key(LfhnConfig& c, std::string_view key, std::string_view value) {
  using namespace detail;
  if (key == "input_height") c.input_height = parse_size(key, value);
  else if (key == "input_width") c.input_width = parse_size(key, value);
  else if (key == "input_size") c.input_height = c.input_width = parse_size(key, value);
  else if (key == "input_channels") c.input_channels = parse_size(key, value);
  else if (key == "root_kernel") c.root_kernel = parse_size(key, value);
  else if (key == "root_channels") c.root_channels = parse_size(key, value);
  else if (key == "root_stride") c.root_stride = parse_size(key, value);
  else if (key == "root_pad") c.root_pad = parse_size(key, value);
  else if (key == "pool_window") c.pool_window = parse_size(key, value);
  else if (key == "pool_stride") c.pool_stride = parse_size(key, value);
  else if (key == "stream_a") c.stream_a = parse_list(key, value);
  else if (key == "stream_b") c.stream_b = parse_list(key, value);
  else if (key == "post_concat") c.post_concat = parse_size(key, value);
  else if (key == "fc_hidden") c.fc_hidden = parse_size(key, value);
  else if (key == "classes") c.classes = parse_size(key, value);
  else if (key == "relu_after_pointwise") c.relu_after_pointwise = parse_bool(key, value);
  else if (key == "relu_after_hidden") c.relu_after_hidden = parse_bool(key, value);
  else if (key == "lrn_size") c.lrn.n = parse_size(key, value);
  else if (key == "lrn_k") c.lrn.k = parse_double(key, value);
  else if (key == "lrn_alpha") c.lrn.alpha = parse_double(key, value);
  else if (key == "lrn_beta") c.lrn.beta = parse_double(key, value);
  else return false;
  return true;
}

inline LfhnConfig config_from_key_values(const KeyValues& kv) {
  LfhnConfig c;
  for (const auto& [k, v] : kv)
    if (!apply_key(c, k, v)) detail::raise<config_error>("config: unknown key '", k, "'");
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Builder
// ---------------------------------------------------------------------------

namespace detail {

inline NetworkGraph lfhn_structure(const LfhnConfig& cfg) {
  cfg.validate();
  NetworkGraph net;
  const NodeId in = net.add_input("input", {cfg.input_height, cfg.input_width, cfg.input_channels});
  NodeId x = net.add_conv("conv1", in, cfg.root_kernel, cfg.root_kernel, cfg.root_channels, cfg.root_stride,
                          cfg.root_pad);
  x = net.add_relu("relu1", x);
  x = net.add_maxpool("pool1", x, cfg.pool_window, cfg.pool_stride);
  const NodeId root = net.add_lrn("norm1", x, cfg.lrn);

  std::size_t conv_index = 2;
  auto pointwise = [&](NodeId from, std::size_t width) {
    const std::string idx = std::to_string(conv_index++);
    NodeId y = net.add_conv("conv" + idx, from, 1, 1, width);
    if (cfg.relu_after_pointwise) y = net.add_relu("relu" + idx, y);
    return y;
  };

  std::vector<NodeId> stream_outputs;
  for (const auto* stream : {&cfg.stream_a, &cfg.stream_b}) {
    if (stream->empty()) continue;
    NodeId y = root;
    for (std::size_t width : *stream) y = pointwise(y, width);
    stream_outputs.push_back(y);
  }
  x = net.add_concat("concat", stream_outputs);
  x = pointwise(x, cfg.post_concat);
  x = net.add_flatten("flatten", x);
  const std::string hidden = "fc" + std::to_string(conv_index);
  x = net.add_fc(hidden, x, cfg.fc_hidden);
  if (cfg.relu_after_hidden) x = net.add_relu("relu" + std::to_string(conv_index), x);
  net.add_fc("fc" + std::to_string(conv_index + 1), x, cfg.classes);
  net.metadata = to_key_values(cfg);
  return net;
}

}  // namespace detail

/// Builds the network and draws its initial parameters from `seed`.
inline NetworkGraph build_lfhn(const LfhnConfig& cfg, std::uint64_t seed = 0) {
  NetworkGraph net = detail::lfhn_structure(cfg);
  net.initialize_parameters(seed);
  return net;
}

/// Name of the parameter group holding the root convolution.
inline constexpr const char* root_group = "conv1";

struct TraceEntry {
  std::string name;
  OpKind kind;
  Shape shape;
};

/// Per-node output shapes by symbolic propagation; no parameters are allocated.
inline std::vector<TraceEntry> shape_trace(const LfhnConfig& cfg) {
  const NetworkGraph net = detail::lfhn_structure(cfg);
  std::vector<TraceEntry> trace;
  for (const Node& n : net.nodes()) trace.push_back({n.name, n.kind, n.out_shape});
  return trace;
}

inline std::size_t parameter_count(const LfhnConfig& cfg) { return detail::lfhn_structure(cfg).parameter_count(); }

inline LfhnConfig config_of(const NetworkGraph& net) { return config_from_key_values(net.metadata); }

}  // namespace lfhn

#endif  // LFHN_NETWORK_HPP
