#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace lfhn;

namespace {

Shape shape_of(const std::vector<TraceEntry>& trace, const std::string& name) {
  for (const TraceEntry& e : trace)
    if (e.name == name) return e.shape;
  ADD_FAILURE() << "no node " << name;
  return {};
}

}  // namespace

// Dimensions printed in the architecture description: 227x227x3 input,
// 55x55x96 after the root conv, 27x27x96 after pooling, streams of
// 27x27x400 and 27x27x300, concat 27x27x700, post-concat conv 27x27x500.
TEST(Structure, DefaultTraceMatchesPublishedDimensions) {
  const auto trace = shape_trace(LfhnConfig{});
  EXPECT_EQ(shape_of(trace, "input"), (Shape{227, 227, 3}));
  EXPECT_EQ(shape_of(trace, "conv1"), (Shape{55, 55, 96}));
  EXPECT_EQ(shape_of(trace, "pool1"), (Shape{27, 27, 96}));
  EXPECT_EQ(shape_of(trace, "norm1"), (Shape{27, 27, 96}));
  EXPECT_EQ(shape_of(trace, "conv3"), (Shape{27, 27, 400}));
  EXPECT_EQ(shape_of(trace, "conv4"), (Shape{27, 27, 300}));
  EXPECT_EQ(shape_of(trace, "concat"), (Shape{27, 27, 700}));
  EXPECT_EQ(shape_of(trace, "conv5"), (Shape{27, 27, 500}));
  EXPECT_EQ(shape_of(trace, "flatten"), (Shape{27 * 27 * 500}));
  EXPECT_EQ(trace.back().kind, OpKind::fc);
  EXPECT_EQ(trace.back().shape, (Shape{337}));
}

TEST(Structure, DeskTraceScales) {
  const auto trace = shape_trace(desk_config(10));
  EXPECT_EQ(shape_of(trace, "conv1"), (Shape{15, 15, 96}));
  EXPECT_EQ(shape_of(trace, "pool1"), (Shape{7, 7, 96}));
  EXPECT_EQ(shape_of(trace, "concat"), (Shape{7, 7, 700}));
  EXPECT_EQ(shape_of(trace, "conv5"), (Shape{7, 7, 500}));
  EXPECT_EQ(trace.back().shape, (Shape{10}));
}

TEST(Structure, ParameterCountMatchesHandCount) {
  EXPECT_EQ(parameter_count(LfhnConfig{}), oracle::lfhn_parameter_count(LfhnConfig{}));
  EXPECT_EQ(parameter_count(LfhnConfig{}), 187311737u);
  for (const LfhnConfig& c : {desk_config(10), tiny_config(), desk_config(337)})
    EXPECT_EQ(parameter_count(c), oracle::lfhn_parameter_count(c));
}

// Every 1x1 conv preserves the spatial extent of its input.
TEST(Structure, PointwiseConvsPreserveSpatialExtent) {
  for (const LfhnConfig& c : {LfhnConfig{}, desk_config(5), tiny_config()}) {
    const NetworkGraph g = detail::lfhn_structure(c);
    for (const Node& n : g.nodes()) {
      if (n.kind != OpKind::conv || n.window_h != 1) continue;
      const Shape& in = g.node(n.inputs[0]).out_shape;
      EXPECT_EQ(n.out_shape[0], in[0]) << n.name;
      EXPECT_EQ(n.out_shape[1], in[1]) << n.name;
    }
  }
}

TEST(Structure, InvalidConfigsNameTheNode) {
  LfhnConfig c;
  c.input_height = c.input_width = 228;
  try {
    (void)shape_trace(c);
    FAIL() << "expected config_error";
  } catch (const config_error& e) {
    EXPECT_NE(std::string(e.what()).find("conv1"), std::string::npos) << e.what();
  }
  LfhnConfig empty_streams;
  empty_streams.stream_a.clear();
  empty_streams.stream_b.clear();
  EXPECT_THROW(empty_streams.validate(), config_error);
  LfhnConfig zero;
  zero.classes = 0;
  EXPECT_THROW(zero.validate(), config_error);
}

TEST(Config, KeyValueRoundTrip) {
  LfhnConfig c = tiny_config();
  c.stream_a = {3, 7, 2};
  c.lrn.beta = 0.6180339887498949;
  c.relu_after_hidden = false;
  EXPECT_EQ(config_from_key_values(to_key_values(c)), c);
  EXPECT_EQ(config_from_key_values(to_key_values(LfhnConfig{})), LfhnConfig{});
}

TEST(Config, ApplyKeyParsesAndRejects) {
  LfhnConfig c;
  EXPECT_TRUE(apply_key(c, "input_size", "67"));
  EXPECT_EQ(c.input_height, 67u);
  EXPECT_EQ(c.input_width, 67u);
  EXPECT_TRUE(apply_key(c, "stream_a", "8, 16"));
  EXPECT_EQ(c.stream_a, (std::vector<std::size_t>{8, 16}));
  EXPECT_FALSE(apply_key(c, "no_such_key", "1"));
  EXPECT_THROW(apply_key(c, "classes", "ten"), config_error);
  EXPECT_THROW(apply_key(c, "lrn_beta", "0.75x"), config_error);
}

TEST(Init, HeStatisticsAndZeroBias) {
  const NetworkGraph net = build_lfhn(desk_config(10), 5);
  const Parameter& k = net.parameter("conv5.kernel");
  double sum = 0.0, sq = 0.0;
  for (double v : k.value.data()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(k.value.size());
  const double var = sq / n - (sum / n) * (sum / n);
  EXPECT_NEAR(var, 2.0 / 700.0, 0.05 * 2.0 / 700.0);
  for (double v : net.parameter("conv5.bias").value.data()) EXPECT_EQ(v, 0.0);
}

TEST(Init, SeedDeterminesParameters) {
  const NetworkGraph a = build_lfhn(tiny_config(), 3), b = build_lfhn(tiny_config(), 3), c = build_lfhn(tiny_config(), 4);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
  EXPECT_NE(a.parameter("fc6.weight").value, c.parameter("fc6.weight").value);
}

TEST(Forward, MatchesScalarGraphWalk) {
  std::mt19937_64 rng(17);
  LfhnConfig mid = tiny_config();
  mid.input_height = mid.input_width = 21;
  mid.root_kernel = 5;
  mid.root_stride = 2;
  mid.lrn = LrnParams{};
  for (const LfhnConfig& cfg : {tiny_config(), mid}) {
    const NetworkGraph net = build_lfhn(cfg, 8);
    const Tensor batch = oracle::random({3, cfg.input_height, cfg.input_width, 3}, rng, 0.0, 1.0);
    const Tensor got = forward(net, batch).logits;
    const Tensor want = oracle::lfhn_forward(net, cfg, batch);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12 * (1 + std::abs(want[i])));
  }
}

TEST(Forward, BatchShapeChecked) {
  const NetworkGraph net = build_lfhn(tiny_config());
  EXPECT_THROW(forward(net, Tensor({2, 9, 8, 3})), shape_error);
  const NetworkGraph bare = detail::lfhn_structure(tiny_config());
  EXPECT_THROW(forward(bare, Tensor({1, 8, 8, 3})), config_error);
}

TEST(Backward, WholeNetworkFiniteDifferences) {
  NetworkGraph net = build_lfhn(tiny_config(), 2);
  randomize_biases(net, 2);
  std::mt19937_64 rng(2);
  const Tensor batch = oracle::random({2, 8, 8, 3}, rng);
  const std::vector<std::size_t> labels{1, 2};
  GradCheckOptions opt;
  opt.per_tensor = 32;
  const GradReport report = grad_check(net, batch, labels, opt);
  EXPECT_EQ(report.entries.size(), net.parameters().size());
  for (const auto& [name, e] : report.entries) EXPECT_LT(e.max_rel_error, 1e-5) << name;
}

TEST(Backward, FrozenRootHasNoGradientAndSkipsItsBranch) {
  NetworkGraph net = build_lfhn(tiny_config(), 2);
  net.set_frozen(root_group, true);
  std::mt19937_64 rng(3);
  const LossAndGradients lg = loss_and_gradients(net, oracle::random({2, 8, 8, 3}, rng), std::vector<std::size_t>{0, 1});
  EXPECT_FALSE(lg.grads.count("conv1.kernel"));
  EXPECT_FALSE(lg.grads.count("conv1.bias"));
  EXPECT_TRUE(lg.grads.count("conv2.kernel"));
  EXPECT_EQ(lg.grads.size(), net.parameters().size() - 2);
  EXPECT_THROW(net.set_frozen("conv99", true), config_error);
}

TEST(Backward, RejectsForeignCache) {
  const NetworkGraph net = build_lfhn(tiny_config());
  EXPECT_THROW(backward(net, ActivationCache{}, Tensor({1, 3})), config_error);
}
