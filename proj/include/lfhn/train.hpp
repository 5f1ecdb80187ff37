#ifndef LFHN_TRAIN_HPP
#define LFHN_TRAIN_HPP

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "data.hpp"
#include "network.hpp"

namespace lfhn {

// ---------------------------------------------------------------------------
// SGD with momentum
// ---------------------------------------------------------------------------

/// Velocity per parameter name. Missing entries start at zero.
using SgdState = std::map<std::string, Tensor>;

/// v <- momentum * v - lr * g;  p <- p + v
inline void sgd_update(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum) {
  if (grad.shape() != param.shape())
    detail::raise<shape_error>("sgd: gradient ", to_string(grad.shape()), " vs parameter ", to_string(param.shape()));
  if (velocity.empty()) velocity = Tensor(param.shape());
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] - lr * grad[i];
    param[i] += velocity[i];
  }
}

inline void sgd_step(std::map<std::string, Tensor>& params, const GradientRegistry& grads, SgdState& state, double lr,
                     double momentum) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) detail::raise<config_error>("sgd: gradient for unknown parameter '", name, "'");
    sgd_update(it->second, g, state[name], lr, momentum);
  }
}

/// Updates every trainable parameter of `net`; grads must cover exactly the
/// non-frozen set.
inline void sgd_step(NetworkGraph& net, const GradientRegistry& grads, SgdState& state, double lr, double momentum) {
  for (const auto& [name, g] : grads) {
    if (!net.has_parameter(name)) detail::raise<config_error>("sgd: gradient for unknown parameter '", name, "'");
    if (!net.is_trainable(net.parameter(name)))
      detail::raise<config_error>("sgd: gradient for frozen parameter '", name, "'");
  }
  for (Parameter& p : net.parameters()) {
    if (!net.is_trainable(p)) continue;
    auto it = grads.find(p.name);
    if (it == grads.end()) detail::raise<config_error>("sgd: no gradient for trainable parameter '", p.name, "'");
    sgd_update(p.value, it->second, state[p.name], lr, momentum);
  }
}

// ---------------------------------------------------------------------------
// Crop / mirror augmentation
// ---------------------------------------------------------------------------

struct AugmentDraw {
  std::size_t offset_y = 0;
  std::size_t offset_x = 0;
  bool mirror = false;

  friend bool operator==(const AugmentDraw&, const AugmentDraw&) = default;
};

inline void check_crop(const Shape& source, std::size_t target_h, std::size_t target_w) {
  if (source.size() != 3) detail::raise<shape_error>("crop: expected an HxWxC image, got ", to_string(source));
  if (target_h > source[0] || target_w > source[1])
    detail::raise<config_error>("crop: target ", target_h, "x", target_w, " larger than source ", source[0], "x",
                                source[1]);
}

/// Uniform crop offset, then a fair coin for the horizontal mirror.
inline AugmentDraw draw_augmentation(std::mt19937_64& rng, const Shape& source, std::size_t target_h,
                                     std::size_t target_w) {
  check_crop(source, target_h, target_w);
  AugmentDraw d;
  d.offset_y = std::uniform_int_distribution<std::size_t>(0, source[0] - target_h)(rng);
  d.offset_x = std::uniform_int_distribution<std::size_t>(0, source[1] - target_w)(rng);
  d.mirror = std::bernoulli_distribution(0.5)(rng);
  return d;
}

inline AugmentDraw center_draw(const Shape& source, std::size_t target_h, std::size_t target_w) {
  check_crop(source, target_h, target_w);
  return {(source[0] - target_h) / 2, (source[1] - target_w) / 2, false};
}

/// Writes the crop described by `d` into `out` (target_h * target_w * C values).
inline void apply_augmentation(const Tensor& image, const AugmentDraw& d, std::size_t target_h, std::size_t target_w,
                               double* out) {
  check_crop(image.shape(), target_h, target_w);
  const std::size_t w = image.dim(1), c = image.dim(2);
  if (d.offset_y + target_h > image.dim(0) || d.offset_x + target_w > w)
    detail::raise<config_error>("crop: offset out of range");
  for (std::size_t y = 0; y < target_h; ++y)
    for (std::size_t x = 0; x < target_w; ++x) {
      const std::size_t sx = d.mirror ? d.offset_x + target_w - 1 - x : d.offset_x + x;
      std::copy_n(image.raw() + ((d.offset_y + y) * w + sx) * c, c, out + (y * target_w + x) * c);
    }
}

inline Tensor apply_augmentation(const Tensor& image, const AugmentDraw& d, std::size_t target_h,
                                 std::size_t target_w) {
  Tensor out({target_h, target_w, image.dim(2)});
  apply_augmentation(image, d, target_h, target_w, out.raw());
  return out;
}

inline Tensor mirror(const Tensor& image) {
  return apply_augmentation(image, AugmentDraw{0, 0, true}, image.dim(0), image.dim(1));
}

inline Tensor center_crop(const Tensor& image, std::size_t target_h, std::size_t target_w) {
  return apply_augmentation(image, center_draw(image.shape(), target_h, target_w), target_h, target_w);
}

/// Random crop to target extents plus a mirror with probability one half.
inline Tensor augment(const Tensor& image, std::size_t target_h, std::size_t target_w, std::mt19937_64& rng) {
  return apply_augmentation(image, draw_augmentation(rng, image.shape(), target_h, target_w), target_h, target_w);
}

/// Stacks center crops of the selected samples into an N x H x W x C batch.
inline Tensor make_eval_batch(const std::vector<LabeledSample>& samples, std::span<const std::size_t> indices,
                              std::size_t target_h, std::size_t target_w) {
  if (indices.empty()) detail::raise<data_error>("batch: no samples");
  const std::size_t c = samples[indices[0]].image.dim(2);
  Tensor batch({indices.size(), target_h, target_w, c});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = samples[indices[i]].image;
    if (img.rank() != 3 || img.dim(2) != c) detail::raise<shape_error>("batch: inconsistent image channels");
    apply_augmentation(img, center_draw(img.shape(), target_h, target_w), target_h, target_w,
                       batch.raw() + i * target_h * target_w * c);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  bool freeze_root = false;
  bool augment = true;
  std::size_t lr_decay_every = 0;  // 0 disables the step schedule
  double lr_decay_factor = 0.1;
  double stop_at_accuracy = 0.0;  // end early once train accuracy reaches this; 0 never stops

  void validate() const {
    if (!(learning_rate >= 0.0)) detail::raise<config_error>("train: learning rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) detail::raise<config_error>("train: momentum must be in [0, 1)");
    if (batch_size < 1) detail::raise<config_error>("train: batch size must be >= 1");
    if (!(lr_decay_factor > 0.0)) detail::raise<config_error>("train: lr decay factor must be > 0");
    if (!(stop_at_accuracy >= 0.0 && stop_at_accuracy <= 1.0))
      detail::raise<config_error>("train: stop_at_accuracy must be in [0, 1]");
  }
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double train_accuracy = 0.0;  // fraction in [0, 1]

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainResult {
  std::vector<EpochStats> log;
  SgdState optimizer;
};

/// Epoch callback; return false to stop training after this epoch.
using EpochCallback = std::function<bool(const EpochStats&)>;

inline std::string format_epoch_csv(const EpochStats& s) {
  return std::to_string(s.epoch) + "," + detail::format_double(s.mean_loss) + "," +
         detail::format_double(s.train_accuracy);
}

inline constexpr const char* epoch_log_header = "epoch,mean_loss,train_acc";

/// Minibatch SGD over `indices` of `samples`. One seeded generator drives the
/// epoch shuffles and the augmentation draws, in that order, so a run is a
/// pure function of (net, data, cfg).
inline TrainResult train(NetworkGraph& net, const std::vector<LabeledSample>& samples,
                         std::span<const std::size_t> indices, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (indices.empty()) detail::raise<data_error>("train: empty dataset");
  const Shape& in = net.input_shape();
  const std::size_t classes = net.node(net.output()).out_shape.at(0);
  for (std::size_t i : indices) {
    if (i >= samples.size()) detail::raise<data_error>("train: sample index ", i, " out of range");
    if (samples[i].identity >= classes)
      detail::raise<data_error>("train: label ", samples[i].identity, " of ", samples[i].filename,
                                " out of range for ", classes, " classes");
    if (samples[i].image.rank() != 3 || samples[i].image.dim(2) != in[2])
      detail::raise<shape_error>("train: image ", samples[i].filename, " has shape ",
                                 to_string(samples[i].image.shape()), ", network expects C = ", in[2]);
  }
  if (net.has_parameter(std::string(root_group) + ".kernel")) net.set_frozen(root_group, cfg.freeze_root);

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(indices.begin(), indices.end());
  TrainResult result;
  const std::size_t sample_size = in[0] * in[1] * in[2];

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double lr = cfg.learning_rate;
    if (cfg.lr_decay_every > 0)
      for (std::size_t e = cfg.lr_decay_every; e < epoch; e += cfg.lr_decay_every) lr *= cfg.lr_decay_factor;

    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      Tensor batch({n, in[0], in[1], in[2]});
      std::vector<std::size_t> labels(n);
      for (std::size_t b = 0; b < n; ++b) {
        const LabeledSample& s = samples[order[start + b]];
        const AugmentDraw d = cfg.augment ? draw_augmentation(rng, s.image.shape(), in[0], in[1])
                                          : center_draw(s.image.shape(), in[0], in[1]);
        apply_augmentation(s.image, d, in[0], in[1], batch.raw() + b * sample_size);
        labels[b] = s.identity;
      }
      LossAndGradients lg = loss_and_gradients(net, batch, labels);
      loss_sum += lg.loss * static_cast<double>(n);
      for (std::size_t b = 0; b < n; ++b)
        if (argmax(std::span<const double>(lg.logits.raw() + b * classes, classes)) == labels[b]) ++correct;
      sgd_step(net, lg.grads, result.optimizer, lr, cfg.momentum);
    }
    const EpochStats stats{epoch, loss_sum / static_cast<double>(order.size()),
                           static_cast<double>(correct) / static_cast<double>(order.size())};
    result.log.push_back(stats);
    if (on_epoch && !on_epoch(stats)) break;
    if (cfg.stop_at_accuracy > 0.0 && stats.train_accuracy >= cfg.stop_at_accuracy) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

struct GradEntry {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  double tolerance = 1e-5;

  bool passed() const { return max_rel_error < tolerance; }
};

/// Analytic vs central-difference comparison, keyed by parameter (or layer
/// input) name.
struct GradReport {
  std::map<std::string, GradEntry> entries;

  double max_error() const {
    double m = 0.0;
    for (const auto& [name, e] : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& kv) { return kv.second.passed(); });
  }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

inline void record(GradEntry& e, std::size_t index, double analytic, double numeric) {
  const double err = relative_error(analytic, numeric);
  if (e.checked == 0 || err > e.max_rel_error) {
    e.max_rel_error = err;
    e.worst_index = index;
    e.analytic = analytic;
    e.numeric = numeric;
  }
  ++e.checked;
}

/// Indices to probe in a tensor of `size` elements: all of them when there
/// are at most `per_tensor`, otherwise `per_tensor` distinct ones.
inline std::vector<std::size_t> probe_indices(std::size_t size, std::size_t per_tensor, std::mt19937_64& rng) {
  std::vector<std::size_t> all(size);
  for (std::size_t i = 0; i < size; ++i) all[i] = i;
  if (size <= per_tensor) return all;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(per_tensor);
  std::sort(all.begin(), all.end());
  return all;
}

struct GradCheckOptions {
  double epsilon = 1e-5;
  std::size_t per_tensor = 32;
  std::uint64_t seed = 0;
  double tolerance = 1e-5;
  std::function<bool(const Parameter&)> filter;  // empty: every trainable parameter
};

/// Replaces every bias with U(-scale, scale). Zero-initialized biases put
/// pre-activations of dead input pixels exactly on the ReLU kink, where
/// central differences see half the slope; a whole-network check should run
/// at a generic point instead.
inline void randomize_biases(NetworkGraph& net, std::uint64_t seed, double scale = 0.1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (Parameter& p : net.parameters())
    if (p.name.ends_with(".bias"))
      for (double& v : p.value.data()) v = u(rng);
}

/// Central differences (L(p + eps) - L(p - eps)) / 2 eps of the batch loss
/// against the analytic gradients of backward.
inline GradReport grad_check(NetworkGraph& net, const Tensor& batch, std::span<const std::size_t> labels,
                             const GradCheckOptions& opt = {}) {
  const GradientRegistry analytic = loss_and_gradients(net, batch, labels).grads;
  std::mt19937_64 rng(opt.seed);
  GradReport report;
  for (Parameter& p : net.parameters()) {
    if (!net.is_trainable(p) || (opt.filter && !opt.filter(p))) continue;
    const Tensor& g = analytic.at(p.name);
    GradEntry& entry = report.entries[p.name];
    entry.tolerance = opt.tolerance;
    for (std::size_t i : probe_indices(p.value.size(), opt.per_tensor, rng)) {
      const double saved = p.value[i];
      p.value[i] = saved + opt.epsilon;
      const double up = loss_only(net, batch, labels);
      p.value[i] = saved - opt.epsilon;
      const double down = loss_only(net, batch, labels);
      p.value[i] = saved;
      record(entry, i, g[i], (up - down) / (2.0 * opt.epsilon));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Per-layer adjoint checks on random inputs
// ---------------------------------------------------------------------------

enum class LayerCheck { conv, conv1x1, fc, lrn, maxpool, relu, softmax_xent };

inline const std::vector<std::pair<LayerCheck, std::string>>& layer_check_names() {
  static const std::vector<std::pair<LayerCheck, std::string>> names = {
      {LayerCheck::conv, "conv"}, {LayerCheck::conv1x1, "conv1x1"}, {LayerCheck::fc, "fc"},
      {LayerCheck::lrn, "lrn"},   {LayerCheck::maxpool, "pool"},    {LayerCheck::relu, "relu"},
      {LayerCheck::softmax_xent, "softmax_xent"}};
  return names;
}

namespace detail {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// <weights, out - base>. Measuring against the unperturbed output keeps the
// probe loss small, so its rounding does not swamp small gradient entries.
inline double weighted_sum(const Tensor& out, const Tensor& base, const Tensor& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += (out[i] - base[i]) * weights[i];
  return s;
}

// Checks d/dx of loss(x) = <weights, f(x)> for every probed element of `x`.
// `skip(i)` excludes elements near a kink or tie.
inline void check_tensor(GradEntry& entry, Tensor& x, const Tensor& analytic, const std::function<double()>& loss,
                         double eps, const std::function<bool(std::size_t)>& skip = {}) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (skip && skip(i)) continue;
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = loss();
    x[i] = saved - eps;
    const double down = loss();
    x[i] = saved;
    record(entry, i, analytic[i], (up - down) / (2.0 * eps));
  }
}

}  // namespace detail

/// Finite-difference check of one layer's backward pass on random inputs of
/// at most 8x8x8, excluding kink and tie neighborhoods.
inline GradReport check_layer(LayerCheck which, std::uint64_t seed = 0, double epsilon = 1e-5,
                              double tolerance = 1e-6) {
  std::mt19937_64 rng(seed);
  GradReport report;
  auto entry = [&](const std::string& name) -> GradEntry& {
    GradEntry& e = report.entries[name];
    e.tolerance = tolerance;
    return e;
  };
  using detail::random_tensor;
  using detail::weighted_sum;

  switch (which) {
    case LayerCheck::conv:
    case LayerCheck::conv1x1: {
      const bool pointwise = which == LayerCheck::conv1x1;
      Tensor x = random_tensor({2, 7, 7, 3}, rng);
      ConvParams p{random_tensor(pointwise ? Shape{1, 1, 3, 4} : Shape{3, 3, 3, 4}, rng), random_tensor({4}, rng),
                   pointwise ? 1u : 2u, pointwise ? 0u : 1u};
      auto run = [&] { return pointwise ? conv1x1_forward(x, p) : conv_forward(x, p); };
      const Tensor w = random_tensor(run().shape(), rng);
      const ConvGrads g = conv_backward(x, p, w);
      const std::string name = pointwise ? "conv1x1" : "conv";
      const Tensor base = run();
      auto loss = [&] { return weighted_sum(run(), base, w); };
      detail::check_tensor(entry(name + ".input"), x, g.input, loss, epsilon);
      detail::check_tensor(entry(name + ".kernel"), p.kernel, g.kernel, loss, epsilon);
      detail::check_tensor(entry(name + ".bias"), p.bias, g.bias, loss, epsilon);
      break;
    }
    case LayerCheck::fc: {
      Tensor x = random_tensor({3, 7}, rng);
      FcParams p{random_tensor({7, 5}, rng), random_tensor({5}, rng)};
      const Tensor w = random_tensor({3, 5}, rng);
      const FcGrads g = fc_backward(x, p, w);
      const Tensor base = fc_forward(x, p);
      auto loss = [&] { return weighted_sum(fc_forward(x, p), base, w); };
      detail::check_tensor(entry("fc.input"), x, g.input, loss, epsilon);
      detail::check_tensor(entry("fc.weight"), p.weight, g.weight, loss, epsilon);
      detail::check_tensor(entry("fc.bias"), p.bias, g.bias, loss, epsilon);
      break;
    }
    case LayerCheck::lrn: {
      // alpha large enough that the cross-channel terms are far above tolerance
      const LrnParams p{5, 1.0, 0.5, 0.75};
      Tensor x = random_tensor({2, 2, 2, 8}, rng, -2.0, 2.0);
      const Tensor w = random_tensor(x.shape(), rng);
      const Tensor g = lrn_backward(x, p, w);
      const Tensor base = lrn_forward(x, p);
      detail::check_tensor(entry("lrn.input"), x, g, [&] { return weighted_sum(lrn_forward(x, p), base, w); },
                           epsilon);
      break;
    }
    case LayerCheck::maxpool: {
      Tensor x = random_tensor({2, 7, 7, 2}, rng);
      const PoolResult r = maxpool_forward(x);
      const Tensor w = random_tensor(r.output.shape(), rng);
      const Tensor g = maxpool_backward(r.index_map, w);
      // Exclude every input of a window whose top two values are within 1e-4.
      std::vector<bool> near_tie(x.size(), false);
      const std::size_t h = 7, wd = 7, c = 2;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t oy = 0; oy < r.output.dim(1); ++oy)
          for (std::size_t ox = 0; ox < r.output.dim(2); ++ox)
            for (std::size_t ch = 0; ch < c; ++ch) {
              std::vector<std::size_t> members;
              for (std::size_t dy = 0; dy < 3; ++dy)
                for (std::size_t dx = 0; dx < 3; ++dx)
                  members.push_back(((b * h + oy * 2 + dy) * wd + ox * 2 + dx) * c + ch);
              std::vector<double> vals;
              for (std::size_t m : members) vals.push_back(x[m]);
              std::sort(vals.rbegin(), vals.rend());
              if (vals[0] - vals[1] < 1e-4)
                for (std::size_t m : members) near_tie[m] = true;
            }
      detail::check_tensor(entry("pool.input"), x, g,
                           [&] { return weighted_sum(maxpool_forward(x).output, r.output, w); }, epsilon,
                           [&](std::size_t i) { return near_tie[i]; });
      break;
    }
    case LayerCheck::relu: {
      Tensor x = random_tensor({2, 4, 4, 3}, rng);
      const Tensor w = random_tensor(x.shape(), rng);
      const Tensor g = relu_backward(x, w);
      const Tensor base = relu(x);
      detail::check_tensor(entry("relu.input"), x, g, [&] { return weighted_sum(relu(x), base, w); }, epsilon,
                           [&](std::size_t i) { return std::abs(x[i]) < 1e-4; });
      break;
    }
    case LayerCheck::softmax_xent: {
      Tensor z = random_tensor({4, 10}, rng, -3.0, 3.0);
      const std::vector<std::size_t> labels = {0, 3, 9, 5};
      const Tensor g = softmax_xent(z, labels).grad;
      detail::check_tensor(entry("softmax_xent.logits"), z, g, [&] { return softmax_xent(z, labels).loss; },
                           epsilon);
      break;
    }
  }
  return report;
}

}  // namespace lfhn

#endif  // LFHN_TRAIN_HPP
