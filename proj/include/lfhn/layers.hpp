#ifndef LFHN_LAYERS_HPP
#define LFHN_LAYERS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace lfhn {

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Borrowed view of a convolution's parameters: kernel [kh x kw x Cin x Cout]
/// and one bias per output channel.
struct ConvRef {
  const Tensor& kernel;
  const Tensor& bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t kernel_h() const { return kernel.dim(0); }
  std::size_t kernel_w() const { return kernel.dim(1); }
  std::size_t in_channels() const { return kernel.dim(2); }
  std::size_t out_channels() const { return kernel.dim(3); }
  bool is_pointwise() const { return kernel_h() == 1 && kernel_w() == 1; }

  void validate() const {
    if (kernel.rank() != 4)
      detail::raise<shape_error>("conv kernel must be kh x kw x Cin x Cout, got ", to_string(kernel.shape()));
    if (bias.rank() != 1 || bias.dim(0) != out_channels())
      detail::raise<shape_error>("conv bias ", to_string(bias.shape()), " does not match ", out_channels(),
                                 " output channels");
    if (stride < 1) detail::raise<config_error>("conv stride must be >= 1");
  }
};

/// Owning parameters of one convolutional layer.
struct ConvParams {
  Tensor kernel;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  operator ConvRef() const { return {kernel, bias, stride, pad}; }
  std::size_t kernel_h() const { return kernel.dim(0); }
  std::size_t kernel_w() const { return kernel.dim(1); }
  std::size_t in_channels() const { return kernel.dim(2); }
  std::size_t out_channels() const { return kernel.dim(3); }
  bool is_pointwise() const { return ConvRef(*this).is_pointwise(); }
  void validate() const { ConvRef(*this).validate(); }
};

struct ConvGrads {
  Tensor input;  // empty when not requested
  Tensor kernel;
  Tensor bias;
};

inline Shape conv_output_shape(const Shape& input, const ConvRef& p, const std::string& context = "conv") {
  p.validate();
  if (input.size() != 4) detail::raise<shape_error>(context, ": expected NxHxWxC input, got ", to_string(input));
  if (input[3] != p.in_channels())
    detail::raise<shape_error>(context, ": input has ", input[3], " channels but kernel expects ", p.in_channels());
  return {input[0], window_output_extent(input[1], p.kernel_h(), p.stride, p.pad, context + " height"),
          window_output_extent(input[2], p.kernel_w(), p.stride, p.pad, context + " width"), p.out_channels()};
}

namespace detail {

inline bool is_reshape_conv(const ConvRef& p) { return p.is_pointwise() && p.stride == 1 && p.pad == 0; }

// Lowered input of the whole batch: (N*Ho*Wo) x (kh*kw*Cin).
inline Tensor batch_im2col(const Tensor& input, const ConvRef& p, const Shape& out) {
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
  const std::size_t rows = out[1] * out[2], cols = p.kernel_h() * p.kernel_w() * c;
  Tensor lowered({n * rows, cols});
  for (std::size_t b = 0; b < n; ++b) {
    Tensor image({h, w, c}, std::vector<double>(input.raw() + b * h * w * c, input.raw() + (b + 1) * h * w * c));
    const Tensor m = im2col(image, p.kernel_h(), p.kernel_w(), p.stride, p.pad);
    std::copy(m.data().begin(), m.data().end(), lowered.raw() + b * rows * cols);
  }
  return lowered;
}

inline MatrixView kernel_matrix(const ConvRef& p) {
  return matrix_view(p.kernel, p.kernel_h() * p.kernel_w() * p.in_channels(), p.out_channels());
}

inline void add_bias_rows(Tensor& m, const Tensor& bias) {
  const std::size_t cols = bias.size();
  double* row = m.raw();
  for (std::size_t r = 0; r < m.size() / cols; ++r, row += cols)
    for (std::size_t j = 0; j < cols; ++j) row[j] += bias[j];
}

inline Tensor column_sums(const Tensor& m, std::size_t cols) {
  Tensor sums({cols});
  const double* row = m.raw();
  for (std::size_t r = 0; r < m.size() / cols; ++r, row += cols)
    for (std::size_t j = 0; j < cols; ++j) sums[j] += row[j];
  return sums;
}

}  // namespace detail

/// out[n,y,x,j] = b_j + sum_{dy,dx,i} in[n, y*s+dy-pad, x*s+dx-pad, i] * k[dy,dx,i,j],
/// computed as an im2col lowering followed by one matrix product.
inline Tensor conv_forward(const Tensor& input, const ConvRef& p) {
  const Shape out = conv_output_shape(input.shape(), p);
  Tensor result = matmul(matrix_view(detail::batch_im2col(input, p, out)), detail::kernel_matrix(p));
  detail::add_bias_rows(result, p.bias);
  return std::move(result).reshaped(out);
}

/// 1x1 convolution as a (N*H*W) x Cin by Cin x Cout product. Same summation
/// order as conv_forward, so both paths agree bit for bit.
inline Tensor conv1x1_forward(const Tensor& input, const ConvRef& p) {
  if (!p.is_pointwise())
    detail::raise<config_error>("conv1x1_forward: kernel is ", p.kernel_h(), "x", p.kernel_w(), ", expected 1x1");
  const Shape out = conv_output_shape(input.shape(), p);
  if (!detail::is_reshape_conv(p)) return conv_forward(input, p);
  const std::size_t pixels = input.size() / p.in_channels();
  Tensor result = matmul(matrix_view(input, pixels, p.in_channels()), detail::kernel_matrix(p));
  detail::add_bias_rows(result, p.bias);
  return std::move(result).reshaped(out);
}

inline ConvGrads conv_backward(const Tensor& input, const ConvRef& p, const Tensor& grad_out,
                               bool want_input_grad = true) {
  const Shape out = conv_output_shape(input.shape(), p);
  if (grad_out.shape() != out)
    detail::raise<shape_error>("conv_backward: grad_out ", to_string(grad_out.shape()), " does not match output ",
                               to_string(out));
  const std::size_t rows = out[0] * out[1] * out[2];
  const MatrixView g = matrix_view(grad_out, rows, p.out_channels());
  const bool reshape_only = detail::is_reshape_conv(p);
  Tensor lowered;
  if (!reshape_only) lowered = detail::batch_im2col(input, p, out);
  const MatrixView cols = reshape_only ? matrix_view(input, rows, p.in_channels())
                                       : matrix_view(lowered, rows, lowered.size() / rows);

  ConvGrads grads;
  grads.kernel = matmul_at_b(cols, g).reshaped(p.kernel.shape());
  grads.bias = detail::column_sums(grad_out, p.out_channels());
  if (want_input_grad) {
    Tensor gcols = matmul_a_bt(g, detail::kernel_matrix(p));
    if (reshape_only) {
      grads.input = std::move(gcols).reshaped(input.shape());
    } else {
      grads.input = Tensor(input.shape());
      const std::size_t h = input.dim(1), w = input.dim(2), c = input.dim(3);
      const std::size_t per_sample = out[1] * out[2] * gcols.dim(1);
      for (std::size_t b = 0; b < input.dim(0); ++b)
        col2im_accumulate(gcols.raw() + b * per_sample, h, w, c, p.kernel_h(), p.kernel_w(), p.stride, p.pad,
                          grads.input.raw() + b * h * w * c);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

inline Tensor relu(Tensor x) {
  for (double& v : x.data()) v = v > 0.0 ? v : 0.0;
  return x;
}

/// Subgradient at exactly zero is zero.
inline Tensor relu_backward(const Tensor& input, Tensor grad_out) {
  if (input.shape() != grad_out.shape())
    detail::raise<shape_error>("relu_backward: ", to_string(input.shape()), " vs ", to_string(grad_out.shape()));
  for (std::size_t i = 0; i < input.size(); ++i)
    if (!(input[i] > 0.0)) grad_out[i] = 0.0;
  return grad_out;
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

/// For every pooled element, the flat input offset that attained the max.
struct PoolIndexMap {
  Shape input_shape;
  Shape output_shape;
  std::vector<std::size_t> winners;
};

struct PoolResult {
  Tensor output;
  PoolIndexMap index_map;
};

inline Shape maxpool_output_shape(const Shape& input, std::size_t window = 3, std::size_t stride = 2,
                                  const std::string& context = "maxpool") {
  if (input.size() != 4) detail::raise<shape_error>(context, ": expected NxHxWxC input, got ", to_string(input));
  return {input[0], window_output_extent(input[1], window, stride, 0, context + " height"),
          window_output_extent(input[2], window, stride, 0, context + " width"), input[3]};
}

/// Ties resolve to the lowest flat input index.
inline PoolResult maxpool_forward(const Tensor& input, std::size_t window = 3, std::size_t stride = 2) {
  const Shape out = maxpool_output_shape(input.shape(), window, stride);
  const std::size_t h = input.dim(1), w = input.dim(2), c = input.dim(3);
  PoolResult r{Tensor(out), PoolIndexMap{input.shape(), out, std::vector<std::size_t>(shape_size(out))}};
  std::size_t o = 0;
  for (std::size_t b = 0; b < out[0]; ++b)
    for (std::size_t oy = 0; oy < out[1]; ++oy)
      for (std::size_t ox = 0; ox < out[2]; ++ox)
        for (std::size_t ch = 0; ch < c; ++ch, ++o) {
          std::size_t best = ((b * h + oy * stride) * w + ox * stride) * c + ch;
          for (std::size_t dy = 0; dy < window; ++dy)
            for (std::size_t dx = 0; dx < window; ++dx) {
              const std::size_t idx = ((b * h + oy * stride + dy) * w + ox * stride + dx) * c + ch;
              if (input[idx] > input[best]) best = idx;
            }
          r.output[o] = input[best];
          r.index_map.winners[o] = best;
        }
  return r;
}

inline Tensor maxpool_backward(const PoolIndexMap& map, const Tensor& grad_out) {
  if (grad_out.shape() != map.output_shape || map.winners.size() != grad_out.size())
    detail::raise<shape_error>("maxpool_backward: stale index map (", to_string(map.output_shape), " vs grad ",
                               to_string(grad_out.shape()), ")");
  Tensor grad_in(map.input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) grad_in[map.winners[o]] += grad_out[o];
  return grad_in;
}

// ---------------------------------------------------------------------------
// Local response normalization across channels
// ---------------------------------------------------------------------------

struct LrnParams {
  std::size_t n = 5;
  double k = 2.0;
  double alpha = 1e-4;
  double beta = 0.75;

  void validate() const {
    if (n < 1) detail::raise<config_error>("lrn: local size must be >= 1");
    if (!(k > 0.0)) detail::raise<config_error>("lrn: k must be > 0");
    if (!(alpha >= 0.0)) detail::raise<config_error>("lrn: alpha must be >= 0");
    if (!(beta > 0.0)) detail::raise<config_error>("lrn: beta must be > 0");
  }

  friend bool operator==(const LrnParams&, const LrnParams&) = default;
};

namespace detail {

// scale[c] = k + (alpha/n) * sum of x^2 over channels [c - n/2, c + n/2], zero-padded.
inline Tensor lrn_scale(const Tensor& input, const LrnParams& p) {
  const std::size_t c = input.shape().back();
  const std::size_t half = p.n / 2;
  const double coeff = p.alpha / static_cast<double>(p.n);
  Tensor scale(input.shape());
  std::vector<double> sq(c);
  for (std::size_t base = 0; base < input.size(); base += c) {
    for (std::size_t ch = 0; ch < c; ++ch) sq[ch] = input[base + ch] * input[base + ch];
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t lo = ch >= half ? ch - half : 0;
      const std::size_t hi = std::min(c - 1, ch + half);
      double sum = 0.0;
      for (std::size_t j = lo; j <= hi; ++j) sum += sq[j];
      scale[base + ch] = p.k + coeff * sum;
    }
  }
  return scale;
}

}  // namespace detail

/// out = x / s(x), s(x) = (k + (alpha/n) * sum_{local channels} x^2)^beta.
inline Tensor lrn_forward(const Tensor& input, const LrnParams& p) {
  p.validate();
  Tensor out = detail::lrn_scale(input, p);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input[i] * std::pow(out[i], -p.beta);
  return out;
}

/// d out[c'] / d x[c] = delta(c,c') s[c']^-beta - 2 (alpha/n) beta x[c'] x[c] s[c']^(-beta-1)
/// for every c' whose window contains c.
inline Tensor lrn_backward(const Tensor& input, const LrnParams& p, const Tensor& grad_out) {
  p.validate();
  if (input.shape() != grad_out.shape())
    detail::raise<shape_error>("lrn_backward: ", to_string(input.shape()), " vs ", to_string(grad_out.shape()));
  const Tensor scale = detail::lrn_scale(input, p);
  const std::size_t c = input.shape().back();
  const std::size_t half = p.n / 2;
  const double coeff = -2.0 * p.alpha * p.beta / static_cast<double>(p.n);
  Tensor grad_in(input.shape());
  std::vector<double> cross(c);
  for (std::size_t base = 0; base < input.size(); base += c) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = base + ch;
      grad_in[i] = grad_out[i] * std::pow(scale[i], -p.beta);
      cross[ch] = grad_out[i] * input[i] * std::pow(scale[i], -p.beta - 1.0);
    }
#ifndef LFHN_FAULT_DROP_LRN_CROSS_TERMS
    // Windows are symmetric, so channel ch lies in the window of c' iff c' lies in the window of ch.
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t lo = ch >= half ? ch - half : 0;
      const std::size_t hi = std::min(c - 1, ch + half);
      double sum = 0.0;
      for (std::size_t j = lo; j <= hi; ++j) sum += cross[j];
      grad_in[base + ch] += coeff * input[base + ch] * sum;
    }
#else
    (void)half;
    (void)coeff;
#endif
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Channel concatenation
// ---------------------------------------------------------------------------

inline Tensor concat_channels(std::span<const Tensor> inputs) {
  if (inputs.empty()) detail::raise<shape_error>("concat_channels: no inputs");
  const Shape& first = inputs.front().shape();
  if (first.empty()) detail::raise<shape_error>("concat_channels: scalar input");
  std::size_t total = 0;
  for (const Tensor& t : inputs) {
    if (t.rank() != first.size() || !std::equal(first.begin(), first.end() - 1, t.shape().begin()))
      detail::raise<shape_error>("concat_channels: spatial mismatch ", to_string(first), " vs ",
                                 to_string(t.shape()));
    total += t.shape().back();
  }
  Shape out_shape = first;
  out_shape.back() = total;
  Tensor out(out_shape);
  const std::size_t pixels = out.size() / total;
  std::size_t offset = 0;
  for (const Tensor& t : inputs) {
    const std::size_t c = t.shape().back();
    for (std::size_t px = 0; px < pixels; ++px)
      std::copy_n(t.raw() + px * c, c, out.raw() + px * total + offset);
    offset += c;
  }
  return out;
}

inline std::vector<Tensor> split_channels(const Tensor& grad, std::span<const std::size_t> extents) {
  std::size_t total = 0;
  for (std::size_t e : extents) total += e;
  if (grad.rank() == 0 || grad.shape().back() != total)
    detail::raise<shape_error>("split_channels: ", to_string(grad.shape()), " does not have ", total, " channels");
  const std::size_t pixels = grad.size() / total;
  std::vector<Tensor> parts;
  std::size_t offset = 0;
  for (std::size_t c : extents) {
    Shape s = grad.shape();
    s.back() = c;
    Tensor part(s);
    for (std::size_t px = 0; px < pixels; ++px)
      std::copy_n(grad.raw() + px * total + offset, c, part.raw() + px * c);
    parts.push_back(std::move(part));
    offset += c;
  }
  return parts;
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

/// out[n][j] = sum_i in[n][i] * weight[i][j] + bias[j]; weight is Din x Dout.
struct FcRef {
  const Tensor& weight;
  const Tensor& bias;

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  void validate() const {
    if (weight.rank() != 2) detail::raise<shape_error>("fc weight must be Din x Dout, got ", to_string(weight.shape()));
    if (bias.rank() != 1 || bias.dim(0) != out_features())
      detail::raise<shape_error>("fc bias ", to_string(bias.shape()), " does not match ", out_features(), " outputs");
  }
};

struct FcParams {
  Tensor weight;
  Tensor bias;

  operator FcRef() const { return {weight, bias}; }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  void validate() const { FcRef(*this).validate(); }
};

struct FcGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

namespace detail {

inline MatrixView as_batch_matrix(const Tensor& input, std::size_t features, const char* context) {
  if (input.rank() == 1 && input.dim(0) == features) return matrix_view(input, 1, features);
  if (input.rank() == 2 && input.dim(1) == features) return matrix_view(input);
  raise<shape_error>(context, ": input ", to_string(input.shape()), " does not have ", features, " features");
}

}  // namespace detail

inline Tensor fc_forward(const Tensor& input, const FcRef& p) {
  p.validate();
  Tensor out = matmul(detail::as_batch_matrix(input, p.in_features(), "fc_forward"), matrix_view(p.weight));
  detail::add_bias_rows(out, p.bias);
  if (input.rank() == 1) return std::move(out).reshaped({p.out_features()});
  return out;
}

inline FcGrads fc_backward(const Tensor& input, const FcRef& p, const Tensor& grad_out,
                           bool want_input_grad = true) {
  p.validate();
  const MatrixView x = detail::as_batch_matrix(input, p.in_features(), "fc_backward");
  const MatrixView g = detail::as_batch_matrix(grad_out, p.out_features(), "fc_backward grad");
  if (x.rows != g.rows) detail::raise<shape_error>("fc_backward: batch ", x.rows, " vs grad batch ", g.rows);
  FcGrads grads;
  grads.weight = matmul_at_b(x, g);
  grads.bias = detail::column_sums(grad_out, p.out_features());
  if (want_input_grad) grads.input = matmul_a_bt(g, matrix_view(p.weight)).reshaped(input.shape());
  return grads;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy
// ---------------------------------------------------------------------------

struct XentResult {
  double loss = 0.0;  // mean over the batch
  Tensor grad;        // d loss / d logits, same shape as logits
  Tensor probs;
};

inline XentResult softmax_xent(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 && logits.rank() != 1)
    detail::raise<shape_error>("softmax_xent: logits must be K or NxK, got ", to_string(logits.shape()));
  const std::size_t k = logits.shape().back();
  const std::size_t n = logits.size() / k;
  if (labels.size() != n) detail::raise<shape_error>("softmax_xent: ", labels.size(), " labels for ", n, " rows");
  XentResult r{0.0, Tensor(logits.shape()), Tensor(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t row = 0; row < n; ++row) {
    if (labels[row] >= k) detail::raise<data_error>("softmax_xent: label ", labels[row], " out of range [0, ", k, ")");
    const double* z = logits.raw() + row * k;
    double* p = r.probs.raw() + row * k;
    const double zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) p[j] = std::exp(z[j] - zmax - log_denom);
    r.loss += (log_denom - (z[labels[row]] - zmax)) * inv_n;
    double* g = r.grad.raw() + row * k;
    for (std::size_t j = 0; j < k; ++j) g[j] = (p[j] - (j == labels[row] ? 1.0 : 0.0)) * inv_n;
  }
  return r;
}

inline XentResult softmax_xent(const Tensor& logits, std::size_t label) {
  const std::size_t labels[] = {label};
  return softmax_xent(logits, labels);
}

}  // namespace lfhn

#endif  // LFHN_LAYERS_HPP
