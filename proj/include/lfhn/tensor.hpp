#ifndef LFHN_TENSOR_HPP
#define LFHN_TENSOR_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace lfhn {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out.empty() ? "scalar" : out;
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Row-major offset of a multi-index.
inline std::size_t ravel_index(const Shape& shape, std::span<const std::size_t> index) {
  if (index.size() != shape.size())
    detail::raise<shape_error>("index rank ", index.size(), " does not match shape ", to_string(shape));
  std::size_t offset = 0;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (index[d] >= shape[d])
      detail::raise<shape_error>("index ", index[d], " out of range for axis ", d, " of ", to_string(shape));
    offset = offset * shape[d] + index[d];
  }
  return offset;
}

inline std::vector<std::size_t> unravel_index(const Shape& shape, std::size_t offset) {
  if (offset >= shape_size(shape))
    detail::raise<shape_error>("offset ", offset, " out of range for ", to_string(shape));
  std::vector<std::size_t> index(shape.size());
  for (std::size_t d = shape.size(); d-- > 0;) {
    index[d] = offset % shape[d];
    offset /= shape[d];
  }
  return index;
}

/// Dense tensor of doubles in row-major order. Activations are N,H,W,C;
/// convolution kernels are KH,KW,Cin,Cout; matrices are rank 2.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    validate_extents();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_extents();
    if (data_.size() != shape_size(shape_))
      detail::raise<shape_error>("data length ", data_.size(), " does not match shape ", to_string(shape_));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& row : rows) {
      if (row.size() != n) detail::raise<shape_error>("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({m, n}, std::move(data));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  template <typename... I>
  double& operator()(I... idx) {
    return data_[offset(idx...)];
  }
  template <typename... I>
  double operator()(I... idx) const {
    return data_[offset(idx...)];
  }

  template <typename... I>
  std::size_t offset(I... idx) const {
    const std::size_t index[] = {static_cast<std::size_t>(idx)...};
    return ravel_index(shape_, index);
  }

  Tensor reshaped(Shape shape) const& {
    Tensor out = *this;
    return std::move(out).reshaped(std::move(shape));
  }

  Tensor reshaped(Shape shape) && {
    if (shape_size(shape) != data_.size())
      detail::raise<shape_error>("cannot reshape ", to_string(shape_), " to ", to_string(shape));
    shape_ = std::move(shape);
    validate_extents();
    return std::move(*this);
  }

  void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void validate_extents() const {
    for (std::size_t extent : shape_)
      if (extent == 0) detail::raise<shape_error>("zero extent in shape ", to_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline ConstMatrixMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline MatrixMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatrixMap(t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) raise<shape_error>(what, " must be a matrix, got ", to_string(t.shape()));
}

}  // namespace detail

/// Read-only row-major matrix over borrowed storage.
struct MatrixView {
  const double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Views a tensor as rows x cols without copying; the element counts must agree.
inline MatrixView matrix_view(const Tensor& t, std::size_t rows, std::size_t cols) {
  if (rows * cols != t.size())
    detail::raise<shape_error>("cannot view ", to_string(t.shape()), " as ", rows, "x", cols);
  return {t.raw(), rows, cols};
}

inline MatrixView matrix_view(const Tensor& t) {
  detail::require_matrix(t, "matrix view");
  return {t.raw(), t.dim(0), t.dim(1)};
}

namespace detail {

inline ConstMatrixMap as_matrix(const MatrixView& v) {
  return ConstMatrixMap(v.data, static_cast<Eigen::Index>(v.rows), static_cast<Eigen::Index>(v.cols));
}

inline std::string dims(const MatrixView& v) { return std::to_string(v.rows) + "x" + std::to_string(v.cols); }

}  // namespace detail

/// c = a * b for a [m x k], b [k x n].
inline Tensor matmul(const MatrixView& a, const MatrixView& b) {
  if (a.cols != b.rows) detail::raise<shape_error>("matmul shape mismatch: ", detail::dims(a), " * ", detail::dims(b));
  Tensor c({a.rows, b.cols});
  detail::as_matrix(c, a.rows, b.cols).noalias() = detail::as_matrix(a) * detail::as_matrix(b);
  return c;
}

/// aᵀ * b for a [k x m], b [k x n].
inline Tensor matmul_at_b(const MatrixView& a, const MatrixView& b) {
  if (a.rows != b.rows)
    detail::raise<shape_error>("matmul shape mismatch: ", detail::dims(a), "^T * ", detail::dims(b));
  Tensor c({a.cols, b.cols});
  detail::as_matrix(c, a.cols, b.cols).noalias() = detail::as_matrix(a).transpose() * detail::as_matrix(b);
  return c;
}

/// a * bᵀ for a [m x k], b [n x k].
inline Tensor matmul_a_bt(const MatrixView& a, const MatrixView& b) {
  if (a.cols != b.cols)
    detail::raise<shape_error>("matmul shape mismatch: ", detail::dims(a), " * ", detail::dims(b), "^T");
  Tensor c({a.rows, b.rows});
  detail::as_matrix(c, a.rows, b.rows).noalias() = detail::as_matrix(a) * detail::as_matrix(b).transpose();
  return c;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) { return matmul(matrix_view(a), matrix_view(b)); }
inline Tensor matmul_at_b(const Tensor& a, const Tensor& b) { return matmul_at_b(matrix_view(a), matrix_view(b)); }
inline Tensor matmul_a_bt(const Tensor& a, const Tensor& b) { return matmul_a_bt(matrix_view(a), matrix_view(b)); }

inline Tensor scaled(Tensor t, double alpha) {
  for (double& v : t.data()) v *= alpha;
  return t;
}

/// Output extent of a sliding window; throws config_error when the window
/// does not tile the padded input exactly.
inline std::size_t window_output_extent(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad,
                                        const std::string& context = "window") {
  if (stride == 0) detail::raise<config_error>(context, ": stride must be positive");
  const std::size_t padded = in + 2 * pad;
  if (window > padded)
    detail::raise<config_error>(context, ": window ", window, " larger than padded input ", padded);
  if ((padded - window) % stride != 0)
    detail::raise<config_error>(context, ": non-integral output extent (", in, " + 2*", pad, " - ", window, ") / ",
                                stride, " + 1");
  return (padded - window) / stride + 1;
}

/// Lowers one H x W x C image to a (Ho*Wo) x (kh*kw*C) matrix whose row r is
/// the receptive field of output position r in (kh, kw, C) order.
inline Tensor im2col(const Tensor& image, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad) {
  if (image.rank() != 3) detail::raise<shape_error>("im2col expects an HxWxC image, got ", to_string(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const std::size_t ho = window_output_extent(h, kh, stride, pad, "im2col height");
  const std::size_t wo = window_output_extent(w, kw, stride, pad, "im2col width");
  Tensor cols({ho * wo, kh * kw * c});
  double* dst = cols.raw();
  const double* src = image.raw();
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      for (std::size_t dy = 0; dy < kh; ++dy) {
        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + dy) - static_cast<std::ptrdiff_t>(pad);
        for (std::size_t dx = 0; dx < kw; ++dx, dst += c) {
          const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * stride + dx) - static_cast<std::ptrdiff_t>(pad);
          if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) || x >= static_cast<std::ptrdiff_t>(w)) continue;
          std::copy_n(src + (static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * c, c, dst);
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatter-adds column rows back into an H x W x C image.
inline void col2im_accumulate(const double* cols, std::size_t h, std::size_t w, std::size_t c, std::size_t kh,
                              std::size_t kw, std::size_t stride, std::size_t pad, double* image) {
  const std::size_t ho = window_output_extent(h, kh, stride, pad, "col2im height");
  const std::size_t wo = window_output_extent(w, kw, stride, pad, "col2im width");
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      for (std::size_t dy = 0; dy < kh; ++dy) {
        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + dy) - static_cast<std::ptrdiff_t>(pad);
        for (std::size_t dx = 0; dx < kw; ++dx, cols += c) {
          const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * stride + dx) - static_cast<std::ptrdiff_t>(pad);
          if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) || x >= static_cast<std::ptrdiff_t>(w)) continue;
          double* px = image + (static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * c;
          for (std::size_t ch = 0; ch < c; ++ch) px[ch] += cols[ch];
        }
      }
    }
  }
}

/// Smallest index attaining the maximum.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) detail::raise<shape_error>("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline std::size_t argmax(const Tensor& v) { return argmax(v.data()); }

}  // namespace lfhn

#endif  // LFHN_TENSOR_HPP
