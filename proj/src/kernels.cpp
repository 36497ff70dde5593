#include "fpx/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "fpx/parallel.hpp"

namespace fpx::kernels {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// C[m x n] = op(A) * op(B) where op transposes when requested. A is stored
// as (trans_a ? k x m : m x k), B as (trans_b ? n x k : k x n). Rows of C are
// split across workers; each row block is an independent product.
void gemm(const double* a, bool trans_a, const double* b, bool trans_b, double* c, std::size_t m,
          std::size_t k, std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto K = static_cast<Eigen::Index>(k);
  const auto N = static_cast<Eigen::Index>(n);
  const std::size_t min_rows = std::max<std::size_t>(1, (1u << 16) / std::max<std::size_t>(1, k * n));
  parallel_for(m, min_rows, [&](std::size_t r0, std::size_t r1) {
    const auto R0 = static_cast<Eigen::Index>(r0);
    const auto R = static_cast<Eigen::Index>(r1 - r0);
    MutMap out(c + r0 * n, R, N);
    if (!trans_a && !trans_b) {
      out.noalias() = ConstMap(a, M, K).middleRows(R0, R) * ConstMap(b, K, N);
    } else if (!trans_a && trans_b) {
      out.noalias() = ConstMap(a, M, K).middleRows(R0, R) * ConstMap(b, N, K).transpose();
    } else if (trans_a && !trans_b) {
      out.noalias() = ConstMap(a, K, M).transpose().middleRows(R0, R) * ConstMap(b, K, N);
    } else {
      out.noalias() =
          ConstMap(a, K, M).transpose().middleRows(R0, R) * ConstMap(b, N, K).transpose();
    }
  });
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename F>
Tensor unary(const Tensor& x, const char* name, F f) {
  std::vector<double> out(x.size());
  const double* in = x.raw();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  Tensor t(x.shape(), std::move(out));
  check_finite(t, name);
  return t;
}

template <typename F>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f) {
  require_same(a, b, name);
  std::vector<double> out(a.size());
  const double* pa = a.raw();
  const double* pb = b.raw();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(pa[i], pb[i]);
  Tensor t(a.shape(), std::move(out));
  check_finite(t, name);
  return t;
}

struct ConvDims {
  std::size_t cin, h, w, cout, kh, kw, oh, ow;
};

ConvDims conv_dims(const Shape& in, const Shape& k, Conv2dGeometry geom) {
  if (in.size() != 3 || k.size() != 4) {
    throw DimensionError("conv2d expects C x H x W input and O x C x kH x kW kernel, got " +
                         shape_str(in) + " and " + shape_str(k));
  }
  if (in[0] != k[1]) {
    throw DimensionError("conv2d channel mismatch: input " + shape_str(in) + ", kernel " +
                         shape_str(k));
  }
  ConvDims d{in[0], in[1], in[2], k[0], k[2], k[3], 0, 0};
  d.oh = conv2d_output_extent(d.h, d.kh, geom);
  d.ow = conv2d_output_extent(d.w, d.kw, geom);
  return d;
}

// cols[(c, i, j), (y, x)] = input[c, y*s - p + i, x*s - p + j]
std::vector<double> im2col(const double* in, const ConvDims& d, Conv2dGeometry g) {
  const std::size_t rows = d.cin * d.kh * d.kw;
  const std::size_t cols = d.oh * d.ow;
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t c = 0; c < d.cin; ++c) {
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        double* dst = out.data() + ((c * d.kh + i) * d.kw + j) * cols;
        for (std::size_t y = 0; y < d.oh; ++y) {
          const long iy = static_cast<long>(y * g.stride + i) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          const double* src = in + (c * d.h + static_cast<std::size_t>(iy)) * d.w;
          for (std::size_t x = 0; x < d.ow; ++x) {
            const long ix = static_cast<long>(x * g.stride + j) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
            dst[y * d.ow + x] = src[ix];
          }
        }
      }
    }
  }
  return out;
}

void col2im(const double* cols_data, const ConvDims& d, Conv2dGeometry g, double* out) {
  const std::size_t cols = d.oh * d.ow;
  for (std::size_t c = 0; c < d.cin; ++c) {
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        const double* src = cols_data + ((c * d.kh + i) * d.kw + j) * cols;
        for (std::size_t y = 0; y < d.oh; ++y) {
          const long iy = static_cast<long>(y * g.stride + i) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          double* dst = out + (c * d.h + static_cast<std::size_t>(iy)) * d.w;
          for (std::size_t x = 0; x < d.ow; ++x) {
            const long ix = static_cast<long>(x * g.stride + j) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
            dst[ix] += src[y * d.ow + x];
          }
        }
      }
    }
  }
}

void require_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for " + shape_str(x.shape()));
  }
}

// Splits a shape around `axis` into outer * extent * inner.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  if (k > 0) gemm(a.raw(), false, b.raw(), false, out.data(), m, k, n);
  Tensor t({m, n}, std::move(out));
  check_finite(t, "matmul");
  return t;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected matrix, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const double* p = a.raw();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = p[i * n + j];
  return Tensor({n, m}, std::move(out));
}

std::size_t conv2d_output_extent(std::size_t in, std::size_t k, Conv2dGeometry geom) {
  if (geom.stride == 0) throw DimensionError("conv2d: stride must be positive");
  const long span = static_cast<long>(in + 2 * geom.padding) - static_cast<long>(k);
  if (span < 0 || span % static_cast<long>(geom.stride) != 0) {
    throw DimensionError("conv2d: extent " + std::to_string(in) + " with kernel " +
                         std::to_string(k) + ", stride " + std::to_string(geom.stride) +
                         ", padding " + std::to_string(geom.padding) +
                         " gives a non-integral output size");
  }
  return static_cast<std::size_t>(span) / geom.stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, Conv2dGeometry geom) {
  const ConvDims d = conv_dims(input.shape(), kernel.shape(), geom);
  const std::size_t inner = d.cin * d.kh * d.kw;
  const std::size_t cols = d.oh * d.ow;
  std::vector<double> out(d.cout * cols, 0.0);
  const auto col = im2col(input.raw(), d, geom);
  gemm(kernel.raw(), false, col.data(), false, out.data(), d.cout, inner, cols);
  Tensor t({d.cout, d.oh, d.ow}, std::move(out));
  check_finite(t, "conv2d");
  return t;
}

Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape,
                         Conv2dGeometry geom) {
  const ConvDims d = conv_dims(input_shape, kernel.shape(), geom);
  if (grad_out.shape() != Shape{d.cout, d.oh, d.ow}) {
    throw DimensionError("conv2d_input_grad: gradient shape " + shape_str(grad_out.shape()) +
                         " does not match conv output");
  }
  const std::size_t inner = d.cin * d.kh * d.kw;
  const std::size_t cols = d.oh * d.ow;
  std::vector<double> col(inner * cols, 0.0);
  gemm(kernel.raw(), true, grad_out.raw(), false, col.data(), inner, d.cout, cols);
  std::vector<double> out(shape_size(input_shape), 0.0);
  col2im(col.data(), d, geom, out.data());
  Tensor t(input_shape, std::move(out));
  check_finite(t, "conv2d_input_grad");
  return t;
}

Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out, const Shape& kernel_shape,
                          Conv2dGeometry geom) {
  const ConvDims d = conv_dims(input.shape(), kernel_shape, geom);
  if (grad_out.shape() != Shape{d.cout, d.oh, d.ow}) {
    throw DimensionError("conv2d_kernel_grad: gradient shape " + shape_str(grad_out.shape()) +
                         " does not match conv output");
  }
  const std::size_t inner = d.cin * d.kh * d.kw;
  const std::size_t cols = d.oh * d.ow;
  const auto col = im2col(input.raw(), d, geom);
  std::vector<double> out(d.cout * inner, 0.0);
  gemm(grad_out.raw(), false, col.data(), true, out.data(), d.cout, cols, inner);
  Tensor t(kernel_shape, std::move(out));
  check_finite(t, "conv2d_kernel_grad");
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, "mul", [](double x, double y) { return x * y; });
}
Tensor div(const Tensor& a, const Tensor& b) {
  return binary(a, b, "div", [](double x, double y) { return x / y; });
}

Tensor scale(const Tensor& x, double s) {
  return unary(x, "scale", [s](double v) { return s * v; });
}
Tensor neg(const Tensor& x) {
  return unary(x, "neg", [](double v) { return -v; });
}
Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; });
}
Tensor step(const Tensor& x) {
  return unary(x, "step", [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}
Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}
Tensor log(const Tensor& x) {
  return unary(x, "log", [](double v) { return std::log(v); });
}
Tensor clamp_box(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw DimensionError("clamp_box: empty box");
  return unary(x, "clamp_box", [lo, hi](double v) { return std::clamp(v, lo, hi); });
}
Tensor box_mask(const Tensor& x, double lo, double hi) {
  return unary(x, "box_mask", [lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}
Tensor threshold(const Tensor& x, double tau) {
  return unary(x, "threshold", [tau](double v) { return v >= tau ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor t = Tensor::scalar(s);
  check_finite(t, "sum");
  return t;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean of an empty tensor");
  return Tensor::scalar(sum(x).item() / static_cast<double>(x.size()));
}

Tensor sq_norm(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  Tensor t = Tensor::scalar(s);
  check_finite(t, "sq_norm");
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor fill(const Tensor& s, const Shape& shape) { return Tensor::full(shape, s.item()); }

Tensor broadcast_axis(const Tensor& b, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size() || b.size() != shape[axis]) {
    throw DimensionError("broadcast_axis: vector of " + std::to_string(b.size()) +
                         " entries cannot span axis " + std::to_string(axis) + " of " +
                         shape_str(shape));
  }
  const AxisSplit s = split_at(shape, axis);
  std::vector<double> out(shape_size(shape));
  const double* pb = b.raw();
  double* dst = out.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) *dst++ = pb[e];
  return Tensor(shape, std::move(out));
}

Tensor reduce_to_axis(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "reduce_to_axis");
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<double> out(s.extent, 0.0);
  const double* src = x.raw();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[e] += *src++;
  Tensor t({s.extent}, std::move(out));
  check_finite(t, "reduce_to_axis");
  return t;
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  require_axis(a, axis, "concat");
  if (a.rank() != b.rank()) throw DimensionError("concat: rank mismatch");
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.dim(i) != b.dim(i)) {
      throw DimensionError("concat: shapes " + shape_str(a.shape()) + " and " +
                           shape_str(b.shape()) + " differ off axis " + std::to_string(axis));
    }
  }
  Shape shape = a.shape();
  shape[axis] += b.dim(axis);
  const AxisSplit sa = split_at(a.shape(), axis);
  const AxisSplit sb = split_at(b.shape(), axis);
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  for (std::size_t o = 0; o < sa.outer; ++o) {
    const double* pa = a.raw() + o * sa.extent * sa.inner;
    const double* pb = b.raw() + o * sb.extent * sb.inner;
    out.insert(out.end(), pa, pa + sa.extent * sa.inner);
    out.insert(out.end(), pb, pb + sb.extent * sb.inner);
  }
  return Tensor(std::move(shape), std::move(out));
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_axis(x, axis, "slice");
  if (start + length > x.dim(axis)) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") exceeds axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = length;
  std::vector<double> out;
  out.reserve(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* p = x.raw() + (o * s.extent + start) * s.inner;
    out.insert(out.end(), p, p + length * s.inner);
  }
  return Tensor(std::move(shape), std::move(out));
}

Tensor embed(const Tensor& x, std::size_t axis, std::size_t start, std::size_t total) {
  require_axis(x, axis, "embed");
  if (start + x.dim(axis) > total) throw DimensionError("embed: target axis too short");
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = total;
  std::vector<double> out(shape_size(shape), 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* p = x.raw() + o * s.extent * s.inner;
    std::copy(p, p + s.extent * s.inner, out.begin() + static_cast<long>((o * total + start) * s.inner));
  }
  return Tensor(std::move(shape), std::move(out));
}

}  // namespace fpx::kernels
