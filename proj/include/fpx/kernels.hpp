#pragma once

#include <cstddef>

#include "fpx/tensor.hpp"

// Numerical kernels over Tensor values. Every kernel validates shapes
// (DimensionError) and rejects non-finite results (NonFiniteError).
namespace fpx::kernels {

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Linear algebra. Both operands are rank 2.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Cross-correlation of a C_in x H x W image with a C_out x C_in x kH x kW
/// kernel, zero padded.
Tensor conv2d(const Tensor& input, const Tensor& kernel, Conv2dGeometry geom);
/// Adjoint of conv2d with respect to its input (a transposed convolution).
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape,
                         Conv2dGeometry geom);
/// Adjoint of conv2d with respect to its kernel.
Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out, const Shape& kernel_shape,
                          Conv2dGeometry geom);
std::size_t conv2d_output_extent(std::size_t in, std::size_t k, Conv2dGeometry geom);

// Elementwise, equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double s);
Tensor neg(const Tensor& x);
Tensor relu(const Tensor& x);
/// 1 where x > 0, else 0 (the ReLU derivative, zero at the kink).
Tensor step(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
/// Projection onto the box [lo, hi]; defaults to [-1, 1].
Tensor clamp_box(const Tensor& x, double lo = -1.0, double hi = 1.0);
/// 1 where lo < x < hi, else 0.
Tensor box_mask(const Tensor& x, double lo = -1.0, double hi = 1.0);
/// 1 where x >= tau, else 0.
Tensor threshold(const Tensor& x, double tau);

// Reductions to a rank-0 tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sq_norm(const Tensor& x);
double dot(const Tensor& a, const Tensor& b);

/// Tensor of `shape` filled with the value of the scalar `s`.
Tensor fill(const Tensor& s, const Shape& shape);
/// Replicates the vector `b` (length shape[axis]) along every other axis.
Tensor broadcast_axis(const Tensor& b, const Shape& shape, std::size_t axis);
/// Sums over every axis except `axis`; adjoint of broadcast_axis.
Tensor reduce_to_axis(const Tensor& x, std::size_t axis);

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
/// Zero tensor with extent `total` along `axis` and x placed at `start`;
/// adjoint of slice.
Tensor embed(const Tensor& x, std::size_t axis, std::size_t start, std::size_t total);

}  // namespace fpx::kernels
