#pragma once

#include "fpx/graph.hpp"

// Differentiable operations on graph nodes. Each records a node and computes
// its value eagerly with the matching kernel.
namespace fpx::ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add_scalar(Var x, double s);
Var scale(Var x, double s);
Var neg(Var x);
Var relu(Var x);
Var step(Var x);
Var sigmoid(Var x);
Var log(Var x);
Var clamp_box(Var x, double lo = -1.0, double hi = 1.0);
Var box_mask(Var x, double lo = -1.0, double hi = 1.0);
/// Hard 0/1 decision; backward through it raises NonDifferentiableError.
Var threshold(Var x, double tau);

Var sum(Var x);
Var mean(Var x);
Var sq_norm(Var x);
Var fill(Var s, const Shape& shape);
Var broadcast_axis(Var b, const Shape& shape, std::size_t axis);
Var reduce_to_axis(Var x, std::size_t axis);

Var matmul(Var a, Var b);
Var transpose(Var a);
Var conv2d(Var input, Var kernel, kernels::Conv2dGeometry geom = {});
Var conv2d_input_grad(Var grad_out, Var kernel, const Shape& input_shape,
                      kernels::Conv2dGeometry geom = {});
Var conv2d_kernel_grad(Var input, Var grad_out, const Shape& kernel_shape,
                       kernels::Conv2dGeometry geom = {});

Var concat(Var a, Var b, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length);
Var embed(Var x, std::size_t axis, std::size_t start, std::size_t total);
Var reshape(Var x, const Shape& shape);

// Composites.
Var square(Var x);
/// sum(a * b)
Var inner(Var a, Var b);
/// x W^T + b for a batch of rows x (B x in), W (out x in), b (out).
Var linear(Var x, Var weight, Var bias);
/// Adds a per-channel bias to a C x H x W image.
Var channel_bias(Var x, Var bias);

}  // namespace fpx::ops
