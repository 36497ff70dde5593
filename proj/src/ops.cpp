#include "fpx/ops.hpp"

namespace fpx::ops {
namespace {

namespace k = kernels;

Graph& same_graph(Var a, Var b, const char* op) {
  if (&a.graph() != &b.graph()) {
    throw GraphError(std::string(op) + ": operands live on different graphs");
  }
  return a.graph();
}

Var unary(OpKind op, Var x, Tensor value, OpAttrs attrs = {}) {
  return x.graph().record(op, {x.id()}, std::move(value), std::move(attrs));
}

Var binary(OpKind op, Var a, Var b, Tensor value, OpAttrs attrs = {}) {
  return same_graph(a, b, op_name(op)).record(op, {a.id(), b.id()}, std::move(value),
                                              std::move(attrs));
}

OpAttrs with_scalar(double s) {
  OpAttrs a;
  a.scalar = s;
  return a;
}

OpAttrs with_axis(std::size_t axis) {
  OpAttrs a;
  a.axis = axis;
  return a;
}

OpAttrs with_box(double lo, double hi) {
  OpAttrs a;
  a.lo = lo;
  a.hi = hi;
  return a;
}

OpAttrs with_conv(kernels::Conv2dGeometry geom, Shape shape = {}) {
  OpAttrs a;
  a.conv = geom;
  a.shape = std::move(shape);
  return a;
}

}  // namespace

Var add(Var a, Var b) { return binary(OpKind::Add, a, b, k::add(a.value(), b.value())); }
Var sub(Var a, Var b) { return binary(OpKind::Sub, a, b, k::sub(a.value(), b.value())); }
Var mul(Var a, Var b) { return binary(OpKind::Mul, a, b, k::mul(a.value(), b.value())); }
Var div(Var a, Var b) { return binary(OpKind::Div, a, b, k::div(a.value(), b.value())); }

Var add_scalar(Var x, double s) {
  const Tensor& v = x.value();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] + s;
  Tensor t(v.shape(), std::move(out));
  check_finite(t, "add_scalar");
  return unary(OpKind::AddScalar, x, std::move(t), with_scalar(s));
}

Var scale(Var x, double s) {
  return unary(OpKind::Scale, x, k::scale(x.value(), s), with_scalar(s));
}
Var neg(Var x) { return unary(OpKind::Neg, x, k::neg(x.value())); }
Var relu(Var x) { return unary(OpKind::Relu, x, k::relu(x.value())); }
Var step(Var x) { return unary(OpKind::Step, x, k::step(x.value())); }
Var sigmoid(Var x) { return unary(OpKind::Sigmoid, x, k::sigmoid(x.value())); }
Var log(Var x) { return unary(OpKind::Log, x, k::log(x.value())); }

Var clamp_box(Var x, double lo, double hi) {
  return unary(OpKind::ClampBox, x, k::clamp_box(x.value(), lo, hi), with_box(lo, hi));
}

Var box_mask(Var x, double lo, double hi) {
  return unary(OpKind::BoxMask, x, k::box_mask(x.value(), lo, hi), with_box(lo, hi));
}

Var threshold(Var x, double tau) {
  return unary(OpKind::Threshold, x, k::threshold(x.value(), tau), with_scalar(tau));
}

Var sum(Var x) { return unary(OpKind::Sum, x, k::sum(x.value())); }
Var mean(Var x) { return unary(OpKind::Mean, x, k::mean(x.value())); }
Var sq_norm(Var x) { return unary(OpKind::SqNorm, x, k::sq_norm(x.value())); }

Var fill(Var s, const Shape& shape) {
  OpAttrs a;
  a.shape = shape;
  return unary(OpKind::Fill, s, k::fill(s.value(), shape), std::move(a));
}

Var broadcast_axis(Var b, const Shape& shape, std::size_t axis) {
  OpAttrs a = with_axis(axis);
  a.shape = shape;
  return unary(OpKind::BroadcastAxis, b, k::broadcast_axis(b.value(), shape, axis), std::move(a));
}

Var reduce_to_axis(Var x, std::size_t axis) {
  return unary(OpKind::ReduceToAxis, x, k::reduce_to_axis(x.value(), axis), with_axis(axis));
}

Var matmul(Var a, Var b) { return binary(OpKind::MatMul, a, b, k::matmul(a.value(), b.value())); }
Var transpose(Var a) { return unary(OpKind::Transpose, a, k::transpose(a.value())); }

Var conv2d(Var input, Var kernel, kernels::Conv2dGeometry geom) {
  return binary(OpKind::Conv2d, input, kernel, k::conv2d(input.value(), kernel.value(), geom),
                with_conv(geom));
}

Var conv2d_input_grad(Var grad_out, Var kernel, const Shape& input_shape,
                      kernels::Conv2dGeometry geom) {
  return binary(OpKind::Conv2dInputGrad, grad_out, kernel,
                k::conv2d_input_grad(grad_out.value(), kernel.value(), input_shape, geom),
                with_conv(geom, input_shape));
}

Var conv2d_kernel_grad(Var input, Var grad_out, const Shape& kernel_shape,
                       kernels::Conv2dGeometry geom) {
  return binary(OpKind::Conv2dKernelGrad, input, grad_out,
                k::conv2d_kernel_grad(input.value(), grad_out.value(), kernel_shape, geom),
                with_conv(geom, kernel_shape));
}

Var concat(Var a, Var b, std::size_t axis) {
  return binary(OpKind::Concat, a, b, k::concat(a.value(), b.value(), axis), with_axis(axis));
}

Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length) {
  OpAttrs a = with_axis(axis);
  a.start = start;
  a.length = length;
  return unary(OpKind::Slice, x, k::slice(x.value(), axis, start, length), std::move(a));
}

Var embed(Var x, std::size_t axis, std::size_t start, std::size_t total) {
  OpAttrs a = with_axis(axis);
  a.start = start;
  a.length = total;
  return unary(OpKind::Embed, x, k::embed(x.value(), axis, start, total), std::move(a));
}

Var reshape(Var x, const Shape& shape) {
  OpAttrs a;
  a.shape = shape;
  return unary(OpKind::Reshape, x, x.value().reshaped(shape), std::move(a));
}

Var square(Var x) { return mul(x, x); }

Var inner(Var a, Var b) { return sum(mul(a, b)); }

Var linear(Var x, Var weight, Var bias) {
  Var y = matmul(x, transpose(weight));
  return add(y, broadcast_axis(bias, y.shape(), 1));
}

Var channel_bias(Var x, Var bias) { return add(x, broadcast_axis(bias, x.shape(), 0)); }

}  // namespace fpx::ops
