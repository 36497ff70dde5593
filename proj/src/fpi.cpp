#include "fpx/fpi.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

#include "fpx/kernels.hpp"
#include "fpx/log.hpp"

namespace fpx {

void FpiConfig::validate() const {
  if (!(tol > 0.0)) throw std::invalid_argument("fpi tol must be positive");
  if (max_iter < 1) throw std::invalid_argument("fpi max_iter must be at least 1");
  if (!(gamma > 0.0)) throw std::invalid_argument("fpi gamma must be positive");
}

DivergenceError::DivergenceError(int iteration, const std::string& what)
    : std::runtime_error("fixed-point iteration diverged at iteration " + std::to_string(iteration) +
                         ": " + what),
      iteration_(iteration) {}

std::pair<bool, double> convergence_check(const Tensor& x_prev, const Tensor& x_next,
                                          const FpiConfig& cfg) {
  if (x_prev.shape() != x_next.shape()) {
    throw DimensionError("convergence_check: shapes " + shape_str(x_prev.shape()) + " and " +
                         shape_str(x_next.shape()) + " differ");
  }
  // Sums of squares are accumulated after dividing by the largest magnitude
  // so that the ratio stays finite for huge but finite iterates.
  const auto a = x_prev.data();
  const auto b = x_next.data();
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  if (scale == 0.0) return {0.0 < cfg.tol, 0.0};
  double diff = 0.0, base = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = b[i] / scale - a[i] / scale;
    diff += d * d;
    base += (a[i] / scale) * (a[i] / scale);
  }
  double residual = diff * scale * scale;
  if (cfg.criterion == Criterion::RelativeBeta && base > 0.0) residual = diff / base;
  return {residual < cfg.tol, residual};
}

FixedPointResult fixed_point_iterate(const std::function<Tensor(const Tensor&)>& step,
                                     const Tensor& x0, const FpiConfig& cfg) {
  cfg.validate();
  FixedPointResult result;
  Tensor x = x0;
  if (cfg.record_trajectory) result.trajectory.push_back(x);
  for (int n = 1; n <= cfg.max_iter; ++n) {
    Tensor next;
    try {
      next = step(x);
    } catch (const NonFiniteError& e) {
      throw DivergenceError(n, e.what());
    }
    if (!next.all_finite()) throw DivergenceError(n, "non-finite iterate");
    if (next.shape() != x.shape()) {
      throw DimensionError("fixed-point step changed the shape from " + shape_str(x.shape()) +
                           " to " + shape_str(next.shape()));
    }
    auto [done, residual] = convergence_check(x, next, cfg);
    x = std::move(next);
    if (cfg.record_trajectory) result.trajectory.push_back(x);
    result.iterations = n;
    result.residual = residual;
    if (done) {
      result.converged = true;
      break;
    }
  }
  result.x_hat = std::move(x);
  return result;
}

namespace {

// g(., z; theta) evaluated repeatedly on one graph holding z and theta.
class StepEvaluator {
 public:
  StepEvaluator(const GModule& g, const Tensor& z, const Parameters& theta) : g_(g) {
    g.check_parameters(theta);
    z_ = graph_.leaf(z);
    for (const auto& e : theta.entries()) theta_.push_back(graph_.leaf(e.value));
    cached_ = g.invariants(graph_, z_, theta_);
    mark_ = graph_.mark();
  }

  Tensor operator()(const Tensor& x) {
    Var xv = graph_.leaf(x);
    Tensor out;
    try {
      out = g_.apply_cached(graph_, xv, z_, theta_, cached_).value();
    } catch (...) {
      graph_.truncate(mark_);
      throw;
    }
    graph_.truncate(mark_);
    return out;
  }

 private:
  const GModule& g_;
  Graph graph_;
  Var z_;
  std::vector<Var> theta_;
  std::vector<Var> cached_;
  std::size_t mark_ = 0;
};

std::vector<Tensor> gather_inputs(const Tensor& x, const Tensor& z, const Parameters& theta) {
  std::vector<Tensor> in{x, z};
  for (const auto& e : theta.entries()) in.push_back(e.value);
  return in;
}

GradientResult split_gradients(const std::vector<Tensor>& grads, const Parameters& theta) {
  GradientResult out;
  out.z = grads[1];
  for (std::size_t i = 0; i < theta.size(); ++i) out.theta.add(theta.name(i), grads[i + 2]);
  return out;
}

double norm(const Tensor& t) { return std::sqrt(kernels::sq_norm(t).item()); }

}  // namespace

FixedPointResult forward_fpi(const GModule& g, const Tensor& x0, const Tensor& z,
                             const Parameters& theta, const FpiConfig& cfg) {
  StepEvaluator step(g, z, theta);
  return fixed_point_iterate([&](const Tensor& x) { return step(x); }, x0, cfg);
}

BackwardResult backward_fpi(const GModule& g, const Tensor& x_hat, const Tensor& z,
                            const Parameters& theta, const Tensor& grad_out,
                            const FpiConfig& cfg) {
  if (grad_out.shape() != x_hat.shape()) {
    throw DimensionError("backward_fpi: grad_out " + shape_str(grad_out.shape()) +
                         " does not match x_hat " + shape_str(x_hat.shape()));
  }
  g.check_parameters(theta);
  VjpEvaluator vjp_at(g.as_function(), gather_inputs(x_hat, z, theta));
  if (vjp_at.output().shape() != x_hat.shape()) {
    throw DimensionError("backward_fpi: g changes the state shape");
  }
  std::vector<bool> wrt_x(vjp_at.arity(), false);
  wrt_x[0] = true;
  const auto c = fixed_point_iterate(
      [&](const Tensor& cn) { return kernels::add(vjp_at(cn, wrt_x)[0], grad_out); },
      Tensor::zeros(x_hat.shape()), cfg);
  if (!c.converged) {
    logger().warn("backward fixed-point iteration stopped after {} iterations (residual {:.3e})",
               c.iterations, c.residual);
  }
  std::vector<bool> wrt_rest(vjp_at.arity(), true);
  wrt_rest[0] = false;
  BackwardResult out;
  out.grads = split_gradients(vjp_at(c.x_hat, wrt_rest), theta);
  out.iterations = c.iterations;
  out.converged = c.converged;
  out.residual = c.residual;
  return out;
}

GradientResult closed_form_gradient(const GModule& g, const Tensor& x_hat, const Tensor& z,
                                    const Parameters& theta, const Tensor& grad_out) {
  const std::size_t n = x_hat.size();
  if (n > kMaxClosedFormDim) {
    throw std::invalid_argument("closed_form_gradient: state has " + std::to_string(n) +
                                " elements, limit is " + std::to_string(kMaxClosedFormDim));
  }
  if (grad_out.shape() != x_hat.shape()) throw DimensionError("closed_form_gradient: grad_out shape");
  g.check_parameters(theta);
  VjpEvaluator vjp_at(g.as_function(), gather_inputs(x_hat, z, theta));

  // Row i of every Jacobian: d g_i / d input.
  std::vector<std::vector<Tensor>> rows;
  rows.reserve(n);
  Eigen::MatrixXd jx(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> e(n, 0.0);
    e[i] = 1.0;
    rows.push_back(vjp_at(Tensor(x_hat.shape(), std::move(e))));
    const auto r = rows.back()[0].data();
    for (std::size_t j = 0; j < n; ++j) jx(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r[j];
  }
  const Eigen::MatrixXd m = (Eigen::MatrixXd::Identity(n, n) - jx).transpose();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  const double rcond = lu.rcond();
  if (!lu.isInvertible() || !(rcond >= 1e-12)) {
    throw ConditioningError("I - dg/dx is singular to working precision (rcond " +
                            std::to_string(rcond) + ")");
  }
  const auto b = grad_out.data();
  const Eigen::VectorXd c = lu.solve(Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(n)));

  std::vector<Tensor> grads(vjp_at.arity());
  for (std::size_t k = 1; k < grads.size(); ++k) {
    std::vector<double> acc(rows[0][k].size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = rows[i][k].data();
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += c(static_cast<Eigen::Index>(i)) * r[j];
    }
    grads[k] = Tensor(rows[0][k].shape(), std::move(acc));
  }
  return split_gradients(grads, theta);
}

GradientResult unrolled_gradient(const GModule& g, const Tensor& x0, const Tensor& z,
                                 const Parameters& theta, int n_steps, const FunctionObject& loss) {
  if (n_steps < 1) throw std::invalid_argument("unrolled_gradient: n_steps must be at least 1");
  if (loss.arity() != 1) throw std::invalid_argument("unrolled_gradient: loss takes one input");
  g.check_parameters(theta);
  Graph graph;
  std::vector<Var> wrt{graph.leaf(z)};
  for (const auto& e : theta.entries()) wrt.push_back(graph.leaf(e.value));
  const std::span<const Var> theta_vars(wrt.data() + 1, wrt.size() - 1);
  Var x = graph.leaf(x0);
  for (int s = 0; s < n_steps; ++s) x = g.apply(graph, x, wrt[0], theta_vars);
  const Var xs[] = {x};
  auto out = loss(graph, xs);
  if (out.size() != 1 || out[0].value().size() != 1) {
    throw std::invalid_argument("unrolled_gradient: loss must return one scalar");
  }
  auto grads = gradients(out[0], Tensor::full(out[0].shape(), 1.0), wrt);
  grads.insert(grads.begin(), Tensor());
  return split_gradients(grads, theta);
}

double spectral_norm_jacobian(const GModule& g, const Tensor& x_hat, const Tensor& z,
                              const Parameters& theta, int iters) {
  if (iters < 1) throw std::invalid_argument("spectral_norm_jacobian: iters must be at least 1");
  constexpr double kStep = 1e-6;
  constexpr int kMaxRestarts = 5;
  StepEvaluator step(g, z, theta);
  VjpEvaluator vjp_at(g.as_function(), gather_inputs(x_hat, z, theta));
  std::vector<bool> wrt_x(vjp_at.arity(), false);
  wrt_x[0] = true;

  std::mt19937_64 rng(0x6a09e667f3bcc908ULL);
  auto random_unit = [&] {
    std::vector<double> v(x_hat.size());
    for (double& e : v) e = static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5;
    Tensor t(x_hat.shape(), std::move(v));
    return kernels::scale(t, 1.0 / norm(t));
  };

  Tensor v = random_unit();
  double sigma = 0.0;
  int restarts = 0;
  for (int it = 0; it < iters; ++it) {
    const Tensor jv = kernels::scale(
        kernels::sub(step(kernels::add(x_hat, kernels::scale(v, kStep))),
                     step(kernels::sub(x_hat, kernels::scale(v, kStep)))),
        0.5 / kStep);
    sigma = std::max(sigma, norm(jv));
    const Tensor w = vjp_at(jv, wrt_x)[0];
    const double nw = norm(w);
    if (nw == 0.0) {
      if (++restarts > kMaxRestarts) break;
      v = random_unit();
      continue;
    }
    v = kernels::scale(w, 1.0 / nw);
  }
  return sigma;
}

double backward_iteration_bound(double k, double tol, double c) {
  if (!(k > 0.0 && k < 1.0)) throw std::invalid_argument("backward_iteration_bound needs 0 < k < 1");
  if (!(tol > 0.0 && tol < 1.0)) throw std::invalid_argument("backward_iteration_bound needs 0 < tol < 1");
  return c * std::log(1.0 / tol) / std::log(1.0 / k);
}

double FpiStats::forward_unconverged_rate() const {
  return forward_solves == 0 ? 0.0
                             : static_cast<double>(forward_unconverged) / static_cast<double>(forward_solves);
}

namespace {

Parameters bind_parameters(const GModule& g, const std::vector<Tensor>& values) {
  const auto specs = g.param_specs();
  if (specs.size() != values.size()) {
    throw DimensionError(g.name() + ": expected " + std::to_string(specs.size()) +
                         " parameter tensors, got " + std::to_string(values.size()));
  }
  Parameters theta;
  for (std::size_t i = 0; i < specs.size(); ++i) theta.add(specs[i].name, values[i]);
  g.check_parameters(theta);
  return theta;
}

class FpiLayerOp final : public CustomOp {
 public:
  FpiLayerOp(std::shared_ptr<const GModule> g, FpiConfig backward, std::shared_ptr<FpiStats> stats)
      : g_(std::move(g)), backward_(backward), stats_(std::move(stats)) {}

  std::string name() const override { return "fpi_layer(" + g_->name() + ")"; }

  std::vector<std::optional<Var>> vjp(Graph& graph, const Node& self, Var grad,
                                      const std::vector<bool>& needs,
                                      bool create_graph) const override {
    if (create_graph) {
      throw NonDifferentiableError("fpi_layer does not support higher-order differentiation");
    }
    const Tensor& z = graph.node(self.parents[0]).value;
    std::vector<Tensor> values;
    for (std::size_t i = 1; i < self.parents.size(); ++i) values.push_back(graph.node(self.parents[i]).value);
    const Parameters theta = bind_parameters(*g_, values);
    const auto r = backward_fpi(*g_, self.value, z, theta, grad.value(), backward_);
    if (stats_) {
      ++stats_->backward_solves;
      stats_->backward_iterations += static_cast<std::size_t>(r.iterations);
      if (!r.converged) ++stats_->backward_unconverged;
    }
    std::vector<std::optional<Var>> out(self.parents.size());
    if (needs[0]) out[0] = graph.leaf(r.grads.z);
    for (std::size_t i = 1; i < out.size(); ++i)
      if (needs[i]) out[i] = graph.leaf(r.grads.theta[i - 1]);
    return out;
  }

 private:
  std::shared_ptr<const GModule> g_;
  FpiConfig backward_;
  std::shared_ptr<FpiStats> stats_;
};

}  // namespace

Var fpi_layer(Graph& graph, std::shared_ptr<const GModule> g, Var z, std::span<const Var> theta,
              const Tensor& x0, const FpiLayerConfig& cfg, std::shared_ptr<FpiStats> stats) {
  cfg.forward.validate();
  cfg.backward.validate();
  std::vector<Tensor> values;
  std::vector<NodeId> parents{z.id()};
  for (const Var& t : theta) {
    if (&t.graph() != &graph) throw GraphError("fpi_layer: parameter from another graph");
    values.push_back(t.value());
    parents.push_back(t.id());
  }
  if (&z.graph() != &graph) throw GraphError("fpi_layer: input from another graph");
  const Parameters params = bind_parameters(*g, values);
  auto fwd = forward_fpi(*g, x0, z.value(), params, cfg.forward);
  if (stats) {
    ++stats->forward_solves;
    stats->forward_iterations += static_cast<std::size_t>(fwd.iterations);
    if (!fwd.converged) ++stats->forward_unconverged;
  }
  if (!fwd.converged) {
    const std::string msg = "forward fixed-point iteration of " + g->name() + " stopped after " +
                            std::to_string(fwd.iterations) + " iterations (residual " +
                            std::to_string(fwd.residual) + ")";
    if (cfg.policy == UnconvergedPolicy::Abort) throw ConvergenceError(msg);
    logger().warn("{}", msg);
  }
  auto op = std::make_shared<FpiLayerOp>(std::move(g), cfg.backward, std::move(stats));
  return graph.record(OpKind::Custom, std::move(parents), std::move(fwd.x_hat), {}, std::move(op));
}

}  // namespace fpx
