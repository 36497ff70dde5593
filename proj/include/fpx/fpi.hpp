#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fpx/gmodule.hpp"

namespace fpx {

enum class Criterion {
  RelativeBeta,  // |x_{n+1} - x_n|^2 / |x_n|^2
  AbsoluteBeta,  // |x_{n+1} - x_n|^2
};

struct FpiConfig {
  double tol = 1e-6;
  Criterion criterion = Criterion::RelativeBeta;
  int max_iter = 500;
  /// Step size for gradient-descent updates built from this config.
  double gamma = 1.0;
  /// Keep every iterate (oracle and debugging use).
  bool record_trajectory = false;

  /// Throws std::invalid_argument on tol <= 0, max_iter < 1 or gamma <= 0.
  void validate() const;
};

struct FixedPointResult {
  Tensor x_hat;
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;
  std::vector<Tensor> trajectory;
};

/// An iterate became NaN or infinite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int iteration, const std::string& what);
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

/// I - dg/dx is singular to working precision.
class ConditioningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A forward solve ran out of iterations under the abort policy.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Residual between consecutive iterates. Relative mode falls back to the
/// absolute residual when x_prev is exactly zero.
std::pair<bool, double> convergence_check(const Tensor& x_prev, const Tensor& x_next,
                                          const FpiConfig& cfg);

/// Picard iteration x_{n+1} = step(x_n) until convergence_check passes or
/// max_iter steps have run.
FixedPointResult fixed_point_iterate(const std::function<Tensor(const Tensor&)>& step,
                                     const Tensor& x0, const FpiConfig& cfg);

FixedPointResult forward_fpi(const GModule& g, const Tensor& x0, const Tensor& z,
                             const Parameters& theta, const FpiConfig& cfg);

struct GradientResult {
  Parameters theta;
  Tensor z;
};

struct BackwardResult {
  GradientResult grads;
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;
};

/// Gradients of a loss through the fixed point x_hat of g, given
/// grad_out = dL/dx_hat. Solves c = (dg/dx)^T c + grad_out by iteration from
/// c = 0 (one vector-Jacobian product per step), then reads the parameter
/// and input gradients off c^T g.
BackwardResult backward_fpi(const GModule& g, const Tensor& x_hat, const Tensor& z,
                            const Parameters& theta, const Tensor& grad_out, const FpiConfig& cfg);

/// Dense reference: (dg/dtheta)^T (I - dg/dx)^{-T} grad_out with both
/// Jacobians built by probing. Limited to states of at most
/// kMaxClosedFormDim elements.
inline constexpr std::size_t kMaxClosedFormDim = 32;
GradientResult closed_form_gradient(const GModule& g, const Tensor& x_hat, const Tensor& z,
                                    const Parameters& theta, const Tensor& grad_out);

/// Reference: n_steps applications of g recorded in one graph, then plain
/// backpropagation of `loss` (a scalar function of the final iterate).
GradientResult unrolled_gradient(const GModule& g, const Tensor& x0, const Tensor& z,
                                 const Parameters& theta, int n_steps, const FunctionObject& loss);

/// Power-iteration estimate of |dg/dx|_2 at x_hat. J v uses central
/// differences with step 1e-6, J^T u one vector-Jacobian product.
double spectral_norm_jacobian(const GModule& g, const Tensor& x_hat, const Tensor& z,
                              const Parameters& theta, int iters);

/// C log(1/tol) / log(1/k): the iteration budget for a k-contraction.
double backward_iteration_bound(double k, double tol, double c = 3.0);

enum class UnconvergedPolicy { Abort, Warn };

struct FpiLayerConfig {
  FpiConfig forward;
  FpiConfig backward;
  UnconvergedPolicy policy = UnconvergedPolicy::Warn;
};

/// Running counts of solver behaviour for one experiment.
struct FpiStats {
  std::size_t forward_solves = 0;
  std::size_t forward_iterations = 0;
  std::size_t forward_unconverged = 0;
  std::size_t backward_solves = 0;
  std::size_t backward_iterations = 0;
  std::size_t backward_unconverged = 0;

  void reset() { *this = FpiStats{}; }
  double forward_unconverged_rate() const;
  /// More than 1% of forward solves failed to converge.
  bool flagged() const { return forward_unconverged_rate() > 0.01; }
};

/// The FPI layer as one graph node: value is the fixed point of g started
/// at x0, parents are (z, theta...). Backpropagating through the node runs
/// backward_fpi. Second-order differentiation through the node is not
/// supported.
Var fpi_layer(Graph& graph, std::shared_ptr<const GModule> g, Var z, std::span<const Var> theta,
              const Tensor& x0, const FpiLayerConfig& cfg,
              std::shared_ptr<FpiStats> stats = nullptr);

}  // namespace fpx
