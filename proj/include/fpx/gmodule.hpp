#pragma once

#include <span>
#include <string>
#include <vector>

#include "fpx/graph.hpp"
#include "fpx/parameters.hpp"
#include "fpx/partial.hpp"

namespace fpx {

/// Parametric update g(x, z; theta) whose fixed point in x is the output of
/// an FPI layer. Implementations build g on a graph so that it composes with
/// P, H and reverse-mode differentiation.
class GModule {
 public:
  virtual ~GModule() = default;

  virtual std::string name() const = 0;
  virtual std::vector<ParamSpec> param_specs() const = 0;
  /// Shape of the iterate x for a given input z.
  virtual Shape state_shape(const Shape& input_shape) const = 0;
  /// Builds g(x, z; theta). `theta` follows param_specs() order. The result
  /// has the shape of x.
  virtual Var apply(Graph& graph, Var x, Var z, std::span<const Var> theta) const = 0;

  /// Nodes of g that depend on (z, theta) only. A solver applying g many
  /// times at fixed (z, theta) builds these once and calls apply_cached.
  virtual std::vector<Var> invariants(Graph&, Var, std::span<const Var>) const { return {}; }
  /// apply() given the result of invariants() on the same graph.
  virtual Var apply_cached(Graph& graph, Var x, Var z, std::span<const Var> theta,
                           std::span<const Var> cached) const {
    (void)cached;
    return apply(graph, x, z, theta);
  }

  /// g evaluated on a scratch graph.
  Tensor evaluate(const Tensor& x, const Tensor& z, const Parameters& theta) const;

  /// g as a function object with inputs (x, z, theta...). The module must
  /// outlive the returned object.
  FunctionObject as_function() const;

  /// Throws DimensionError unless theta matches param_specs().
  void check_parameters(const Parameters& theta) const;
};

}  // namespace fpx
