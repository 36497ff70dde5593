#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fpx/graph.hpp"

namespace fpx {

/// The differentiated function failed or produced something P cannot use.
class PartialError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Re-executable recipe: given leaves bound to `input_names` on any graph,
/// builds its outputs on that graph. Recipes must be pure.
struct FunctionObject {
  using Recipe = std::function<std::vector<Var>(Graph&, std::span<const Var>)>;

  std::vector<std::string> input_names;
  Recipe recipe;

  std::size_t arity() const { return input_names.size(); }
  std::vector<Var> operator()(Graph& graph, std::span<const Var> inputs) const;
};

/// The P operator: partial derivatives of the scalar function `r` at the
/// values of `s`, with every element of `s` treated as an independent
/// variable. `r` is evaluated on a private graph over detached clones of `s`;
/// the derivatives come back as nodes of the caller's graph that remain
/// differentiable (their backward reuses the private graph).
///
/// `requested` selects which partials to build (all when empty); skipped
/// entries are returned empty.
std::vector<std::optional<Var>> partial_diff(std::span<const Var> s, const FunctionObject& r,
                                             const std::vector<bool>& requested = {});

/// The H operator: a function object computing sum_i <v_i, u_i(inputs)>.
/// The values of `v` are captured; H has the same inputs as `u`.
FunctionObject inner_builder(std::span<const Var> v, const FunctionObject& u);
FunctionObject inner_builder(std::vector<Tensor> v, const FunctionObject& u);

/// (df/d input_i)^T cotangent for every input, via P(inputs; H(c; f)).
std::vector<Tensor> vjp(const FunctionObject& f, std::span<const Tensor> inputs,
                        const Tensor& cotangent);

/// Repeated vector-Jacobian products of a single-output function at fixed
/// inputs. The function's graph is built once on independent leaves and
/// reused for every query.
class VjpEvaluator {
 public:
  VjpEvaluator(const FunctionObject& f, std::vector<Tensor> inputs);

  const Tensor& output() const { return output_.value(); }
  std::size_t arity() const { return leaves_.size(); }

  /// Products for the inputs flagged in `wrt` (all when empty); unflagged
  /// entries are returned as zeros.
  std::vector<Tensor> operator()(const Tensor& cotangent, const std::vector<bool>& wrt = {});

 private:
  std::unique_ptr<Graph> graph_;
  std::vector<Var> leaves_;
  Var output_;
};

}  // namespace fpx
