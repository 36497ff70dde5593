#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fpx/kernels.hpp"
#include "fpx/tensor.hpp"

namespace fpx {

using NodeId = std::size_t;

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  AddScalar,
  Scale,
  Neg,
  Relu,
  Step,
  Sigmoid,
  Log,
  ClampBox,
  BoxMask,
  Threshold,
  Sum,
  Mean,
  SqNorm,
  Fill,
  BroadcastAxis,
  ReduceToAxis,
  MatMul,
  Transpose,
  Conv2d,
  Conv2dInputGrad,
  Conv2dKernelGrad,
  Concat,
  Slice,
  Embed,
  Reshape,
  Custom,
};

const char* op_name(OpKind op);

/// Backward reached an operation without a usable derivative.
class NonDifferentiableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of graph handles (foreign nodes, unknown ids, bad seeds).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Graph;
struct Node;

/// Handle to a node of a particular graph.
class Var {
 public:
  Var() = default;
  Var(Graph& graph, NodeId id) : graph_(&graph), id_(id) {}

  Graph& graph() const;
  NodeId id() const { return id_; }
  const Node& node() const;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

struct OpAttrs {
  double scalar = 0.0;
  double lo = -1.0;
  double hi = 1.0;
  std::size_t axis = 0;
  std::size_t start = 0;
  std::size_t length = 0;
  Shape shape;
  kernels::Conv2dGeometry conv;
};

/// Operation whose backward rule is supplied by the caller (partial
/// differentiation, FPI layers).
class CustomOp {
 public:
  virtual ~CustomOp() = default;
  virtual std::string name() const = 0;
  /// Gradient contributions for each parent of `self`. Entries whose
  /// `needs` flag is false may be left empty. When `create_graph` is set the
  /// returned nodes must themselves be differentiable.
  virtual std::vector<std::optional<Var>> vjp(Graph& graph, const Node& self, Var grad,
                                              const std::vector<bool>& needs,
                                              bool create_graph) const = 0;
};

struct Node {
  OpKind op = OpKind::Leaf;
  std::vector<NodeId> parents;
  Tensor value;
  OpAttrs attrs;
  std::shared_ptr<const CustomOp> custom;

  bool is_leaf() const { return op == OpKind::Leaf; }
};

/// Append-only arena of nodes. Parents always precede children, so the
/// insertion order is a topological order.
///
/// Graphs are pinned in memory (Var keeps a pointer) and not copyable.
class Graph {
 public:
  Graph() = default;
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value);
  Var record(OpKind op, std::vector<NodeId> parents, Tensor value, OpAttrs attrs = {},
             std::shared_ptr<const CustomOp> custom = nullptr);

  const Node& node(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  /// Current end of the arena; pass to truncate() to discard temporaries.
  std::size_t mark() const { return nodes_.size(); }
  /// Drops every node created at or after `mark`. Handles to those nodes
  /// become invalid.
  void truncate(std::size_t mark);

  /// The I operator: fresh leaves holding the same values, with no path
  /// back to the originals.
  std::vector<Var> detach_clone(std::span<const Var> nodes);
  Var detach_clone(Var node);

 private:
  std::vector<Node> nodes_;
};

/// Process-wide count of live graph nodes, for memory diagnostics.
struct GraphStats {
  static std::size_t live_nodes();
  static std::size_t peak_nodes();
  static void reset_peak();
};

/// Reverse sweep from `output` seeded with the node `seed`. Returns, for each
/// entry of `wrt`, the gradient as a node on the same graph (empty when the
/// output does not depend on it). With `create_graph` the gradient nodes are
/// differentiable; otherwise the caller is expected to read their values and
/// truncate.
std::vector<std::optional<Var>> grad(Var output, Var seed, std::span<const Var> wrt,
                                     bool create_graph);

/// Numeric vector-Jacobian products seed^T d(output)/d(wrt). Temporary nodes
/// are discarded before returning; unreachable inputs get zero tensors.
std::vector<Tensor> gradients(Var output, const Tensor& seed, std::span<const Var> wrt);

/// Gradients of `output` for every leaf it reaches.
std::map<NodeId, Tensor> backward(Graph& graph, Var output, const Tensor& seed);

}  // namespace fpx
