#include "fpx/graph.hpp"

#include <algorithm>
#include <atomic>

#include "fpx/ops.hpp"

namespace fpx {
namespace {

std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};

void note_added(std::size_t n) {
  const std::size_t now = g_live.fetch_add(n) + n;
  std::size_t peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}

void note_removed(std::size_t n) { g_live.fetch_sub(n); }

using Grads = std::vector<std::optional<Var>>;

// Backward rule of one built-in operation. `self` is the node's own handle
// (some rules reuse the forward output).
Grads vjp_rule(Graph& g, const Node& n, Var self, Var gy, const std::vector<bool>& needs,
               bool create_graph) {
  using namespace ops;
  auto parent = [&](std::size_t i) { return Var(g, n.parents[i]); };
  Grads out(n.parents.size());
  switch (n.op) {
    case OpKind::Leaf:
      break;
    case OpKind::Add:
      out[0] = gy;
      out[1] = gy;
      break;
    case OpKind::Sub:
      out[0] = gy;
      if (needs[1]) out[1] = neg(gy);
      break;
    case OpKind::Mul:
      if (needs[0]) out[0] = mul(gy, parent(1));
      if (needs[1]) out[1] = mul(gy, parent(0));
      break;
    case OpKind::Div: {
      Var b = parent(1);
      if (needs[0]) out[0] = div(gy, b);
      if (needs[1]) out[1] = neg(div(mul(gy, parent(0)), mul(b, b)));
      break;
    }
    case OpKind::AddScalar:
      out[0] = gy;
      break;
    case OpKind::Scale:
      out[0] = scale(gy, n.attrs.scalar);
      break;
    case OpKind::Neg:
      out[0] = neg(gy);
      break;
    case OpKind::Relu:
      out[0] = mul(gy, step(parent(0)));
      break;
    case OpKind::Step:
    case OpKind::BoxMask:
      // Piecewise constant: zero derivative almost everywhere.
      break;
    case OpKind::Threshold:
      throw NonDifferentiableError("backward reached non-differentiable op '" +
                                   std::string(op_name(n.op)) + "'");
    case OpKind::Sigmoid:
      out[0] = mul(gy, mul(self, add_scalar(neg(self), 1.0)));
      break;
    case OpKind::Log:
      out[0] = div(gy, parent(0));
      break;
    case OpKind::ClampBox:
      out[0] = mul(gy, box_mask(parent(0), n.attrs.lo, n.attrs.hi));
      break;
    case OpKind::Sum:
      out[0] = fill(gy, parent(0).shape());
      break;
    case OpKind::Mean: {
      const Shape& s = parent(0).shape();
      out[0] = scale(fill(gy, s), 1.0 / static_cast<double>(shape_size(s)));
      break;
    }
    case OpKind::SqNorm: {
      Var x = parent(0);
      out[0] = scale(mul(fill(gy, x.shape()), x), 2.0);
      break;
    }
    case OpKind::Fill:
      out[0] = reshape(sum(gy), parent(0).shape());
      break;
    case OpKind::BroadcastAxis:
      out[0] = reduce_to_axis(gy, n.attrs.axis);
      break;
    case OpKind::ReduceToAxis:
      out[0] = broadcast_axis(gy, parent(0).shape(), n.attrs.axis);
      break;
    case OpKind::MatMul:
      if (needs[0]) out[0] = matmul(gy, transpose(parent(1)));
      if (needs[1]) out[1] = matmul(transpose(parent(0)), gy);
      break;
    case OpKind::Transpose:
      out[0] = transpose(gy);
      break;
    case OpKind::Conv2d: {
      Var x = parent(0), k = parent(1);
      if (needs[0]) out[0] = conv2d_input_grad(gy, k, x.shape(), n.attrs.conv);
      if (needs[1]) out[1] = conv2d_kernel_grad(x, gy, k.shape(), n.attrs.conv);
      break;
    }
    case OpKind::Conv2dInputGrad: {
      // u = conv^T(g, K):  <h, u> = <conv(h, K), g>
      Var go = parent(0), k = parent(1);
      if (needs[0]) out[0] = conv2d(gy, k, n.attrs.conv);
      if (needs[1]) out[1] = conv2d_kernel_grad(gy, go, k.shape(), n.attrs.conv);
      break;
    }
    case OpKind::Conv2dKernelGrad: {
      // w = kgrad(x, g):  <H, w> = <conv(x, H), g>
      Var x = parent(0), go = parent(1);
      if (needs[0]) out[0] = conv2d_input_grad(go, gy, x.shape(), n.attrs.conv);
      if (needs[1]) out[1] = conv2d(x, gy, n.attrs.conv);
      break;
    }
    case OpKind::Concat: {
      const std::size_t la = parent(0).shape()[n.attrs.axis];
      const std::size_t lb = parent(1).shape()[n.attrs.axis];
      if (needs[0]) out[0] = slice(gy, n.attrs.axis, 0, la);
      if (needs[1]) out[1] = slice(gy, n.attrs.axis, la, lb);
      break;
    }
    case OpKind::Slice:
      out[0] = embed(gy, n.attrs.axis, n.attrs.start, parent(0).shape()[n.attrs.axis]);
      break;
    case OpKind::Embed:
      out[0] = slice(gy, n.attrs.axis, n.attrs.start, parent(0).shape()[n.attrs.axis]);
      break;
    case OpKind::Reshape:
      out[0] = reshape(gy, parent(0).shape());
      break;
    case OpKind::Custom:
      out = n.custom->vjp(g, n, gy, needs, create_graph);
      if (out.size() != n.parents.size()) {
        throw GraphError("custom op '" + n.custom->name() + "' returned " +
                         std::to_string(out.size()) + " gradients for " +
                         std::to_string(n.parents.size()) + " parents");
      }
      break;
  }
  return out;
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Scale: return "scale";
    case OpKind::Neg: return "neg";
    case OpKind::Relu: return "relu";
    case OpKind::Step: return "step";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Log: return "log";
    case OpKind::ClampBox: return "clamp_box";
    case OpKind::BoxMask: return "box_mask";
    case OpKind::Threshold: return "threshold";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::SqNorm: return "sq_norm";
    case OpKind::Fill: return "fill";
    case OpKind::BroadcastAxis: return "broadcast_axis";
    case OpKind::ReduceToAxis: return "reduce_to_axis";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Conv2dInputGrad: return "conv2d_input_grad";
    case OpKind::Conv2dKernelGrad: return "conv2d_kernel_grad";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Embed: return "embed";
    case OpKind::Reshape: return "reshape";
    case OpKind::Custom: return "custom";
  }
  return "unknown";
}

Graph& Var::graph() const {
  if (!graph_) throw GraphError("use of an unbound Var");
  return *graph_;
}

const Node& Var::node() const { return graph().node(id_); }

const Tensor& Var::value() const { return node().value; }

Graph::~Graph() { note_removed(nodes_.size()); }

Var Graph::leaf(Tensor value) { return record(OpKind::Leaf, {}, std::move(value)); }

Var Graph::record(OpKind op, std::vector<NodeId> parents, Tensor value, OpAttrs attrs,
                  std::shared_ptr<const CustomOp> custom) {
  const NodeId id = nodes_.size();
  for (NodeId p : parents) {
    if (p >= id) throw GraphError("parent " + std::to_string(p) + " does not precede node");
  }
  nodes_.push_back(Node{op, std::move(parents), std::move(value), std::move(attrs), std::move(custom)});
  note_added(1);
  return Var(*this, id);
}

const Node& Graph::node(NodeId id) const {
  if (id >= nodes_.size()) throw GraphError("node " + std::to_string(id) + " is not in the graph");
  return nodes_[id];
}

void Graph::truncate(std::size_t mark) {
  if (mark >= nodes_.size()) return;
  const std::size_t removed = nodes_.size() - mark;
  nodes_.resize(mark);
  note_removed(removed);
}

std::vector<Var> Graph::detach_clone(std::span<const Var> nodes) {
  std::vector<Var> out;
  out.reserve(nodes.size());
  for (const Var& v : nodes) out.push_back(leaf(v.value()));
  return out;
}

Var Graph::detach_clone(Var node) { return leaf(node.value()); }

std::size_t GraphStats::live_nodes() { return g_live.load(); }
std::size_t GraphStats::peak_nodes() { return g_peak.load(); }
void GraphStats::reset_peak() { g_peak.store(g_live.load()); }

std::vector<std::optional<Var>> grad(Var output, Var seed, std::span<const Var> wrt,
                                     bool create_graph) {
  Graph& g = output.graph();
  if (&seed.graph() != &g) throw GraphError("seed lives on a different graph");
  if (seed.shape() != output.shape()) {
    throw GraphError("seed shape " + shape_str(seed.shape()) + " does not match output " +
                     shape_str(output.shape()));
  }
  const NodeId hi = output.id();
  g.node(hi);
  std::vector<std::optional<Var>> result(wrt.size());
  if (wrt.empty()) return result;

  NodeId lo = hi;
  for (const Var& w : wrt) {
    if (&w.graph() != &g) throw GraphError("differentiation target lives on a different graph");
    lo = std::min(lo, w.id());
  }
  const std::size_t span = hi - lo + 1;
  std::vector<char> relevant(span, 0);
  for (const Var& w : wrt) {
    if (w.id() <= hi) relevant[w.id() - lo] = 1;
  }
  for (NodeId id = lo; id <= hi; ++id) {
    if (relevant[id - lo]) continue;
    for (NodeId p : g.node(id).parents) {
      if (p >= lo && relevant[p - lo]) {
        relevant[id - lo] = 1;
        break;
      }
    }
  }
  if (!relevant[span - 1]) return result;

  std::vector<std::optional<Var>> acc(span);
  acc[span - 1] = seed;
  for (NodeId id = hi + 1; id-- > lo;) {
    if (!acc[id - lo] || !relevant[id - lo]) continue;
    // Copy: rules append nodes, which may relocate the arena.
    const Node n = g.node(id);
    if (n.is_leaf()) continue;
    std::vector<bool> needs(n.parents.size());
    bool any = false;
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      const NodeId p = n.parents[i];
      needs[i] = p >= lo && relevant[p - lo];
      any = any || needs[i];
    }
    if (!any) continue;
    auto contrib = vjp_rule(g, n, Var(g, id), *acc[id - lo], needs, create_graph);
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      if (!needs[i] || !contrib[i]) continue;
      auto& slot = acc[n.parents[i] - lo];
      slot = slot ? ops::add(*slot, *contrib[i]) : *contrib[i];
    }
  }
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    if (wrt[i].id() <= hi) result[i] = acc[wrt[i].id() - lo];
  }
  return result;
}

std::vector<Tensor> gradients(Var output, const Tensor& seed, std::span<const Var> wrt) {
  Graph& g = output.graph();
  const std::size_t mark = g.mark();
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  try {
    Var s = g.leaf(seed);
    auto nodes = grad(output, s, wrt, false);
    for (std::size_t i = 0; i < wrt.size(); ++i) {
      out.push_back(nodes[i] ? nodes[i]->value() : Tensor::zeros(wrt[i].shape()));
    }
  } catch (...) {
    g.truncate(mark);
    throw;
  }
  g.truncate(mark);
  return out;
}

std::map<NodeId, Tensor> backward(Graph& graph, Var output, const Tensor& seed) {
  if (&output.graph() != &graph) throw GraphError("output is not a node of this graph");
  std::vector<Var> leaves;
  for (NodeId id = 0; id <= output.id(); ++id) {
    if (graph.node(id).is_leaf()) leaves.emplace_back(graph, id);
  }
  const std::size_t mark = graph.mark();
  std::map<NodeId, Tensor> out;
  try {
    Var s = graph.leaf(seed);
    auto nodes = grad(output, s, leaves, false);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      if (nodes[i]) out.emplace(leaves[i].id(), nodes[i]->value());
    }
  } catch (...) {
    graph.truncate(mark);
    throw;
  }
  graph.truncate(mark);
  return out;
}

}  // namespace fpx
