#include "fpx/partial.hpp"

#include "fpx/ops.hpp"

namespace fpx {
namespace {

// Output node of P. Holds the private graph on which the derivative was
// built; its backward forms eta = <delta, dr/ds> on that same graph and
// differentiates it again (P(delta u s; H(delta; rho))).
class PartialOp final : public CustomOp {
 public:
  PartialOp(std::shared_ptr<Graph> inner, std::vector<NodeId> leaves, NodeId derivative)
      : inner_(std::move(inner)), leaves_(std::move(leaves)), derivative_(derivative) {}

  std::string name() const override { return "partial"; }

  std::vector<std::optional<Var>> vjp(Graph& graph, const Node& self, Var delta,
                                      const std::vector<bool>& needs,
                                      bool create_graph) const override {
    Graph& inner = *inner_;
    const std::size_t mark = inner.mark();
    Var delta_clone = inner.detach_clone(delta);
    Var eta = ops::inner(delta_clone, Var(inner, derivative_));

    std::vector<Var> wrt;
    std::vector<std::size_t> slots;
    for (std::size_t j = 0; j < self.parents.size(); ++j) {
      if (!needs[j]) continue;
      wrt.emplace_back(inner, leaves_[j]);
      slots.push_back(j);
    }

    std::vector<std::optional<Var>> out(self.parents.size());
    if (!create_graph) {
      std::vector<Tensor> values;
      try {
        values = gradients(eta, Tensor::scalar(1.0), wrt);
      } catch (...) {
        inner.truncate(mark);
        throw;
      }
      inner.truncate(mark);
      for (std::size_t k = 0; k < slots.size(); ++k) out[slots[k]] = graph.leaf(values[k]);
      return out;
    }

    Var seed = inner.leaf(Tensor::scalar(1.0));
    auto nodes = grad(eta, seed, wrt, true);
    std::vector<NodeId> parents = self.parents;
    parents.push_back(delta.id());
    std::vector<NodeId> leaves = leaves_;
    leaves.push_back(delta_clone.id());
    for (std::size_t k = 0; k < slots.size(); ++k) {
      if (!nodes[k]) continue;
      out[slots[k]] =
          graph.record(OpKind::Custom, parents, nodes[k]->value(), {},
                       std::make_shared<PartialOp>(inner_, leaves, nodes[k]->id()));
    }
    return out;
  }

 private:
  std::shared_ptr<Graph> inner_;
  std::vector<NodeId> leaves_;
  NodeId derivative_;
};

}  // namespace

std::vector<Var> FunctionObject::operator()(Graph& graph, std::span<const Var> inputs) const {
  if (inputs.size() != arity()) {
    throw PartialError("function object expects " + std::to_string(arity()) + " inputs, got " +
                       std::to_string(inputs.size()));
  }
  return recipe(graph, inputs);
}

std::vector<std::optional<Var>> partial_diff(std::span<const Var> s, const FunctionObject& r,
                                             const std::vector<bool>& requested) {
  if (s.size() != r.arity()) {
    throw PartialError("P: function object takes " + std::to_string(r.arity()) +
                       " inputs but " + std::to_string(s.size()) + " nodes were given");
  }
  if (!requested.empty() && requested.size() != s.size()) {
    throw PartialError("P: request mask has the wrong length");
  }
  std::vector<std::optional<Var>> result(s.size());
  if (s.empty()) return result;
  Graph& graph = s[0].graph();
  std::vector<NodeId> parents;
  for (const Var& v : s) {
    if (&v.graph() != &graph) throw GraphError("P: arguments live on different graphs");
    parents.push_back(v.id());
  }

  auto inner = std::make_shared<Graph>();
  std::vector<Var> leaves = inner->detach_clone(s);
  std::vector<Var> outs;
  try {
    outs = r(*inner, leaves);
  } catch (const std::exception& e) {
    throw PartialError(std::string("P: function object failed on detached inputs: ") + e.what());
  }
  if (outs.size() != 1 || outs[0].value().size() != 1) {
    throw PartialError("P: function object must produce exactly one scalar output");
  }

  std::vector<Var> wrt;
  std::vector<std::size_t> slots;
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (!requested.empty() && !requested[j]) continue;
    wrt.push_back(leaves[j]);
    slots.push_back(j);
  }
  Var seed = inner->leaf(Tensor::full(outs[0].shape(), 1.0));
  auto nodes = grad(outs[0], seed, wrt, true);

  std::vector<NodeId> leaf_ids;
  for (const Var& l : leaves) leaf_ids.push_back(l.id());
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const std::size_t j = slots[k];
    if (!nodes[k]) {
      result[j] = graph.leaf(Tensor::zeros(s[j].shape()));
      continue;
    }
    result[j] = graph.record(OpKind::Custom, parents, nodes[k]->value(), {},
                             std::make_shared<PartialOp>(inner, leaf_ids, nodes[k]->id()));
  }
  return result;
}

FunctionObject inner_builder(std::vector<Tensor> v, const FunctionObject& u) {
  FunctionObject h;
  h.input_names = u.input_names;
  h.recipe = [v = std::move(v), u](Graph& graph, std::span<const Var> inputs) {
    std::vector<Var> outs = u(graph, inputs);
    if (outs.size() != v.size()) {
      throw PartialError("H: " + std::to_string(v.size()) + " weights for " +
                         std::to_string(outs.size()) + " function outputs");
    }
    std::optional<Var> total;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i].shape() != outs[i].shape()) {
        throw PartialError("H: weight " + std::to_string(i) + " has shape " +
                           shape_str(v[i].shape()) + ", output has " +
                           shape_str(outs[i].shape()));
      }
      Var term = ops::inner(graph.leaf(v[i]), outs[i]);
      total = total ? ops::add(*total, term) : term;
    }
    if (!total) total = graph.leaf(Tensor::scalar(0.0));
    return std::vector<Var>{*total};
  };
  return h;
}

FunctionObject inner_builder(std::span<const Var> v, const FunctionObject& u) {
  std::vector<Tensor> values;
  values.reserve(v.size());
  for (const Var& x : v) values.push_back(x.value());
  return inner_builder(std::move(values), u);
}

std::vector<Tensor> vjp(const FunctionObject& f, std::span<const Tensor> inputs,
                        const Tensor& cotangent) {
  Graph graph;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(graph.leaf(t));
  FunctionObject h = inner_builder(std::vector<Tensor>{cotangent}, f);
  auto partials = partial_diff(leaves, h);
  std::vector<Tensor> out;
  for (auto& p : partials) out.push_back(p->value());
  return out;
}

VjpEvaluator::VjpEvaluator(const FunctionObject& f, std::vector<Tensor> inputs)
    : graph_(std::make_unique<Graph>()) {
  for (Tensor& t : inputs) leaves_.push_back(graph_->leaf(std::move(t)));
  auto outs = f(*graph_, leaves_);
  if (outs.size() != 1) throw PartialError("VjpEvaluator: function must have one output");
  output_ = outs[0];
}

std::vector<Tensor> VjpEvaluator::operator()(const Tensor& cotangent, const std::vector<bool>& wrt) {
  if (cotangent.shape() != output_.shape()) {
    throw DimensionError("vjp: cotangent shape " + shape_str(cotangent.shape()) +
                         " does not match output " + shape_str(output_.shape()));
  }
  std::vector<Var> targets;
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    if (!wrt.empty() && !wrt[i]) continue;
    targets.push_back(leaves_[i]);
    slots.push_back(i);
  }
  auto values = gradients(output_, cotangent, targets);
  std::vector<Tensor> out(leaves_.size());
  for (std::size_t i = 0; i < leaves_.size(); ++i) out[i] = Tensor::zeros(leaves_[i].shape());
  for (std::size_t k = 0; k < slots.size(); ++k) out[slots[k]] = std::move(values[k]);
  return out;
}

}  // namespace fpx
