#include "fpx/gmodule.hpp"

namespace fpx {

Tensor GModule::evaluate(const Tensor& x, const Tensor& z, const Parameters& theta) const {
  Graph graph;
  Var xv = graph.leaf(x);
  Var zv = graph.leaf(z);
  std::vector<Var> tv;
  for (const auto& e : theta.entries()) tv.push_back(graph.leaf(e.value));
  return apply(graph, xv, zv, tv).value();
}

FunctionObject GModule::as_function() const {
  FunctionObject f;
  f.input_names = {"x", "z"};
  for (const auto& s : param_specs()) f.input_names.push_back(s.name);
  f.recipe = [this](Graph& graph, std::span<const Var> in) {
    return std::vector<Var>{apply(graph, in[0], in[1], in.subspan(2))};
  };
  return f;
}

void GModule::check_parameters(const Parameters& theta) const {
  const auto specs = param_specs();
  if (specs.size() != theta.size()) {
    throw DimensionError(name() + ": expected " + std::to_string(specs.size()) +
                         " parameter tensors, got " + std::to_string(theta.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].shape != theta[i].shape()) {
      throw DimensionError(name() + ": parameter '" + specs[i].name + "' should be " +
                           shape_str(specs[i].shape) + ", got " + shape_str(theta[i].shape()));
    }
  }
}

}  // namespace fpx
