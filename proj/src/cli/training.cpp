#include <cmath>
#include <fstream>

#include "fpx/cli/experiments.hpp"
#include "fpx/kernels.hpp"
#include "fpx/ops.hpp"

namespace fpx::cli {

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> salt) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  for (std::uint64_t s : salt) h = mix(h ^ mix(s));
  return h;
}

Var Model::predict(Graph& graph, Var z, std::span<const Var> theta_vars, const Tensor& x0) const {
  Var x;
  if (kind == ModelKind::Feedforward) {
    x = g->apply(graph, graph.leaf(Tensor::zeros(x0.shape())), z, theta_vars);
  } else {
    x = fpi_layer(graph, g, z, theta_vars, x0, fpi, stats);
  }
  return sigmoid_after ? ops::sigmoid(x) : x;
}

Tensor Model::predict(const Tensor& z, const Tensor& x0) const {
  Graph graph;
  Var zv = graph.leaf(z);
  std::vector<Var> tv;
  for (const auto& e : theta.entries()) tv.push_back(graph.leaf(e.value));
  return predict(graph, zv, tv, x0).value();
}

double train_step(Model& model, AdamState& adam, std::span<const Sample> batch, const StepSettings& settings) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  std::vector<std::vector<double>> acc;
  for (const auto& e : model.theta.entries()) acc.emplace_back(e.value.size(), 0.0);
  double total = 0.0;
  for (const Sample& s : batch) {
    Graph graph;
    Var z = graph.leaf(s.z);
    Var target = graph.leaf(s.target);
    std::vector<Var> tv;
    for (const auto& e : model.theta.entries()) tv.push_back(graph.leaf(e.value));
    Var pred = model.predict(graph, z, tv, s.x0);
    Var loss = settings.loss == LossKind::Mse ? mse_loss(pred, target) : bce_loss(pred, target);
    total += loss.value().item();
    const auto grads = gradients(loss, Tensor::scalar(1.0), tv);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const auto d = grads[i].data();
      for (std::size_t j = 0; j < d.size(); ++j) acc[i][j] += d[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  Parameters grads;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    for (double& v : acc[i]) v *= inv;
    grads.add(model.theta.name(i), Tensor(model.theta[i].shape(), std::move(acc[i])));
  }
  if (settings.grad_clip > 0.0) grads = grad_clamp(grads, settings.grad_clip, settings.clamp_mode);
  model.theta = adam_step(model.theta, grads, adam);
  return total * inv;
}

RunReport run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.task) {
    case Task::Toybox: return run_toybox(cfg);
    case Task::Denoise: return run_denoise(cfg);
    case Task::Multilabel: return run_multilabel(cfg);
    case Task::Gradcheck: return run_gradcheck(cfg);
  }
  throw ConfigError("unknown task");
}

std::filesystem::path write_report(const ExperimentConfig& cfg, const RunReport& report) {
  const auto dir = cfg.out_dir / cfg.run_id;
  std::filesystem::create_directories(dir);
  emit_metrics(dir / "metrics.csv", report.rows);
  std::ofstream out(dir / "report.txt");
  if (!out) throw DataError((dir / "report.txt").string() + ": cannot write");
  out << "# configuration\n" << cfg.raw.canonical() << "\n# summary\n";
  for (const auto& l : report.lines) out << l << "\n";
  if (report.flagged) out << "FLAGGED: more than 1% of forward solves did not converge\n";
  if (report.failed) out << "FAILED: at least one check did not pass\n";
  return dir;
}

}  // namespace fpx::cli
