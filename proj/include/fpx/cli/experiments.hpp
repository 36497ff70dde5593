#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fpx/cli/config.hpp"
#include "fpx/cli/io.hpp"
#include "fpx/fpi.hpp"
#include "fpx/gmodule.hpp"
#include "fpx/train.hpp"

namespace fpx::cli {

/// Independent stream seed from a base seed and a salt (splitmix64 mixing).
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> salt);

/// A trainable single-FPI-layer network, or the feedforward baseline that
/// applies g once from a zero state.
struct Model {
  ModelKind kind = ModelKind::FpiNn;
  std::shared_ptr<const GModule> g;
  Parameters theta;
  FpiLayerConfig fpi;
  bool sigmoid_after = false;
  std::shared_ptr<FpiStats> stats = std::make_shared<FpiStats>();

  Var predict(Graph& graph, Var z, std::span<const Var> theta_vars, const Tensor& x0) const;
  Tensor predict(const Tensor& z, const Tensor& x0) const;
};

enum class LossKind { Mse, Bce };

struct Sample {
  Tensor z;
  Tensor target;
  Tensor x0;
};

struct StepSettings {
  LossKind loss = LossKind::Mse;
  double grad_clip = 0.0;
  ClampMode clamp_mode = ClampMode::GlobalNorm;
};

/// One optimizer step on the mean loss over `batch`; returns that loss.
double train_step(Model& model, AdamState& adam, std::span<const Sample> batch, const StepSettings& settings);

struct RunReport {
  std::vector<MetricRow> rows;
  std::vector<std::string> lines;
  bool flagged = false;  // some model had >1% unconverged forward solves
  bool failed = false;   // a check failed (gradcheck)
};

RunReport run_toybox(const ExperimentConfig& cfg);
RunReport run_denoise(const ExperimentConfig& cfg);
RunReport run_multilabel(const ExperimentConfig& cfg);
RunReport run_gradcheck(const ExperimentConfig& cfg);
RunReport run_experiment(const ExperimentConfig& cfg);

/// metrics.csv and report.txt under cfg.out_dir / cfg.run_id.
std::filesystem::path write_report(const ExperimentConfig& cfg, const RunReport& report);

}  // namespace fpx::cli
