#pragma once

// Helpers shared by the experiment runners.

#include <string>

#include "fpx/cli/experiments.hpp"

namespace fpx::cli::detail {

/// [fpi] settings with any [fpi_gd] overrides applied, for FPI_GD models.
inline FpiLayerConfig gd_layer_config(const ExperimentConfig& cfg) {
  FpiLayerConfig out = cfg.fpi;
  const auto& f = cfg.raw;
  out.forward.tol = f.get_double("fpi_gd.tol", out.forward.tol);
  out.forward.max_iter = static_cast<int>(f.get_int("fpi_gd.max_iter", out.forward.max_iter));
  out.forward.gamma = f.get_double("fpi_gd.gamma", out.forward.gamma);
  const auto crit = f.get_string("fpi_gd.criterion", "");
  if (crit == "absolute" || crit == "absolute_beta") out.forward.criterion = Criterion::AbsoluteBeta;
  else if (crit == "relative" || crit == "relative_beta") out.forward.criterion = Criterion::RelativeBeta;
  else if (!crit.empty()) throw ConfigError("fpi_gd.criterion must be relative or absolute");
  out.forward.validate();
  return out;
}

/// Per-epoch solver counters (difference between two snapshots).
inline void add_solver_rows(RunReport& report, const std::string& run, int epoch, const FpiStats& before,
                            const FpiStats& after) {
  const double fs = static_cast<double>(after.forward_solves - before.forward_solves);
  const double bs = static_cast<double>(after.backward_solves - before.backward_solves);
  if (fs == 0.0) return;
  report.rows.push_back({run, epoch, "train", "fwd_iters_mean",
                         static_cast<double>(after.forward_iterations - before.forward_iterations) / fs});
  report.rows.push_back({run, epoch, "train", "fwd_unconverged_rate",
                         static_cast<double>(after.forward_unconverged - before.forward_unconverged) / fs});
  if (bs > 0.0) {
    report.rows.push_back({run, epoch, "train", "bwd_iters_mean",
                           static_cast<double>(after.backward_iterations - before.backward_iterations) / bs});
    report.rows.push_back({run, epoch, "train", "bwd_unconverged_rate",
                           static_cast<double>(after.backward_unconverged - before.backward_unconverged) / bs});
  }
}

inline void note_convergence(RunReport& report, const std::string& run, const FpiStats& stats) {
  if (stats.forward_solves == 0) return;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s: %zu forward solves, %.2f%% unconverged; %zu backward solves, %zu unconverged",
                run.c_str(), stats.forward_solves, 100.0 * stats.forward_unconverged_rate(),
                stats.backward_solves, stats.backward_unconverged);
  report.lines.push_back(buf);
  if (stats.flagged()) {
    report.flagged = true;
    report.lines.push_back("FLAG " + run + ": more than 1% of forward solves did not converge");
  }
}

inline std::string fmt_double(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace fpx::cli::detail
