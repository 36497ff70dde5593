// fpx <task> --config <path> [--seed N] [--out dir] [--model m] [--epochs N] [--tol X]

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "fpx/cli/experiments.hpp"
#include "fpx/log.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

int main(int argc, char** argv) {
  using namespace fpx::cli;
#if defined(__GLIBC__)
  // Graph buffers are allocated and freed every step; keep them out of
  // mmap so the kernel is not asked for fresh pages each time.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  CLI::App app{"Fixed-point iteration layer experiments"};
  std::string task, config_path, out_dir, models;
  long long seed = -1;
  int epochs = -1;
  double tol = -1.0;
  std::vector<std::string> sets;
  bool quiet = false;
  app.add_option("task", task, "toybox, denoise, multilabel or gradcheck")->required();
  app.add_option("-c,--config", config_path, "experiment configuration file")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "base random seed");
  app.add_option("--out", out_dir, "output directory (a run_id subdirectory is created)");
  app.add_option("--model", models, "model list: fpi_nn, fpi_gd, feedforward (comma separated)");
  app.add_option("--epochs", epochs, "training epochs");
  app.add_option("--tol", tol, "forward convergence threshold");
  app.add_option("--set", sets, "extra key=value override, e.g. denoise.sigmas=15,20,25");
  app.add_flag("-q,--quiet", quiet, "suppress solver warnings");
  CLI11_PARSE(app, argc, argv);

  try {
    ConfigFile file = ConfigFile::load(config_path);
    if (file.has("experiment.task") && parse_task(file.require_string("experiment.task")) != parse_task(task)) {
      throw ConfigError(config_path + " is a " + file.require_string("experiment.task") + " configuration");
    }
    file.set("experiment.task", task);
    if (seed >= 0) file.set("experiment.seed", std::to_string(seed));
    if (!out_dir.empty()) file.set("experiment.out_dir", out_dir);
    if (!models.empty()) file.set("experiment.models", models);
    if (epochs >= 0) file.set("experiment.epochs", std::to_string(epochs));
    if (tol > 0.0) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", tol);
      file.set("fpi.tol", buf);
    }
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv + "'");
      file.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (quiet) fpx::logger().set_level(spdlog::level::err);

    const ExperimentConfig cfg = experiment_from(file, std::filesystem::path(config_path).parent_path());
    const RunReport report = run_experiment(cfg);
    const auto dir = write_report(cfg, report);
    for (const auto& line : report.lines) std::cout << line << "\n";
    if (report.flagged) std::cout << "FLAGGED: more than 1% of forward solves did not converge\n";
    std::cout << "metrics: " << (dir / "metrics.csv").string() << "\n";
    return report.failed ? 1 : 0;
  } catch (const std::exception& e) {
    std::cerr << "fpx: " << e.what() << "\n";
    return 2;
  }
}
