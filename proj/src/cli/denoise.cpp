#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "common.hpp"
#include "fpx/kernels.hpp"
#include "fpx/layers.hpp"
#include "fpx/log.hpp"

namespace fpx::cli {

namespace {

std::vector<Tensor> load_images(const std::filesystem::path& dir, long long limit, std::vector<std::string>& errors) {
  std::vector<Tensor> out;
  for (const auto& p : list_pgm(dir)) {
    if (limit >= 0 && static_cast<long long>(out.size()) >= limit) break;
    try {
      out.push_back(read_pgm(p));
    } catch (const DataError& e) {
      errors.push_back(e.what());
    }
  }
  return out;
}

// Clean image plus N(0, (sigma/255)^2) per pixel.
Tensor add_noise(const Tensor& clean, double sigma255, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, sigma255 / 255.0);
  std::vector<double> v = clean.to_vector();
  for (double& x : v) x += normal(rng);
  return Tensor(clean.shape(), std::move(v));
}

Tensor clamp_unit(const Tensor& t) { return kernels::clamp_box(t, 0.0, 1.0); }

}  // namespace

RunReport run_denoise(const ExperimentConfig& cfg) {
  const auto& f = cfg.raw;
  const auto channels = static_cast<std::size_t>(f.get_int("denoise.channels", 32));
  const std::vector<double> sigmas = f.get_doubles("denoise.sigmas", {25.0});
  const long long n_train = f.get_int("denoise.train_images", -1);
  const long long n_test = f.get_int("denoise.test_images", -1);
  const bool clamp_eval = f.get_bool("denoise.clamp_output", true);
  const auto train_dir = cfg.data_dir / f.get_string("denoise.train_dir", "train");
  const auto test_dir = cfg.data_dir / f.get_string("denoise.test_dir", "test");

  RunReport report;
  std::vector<std::string> errors;
  const std::vector<Tensor> train = load_images(train_dir, n_train, errors);
  const std::vector<Tensor> test = load_images(test_dir, n_test, errors);
  for (const auto& e : errors) {
    logger().warn("{}", e);
    report.lines.push_back("skipped image: " + e);
  }
  if (train.empty() || test.empty()) {
    throw DataError("denoise: no readable images under " + train_dir.string() + " and " + test_dir.string());
  }
  report.lines.push_back("denoise: " + std::to_string(train.size()) + " train / " + std::to_string(test.size()) +
                         " test images of " + shape_str(train.front().shape()));

  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t si = 0; si < sigmas.size(); ++si) {
    const double sigma = sigmas[si];
    const std::string tag = "sigma" + detail::fmt_double(sigma, "%g");

    std::mt19937_64 test_rng(derive_seed(cfg.seed, {20, si}));
    std::vector<Tensor> test_noisy;
    double noisy_psnr = 0.0;
    for (const Tensor& img : test) {
      test_noisy.push_back(add_noise(img, sigma, test_rng));
      noisy_psnr += psnr(test_noisy.back(), img);
    }
    noisy_psnr /= static_cast<double>(test.size());
    report.rows.push_back({cfg.run_id + ".noisy." + tag, 0, "test", "psnr", noisy_psnr});
    report.lines.push_back(tag + ": noisy input psnr " + detail::fmt_double(noisy_psnr, "%.4f") + " dB");

    std::vector<std::pair<ModelKind, double>> best_by_model;
    for (ModelKind kind : cfg.models) {
      if (kind == ModelKind::FpiGd) throw ConfigError("denoise supports fpi_nn and feedforward models");
      const std::string run = cfg.run_id + "." + to_string(kind) + "." + tag;
      const auto kind_id = static_cast<std::uint64_t>(kind);
      Model m;
      m.kind = kind;
      m.fpi = cfg.fpi;
      m.g = std::make_shared<ConvG>(channels);
      // Same initial weights for every model at a given sigma.
      std::mt19937_64 init_rng(derive_seed(cfg.seed, {21, si}));
      m.theta = init_small(m.g->param_specs(), cfg.init_scale, init_rng);
      AdamState adam(m.theta, cfg.adam);
      const StepSettings settings{LossKind::Mse, cfg.grad_clip, cfg.clamp_mode};
      std::mt19937_64 order_rng(derive_seed(cfg.seed, {22, si, kind_id}));
      std::vector<std::size_t> order(train.size());
      std::iota(order.begin(), order.end(), 0);

      auto test_psnr = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < test.size(); ++i) {
          Tensor pred = m.predict(test_noisy[i], test_noisy[i]);
          if (clamp_eval) pred = clamp_unit(pred);
          s += psnr(pred, test[i]);
        }
        return s / static_cast<double>(test.size());
      };

      double best = -std::numeric_limits<double>::infinity(), last = 0.0;
      int best_epoch = 0;
      for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        // Fresh noise each epoch, shared by all models.
        std::mt19937_64 noise_rng(derive_seed(cfg.seed, {23, si, static_cast<std::uint64_t>(epoch)}));
        std::vector<Tensor> noisy(train.size());
        for (std::size_t i = 0; i < train.size(); ++i) noisy[i] = add_noise(train[i], sigma, noise_rng);

        const FpiStats before = *m.stats;
        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t b = 0; b < order.size(); b += batch) {
          std::vector<Sample> samples;
          for (std::size_t i = b; i < std::min(order.size(), b + batch); ++i) {
            const std::size_t k = order[i];
            samples.push_back({noisy[k], train[k], noisy[k]});
          }
          loss_sum += train_step(m, adam, samples, settings);
          ++steps;
        }
        const FpiStats after = *m.stats;
        last = test_psnr();
        if (last > best) {
          best = last;
          best_epoch = epoch;
        }
        report.rows.push_back({run, epoch, "train", "mse", loss_sum / static_cast<double>(steps)});
        report.rows.push_back({run, epoch, "test", "psnr", last});
        detail::add_solver_rows(report, run, epoch, before, after);
      }
      report.rows.push_back({run, best_epoch, "test", "best_psnr", best});
      report.lines.push_back(run + ": best psnr " + detail::fmt_double(best, "%.4f") + " dB at epoch " +
                             std::to_string(best_epoch) + ", last " + detail::fmt_double(last, "%.4f") + " dB");
      detail::note_convergence(report, run, *m.stats);
      best_by_model.emplace_back(kind, best);
      if (f.get_bool("denoise.save_parameters", false)) {
        std::filesystem::create_directories(cfg.out_dir / cfg.run_id);
        save_parameters(cfg.out_dir / cfg.run_id / (to_string(kind) + "." + tag + ".params"), m.theta,
                        {{"model", to_string(kind)}, {"task", "denoise"}, {"sigma", detail::fmt_double(sigma)}});
      }
    }
    const auto find = [&](ModelKind k) {
      for (const auto& [kk, v] : best_by_model)
        if (kk == k) return v;
      return std::numeric_limits<double>::quiet_NaN();
    };
    const double gap = find(ModelKind::FpiNn) - find(ModelKind::Feedforward);
    if (!std::isnan(gap)) {
      report.rows.push_back({cfg.run_id + ".gap." + tag, 0, "test", "psnr_gap", gap});
      report.lines.push_back(tag + ": fpi_nn - feedforward = " + detail::fmt_double(gap, "%.4f") + " dB");
    }
  }
  return report;
}

}  // namespace fpx::cli
