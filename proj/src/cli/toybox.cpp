#include <algorithm>
#include <numeric>
#include <random>

#include "common.hpp"
#include "fpx/kernels.hpp"
#include "fpx/layers.hpp"

namespace fpx::cli {

namespace {

struct BoxData {
  Tensor a;  // N x d problem inputs
  Tensor t;  // N x d projections onto [-1, 1]^d
};

BoxData make_box_data(std::size_t n, std::size_t d, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<double> a(n * d);
  for (double& v : a) v = normal(rng);
  Tensor at({n, d}, std::move(a));
  return {at, kernels::clamp_box(at, -1.0, 1.0)};
}

Tensor rows(const Tensor& m, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  const std::size_t d = m.dim(1);
  std::vector<double> out;
  out.reserve((end - begin) * d);
  for (std::size_t i = begin; i < end; ++i) {
    const auto r = m.data().subspan(idx[i] * d, d);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor({end - begin, d}, std::move(out));
}

double evaluate(const Model& m, const BoxData& data, std::size_t batch) {
  const std::size_t n = data.a.dim(0), d = data.a.dim(1);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  double sq = 0.0;
  for (std::size_t b = 0; b < n; b += batch) {
    const std::size_t e = std::min(n, b + batch);
    const Tensor pred = m.predict(rows(data.a, idx, b, e), Tensor::zeros({e - b, d}));
    sq += mse_loss(pred, rows(data.t, idx, b, e)) * static_cast<double>((e - b) * d);
  }
  return sq / static_cast<double>(n * d);
}

}  // namespace

RunReport run_toybox(const ExperimentConfig& cfg) {
  const auto& f = cfg.raw;
  const auto d = static_cast<std::size_t>(f.get_int("toybox.dim", 10));
  const auto hidden = static_cast<std::size_t>(f.get_int("toybox.hidden", 32));
  const auto n_train = static_cast<std::size_t>(f.get_int("toybox.train_samples", 10000));
  const auto n_test = static_cast<std::size_t>(f.get_int("toybox.test_samples", 1000));
  const double sigma_train = f.get_double("toybox.train_sigma", 2.0);
  const double sigma_test = f.get_double("toybox.test_sigma", 1.0);
  const auto energy_out = static_cast<std::size_t>(f.get_int("toybox.energy_outputs", static_cast<long long>(d)));
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  std::mt19937_64 data_rng(derive_seed(cfg.seed, {1}));
  const BoxData train = make_box_data(n_train, d, sigma_train, data_rng);
  const BoxData test = make_box_data(n_test, d, sigma_test, data_rng);

  RunReport report;
  report.lines.push_back("toybox: dim " + std::to_string(d) + ", hidden " + std::to_string(hidden) + ", " +
                         std::to_string(n_train) + " train / " + std::to_string(n_test) + " test samples");
  for (ModelKind kind : cfg.models) {
    const std::string run = cfg.run_id + "." + to_string(kind);
    const auto kind_id = static_cast<std::uint64_t>(kind);
    Model m;
    m.kind = kind;
    m.fpi = cfg.fpi;
    if (kind == ModelKind::FpiGd) {
      m.fpi = detail::gd_layer_config(cfg);
      m.g = std::make_shared<GdG>(EnergyNet(d, d, hidden, energy_out), m.fpi.forward.gamma);
    } else {
      m.g = std::make_shared<MlpG>(d, d, hidden, OutputActivation::None);
    }
    std::mt19937_64 init_rng(derive_seed(cfg.seed, {2, kind_id}));
    m.theta = init_small(m.g->param_specs(), cfg.init_scale, init_rng);
    AdamState adam(m.theta, cfg.adam);
    const StepSettings settings{LossKind::Mse, cfg.grad_clip, cfg.clamp_mode};
    std::mt19937_64 order_rng(derive_seed(cfg.seed, {3, kind_id}));
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    report.rows.push_back({run, 0, "test", "mse", evaluate(m, test, batch)});
    double last_test = 0.0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), order_rng);
      const FpiStats before = *m.stats;
      double train_sum = 0.0;
      std::size_t steps = 0;
      for (std::size_t b = 0; b < n_train; b += batch) {
        const std::size_t e = std::min(n_train, b + batch);
        const Sample s{rows(train.a, order, b, e), rows(train.t, order, b, e), Tensor::zeros({e - b, d})};
        train_sum += train_step(m, adam, std::span<const Sample>(&s, 1), settings);
        ++steps;
      }
      const FpiStats after = *m.stats;
      last_test = evaluate(m, test, batch);
      report.rows.push_back({run, epoch, "train", "mse", train_sum / static_cast<double>(steps)});
      report.rows.push_back({run, epoch, "test", "mse", last_test});
      detail::add_solver_rows(report, run, epoch, before, after);
    }
    report.lines.push_back(run + ": final test mse " + detail::fmt_double(last_test, "%.6e"));
    detail::note_convergence(report, run, *m.stats);
    if (f.get_bool("toybox.save_parameters", false)) {
      std::filesystem::create_directories(cfg.out_dir / cfg.run_id);
      save_parameters(cfg.out_dir / cfg.run_id / (to_string(kind) + ".params"), m.theta,
                      {{"model", to_string(kind)}, {"task", "toybox"}, {"init_scale", detail::fmt_double(cfg.init_scale)}});
    }
  }
  return report;
}

}  // namespace fpx::cli
