#include <algorithm>
#include <numeric>
#include <random>

#include "common.hpp"
#include "fpx/layers.hpp"
#include "fpx/log.hpp"

namespace fpx::cli {

namespace {

Tensor take_rows(const Tensor& m, std::span<const std::size_t> idx) {
  const std::size_t w = m.dim(1);
  std::vector<double> out;
  out.reserve(idx.size() * w);
  for (std::size_t i : idx) {
    const auto r = m.data().subspan(i * w, w);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor({idx.size(), w}, std::move(out));
}

struct Split {
  Tensor x;  // features
  Tensor y;  // labels
};

Tensor scores(const Model& m, const Tensor& features, std::size_t n_labels, std::size_t batch) {
  const std::size_t n = features.dim(0);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> out;
  out.reserve(n * n_labels);
  for (std::size_t b = 0; b < n; b += batch) {
    const std::size_t e = std::min(n, b + batch);
    const Tensor p = m.predict(take_rows(features, std::span(idx).subspan(b, e - b)), Tensor::zeros({e - b, n_labels}));
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return Tensor({n, n_labels}, std::move(out));
}

}  // namespace

RunReport run_multilabel(const ExperimentConfig& cfg) {
  const auto& f = cfg.raw;
  SparseFormat fmt;
  fmt.n_features = static_cast<std::size_t>(f.get_int("multilabel.features", 1836));
  fmt.n_labels = static_cast<std::size_t>(f.get_int("multilabel.labels", 159));
  const auto hidden = static_cast<std::size_t>(f.get_int("multilabel.hidden", 512));
  const double val_fraction = f.get_double("multilabel.validation_fraction", 0.1);
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("multilabel.validation_fraction must be in (0, 1)");
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t L = fmt.n_labels;

  RunReport report;
  auto load = [&](const char* key, const char* count_key) {
    SparseFormat sf = fmt;
    sf.expect_samples = f.get_int(count_key, -1);
    const auto path = cfg.data_dir / f.require_string(key);
    SparseDataset ds = load_sparse_dataset(path, sf);
    for (const auto& w : ds.warnings) logger().warn("{}", w);
    report.lines.push_back(path.filename().string() + ": " + std::to_string(ds.features.dim(0)) + " samples, " +
                           (ds.feature_base == 1 ? "1" : "0") + "-based features, " +
                           (ds.label_base == 1 ? "1" : "0") + "-based labels, " +
                           std::to_string(ds.empty_label_rows) + " samples with no labels, " +
                           std::to_string(ds.warnings.size()) + " warnings");
    return ds;
  };
  const SparseDataset train_all = load("multilabel.train_file", "multilabel.train_samples");
  const SparseDataset test_ds = load("multilabel.test_file", "multilabel.test_samples");

  // Seeded validation holdout from the training file.
  const std::size_t n_all = train_all.features.dim(0);
  std::vector<std::size_t> perm(n_all);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 split_rng(derive_seed(cfg.seed, {30}));
  std::shuffle(perm.begin(), perm.end(), split_rng);
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(static_cast<double>(n_all) * val_fraction));
  if (n_val >= n_all) throw DataError("multilabel: training file too small for a validation split");
  std::vector<std::size_t> val_idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> tr_idx(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(tr_idx.begin(), tr_idx.end());
  const Split train{take_rows(train_all.features, tr_idx), take_rows(train_all.labels, tr_idx)};
  const Split val{take_rows(train_all.features, val_idx), take_rows(train_all.labels, val_idx)};
  const Split test{test_ds.features, test_ds.labels};
  const std::size_t n_train = tr_idx.size();
  report.lines.push_back("validation holdout: " + std::to_string(n_val) + " of " + std::to_string(n_all) +
                         " training samples");

  for (ModelKind kind : cfg.models) {
    const std::string run = cfg.run_id + "." + to_string(kind);
    const auto kind_id = static_cast<std::uint64_t>(kind);
    Model m;
    m.kind = kind;
    m.fpi = cfg.fpi;
    if (kind == ModelKind::FpiGd) {
      m.fpi = detail::gd_layer_config(cfg);
      const auto gd_hidden = static_cast<std::size_t>(f.get_int("multilabel.gd_hidden", static_cast<long long>(hidden)));
      m.g = std::make_shared<GdG>(EnergyNet(L, fmt.n_features, gd_hidden), m.fpi.forward.gamma);
      m.sigmoid_after = true;
    } else {
      m.g = std::make_shared<MlpG>(L, fmt.n_features, hidden, OutputActivation::Sigmoid);
    }
    std::mt19937_64 init_rng(derive_seed(cfg.seed, {31, kind_id}));
    m.theta = init_small(m.g->param_specs(), cfg.init_scale, init_rng);
    AdamState adam(m.theta, cfg.adam);
    const StepSettings settings{LossKind::Bce, cfg.grad_clip, cfg.clamp_mode};
    std::mt19937_64 order_rng(derive_seed(cfg.seed, {32, kind_id}));
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    double best_val = -1.0, best_test = 0.0, best_tau = 0.5;
    int best_epoch = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), order_rng);
      const FpiStats before = *m.stats;
      double loss_sum = 0.0;
      std::size_t steps = 0;
      for (std::size_t b = 0; b < n_train; b += batch) {
        const auto idx = std::span<const std::size_t>(order).subspan(b, std::min(batch, n_train - b));
        const Sample s{take_rows(train.x, idx), take_rows(train.y, idx), Tensor::zeros({idx.size(), L})};
        loss_sum += train_step(m, adam, std::span<const Sample>(&s, 1), settings);
        ++steps;
      }
      const FpiStats after = *m.stats;
      const ThresholdChoice choice = select_threshold(scores(m, val.x, L, batch), val.y);
      const double test_f1 = f1_at_threshold(scores(m, test.x, L, batch), test.y, choice.tau);
      report.rows.push_back({run, epoch, "train", "bce", loss_sum / static_cast<double>(steps)});
      report.rows.push_back({run, epoch, "val", "f1", choice.f1});
      report.rows.push_back({run, epoch, "val", "threshold", choice.tau});
      report.rows.push_back({run, epoch, "test", "f1", test_f1});
      detail::add_solver_rows(report, run, epoch, before, after);
      if (choice.f1 > best_val) {
        best_val = choice.f1;
        best_test = test_f1;
        best_tau = choice.tau;
        best_epoch = epoch;
      }
    }
    report.rows.push_back({run, best_epoch, "test", "selected_f1", best_test});
    report.lines.push_back(run + ": test F1 " + detail::fmt_double(100.0 * best_test, "%.2f") + " at epoch " +
                           std::to_string(best_epoch) + " (validation F1 " +
                           detail::fmt_double(100.0 * best_val, "%.2f") + ", threshold " +
                           detail::fmt_double(best_tau, "%.2f") + ")");
    detail::note_convergence(report, run, *m.stats);
  }
  return report;
}

}  // namespace fpx::cli
