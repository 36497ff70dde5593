#include "fpx/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fpx/kernels.hpp"
#include "fpx/ops.hpp"

namespace fpx {

AdamState::AdamState(const Parameters& like, AdamConfig c)
    : cfg(c), m(like.zeros_like()), v(like.zeros_like()) {
  if (!(cfg.lr > 0.0) || !(cfg.eps > 0.0) || cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 ||
      cfg.beta2 >= 1.0) {
    throw std::invalid_argument("invalid Adam hyperparameters");
  }
}

Parameters adam_step(const Parameters& theta, const Parameters& grads, AdamState& state) {
  if (grads.size() != theta.size() || state.m.size() != theta.size()) {
    throw DimensionError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (grads[i].shape() != theta[i].shape()) {
      throw DimensionError("adam_step: gradient for '" + theta.name(i) + "' has shape " +
                           shape_str(grads[i].shape()) + ", expected " + shape_str(theta[i].shape()));
    }
    if (!grads[i].all_finite()) throw NonFiniteError("non-finite gradient for parameter '" + theta.name(i) + "'");
  }
  const auto& c = state.cfg;
  const std::int64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  Parameters out;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const auto g = grads[i].data();
    const auto p = theta[i].data();
    std::vector<double> m = state.m[i].to_vector(), v = state.v[i].to_vector(), next(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      next[j] = p[j] - c.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.eps);
    }
    state.m.set(i, Tensor(theta[i].shape(), std::move(m)));
    state.v.set(i, Tensor(theta[i].shape(), std::move(v)));
    out.add(theta.name(i), Tensor(theta[i].shape(), std::move(next)));
  }
  state.step = t;
  return out;
}

Parameters grad_clamp(const Parameters& grads, double max_norm, ClampMode mode) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("grad_clamp: max_norm must be positive");
  Parameters out;
  if (mode == ClampMode::GlobalNorm) {
    const double n = global_norm(grads);
    const double s = n > max_norm ? max_norm / n : 1.0;
    for (const auto& e : grads.entries()) out.add(e.name, s == 1.0 ? e.value : kernels::scale(e.value, s));
    return out;
  }
  for (const auto& e : grads.entries()) {
    if (mode == ClampMode::PerTensorNorm) {
      const double n = std::sqrt(kernels::sq_norm(e.value).item());
      out.add(e.name, n > max_norm ? kernels::scale(e.value, max_norm / n) : e.value);
    } else {
      out.add(e.name, kernels::clamp_box(e.value, -max_norm, max_norm));
    }
  }
  return out;
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
  if (a.size() == 0) throw DimensionError(std::string(what) + ": empty input");
}

}  // namespace

double mse_loss(const Tensor& pred, const Tensor& target) {
  require_same(pred, target, "mse_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

double bce_loss(const Tensor& pred, const Tensor& target) {
  require_same(pred, target, "bce_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred[i], kBceEps, 1.0 - kBceEps);
    s -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
  }
  return s / static_cast<double>(pred.size());
}

Var mse_loss(Var pred, Var target) {
  require_same(pred.value(), target.value(), "mse_loss");
  return ops::mean(ops::square(ops::sub(pred, target)));
}

Var bce_loss(Var pred, Var target) {
  require_same(pred.value(), target.value(), "bce_loss");
  Var p = ops::clamp_box(pred, kBceEps, 1.0 - kBceEps);
  Var one_minus_p = ops::add_scalar(ops::neg(p), 1.0);
  Var one_minus_t = ops::add_scalar(ops::neg(target), 1.0);
  Var ll = ops::add(ops::mul(target, ops::log(p)), ops::mul(one_minus_t, ops::log(one_minus_p)));
  return ops::neg(ops::mean(ll));
}

double psnr(const Tensor& pred, const Tensor& target, double peak) {
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be positive");
  const double mse = mse_loss(pred, target);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double f1_score(const Tensor& pred, const Tensor& target) {
  require_same(pred, target, "f1_score");
  if (pred.rank() != 2) throw DimensionError("f1_score expects N x L matrices");
  const std::size_t n = pred.dim(0), l = pred.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t np = 0, nt = 0, both = 0;
    for (std::size_t j = 0; j < l; ++j) {
      const bool p = pred[r * l + j] != 0.0, t = target[r * l + j] != 0.0;
      np += p;
      nt += t;
      both += p && t;
    }
    if (np + nt == 0) {
      total += 1.0;
    } else {
      total += 2.0 * static_cast<double>(both) / static_cast<double>(np + nt);
    }
  }
  return total / static_cast<double>(n);
}

double f1_at_threshold(const Tensor& scores, const Tensor& target, double tau) {
  return f1_score(kernels::threshold(scores, tau), target);
}

ThresholdChoice select_threshold(const Tensor& scores, const Tensor& target) {
  ThresholdChoice best{0.05, -1.0};
  for (int i = 1; i <= 19; ++i) {
    const double tau = 0.05 * i;
    const double f1 = f1_at_threshold(scores, target, tau);
    if (f1 > best.f1) best = {tau, f1};
  }
  return best;
}

}  // namespace fpx
