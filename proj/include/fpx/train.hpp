#pragma once

#include <cstdint>
#include <vector>

#include "fpx/graph.hpp"
#include "fpx/parameters.hpp"

namespace fpx {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments mirror the parameter layout; `step` counts completed updates.
struct AdamState {
  AdamState(const Parameters& like, AdamConfig cfg = {});

  AdamConfig cfg;
  Parameters m, v;
  std::int64_t step = 0;
};

/// One Adam update (bias-corrected, no weight decay). Throws NonFiniteError
/// naming the first parameter whose gradient is not finite.
Parameters adam_step(const Parameters& theta, const Parameters& grads, AdamState& state);

enum class ClampMode {
  GlobalNorm,     // one scale for all tensors
  PerTensorNorm,  // each tensor scaled by its own norm
  Value,          // elementwise clip to [-max, max]
};

Parameters grad_clamp(const Parameters& grads, double max_norm, ClampMode mode = ClampMode::GlobalNorm);

/// Predictions are clamped to [kBceEps, 1 - kBceEps] before taking logs.
inline constexpr double kBceEps = 1e-12;

double mse_loss(const Tensor& pred, const Tensor& target);
double bce_loss(const Tensor& pred, const Tensor& target);
Var mse_loss(Var pred, Var target);
Var bce_loss(Var pred, Var target);

/// 10 log10(peak^2 / MSE); +infinity when the images are identical.
double psnr(const Tensor& pred, const Tensor& target, double peak = 1.0);

/// Example-based F1 over rows of binary N x L matrices. A row where both
/// sets are empty scores 1; exactly one empty scores 0.
double f1_score(const Tensor& pred, const Tensor& target);

/// F1 after thresholding scores at tau (score >= tau is positive).
double f1_at_threshold(const Tensor& scores, const Tensor& target, double tau);

struct ThresholdChoice {
  double tau = 0.5;
  double f1 = 0.0;
};

/// Sweeps tau over 0.05, 0.10, ..., 0.95; ties keep the smaller tau.
ThresholdChoice select_threshold(const Tensor& scores, const Tensor& target);

}  // namespace fpx
