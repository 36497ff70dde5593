#pragma once

// Reference implementations used only by tests. None of these touch the
// library's kernels or autodiff paths.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "fpx/tensor.hpp"

namespace fpx::testing {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = u(rng);
  return Tensor(shape, std::move(data));
}

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(p, j);
      out[i * n + j] = s;
    }
  return Tensor({m, n}, std::move(out));
}

// Direct six-loop cross-correlation with zero padding.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& w, std::size_t stride,
                           std::size_t pad) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const std::size_t OH = (H + 2 * pad - KH) / stride + 1;
  const std::size_t OW = (W + 2 * pad - KW) / stride + 1;
  std::vector<double> out(O * OH * OW, 0.0);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t y = 0; y < OH; ++y)
      for (std::size_t xx = 0; xx < OW; ++xx) {
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < KH; ++i)
            for (std::size_t j = 0; j < KW; ++j) {
              const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
              const long ix = static_cast<long>(xx * stride + j) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W))
                continue;
              s += x[(c * H + iy) * W + ix] * w[((o * C + c) * KH + i) * KW + j];
            }
        out[(o * OH + y) * OW + xx] = s;
      }
  return Tensor({O, OH, OW}, std::move(out));
}

inline double inner_product(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Tensor perturbed(const Tensor& t, std::size_t i, double delta) {
  std::vector<double> d = t.to_vector();
  d[i] += delta;
  return Tensor(t.shape(), std::move(d));
}

// Central finite-difference gradient of a scalar function of one tensor.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                          double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    g[i] = (f(perturbed(x, i, h)) - f(perturbed(x, i, -h))) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(g));
}

// Relative error in the norm sense: ||a - b|| / max(||b||, floor).
inline double rel_error(const Tensor& a, const Tensor& b, double floor = 1e-12) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

}  // namespace fpx::testing
