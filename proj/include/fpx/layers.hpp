#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>

#include "fpx/gmodule.hpp"

namespace fpx {

/// g(x, z) = x A^T + z + b on rows of x. The reference contraction used by
/// the gradient oracles.
class LinearG final : public GModule {
 public:
  explicit LinearG(std::size_t dim) : dim_(dim) {}

  std::string name() const override { return "linear"; }
  std::vector<ParamSpec> param_specs() const override;
  Shape state_shape(const Shape& input_shape) const override { return input_shape; }
  Var apply(Graph& graph, Var x, Var z, std::span<const Var> theta) const override;

 private:
  std::size_t dim_;
};

enum class OutputActivation { None, Sigmoid };

/// FPI_NN update for vector data:
/// act(W2 relu(W1 [x z] + b1) + b2), applied to each row of a batch.
class MlpG final : public GModule {
 public:
  MlpG(std::size_t state_dim, std::size_t input_dim, std::size_t hidden,
       OutputActivation output = OutputActivation::Sigmoid);

  std::string name() const override { return "mlp"; }
  std::vector<ParamSpec> param_specs() const override;
  Shape state_shape(const Shape& input_shape) const override;
  Var apply(Graph& graph, Var x, Var z, std::span<const Var> theta) const override;
  /// z W1z^T + b1 and W1x^T, where W1 = [W1x W1z].
  std::vector<Var> invariants(Graph& graph, Var z, std::span<const Var> theta) const override;
  Var apply_cached(Graph& graph, Var x, Var z, std::span<const Var> theta,
                   std::span<const Var> cached) const override;

  std::size_t state_dim() const { return state_dim_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden() const { return hidden_; }

 private:
  std::size_t state_dim_, input_dim_, hidden_;
  OutputActivation output_;
};

/// FPI_NN update for single-channel images:
/// conv2(relu(conv1([x; z]))) with 3x3 kernels, padding 1.
class ConvG final : public GModule {
 public:
  explicit ConvG(std::size_t channels = 32);

  std::string name() const override { return "conv"; }
  std::vector<ParamSpec> param_specs() const override;
  Shape state_shape(const Shape& input_shape) const override { return input_shape; }
  Var apply(Graph& graph, Var x, Var z, std::span<const Var> theta) const override;

 private:
  std::size_t channels_;
};

/// Scalar energy f(x, z; theta) for FPI_GD. Per row u = [x z],
/// one layer:   mean(relu(W1 u + b1)^2)
/// two layers:  mean((W2 relu(W1 u + b1) + b2)^2)
/// and the batch energy is the sum of the row energies, so each row's
/// gradient in x is independent of the batch size.
class EnergyNet {
 public:
  EnergyNet(std::size_t state_dim, std::size_t input_dim, std::size_t hidden,
            std::size_t output = 0);

  std::vector<ParamSpec> param_specs() const;
  Var energy(Graph& graph, Var x, Var z, std::span<const Var> theta) const;
  /// Energy as a function object with inputs (x, z, theta...).
  FunctionObject as_function() const;
  Tensor evaluate(const Tensor& x, const Tensor& z, const Parameters& theta) const;

  std::size_t state_dim() const { return state_dim_; }
  std::size_t input_dim() const { return input_dim_; }

  /// z W1z^T + b1 and W1x^T, where W1 = [W1x W1z].
  std::vector<Var> input_terms(Var z, std::span<const Var> theta) const;
  /// Energy from x, the input_terms and the remaining parameters (fc2).
  Var energy_from_terms(Var x, Var zproj, Var wx_t, std::span<const Var> tail) const;
  /// energy_from_terms as a function object with inputs (x, zproj, wx_t, tail...).
  FunctionObject terms_function() const;

 private:
  std::size_t state_dim_, input_dim_, hidden_, output_;
};

/// FPI_GD update: one gradient step x - gamma * df/dx(x, z; theta) on an
/// energy network. The partial derivative is taken with P, so theta and z
/// are held fixed while differentiating in x.
class GdG final : public GModule {
 public:
  GdG(EnergyNet energy, double gamma);

  std::string name() const override { return "gd"; }
  std::vector<ParamSpec> param_specs() const override { return energy_.param_specs(); }
  Shape state_shape(const Shape& input_shape) const override;
  Var apply(Graph& graph, Var x, Var z, std::span<const Var> theta) const override;
  std::vector<Var> invariants(Graph& graph, Var z, std::span<const Var> theta) const override;
  Var apply_cached(Graph& graph, Var x, Var z, std::span<const Var> theta,
                   std::span<const Var> cached) const override;

  const EnergyNet& energy() const { return energy_; }
  double gamma() const { return gamma_; }

 private:
  EnergyNet energy_;
  double gamma_;
};

/// x - gamma * df/dx(x, z; theta).
Tensor fpi_gd_step(const EnergyNet& f, const Tensor& x, const Tensor& z, const Parameters& theta,
                   double gamma);

/// Fan-in uniform initialisation U(-scale/sqrt(fan_in), scale/sqrt(fan_in))
/// for weights; biases start at zero.
Parameters init_small(std::span<const ParamSpec> specs, double scale, std::mt19937_64& rng);

/// Largest singular value of a matrix by power iteration on W^T W.
double matrix_spectral_norm(const Tensor& w, int iterations = 50, double tol = 1e-8);
/// Operator norm of a stride-1 zero-padded convolution acting on
/// C_in x height x width images, by power iteration.
double conv_spectral_norm(const Tensor& kernel, std::size_t height, std::size_t width,
                          std::size_t padding, int iterations = 50, double tol = 1e-8);

struct LipschitzOptions {
  int iterations = 50;
  double tol = 1e-8;
  std::size_t conv_height = 16;
  std::size_t conv_width = 16;
};

/// Rescales every weight whose spectral norm exceeds k down to norm k.
/// Conv kernels use the unfolded operator at a fixed image size.
Parameters lipschitz_project(const Parameters& theta, std::span<const ParamSpec> specs, double k,
                             const LipschitzOptions& options = {});

/// Parameter blob: a text header line "FPXPARAM 1", one line of JSON
/// describing names, shapes and metadata, then the raw little-endian
/// float64 values in entry order.
void save_parameters(const std::filesystem::path& path, const Parameters& theta,
                     const std::map<std::string, std::string>& metadata = {});
Parameters load_parameters(const std::filesystem::path& path,
                           std::map<std::string, std::string>* metadata = nullptr);

}  // namespace fpx
