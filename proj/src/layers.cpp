#include "fpx/layers.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "fpx/kernels.hpp"
#include "fpx/ops.hpp"

namespace fpx {

namespace {

void require_rows(const Var& v, std::size_t cols, const char* what) {
  if (v.shape().size() != 2 || v.shape()[1] != cols) {
    throw DimensionError(std::string(what) + " must be B x " + std::to_string(cols) + ", got " +
                         shape_str(v.shape()));
  }
}

}  // namespace

std::vector<ParamSpec> LinearG::param_specs() const {
  return {{"A", {dim_, dim_}, ParamKind::Matrix, dim_}, {"b", {dim_}, ParamKind::Bias, dim_}};
}

Var LinearG::apply(Graph&, Var x, Var z, std::span<const Var> theta) const {
  require_rows(x, dim_, "linear g state");
  if (z.shape() != x.shape()) throw DimensionError("linear g input must match the state shape");
  return ops::add(ops::linear(x, theta[0], theta[1]), z);
}

MlpG::MlpG(std::size_t state_dim, std::size_t input_dim, std::size_t hidden, OutputActivation output)
    : state_dim_(state_dim), input_dim_(input_dim), hidden_(hidden), output_(output) {}

std::vector<ParamSpec> MlpG::param_specs() const {
  const std::size_t in = state_dim_ + input_dim_;
  return {{"fc1.weight", {hidden_, in}, ParamKind::Matrix, in},
          {"fc1.bias", {hidden_}, ParamKind::Bias, in},
          {"fc2.weight", {state_dim_, hidden_}, ParamKind::Matrix, hidden_},
          {"fc2.bias", {state_dim_}, ParamKind::Bias, hidden_}};
}

Shape MlpG::state_shape(const Shape& input_shape) const {
  if (input_shape.size() != 2 || input_shape[1] != input_dim_) {
    throw DimensionError("mlp g input must be B x " + std::to_string(input_dim_) + ", got " +
                         shape_str(input_shape));
  }
  return {input_shape[0], state_dim_};
}

// W1 [x z] + b1 is split so the z half, usually the wide one, is computed
// once per solve.
std::vector<Var> MlpG::invariants(Graph&, Var z, std::span<const Var> theta) const {
  require_rows(z, input_dim_, "mlp g input");
  Var wz = ops::slice(theta[0], 1, state_dim_, input_dim_);
  Var wx_t = ops::transpose(ops::slice(theta[0], 1, 0, state_dim_));
  return {ops::linear(z, wz, theta[1]), wx_t};
}

Var MlpG::apply_cached(Graph&, Var x, Var z, std::span<const Var> theta, std::span<const Var> cached) const {
  require_rows(x, state_dim_, "mlp g state");
  if (x.shape()[0] != z.shape()[0]) {
    throw DimensionError("mlp g state and input batch sizes differ: " + shape_str(x.shape()) + " vs " +
                         shape_str(z.shape()));
  }
  Var h = ops::relu(ops::add(ops::matmul(x, cached[1]), cached[0]));
  Var y = ops::linear(h, theta[2], theta[3]);
  return output_ == OutputActivation::Sigmoid ? ops::sigmoid(y) : y;
}

Var MlpG::apply(Graph& graph, Var x, Var z, std::span<const Var> theta) const {
  return apply_cached(graph, x, z, theta, invariants(graph, z, theta));
}

ConvG::ConvG(std::size_t channels) : channels_(channels) {}

std::vector<ParamSpec> ConvG::param_specs() const {
  return {{"conv1.weight", {channels_, 2, 3, 3}, ParamKind::ConvKernel, 2 * 9},
          {"conv1.bias", {channels_}, ParamKind::Bias, 2 * 9},
          {"conv2.weight", {1, channels_, 3, 3}, ParamKind::ConvKernel, channels_ * 9},
          {"conv2.bias", {1}, ParamKind::Bias, channels_ * 9}};
}

Var ConvG::apply(Graph&, Var x, Var z, std::span<const Var> theta) const {
  if (x.shape().size() != 3 || x.shape()[0] != 1 || z.shape() != x.shape()) {
    throw DimensionError("conv g expects matching 1 x H x W state and input, got " +
                         shape_str(x.shape()) + " and " + shape_str(z.shape()));
  }
  Var u = ops::concat(x, z, 0);
  Var h = ops::relu(ops::channel_bias(ops::conv2d(u, theta[0], {1, 1}), theta[1]));
  return ops::channel_bias(ops::conv2d(h, theta[2], {1, 1}), theta[3]);
}

EnergyNet::EnergyNet(std::size_t state_dim, std::size_t input_dim, std::size_t hidden,
                     std::size_t output)
    : state_dim_(state_dim), input_dim_(input_dim), hidden_(hidden), output_(output) {}

std::vector<ParamSpec> EnergyNet::param_specs() const {
  const std::size_t in = state_dim_ + input_dim_;
  std::vector<ParamSpec> specs{{"fc1.weight", {hidden_, in}, ParamKind::Matrix, in},
                               {"fc1.bias", {hidden_}, ParamKind::Bias, in}};
  if (output_ > 0) {
    specs.push_back({"fc2.weight", {output_, hidden_}, ParamKind::Matrix, hidden_});
    specs.push_back({"fc2.bias", {output_}, ParamKind::Bias, hidden_});
  }
  return specs;
}

std::vector<Var> EnergyNet::input_terms(Var z, std::span<const Var> theta) const {
  require_rows(z, input_dim_, "energy input");
  Var wz = ops::slice(theta[0], 1, state_dim_, input_dim_);
  Var wx_t = ops::transpose(ops::slice(theta[0], 1, 0, state_dim_));
  return {ops::linear(z, wz, theta[1]), wx_t};
}

Var EnergyNet::energy_from_terms(Var x, Var zproj, Var wx_t, std::span<const Var> tail) const {
  require_rows(x, state_dim_, "energy state");
  if (x.shape()[0] != zproj.shape()[0]) {
    throw DimensionError("energy state and input batch sizes differ: " + shape_str(x.shape()) + " vs " +
                         shape_str(zproj.shape()));
  }
  Var a = ops::add(ops::matmul(x, wx_t), zproj);
  std::size_t width = hidden_;
  if (output_ > 0) {
    a = ops::linear(ops::relu(a), tail[0], tail[1]);
    width = output_;
  } else {
    a = ops::relu(a);
  }
  return ops::scale(ops::sum(ops::square(a)), 1.0 / static_cast<double>(width));
}

Var EnergyNet::energy(Graph&, Var x, Var z, std::span<const Var> theta) const {
  const std::vector<Var> t = input_terms(z, theta);
  return energy_from_terms(x, t[0], t[1], theta.subspan(2));
}

FunctionObject EnergyNet::terms_function() const {
  FunctionObject f;
  f.input_names = {"x", "zproj", "wx_t"};
  if (output_ > 0) f.input_names.insert(f.input_names.end(), {"fc2.weight", "fc2.bias"});
  f.recipe = [net = *this](Graph&, std::span<const Var> in) {
    return std::vector<Var>{net.energy_from_terms(in[0], in[1], in[2], in.subspan(3))};
  };
  return f;
}

FunctionObject EnergyNet::as_function() const {
  FunctionObject f;
  f.input_names = {"x", "z"};
  for (const auto& s : param_specs()) f.input_names.push_back(s.name);
  f.recipe = [net = *this](Graph& graph, std::span<const Var> in) {
    return std::vector<Var>{net.energy(graph, in[0], in[1], in.subspan(2))};
  };
  return f;
}

Tensor EnergyNet::evaluate(const Tensor& x, const Tensor& z, const Parameters& theta) const {
  Graph graph;
  Var xv = graph.leaf(x), zv = graph.leaf(z);
  std::vector<Var> tv;
  for (const auto& e : theta.entries()) tv.push_back(graph.leaf(e.value));
  return energy(graph, xv, zv, tv).value();
}

GdG::GdG(EnergyNet energy, double gamma) : energy_(std::move(energy)), gamma_(gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gradient step size must be positive");
}

Shape GdG::state_shape(const Shape& input_shape) const {
  if (input_shape.size() != 2 || input_shape[1] != energy_.input_dim()) {
    throw DimensionError("gd g input must be B x " + std::to_string(energy_.input_dim()));
  }
  return {input_shape[0], energy_.state_dim()};
}

std::vector<Var> GdG::invariants(Graph&, Var z, std::span<const Var> theta) const {
  return energy_.input_terms(z, theta);
}

// The z half of the first layer enters the partial derivative as a fixed
// input, so differentiating in x never touches it.
Var GdG::apply_cached(Graph&, Var x, Var, std::span<const Var> theta, std::span<const Var> cached) const {
  std::vector<Var> s{x, cached[0], cached[1]};
  s.insert(s.end(), theta.begin() + 2, theta.end());
  std::vector<bool> requested(s.size(), false);
  requested[0] = true;
  Var dfdx = *partial_diff(s, energy_.terms_function(), requested)[0];
  return ops::sub(x, ops::scale(dfdx, gamma_));
}

Var GdG::apply(Graph& graph, Var x, Var z, std::span<const Var> theta) const {
  return apply_cached(graph, x, z, theta, invariants(graph, z, theta));
}

Tensor fpi_gd_step(const EnergyNet& f, const Tensor& x, const Tensor& z, const Parameters& theta,
                   double gamma) {
  return GdG(f, gamma).evaluate(x, z, theta);
}

Parameters init_small(std::span<const ParamSpec> specs, double scale, std::mt19937_64& rng) {
  if (!(scale > 0.0)) throw std::invalid_argument("init scale must be positive");
  Parameters out;
  for (const auto& s : specs) {
    std::vector<double> data(shape_size(s.shape), 0.0);
    if (s.kind != ParamKind::Bias) {
      const double bound = scale / std::sqrt(static_cast<double>(s.fan_in));
      for (double& v : data) {
        // 53 random bits mapped to [0, 1), then to [-bound, bound).
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        v = (2.0 * u - 1.0) * bound;
      }
    }
    out.add(s.name, Tensor(s.shape, std::move(data)));
  }
  return out;
}

namespace {

// Power iteration for sqrt(lambda_max(A^T A)) given the maps v -> A v and
// u -> A^T u.
template <typename Forward, typename Adjoint>
double power_norm(const Shape& domain, Forward forward, Adjoint adjoint, int iterations,
                  double tol) {
  std::mt19937_64 rng(0x5eed);
  std::vector<double> init(shape_size(domain));
  for (double& v : init) v = static_cast<double>(rng() >> 11) * 0x1.0p-53 + 0.5;
  Tensor v(domain, std::move(init));
  v = kernels::scale(v, 1.0 / std::sqrt(kernels::sq_norm(v).item()));
  double sigma = 0.0;
  for (int it = 0; it < iterations; ++it) {
    Tensor u = forward(v);
    const double next = std::sqrt(kernels::sq_norm(u).item());
    Tensor w = adjoint(u);
    const double nw = std::sqrt(kernels::sq_norm(w).item());
    const bool settled = std::abs(next - sigma) <= tol * std::max(next, 1e-300);
    sigma = next;
    if (nw == 0.0 || settled) break;
    v = kernels::scale(w, 1.0 / nw);
  }
  return sigma;
}

}  // namespace

double matrix_spectral_norm(const Tensor& w, int iterations, double tol) {
  if (w.rank() != 2) throw DimensionError("matrix_spectral_norm needs a matrix");
  const std::size_t n = w.dim(1);
  Tensor wt = kernels::transpose(w);
  return power_norm(
      {n, 1}, [&](const Tensor& v) { return kernels::matmul(w, v); },
      [&](const Tensor& u) { return kernels::matmul(wt, u); }, iterations, tol);
}

double conv_spectral_norm(const Tensor& kernel, std::size_t height, std::size_t width,
                          std::size_t padding, int iterations, double tol) {
  if (kernel.rank() != 4) throw DimensionError("conv_spectral_norm needs a 4-d kernel");
  const Shape in{kernel.dim(1), height, width};
  const kernels::Conv2dGeometry geom{1, padding};
  return power_norm(
      in, [&](const Tensor& v) { return kernels::conv2d(v, kernel, geom); },
      [&](const Tensor& u) { return kernels::conv2d_input_grad(u, kernel, in, geom); }, iterations,
      tol);
}

Parameters lipschitz_project(const Parameters& theta, std::span<const ParamSpec> specs, double k,
                             const LipschitzOptions& options) {
  if (!(k > 0.0 && k < 1.0)) throw std::invalid_argument("lipschitz_project needs 0 < k < 1");
  Parameters out = theta;
  for (const auto& s : specs) {
    if (s.kind == ParamKind::Bias) continue;
    const Tensor& w = theta.at(s.name);
    const double sigma =
        s.kind == ParamKind::Matrix
            ? matrix_spectral_norm(w, options.iterations, options.tol)
            : conv_spectral_norm(w, options.conv_height, options.conv_width, w.dim(2) / 2,
                                 options.iterations, options.tol);
    if (sigma > k) out.set(s.name, kernels::scale(w, k / sigma));
  }
  return out;
}

void save_parameters(const std::filesystem::path& path, const Parameters& theta,
                     const std::map<std::string, std::string>& metadata) {
  nlohmann::json header;
  header["dtype"] = "float64";
  header["byte_order"] = "little";
  header["metadata"] = metadata;
  header["entries"] = nlohmann::json::array();
  for (const auto& e : theta.entries()) {
    header["entries"].push_back({{"name", e.name}, {"shape", e.value.shape()}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write parameters to " + path.string());
  out << "FPXPARAM 1\n" << header.dump() << '\n';
  for (const auto& e : theta.entries()) {
    for (double v : e.value.data()) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Parameters load_parameters(const std::filesystem::path& path,
                           std::map<std::string, std::string>* metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read parameters from " + path.string());
  std::string magic, json_line;
  std::getline(in, magic);
  if (magic != "FPXPARAM 1") throw std::runtime_error(path.string() + ": not a parameter file");
  std::getline(in, json_line);
  const auto header = nlohmann::json::parse(json_line);
  if (metadata) *metadata = header.value("metadata", std::map<std::string, std::string>{});
  Parameters theta;
  for (const auto& e : header.at("entries")) {
    const Shape shape = e.at("shape").get<Shape>();
    std::vector<double> data(shape_size(shape));
    for (double& v : data) {
      std::uint64_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), sizeof bits);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      v = std::bit_cast<double>(bits);
    }
    if (!in) throw std::runtime_error(path.string() + ": truncated parameter data");
    theta.add(e.at("name").get<std::string>(), Tensor(shape, std::move(data)));
  }
  return theta;
}

}  // namespace fpx
