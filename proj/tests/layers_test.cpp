#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "fpx/fpi.hpp"
#include "fpx/layers.hpp"
#include "models.hpp"
#include "oracles.hpp"

namespace fpx {
namespace {

using testing::from_eigen;
using testing::naive_conv2d;
using testing::naive_matmul;
using testing::random_tensor;
using testing::rel_error;
using testing::svd_norm;
using testing::to_eigen;

Parameters random_params(const std::vector<ParamSpec>& specs, std::mt19937_64& rng) {
  Parameters p;
  for (const auto& s : specs) p.add(s.name, random_tensor(s.shape, rng, -0.5, 0.5));
  return p;
}

TEST(MlpG, ZeroWeightsGiveHalf) {
  MlpG g(4, 3, 8);
  const Tensor out = g.evaluate(Tensor::full({2, 4}, 0.7), Tensor::full({2, 3}, -2.0),
                                zero_parameters(g.param_specs()));
  EXPECT_EQ(out, Tensor::full({2, 4}, 0.5));
}

TEST(MlpG, MultilabelShapes) {
  MlpG g(159, 1836, 512);
  const auto specs = g.param_specs();
  EXPECT_EQ(specs[0].shape, (Shape{512, 159 + 1836}));
  EXPECT_EQ(specs[2].shape, (Shape{159, 512}));
  std::mt19937_64 rng(1);
  const Parameters theta = init_small(specs, 0.1, rng);
  EXPECT_EQ(g.evaluate(Tensor::zeros({1, 159}), Tensor::zeros({1, 1836}), theta).shape(),
            (Shape{1, 159}));
  EXPECT_EQ(g.state_shape({7, 1836}), (Shape{7, 159}));
}

TEST(MlpG, MatchesHandComposition) {
  std::mt19937_64 rng(2);
  const std::size_t B = 3, d = 4, dz = 5, h = 6;
  for (auto act : {OutputActivation::Sigmoid, OutputActivation::None}) {
    MlpG g(d, dz, h, act);
    const Parameters theta = random_params(g.param_specs(), rng);
    const Tensor x = random_tensor({B, d}, rng), z = random_tensor({B, dz}, rng);
    std::vector<double> expect(B * d);
    for (std::size_t r = 0; r < B; ++r) {
      std::vector<double> u(d + dz), hid(h);
      for (std::size_t i = 0; i < d; ++i) u[i] = x.at(r, i);
      for (std::size_t i = 0; i < dz; ++i) u[d + i] = z.at(r, i);
      for (std::size_t j = 0; j < h; ++j) {
        double s = theta[1][j];
        for (std::size_t i = 0; i < d + dz; ++i) s += theta[0].at(j, i) * u[i];
        hid[j] = std::max(0.0, s);
      }
      for (std::size_t o = 0; o < d; ++o) {
        double s = theta[3][o];
        for (std::size_t j = 0; j < h; ++j) s += theta[2].at(o, j) * hid[j];
        expect[r * d + o] = act == OutputActivation::Sigmoid ? 1.0 / (1.0 + std::exp(-s)) : s;
      }
    }
    EXPECT_LT(rel_error(g.evaluate(x, z, theta), Tensor({B, d}, expect)), 1e-13);
  }
}

TEST(MlpG, RejectsBadShapes) {
  MlpG g(4, 3, 8);
  const Parameters theta = zero_parameters(g.param_specs());
  EXPECT_THROW(g.evaluate(Tensor::zeros({1, 5}), Tensor::zeros({1, 3}), theta), DimensionError);
  EXPECT_THROW(g.evaluate(Tensor::zeros({1, 4}), Tensor::zeros({1, 2}), theta), DimensionError);
  const Parameters wrong = zero_parameters(MlpG(4, 3, 9).param_specs());
  EXPECT_THROW(g.check_parameters(wrong), DimensionError);
}

TEST(ConvG, ZeroWeightsGiveZeroImage) {
  ConvG g;
  std::mt19937_64 rng(3);
  const Tensor out = g.evaluate(random_tensor({1, 9, 7}, rng), random_tensor({1, 9, 7}, rng),
                                zero_parameters(g.param_specs()));
  EXPECT_EQ(out, Tensor::zeros({1, 9, 7}));
}

TEST(ConvG, PreservesShape) {
  ConvG g(4);
  std::mt19937_64 rng(4);
  const Parameters theta = random_params(g.param_specs(), rng);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{3, 3}, {5, 11}, {16, 16}}) {
    EXPECT_EQ(g.evaluate(Tensor::zeros({1, h, w}), Tensor::zeros({1, h, w}), theta).shape(),
              (Shape{1, h, w}));
  }
}

TEST(ConvG, MatchesDirectConvolution) {
  ConvG g;
  std::mt19937_64 rng(5);
  const Parameters theta = random_params(g.param_specs(), rng);
  const Tensor x = random_tensor({1, 16, 16}, rng), z = random_tensor({1, 16, 16}, rng);
  std::vector<double> u = x.to_vector();
  const auto zd = z.to_vector();
  u.insert(u.end(), zd.begin(), zd.end());
  Tensor h = naive_conv2d(Tensor({2, 16, 16}, u), theta[0], 1, 1);
  std::vector<double> hv = h.to_vector();
  for (std::size_t c = 0; c < 32; ++c)
    for (std::size_t i = 0; i < 256; ++i) hv[c * 256 + i] = std::max(0.0, hv[c * 256 + i] + theta[1][c]);
  std::vector<double> out = naive_conv2d(Tensor(h.shape(), hv), theta[2], 1, 1).to_vector();
  for (double& v : out) v += theta[3][0];
  EXPECT_LT(rel_error(g.evaluate(x, z, theta), Tensor({1, 16, 16}, out)), 1e-13);
}

TEST(EnergyNet, IdentityBlockGivesMeanSquare) {
  const std::size_t d = 4;
  EnergyNet f(d, 2, d);
  std::vector<double> w(d * (d + 2), 0.0);
  for (std::size_t i = 0; i < d; ++i) w[i * (d + 2) + i] = 1.0;
  Parameters theta;
  theta.add("fc1.weight", Tensor({d, d + 2}, w));
  theta.add("fc1.bias", Tensor::zeros({d}));
  const Tensor x = Tensor::matrix({{0.5, 1.0, 2.0, 0.0}});
  EXPECT_NEAR(f.evaluate(x, Tensor::matrix({{3.0, -1.0}}), theta).item(), (0.25 + 1 + 4) / 4.0, 1e-15);
}

TEST(EnergyNet, NonNegative) {
  std::mt19937_64 rng(6);
  for (std::size_t out : {std::size_t{0}, std::size_t{3}}) {
    EnergyNet f(3, 2, 5, out);
    for (int trial = 0; trial < 20; ++trial) {
      const Parameters theta = random_params(f.param_specs(), rng);
      EXPECT_GE(f.evaluate(random_tensor({2, 3}, rng, -3, 3), random_tensor({2, 2}, rng, -3, 3), theta).item(), 0.0);
    }
  }
}

TEST(EnergyNet, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  EnergyNet f(5, 3, 7, 4);
  const Parameters theta = random_params(f.param_specs(), rng);
  const Tensor x = random_tensor({2, 5}, rng), z = random_tensor({2, 3}, rng);
  const Tensor inputs[] = {x, z, theta[0], theta[1], theta[2], theta[3]};
  const Tensor analytic = vjp(f.as_function(), inputs, Tensor::scalar(1.0))[0];
  const Tensor fd = testing::fd_gradient([&](const Tensor& xp) { return f.evaluate(xp, z, theta).item(); }, x);
  EXPECT_LT(rel_error(analytic, fd), 1e-6);
}

TEST(EnergyNet, BatchEnergyIsSumOfRows) {
  std::mt19937_64 rng(8);
  EnergyNet f(3, 2, 4);
  const Parameters theta = random_params(f.param_specs(), rng);
  const Tensor x = random_tensor({2, 3}, rng), z = random_tensor({2, 2}, rng);
  const double e0 = f.evaluate(kernels::slice(x, 0, 0, 1), kernels::slice(z, 0, 0, 1), theta).item();
  const double e1 = f.evaluate(kernels::slice(x, 0, 1, 1), kernels::slice(z, 0, 1, 1), theta).item();
  EXPECT_NEAR(f.evaluate(x, z, theta).item(), e0 + e1, 1e-14);
}

// 0.5 |x - z|^2 written as an EnergyNet: relu(x - z) - relu(z - x) = x - z,
// and the mean over d outputs is undone by scaling W2 with sqrt(d / 2).
Parameters half_distance_energy(std::size_t d) {
  const double s = std::sqrt(static_cast<double>(d) / 2.0);
  std::vector<double> w1(2 * d * 2 * d, 0.0), w2(d * 2 * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    w1[i * 2 * d + i] = 1.0;
    w1[i * 2 * d + d + i] = -1.0;
    w1[(d + i) * 2 * d + i] = -1.0;
    w1[(d + i) * 2 * d + d + i] = 1.0;
    w2[i * 2 * d + i] = s;
    w2[i * 2 * d + d + i] = -s;
  }
  Parameters p;
  p.add("fc1.weight", Tensor({2 * d, 2 * d}, w1));
  p.add("fc1.bias", Tensor::zeros({2 * d}));
  p.add("fc2.weight", Tensor({d, 2 * d}, w2));
  p.add("fc2.bias", Tensor::zeros({d}));
  return p;
}

TEST(FpiGdStep, HalfDistanceReturnsTargetInOneStep) {
  const std::size_t d = 3;
  EnergyNet f(d, d, 2 * d, d);
  const Parameters theta = half_distance_energy(d);
  const Tensor z = Tensor::matrix({{0.3, -1.2, 2.0}});
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor({1, d}, rng, -3, 3);
    EXPECT_LT(testing::rel_error(fpi_gd_step(f, x, z, theta, 1.0), z), 1e-14);
  }
}

TEST(FpiGdStep, DiagonalQuadraticContracts) {
  // f = 0.5 x^T diag(1, 2) x with z unused.
  const std::size_t d = 2;
  EnergyNet f(d, 1, 2 * d, d);
  const double dd[] = {1.0, 2.0};
  std::vector<double> w1(2 * d * (d + 1), 0.0), w2(d * 2 * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    w1[i * (d + 1) + i] = 1.0;
    w1[(d + i) * (d + 1) + i] = -1.0;
    const double s = std::sqrt(static_cast<double>(d) * dd[i] / 2.0);
    w2[i * 2 * d + i] = s;
    w2[i * 2 * d + d + i] = -s;
  }
  Parameters theta;
  theta.add("fc1.weight", Tensor({2 * d, d + 1}, w1));
  theta.add("fc1.bias", Tensor::zeros({2 * d}));
  theta.add("fc2.weight", Tensor({d, 2 * d}, w2));
  theta.add("fc2.bias", Tensor::zeros({d}));
  const Tensor z = Tensor::zeros({1, 1});
  Tensor x = Tensor::matrix({{1.0, 1.0}});
  const Tensor next = fpi_gd_step(f, x, z, theta, 0.4);
  EXPECT_NEAR(next.at(0, 0), 0.6, 1e-14);
  EXPECT_NEAR(next.at(0, 1), 0.2, 1e-14);

  GdG g(f, 0.4);
  FpiConfig cfg;
  cfg.tol = 1e-20;
  cfg.criterion = Criterion::AbsoluteBeta;
  const auto r = forward_fpi(g, x, z, theta, cfg);
  ASSERT_TRUE(r.converged);
  EXPECT_LT(std::sqrt(kernels::sq_norm(r.x_hat).item()), 1e-9);
  EXPECT_NEAR(spectral_norm_jacobian(g, Tensor::matrix({{0.5, -0.3}}), z, theta, 50), 0.6, 1e-6);
}

TEST(InitSmall, RespectsScaledFanInBound) {
  MlpG g(6, 5, 20);
  const auto specs = g.param_specs();
  std::mt19937_64 rng(10);
  const Parameters theta = init_small(specs, 0.1, rng);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const double bound = 0.1 / std::sqrt(static_cast<double>(specs[i].fan_in));
    double largest = 0.0;
    for (double v : theta[i].data()) largest = std::max(largest, std::abs(v));
    if (specs[i].kind == ParamKind::Bias) {
      EXPECT_EQ(largest, 0.0);
    } else {
      EXPECT_LE(largest, bound);
      EXPECT_GT(largest, 0.5 * bound);
    }
  }
}

TEST(InitSmall, ScaleOneIsBaselineAndScales) {
  ConvG g(8);
  std::mt19937_64 a(11), b(11);
  const Parameters base = init_small(g.param_specs(), 1.0, a);
  const Parameters small = init_small(g.param_specs(), 0.1, b);
  for (std::size_t i = 0; i < base.size(); ++i)
    for (std::size_t j = 0; j < base[i].size(); ++j) EXPECT_NEAR(small[i][j], 0.1 * base[i][j], 1e-17);
}

TEST(InitSmall, Deterministic) {
  MlpG g(4, 4, 8);
  std::mt19937_64 a(12), b(12);
  const Parameters p = init_small(g.param_specs(), 0.1, a);
  const Parameters q = init_small(g.param_specs(), 0.1, b);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], q[i]);
}

TEST(SpectralNorm, MatrixMatchesSvd) {
  std::mt19937_64 rng(13);
  for (auto [m, n] : {std::pair<std::size_t, std::size_t>{5, 5}, {8, 3}, {3, 9}}) {
    const Tensor w = random_tensor({m, n}, rng);
    EXPECT_NEAR(matrix_spectral_norm(w, 500, 1e-14), svd_norm(w), 1e-6);
  }
}

TEST(SpectralNorm, ConvMatchesUnfoldedOperator) {
  std::mt19937_64 rng(14);
  const Tensor k = random_tensor({3, 2, 3, 3}, rng);
  const std::size_t h = 5, w = 4, n = 2 * h * w;
  Eigen::MatrixXd op(3 * h * w, n);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> e(n, 0.0);
    e[j] = 1.0;
    const Tensor col = naive_conv2d(Tensor({2, h, w}, e), k, 1, 1);
    for (std::size_t i = 0; i < col.size(); ++i) op(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
  }
  const double expect = Eigen::JacobiSVD<Eigen::MatrixXd>(op).singularValues()(0);
  EXPECT_NEAR(conv_spectral_norm(k, h, w, 1, 1000, 1e-15), expect, 1e-6 * expect);
}

TEST(LipschitzProject, DiagonalExample) {
  Parameters theta;
  theta.add("A", Tensor::matrix({{2, 0}, {0, 1}}));
  theta.add("b", Tensor::vector({5, 5}));
  const auto out = lipschitz_project(theta, LinearG(2).param_specs(), 0.9, {200, 1e-15});
  EXPECT_NEAR(out.at("A").at(0, 0), 0.9, 1e-9);
  EXPECT_NEAR(out.at("A").at(1, 1), 0.45, 1e-9);
  EXPECT_EQ(out.at("A").at(0, 1), 0.0);
  EXPECT_EQ(out.at("b"), theta.at("b"));
}

TEST(LipschitzProject, LeavesSmallWeightsAlone) {
  Parameters theta;
  theta.add("A", Tensor::matrix({{0.5, 0.1}, {0.0, 0.3}}));
  theta.add("b", Tensor::vector({1, 1}));
  const auto out = lipschitz_project(theta, LinearG(2).param_specs(), 0.9);
  EXPECT_EQ(out.at("A"), theta.at("A"));
}

TEST(LipschitzProject, LinearLayerBecomesCertifiedContraction) {
  std::mt19937_64 rng(15);
  const std::size_t d = 7;
  LinearG g(d);
  Parameters theta;
  theta.add("A", random_tensor({d, d}, rng, -2, 2));
  theta.add("b", random_tensor({d}, rng));
  const Parameters p = lipschitz_project(theta, g.param_specs(), 0.9, {500, 1e-15});
  EXPECT_LE(svd_norm(p.at("A")), 0.9 + 1e-9);
  const Tensor z = random_tensor({1, d}, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x1 = random_tensor({1, d}, rng, -5, 5), x2 = random_tensor({1, d}, rng, -5, 5);
    const double lhs = std::sqrt(kernels::sq_norm(kernels::sub(g.evaluate(x1, z, p), g.evaluate(x2, z, p))).item());
    const double rhs = 0.9 * std::sqrt(kernels::sq_norm(kernels::sub(x1, x2)).item());
    EXPECT_LE(lhs, rhs + 1e-9);
    EXPECT_LE(spectral_norm_jacobian(g, x1, z, p, 100), 0.9 + 1e-6);
  }
}

TEST(LipschitzProject, MultilayerJacobianBelowOne) {
  std::mt19937_64 rng(16);
  for (auto act : {OutputActivation::None, OutputActivation::Sigmoid}) {
    MlpG g(6, 4, 16, act);
    const Parameters theta =
        lipschitz_project(random_params(g.param_specs(), rng), g.param_specs(), 0.9, {200, 1e-12});
    for (int trial = 0; trial < 10; ++trial) {
      const double k = spectral_norm_jacobian(g, random_tensor({1, 6}, rng, -2, 2),
                                              random_tensor({1, 4}, rng), theta, 100);
      EXPECT_LT(k, 0.81 + 1e-6);
    }
  }
}

TEST(GModule, ApplyIsPure) {
  std::mt19937_64 rng(17);
  ConvG g(6);
  const Parameters theta = random_params(g.param_specs(), rng);
  const Tensor x = random_tensor({1, 8, 8}, rng), z = random_tensor({1, 8, 8}, rng);
  EXPECT_EQ(g.evaluate(x, z, theta), g.evaluate(x, z, theta));
  GdG gd(EnergyNet(3, 2, 5), 0.3);
  const Parameters tg = random_params(gd.param_specs(), rng);
  const Tensor xg = random_tensor({2, 3}, rng), zg = random_tensor({2, 2}, rng);
  EXPECT_EQ(gd.evaluate(xg, zg, tg), gd.evaluate(xg, zg, tg));
}

TEST(Parameters, SaveLoadRoundTrip) {
  std::mt19937_64 rng(18);
  MlpG g(3, 4, 5);
  const Parameters theta = random_params(g.param_specs(), rng);
  const auto path = std::filesystem::temp_directory_path() / "fpx_params_roundtrip.bin";
  save_parameters(path, theta, {{"init_scale", "0.1"}, {"model", "mlp"}});
  std::map<std::string, std::string> meta;
  const Parameters back = load_parameters(path, &meta);
  ASSERT_EQ(back.size(), theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    EXPECT_EQ(back.name(i), theta.name(i));
    EXPECT_EQ(back[i], theta[i]);
  }
  EXPECT_EQ(meta.at("init_scale"), "0.1");
  // 8 bytes per value after the two header lines.
  const auto size = std::filesystem::file_size(path);
  EXPECT_GE(size, theta.total_size() * 8);
  std::filesystem::resize_file(path, size - 4);
  EXPECT_THROW(load_parameters(path), std::runtime_error);
  std::filesystem::remove(path);
}

TEST(Parameters, FlattenRoundTripAndNames) {
  Parameters p;
  p.add("a", Tensor::vector({1, 2}));
  p.add("b", Tensor::matrix({{3, 4}, {5, 6}}));
  EXPECT_THROW(p.add("a", Tensor::scalar(0)), std::invalid_argument);
  EXPECT_THROW(p.set("b", Tensor::vector({1})), DimensionError);
  const auto flat = p.flatten();
  EXPECT_EQ(flat, (std::vector<double>{1, 2, 3, 4, 5, 6}));
  const Parameters q = p.with_values(flat);
  EXPECT_EQ(q.at("b"), p.at("b"));
  EXPECT_DOUBLE_EQ(global_norm(p), std::sqrt(91.0));
}

}  // namespace
}  // namespace fpx
