#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fpx/fpi.hpp"
#include "fpx/layers.hpp"
#include "fpx/log.hpp"
#include "fpx/ops.hpp"
#include "models.hpp"
#include "oracles.hpp"

namespace fpx {
namespace {

using testing::random_tensor;
using testing::rel_error;
using testing::TestModel;
using testing::tight;

double norm(const Tensor& t) { return std::sqrt(kernels::sq_norm(t).item()); }

Parameters scalar_affine(double a, double b = 0.0) {
  Parameters p;
  p.add("A", Tensor::matrix({{a}}));
  p.add("b", Tensor::vector({b}));
  return p;
}

TEST(ConvergenceCheck, Examples) {
  FpiConfig cfg;
  cfg.tol = 1e-6;
  auto [same, r0] = convergence_check(Tensor::vector({1, 0}), Tensor::vector({1, 0}), cfg);
  EXPECT_TRUE(same);
  EXPECT_EQ(r0, 0.0);

  auto [c1, r1] = convergence_check(Tensor::vector({2}), Tensor::vector({2.1}), cfg);
  EXPECT_FALSE(c1);
  EXPECT_NEAR(r1, 0.0025, 1e-15);

  cfg.tol = 1e-12;
  auto [c2, r2] = convergence_check(Tensor::vector({0, 0}), Tensor::vector({1e-9, 0}), cfg);
  EXPECT_TRUE(c2);
  EXPECT_NEAR(r2, 1e-18, 1e-30);

  cfg.criterion = Criterion::AbsoluteBeta;
  EXPECT_NEAR(convergence_check(Tensor::vector({2}), Tensor::vector({2.1}), cfg).second, 0.01, 1e-15);
  EXPECT_THROW(convergence_check(Tensor::vector({2}), Tensor::vector({2, 1}), cfg), DimensionError);
}

TEST(ConvergenceCheck, ZeroResidualAlwaysConverges) {
  FpiConfig cfg;
  for (double tol : {1e-300, 1e-30, 1.0}) {
    cfg.tol = tol;
    EXPECT_TRUE(convergence_check(Tensor::vector({3}), Tensor::vector({3}), cfg).first);
  }
}

TEST(FpiConfig, Validation) {
  FpiConfig cfg;
  cfg.tol = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.max_iter = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.gamma = -1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(ForwardFpi, HalfPlusOne) {
  LinearG g(1);
  const Tensor z = Tensor::matrix({{1.0}});
  FpiConfig cfg;
  cfg.tol = 1e-12;
  auto r = forward_fpi(g, Tensor::zeros({1, 1}), z, scalar_affine(0.5), cfg);
  ASSERT_TRUE(r.converged);
  // |dx|^2 / |x|^2 < tol leaves an error of at most sqrt(tol) * |x| for k = 0.5.
  EXPECT_NEAR(r.x_hat.item(), 2.0, 2.0 * std::sqrt(cfg.tol) * 1.01);
  EXPECT_LT(r.residual, cfg.tol);

  cfg.tol = 1e-24;
  r = forward_fpi(g, Tensor::zeros({1, 1}), z, scalar_affine(0.5), cfg);
  EXPECT_NEAR(r.x_hat.item(), 2.0, 1e-10);
  EXPECT_GE(r.iterations, 35);
  EXPECT_LE(r.iterations, 45);
}

TEST(ForwardFpi, LinearMatchesDenseSolve) {
  std::mt19937_64 rng(21);
  const std::size_t d = 6;
  auto m = testing::linear_model(d, 0.8, rng);
  const auto r = forward_fpi(*m.g, Tensor::zeros({1, d}), m.z, m.theta, tight(1e-24));
  ASSERT_TRUE(r.converged);
  const Eigen::MatrixXd a = testing::to_eigen(m.theta.at("A"));
  Eigen::VectorXd rhs(d);
  for (std::size_t i = 0; i < d; ++i) rhs(static_cast<Eigen::Index>(i)) = m.z[i] + m.theta.at("b")[i];
  const Eigen::VectorXd x = (Eigen::MatrixXd::Identity(d, d) - a).fullPivLu().solve(rhs);
  for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(r.x_hat[i], x(static_cast<Eigen::Index>(i)), 1e-8);
}

TEST(ForwardFpi, UniqueFixedPointFromDifferentStarts) {
  std::mt19937_64 rng(22);
  auto m = testing::linear_model(6, 0.8, rng);
  FpiConfig cfg;
  cfg.tol = 1e-12;
  const auto a = forward_fpi(*m.g, random_tensor({1, 6}, rng, -10, 10), m.z, m.theta, cfg);
  const auto b = forward_fpi(*m.g, random_tensor({1, 6}, rng, -10, 10), m.z, m.theta, cfg);
  ASSERT_TRUE(a.converged && b.converged);
  EXPECT_LE(convergence_check(a.x_hat, b.x_hat, cfg).second, 10 * cfg.tol);
}

TEST(ForwardFpi, DivergenceCarriesIteration) {
  LinearG g(2);
  Parameters theta;
  theta.add("A", Tensor::matrix({{1e200, 0}, {0, 1e200}}));
  theta.add("b", Tensor::vector({0, 0}));
  try {
    forward_fpi(g, Tensor::matrix({{1, 1}}), Tensor::zeros({1, 2}), theta, {});
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.iteration(), 2) << e.what();
  }
}

TEST(ForwardFpi, MaxIterLeavesUnconverged) {
  LinearG g(1);
  FpiConfig cfg;
  cfg.tol = 1e-12;
  cfg.max_iter = 5;
  const auto r = forward_fpi(g, Tensor::zeros({1, 1}), Tensor::matrix({{1.0}}), scalar_affine(0.99), cfg);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 5);
  EXPECT_GE(r.residual, cfg.tol);
}

TEST(ForwardFpi, TrajectoryOnlyWhenRequested) {
  LinearG g(1);
  FpiConfig cfg;
  const auto plain = forward_fpi(g, Tensor::zeros({1, 1}), Tensor::matrix({{1.0}}), scalar_affine(0.5), cfg);
  EXPECT_TRUE(plain.trajectory.empty());
  cfg.record_trajectory = true;
  const auto r = forward_fpi(g, Tensor::zeros({1, 1}), Tensor::matrix({{1.0}}), scalar_affine(0.5), cfg);
  ASSERT_EQ(r.trajectory.size(), static_cast<std::size_t>(r.iterations) + 1);
  EXPECT_EQ(r.trajectory.front().item(), 0.0);
  EXPECT_EQ(r.trajectory[1].item(), 1.0);
  EXPECT_EQ(r.trajectory.back(), r.x_hat);
}

TEST(ForwardFpi, ResidualBoundOnConvergedResults) {
  for (const auto& m : testing::contractive_suite(23, 12)) {
    FpiConfig cfg;
    cfg.tol = 1e-10;
    const auto r = forward_fpi(*m.g, Tensor::zeros({1, m.state_dim}), m.z, m.theta, cfg);
    ASSERT_TRUE(r.converged) << m.label;
    const double res = norm(kernels::sub(m.g->evaluate(r.x_hat, m.z, m.theta), r.x_hat));
    EXPECT_LE(res, std::sqrt(cfg.tol) * std::max(1.0, norm(r.x_hat))) << m.label;
  }
}

TEST(BackwardFpi, ScalarExample) {
  LinearG g(1);
  const Tensor z = Tensor::matrix({{1.0}});
  const Parameters theta = scalar_affine(0.5);
  const auto fwd = forward_fpi(g, Tensor::zeros({1, 1}), z, theta, tight(1e-30));
  const auto r = backward_fpi(g, fwd.x_hat, z, theta, Tensor::matrix({{1.0}}), tight(1e-30));
  ASSERT_TRUE(r.converged);
  EXPECT_NEAR(r.grads.theta.at("A").item(), 4.0, 1e-12);
  EXPECT_NEAR(r.grads.theta.at("b").item(), 2.0, 1e-12);
  EXPECT_NEAR(r.grads.z.item(), 2.0, 1e-12);
}

TEST(BackwardFpi, ZeroUpstreamGradient) {
  LinearG g(2);
  std::mt19937_64 rng(24);
  auto m = testing::linear_model(2, 0.7, rng);
  const auto r = backward_fpi(*m.g, m.z, m.z, m.theta, Tensor::zeros({1, 2}), {});
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations, 1);
  EXPECT_EQ(r.grads.z, Tensor::zeros({1, 2}));
  EXPECT_EQ(r.grads.theta.at("A"), Tensor::zeros({2, 2}));
}

TEST(BackwardFpi, RejectsMismatchedGradient) {
  LinearG g(1);
  EXPECT_THROW(backward_fpi(g, Tensor::zeros({1, 1}), Tensor::zeros({1, 1}), scalar_affine(0.5),
                            Tensor::zeros({1, 2}), {}),
               DimensionError);
}

TEST(BackwardFpi, LinearMatchesClosedForm) {
  std::mt19937_64 rng(25);
  auto m = testing::linear_model(6, 0.8, rng);
  const auto fwd = forward_fpi(*m.g, Tensor::zeros({1, 6}), m.z, m.theta, tight(1e-28));
  const Tensor grad_out = random_tensor({1, 6}, rng);
  const auto bwd = backward_fpi(*m.g, fwd.x_hat, m.z, m.theta, grad_out, tight(1e-28));
  const auto ref = closed_form_gradient(*m.g, fwd.x_hat, m.z, m.theta, grad_out);
  EXPECT_LT(rel_error(bwd.grads.theta.at("A"), ref.theta.at("A")), 1e-8);
  EXPECT_LT(rel_error(bwd.grads.theta.at("b"), ref.theta.at("b")), 1e-8);
  EXPECT_LT(rel_error(bwd.grads.z, ref.z), 1e-8);
}

TEST(BackwardFpi, ProjectedMlpMatchesUnrolled) {
  std::mt19937_64 rng(26);
  const std::size_t d = 10;
  MlpG g(d, 5, 32, OutputActivation::None);
  const Parameters theta =
      lipschitz_project(init_small(g.param_specs(), 1.0, rng), g.param_specs(), 0.9, {200, 1e-12});
  const Tensor z = random_tensor({1, 5}, rng);
  FpiConfig cfg = tight(1e-12);
  const auto fwd = forward_fpi(g, Tensor::zeros({1, d}), z, theta, cfg);
  ASSERT_TRUE(fwd.converged);
  const auto loss = testing::random_loss({1, d}, rng);
  const auto bwd = backward_fpi(g, fwd.x_hat, z, theta, loss.gradient(fwd.x_hat), cfg);
  const auto ref = unrolled_gradient(g, Tensor::zeros({1, d}), z, theta, 500, loss.function());
  for (std::size_t i = 0; i < theta.size(); ++i)
    EXPECT_LT(rel_error(bwd.grads.theta[i], ref.theta[i]), 1e-5) << theta.name(i);
  EXPECT_LT(rel_error(bwd.grads.z, ref.z), 1e-5);
}

TEST(BackwardFpi, IterationsWithinContractionBound) {
  for (const auto& m : testing::contractive_suite(27, 12)) {
    const Tensor x0 = Tensor::zeros({1, m.state_dim});
    const auto fwd = forward_fpi(*m.g, x0, m.z, m.theta, tight(1e-20));
    ASSERT_TRUE(fwd.converged);
    const double k = spectral_norm_jacobian(*m.g, fwd.x_hat, m.z, m.theta, 200);
    ASSERT_LT(k, 1.0) << m.label;
    for (double tol : {1e-6, 1e-10, 1e-14}) {
      FpiConfig cfg;
      cfg.tol = tol;
      const auto r = backward_fpi(*m.g, fwd.x_hat, m.z, m.theta, Tensor::full(x0.shape(), 1.0), cfg);
      EXPECT_TRUE(r.converged) << m.label;
      if (k > 1e-3) EXPECT_LE(r.iterations, backward_iteration_bound(k, tol)) << m.label << " k=" << k;
    }
  }
}

TEST(BackwardFpi, TighterToleranceNeedsMoreIterations) {
  LinearG g(1);
  const Parameters theta = scalar_affine(0.5);
  const Tensor x_hat = Tensor::matrix({{2.0}});
  FpiConfig loose, strict;
  loose.tol = 1e-6;
  strict.tol = 1e-14;
  const auto a = backward_fpi(g, x_hat, Tensor::matrix({{1.0}}), theta, Tensor::matrix({{1.0}}), loose);
  const auto b = backward_fpi(g, x_hat, Tensor::matrix({{1.0}}), theta, Tensor::matrix({{1.0}}), strict);
  EXPECT_TRUE(a.converged && b.converged);
  EXPECT_GT(b.iterations, a.iterations);
}

TEST(ClosedForm, ScalarExample) {
  LinearG g(1);
  const auto r = closed_form_gradient(g, Tensor::matrix({{2.0}}), Tensor::matrix({{1.0}}), scalar_affine(0.5),
                                      Tensor::matrix({{1.0}}));
  EXPECT_NEAR(r.theta.at("A").item(), 4.0, 1e-12);
  EXPECT_NEAR(r.z.item(), 2.0, 1e-12);
}

TEST(ClosedForm, ConstantMapReducesToDirectGradient) {
  // A = 0: g = z + b, so dL/db = grad_out and dL/dA = grad_out x_hat^T.
  LinearG g(3);
  Parameters theta;
  theta.add("A", Tensor::zeros({3, 3}));
  theta.add("b", Tensor::vector({0.1, 0.2, 0.3}));
  const Tensor z = Tensor::matrix({{1, 2, 3}});
  const Tensor x_hat = Tensor::matrix({{1.1, 2.2, 3.3}});
  const Tensor grad_out = Tensor::matrix({{1, -1, 2}});
  const auto r = closed_form_gradient(g, x_hat, z, theta, grad_out);
  EXPECT_LT(rel_error(r.theta.at("b"), Tensor::vector({1, -1, 2})), 1e-15);
  EXPECT_LT(rel_error(r.theta.at("A"), testing::naive_matmul(kernels::transpose(grad_out), x_hat)), 1e-15);
  EXPECT_LT(rel_error(r.z, grad_out), 1e-15);
}

TEST(ClosedForm, Errors) {
  LinearG big(33);
  EXPECT_THROW(closed_form_gradient(big, Tensor::zeros({1, 33}), Tensor::zeros({1, 33}),
                                    zero_parameters(big.param_specs()), Tensor::zeros({1, 33})),
               std::invalid_argument);
  LinearG g(2);
  Parameters theta;
  theta.add("A", Tensor::matrix({{1, 0}, {0, 0.5}}));
  theta.add("b", Tensor::vector({0, 0}));
  EXPECT_THROW(closed_form_gradient(g, Tensor::zeros({1, 2}), Tensor::zeros({1, 2}), theta,
                                    Tensor::matrix({{1, 1}})),
               ConditioningError);
}

TEST(Unrolled, SingleStepIsPlainBackward) {
  std::mt19937_64 rng(28);
  MlpG g(3, 2, 5);
  const Parameters theta = init_small(g.param_specs(), 1.0, rng);
  const Tensor x0 = random_tensor({1, 3}, rng), z = random_tensor({1, 2}, rng);
  const auto loss = testing::random_loss({1, 3}, rng);
  const auto r = unrolled_gradient(g, x0, z, theta, 1, loss.function());
  const Tensor y = g.evaluate(x0, z, theta);
  std::vector<Tensor> in{x0, z};
  for (const auto& e : theta.entries()) in.push_back(e.value);
  const auto direct = vjp(g.as_function(), in, loss.gradient(y));
  for (std::size_t i = 0; i < theta.size(); ++i) EXPECT_LT(rel_error(r.theta[i], direct[i + 2]), 1e-13);
  EXPECT_LT(rel_error(r.z, direct[1]), 1e-13);
}

TEST(Unrolled, ApproachesClosedForm) {
  std::mt19937_64 rng(29);
  auto m = testing::linear_model(6, 0.8, rng);
  const auto loss = testing::random_loss({1, 6}, rng);
  const auto fwd = forward_fpi(*m.g, Tensor::zeros({1, 6}), m.z, m.theta, tight(1e-30));
  const auto ref = closed_form_gradient(*m.g, fwd.x_hat, m.z, m.theta, loss.gradient(fwd.x_hat));
  const auto r = unrolled_gradient(*m.g, Tensor::zeros({1, 6}), m.z, m.theta, 200, loss.function());
  EXPECT_LT(rel_error(r.theta.at("A"), ref.theta.at("A")), 1e-8);
  EXPECT_LT(rel_error(r.z, ref.z), 1e-8);
}

TEST(Unrolled, ErrorDecaysGeometrically) {
  std::mt19937_64 rng(30);
  auto m = testing::linear_model(6, 0.5, rng);
  const auto loss = testing::random_loss({1, 6}, rng);
  const auto fwd = forward_fpi(*m.g, Tensor::zeros({1, 6}), m.z, m.theta, tight(1e-30));
  const auto ref = closed_form_gradient(*m.g, fwd.x_hat, m.z, m.theta, loss.gradient(fwd.x_hat));
  // Least-squares slope of log(error) against step count.
  double sn = 0, sl = 0, snn = 0, snl = 0;
  int count = 0;
  for (int n = 4; n <= 24; n += 4) {
    const auto r = unrolled_gradient(*m.g, Tensor::zeros({1, 6}), m.z, m.theta, n, loss.function());
    const double e = std::log(rel_error(r.theta.at("A"), ref.theta.at("A")));
    sn += n;
    sl += e;
    snn += n * n;
    snl += n * e;
    ++count;
  }
  const double slope = (count * snl - sn * sl) / (count * snn - sn * sn);
  EXPECT_LT(slope, std::log(0.5) + 0.05);
}

TEST(SpectralNormJacobian, Diagonal) {
  LinearG g(2);
  Parameters theta;
  theta.add("A", Tensor::matrix({{0.5, 0}, {0, 0.3}}));
  theta.add("b", Tensor::vector({0, 0}));
  EXPECT_NEAR(spectral_norm_jacobian(g, Tensor::matrix({{1, 2}}), Tensor::zeros({1, 2}), theta, 100), 0.5, 1e-6);
}

TEST(SpectralNormJacobian, MatchesSvd) {
  std::mt19937_64 rng(31);
  LinearG g(8);
  Parameters theta;
  theta.add("A", random_tensor({8, 8}, rng));
  theta.add("b", random_tensor({8}, rng));
  const double est = spectral_norm_jacobian(g, random_tensor({1, 8}, rng), random_tensor({1, 8}, rng), theta, 1000);
  EXPECT_NEAR(est, testing::svd_norm(theta.at("A")), 1e-6);
}

TEST(SpectralNormJacobian, NondecreasingInIterations) {
  std::mt19937_64 rng(32);
  auto m = testing::mlp_model(6, 3, 12, OutputActivation::None, rng);
  const Tensor x = random_tensor({1, 6}, rng);
  double prev = 0.0;
  for (int it : {1, 2, 5, 10, 40}) {
    const double k = spectral_norm_jacobian(*m.g, x, m.z, m.theta, it);
    EXPECT_GE(k, prev - 1e-9);
    prev = k;
  }
}

TEST(SpectralNormJacobian, ConstantMapIsZero) {
  LinearG g(3);
  const Parameters theta = zero_parameters(g.param_specs());
  EXPECT_EQ(spectral_norm_jacobian(g, Tensor::zeros({1, 3}), Tensor::zeros({1, 3}), theta, 10), 0.0);
}

TEST(BackwardIterationBound, Formula) {
  EXPECT_NEAR(backward_iteration_bound(0.5, 1e-6), 3 * std::log(1e6) / std::log(2.0), 1e-12);
  EXPECT_THROW(backward_iteration_bound(1.2, 1e-6), std::invalid_argument);
}

TEST(FpiGd, StationaryAtConvergedSolves) {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 8; ++trial) {
    auto m = testing::gd_model(2 + static_cast<std::size_t>(trial) % 5, 3, rng);
    const auto& gd = static_cast<const GdG&>(*m.g);
    FpiConfig cfg;
    cfg.tol = 1e-10;
    cfg.criterion = Criterion::AbsoluteBeta;
    const auto r = forward_fpi(gd, random_tensor({1, m.state_dim}, rng), m.z, m.theta, cfg);
    ASSERT_TRUE(r.converged);
    std::vector<Tensor> in{r.x_hat, m.z};
    for (const auto& e : m.theta.entries()) in.push_back(e.value);
    const Tensor df = vjp(gd.energy().as_function(), in, Tensor::scalar(1.0))[0];
    EXPECT_LE(norm(df), std::sqrt(cfg.tol) / gd.gamma());
  }
}

TEST(ThreeWay, SmallSuiteAgrees) {
  std::mt19937_64 rng(34);
  for (const auto& m : testing::contractive_suite(35, 8)) {
    const Tensor x0 = Tensor::zeros({1, m.state_dim});
    const auto fwd = forward_fpi(*m.g, x0, m.z, m.theta, tight());
    ASSERT_TRUE(fwd.converged) << m.label;
    const auto loss = testing::random_loss(x0.shape(), rng);
    const Tensor grad_out = loss.gradient(fwd.x_hat);
    const auto bwd = backward_fpi(*m.g, fwd.x_hat, m.z, m.theta, grad_out, tight());
    const auto closed = closed_form_gradient(*m.g, fwd.x_hat, m.z, m.theta, grad_out);
    const auto unrolled = unrolled_gradient(*m.g, x0, m.z, m.theta, 500, loss.function());
    EXPECT_LT(rel_error(bwd.grads.z, closed.z), 1e-6) << m.label;
    EXPECT_LT(rel_error(bwd.grads.z, unrolled.z), 1e-5) << m.label;
    for (std::size_t i = 0; i < m.theta.size(); ++i) {
      EXPECT_LT(rel_error(bwd.grads.theta[i], closed.theta[i], 1e-9), 1e-6) << m.label << " " << m.theta.name(i);
      EXPECT_LT(rel_error(bwd.grads.theta[i], unrolled.theta[i], 1e-9), 1e-5) << m.label << " " << m.theta.name(i);
    }
    // Finite differences of the whole solve, on z.
    const Tensor fd = testing::fd_gradient(
        [&](const Tensor& zp) { return loss.value(forward_fpi(*m.g, x0, zp, m.theta, tight()).x_hat); }, m.z);
    EXPECT_LT(rel_error(bwd.grads.z, fd), 1e-4) << m.label;
  }
}

Tensor run_layer_and_backprop(const TestModel& m, const FpiLayerConfig& cfg, std::size_t* peak_extra,
                              std::shared_ptr<FpiStats> stats = nullptr) {
  Graph graph;
  Var z = graph.leaf(m.z);
  std::vector<Var> theta;
  for (const auto& e : m.theta.entries()) theta.push_back(graph.leaf(e.value));
  const std::size_t before = GraphStats::live_nodes();
  GraphStats::reset_peak();
  Var x = fpi_layer(graph, m.g, z, theta, Tensor::zeros({1, m.state_dim}), cfg, stats);
  Var loss = ops::sum(ops::square(x));
  std::vector<Var> wrt{z};
  wrt.insert(wrt.end(), theta.begin(), theta.end());
  const auto g = gradients(loss, Tensor::scalar(1.0), wrt);
  if (peak_extra) *peak_extra = GraphStats::peak_nodes() - before;
  return g[1];
}

TEST(FpiLayer, NodeGradientsMatchBackwardFpi) {
  std::mt19937_64 rng(36);
  auto m = testing::mlp_model(5, 3, 8, OutputActivation::None, rng);
  FpiLayerConfig cfg;
  cfg.forward = tight(1e-24);
  cfg.backward = tight(1e-24);
  auto stats = std::make_shared<FpiStats>();
  const Tensor g = run_layer_and_backprop(m, cfg, nullptr, stats);
  const auto fwd = forward_fpi(*m.g, Tensor::zeros({1, 5}), m.z, m.theta, cfg.forward);
  const auto ref = backward_fpi(*m.g, fwd.x_hat, m.z, m.theta, kernels::scale(fwd.x_hat, 2.0), cfg.backward);
  EXPECT_LT(rel_error(g, ref.grads.theta[0]), 1e-12);
  EXPECT_EQ(stats->forward_solves, 1u);
  EXPECT_EQ(stats->backward_solves, 1u);
  EXPECT_EQ(stats->forward_unconverged, 0u);
  EXPECT_GT(stats->forward_iterations, 0u);
}

TEST(FpiLayer, NoSecondOrder) {
  std::mt19937_64 rng(37);
  auto m = testing::linear_model(3, 0.5, rng);
  Graph graph;
  Var z = graph.leaf(m.z);
  std::vector<Var> theta{graph.leaf(m.theta[0]), graph.leaf(m.theta[1])};
  Var x = fpi_layer(graph, m.g, z, theta, Tensor::zeros({1, 3}), {});
  Var loss = ops::sum(x);
  Var seed = graph.leaf(Tensor::scalar(1.0));
  const Var wrt[] = {z};
  EXPECT_THROW(grad(loss, seed, wrt, true), NonDifferentiableError);
}

TEST(FpiLayer, UnconvergedPolicies) {
  TestModel m;
  m.g = std::make_shared<LinearG>(1);
  m.theta = scalar_affine(0.99);
  m.z = Tensor::matrix({{1.0}});
  m.state_dim = 1;
  FpiLayerConfig cfg;
  cfg.forward.tol = 1e-20;
  cfg.forward.max_iter = 3;
  cfg.policy = UnconvergedPolicy::Abort;
  EXPECT_THROW(run_layer_and_backprop(m, cfg, nullptr), ConvergenceError);

  cfg.policy = UnconvergedPolicy::Warn;
  auto stats = std::make_shared<FpiStats>();
  const auto level = logger().level();
  logger().set_level(spdlog::level::off);
  run_layer_and_backprop(m, cfg, nullptr, stats);
  logger().set_level(level);
  EXPECT_EQ(stats->forward_unconverged, 1u);
  EXPECT_TRUE(stats->flagged());
}

TEST(FpiLayer, PeakNodesIndependentOfForwardIterations) {
  std::mt19937_64 rng(38);
  auto m = testing::mlp_model(6, 3, 10, OutputActivation::None, rng);
  std::vector<std::size_t> peaks;
  std::vector<std::size_t> iterations;
  for (double tol : {1e-4, 1e-8, 1e-12}) {
    FpiLayerConfig cfg;
    cfg.forward.tol = tol;
    auto stats = std::make_shared<FpiStats>();
    std::size_t peak = 0;
    run_layer_and_backprop(m, cfg, &peak, stats);
    peaks.push_back(peak);
    iterations.push_back(stats->forward_iterations);
  }
  EXPECT_LT(iterations[0], iterations[2]);
  EXPECT_EQ(peaks[0], peaks[1]);
  EXPECT_EQ(peaks[1], peaks[2]);
}

}  // namespace
}  // namespace fpx
