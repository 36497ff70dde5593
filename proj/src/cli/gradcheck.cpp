#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

#include "common.hpp"
#include "fpx/layers.hpp"
#include "fpx/ops.hpp"

namespace fpx::cli {

namespace {

struct CheckModel {
  std::string label;
  std::shared_ptr<const GModule> g;
  Parameters theta;
  Tensor z;
  std::size_t dim = 0;
};

Tensor uniform(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (double& e : v) e = u(rng);
  return Tensor(shape, std::move(v));
}

Tensor rescaled(const Tensor& t, double factor) {
  std::vector<double> v = t.to_vector();
  for (double& e : v) e *= factor;
  return Tensor(t.shape(), std::move(v));
}

CheckModel linear_model(std::size_t d, double k, std::mt19937_64& rng) {
  CheckModel m;
  m.label = "linear d=" + std::to_string(d) + " k=" + detail::fmt_double(k, "%.3g");
  m.g = std::make_shared<LinearG>(d);
  const Tensor a = uniform({d, d}, rng);
  m.theta.add("A", rescaled(a, k / matrix_spectral_norm(a, 500, 1e-14)));
  m.theta.add("b", uniform({d}, rng, -0.5, 0.5));
  m.z = uniform({1, d}, rng);
  m.dim = d;
  return m;
}

// k times a random orthogonal matrix: every eigenvalue has modulus k, so
// the iteration cannot settle when k > 1.
CheckModel expanding_model(std::size_t d, double k, std::mt19937_64& rng) {
  CheckModel m;
  m.label = "expanding linear d=" + std::to_string(d) + " k=" + detail::fmt_double(k, "%.3g");
  m.g = std::make_shared<LinearG>(d);
  Eigen::MatrixXd a(d, d);
  const Tensor r = uniform({d, d}, rng);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) a(i, j) = r.at(i, j);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
  std::vector<double> v(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] = k * q(i, j);
  m.theta.add("A", Tensor({d, d}, std::move(v)));
  m.theta.add("b", uniform({d}, rng, -0.5, 0.5));
  m.z = uniform({1, d}, rng);
  m.dim = d;
  return m;
}

CheckModel mlp_model(std::size_t d, std::size_t dz, std::size_t hidden, OutputActivation act, std::mt19937_64& rng) {
  CheckModel m;
  m.label = "mlp d=" + std::to_string(d) + (act == OutputActivation::Sigmoid ? " sigmoid" : " linear");
  auto g = std::make_shared<MlpG>(d, dz, hidden, act);
  const auto specs = g->param_specs();
  Parameters theta = init_small(specs, 1.0, rng);
  for (const auto& s : specs)
    if (s.kind == ParamKind::Bias) theta.set(s.name, uniform(s.shape, rng, -0.3, 0.3));
  // Both weights at norm 0.9 bound the x-Lipschitz constant by 0.81.
  for (const auto& s : specs) {
    if (s.kind != ParamKind::Matrix) continue;
    theta.set(s.name, rescaled(theta.at(s.name), 2.0 / matrix_spectral_norm(theta.at(s.name), 500, 1e-14)));
  }
  m.theta = lipschitz_project(theta, specs, 0.9, {500, 1e-14});
  m.g = g;
  m.z = uniform({1, dz}, rng);
  m.dim = d;
  return m;
}

// One-layer relu energy with every unit active near the origin, so the
// step is affine in x with Jacobian I - gamma H, H = (2/h) Wx^T Wx.
CheckModel gd_model(std::size_t d, std::size_t dz, std::mt19937_64& rng) {
  const std::size_t h = 4 * d;
  EnergyNet net(d, dz, h);
  Parameters theta = init_small(net.param_specs(), 1.0, rng);
  theta.set("fc1.bias", Tensor::full({h}, 4.0));
  const Tensor& w = theta.at("fc1.weight");
  Eigen::MatrixXd wx(h, d);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < d; ++j) wx(i, j) = w.at(i, j);
  const Eigen::MatrixXd hess = (2.0 / static_cast<double>(h)) * wx.transpose() * wx;
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(hess).eigenvalues();
  CheckModel m;
  m.label = "gd d=" + std::to_string(d);
  m.g = std::make_shared<GdG>(net, 2.0 / (ev(0) + ev(ev.size() - 1)));
  m.theta = std::move(theta);
  m.z = uniform({1, dz}, rng);
  m.dim = d;
  return m;
}

std::vector<CheckModel> build_suite(std::uint64_t seed, std::size_t count) {
  std::mt19937_64 rng(seed);
  std::vector<CheckModel> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t d = 2 + (i * 5) % 9;
    switch (i % 4) {
      case 0: out.push_back(linear_model(d, 0.5 + 0.1 * static_cast<double>(i % 5), rng)); break;
      case 1: out.push_back(mlp_model(d, 3, 12, OutputActivation::None, rng)); break;
      case 2: out.push_back(mlp_model(d, 4, 16, OutputActivation::Sigmoid, rng)); break;
      default: out.push_back(gd_model(std::min<std::size_t>(d, 6), 3, rng)); break;
    }
  }
  return out;
}

// L(x) = 0.5 |x - t|^2
FunctionObject half_distance(const Tensor& t) {
  FunctionObject f;
  f.input_names = {"x"};
  f.recipe = [t](Graph& graph, std::span<const Var> in) {
    Var r = ops::sub(in[0], graph.leaf(t));
    return std::vector<Var>{ops::scale(ops::inner(r, r), 0.5)};
  };
  return f;
}

double half_distance_value(const Tensor& x, const Tensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - t[i]) * (x[i] - t[i]);
  return 0.5 * s;
}

double grad_rel_diff(const GradientResult& a, const GradientResult& b) {
  double m = max_rel_diff(a.z, b.z);
  for (std::size_t i = 0; i < a.theta.size(); ++i) m = std::max(m, max_rel_diff(a.theta[i], b.theta[i]));
  return m;
}

// Central differences of L(x_hat(theta, z)) for every parameter and input entry.
GradientResult fd_gradient(const CheckModel& m, const Tensor& x0, const Tensor& t, const FpiConfig& cfg, double h) {
  auto loss_at = [&](const Tensor& z, const Parameters& theta) {
    return half_distance_value(forward_fpi(*m.g, x0, z, theta, cfg).x_hat, t);
  };
  GradientResult out;
  const std::vector<double> flat = m.theta.flatten();
  std::vector<double> gflat(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    std::vector<double> p = flat, q = flat;
    p[i] += h;
    q[i] -= h;
    gflat[i] = (loss_at(m.z, m.theta.with_values(p)) - loss_at(m.z, m.theta.with_values(q))) / (2.0 * h);
  }
  out.theta = m.theta.with_values(gflat);
  std::vector<double> gz(m.z.size());
  for (std::size_t i = 0; i < gz.size(); ++i) {
    std::vector<double> p = m.z.to_vector(), q = p;
    p[i] += h;
    q[i] -= h;
    gz[i] = (loss_at(Tensor(m.z.shape(), p), m.theta) - loss_at(Tensor(m.z.shape(), q), m.theta)) / (2.0 * h);
  }
  out.z = Tensor(m.z.shape(), std::move(gz));
  return out;
}

// q(x, theta) = <u, (dg/dx)^T v> differentiated through P, against central
// differences of the numeric vector-Jacobian product.
double double_backward_error(const CheckModel& m, const Tensor& x, std::mt19937_64& rng, double h) {
  const Tensor u = uniform(x.shape(), rng), v = uniform(x.shape(), rng);
  const FunctionObject gf = m.g->as_function();

  Graph graph;
  std::vector<Var> inputs{graph.leaf(x), graph.leaf(m.z)};
  for (const auto& e : m.theta.entries()) inputs.push_back(graph.leaf(e.value));
  std::vector<bool> requested(inputs.size(), false);
  requested[0] = true;
  const auto d = partial_diff(inputs, inner_builder(std::vector<Tensor>{v}, gf), requested);
  Var q = ops::inner(graph.leaf(u), *d[0]);
  std::vector<Var> wrt{inputs[0]};
  for (std::size_t i = 2; i < inputs.size(); ++i) wrt.push_back(inputs[i]);
  const auto analytic = gradients(q, Tensor::scalar(1.0), wrt);

  auto q_value = [&](const Tensor& xv, const Parameters& theta) {
    std::vector<Tensor> in{xv, m.z};
    for (const auto& e : theta.entries()) in.push_back(e.value);
    const Tensor jt = vjp(gf, in, v)[0];
    double s = 0.0;
    for (std::size_t i = 0; i < jt.size(); ++i) s += u[i] * jt[i];
    return s;
  };
  double err = 0.0;
  auto compare = [&](double fd, double an) { err = std::max(err, std::abs(fd - an) / std::max(1.0, std::abs(fd))); };
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> p = x.to_vector(), n = p;
    p[i] += h;
    n[i] -= h;
    compare((q_value(Tensor(x.shape(), p), m.theta) - q_value(Tensor(x.shape(), n), m.theta)) / (2.0 * h),
            analytic[0][i]);
  }
  const std::vector<double> flat = m.theta.flatten();
  std::size_t offset = 0;
  for (std::size_t e = 0; e < m.theta.size(); ++e) {
    for (std::size_t j = 0; j < m.theta[e].size(); ++j) {
      std::vector<double> p = flat, n = flat;
      p[offset + j] += h;
      n[offset + j] -= h;
      compare((q_value(x, m.theta.with_values(p)) - q_value(x, m.theta.with_values(n))) / (2.0 * h),
              analytic[e + 1][j]);
    }
    offset += m.theta[e].size();
  }
  return err;
}

struct Check {
  std::string name;
  double observed;
  double limit;
  bool pass;
};

}  // namespace

RunReport run_gradcheck(const ExperimentConfig& cfg) {
  const auto& f = cfg.raw;
  const auto count = static_cast<std::size_t>(f.get_int("gradcheck.models", 20));
  const double tol = f.get_double("gradcheck.tol", 1e-12);
  const int unroll = static_cast<int>(f.get_int("gradcheck.unroll_steps", 500));
  const double tol_closed = f.get_double("gradcheck.closed_form_tol", 1e-6);
  const double tol_unrolled = f.get_double("gradcheck.unrolled_tol", 1e-5);
  const double tol_fd = f.get_double("gradcheck.fd_tol", 1e-4);
  const double fd_step = f.get_double("gradcheck.fd_step", 1e-6);
  const int starts = static_cast<int>(f.get_int("gradcheck.starts", 5));
  const double k_limit = f.get_double("gradcheck.bound_max_k", 0.9);

  std::vector<CheckModel> suite = build_suite(derive_seed(cfg.seed, {40}), count);
  if (f.get_bool("gradcheck.inject_noncontraction", false)) {
    std::mt19937_64 rng(derive_seed(cfg.seed, {41}));
    suite.push_back(expanding_model(4, f.get_double("gradcheck.inject_k", 1.2), rng));
  }

  FpiConfig solve = cfg.fpi.forward;
  solve.tol = tol;
  FpiConfig back = cfg.fpi.backward;
  back.tol = tol;
  FpiConfig exact = solve;  // near machine precision, for the gradient oracles
  exact.tol = 1e-26;
  exact.max_iter = std::max(exact.max_iter, 5000);

  RunReport report;
  std::size_t failed_models = 0;
  for (std::size_t mi = 0; mi < suite.size(); ++mi) {
    const CheckModel& m = suite[mi];
    char id[32];
    std::snprintf(id, sizeof id, ".model%02zu", mi);
    const std::string run = cfg.run_id + id;
    std::mt19937_64 rng(derive_seed(cfg.seed, {42, mi}));
    const Shape state{1, m.dim};
    const Tensor x0 = Tensor::zeros(state);
    const Tensor target = uniform(state, rng);
    std::vector<Check> checks;

    // Uniqueness and forward residual from several starting points.
    std::vector<FixedPointResult> sols;
    bool all_converged = true;
    try {
      for (int s = 0; s < starts; ++s) {
        sols.push_back(forward_fpi(*m.g, uniform(state, rng, -3.0, 3.0), m.z, m.theta, solve));
        all_converged = all_converged && sols.back().converged;
      }
    } catch (const DivergenceError&) {
      all_converged = false;
    }
    double spread = 0.0;
    if (all_converged)
      for (std::size_t a = 0; a < sols.size(); ++a)
        for (std::size_t b = a + 1; b < sols.size(); ++b)
          spread = std::max(spread, convergence_check(sols[a].x_hat, sols[b].x_hat, solve).second);
    checks.push_back({"banach_unique", all_converged ? spread : INFINITY, 10.0 * tol,
                      all_converged && spread <= 10.0 * tol});

    if (!all_converged) {
      // No fixed point to linearise at; the start point still shows expansion.
      const double k = spectral_norm_jacobian(*m.g, x0, m.z, m.theta, 100);
      checks.push_back({"spectral_norm", k, 1.0, k < 1.0});
    } else {
      const Tensor& xh = sols.front().x_hat;
      const Tensor gx = m.g->evaluate(xh, m.z, m.theta);
      double r = 0.0, n = 0.0;
      for (std::size_t i = 0; i < xh.size(); ++i) {
        r += (gx[i] - xh[i]) * (gx[i] - xh[i]);
        n += xh[i] * xh[i];
      }
      const double ratio = std::sqrt(r) / (std::sqrt(tol) * std::max(1.0, std::sqrt(n)));
      checks.push_back({"forward_residual", ratio, 1.0, ratio <= 1.0});

      const double k = spectral_norm_jacobian(*m.g, xh, m.z, m.theta, 100);
      checks.push_back({"spectral_norm", k, 1.0, k < 1.0});

      const FixedPointResult fine = forward_fpi(*m.g, x0, m.z, m.theta, exact);
      Tensor grad_out;
      {
        std::vector<double> go(fine.x_hat.size());
        for (std::size_t i = 0; i < go.size(); ++i) go[i] = fine.x_hat[i] - target[i];
        grad_out = Tensor(state, std::move(go));
      }
      const BackwardResult bw_exact = backward_fpi(*m.g, fine.x_hat, m.z, m.theta, grad_out, exact);
      const GradientResult closed = closed_form_gradient(*m.g, fine.x_hat, m.z, m.theta, grad_out);
      const GradientResult unrolled = unrolled_gradient(*m.g, x0, m.z, m.theta, unroll, half_distance(target));
      const GradientResult fd = fd_gradient(m, x0, target, exact, fd_step);
      const double e_closed = grad_rel_diff(bw_exact.grads, closed);
      const double e_unrolled = grad_rel_diff(bw_exact.grads, unrolled);
      const double e_fd = std::max(grad_rel_diff(bw_exact.grads, fd), grad_rel_diff(closed, fd));
      checks.push_back({"closed_form_rel", e_closed, tol_closed, e_closed <= tol_closed});
      checks.push_back({"unrolled_rel", e_unrolled, tol_unrolled, e_unrolled <= tol_unrolled});
      checks.push_back({"finite_diff_rel", e_fd, tol_fd, e_fd <= tol_fd});

      if (k <= k_limit) {
        const BackwardResult bw = backward_fpi(*m.g, xh, m.z, m.theta, grad_out, back);
        const double bound = backward_iteration_bound(k, back.tol);
        report.rows.push_back({run, 0, "check", "backward_bound", bound});
        checks.push_back({"backward_iterations", static_cast<double>(bw.iterations), bound,
                          bw.converged && bw.iterations <= bound});
      }

      const double e_db = double_backward_error(m, xh, rng, 1e-5);
      checks.push_back({"double_backward_rel", e_db, tol_fd, e_db <= tol_fd});
    }

    bool ok = true;
    std::string line = run + " " + m.label + ":";
    for (const auto& c : checks) {
      report.rows.push_back({run, 0, "check", c.name, c.observed});
      ok = ok && c.pass;
      line += " " + c.name + (c.pass ? " ok" : " FAIL (observed " + detail::fmt_double(c.observed, "%.3e") +
                                                   ", limit " + detail::fmt_double(c.limit, "%.3e") + ")");
    }
    report.rows.push_back({run, 0, "check", "pass", ok ? 1.0 : 0.0});
    report.lines.push_back((ok ? "PASS " : "FAIL ") + line);
    if (!ok) ++failed_models;
  }
  report.failed = failed_models > 0;
  report.lines.push_back("gradcheck: " + std::to_string(suite.size() - failed_models) + " of " +
                         std::to_string(suite.size()) + " models passed every check");
  return report;
}

}  // namespace fpx::cli
