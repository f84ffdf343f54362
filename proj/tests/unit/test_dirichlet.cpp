#include "mbsde/dirichlet.hpp"

#include <gtest/gtest.h>

using namespace mbsde;

namespace {

DirichletProblem flat_problem(std::function<Vec(const Vec&)> bc) {
  DirichletProblem p;
  p.name = "flat-1d";
  p.base = make_box({0.0}, {1.0});
  p.spec = brownian();
  p.boundary = std::move(bc);
  p.target = squared_norm_domain(charts::flat(1), vec({0.5}), 1.0);
  p.f = zero_drift(1, 1);
  return p;
}

DirichletProblem flat_affine() {
  return flat_problem([](const Vec& b) { return vec({b[0]}); });
}

DirichletProblem half_plane_problem() {
  DirichletProblem p;
  p.name = "half-plane-exp";
  p.base = make_box({0.0}, {1.0});
  p.spec = brownian();
  p.boundary = [](const Vec& b) { return vec({0.0, std::exp(b[0])}); };
  p.target = geodesic_ball(charts::half_plane(), vec({0.0, std::exp(0.5)}), 0.6);
  p.f = zero_drift(1, 2);
  return p;
}

Eigen::MatrixXd sample_map(const Grid& g, const std::function<Vec(const Vec&)>& phi, int n) {
  Eigen::MatrixXd u(g.nodes(), n);
  for (int j = 0; j < g.nodes(); ++j) u.row(j) = phi(g.point(j)).transpose();
  return u;
}

}  // namespace

TEST(ExitRho, Examples) {
  const ExitRhoEstimate e = exit_rho_estimate(make_box({0.0}, {1.0}), brownian());
  EXPECT_NEAR(e.lambda1, std::numbers::pi * std::numbers::pi / 2, 1e-12);
  EXPECT_NEAR(e.rho, 4.4413, 1e-4);
  EXPECT_EQ(e.method, "closed-form");
  EXPECT_NEAR(exit_rho_estimate(make_box({0.0}, {2.0}), brownian()).lambda1, e.lambda1 / 4, 1e-12);
  EXPECT_NEAR(exit_rho_estimate(make_box({0.0}, {1.0}), brownian(1, 2.0)).lambda1, 4 * e.lambda1, 1e-12);
  // rectangle: separable sum
  EXPECT_NEAR(exit_rho_estimate(make_box({0.0, 0.0}, {1.0, 2.0}), brownian(2)).lambda1, e.lambda1 * 1.25, 1e-12);
  Mat s = Mat::Zero(1, 1);
  EXPECT_THROW(exit_rho_estimate(make_box({0.0}, {1.0}), constant_diffusion(vec({0.0}), s)), Error);
}

TEST(ExitRho, FiniteDifferenceAgreesWithClosedForm) {
  DiffusionSpec drifted = constant_diffusion(vec({0.7}), Mat::Constant(1, 1, 1.0));
  const double closed = exit_rho_estimate(make_box({0.0}, {1.0}), drifted).lambda1;
  EXPECT_NEAR(closed, std::numbers::pi * std::numbers::pi / 2 + 0.49 / 2, 1e-12);
  drifted.constant = false;
  const ExitRhoEstimate fd = exit_rho_estimate(make_box({0.0}, {1.0}), drifted);
  EXPECT_EQ(fd.method, "finite-difference");
  EXPECT_NEAR(fd.lambda1, closed, 1e-4 * closed);
}

TEST(SmallDrift, Examples) {
  EXPECT_TRUE(small_drift_check(zero_drift(1, 1), 4.4).pass);
  EXPECT_FALSE(small_drift_check(constant_drift(1, vec({0.5})), 4.4).pass);
  EXPECT_TRUE(small_drift_check(constant_drift(1, vec({0.4})), 4.4).pass);
  EXPECT_FALSE(small_drift_check(constant_drift(1, vec({0.5})), 5.0).pass);  // strict
  DriftField undeclared = zero_drift(1, 1);
  undeclared.L = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(small_drift_check(undeclared, 4.4).pass);
  EXPECT_THROW(small_drift_check(zero_drift(1, 1), 4.4, 1.5), Error);
}

TEST(Problem, BoundaryMapMustLandInDomain) {
  EXPECT_TRUE(validate_problem(flat_affine()).pass);
  EXPECT_TRUE(validate_problem(half_plane_problem()).pass);
  DirichletProblem bad = flat_problem([](const Vec& b) { return vec({3.0 * b[0]}); });
  const VerificationReport r = validate_problem(bad);
  EXPECT_FALSE(r.pass);
  EXPECT_EQ(r.witness, std::vector<double>{1.0});
  DirichletProblem wrong = flat_affine();
  wrong.f = zero_drift(1, 2);
  EXPECT_THROW(validate_problem(wrong), Error);
}

TEST(DirichletMc, FlatAffineAtMidpoint) {
  const DirichletEstimate e = solve_dirichlet_mc(flat_affine(), vec({0.5}), 10000, 2.0);
  EXPECT_LT(std::abs(e.value[0] - 0.5), 3 * e.se[0]);
  EXPECT_GT(e.se[0], 0.003);
  EXPECT_LE(e.censored, 1e-3);
  EXPECT_NEAR(e.rho_exp, 0.9 * std::numbers::pi * std::numbers::pi / 2, 1e-12);
}

TEST(DirichletMc, TrivialCases) {
  DirichletProblem c = flat_problem([](const Vec&) { return vec({0.3}); });
  const DirichletEstimate e = solve_dirichlet_mc(c, vec({0.37}), 500, 2.0);
  EXPECT_NEAR(e.value[0], 0.3, 1e-14);
  EXPECT_LE(e.se[0], 1e-14);
  const DirichletEstimate b = solve_dirichlet_mc(flat_affine(), vec({1.0}), 500, 2.0);
  EXPECT_TRUE(b.on_boundary);
  EXPECT_EQ(b.value[0], 1.0);
  EXPECT_THROW(solve_dirichlet_mc(flat_affine(), vec({1.5}), 500, 2.0), Error);
}

TEST(DirichletMc, CensoringIsAHorizonError) {
  try {
    solve_dirichlet_mc(flat_affine(), vec({0.5}), 500, 0.2);
    FAIL() << "expected a horizon error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::horizon);
  }
}

TEST(DirichletMc, LargeDriftIsRejected) {
  DirichletProblem p = flat_affine();
  p.f = constant_drift(1, vec({1.0}));
  EXPECT_THROW(solve_dirichlet_mc(p, vec({0.5}), 500, 2.0), Error);
  DirichletMcOptions o;
  o.enforce_small_drift = false;
  // phi'' / 2 = 1 with phi(0) = 0, phi(1) = 1 gives phi(1/2) = 1/2 - 1/4
  const DirichletEstimate e = solve_dirichlet_mc(p, vec({0.5}), 10000, 2.0, o);
  EXPECT_LT(std::abs(e.value[0] - 0.25), std::max(3 * e.se[0], 2e-2));
}

TEST(ExitTime, MeanFromMidpoint) {
  const ExitTimeEstimate e = mean_exit_time(brownian(), make_box({0.0}, {1.0}), vec({0.5}), 10000, 1e-4, 3.0);
  EXPECT_LT(std::abs(e.mean - 0.25), 3 * e.se);
  EXPECT_EQ(e.censored, 0.0);
  // without the bridge correction discrete monitoring overshoots by O(sqrt(dt))
  const ExitTimeEstimate raw = mean_exit_time(brownian(), make_box({0.0}, {1.0}), vec({0.5}), 4000, 1e-2, 3.0, 1, false);
  EXPECT_GT(raw.mean - 0.25, 3 * raw.se);
}

TEST(Flow, FlatAffine) {
  const FlowResult r = harmonic_map_flow(flat_affine(), 0.02, 20.0);
  ASSERT_TRUE(r.converged) << r.message;
  for (int j = 0; j < r.grid.nodes(); ++j) EXPECT_NEAR(r.u(j, 0), r.grid.point(j)[0], 1e-4);
  EXPECT_LE(r.max_chi, 0.25 + 1e-12);
  EXPECT_NEAR(flow_value(r, vec({0.25}))[0], 0.25, 1e-4);
}

TEST(Flow, ConstantStaysConstant) {
  DirichletProblem c = flat_problem([](const Vec&) { return vec({0.3}); });
  RelaxationOptions o;
  o.initial = [](const Vec&) { return vec({0.3}); };
  const FlowResult r = harmonic_map_flow(c, 0.05, 1e-2, o);
  EXPECT_EQ((r.u.array() - 0.3).abs().maxCoeff(), 0.0);
  EXPECT_TRUE(r.converged);
  for (double u : r.updates) EXPECT_EQ(u, 0.0);
}

TEST(Flow, HalfPlaneExponential) {
  const DirichletProblem p = half_plane_problem();
  const FlowResult r = harmonic_map_flow(p, 0.02, 20.0);
  ASSERT_TRUE(r.converged) << r.message;
  double err = 0.0;
  for (int j = 0; j < r.grid.nodes(); ++j) {
    const double x = r.grid.point(j)[0];
    err = std::max(err, std::max(std::abs(r.u(j, 0)), std::abs(r.u(j, 1) - std::exp(x))));
  }
  EXPECT_LE(err, 1e-3);
  EXPECT_LE(r.max_chi, p.target.level + 5e-3);
  EXPECT_LE(tension_residual(r.grid, r.u, p.spec, p.chart(), p.f).max_interior, 1e-3);
}

TEST(Tension, Examples) {
  const DirichletProblem hp = half_plane_problem();
  const Grid g = make_grid(hp.base, 0.02);
  const TensionResidual t =
      tension_residual(g, sample_map(g, [](const Vec& b) { return vec({0.0, std::exp(b[0])}); }, 2), hp.spec, hp.chart(), hp.f);
  EXPECT_LE(t.max_interior, 1e-3);
  EXPECT_EQ(t.value[0], 0.0);
  // a geodesic parametrized at the wrong speed is not harmonic
  const TensionResidual w =
      tension_residual(g, sample_map(g, [](const Vec& b) { return vec({0.0, 1.0 + b[0]}); }, 2), hp.spec, hp.chart(), hp.f);
  EXPECT_GT(w.max_interior, 0.1);
  const TensionResidual c =
      tension_residual(g, sample_map(g, [](const Vec&) { return vec({0.2, 1.5}); }, 2), hp.spec, hp.chart(), hp.f);
  EXPECT_EQ(c.max_interior, 0.0);
  const DirichletProblem fl = flat_affine();
  const TensionResidual a = tension_residual(g, sample_map(g, [](const Vec& b) { return vec({0.3 - 2 * b[0]}); }, 1),
                                             fl.spec, fl.chart(), fl.f);
  EXPECT_LE(a.max_interior, 1e-10);
}

TEST(Energy, Examples) {
  const DirichletProblem fl = flat_affine();
  const Grid g = make_grid(fl.base, 0.05);
  EXPECT_NEAR(energy(g, sample_map(g, [](const Vec& b) { return vec({b[0]}); }, 1), fl.chart(), fl.spec), 0.5, 1e-12);
  EXPECT_EQ(energy(g, sample_map(g, [](const Vec&) { return vec({0.4}); }, 1), fl.chart(), fl.spec), 0.0);
  const ScalarField G = named_potential("half-norm-squared", 1);
  // trapezoid of x^2 / 2 on [0,1] at dx = 0.05: 1/6 + dx^2 / 12
  EXPECT_NEAR(energy(g, sample_map(g, [](const Vec& b) { return vec({b[0]}); }, 1), fl.chart(), fl.spec, &G),
              0.5 + 1.0 / 6 + 0.0025 / 12, 1e-12);
  // sigma = 2: density a |u'|^2 / 2 with volume element 1/2
  EXPECT_NEAR(energy(g, sample_map(g, [](const Vec& b) { return vec({b[0]}); }, 1), fl.chart(), brownian(1, 2.0)), 1.0,
              1e-12);
}

TEST(Energy, DescentAlongGradientFlow) {
  DirichletProblem p = flat_affine();
  p.potential = named_potential("half-norm-squared", 1);
  p.potential_name = "half-norm-squared";
  p.f = gradient_drift(p.chart(), 1, *p.potential);
  const FlowResult r = harmonic_map_flow(p, 0.02, 20.0);
  ASSERT_TRUE(r.converged) << r.message;
  EXPECT_LE(max_energy_increase(r), 1e-8);
  EXPECT_LT(r.energy.back().second, r.energy.front().second);
  EXPECT_LE(tension_residual(r.grid, r.u, p.spec, p.chart(), p.f).max_interior, 1e-3);
  // steady state of u''/2 = u: sinh(sqrt 2 x) / sinh(sqrt 2)
  EXPECT_NEAR(flow_value(r, vec({0.5}))[0], std::sinh(std::sqrt(2.0) / 2) / std::sinh(std::sqrt(2.0)), 1e-3);
}

TEST(Agreement, McAndFlowOnHalfPlane) {
  const DirichletProblem p = half_plane_problem();
  const FlowResult r = harmonic_map_flow(p, 0.02, 20.0);
  const DirichletEstimate e = solve_dirichlet_mc(p, vec({0.3}), 10000, 2.0);
  const Vec fv = flow_value(r, vec({0.3}));
  EXPECT_NEAR(e.value[0], 0.0, 1e-12);
  EXPECT_LT(std::abs(e.value[1] - fv[1]), std::max(3 * e.se[1], 2e-2));
  EXPECT_LT(std::abs(e.value[1] - std::exp(0.3)), std::max(3 * e.se[1], 2e-2));
}

TEST(Outputs, FlowCsv) {
  const FlowResult r = harmonic_map_flow(flat_affine(), 0.25, 0.01);
  std::ostringstream os;
  write_flow_csv(os, r);
  EXPECT_EQ(os.str().substr(0, 11), "node,b1,u1\n");
  const json j = to_json(r);
  EXPECT_FALSE(j.at("converged").get<bool>());
  EXPECT_NE(r.message.find("not converged"), std::string::npos);
}
