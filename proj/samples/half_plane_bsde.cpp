// Martingale on the hyperbolic half-plane: solve the constrained BSDE through the PDE,
// assemble it along Brownian paths, and compare X_0 with the regression solver.

#include "mbsde/bsde.hpp"

#include <cstdio>

using namespace mbsde;

int main() {
  const Chart hp = charts::half_plane();
  const ConvexDomain ball = geodesic_ball(hp, vec({0.0, 1.0}), 0.8);
  const DiffusionSpec bm = brownian();
  const DriftField f = zero_drift(1, 2);
  const double T = 0.5;

  TerminalFn F;
  F.d = 1;
  F.n = 2;
  F.name = "exp-vertical";
  F.eval = [](const Vec& b) { return vec({0.0, std::exp(0.5 * std::clamp(b[0], -1.0, 1.0))}); };

  const GammaDrift gamma = gamma_assemble(hp, ball, f, {0.5, -1.0});
  const SpaceTimeField u = solve_parabolic(bm, gamma, F, {make_box({-1.0}, {1.0}), 0.05, 1e-3, T});
  const ZField z = gradient_field(u, bm);
  const BSDESolution sol =
      assemble_solution(u, z, simulate_paths(bm, vec({0.0}), uniform_grid(T, 50), 7, 200), &F);
  const ResidualSummary res = residual_check(sol, hp, f);
  const ZBoundReport zb = z_bound_report(z, 0.5);

  const BSDESolution ls = lsmc_solve(bm, gamma, F, vec({0.0}), uniform_grid(T, 25), 4000);
  std::printf("X0 (pde)   = (%.6f, %.6f)\n", sol.X0[0], sol.X0[1]);
  std::printf("X0 (lsmc)  = (%.6f, %.6f)\n", ls.X0[0], ls.X0[1]);
  std::printf("residual   median mean step %.3e\n", res.median_mean);
  std::printf("max |Z|    %.4f against 1/eps = %.1f (%s)\n", zb.max_norm, zb.threshold, zb.pass ? "pass" : "fail");
  std::printf("|X_T - F|  %.1e\n", terminal_mismatch(sol, F));
  return zb.pass ? 0 : 1;
}
