#pragma once

#include "mbsde/bsde.hpp"
#include "mbsde/report.hpp"

#include <numbers>

namespace mbsde {

/// Harmonic-map-with-drift problem on a box M1 with values in a convex target domain.
struct DirichletProblem {
  Box base;
  DiffusionSpec spec;
  std::function<Vec(const Vec&)> boundary;  // phi-bar, evaluated on the faces of `base`
  ConvexDomain target;
  DriftField f;
  std::optional<ScalarField> potential;  // G when f = D_2 G
  std::string potential_name;
  double rho_exp = 0.0;  // non-positive: taken from exit_rho_estimate
  TruncationParams truncation{0.2, -1.0};
  std::string name;

  const Chart& chart() const { return target.chart; }
  int d() const { return base.dim(); }
  int n() const { return target.dim(); }
};

inline bool on_boundary(const Box& box, const Vec& x) { return box.contains(x) && !box.interior(x); }

/// Points on the faces of a 1-d interval or 2-d rectangle (corners included).
inline std::vector<Vec> box_boundary_points(const Box& box, int per_edge = 17) {
  std::vector<Vec> out;
  if (box.dim() == 1) return {box.lo, box.hi};
  if (box.dim() != 2) fail(ErrorKind::dimension, "boundary sampling supports d <= 2");
  for (int e = 0; e < per_edge; ++e) {
    const double s = static_cast<double>(e) / (per_edge - 1);
    const double x = box.lo[0] + s * (box.hi[0] - box.lo[0]);
    const double y = box.lo[1] + s * (box.hi[1] - box.lo[1]);
    out.push_back(vec({x, box.lo[1]}));
    out.push_back(vec({x, box.hi[1]}));
    if (e > 0 && e + 1 < per_edge) {
      out.push_back(vec({box.lo[0], y}));
      out.push_back(vec({box.hi[0], y}));
    }
  }
  return out;
}

/// Dimension checks plus phi-bar(dM1) in omega-bar on boundary samples.
inline VerificationReport validate_problem(const DirichletProblem& p, int per_edge = 17) {
  const int d = p.d(), n = p.n();
  if (d < 1 || d > 2) fail(ErrorKind::dimension, "dirichlet base must be an interval or a rectangle");
  if (p.spec.d != d) fail(ErrorKind::dimension, "base diffusion dimension differs from the base box");
  if (p.f.d != d || p.f.n != n || p.f.dW != p.spec.dW) fail(ErrorKind::dimension, "drift dimensions do not match");
  if (!p.boundary) fail(ErrorKind::config, "dirichlet problem needs a boundary map");
  for (int i = 0; i < d; ++i)
    if (!(p.base.hi[i] > p.base.lo[i])) fail(ErrorKind::config, "dirichlet base box is empty");
  VerificationReport r("boundary-map-in-domain", 1e-9);
  for (const Vec& b : box_boundary_points(p.base, per_edge)) {
    const Vec v = p.boundary(b);
    if (v.size() != n) fail(ErrorKind::dimension, "boundary map returns the wrong dimension");
    const double m = p.chart().contains(v) ? p.target.level - p.target.chi(v) : -std::numeric_limits<double>::infinity();
    r.observe(m, b);
  }
  return r.finalize();
}

struct ExitRhoEstimate {
  double lambda1 = 0.0;
  double rho = 0.0;  // 0.9 lambda1
  std::string method;
};

namespace detail {

/// Principal Dirichlet eigenvalue of -(1/2 a u'' + b u') on an interval, by finite differences.
inline double interval_eigenvalue_fd(const DiffusionSpec& spec, double lo, double hi, int nodes = 400) {
  const double h = (hi - lo) / (nodes + 1);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(nodes, nodes);
  for (int i = 0; i < nodes; ++i) {
    const Vec x = vec({lo + (i + 1) * h});
    const double a = spec.a(x)(0, 0), b = spec.b(x)[0];
    A(i, i) = a / (h * h);
    if (i > 0) A(i, i - 1) = -0.5 * a / (h * h) + 0.5 * b / h;
    if (i + 1 < nodes) A(i, i + 1) = -0.5 * a / (h * h) - 0.5 * b / h;
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(A, false);
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < nodes; ++i)
    if (std::abs(es.eigenvalues()[i].imag()) < 1e-9) best = std::min(best, es.eigenvalues()[i].real());
  return best;
}

}  // namespace detail

/// Largest safe exit-time exponent: 0.9 times the principal Dirichlet eigenvalue of -L.
inline ExitRhoEstimate exit_rho_estimate(const Box& base, const DiffusionSpec& spec) {
  const int d = base.dim();
  if (d < 1 || d > 2 || spec.d != d) fail(ErrorKind::dimension, "exit_rho_estimate: interval or rectangle only");
  for (const Vec& x : box_boundary_points(base, 9)) {
    Eigen::SelfAdjointEigenSolver<Mat> es(spec.a(x), Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().minCoeff() > 1e-12)) fail(ErrorKind::config, "diffusion is not uniformly elliptic on the base");
  }
  const Vec c = base.center();
  Eigen::SelfAdjointEigenSolver<Mat> es(spec.a(c), Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues().minCoeff() > 1e-12)) fail(ErrorKind::config, "diffusion is not uniformly elliptic on the base");

  ExitRhoEstimate r;
  const Mat a = spec.a(c);
  const bool diagonal = d == 1 || std::abs(a(0, 1)) <= 1e-14 * a.norm();
  if (spec.constant && diagonal) {
    // u = exp(-b x / a) v removes the first-order term and shifts the spectrum by b^2 / 2a
    const Vec b = spec.b(c);
    for (int k = 0; k < d; ++k) {
      const double l = base.hi[k] - base.lo[k];
      r.lambda1 += a(k, k) * std::numbers::pi * std::numbers::pi / (2 * l * l) + b[k] * b[k] / (2 * a(k, k));
    }
    r.method = "closed-form";
  } else if (d == 1) {
    r.lambda1 = detail::interval_eigenvalue_fd(spec, base.lo[0], base.hi[0]);
    r.method = "finite-difference";
  } else {
    fail(ErrorKind::config, "rectangle eigenvalue needs a constant diagonal diffusion");
  }
  r.rho = 0.9 * r.lambda1;
  return r;
}

/// Declared drift constants against the exit exponent: L < theta rho and L2 < theta rho.
inline VerificationReport small_drift_check(const DriftField& f, double rho, double theta = 0.1) {
  if (!(theta > 0 && theta < 1)) fail(ErrorKind::parameter, "small-drift theta must lie in (0,1)");
  if (!(rho > 0)) fail(ErrorKind::parameter, "small-drift check needs rho > 0");
  VerificationReport r("small-drift", 0.0);
  const double h = theta * rho;
  r.observe(h - f.L, vec({f.L, h}));
  r.observe(h - f.L2, vec({f.L2, h}));
  r.extra = {{"theta", theta}, {"rho", rho}, {"L", std::isfinite(f.L) ? json(f.L) : json("inf")},
             {"L2", std::isfinite(f.L2) ? json(f.L2) : json("inf")}};
  r.finalize();
  r.pass = r.margin > 0;  // strict inequalities
  return r;
}

namespace detail {

/// Probability that the Brownian bridge between two interior points touched a face.
inline double bridge_exit_probability(const Box& box, const Vec& a, const Vec& b, const Mat& am, double dt) {
  double stay = 1.0;
  for (int i = 0; i < a.size(); ++i) {
    const double v = am(i, i) * dt;
    if (!(v > 0)) continue;
    stay *= 1.0 - std::exp(-2.0 * (a[i] - box.lo[i]) * (b[i] - box.lo[i]) / v);
    stay *= 1.0 - std::exp(-2.0 * (box.hi[i] - a[i]) * (box.hi[i] - b[i]) / v);
  }
  return 1.0 - stay;
}

/// Midpoint of the step moved onto the face the bridge most likely touched.
inline Vec bridge_exit_point(const Box& box, const Vec& a, const Vec& b, const Mat& am, double dt) {
  Vec p = 0.5 * (a + b);
  int face = 0;
  double best = -1.0, value = box.lo[0];
  for (int i = 0; i < a.size(); ++i) {
    const double v = std::max(am(i, i) * dt, 1e-300);
    const double plo = std::exp(-2.0 * (a[i] - box.lo[i]) * (b[i] - box.lo[i]) / v);
    const double phi = std::exp(-2.0 * (box.hi[i] - a[i]) * (box.hi[i] - b[i]) / v);
    if (plo > best) best = plo, face = i, value = box.lo[i];
    if (phi > best) best = phi, face = i, value = box.hi[i];
  }
  p[face] = value;
  return p;
}

/// Euler walk to the first exit from the open box. on_step(k, x_{k+1}, dw) sees every
/// step taken, the last one with x_{k+1} replaced by the exit point.
template <class OnStep>
ExitResult walk_to_exit(const DiffusionSpec& spec, const Box& box, const Vec& y, double dt, long N, bool bridge,
                        std::uint64_t seed, std::uint64_t index, OnStep&& on_step) {
  if (!box.interior(y)) return ExitResult{0, y, 0.0, false};
  std::mt19937_64 rng = make_stream(seed, index);
  std::mt19937_64 urng = make_stream(seed ^ 0xb7e151628aed2a6bULL, index);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const double sq = std::sqrt(dt);
  const Vec b0 = spec.constant ? spec.b(y) : Vec();
  const Mat s0 = spec.constant ? spec.sigma(y) : Mat();
  const Mat a0 = spec.constant ? Mat(s0 * s0.transpose()) : Mat();
  Vec x = y, dw(spec.dW);
  for (long k = 0; k < N; ++k) {
    for (int j = 0; j < spec.dW; ++j) dw[j] = sq * nd(rng);
    const Mat s = spec.constant ? s0 : spec.sigma(x);
    const Vec xn = spec.constant ? Vec(x + b0 * dt + s0 * dw) : Vec(x + spec.b(x) * dt + s * dw);
    const int idx = static_cast<int>(std::min<long>(k + 1, std::numeric_limits<int>::max()));
    if (!box.interior(xn)) {
      const double th = box_crossing(box, x, xn);
      const Vec p = x + th * (xn - x);
      on_step(k, p, dw);
      return ExitResult{idx, p, (k + th) * dt, false};
    }
    if (bridge) {
      const Mat am = spec.constant ? a0 : Mat(s * s.transpose());
      // the uniform is drawn every step so the stream does not depend on the branch
      const double u = ud(urng);
      if (u < bridge_exit_probability(box, x, xn, am, dt)) {
        const Vec p = bridge_exit_point(box, x, xn, am, dt);
        on_step(k, p, dw);
        return ExitResult{idx, p, (k + 0.5) * dt, false};
      }
    }
    on_step(k, xn, dw);
    x = xn;
  }
  return ExitResult{static_cast<int>(std::min<long>(N, std::numeric_limits<int>::max())), x, N * dt, true};
}

}  // namespace detail

struct ExitTimeEstimate {
  double mean = 0.0;
  double se = 0.0;
  double censored = 0.0;  // fraction of paths still inside at t_max
  int paths = 0;
};

/// Monte Carlo mean of the first exit time, streaming (no path storage).
inline ExitTimeEstimate mean_exit_time(const DiffusionSpec& spec, const Box& box, const Vec& y, int paths, double dt,
                                       double t_max, std::uint64_t seed = 1, bool bridge = true) {
  if (paths < 2) fail(ErrorKind::statistics, "mean_exit_time needs at least two paths");
  if (!(dt > 0) || !(t_max > dt)) fail(ErrorKind::config, "mean_exit_time: need 0 < dt < t_max");
  const long N = static_cast<long>(std::ceil(t_max / dt - 1e-9));
  double s1 = 0.0, s2 = 0.0;
  int cens = 0;
  for (int m = 0; m < paths; ++m) {
    const ExitResult r = detail::walk_to_exit(spec, box, y, dt, N, bridge, seed, static_cast<std::uint64_t>(m),
                                              [](long, const Vec&, const Vec&) {});
    s1 += r.time;
    s2 += r.time * r.time;
    cens += r.censored;
  }
  ExitTimeEstimate e;
  e.paths = paths;
  e.mean = s1 / paths;
  e.se = std::sqrt(std::max(0.0, (s2 / paths - e.mean * e.mean) * paths / (paths - 1)) / paths);
  e.censored = static_cast<double>(cens) / paths;
  return e;
}

struct DirichletMcOptions {
  double dt = 2e-3;
  int degree = 2;
  bool bridge = true;             // Brownian-bridge exit detection between grid times
  double censor_limit = 1e-3;
  bool enforce_small_drift = true;
  double theta = 0.1;
  int max_picard = 10;
  double picard_tol = 1e-10;
  std::uint64_t seed = 1;
};

struct DirichletEstimate {
  Vec value;  // phi(x) = X_0
  Vec se;     // per component, of the plain estimator phi-bar(B_tau) + sum gamma dt
  double censored = 0.0;
  double mean_exit = 0.0;
  int paths = 0;
  int steps = 0;
  double dt = 0.0;
  bool on_boundary = false;
  double rho_exp = 0.0;
};

inline json to_json(const DirichletEstimate& e) {
  return {{"value", std::vector<double>(e.value.data(), e.value.data() + e.value.size())},
          {"se", std::vector<double>(e.se.data(), e.se.data() + e.se.size())},
          {"censored", e.censored},
          {"mean_exit", e.mean_exit},
          {"paths", e.paths},
          {"steps", e.steps},
          {"dt", e.dt},
          {"on_boundary", e.on_boundary},
          {"rho_exp", e.rho_exp}};
}

/// phi(x) = X_0 of the BSDE with terminal value phi-bar(B_tau) at the first exit time tau.
/// Backward regression runs over the paths still inside at each step; past tau a path
/// carries Z = 0 and its value at tau is the boundary value.
inline DirichletEstimate solve_dirichlet_mc(const DirichletProblem& p, const Vec& x, int path_count, double T_max,
                                            const DirichletMcOptions& opt = {}) {
  validate_problem(p);
  const int d = p.d(), n = p.n(), dW = p.spec.dW;
  if (x.size() != d || !p.base.contains(x)) fail(ErrorKind::domain, "dirichlet start point is outside the base box");
  DirichletEstimate est;
  est.value = Vec::Zero(n);
  est.se = Vec::Zero(n);
  est.dt = opt.dt;
  if (on_boundary(p.base, x)) {
    est.value = p.boundary(x);
    est.on_boundary = true;
    return est;
  }
  if (path_count < 100) fail(ErrorKind::statistics, "solve_dirichlet_mc needs at least 100 paths");
  if (!(opt.dt > 0) || !(T_max > opt.dt)) fail(ErrorKind::config, "solve_dirichlet_mc: need 0 < dt < T_max");
  est.rho_exp = p.rho_exp > 0 ? p.rho_exp : exit_rho_estimate(p.base, p.spec).rho;
  if (opt.enforce_small_drift) {
    const VerificationReport sd = small_drift_check(p.f, est.rho_exp, opt.theta);
    if (!sd.pass) fail(ErrorKind::config, "drift constants fail the small-drift check (L, L2 >= theta rho)");
  }
  const GammaDrift gamma = gamma_assemble(p.chart(), p.target, p.f, p.truncation);

  const int N = static_cast<int>(std::ceil(T_max / opt.dt - 1e-9));
  const double dt = T_max / N;
  const int M = path_count;
  est.steps = N;
  est.paths = M;
  std::vector<Eigen::MatrixXd> B(d, Eigen::MatrixXd(M, N + 1)), W(dW, Eigen::MatrixXd::Zero(M, N));
  std::vector<int> exit_index(M);
  Eigen::MatrixXd X(M, n);
  int censored = 0;
  double tau_sum = 0.0;
  for (int m = 0; m < M; ++m) {
    for (int a = 0; a < d; ++a) B[a](m, 0) = x[a];
    const ExitResult r =
        detail::walk_to_exit(p.spec, p.base, x, dt, N, opt.bridge, opt.seed, static_cast<std::uint64_t>(m),
                             [&](long k, const Vec& xn, const Vec& dw) {
                               for (int a = 0; a < d; ++a) B[a](m, k + 1) = xn[a];
                               for (int j = 0; j < dW; ++j) W[j](m, k) = dw[j];
                             });
    exit_index[m] = r.index;
    tau_sum += r.time;
    Vec end = r.point;
    if (r.censored) {
      // still inside at T_max: stop on the nearest face
      ++censored;
      int face = 0;
      double best = std::numeric_limits<double>::infinity(), val = 0.0;
      for (int a = 0; a < d; ++a) {
        if (end[a] - p.base.lo[a] < best) best = end[a] - p.base.lo[a], face = a, val = p.base.lo[a];
        if (p.base.hi[a] - end[a] < best) best = p.base.hi[a] - end[a], face = a, val = p.base.hi[a];
      }
      end[face] = val;
    }
    X.row(m) = p.boundary(end).transpose();
  }
  est.censored = static_cast<double>(censored) / M;
  est.mean_exit = tau_sum / M;
  if (est.censored > opt.censor_limit)
    fail(ErrorKind::horizon, "exit-time censoring " + std::to_string(est.censored) + " exceeds " +
                                 std::to_string(opt.censor_limit) + "; increase T_max");

  Eigen::MatrixXd xi = X;  // plain estimator, accumulated along the backward sweep
  std::vector<int> alive;
  Eigen::MatrixXd Phi, Y, Yz, fitX, fitZ;
  for (int k = N - 1; k >= 0; --k) {
    alive.clear();
    for (int m = 0; m < M; ++m)
      if (exit_index[m] > k) alive.push_back(m);
    const int Ma = static_cast<int>(alive.size());
    if (Ma == 0) continue;
    Vec mean = Vec::Zero(d), sd = Vec::Zero(d);
    for (int m : alive)
      for (int a = 0; a < d; ++a) mean[a] += B[a](m, k) / Ma;
    for (int m : alive)
      for (int a = 0; a < d; ++a) sd[a] += std::pow(B[a](m, k) - mean[a], 2) / Ma;
    sd = sd.cwiseSqrt();
    const bool degenerate = sd.maxCoeff() <= 1e-12 * (1 + mean.norm());
    // few survivors late in the horizon: drop the degree until the fit is well posed
    int deg = degenerate ? 0 : opt.degree;
    while (deg > 0 && Ma < 10 * PolyBasis(d, deg).size()) --deg;
    for (;; --deg) {
      const PolyBasis basis(d, deg);
      const int P = basis.size();
      Phi.resize(Ma, P);
      std::array<double, 64> row{};
      for (int r = 0; r < Ma; ++r) {
        Vec z(d);
        for (int a = 0; a < d; ++a) z[a] = sd[a] > 0 ? (B[a](alive[r], k) - mean[a]) / sd[a] : 0.0;
        basis.eval(z, row.data());
        for (int q = 0; q < P; ++q) Phi(r, q) = row[q];
      }
      const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Phi);
      if (qr.rank() < P && deg > 0) continue;
      Y.resize(Ma, n);
      for (int r = 0; r < Ma; ++r) Y.row(r) = X.row(alive[r]);
      fitX = Phi * qr.solve(Y);
      Yz.resize(Ma, n * dW);
      for (int r = 0; r < Ma; ++r)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < dW; ++j) Yz(r, i * dW + j) = (Y(r, i) - fitX(r, i)) * W[j](alive[r], k) / dt;
      fitZ = Phi * qr.solve(Yz);
      break;
    }
    for (int r = 0; r < Ma; ++r) {
      const int m = alive[r];
      Mat z(n, dW);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < dW; ++j) z(i, j) = fitZ(r, i * dW + j);
      Vec b(d);
      for (int a = 0; a < d; ++a) b[a] = B[a](m, k);
      const Vec ex = Vec(fitX.row(r).transpose());
      Vec xv = ex;
      bool ok = false;
      for (int it = 0; it < opt.max_picard; ++it) {
        const Vec xn = ex + dt * gamma(b, xv, z);
        const double change = (xn - xv).norm();
        xv = xn;
        if (change <= opt.picard_tol) {
          ok = true;
          break;
        }
      }
      if (!ok) fail(ErrorKind::convergence, "dirichlet lsmc: Picard iteration did not converge at step " + std::to_string(k));
      xi.row(m) += dt * gamma(b, xv, z).transpose();
      X.row(m) = xv.transpose();
    }
  }
  est.value = Vec(X.colwise().mean().transpose());
  for (int i = 0; i < n; ++i) {
    const double mu = xi.col(i).mean();
    est.se[i] = std::sqrt((xi.col(i).array() - mu).square().sum() / (M - 1) / M);
  }
  return est;
}

struct RelaxationOptions {
  double dt = 0.0;  // non-positive: 0.4 dx^2 / max eigenvalue of sigma sigma^T
  double tol = 1e-8;
  int consecutive = 10;
  int energy_every = 1;  // 0 disables the energy trace
  std::function<Vec(const Vec&)> initial;  // interior start; default is the mean boundary value
};

struct FlowResult {
  Grid grid;
  int n = 1;
  Eigen::MatrixXd u;  // nodes x n
  bool converged = false;
  bool left_chart = false;
  int steps = 0;
  double dt = 0.0;
  double time = 0.0;
  double last_update = 0.0;
  double max_chi = -std::numeric_limits<double>::infinity();  // over all iterates
  std::vector<double> updates;                                // sup-norm update per step
  std::vector<std::pair<double, double>> energy;              // (flow time, energy(u, 2G))
  std::string message;

  Vec node(int j) const { return Vec(u.row(j).transpose()); }
};

namespace detail {

inline bool edge_node(const Grid& g, int node) {
  const auto m = g.multi(node);
  for (int k = 0; k < g.d(); ++k)
    if (m[k] == 0 || m[k] == g.count[k] - 1) return true;
  return false;
}

/// L_M u - f at an interior node: generator, Christoffel quadratic term, drift.
inline Vec tension_at(const Grid& g, const Eigen::MatrixXd& u, int j, const NodeCoeffs& cf, const Chart& chart,
                      const DriftField& f, const Vec& b) {
  const int n = static_cast<int>(u.cols()), d = g.d();
  const Mat J = jacobian(g, u, j, n);
  const Mat z = J * cf.sigma[j];
  const Vec uj = Vec(u.row(j).transpose());
  Vec r = -f(b, uj, z);
  for (int i = 0; i < n; ++i) {
    double Lu = 0.0;
    for (int a = 0; a < d; ++a) Lu += 0.5 * cf.a[j](a, a) * d2(g, u, j, i, a) + cf.b[j][a] * J(i, a);
    if (d == 2) Lu += cf.a[j](0, 1) * d01(g, u, j, i);
    r[i] += Lu;
  }
  if (!chart.flat()) r += 0.5 * christoffel_contract(christoffel_unchecked(chart, uj), z);
  return r;
}

}  // namespace detail

/// Dirichlet energy 1/2 a^{ab} g(u)(d_a u, d_b u) over cells plus potential_weight * G by the
/// trapezoid rule; volume element det(a)^{-1/2}.
inline double energy(const Grid& g, const Eigen::MatrixXd& u, const Chart& chart, const DiffusionSpec& spec,
                     const ScalarField* G = nullptr, double potential_weight = 1.0) {
  const int d = g.d(), n = static_cast<int>(u.cols());
  auto vol = [&](const Vec& b) { return 1.0 / std::sqrt(spec.a(b).determinant()); };
  auto row = [&](int node) { return Vec(u.row(node).transpose()); };
  double E = 0.0;
  const double cell = d == 1 ? g.dx : g.dx * g.dx;
  const int cx = g.count[0] - 1, cy = d == 2 ? g.count[1] - 1 : 1;
  for (int j = 0; j < cy; ++j)
    for (int i = 0; i < cx; ++i) {
      Mat D(n, d);
      Vec mid(d), ubar;
      if (d == 1) {
        D.col(0) = (row(i + 1) - row(i)) / g.dx;
        ubar = 0.5 * (row(i) + row(i + 1));
        mid[0] = g.box.lo[0] + (i + 0.5) * g.dx;
      } else {
        const Vec u00 = row(g.index(i, j)), u10 = row(g.index(i + 1, j));
        const Vec u01 = row(g.index(i, j + 1)), u11 = row(g.index(i + 1, j + 1));
        D.col(0) = 0.5 * ((u10 - u00) + (u11 - u01)) / g.dx;
        D.col(1) = 0.5 * ((u01 - u00) + (u11 - u10)) / g.dx;
        ubar = 0.25 * (u00 + u10 + u01 + u11);
        mid = vec({g.box.lo[0] + (i + 0.5) * g.dx, g.box.lo[1] + (j + 0.5) * g.dx});
      }
      const Mat a = spec.a(mid);
      const Mat gm = chart.flat() ? Mat(Mat::Identity(n, n)) : chart.metric(ubar);
      E += 0.5 * (a * D.transpose() * gm * D).trace() * vol(mid) * cell;
    }
  if (G && potential_weight != 0.0) {
    for (int node = 0; node < g.nodes(); ++node) {
      const auto m = g.multi(node);
      double w = cell;
      for (int k = 0; k < d; ++k)
        if (m[k] == 0 || m[k] == g.count[k] - 1) w *= 0.5;
      const Vec b = g.point(node);
      E += potential_weight * w * (*G)(row(node)) * vol(b);
    }
  }
  return E;
}

inline double energy(const FlowResult& r, const DirichletProblem& p, double potential_weight = 1.0) {
  return energy(r.grid, r.u, p.chart(), p.spec, p.potential ? &*p.potential : nullptr, potential_weight);
}

struct TensionResidual {
  Eigen::VectorXd value;  // |L_M u - f|_r per node, 0 on boundary nodes
  double max_interior = 0.0;
  int worst_node = -1;
};

/// Finite-difference tension field minus drift, in the target's Riemannian norm.
inline TensionResidual tension_residual(const Grid& g, const Eigen::MatrixXd& u, const DiffusionSpec& spec,
                                        const Chart& chart, const DriftField& f) {
  if (u.rows() != g.nodes() || u.cols() != chart.dim()) fail(ErrorKind::dimension, "tension_residual: map shape");
  const detail::NodeCoeffs cf = detail::node_coeffs(spec, g);
  TensionResidual t;
  t.value = Eigen::VectorXd::Zero(g.nodes());
  for (int j = 0; j < g.nodes(); ++j) {
    if (detail::edge_node(g, j)) continue;
    const Vec uj = Vec(u.row(j).transpose());
    const Vec r = detail::tension_at(g, u, j, cf, chart, f, g.point(j));
    t.value[j] = riemannian_norm(chart, uj, r);
    if (t.value[j] > t.max_interior || t.worst_node < 0) {
      t.max_interior = std::max(t.max_interior, t.value[j]);
      t.worst_node = j;
    }
  }
  return t;
}

/// Relaxation u_s = L u + 1/2 Gamma(u)(grad u sigma, grad u sigma) - f with u pinned to phi-bar
/// on the boundary. With f = D_2 G this is the L^2 gradient flow of 1/2 energy(u, 2G).
inline FlowResult harmonic_map_flow(const DirichletProblem& p, double dx, double S, const RelaxationOptions& opt = {}) {
  validate_problem(p);
  if (!(S > 0)) fail(ErrorKind::config, "flow horizon must be positive");
  const int n = p.n();
  FlowResult out;
  out.n = n;
  out.grid = make_grid(p.base, dx);
  const Grid& g = out.grid;
  for (int k = 0; k < g.d(); ++k)
    if (std::abs(g.box.hi[k] - p.base.hi[k]) > 1e-9 * (1 + std::abs(p.base.hi[k])))
      fail(ErrorKind::config, "flow grid spacing must divide the base box");
  const detail::NodeCoeffs cf = detail::node_coeffs(p.spec, g);
  const double cfl = 0.4 * dx * dx / std::max(cf.max_eig, 1e-300);
  out.dt = opt.dt > 0 ? opt.dt : cfl;
  if (out.dt > cfl * (1 + 1e-12)) fail(ErrorKind::config, "CFL violated: dt > 0.4 dx^2 / max|sigma sigma^T|");
  const int N = g.nodes();
  std::vector<Vec> pts(N);
  for (int j = 0; j < N; ++j) pts[j] = g.point(j);

  out.u.resize(N, n);
  Vec mean = Vec::Zero(n);
  int edges = 0;
  for (int j = 0; j < N; ++j)
    if (detail::edge_node(g, j)) {
      const Vec v = p.boundary(pts[j]);
      out.u.row(j) = v.transpose();
      mean += v;
      ++edges;
    }
  mean /= edges;
  for (int j = 0; j < N; ++j)
    if (!detail::edge_node(g, j)) out.u.row(j) = (opt.initial ? opt.initial(pts[j]) : mean).transpose();

  auto track_chi = [&](const Eigen::MatrixXd& u) {
    for (int j = 0; j < N; ++j) out.max_chi = std::max(out.max_chi, p.target.chi(Vec(u.row(j).transpose())));
  };
  const ScalarField* G = p.potential ? &*p.potential : nullptr;
  auto record_energy = [&]() { out.energy.push_back({out.time, energy(g, out.u, p.chart(), p.spec, G, 2.0)}); };
  track_chi(out.u);
  if (opt.energy_every > 0) record_energy();

  const long max_steps = static_cast<long>(std::ceil(S / out.dt - 1e-9));
  Eigen::MatrixXd next = out.u;
  int quiet = 0;
  for (long s = 0; s < max_steps; ++s) {
    double upd = 0.0;
    for (int j = 0; j < N; ++j) {
      if (detail::edge_node(g, j)) continue;
      const Vec r = detail::tension_at(g, out.u, j, cf, p.chart(), p.f, pts[j]);
      for (int i = 0; i < n; ++i) {
        next(j, i) = out.u(j, i) + out.dt * r[i];
        upd = std::max(upd, std::abs(out.dt * r[i]));
      }
    }
    if (!next.allFinite()) throw BlowUpError(s + 1, -1, "harmonic map flow produced a non-finite value");
    for (int j = 0; j < N; ++j)
      if (!p.chart().contains(Vec(next.row(j).transpose()))) {
        out.left_chart = true;
        out.message = "flow left the target chart at step " + std::to_string(s + 1);
        return out;
      }
    out.u.swap(next);
    ++out.steps;
    out.time = out.steps * out.dt;
    out.last_update = upd;
    out.updates.push_back(upd);
    track_chi(out.u);
    if (opt.energy_every > 0 && out.steps % opt.energy_every == 0) record_energy();
    quiet = upd < opt.tol ? quiet + 1 : 0;
    if (quiet >= opt.consecutive) {
      out.converged = true;
      out.message = "converged";
      return out;
    }
  }
  out.message = "not converged at flow horizon " + std::to_string(S) + " (last update " + std::to_string(out.last_update) + ")";
  return out;
}

/// Multilinear interpolation of the flow's map at a base point.
inline Vec flow_value(const FlowResult& r, const Vec& x) {
  Vec v = Vec::Zero(r.n);
  for (const auto& [node, w] : detail::interp_weights(r.grid, x)) v += w * r.node(node);
  return v;
}

/// Largest energy increase between consecutive trace entries (non-positive for descent).
inline double max_energy_increase(const FlowResult& r) {
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < r.energy.size(); ++i) worst = std::max(worst, r.energy[i].second - r.energy[i - 1].second);
  return worst;
}

inline json to_json(const FlowResult& r) {
  return {{"converged", r.converged}, {"left_chart", r.left_chart}, {"steps", r.steps},
          {"dt", r.dt},               {"time", r.time},             {"last_update", r.last_update},
          {"max_chi", r.max_chi},     {"nodes", r.grid.nodes()},    {"dx", r.grid.dx},
          {"message", r.message}};
}

inline void write_flow_csv(std::ostream& os, const FlowResult& r) {
  os << "node";
  for (int k = 0; k < r.grid.d(); ++k) os << ",b" << k + 1;
  for (int i = 0; i < r.n; ++i) os << ",u" << i + 1;
  os << "\n";
  os.precision(17);
  for (int j = 0; j < r.grid.nodes(); ++j) {
    os << j;
    const Vec b = r.grid.point(j);
    for (int k = 0; k < b.size(); ++k) os << "," << b[k];
    for (int i = 0; i < r.n; ++i) os << "," << r.u(j, i);
    os << "\n";
  }
}

inline void write_flow_trace_csv(std::ostream& os, const FlowResult& r) {
  os << "step,update\n";
  os.precision(17);
  for (std::size_t s = 0; s < r.updates.size(); ++s) os << s + 1 << "," << r.updates[s] << "\n";
}

}  // namespace mbsde
