#pragma once

#include "mbsde/drift.hpp"
#include "mbsde/forward.hpp"

#include <array>
#include <cmath>
#include <memory>

namespace mbsde {

/// Terminal map F: R^d -> R^n, constant off a compact set.
struct TerminalFn {
  std::function<Vec(const Vec&)> eval;
  int d = 1;
  int n = 1;
  std::string name;
  Vec operator()(const Vec& b) const { return eval(b); }
};

/// Uniform tensor grid on a box in R^d (d <= 2).
struct Grid {
  Box box;
  double dx = 0.1;
  std::array<int, 2> count{1, 1};

  int d() const { return box.dim(); }
  int nodes() const { return d() == 1 ? count[0] : count[0] * count[1]; }
  int index(int i, int j = 0) const { return i + count[0] * j; }
  std::array<int, 2> multi(int node) const { return {node % count[0], node / count[0]}; }
  int stride(int k) const { return k == 0 ? 1 : count[0]; }
  Vec point(int node) const {
    const auto m = multi(node);
    Vec x(d());
    for (int k = 0; k < d(); ++k) x[k] = box.lo[k] + m[k] * dx;
    return x;
  }
};

/// Grid on the box whose sides are whole multiples of dx (hi rounded outward).
inline Grid make_grid(const Box& box, double dx) {
  if (box.dim() < 1 || box.dim() > 2) fail(ErrorKind::dimension, "PDE grids support base dimension d <= 2");
  if (!(dx > 0)) fail(ErrorKind::config, "grid spacing must be positive");
  Grid g;
  g.dx = dx;
  g.box = box;
  for (int k = 0; k < box.dim(); ++k) {
    const int cells = std::max(2, static_cast<int>(std::ceil((box.hi[k] - box.lo[k]) / dx - 1e-9)));
    g.count[k] = cells + 1;
    g.box.hi[k] = box.lo[k] + cells * dx;
  }
  if (static_cast<long>(g.count[0]) * g.count[1] > 4000000) fail(ErrorKind::config, "grid too large");
  return g;
}

enum class Scheme { explicit_euler, semi_implicit };

inline const char* to_string(Scheme s) { return s == Scheme::explicit_euler ? "explicit" : "semi-implicit"; }

struct GridParams {
  Box support;        // box outside which F is constant
  double dx = 0.05;
  double dt = 1e-3;
  double T = 1.0;
  bool pad = true;    // widen by 4 sqrt(T) sigma_sup
  int stride = 0;     // store every stride-th level; 0 picks about 1000 levels
};

/// u(tau, x) on the grid, tau = T - t the PDE time; levels stored every `stride` steps.
struct SpaceTimeField {
  Grid grid;
  int n = 1;
  double T = 1.0;
  double dt = 1e-3;
  int steps = 0;
  int stride = 1;
  std::vector<double> tau;
  std::vector<Eigen::MatrixXd> levels;  // nodes x n
  Scheme scheme = Scheme::explicit_euler;
  double epsilon = 0.0;
  double cfl_ratio = 0.0;
  double growth_C = 0.0;  // max over steps of (|u^{k+1}|_inf / |u^k|_inf - 1)/dt
  std::string terminal_name;

  Vec node_value(int level, int node) const { return Vec(levels[level].row(node).transpose()); }
  const Eigen::MatrixXd& final_level() const { return levels.back(); }
};

namespace detail {

/// First derivative along axis k (central; one-sided at edges).
inline double d1(const Grid& g, const Eigen::MatrixXd& u, int node, int comp, int k) {
  const auto m = g.multi(node);
  const int s = g.stride(k);
  const int N = g.count[k];
  if (m[k] == 0) return (u(node + s, comp) - u(node, comp)) / g.dx;
  if (m[k] == N - 1) return (u(node, comp) - u(node - s, comp)) / g.dx;
  return (u(node + s, comp) - u(node - s, comp)) / (2 * g.dx);
}

/// Second derivative along axis k; the affine ghost makes it vanish on edges.
inline double d2(const Grid& g, const Eigen::MatrixXd& u, int node, int comp, int k) {
  const auto m = g.multi(node);
  const int s = g.stride(k);
  if (m[k] == 0 || m[k] == g.count[k] - 1) return 0.0;
  return (u(node + s, comp) - 2 * u(node, comp) + u(node - s, comp)) / (g.dx * g.dx);
}

/// Mixed derivative d_0 d_1 by differencing the axis-0 gradient along axis 1.
inline double d01(const Grid& g, const Eigen::MatrixXd& u, int node, int comp) {
  const auto m = g.multi(node);
  const int s = g.stride(1);
  auto g0 = [&](int nd) { return d1(g, u, nd, comp, 0); };
  if (m[1] == 0) return (g0(node + s) - g0(node)) / g.dx;
  if (m[1] == g.count[1] - 1) return (g0(node) - g0(node - s)) / g.dx;
  return (g0(node + s) - g0(node - s)) / (2 * g.dx);
}

inline Mat jacobian(const Grid& g, const Eigen::MatrixXd& u, int node, int n) {
  Mat J(n, g.d());
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < g.d(); ++k) J(i, k) = d1(g, u, node, i, k);
  return J;
}

/// Thomas algorithm; sub/diag/sup/rhs of equal length, sub[0] and sup[N-1] ignored.
inline void thomas(std::vector<double> sub, std::vector<double> diag, std::vector<double> sup, std::vector<double>& rhs) {
  const std::size_t N = diag.size();
  for (std::size_t i = 1; i < N; ++i) {
    const double w = sub[i] / diag[i - 1];
    diag[i] -= w * sup[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  rhs[N - 1] /= diag[N - 1];
  for (std::size_t i = N - 1; i-- > 0;) rhs[i] = (rhs[i] - sup[i] * rhs[i + 1]) / diag[i];
}

/// Per-node coefficients of the base diffusion (time independent).
struct NodeCoeffs {
  std::vector<Mat> a, sigma;
  std::vector<Vec> b;
  double max_eig = 0.0;
};

inline NodeCoeffs node_coeffs(const DiffusionSpec& spec, const Grid& g) {
  NodeCoeffs c;
  for (int j = 0; j < g.nodes(); ++j) {
    const Vec x = g.point(j);
    c.sigma.push_back(spec.sigma(x));
    c.a.push_back(c.sigma.back() * c.sigma.back().transpose());
    c.b.push_back(spec.b(x));
    Eigen::SelfAdjointEigenSolver<Mat> es(c.a.back(), Eigen::EigenvaluesOnly);
    c.max_eig = std::max(c.max_eig, es.eigenvalues().maxCoeff());
  }
  return c;
}

}  // namespace detail

/// Working window: support box padded by 4 sqrt(T) sigma_sup, aligned to dx.
inline Grid working_grid(const DiffusionSpec& spec, const GridParams& gp) {
  if (gp.support.dim() != spec.d) fail(ErrorKind::dimension, "support box dimension differs from the base dimension");
  Box box = gp.support;
  if (gp.pad) {
    const double pad = 4.0 * std::sqrt(gp.T) * sigma_sup(spec, gp.support);
    const double cells = std::ceil(pad / gp.dx - 1e-9);
    box.lo.array() -= cells * gp.dx;
    box.hi.array() += cells * gp.dx;
  }
  return make_grid(box, gp.dx);
}

/// Solve du/dtau = L u + gamma(x, u, grad u sigma), u(0) = F, on [0, T].
inline SpaceTimeField solve_parabolic(const DiffusionSpec& spec, const GammaDrift& gamma, const TerminalFn& F,
                                      const GridParams& gp, Scheme scheme = Scheme::explicit_euler) {
  const int n = gamma.chart().dim();
  if (n > 3) fail(ErrorKind::dimension, "PDE solver supports target dimension n <= 3");
  if (F.n != n || F.d != spec.d) fail(ErrorKind::dimension, "terminal map dimensions do not match");
  if (gamma.drift().d != spec.d || gamma.drift().dW != spec.dW)
    fail(ErrorKind::dimension, "drift base/noise dimensions do not match the diffusion");
  if (!(gp.T > 0) || !(gp.dt > 0)) fail(ErrorKind::config, "T and dt must be positive");
  const Grid g = working_grid(spec, gp);
  const detail::NodeCoeffs cf = detail::node_coeffs(spec, g);
  const int d = g.d();
  if (scheme == Scheme::semi_implicit && d != 1) fail(ErrorKind::config, "semi-implicit scheme is available for d = 1 only");

  SpaceTimeField out;
  out.grid = g;
  out.n = n;
  out.T = gp.T;
  out.steps = std::max(1, static_cast<int>(std::ceil(gp.T / gp.dt - 1e-9)));
  out.dt = gp.T / out.steps;
  out.scheme = scheme;
  out.epsilon = gamma.params().epsilon;
  out.terminal_name = F.name;
  out.cfl_ratio = out.dt * cf.max_eig / (g.dx * g.dx);
  if (scheme == Scheme::explicit_euler && out.dt > 0.4 * g.dx * g.dx / std::max(cf.max_eig, 1e-300) * (1 + 1e-12))
    fail(ErrorKind::config, "CFL violated: dt > 0.4 dx^2 / max|sigma sigma^T| (dt=" + std::to_string(out.dt) + ")");
  out.stride = gp.stride > 0 ? gp.stride : std::max(1, out.steps / 1000);
  const double dt = out.dt;

  const int N = g.nodes();
  Eigen::MatrixXd u(N, n), next(N, n);
  for (int j = 0; j < N; ++j) u.row(j) = F(g.point(j)).transpose();
  out.levels.push_back(u);
  out.tau.push_back(0.0);
  std::vector<Vec> pts(N);
  for (int j = 0; j < N; ++j) pts[j] = g.point(j);

  std::vector<double> sub, diag, sup, rhs;
  for (int k = 0; k < out.steps; ++k) {
    for (int j = 0; j < N; ++j) {
      const Mat J = detail::jacobian(g, u, j, n);
      const Vec gam = gamma(pts[j], Vec(u.row(j).transpose()), Mat(J * cf.sigma[j]));
      for (int i = 0; i < n; ++i) {
        double incr = gam[i];
        if (scheme == Scheme::explicit_euler) {
          double Lu = 0.0;
          for (int a = 0; a < d; ++a) Lu += 0.5 * cf.a[j](a, a) * detail::d2(g, u, j, i, a) + cf.b[j][a] * J(i, a);
          if (d == 2) Lu += cf.a[j](0, 1) * detail::d01(g, u, j, i);
          incr += Lu;
        } else if (g.multi(j)[0] == 0 || g.multi(j)[0] == g.count[0] - 1) {
          incr += cf.b[j][0] * J(i, 0);  // edge rows keep the one-sided drift explicit
        }
        next(j, i) = u(j, i) + dt * incr;
      }
    }
    if (scheme == Scheme::semi_implicit) {
      const double h2 = g.dx * g.dx;
      sub.assign(N, 0.0);
      diag.assign(N, 1.0);
      sup.assign(N, 0.0);
      for (int j = 1; j < N - 1; ++j) {
        const double A = 0.5 * cf.a[j](0, 0) / h2, B = cf.b[j][0] / (2 * g.dx);
        sub[j] = -dt * (A - B);
        diag[j] = 1 + 2 * dt * A;
        sup[j] = -dt * (A + B);
      }
      for (int i = 0; i < n; ++i) {
        rhs.resize(N);
        for (int j = 0; j < N; ++j) rhs[j] = next(j, i);
        detail::thomas(sub, diag, sup, rhs);
        for (int j = 0; j < N; ++j) next(j, i) = rhs[j];
      }
    }
    for (int j = 0; j < N; ++j)
      if (!next.row(j).allFinite())
        throw BlowUpError(k + 1, j, "PDE blow-up at step " + std::to_string(k + 1) + ", node " + std::to_string(j));
    const double m0 = u.cwiseAbs().maxCoeff(), m1 = next.cwiseAbs().maxCoeff();
    if (m0 > 0) out.growth_C = std::max(out.growth_C, (m1 / m0 - 1.0) / dt);
    u.swap(next);
    if ((k + 1) % out.stride == 0 || k + 1 == out.steps) {
      out.levels.push_back(u);
      out.tau.push_back((k + 1) * dt);
    }
  }
  return out;
}

namespace detail {

/// Multilinear weights of x in the grid; throws if x is outside the window.
inline std::vector<std::pair<int, double>> interp_weights(const Grid& g, const Vec& x) {
  std::array<int, 2> i0{0, 0};
  std::array<double, 2> th{0, 0};
  for (int k = 0; k < g.d(); ++k) {
    const double s = (x[k] - g.box.lo[k]) / g.dx;
    if (s < -1e-9 || s > g.count[k] - 1 + 1e-9 || !std::isfinite(s))
      fail(ErrorKind::extrapolation, "point leaves the PDE working window");
    i0[k] = std::clamp(static_cast<int>(std::floor(s)), 0, g.count[k] - 2);
    th[k] = std::clamp(s - i0[k], 0.0, 1.0);
  }
  std::vector<std::pair<int, double>> w;
  if (g.d() == 1) {
    w.push_back({g.index(i0[0]), 1 - th[0]});
    w.push_back({g.index(i0[0] + 1), th[0]});
  } else {
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        w.push_back({g.index(i0[0] + a, i0[1] + b), (a ? th[0] : 1 - th[0]) * (b ? th[1] : 1 - th[1])});
  }
  return w;
}

/// Stored level pair bracketing tau with the linear weight of the upper one.
inline std::pair<int, double> time_bracket(const std::vector<double>& tau, double t) {
  if (t < -1e-12 || t > tau.back() + 1e-12) fail(ErrorKind::extrapolation, "time outside the solved horizon");
  auto it = std::lower_bound(tau.begin(), tau.end(), t - 1e-12);
  int hi = static_cast<int>(it - tau.begin());
  if (hi == 0) return {0, 0.0};
  hi = std::min<int>(hi, static_cast<int>(tau.size()) - 1);
  const double w = std::clamp((t - tau[hi - 1]) / (tau[hi] - tau[hi - 1]), 0.0, 1.0);
  return {hi - 1, w};
}

inline Eigen::RowVectorXd interp_rows(const std::vector<Eigen::MatrixXd>& levels, const std::vector<double>& tau,
                                      const Grid& g, double t, const Vec& x) {
  const auto [lo, w] = time_bracket(tau, t);
  const auto sw = interp_weights(g, x);
  Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(levels[lo].cols());
  for (const auto& [node, c] : sw) {
    r += (1 - w) * c * levels[lo].row(node);
    if (w > 0) r += w * c * levels[lo + 1].row(node);
  }
  return r;
}

}  // namespace detail

/// u(tau, x) by linear-in-time, multilinear-in-space interpolation.
inline Vec field_value(const SpaceTimeField& f, double tau, const Vec& x) {
  return Vec(detail::interp_rows(f.levels, f.tau, f.grid, tau, x).transpose());
}

/// Z(tau, x) = grad u sigma on the stored levels, rows flattened row-major (n x d_W).
struct ZField {
  Grid grid;
  int n = 1;
  int dW = 1;
  std::vector<double> tau;
  std::vector<Eigen::MatrixXd> levels;  // nodes x (n dW)

  Mat at_node(int level, int node) const {
    Mat z(n, dW);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dW; ++j) z(i, j) = levels[level](node, i * dW + j);
    return z;
  }
  Mat value(double t, const Vec& x) const {
    const Eigen::RowVectorXd r = detail::interp_rows(levels, tau, grid, t, x);
    Mat z(n, dW);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dW; ++j) z(i, j) = r[i * dW + j];
    return z;
  }
};

inline ZField gradient_field(const SpaceTimeField& f, const DiffusionSpec& spec) {
  ZField z;
  z.grid = f.grid;
  z.n = f.n;
  z.dW = spec.dW;
  z.tau = f.tau;
  const int N = f.grid.nodes();
  std::vector<Mat> sig(N);
  for (int j = 0; j < N; ++j) sig[j] = spec.sigma(f.grid.point(j));
  for (const Eigen::MatrixXd& u : f.levels) {
    Eigen::MatrixXd L(N, f.n * spec.dW);
    for (int j = 0; j < N; ++j) {
      const Mat Z = detail::jacobian(f.grid, u, j, f.n) * sig[j];
      for (int i = 0; i < f.n; ++i)
        for (int c = 0; c < spec.dW; ++c) L(j, i * spec.dW + c) = Z(i, c);
    }
    z.levels.push_back(std::move(L));
  }
  return z;
}

struct ZBoundReport {
  double max_norm = 0.0;
  double threshold = 0.0;  // 1/epsilon
  bool pass = true;
  bool thin_margin = false;  // passes with less than 5% headroom
  double tau = 0.0;
  Vec location;
};

inline ZBoundReport z_bound_report(const ZField& z, double epsilon) {
  ZBoundReport r;
  r.threshold = 1.0 / epsilon;
  r.location = z.grid.point(0);
  for (std::size_t l = 0; l < z.levels.size(); ++l)
    for (int j = 0; j < z.grid.nodes(); ++j) {
      const double m = z.levels[l].row(j).norm();
      if (m > r.max_norm) {
        r.max_norm = m;
        r.tau = z.tau[l];
        r.location = z.grid.point(j);
      }
    }
  r.pass = r.max_norm <= r.threshold;
  r.thin_margin = r.pass && (r.threshold - r.max_norm) < 0.05 * r.threshold;
  return r;
}

inline json to_json(const ZBoundReport& r) {
  return json{{"max_norm", r.max_norm}, {"threshold", r.threshold}, {"pass", r.pass}, {"thin_margin", r.thin_margin},
              {"tau", r.tau}, {"location", to_json(r.location)}};
}

struct EpsilonCertificate {
  double epsilon = 0.99;
  double L_F = 0.0;
  double C_flow = 0.0;
  double sigma_sup = 0.0;
  double T = 0.0;
  double bound = 0.0;  // B* = sigma_sup L_F sqrt(2 C_flow e^T)
  bool pass = true;
};

inline EpsilonCertificate choose_epsilon(double L_F, double sigma_sup, double C_flow, double T) {
  if (L_F < 0 || sigma_sup < 0 || C_flow < 0 || T <= 0) fail(ErrorKind::parameter, "choose_epsilon: inputs must be positive");
  EpsilonCertificate c;
  c.L_F = L_F;
  c.sigma_sup = sigma_sup;
  c.C_flow = C_flow;
  c.T = T;
  c.bound = sigma_sup * L_F * std::sqrt(2.0 * C_flow * std::exp(T));
  c.epsilon = c.bound > 0 ? std::min(0.99, 0.9 / c.bound) : 0.99;
  c.pass = 1.0 / c.epsilon >= c.bound;
  return c;
}

/// Re-validate a user-supplied epsilon against the bound.
inline EpsilonCertificate certify_epsilon(EpsilonCertificate c, double epsilon) {
  c.epsilon = epsilon;
  c.pass = 1.0 / epsilon >= c.bound;
  return c;
}

inline json to_json(const EpsilonCertificate& c) {
  return json{{"epsilon", c.epsilon}, {"L_F", c.L_F}, {"C_flow", c.C_flow}, {"sigma_sup", c.sigma_sup},
              {"T", c.T}, {"bound", c.bound}, {"pass", c.pass}};
}

/// Max Frobenius norm of the central-difference Jacobian of F on a grid over the box.
inline double terminal_lipschitz(const TerminalFn& F, const Box& box, double h) {
  const Grid g = make_grid(box, h);
  double m = 0.0;
  for (int j = 0; j < g.nodes(); ++j) {
    const Vec x = g.point(j);
    Mat J(F.n, F.d);
    for (int k = 0; k < F.d; ++k) {
      Vec xp = x, xm = x;
      xp[k] += 0.5 * h;
      xm[k] -= 0.5 * h;
      J.col(k) = (F(xp) - F(xm)) / h;
    }
    m = std::max(m, J.norm());
  }
  return m;
}

struct FlowOptions {
  double T = 1.0;
  double dt = 1e-3;
  int pairs = 8;
  int paths = 200;
  double separation = 0.1;
  std::uint64_t seed = 5;
};

/// max over start pairs of E|B_T^x - B_T^x'|^2 / |x - x'|^2, shared noise for both starts.
inline double estimate_flow_continuity(const DiffusionSpec& spec, const Box& starts, const FlowOptions& o = {}) {
  const std::vector<double> grid = uniform_grid(o.T, std::max(1, static_cast<int>(std::lround(o.T / o.dt))));
  std::mt19937_64 rng = make_stream(o.seed, 71);
  double best = 0.0;
  for (int p = 0; p < o.pairs; ++p) {
    const Vec x = uniform_in(starts, rng);
    const Vec x1 = x + o.separation * detail::unit_direction(spec.d, rng);
    double acc = 0.0;
    for (int i = 0; i < o.paths; ++i) {
      const PathBundle a = simulate_diffusion(spec, x, grid, o.seed, static_cast<std::uint64_t>(i));
      const PathBundle b = simulate_diffusion(spec, x1, grid, o.seed, static_cast<std::uint64_t>(i));
      acc += (a.base(a.steps()) - b.base(b.steps())).squaredNorm();
    }
    best = std::max(best, acc / o.paths / (x - x1).squaredNorm());
  }
  return best;
}

/// max chi(u) over every stored level and node against level + tol.
inline VerificationReport domain_invariance_check(const SpaceTimeField& f, const ConvexDomain& dom, double tol = 5e-3) {
  if (f.n != dom.dim()) fail(ErrorKind::dimension, "domain_invariance_check: field and domain dimensions differ");
  VerificationReport r("domain-invariance", tol);
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < f.levels.size(); ++l)
    for (int j = 0; j < f.grid.nodes(); ++j) {
      const Vec u = f.node_value(static_cast<int>(l), j);
      const double chi = dom.chart.contains(u) ? dom.chi(u) : std::numeric_limits<double>::infinity();
      worst = std::max(worst, chi);
      Vec w(f.grid.d() + 1);
      w[0] = f.tau[l];
      w.tail(f.grid.d()) = f.grid.point(j);
      r.observe(dom.level - chi, w);
    }
  r.extra = {{"max_chi", worst}, {"level", dom.level}};
  return r.finalize();
}

/// Long-format CSV rows: tau, x..., u^1..u^n for every stored level.
inline void write_field_csv(std::ostream& os, const SpaceTimeField& f) {
  os << "tau";
  for (int k = 0; k < f.grid.d(); ++k) os << ",x" << k + 1;
  for (int i = 0; i < f.n; ++i) os << ",u" << i + 1;
  os << "\n";
  os.precision(17);
  for (std::size_t l = 0; l < f.levels.size(); ++l)
    for (int j = 0; j < f.grid.nodes(); ++j) {
      os << f.tau[l];
      const Vec x = f.grid.point(j);
      for (int k = 0; k < x.size(); ++k) os << "," << x[k];
      for (int i = 0; i < f.n; ++i) os << "," << f.levels[l](j, i);
      os << "\n";
    }
}

}  // namespace mbsde
