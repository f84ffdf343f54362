#pragma once

#include "mbsde/pdesolver.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>

namespace mbsde {

enum class Provenance { pde_assembled, lsmc };

inline const char* to_string(Provenance p) { return p == Provenance::pde_assembled ? "pde-assembled" : "lsmc"; }

struct BSDESolution {
  std::vector<PathBundle> paths;  // X and Z filled
  Provenance provenance = Provenance::pde_assembled;
  int n = 1;
  int dW = 1;
  double T = 1.0;
  std::string terminal_name;
  double x0 = 0.0;  // first component of X_0 averaged over paths
  double x0_se = 0.0;
  Vec X0;
};

/// X_t = u(T - t, B_t), Z_t = Z-field(T - t, B_t) along each path. With F given, the terminal
/// row uses F(B_T) itself instead of interpolating the initial PDE level.
inline BSDESolution assemble_solution(const SpaceTimeField& field, const ZField& zf, std::vector<PathBundle> paths,
                                      const TerminalFn* F = nullptr) {
  BSDESolution sol;
  sol.n = field.n;
  sol.dW = zf.dW;
  sol.T = field.T;
  sol.terminal_name = field.terminal_name;
  for (PathBundle& p : paths) {
    if (p.B.cols() != field.grid.d()) fail(ErrorKind::dimension, "assemble_solution: path base dimension differs");
    if (p.t.back() > field.T + 1e-12) fail(ErrorKind::extrapolation, "assemble_solution: path horizon exceeds T");
    const int N = p.steps();
    p.X.resize(N + 1, field.n);
    p.Z.resize(N + 1, field.n * zf.dW);
    for (int k = 0; k <= N; ++k) {
      const double tau = std::max(0.0, field.T - p.t[k]);
      const Vec b = p.base(k);
      p.X.row(k) = (F && tau == 0.0 ? (*F)(b) : field_value(field, tau, b)).transpose();
      p.set_z(k, zf.value(tau, b));
    }
  }
  sol.paths = std::move(paths);
  sol.X0 = sol.paths.empty() ? Vec() : Vec(sol.paths.front().x(0));
  if (!sol.paths.empty()) sol.x0 = sol.X0[0];
  return sol;
}

struct ResidualSummary {
  std::vector<double> max_step;    // max_k |rho_k| per path
  std::vector<double> mean_step;   // mean_k |rho_k| per path
  std::vector<double> integrated;  // max_k |sum_{m<k} rho_m| per path
  double median_max = 0, median_mean = 0, median_integrated = 0;
  double worst = 0;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t h = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + h, v.end());
  const double hi = v[h];
  if (v.size() % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + h));
}

}  // namespace detail

/// rho_k = X_{k+1} - X_k - Z_k dW_k - (-1/2 Gamma(X_k)(Z_k, Z_k) + f(B_k, X_k, Z_k)) dt.
inline ResidualSummary residual_check(const BSDESolution& sol, const Chart& chart, const DriftField& f) {
  ResidualSummary r;
  for (const PathBundle& p : sol.paths) {
    double mx = 0, mean = 0, integ = 0;
    Vec acc = Vec::Zero(sol.n);
    const int N = p.steps();
    for (int k = 0; k < N; ++k) {
      const double dt = p.t[k + 1] - p.t[k];
      const Vec x = p.x(k);
      const Mat z = p.z(k, sol.n, sol.dW);
      Vec drift = f(p.base(k), x, z);
      if (!chart.flat()) drift -= 0.5 * christoffel_contract(christoffel_unchecked(chart, x), z);
      const Vec rho = p.x(k + 1) - x - z * p.noise(k) - drift * dt;
      mx = std::max(mx, rho.norm());
      mean += rho.norm() / N;
      acc += rho;
      integ = std::max(integ, acc.norm());
    }
    r.max_step.push_back(mx);
    r.mean_step.push_back(mean);
    r.integrated.push_back(integ);
    r.worst = std::max(r.worst, mx);
  }
  r.median_max = detail::median(r.max_step);
  r.median_mean = detail::median(r.mean_step);
  r.median_integrated = detail::median(r.integrated);
  return r;
}

inline json to_json(const ResidualSummary& r) {
  return json{{"median_max_step", r.median_max}, {"median_mean_step", r.median_mean},
              {"median_integrated", r.median_integrated}, {"worst_step", r.worst}, {"paths", r.max_step.size()}};
}

/// Largest |X_T - F(B_T)| over paths.
inline double terminal_mismatch(const BSDESolution& sol, const TerminalFn& F) {
  double m = 0.0;
  for (const PathBundle& p : sol.paths) m = std::max(m, (p.x(p.steps()) - F(p.base(p.steps()))).norm());
  return m;
}

/// Tensor monomials of total degree <= deg in d variables.
struct PolyBasis {
  int d = 1;
  int degree = 2;
  std::vector<std::array<int, 2>> exps;

  PolyBasis(int d_, int deg) : d(d_), degree(deg) {
    if (d < 1 || d > 2) fail(ErrorKind::dimension, "polynomial basis supports d <= 2");
    if (deg < 0 || deg > 6) fail(ErrorKind::config, "polynomial degree must lie in [0, 6]");
    for (int t = 0; t <= deg; ++t)
      for (int a = t; a >= 0; --a) {
        const int b = t - a;
        if (d == 1 && b > 0) continue;
        exps.push_back({a, b});
      }
  }
  int size() const { return static_cast<int>(exps.size()); }
  /// out must hold size() values
  void eval(const Vec& xi, double* out) const {
    for (int q = 0; q < size(); ++q) {
      double v = std::pow(xi[0], exps[q][0]);
      if (d == 2) v *= std::pow(xi[1], exps[q][1]);
      out[q] = v;
    }
  }
};

struct LsmcOptions {
  int degree = 2;
  int max_picard = 10;
  double picard_tol = 1e-6;
  std::uint64_t seed = 1;
};

/// Least-squares Monte Carlo: backward regression of X and Z on polynomials of B_k.
inline BSDESolution lsmc_solve(const DiffusionSpec& spec, const GammaDrift& gamma, const TerminalFn& F, const Vec& y,
                               const std::vector<double>& grid, int path_count, const LsmcOptions& opt = {}) {
  const int n = gamma.chart().dim(), dW = spec.dW, d = spec.d;
  if (F.n != n || F.d != d) fail(ErrorKind::dimension, "lsmc: terminal map dimensions do not match");
  if (path_count < 10) fail(ErrorKind::statistics, "lsmc needs at least 10 paths");
  BSDESolution sol;
  sol.provenance = Provenance::lsmc;
  sol.n = n;
  sol.dW = dW;
  sol.T = grid.back();
  sol.terminal_name = F.name;
  sol.paths = simulate_paths(spec, y, grid, opt.seed, path_count);
  const int N = static_cast<int>(grid.size()) - 1;
  const int M = path_count;
  for (PathBundle& p : sol.paths) {
    p.X.resize(N + 1, n);
    p.Z = Eigen::MatrixXd::Zero(N + 1, n * dW);
    p.X.row(N) = F(p.base(N)).transpose();
  }
  const PolyBasis basis(d, opt.degree);
  Eigen::MatrixXd Phi, Y(M, n * dW + n);
  for (int k = N - 1; k >= 0; --k) {
    const double dt = grid[k + 1] - grid[k];
    // standardize B_k; at a deterministic time level only the constant survives
    Vec mean = Vec::Zero(d), sd = Vec::Zero(d);
    for (const PathBundle& p : sol.paths) mean += p.base(k);
    mean /= M;
    for (const PathBundle& p : sol.paths) sd += (p.base(k) - mean).cwiseAbs2();
    sd = (sd / M).cwiseSqrt();
    const bool degenerate = sd.maxCoeff() <= 1e-12 * (1 + mean.norm());
    const int P = degenerate ? 1 : basis.size();
    Phi.resize(M, P);
    for (int m = 0; m < M; ++m) {
      const PathBundle& p = sol.paths[m];
      if (degenerate) {
        Phi(m, 0) = 1.0;
      } else {
        Vec xi(d);
        for (int a = 0; a < d; ++a) xi[a] = sd[a] > 0 ? (p.B(k, a) - mean[a]) / sd[a] : 0.0;
        std::array<double, 64> row{};
        basis.eval(xi, row.data());
        for (int q = 0; q < P; ++q) Phi(m, q) = row[q];
      }
      for (int i = 0; i < n; ++i) Y(m, n * dW + i) = p.X(k + 1, i);
    }
    // standardized columns can still be collinear (e.g. one coordinate frozen)
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Phi);
    if (qr.rank() < P) fail(ErrorKind::basis, "lsmc: regression matrix is rank deficient at step " + std::to_string(k));
    Eigen::MatrixXd fit(M, n * dW + n);
    fit.rightCols(n) = Phi * qr.solve(Y.rightCols(n));
    // Z from the centred increment: same conditional mean, far less variance
    for (int m = 0; m < M; ++m)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < dW; ++j)
          Y(m, i * dW + j) = (Y(m, n * dW + i) - fit(m, n * dW + i)) * sol.paths[m].dW(k, j) / dt;
    fit.leftCols(n * dW) = Phi * qr.solve(Y.leftCols(n * dW));
    for (int m = 0; m < M; ++m) {
      PathBundle& p = sol.paths[m];
      Mat z(n, dW);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < dW; ++j) z(i, j) = fit(m, i * dW + j);
      p.set_z(k, z);
      const Vec ex = Vec(fit.row(m).segment(n * dW, n).transpose());
      const Vec b = p.base(k);
      Vec x = ex;
      bool ok = false;
      for (int it = 0; it < opt.max_picard; ++it) {
        const Vec xn = ex + dt * gamma(b, x, z);
        const double change = (xn - x).norm();
        x = xn;
        if (change <= opt.picard_tol) {
          ok = true;
          break;
        }
      }
      if (!ok) fail(ErrorKind::convergence, "lsmc: Picard iteration did not converge at step " + std::to_string(k));
      p.X.row(k) = x.transpose();
    }
  }
  // SE of the plain Monte Carlo estimator F(B_T) + sum_k gamma_k dt of X_0
  Vec acc = Vec::Zero(n);
  for (const PathBundle& p : sol.paths) acc += p.x(0);
  sol.X0 = acc / M;
  sol.x0 = sol.X0[0];
  std::vector<double> xi;
  for (const PathBundle& p : sol.paths) {
    double v = p.X(N, 0);
    for (int k = 0; k < N; ++k)
      v += (grid[k + 1] - grid[k]) * gamma(p.base(k), p.x(k), p.z(k, n, dW))[0];
    xi.push_back(v);
  }
  double m1 = 0.0, s2 = 0.0;
  for (double v : xi) m1 += v / M;
  for (double v : xi) s2 += (v - m1) * (v - m1);
  sol.x0_se = std::sqrt(s2 / (M - 1) / M);
  return sol;
}

/// Arclength reparametrization of a one-dimensional chart.
struct Reduction {
  Chart curved;
  Chart flat;
  double ref = 0.0;           // s(ref) = 0
  std::vector<double> knots;  // fine table of x and s(x)
  std::vector<double> svals;

  double sqrt_g(double x) const { return std::sqrt(curved.metric_unchecked(vec({x}))(0, 0)); }

  double s(double x) const {
    using boost::math::quadrature::gauss;
    const Box& b = curved.bounds();
    if (x < b.lo[0] - 1e-12 || x > b.hi[0] + 1e-12) fail(ErrorKind::domain, "reduce_1d: point outside the interval");
    const auto it = std::upper_bound(knots.begin(), knots.end(), x);
    const std::size_t i = std::clamp<std::size_t>(static_cast<std::size_t>(it - knots.begin()), 1, knots.size()) - 1;
    if (x == knots[i]) return svals[i];
    // knot spacing is small enough for a fixed 10-point rule to reach rounding level
    return svals[i] + gauss<double, 10>::integrate([this](double u) { return sqrt_g(u); }, knots[i], x);
  }

  /// Newton on s(x) = target from the tabulated bracket, bisection-safeguarded.
  double inverse(double target) const {
    if (target < svals.front() - 1e-12 || target > svals.back() + 1e-12)
      fail(ErrorKind::domain, "reduce_1d: arclength value outside the range");
    const auto it = std::upper_bound(svals.begin(), svals.end(), target);
    const std::size_t i = std::clamp<std::size_t>(static_cast<std::size_t>(it - svals.begin()), 1, svals.size() - 1) - 1;
    double a = knots[i], b = knots[i + 1];
    double x = a + (b - a) * (target - svals[i]) / (svals[i + 1] - svals[i]);
    for (int iter = 0; iter < 60; ++iter) {
      const double r = s(x) - target;
      if (std::abs(r) < 1e-14) break;
      if (r > 0) b = x;
      else a = x;
      double xn = x - r / sqrt_g(x);
      if (!(xn > a && xn < b)) xn = 0.5 * (a + b);
      if (std::abs(xn - x) < 1e-15) break;
      x = xn;
    }
    return x;
  }

  /// fhat(b, s, zhat) = sqrt(g) f(b, x(s), zhat / sqrt(g)).
  DriftField transform(const DriftField& f) const {
    DriftField out = f;
    auto self = std::make_shared<const Reduction>(*this);
    out.eval = [self, f](const Vec& b, const Vec& sv, const Mat& zh) {
      const double x = self->inverse(sv[0]);
      const double r = self->sqrt_g(x);
      return Vec(r * f(b, vec({x}), Mat(zh / r)));
    };
    out.x0 = vec({s(f.x0.size() == 1 ? f.x0[0] : ref)});
    out.description = f.description + " in arclength";
    return out;
  }

  TerminalFn transform(const TerminalFn& F) const {
    auto self = std::make_shared<const Reduction>(*this);
    return {[self, F](const Vec& b) { return vec({self->s(F(b)[0])}); }, F.d, 1, F.name + " in arclength"};
  }
};

inline Reduction reduce_1d(const Chart& chart, int table = 2048) {
  using boost::math::quadrature::gauss;
  if (chart.dim() != 1) fail(ErrorKind::dimension, "reduce_1d requires a one-dimensional chart");
  Reduction R;
  R.curved = chart;
  const double lo = chart.bounds().lo[0], hi = chart.bounds().hi[0];
  for (int i = 0; i <= table; ++i) {
    const double x = lo + (hi - lo) * i / table;
    const double g = chart.metric_unchecked(vec({x}))(0, 0);
    if (!(g > 0) || !std::isfinite(g)) fail(ErrorKind::metric, "reduce_1d: metric is not positive at x=" + std::to_string(x));
    R.knots.push_back(x);
  }
  R.ref = (lo <= 0.0 && 0.0 <= hi) ? 0.0 : lo;
  auto sg = [&](double u) { return std::sqrt(chart.metric_unchecked(vec({u}))(0, 0)); };
  R.svals.assign(R.knots.size(), 0.0);
  for (std::size_t i = 1; i < R.knots.size(); ++i)
    R.svals[i] = R.svals[i - 1] + gauss<double, 10>::integrate(sg, R.knots[i - 1], R.knots[i]);
  // shift so that s(ref) = 0
  const auto it = std::upper_bound(R.knots.begin(), R.knots.end(), R.ref);
  const std::size_t i0 = std::clamp<std::size_t>(static_cast<std::size_t>(it - R.knots.begin()), 1, R.knots.size()) - 1;
  const double s_ref =
      R.svals[i0] + (R.ref == R.knots[i0] ? 0.0 : gauss<double, 10>::integrate(sg, R.knots[i0], R.ref));
  for (double& v : R.svals) v -= s_ref;
  R.flat = charts::flat(make_box({R.svals.front()}, {R.svals.back()}));
  return R;
}

/// Per-path long CSV: path, t, B..., X..., Z...
inline void write_solution_csv(std::ostream& os, const BSDESolution& sol, int max_paths = 100) {
  if (sol.paths.empty()) return;
  const int d = static_cast<int>(sol.paths.front().B.cols());
  os << "path,t";
  for (int k = 0; k < d; ++k) os << ",B" << k + 1;
  for (int i = 0; i < sol.n; ++i) os << ",X" << i + 1;
  for (int i = 0; i < sol.n * sol.dW; ++i) os << ",Z" << i + 1;
  os << "\n";
  os.precision(17);
  const int count = std::min<int>(max_paths, static_cast<int>(sol.paths.size()));
  for (int q = 0; q < count; ++q) {
    const PathBundle& p = sol.paths[q];
    for (int k = 0; k <= p.steps(); ++k) {
      os << q << "," << p.t[k];
      for (int a = 0; a < d; ++a) os << "," << p.B(k, a);
      for (int i = 0; i < sol.n; ++i) os << "," << p.X(k, i);
      for (int i = 0; i < sol.n * sol.dW; ++i) os << "," << p.Z(k, i);
      os << "\n";
    }
  }
}

}  // namespace mbsde
