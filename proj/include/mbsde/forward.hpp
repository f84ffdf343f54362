#pragma once

#include "mbsde/geometry/hessian.hpp"

#include <functional>
#include <limits>
#include <vector>

namespace mbsde {

/// Coefficients of dB = b(B) dt + sigma(B) dW.
struct DiffusionSpec {
  int d = 1;
  int dW = 1;
  std::function<Vec(const Vec&)> drift;
  std::function<Mat(const Vec&)> dispersion;
  bool constant = false;  // b and sigma independent of the state
  // declared bounds (informational; sigma_sup is measured where needed)
  double drift_bound = std::numeric_limits<double>::infinity();
  double sigma_bound = std::numeric_limits<double>::infinity();
  std::string description;

  Vec b(const Vec& x) const { return drift(x); }
  Mat sigma(const Vec& x) const { return dispersion(x); }
  Mat a(const Vec& x) const {
    const Mat s = dispersion(x);
    return s * s.transpose();
  }
};

inline DiffusionSpec constant_diffusion(const Vec& b, const Mat& sigma) {
  if (sigma.rows() != b.size()) fail(ErrorKind::dimension, "diffusion: sigma rows must equal d");
  DiffusionSpec s;
  s.d = static_cast<int>(b.size());
  s.dW = static_cast<int>(sigma.cols());
  s.drift = [b](const Vec&) { return b; };
  s.dispersion = [sigma](const Vec&) { return sigma; };
  s.constant = true;
  s.drift_bound = b.norm();
  s.sigma_bound = sigma.norm();
  s.description = "constant";
  return s;
}

/// Brownian motion scaled by s in d dimensions (d_W = d).
inline DiffusionSpec brownian(int d = 1, double s = 1.0) {
  return constant_diffusion(Vec::Zero(d), Mat(s * Mat::Identity(d, d)));
}

/// b(x) = A x + c, constant sigma.
inline DiffusionSpec linear_drift_diffusion(const Mat& A, const Vec& c, const Mat& sigma) {
  DiffusionSpec s;
  s.d = static_cast<int>(c.size());
  s.dW = static_cast<int>(sigma.cols());
  s.drift = [A, c](const Vec& x) { return Vec(A * x + c); };
  s.dispersion = [sigma](const Vec&) { return sigma; };
  s.sigma_bound = sigma.norm();
  s.description = "linear-drift";
  return s;
}

/// sup |sigma| (Frobenius) over a box, by grid sampling unless constant.
inline double sigma_sup(const DiffusionSpec& s, const Box& box, int per_dim = 21) {
  if (s.constant) return s.sigma(box.center()).norm();
  double m = 0.0;
  const int d = s.d;
  const int total = static_cast<int>(std::pow(per_dim, d));
  for (int idx = 0; idx < total; ++idx) {
    Vec x(d);
    int r = idx;
    for (int i = 0; i < d; ++i) {
      const int k = r % per_dim;
      r /= per_dim;
      x[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * k / (per_dim - 1);
    }
    m = std::max(m, s.sigma(x).norm());
  }
  return m;
}

inline std::vector<double> uniform_grid(double T, int N) {
  if (N < 0) fail(ErrorKind::config, "time grid needs N >= 0");
  std::vector<double> t(static_cast<std::size_t>(N) + 1);
  for (int k = 0; k <= N; ++k) t[k] = T * k / std::max(N, 1);
  if (N == 0) t[0] = 0.0;
  return t;
}

/// One simulated path with optional solution columns.
struct PathBundle {
  std::vector<double> t;
  Eigen::MatrixXd dW;  // N x d_W
  Eigen::MatrixXd B;   // (N+1) x d
  Eigen::MatrixXd X;   // (N+1) x n, empty until a solution is attached
  Eigen::MatrixXd Z;   // (N+1) x (n d_W), row-major flattening of each z
  std::uint64_t seed = 0;
  std::uint64_t index = 0;

  int steps() const { return static_cast<int>(t.size()) - 1; }
  Vec base(int k) const { return Vec(B.row(k).transpose()); }
  Vec noise(int k) const { return Vec(dW.row(k).transpose()); }
  Vec x(int k) const { return Vec(X.row(k).transpose()); }
  Mat z(int k, int n, int dw) const {
    Mat m(n, dw);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dw; ++j) m(i, j) = Z(k, i * dw + j);
    return m;
  }
  void set_z(int k, const Mat& m) {
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) Z(k, i * m.cols() + j) = m(i, j);
  }
};

/// Euler-Maruyama path; the noise stream is determined by (seed, path_index).
inline PathBundle simulate_diffusion(const DiffusionSpec& spec, const Vec& y, const std::vector<double>& grid,
                                     std::uint64_t seed, std::uint64_t path_index = 0) {
  if (y.size() != spec.d) fail(ErrorKind::dimension, "simulate_diffusion: start point dimension");
  if (grid.empty()) fail(ErrorKind::config, "simulate_diffusion: empty grid");
  for (std::size_t k = 1; k < grid.size(); ++k)
    if (!(grid[k] > grid[k - 1])) fail(ErrorKind::config, "simulate_diffusion: grid not strictly increasing");
  const int N = static_cast<int>(grid.size()) - 1;
  PathBundle p;
  p.t = grid;
  p.seed = seed;
  p.index = path_index;
  p.dW.resize(N, spec.dW);
  p.B.resize(N + 1, spec.d);
  p.B.row(0) = y.transpose();
  std::mt19937_64 rng = make_stream(seed, path_index);
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec x = y;
  for (int k = 0; k < N; ++k) {
    const double dt = grid[k + 1] - grid[k];
    const double sq = std::sqrt(dt);
    Vec dw(spec.dW);
    for (int j = 0; j < spec.dW; ++j) dw[j] = sq * nd(rng);
    const Vec b = spec.b(x);
    const Mat s = spec.sigma(x);
    if (!b.allFinite() || !s.allFinite())
      fail(ErrorKind::numeric, "simulate_diffusion: non-finite coefficient at step " + std::to_string(k));
    x = x + b * dt + s * dw;
    p.dW.row(k) = dw.transpose();
    p.B.row(k + 1) = x.transpose();
  }
  return p;
}

inline std::vector<PathBundle> simulate_paths(const DiffusionSpec& spec, const Vec& y, const std::vector<double>& grid,
                                              std::uint64_t seed, int count) {
  std::vector<PathBundle> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(simulate_diffusion(spec, y, grid, seed, static_cast<std::uint64_t>(i)));
  return out;
}

/// L h = 1/2 sum a_ij d_ij h + b . grad h, derivatives by central differences.
inline double generator_apply(const DiffusionSpec& spec, const ScalarField& h, const Vec& x) {
  const Mat H = euclidean_hessian(h, x);
  const Vec g = euclidean_gradient(h, x);
  return 0.5 * (spec.a(x).cwiseProduct(H)).sum() + spec.b(x).dot(g);
}

struct ExitResult {
  int index = 0;       // first grid index not in the open domain
  Vec point;           // crossing point, interpolated onto the boundary
  double time = 0.0;   // interpolated crossing time
  bool censored = false;
};

namespace detail {

/// Fraction theta in (0,1] along a -> b at which the segment meets the box boundary.
inline double box_crossing(const Box& box, const Vec& a, const Vec& b) {
  double theta = 1.0;
  for (int i = 0; i < a.size(); ++i) {
    const double da = b[i] - a[i];
    if (b[i] <= box.lo[i] && da != 0.0) theta = std::min(theta, (box.lo[i] - a[i]) / da);
    if (b[i] >= box.hi[i] && da != 0.0) theta = std::min(theta, (box.hi[i] - a[i]) / da);
  }
  return std::clamp(theta, 0.0, 1.0);
}

}  // namespace detail

/// First exit of the stored base path from the open box.
inline ExitResult exit_time(const Box& domain, const PathBundle& path) {
  ExitResult r;
  const int N = path.steps();
  if (!domain.interior(path.base(0))) {
    r.index = 0;
    r.point = path.base(0);
    r.time = path.t[0];
    return r;
  }
  for (int k = 1; k <= N; ++k) {
    const Vec b = path.base(k);
    if (!domain.interior(b)) {
      const Vec a = path.base(k - 1);
      const double th = detail::box_crossing(domain, a, b);
      r.index = k;
      r.point = a + th * (b - a);
      r.time = path.t[k - 1] + th * (path.t[k] - path.t[k - 1]);
      return r;
    }
  }
  r.index = N;
  r.point = path.base(N);
  r.time = path.t[N];
  r.censored = true;
  return r;
}

/// Streaming exit simulation (no storage), uniform step dt up to t_max.
inline ExitResult simulate_exit(const DiffusionSpec& spec, const Box& domain, const Vec& y, double dt, double t_max,
                                std::uint64_t seed, std::uint64_t path_index) {
  ExitResult r;
  if (!domain.interior(y)) return ExitResult{0, y, 0.0, false};
  std::mt19937_64 rng = make_stream(seed, path_index);
  std::normal_distribution<double> nd(0.0, 1.0);
  const double sq = std::sqrt(dt);
  const long N = static_cast<long>(std::ceil(t_max / dt));
  Vec x = y;
  Vec dw(spec.dW);
  const Vec b0 = spec.constant ? spec.b(y) : Vec();
  const Mat s0 = spec.constant ? spec.sigma(y) : Mat();
  for (long k = 0; k < N; ++k) {
    for (int j = 0; j < spec.dW; ++j) dw[j] = sq * nd(rng);
    const Vec xn = spec.constant ? Vec(x + b0 * dt + s0 * dw) : Vec(x + spec.b(x) * dt + spec.sigma(x) * dw);
    if (!domain.interior(xn)) {
      const double th = detail::box_crossing(domain, x, xn);
      return ExitResult{static_cast<int>(std::min<long>(k + 1, std::numeric_limits<int>::max())), Vec(x + th * (xn - x)),
                        (k + th) * dt, false};
    }
    x = xn;
  }
  return ExitResult{static_cast<int>(std::min<long>(N, std::numeric_limits<int>::max())), x, N * dt, true};
}

}  // namespace mbsde
