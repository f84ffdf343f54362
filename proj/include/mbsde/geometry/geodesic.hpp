#pragma once

#include "mbsde/geometry/chart.hpp"

#include <algorithm>
#include <vector>

namespace mbsde {

struct OdeOptions {
  double rtol = 1e-11;
  double atol = 1e-12;
  int max_steps = 200000;
};

namespace detail {

/// Adaptive Dormand-Prince 5(4) integration of y' = rhs(y) from 0 to t1.
/// `inside(y)` is checked on every accepted state; a state that cannot be kept
/// inside by step reduction raises EscapeError with the current time.
template <class Rhs, class Inside>
Eigen::VectorXd dp45(const Rhs& rhs, Eigen::VectorXd y, double t1, const OdeOptions& opt,
                     const Inside& inside) {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = b1 - 5179.0 / 57600, e3 = b3 - 7571.0 / 16695,
                          e4 = b4 - 393.0 / 640, e5 = b5 + 92097.0 / 339200,
                          e6 = b6 - 187.0 / 2100, e7 = -1.0 / 40;
  (void)c2; (void)c3; (void)c4; (void)c5;

  const double dir = t1 >= 0 ? 1.0 : -1.0;
  const double T = std::abs(t1);
  if (T == 0.0) return y;
  double t = 0.0;
  double h = std::min(T, 0.05);
  Eigen::VectorXd k1 = rhs(y);
  for (int step = 0; step < opt.max_steps; ++step) {
    if (t >= T) return y;
    if (t + h > T) h = T - t;
    const double s = dir * h;
    Eigen::VectorXd k2 = rhs(y + s * (a21 * k1));
    Eigen::VectorXd k3 = rhs(y + s * (a31 * k1 + a32 * k2));
    Eigen::VectorXd k4 = rhs(y + s * (a41 * k1 + a42 * k2 + a43 * k3));
    Eigen::VectorXd k5 = rhs(y + s * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    Eigen::VectorXd k6 = rhs(y + s * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    Eigen::VectorXd yn = y + s * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    Eigen::VectorXd k7 = rhs(yn);
    Eigen::VectorXd err = s * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double en = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double sc = opt.atol + opt.rtol * std::max(std::abs(y[i]), std::abs(yn[i]));
      en = std::max(en, std::abs(err[i]) / sc);
    }
    const bool finite = yn.allFinite() && std::isfinite(en);
    if (finite && en <= 1.0 && inside(yn)) {
      t += h;
      y = yn;
      k1 = k7;
      const double fac = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
      h *= fac;
    } else if (finite && en <= 1.0) {
      // accepted accuracy but left the chart: shrink toward the boundary
      if (h < 1e-10 * std::max(1.0, T)) throw EscapeError(dir * t, "geodesic left the chart");
      h *= 0.5;
    } else {
      h *= finite ? std::clamp(0.9 * std::pow(en, -0.25), 0.1, 0.5) : 0.25;
      if (h < 1e-14 * std::max(1.0, T)) fail(ErrorKind::convergence, "ODE step size underflow");
    }
  }
  fail(ErrorKind::convergence, "ODE step budget exhausted");
}

}  // namespace detail

struct GeodesicState {
  Vec x;
  Vec v;
};

/// Position and velocity at parameter t of the geodesic with gamma(0)=x, gamma'(0)=v.
inline GeodesicState geodesic_flow(const Chart& chart, const Vec& x, const Vec& v, double t,
                                   const OdeOptions& opt = {}) {
  chart.check_point(x);
  const int n = chart.dim();
  if (v.size() != n) fail(ErrorKind::dimension, "geodesic: velocity has wrong dimension");
  if (chart.flat() || v.isZero(0.0)) return {x + t * v, v};
  Eigen::VectorXd y(2 * n);
  y << Eigen::VectorXd(x), Eigen::VectorXd(v);
  auto rhs = [&](const Eigen::VectorXd& s) {
    Vec p = s.head(n), u = s.tail(n);
    Eigen::VectorXd d(2 * n);
    d.head(n) = u;
    d.tail(n) = -Eigen::VectorXd(christoffel_apply(christoffel_unchecked(chart, p), u, u));
    return d;
  };
  auto inside = [&](const Eigen::VectorXd& s) { return chart.contains(Vec(s.head(n))); };
  Eigen::VectorXd yt = detail::dp45(rhs, y, t, opt, inside);
  return {Vec(yt.head(n)), Vec(yt.tail(n))};
}

inline Vec geodesic_shoot(const Chart& chart, const Vec& x, const Vec& v, double t,
                          const OdeOptions& opt = {}) {
  return geodesic_flow(chart, x, v, t, opt).x;
}

/// States at t_i = i*t/m, i = 0..m.
inline std::vector<GeodesicState> geodesic_samples(const Chart& chart, const Vec& x, const Vec& v,
                                                   double t, int m, const OdeOptions& opt = {}) {
  std::vector<GeodesicState> out;
  out.push_back({x, v});
  for (int i = 0; i < m; ++i) {
    const GeodesicState& s = out.back();
    out.push_back(geodesic_flow(chart, s.x, s.v, t / m, opt));
  }
  return out;
}

struct LogMapOptions {
  int max_iter = 100;
  double tol = 1e-10;
  OdeOptions ode{};
};

/// Solve geodesic_shoot(x, v, 1) = x1 for v by damped Newton shooting.
inline Vec log_map(const Chart& chart, const Vec& x, const Vec& x1, const LogMapOptions& opt = {}) {
  chart.check_point(x);
  chart.check_point(x1);
  const int n = chart.dim();
  if (chart.flat()) return x1 - x;
  Vec v = x1 - x;
  if (v.isZero(0.0)) return v;

  auto residual = [&](const Vec& w, Vec& r) {
    try {
      r = geodesic_shoot(chart, x, w, 1.0, opt.ode) - x1;
      return true;
    } catch (const EscapeError&) {
      return false;
    }
  };
  Vec r;
  double damping = 1.0;
  if (!residual(v, r)) {
    // chord overshoots the chart; shrink until the shot stays inside
    bool ok = false;
    for (int i = 0; i < 40 && !ok; ++i) {
      v *= 0.5;
      ok = residual(v, r);
    }
    if (!ok) fail(ErrorKind::convergence, "log_map: no admissible initial shot");
  }
  for (int it = 0; it < opt.max_iter; ++it) {
    const double rn = r.norm();
    if (rn <= opt.tol) return v;
    Mat J(n, n);
    const double hj = 1e-7 * std::max(1.0, v.norm());
    for (int j = 0; j < n; ++j) {
      Vec vp = v;
      vp[j] += hj;
      Vec rp;
      if (!residual(vp, rp)) {
        vp[j] -= 2 * hj;
        if (!residual(vp, rp)) fail(ErrorKind::convergence, "log_map: Jacobian probe escaped");
        J.col(j) = (r - rp) / hj;
      } else {
        J.col(j) = (rp - r) / hj;
      }
    }
    Eigen::FullPivLU<Mat> lu(J);
    if (!lu.isInvertible()) fail(ErrorKind::convergence, "log_map: singular shooting Jacobian");
    const Vec step = lu.solve(r);
    bool improved = false;
    double lam = std::min(1.0, 2.0 * damping);
    for (int k = 0; k < 40; ++k) {
      Vec vt = v - lam * step;
      Vec rt;
      if (residual(vt, rt) && rt.norm() < rn) {
        v = vt;
        r = rt;
        improved = true;
        break;
      }
      lam *= 0.5;
    }
    damping = lam;
    if (!improved) break;
  }
  if (r.norm() <= opt.tol * 100) return v;
  fail(ErrorKind::convergence, "log_map: shooting did not converge");
}

/// Riemannian distance; closed form when available, otherwise |log_map|_r.
inline double distance(const Chart& chart, const Vec& x, const Vec& x1) {
  chart.check_point(x);
  chart.check_point(x1);
  if (chart.flat()) return (x1 - x).norm();
  if (chart.has_closed_distance()) return chart.model().distance(x, x1);
  if ((x1 - x).isZero(0.0)) return 0.0;
  return riemannian_norm(chart, x, log_map(chart, x, x1));
}

struct TransportResult {
  Vec x1;    // endpoint
  Vec v1;    // geodesic velocity at the endpoint
  Mat z1;    // transported columns
};

/// Transport the columns of z along the geodesic t -> exp_x(t v), t in [0,1].
inline TransportResult transport_along(const Chart& chart, const Vec& x, const Vec& v, const Mat& z,
                                       const OdeOptions& opt = {}) {
  chart.check_point(x);
  const int n = chart.dim();
  if (z.rows() != n) fail(ErrorKind::dimension, "parallel_transport: z must have n rows");
  const int k = static_cast<int>(z.cols());
  if (chart.flat() || v.isZero(0.0)) return {Vec(x + v), v, z};
  Eigen::VectorXd y(2 * n + n * k);
  y.head(n) = Eigen::VectorXd(x);
  y.segment(n, n) = Eigen::VectorXd(v);
  for (int c = 0; c < k; ++c) y.segment(2 * n + c * n, n) = Eigen::VectorXd(z.col(c));
  auto rhs = [&](const Eigen::VectorXd& s) {
    Vec p = s.head(n), u = s.segment(n, n);
    const Christoffel G = christoffel_unchecked(chart, p);
    Eigen::VectorXd d(s.size());
    d.head(n) = u;
    d.segment(n, n) = -Eigen::VectorXd(christoffel_apply(G, u, u));
    for (int c = 0; c < k; ++c) {
      Vec w = s.segment(2 * n + c * n, n);
      d.segment(2 * n + c * n, n) = -Eigen::VectorXd(christoffel_apply(G, u, w));
    }
    return d;
  };
  auto inside = [&](const Eigen::VectorXd& s) { return chart.contains(Vec(s.head(n))); };
  Eigen::VectorXd yt = detail::dp45(rhs, y, 1.0, opt, inside);
  TransportResult out{Vec(yt.head(n)), Vec(yt.segment(n, n)), Mat(n, k)};
  for (int c = 0; c < k; ++c) out.z1.col(c) = Vec(yt.segment(2 * n + c * n, n));
  return out;
}

/// Parallel transport of z from x to x1 along the connecting geodesic.
inline Mat parallel_transport(const Chart& chart, const Vec& x, const Vec& x1, const Mat& z) {
  if ((x1 - x).isZero(0.0)) {
    chart.check_point(x);
    return z;
  }
  return transport_along(chart, x, log_map(chart, x, x1), z).z1;
}

}  // namespace mbsde
