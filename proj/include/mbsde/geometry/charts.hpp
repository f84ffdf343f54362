#pragma once

#include "mbsde/geometry/geodesic.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <numbers>

namespace mbsde::charts {

/// Euclidean R^n restricted to a box.
inline Chart flat(int n, double half_width = 10.0) {
  ChartModel m;
  m.name = "flat";
  m.n = n;
  m.bounds = Box{Vec::Constant(n, -half_width), Vec::Constant(n, half_width)};
  m.flat = true;
  m.safe_radius = half_width;
  m.metric = [n](const Vec&) { return Mat(Mat::Identity(n, n)); };
  m.distance = [](const Vec& a, const Vec& b) { return (a - b).norm(); };
  return Chart(std::move(m));
}

inline Chart flat(const Box& box) {
  const int n = box.dim();
  ChartModel m;
  m.name = "flat";
  m.n = n;
  m.bounds = box;
  m.flat = true;
  m.safe_radius = box.width().minCoeff() / 2;
  m.metric = [n](const Vec&) { return Mat(Mat::Identity(n, n)); };
  m.distance = [](const Vec& a, const Vec& b) { return (a - b).norm(); };
  return Chart(std::move(m));
}

/// Upper half-plane with metric (dx^2 + dy^2)/y^2, curvature -1.
inline Chart half_plane(const Box& box = make_box({-3.0, 0.2}, {3.0, 6.0})) {
  if (box.dim() != 2 || box.lo[1] <= 0.0) fail(ErrorKind::config, "half-plane box must have y > 0");
  ChartModel m;
  m.name = "half-plane";
  m.n = 2;
  m.bounds = box;
  m.safe_radius = 0.5;
  m.metric = [](const Vec& p) {
    const double w = 1.0 / (p[1] * p[1]);
    Mat g = Mat::Identity(2, 2) * w;
    return g;
  };
  m.christoffel = [](const Vec& p) {
    const double iy = 1.0 / p[1];
    Christoffel G(2);
    G(0, 0, 1) = G(0, 1, 0) = -iy;
    G(1, 0, 0) = iy;
    G(1, 1, 1) = -iy;
    return G;
  };
  m.distance = [](const Vec& a, const Vec& b) {
    const double chord = std::hypot(a[0] - b[0], a[1] - b[1]);
    return 2.0 * std::asinh(chord / (2.0 * std::sqrt(a[1] * b[1])));
  };
  return Chart(std::move(m));
}

/// Sphere cap of curvature K in stereographic coordinates centred at the cap
/// centre (projection from the antipode, so the centre's cut locus is at infinity).
/// The box covers the geodesic ball of radius `extent` about the origin.
inline Chart sphere_cap(double K = 1.0, double extent = 1.2) {
  if (K <= 0.0) fail(ErrorKind::config, "sphere cap needs K > 0");
  const double sk = std::sqrt(K);
  if (extent * sk >= std::numbers::pi) fail(ErrorKind::config, "sphere cap extent reaches the antipode");
  const double r = 2.0 / sk * std::tan(sk * extent / 2.0);
  ChartModel m;
  m.name = "sphere-cap";
  m.n = 2;
  m.bounds = make_box({-r, -r}, {r, r});
  m.curvature_bound = K;
  m.injectivity_radius_hint = std::numbers::pi / sk;
  m.safe_radius = std::min(extent / 2, std::numbers::pi / (4 * sk));
  m.metric = [K](const Vec& p) {
    const double s = 1.0 + 0.25 * K * p.squaredNorm();
    return Mat(Mat::Identity(2, 2) / (s * s));
  };
  m.christoffel = [K](const Vec& p) {
    // g = e^{2w} I with w = -log(1 + K|x|^2/4)
    const double s = 1.0 + 0.25 * K * p.squaredNorm();
    const Vec dw = -(0.5 * K / s) * p;
    Christoffel G(2);
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          G(k, i, j) = (i == k ? dw[j] : 0.0) + (j == k ? dw[i] : 0.0) - (i == j ? dw[k] : 0.0);
    return G;
  };
  m.distance = [K](const Vec& a, const Vec& b) {
    const double R = 1.0 / std::sqrt(K);
    auto embed = [&](const Vec& p) {
      const double s = 0.25 * K * p.squaredNorm();
      Eigen::Vector3d P(p[0] / (1 + s), p[1] / (1 + s), R * (1 - s) / (1 + s));
      return P;
    };
    const Eigen::Vector3d A = embed(a), B = embed(b);
    return R * 2.0 * std::atan2((A - B).norm(), (A + B).norm());
  };
  return Chart(std::move(m));
}

/// Stereographic coordinate radius of the point at geodesic distance rho from the centre.
inline double sphere_coordinate_radius(double K, double rho) {
  const double sk = std::sqrt(K);
  return 2.0 / sk * std::tan(sk * rho / 2.0);
}

/// One-dimensional interval with metric g(x) dx^2.
/// `sqrt_g_primitive`, if given, is an antiderivative of sqrt(g) used for closed-form distance.
inline Chart interval(std::string name, std::function<double(double)> g, std::function<double(double)> dg,
                      double lo, double hi, std::function<double(double)> sqrt_g_primitive = {}) {
  ChartModel m;
  m.name = std::move(name);
  m.n = 1;
  m.bounds = make_box({lo}, {hi});
  m.safe_radius = (hi - lo) / 4;
  m.metric = [g](const Vec& p) {
    Mat out(1, 1);
    out(0, 0) = g(p[0]);
    return out;
  };
  if (dg) {
    m.christoffel = [g, dg](const Vec& p) {
      Christoffel G(1);
      G(0, 0, 0) = dg(p[0]) / (2.0 * g(p[0]));
      return G;
    };
  }
  if (sqrt_g_primitive) {
    m.distance = [sqrt_g_primitive](const Vec& a, const Vec& b) {
      return std::abs(sqrt_g_primitive(b[0]) - sqrt_g_primitive(a[0]));
    };
  } else {
    m.distance = [g](const Vec& a, const Vec& b) {
      auto f = [&](double u) { return std::sqrt(g(u)); };
      const double lo = std::min(a[0], b[0]), hi = std::max(a[0], b[0]);
      if (hi == lo) return 0.0;
      return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, lo, hi, 15, 1e-13);
    };
  }
  return Chart(std::move(m));
}

/// Interval with g(x) = e^{2 a x}; Gamma = a.
inline Chart exp_interval(double a = 1.0, double lo = -2.0, double hi = 2.0) {
  auto g = [a](double x) { return std::exp(2 * a * x); };
  auto dg = [a](double x) { return 2 * a * std::exp(2 * a * x); };
  std::function<double(double)> prim;
  if (a != 0.0) prim = [a](double x) { return std::exp(a * x) / a; };
  else prim = [](double x) { return x; };
  return interval("exp-interval", g, dg, lo, hi, prim);
}

/// Product chart with block-diagonal metric and Christoffel symbols.
inline Chart product(const Chart& A, const Chart& B) {
  const int na = A.dim(), nb = B.dim();
  if (na + nb > kMaxDim) fail(ErrorKind::dimension, "product chart too large");
  ChartModel m;
  m.name = A.name() + "x" + B.name();
  m.n = na + nb;
  m.bounds.lo = Vec(m.n);
  m.bounds.hi = Vec(m.n);
  m.bounds.lo << A.bounds().lo, B.bounds().lo;
  m.bounds.hi << A.bounds().hi, B.bounds().hi;
  m.curvature_bound = std::max(A.curvature_bound(), B.curvature_bound());
  m.flat = A.flat() && B.flat();
  m.safe_radius = std::min(A.safe_radius(), B.safe_radius());
  m.metric = [A, B, na, nb](const Vec& p) {
    Mat g = Mat::Zero(na + nb, na + nb);
    g.topLeftCorner(na, na) = A.metric_unchecked(p.head(na));
    g.bottomRightCorner(nb, nb) = B.metric_unchecked(p.tail(nb));
    return g;
  };
  m.christoffel = [A, B, na, nb](const Vec& p) {
    Christoffel G(na + nb);
    const Christoffel Ga = christoffel_unchecked(A, p.head(na));
    const Christoffel Gb = christoffel_unchecked(B, p.tail(nb));
    for (int i = 0; i < na; ++i)
      for (int j = 0; j < na; ++j)
        for (int k = 0; k < na; ++k) G(i, j, k) = Ga(i, j, k);
    for (int i = 0; i < nb; ++i)
      for (int j = 0; j < nb; ++j)
        for (int k = 0; k < nb; ++k) G(na + i, na + j, na + k) = Gb(i, j, k);
    return G;
  };
  m.distance = [A, B, na, nb](const Vec& p, const Vec& q) {
    const double da = distance(A, p.head(na), q.head(na));
    const double db = distance(B, p.tail(nb), q.tail(nb));
    return std::hypot(da, db);
  };
  return Chart(std::move(m));
}

}  // namespace mbsde::charts
