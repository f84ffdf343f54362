#pragma once

#include "mbsde/geometry/chart.hpp"

namespace mbsde {

inline double hessian_step(const Vec& x) { return 1e-4 * (1.0 + x.norm()); }

/// Euclidean gradient; analytic if the field carries one, else central differences.
inline Vec euclidean_gradient(const ScalarField& f, const Vec& x) {
  if (f.gradient) return f.gradient(x);
  const double h = hessian_step(x);
  Vec g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

/// Euclidean Hessian; analytic if available, else second differences.
inline Mat euclidean_hessian(const ScalarField& f, const Vec& x) {
  if (f.hessian) return f.hessian(x);
  const int n = static_cast<int>(x.size());
  const double h = hessian_step(x);
  const double f0 = f(x);
  Mat H(n, n);
  for (int i = 0; i < n; ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    H(i, i) = (f(xp) - 2.0 * f0 + f(xm)) / (h * h);
    for (int j = 0; j < i; ++j) {
      Vec a = x, b = x, c = x, d = x;
      a[i] += h; a[j] += h;
      b[i] += h; b[j] -= h;
      c[i] -= h; c[j] += h;
      d[i] -= h; d[j] -= h;
      H(i, j) = H(j, i) = (f(a) - f(b) - f(c) + f(d)) / (4.0 * h * h);
    }
  }
  return H;
}

/// Hess h_{jk} = d_j d_k h - Gamma^l_{jk} d_l h.
inline Mat manifold_hessian(const Chart& chart, const ScalarField& f, const Vec& x) {
  chart.check_point(x);
  Mat H = euclidean_hessian(f, x);
  if (chart.flat()) return H;
  const Vec g = euclidean_gradient(f, x);
  const Christoffel G = christoffel(chart, x);
  const int n = chart.dim();
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) {
      double s = 0.0;
      for (int l = 0; l < n; ++l) s += G(l, j, k) * g[l];
      H(j, k) -= s;
    }
  return 0.5 * (H + H.transpose());
}

/// Second derivative of t -> f(gamma(t)) for the geodesic through x with velocity v.
inline double hessian_form(const Chart& chart, const ScalarField& f, const Vec& x, const Vec& u) {
  return u.dot(manifold_hessian(chart, f, x) * u);
}

}  // namespace mbsde
