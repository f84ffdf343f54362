#pragma once

#include "mbsde/core.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace mbsde {

/// Christoffel symbols Gamma^i_{jk} at one point, stored densely up to kMaxDim.
struct Christoffel {
  int n = 0;
  std::array<double, kMaxDim * kMaxDim * kMaxDim> c{};

  explicit Christoffel(int dim = 0) : n(dim) {}
  double& operator()(int i, int j, int k) { return c[(i * kMaxDim + j) * kMaxDim + k]; }
  double operator()(int i, int j, int k) const { return c[(i * kMaxDim + j) * kMaxDim + k]; }
};

/// Real function on chart coordinates, optionally with analytic Euclidean derivatives.
struct ScalarField {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> gradient;
  std::function<Mat(const Vec&)> hessian;

  double operator()(const Vec& x) const { return value(x); }
};

/// Everything that defines a coordinate patch. Empty std::functions select the
/// generic fallback (finite-difference Christoffels, shooting distance).
struct ChartModel {
  std::string name;
  int n = 0;
  Box bounds;
  double curvature_bound = 0.0;  // K; 0 means Hadamard mode
  bool flat = false;
  std::optional<double> injectivity_radius_hint;
  double safe_radius = 1.0;  // radius for which exp/log round trips are expected

  std::function<Mat(const Vec&)> metric;
  std::function<Christoffel(const Vec&)> christoffel;
  std::function<double(const Vec&, const Vec&)> distance;
};

class Chart {
 public:
  Chart() = default;
  explicit Chart(ChartModel m) : m_(std::make_shared<const ChartModel>(std::move(m))) {}

  int dim() const { return m_->n; }
  const std::string& name() const { return m_->name; }
  const Box& bounds() const { return m_->bounds; }
  double curvature_bound() const { return m_->curvature_bound; }
  bool hadamard() const { return m_->curvature_bound == 0.0; }
  bool flat() const { return m_->flat; }
  double safe_radius() const { return m_->safe_radius; }
  std::optional<double> injectivity_radius_hint() const { return m_->injectivity_radius_hint; }
  bool has_closed_christoffel() const { return static_cast<bool>(m_->christoffel); }
  bool has_closed_distance() const { return static_cast<bool>(m_->distance); }
  const ChartModel& model() const { return *m_; }

  bool contains(const Vec& x) const { return m_->bounds.contains(x); }

  /// Metric without the bounds check (used by stencils that straddle the edge).
  Mat metric_unchecked(const Vec& x) const { return m_->metric(x); }

  Mat metric(const Vec& x) const {
    check_point(x);
    return m_->metric(x);
  }

  void check_point(const Vec& x) const {
    if (x.size() != m_->n) fail(ErrorKind::dimension, m_->name + ": point has wrong dimension");
    if (!m_->bounds.contains(x)) fail(ErrorKind::domain, m_->name + ": point outside chart bounds");
  }

 private:
  std::shared_ptr<const ChartModel> m_;
};

/// Central-difference Christoffel symbols from the metric, step 1e-5(1+|x|).
inline Christoffel christoffel_fd(const Chart& chart, const Vec& x) {
  const int n = chart.dim();
  const double h = 1e-5 * (1.0 + x.norm());
  Mat g = chart.metric_unchecked(x);
  Eigen::LLT<Mat> llt(g);
  if (llt.info() != Eigen::Success) fail(ErrorKind::conditioning, chart.name() + ": metric not positive definite");
  Mat ginv = llt.solve(Mat::Identity(n, n));
  // dg[j](l,k) = d_j g_lk
  std::array<Mat, kMaxDim> dg;
  for (int j = 0; j < n; ++j) {
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    dg[j] = (chart.metric_unchecked(xp) - chart.metric_unchecked(xm)) / (2.0 * h);
  }
  Christoffel G(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = j; k < n; ++k) {
        double s = 0.0;
        for (int l = 0; l < n; ++l) s += ginv(i, l) * (dg[j](l, k) + dg[k](j, l) - dg[l](j, k));
        G(i, j, k) = 0.5 * s;
        G(i, k, j) = 0.5 * s;
      }
  return G;
}

/// Christoffel symbols at x; closed form when the chart provides one.
inline Christoffel christoffel(const Chart& chart, const Vec& x) {
  chart.check_point(x);
  if (chart.flat()) return Christoffel(chart.dim());
  if (chart.has_closed_christoffel()) return chart.model().christoffel(x);
  return christoffel_fd(chart, x);
}

/// Same as christoffel() without the bounds check (integrators probing stage points).
inline Christoffel christoffel_unchecked(const Chart& chart, const Vec& x) {
  if (chart.flat()) return Christoffel(chart.dim());
  if (chart.has_closed_christoffel()) return chart.model().christoffel(x);
  return christoffel_fd(chart, x);
}

/// q^i = sum_{j,k} Gamma^i_{jk} ([z]^k | [z]^j), rows of z paired with the Euclidean product.
inline Vec christoffel_contract(const Christoffel& G, const Mat& z) {
  const int n = G.n;
  Vec q = Vec::Zero(n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) {
      const double zz = z.row(j).dot(z.row(k));
      if (zz == 0.0) continue;
      for (int i = 0; i < n; ++i) q[i] += G(i, j, k) * zz;
    }
  return q;
}

/// Gamma(x)(u, v) for two tangent vectors.
inline Vec christoffel_apply(const Christoffel& G, const Vec& u, const Vec& v) {
  const int n = G.n;
  Vec q = Vec::Zero(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) q[i] += G(i, j, k) * u[j] * v[k];
  return q;
}

inline double inner(const Chart& chart, const Vec& x, const Vec& u, const Vec& v) {
  return u.dot(chart.metric(x) * v);
}

/// |z|_r = sqrt(sum of squared Riemannian lengths of the columns of z).
inline double riemannian_norm(const Chart& chart, const Vec& x, const Mat& z) {
  if (z.rows() != chart.dim()) fail(ErrorKind::dimension, "riemannian_norm: z must have n rows");
  if (chart.flat()) {
    chart.check_point(x);
    return z.norm();
  }
  const Mat g = chart.metric(x);
  return std::sqrt(std::max(0.0, (z.transpose() * g * z).trace()));
}

inline double riemannian_norm(const Chart& chart, const Vec& x, const Vec& v) {
  return riemannian_norm(chart, x, Mat(v));
}

/// Smallest eigenvalue of g(x); used by metric sanity checks.
inline double metric_min_eigenvalue(const Chart& chart, const Vec& x) {
  Eigen::SelfAdjointEigenSolver<Mat> es(chart.metric(x));
  return es.eigenvalues().minCoeff();
}

}  // namespace mbsde
