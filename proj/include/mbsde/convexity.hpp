#pragma once

#include "mbsde/geometry.hpp"
#include "mbsde/report.hpp"

#include <numbers>
#include <optional>

namespace mbsde {

struct Ball {
  Vec center;
  double radius = 0.0;
};

/// omega = {chi <= level}, with a collar {chi <= collar} on which the cut-off decays.
struct ConvexDomain {
  Chart chart;
  ScalarField chi;
  std::string chi_name;
  double level = 1.0;
  double collar = 1.5;
  double strictness = 0.0;
  std::optional<Ball> ball;
  Vec interior;  // a point with chi < level, used as ray origin
  Box hull;      // bounding box of the collar set

  bool contains(const Vec& x, double tol = 0.0) const { return chart.contains(x) && chi(x) <= level + tol; }
  int dim() const { return chart.dim(); }
};

namespace detail {

/// Parameter t > 0 with chi(p + t d) = target, found by doubling then bisection.
inline double ray_crossing(const ConvexDomain& dom, const Vec& p, const Vec& d, double target, double tol = 1e-8) {
  // largest t keeping p + t d inside the chart box
  const Box& B = dom.chart.bounds();
  double tbox = std::numeric_limits<double>::infinity();
  for (int i = 0; i < p.size(); ++i) {
    if (d[i] > 0) tbox = std::min(tbox, (B.hi[i] - p[i]) / d[i]);
    if (d[i] < 0) tbox = std::min(tbox, (B.lo[i] - p[i]) / d[i]);
  }
  double lo = 0.0, hi = std::min(1e-3, 0.5 * tbox);
  for (int i = 0;; ++i) {
    if (dom.chi(p + hi * d) > target) break;
    lo = hi;
    if (hi >= tbox * (1 - 1e-12) || i > 200)
      fail(ErrorKind::domain, "domain level set not contained in the chart (" + dom.chi_name + ")");
    hi = std::min(2.0 * hi, tbox * (1 - 1e-12));
  }
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (dom.chi(p + mid * d) > target ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

inline Vec unit_direction(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Vec d(n);
  do {
    for (int i = 0; i < n; ++i) d[i] = nd(rng);
  } while (d.norm() < 1e-12);
  return d / d.norm();
}

inline void finish_domain(ConvexDomain& dom) {
  if (dom.collar <= dom.level) fail(ErrorKind::config, "cut-off collar level must exceed the domain level");
  dom.chart.check_point(dom.interior);
  if (!(dom.chi(dom.interior) < dom.level)) fail(ErrorKind::domain, "domain interior point does not satisfy chi < c");
  const int n = dom.dim();
  dom.hull = Box{dom.interior, dom.interior};
  std::mt19937_64 rng = make_stream(977, 0);
  const int rays = n == 1 ? 2 : 256;
  for (int r = 0; r < rays; ++r) {
    Vec d = n == 1 ? vec({r == 0 ? 1.0 : -1.0}) : unit_direction(n, rng);
    const Vec q = dom.interior + ray_crossing(dom, dom.interior, d, dom.collar) * d;
    dom.hull.lo = dom.hull.lo.cwiseMin(q);
    dom.hull.hi = dom.hull.hi.cwiseMax(q);
  }
  const Vec pad = 0.05 * dom.hull.width();
  dom.hull.lo -= pad;
  dom.hull.hi += pad;
  dom.hull.lo = dom.hull.lo.cwiseMax(dom.chart.bounds().lo);
  dom.hull.hi = dom.hull.hi.cwiseMin(dom.chart.bounds().hi);
}

}  // namespace detail

/// chi(x) = |x - o|^2 (Euclidean in coordinates), level c, collar c1.
inline ConvexDomain squared_norm_domain(const Chart& chart, const Vec& o, double c, double c1 = -1.0) {
  ConvexDomain d;
  d.chart = chart;
  d.chi_name = "squared-norm";
  d.chi = ScalarField{[o](const Vec& x) { return (x - o).squaredNorm(); },
                      [o](const Vec& x) { return Vec(2.0 * (x - o)); },
                      [o](const Vec& x) { return Mat(2.0 * Mat::Identity(x.size(), x.size())); }};
  d.level = c;
  d.collar = c1 > 0 ? c1 : 1.5 * c;
  d.interior = o;
  if (chart.flat()) {
    d.ball = Ball{o, std::sqrt(c)};
    d.strictness = 2.0;
  }
  detail::finish_domain(d);
  return d;
}

/// Closed geodesic ball of radius rho about o; chi = delta(o, .)^2.
inline ConvexDomain geodesic_ball(const Chart& chart, const Vec& o, double rho, double collar_rho = -1.0) {
  chart.check_point(o);
  if (rho <= 0) fail(ErrorKind::config, "ball radius must be positive");
  const double K = chart.curvature_bound();
  if (K > 0 && rho * std::sqrt(K) >= std::numbers::pi / 2)
    fail(ErrorKind::config, "ball is not regular: rho*sqrt(K) >= pi/2");
  ConvexDomain d;
  d.chart = chart;
  d.chi_name = "distance-squared";
  if (chart.flat()) {
    d.chi = ScalarField{[o](const Vec& x) { return (x - o).squaredNorm(); },
                        [o](const Vec& x) { return Vec(2.0 * (x - o)); },
                        [o](const Vec& x) { return Mat(2.0 * Mat::Identity(x.size(), x.size())); }};
  } else {
    d.chi = ScalarField{[chart, o](const Vec& x) { return std::pow(distance(chart, o, x), 2); }, {}, {}};
  }
  d.level = rho * rho;
  const double cr = collar_rho > rho ? collar_rho : 1.25 * rho;
  d.collar = cr * cr;
  d.ball = Ball{o, rho};
  d.interior = o;
  detail::finish_domain(d);
  return d;
}

/// chi given by a polynomial/exponential table, e.g. from config.
inline ConvexDomain custom_domain(const Chart& chart, ScalarField chi, std::string name, const Vec& interior,
                                  double c, double c1) {
  ConvexDomain d;
  d.chart = chart;
  d.chi = std::move(chi);
  d.chi_name = std::move(name);
  d.level = c;
  d.collar = c1;
  d.interior = interior;
  detail::finish_domain(d);
  return d;
}

/// Points on {chi = level} by bisection along random rays from the interior point.
inline std::vector<Vec> boundary_sample(const ConvexDomain& dom, int count, std::uint64_t seed) {
  std::vector<Vec> pts;
  std::mt19937_64 rng = make_stream(seed, 1);
  const int n = dom.dim();
  for (int i = 0; i < count; ++i) {
    Vec d = n == 1 ? vec({i % 2 == 0 ? 1.0 : -1.0}) : detail::unit_direction(n, rng);
    pts.push_back(dom.interior + detail::ray_crossing(dom, dom.interior, d, dom.level) * d);
  }
  if (pts.empty()) fail(ErrorKind::domain, "empty boundary sample");
  return pts;
}

/// Uniform point of omega by rejection from the hull box.
inline Vec sample_in_domain(const ConvexDomain& dom, std::mt19937_64& rng) {
  for (int i = 0; i < 100000; ++i) {
    const Vec x = uniform_in(dom.hull, rng);
    if (dom.contains(x)) return x;
  }
  fail(ErrorKind::domain, "rejection sampling found no interior point");
}

/// Smallest generalized eigenvalue of (Hess chi, g) over boundary and interior samples.
inline double convexity_strictness(const ConvexDomain& dom, int count, std::uint64_t seed) {
  std::mt19937_64 rng = make_stream(seed, 2);
  std::vector<Vec> pts = boundary_sample(dom, count / 2 + 1, seed);
  for (int i = 0; i < count / 2; ++i) pts.push_back(sample_in_domain(dom, rng));
  double lo = std::numeric_limits<double>::infinity();
  for (const Vec& x : pts) {
    if (dom.ball && (x - dom.ball->center).norm() < 1e-6) continue;  // chi = delta^2 is smooth but FD at the centre is not
    Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(manifold_hessian(dom.chart, dom.chi, x), dom.chart.metric(x));
    lo = std::min(lo, es.eigenvalues().minCoeff());
  }
  return lo;
}

// ---------------------------------------------------------------------------
// Separating functions

enum class PsiKind { half_distance_squared, kendall };

struct SeparatingFunction {
  PsiKind kind = PsiKind::half_distance_squared;
  int p = 2;
  double h = 0.0;
  double K = 0.0;

  // 1 - cos(sqrt K delta) ~ K delta^2 / 2, so Kendall behaves like delta^(2p)
  int nu() const { return kind == PsiKind::kendall ? 2 * p : 2; }
};

inline double default_kendall_h(double K, double rho) { return 0.1 * std::sqrt(std::pow(std::cos(std::sqrt(K) * rho), 2)); }

inline SeparatingFunction half_distance_psi() { return {}; }

inline SeparatingFunction kendall(const ConvexDomain& dom, int p = 2, double h = -1.0) {
  if (!dom.ball) fail(ErrorKind::config, "Kendall's function needs a geodesic ball");
  const double K = dom.chart.curvature_bound();
  if (K <= 0) fail(ErrorKind::config, "Kendall's function needs K > 0");
  if (p < 2 || p % 2 != 0) fail(ErrorKind::config, "Kendall exponent must be an even integer >= 2");
  SeparatingFunction s{PsiKind::kendall, p, h > 0 ? h : default_kendall_h(K, dom.ball->radius), K};
  const double c = std::cos(std::sqrt(K) * dom.ball->radius);
  if (c * c <= s.h * s.h) fail(ErrorKind::parameter, "Kendall h too large for the ball");
  return s;
}

inline double half_distance_squared(const ConvexDomain& dom, const Vec& x, const Vec& x1) {
  if (!dom.chart.hadamard()) fail(ErrorKind::config, "half-distance-squared needs Hadamard mode (K = 0)");
  const double d = distance(dom.chart, x, x1);
  return 0.5 * d * d;
}

/// Kendall's ((1 - cos(sqrt K delta(x,x'))) / (cos(sqrt K delta(x,o)) cos(sqrt K delta(x',o)) - h^2))^p.
inline double kendall_psi_from_distances(double K, double h, int p, double dxx, double dxo, double dx1o) {
  const double sk = std::sqrt(K);
  const double den = std::cos(sk * dxo) * std::cos(sk * dx1o) - h * h;
  if (den <= 0) fail(ErrorKind::parameter, "Kendall denominator nonpositive (h too large for the ball)");
  return std::pow((1.0 - std::cos(sk * dxx)) / den, p);
}

inline double kendall_psi(const ConvexDomain& dom, const SeparatingFunction& s, const Vec& x, const Vec& x1) {
  if (!dom.ball) fail(ErrorKind::config, "Kendall's function needs a geodesic ball");
  const Vec& o = dom.ball->center;
  return kendall_psi_from_distances(s.K, s.h, s.p, distance(dom.chart, x, x1), distance(dom.chart, x, o),
                                    distance(dom.chart, x1, o));
}

inline double psi_value(const ConvexDomain& dom, const SeparatingFunction& s, const Vec& x, const Vec& x1) {
  return s.kind == PsiKind::kendall ? kendall_psi(dom, s, x, x1) : half_distance_squared(dom, x, x1);
}

/// Psi as a scalar field on product coordinates (x, x'); analytic derivatives on flat charts.
inline ScalarField psi_field(const ConvexDomain& dom, const SeparatingFunction& s) {
  const int n = dom.dim();
  if (s.kind == PsiKind::half_distance_squared && dom.chart.flat()) {
    return ScalarField{
        [n](const Vec& y) { return 0.5 * (y.head(n) - y.tail(n)).squaredNorm(); },
        [n](const Vec& y) {
          Vec g(2 * n);
          g.head(n) = y.head(n) - y.tail(n);
          g.tail(n) = y.tail(n) - y.head(n);
          return g;
        },
        [n](const Vec&) {
          Mat H(2 * n, 2 * n);
          H << Mat::Identity(n, n), -Mat::Identity(n, n), -Mat::Identity(n, n), Mat::Identity(n, n);
          return H;
        }};
  }
  return ScalarField{[dom, s, n](const Vec& y) { return psi_value(dom, s, y.head(n), y.tail(n)); }, {}, {}};
}

/// Second differences of Psi along random product geodesics (step 1e-3), normalised by h^2.
inline VerificationReport psi_convexity_check(const ConvexDomain& dom, const SeparatingFunction& s, int count,
                                              std::uint64_t seed, double tol = 1e-6) {
  VerificationReport rep("psi-convexity", tol);
  std::mt19937_64 rng = make_stream(seed, 3);
  const int n = dom.dim();
  const double h = 1e-3;
  OdeOptions tight{1e-14, 1e-15, 1000};
  for (int i = 0; i < count; ++i) {
    const Vec x = sample_in_domain(dom, rng), x1 = sample_in_domain(dom, rng);
    const Vec v = detail::unit_direction(n, rng), v1 = detail::unit_direction(n, rng);
    auto at = [&](double t) {
      return psi_value(dom, s, geodesic_shoot(dom.chart, x, v, t, tight), geodesic_shoot(dom.chart, x1, v1, t, tight));
    };
    const double d2 = (at(-h) - 2.0 * at(0.0) + at(h)) / (h * h);
    Vec w(2 * n);
    w << x, x1;
    rep.observe(d2, w);
  }
  rep.extra["p"] = s.p;
  return rep.finalize();
}

/// Fitted c with delta^nu / c <= Psi <= c delta^nu over a sample of omega x omega.
inline double psi_equivalence_constant(const ConvexDomain& dom, const SeparatingFunction& s, int count,
                                       std::uint64_t seed) {
  std::mt19937_64 rng = make_stream(seed, 4);
  double c = 1.0;
  for (int i = 0; i < count; ++i) {
    const Vec x = sample_in_domain(dom, rng), x1 = sample_in_domain(dom, rng);
    const double d = distance(dom.chart, x, x1);
    if (d < 1e-6) continue;
    const double r = psi_value(dom, s, x, x1) / std::pow(d, s.nu());
    c = std::max({c, r, 1.0 / r});
  }
  return c;
}

/// Kendall's function with p escalated 2, 4, 6, 8 until the sampled convexity test passes.
inline SeparatingFunction validated_kendall(const ConvexDomain& dom, double h, int count, std::uint64_t seed) {
  for (int p : {2, 4, 6, 8}) {
    SeparatingFunction s = kendall(dom, p, h);
    if (psi_convexity_check(dom, s, count, seed).pass) return s;
  }
  fail(ErrorKind::parameter, "Kendall's function not convex for p <= 8; reduce h or the ball");
}

// ---------------------------------------------------------------------------
// Exponential-integrability function on a geodesic ball

inline double integrability_phi(const ConvexDomain& dom, const Vec& x) {
  if (!dom.ball) fail(ErrorKind::config, "integrability function needs a geodesic ball");
  return std::cos(std::numbers::pi / (3.0 * dom.ball->radius) * distance(dom.chart, dom.ball->center, x));
}

inline ScalarField phi_field(const ConvexDomain& dom) {
  if (!dom.ball) fail(ErrorKind::config, "integrability function needs a geodesic ball");
  return ScalarField{[dom](const Vec& x) { return integrability_phi(dom, x); }, {}, {}};
}

/// alpha = (pi / (3 rho))^2 / 2.
inline double alpha_for_ball(double rho) {
  if (rho <= 0) fail(ErrorKind::parameter, "ball radius must be positive");
  const double a = std::numbers::pi / (3.0 * rho);
  return 0.5 * a * a;
}

/// Margin of Hess phi<u,u> + 2 alpha phi |u|_r^2 <= 0 over sampled ball points and unit u.
inline VerificationReport min1_check(const ConvexDomain& dom, double alpha, int count, std::uint64_t seed,
                                     double tol = 1e-6) {
  VerificationReport rep("hess-phi-plus-2-alpha-phi", tol);
  std::mt19937_64 rng = make_stream(seed, 5);
  const ScalarField phi = phi_field(dom);
  const int n = dom.dim();
  for (int i = 0; i < count; ++i) {
    const Vec x = sample_in_domain(dom, rng);
    Vec u = detail::unit_direction(n, rng);
    u /= riemannian_norm(dom.chart, x, u);
    const double lhs = hessian_form(dom.chart, phi, x, u) + 2.0 * alpha * phi(x);
    Vec w(2 * n);
    w << x, u;
    rep.observe(-lhs, w);
  }
  rep.extra["alpha"] = alpha;
  return rep.finalize();
}

}  // namespace mbsde
