#pragma once

#include "mbsde/bsde.hpp"
#include "mbsde/convexity.hpp"

#include <optional>

namespace mbsde {

struct SubmartingaleParams {
  double lambda = 0.0;
  double mu = 0.0;
  SeparatingFunction psi;
  std::vector<int> partition;  // time indices for conditional-increment tests

  void validate() const {
    if (!(lambda >= 0) || !(mu >= 0) || !std::isfinite(lambda) || !std::isfinite(mu))
      fail(ErrorKind::config, "lambda and mu must be finite and nonnegative");
  }
};

// ---------------------------------------------------------------------------
// Ito drift of e^{A_t} Psi(X, X')

/// The pieces of the positivity sum at one product point.
struct PositivityTerms {
  double hessian = 0.0;  // (1/2) sum_i [z~]^i Hess Psi [z~]^i
  double drift = 0.0;    // D Psi . (f, f')
  double psi = 0.0;
  double znorm = 0.0;    // |z|_r + |z'|_r
  double delta = 0.0;
  double transported = 0.0;  // |transport(z) - z'|_r, only when requested

  double total(double lambda, double mu) const { return hessian + drift + (lambda + mu * znorm) * psi; }
};

class PositivityEvaluator {
 public:
  PositivityEvaluator(const ConvexDomain& dom, const SeparatingFunction& psi, const DriftField& f)
      : dom_(dom), psi_(psi), f_(f), field_(psi_field(dom, psi)), product_(charts::product(dom.chart, dom.chart)) {
    if (psi.kind == PsiKind::half_distance_squared && !dom.chart.hadamard())
      fail(ErrorKind::config, "half-distance-squared separating function needs a Hadamard chart");
    if (psi.kind == PsiKind::kendall && !dom.ball) fail(ErrorKind::config, "Kendall's function needs a geodesic ball");
    if (f.n != dom.dim()) fail(ErrorKind::dimension, "drift and chart dimensions differ");
  }

  PositivityTerms terms(const Vec& b, const Vec& x, const Vec& x1, const Mat& z, const Mat& z1,
                        bool with_transport = false) const {
    const int n = dom_.dim();
    Vec y(2 * n);
    y << x, x1;
    PositivityTerms t;
    const Mat H = manifold_hessian(product_, field_, y);
    Mat zt(2 * n, z.cols());
    zt << z, z1;
    t.hessian = 0.5 * (zt.transpose() * H * zt).trace();
    Vec ff(2 * n);
    ff << f_(b, x, z), f_(b, x1, z1);
    t.drift = euclidean_gradient(field_, y).dot(ff);
    t.psi = field_(y);
    t.znorm = riemannian_norm(dom_.chart, x, z) + riemannian_norm(dom_.chart, x1, z1);
    t.delta = distance(dom_.chart, x, x1);
    if (with_transport) t.transported = riemannian_norm(dom_.chart, x1, Mat(parallel_transport(dom_.chart, x, x1, z) - z1));
    return t;
  }

  const ConvexDomain& domain() const { return dom_; }
  const DriftField& drift() const { return f_; }

 private:
  ConvexDomain dom_;
  SeparatingFunction psi_;
  DriftField f_;
  ScalarField field_;
  Chart product_;
};

/// One evaluation point of the positivity sweep.
struct PositivityPoint {
  double tau = 0.0;
  Vec b, x, x1;
  Mat z, z1;
};

struct PositivityOptions {
  int level_stride = 1;      // every stored level when 1
  int sweep = 0;             // extra random-z points with |z| <= z_cap
  double z_cap = 2.0;
  std::uint64_t seed = 1;
};

/// Realized (X, Z) pairs on the stored grid, plus an optional random-z sweep.
inline std::vector<PositivityPoint> positivity_points(const SpaceTimeField& u1, const ZField& z1, const SpaceTimeField& u2,
                                                      const ZField& z2, const PositivityOptions& opt, std::uint64_t seed) {
  if (u1.grid.nodes() != u2.grid.nodes() || u1.levels.size() != u2.levels.size() || u1.n != u2.n)
    fail(ErrorKind::dimension, "positivity: the two fields live on different grids");
  std::vector<PositivityPoint> pts;
  const int L = static_cast<int>(u1.levels.size());
  const int N = u1.grid.nodes();
  const int stride = std::max(1, opt.level_stride);
  for (int l = 0; l < L; l += stride)
    for (int j = 0; j < N; ++j)
      pts.push_back({u1.tau[l], u1.grid.point(j), u1.node_value(l, j), u2.node_value(l, j), z1.at_node(l, j), z2.at_node(l, j)});
  std::mt19937_64 rng = make_stream(seed, 41);
  std::uniform_int_distribution<int> pick_l(0, L - 1), pick_j(0, N - 1);
  for (int i = 0; i < opt.sweep; ++i) {
    const int l = pick_l(rng), j = pick_j(rng);
    pts.push_back({u1.tau[l], u1.grid.point(j), u1.node_value(l, j), u2.node_value(l, j),
                   detail::random_z(z1.n, z1.dW, opt.z_cap, rng), detail::random_z(z1.n, z1.dW, opt.z_cap, rng)});
  }
  return pts;
}

inline VerificationReport ito_drift_positivity(const PositivityEvaluator& ev, const std::vector<PositivityPoint>& pts,
                                               const SubmartingaleParams& params, double tol = 1e-6) {
  params.validate();
  VerificationReport rep("ito-drift-positivity", tol);
  const int n = ev.domain().dim();
  for (const PositivityPoint& p : pts) {
    const PositivityTerms t = ev.terms(p.b, p.x, p.x1, p.z, p.z1);
    Eigen::VectorXd w(1 + p.b.size() + 2 * n);
    w << p.tau, p.b, p.x, p.x1;
    rep.observe(t.total(params.lambda, params.mu), w);
  }
  rep.extra["lambda"] = params.lambda;
  rep.extra["mu"] = params.mu;
  return rep.finalize();
}

/// Full grid sweep between two solved fields.
inline VerificationReport ito_drift_positivity(const SpaceTimeField& u1, const ZField& z1, const SpaceTimeField& u2,
                                               const ZField& z2, const ConvexDomain& dom, const SeparatingFunction& psi,
                                               const DriftField& f, const SubmartingaleParams& params,
                                               const PositivityOptions& opt = {}) {
  const PositivityEvaluator ev(dom, psi, f);
  return ito_drift_positivity(ev, positivity_points(u1, z1, u2, z2, opt, opt.seed), params);
}

/// Smallest C~ with |D Psi . (f, f')| <= C~ Psi over the points (z-independent drifts).
inline double fit_lambda_constant(const PositivityEvaluator& ev, const std::vector<PositivityPoint>& pts) {
  double c = 0.0;
  for (const PositivityPoint& p : pts) {
    const PositivityTerms t = ev.terms(p.b, p.x, p.x1, p.z, p.z1);
    if (t.psi > 1e-12) c = std::max(c, std::abs(t.drift) / t.psi);
  }
  return c;
}

/// Smallest C with |D Psi . (f, f')| <= C delta^2 (1 + |z|_r + |z'|_r) + |transport z - z'|_r^2 / 4.
inline double fit_z_drift_constant(const PositivityEvaluator& ev, const std::vector<PositivityPoint>& pts) {
  double c = 0.0;
  for (const PositivityPoint& p : pts) {
    const PositivityTerms t = ev.terms(p.b, p.x, p.x1, p.z, p.z1, true);
    if (t.delta < 1e-8) continue;
    const double excess = std::abs(t.drift) - 0.25 * t.transported * t.transported;
    c = std::max(c, excess / (t.delta * t.delta * (1.0 + t.znorm)));
  }
  return c;
}

/// Sampled means of e^{A_t} Psi(X_t, X'_t) must not decrease by more than 3 SE.
inline VerificationReport doob_consistency(const ConvexDomain& dom, const SeparatingFunction& psi, const BSDESolution& a,
                                           const BSDESolution& b, const SubmartingaleParams& params) {
  params.validate();
  if (a.paths.size() != b.paths.size()) fail(ErrorKind::dimension, "doob check: path counts differ");
  VerificationReport rep("doob-consistency", 0.0);
  const int M = static_cast<int>(a.paths.size());
  const int N = a.paths.front().steps();
  Eigen::MatrixXd S(M, N + 1);
  for (int m = 0; m < M; ++m) {
    const PathBundle& p = a.paths[m];
    const PathBundle& q = b.paths[m];
    double A = 0.0;
    for (int k = 0; k <= N; ++k) {
      S(m, k) = std::exp(A) * psi_value(dom, psi, p.x(k), q.x(k));
      if (k < N) {
        const double zn = riemannian_norm(dom.chart, p.x(k), p.z(k, a.n, a.dW)) +
                          riemannian_norm(dom.chart, q.x(k), q.z(k, b.n, b.dW));
        A += (params.lambda + params.mu * zn) * (p.t[k + 1] - p.t[k]);
      }
    }
  }
  for (int k = 0; k < N; ++k) {
    const Eigen::VectorXd d = S.col(k + 1) - S.col(k);
    const double mean = d.mean();
    const double se = M > 1 ? std::sqrt((d.array() - mean).square().sum() / (M - 1) / M) : 0.0;
    rep.observe(mean + 3.0 * se, vec({a.paths.front().t[k]}));
  }
  return rep.finalize();
}

// ---------------------------------------------------------------------------
// Submartingale test by regression

/// xi(X_t) and its drift compensator int D xi(X) . f(B, X) ds along each path.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> convex_image(const BSDESolution& sol, const ScalarField& xi,
                                                                const DriftField& f) {
  const int M = static_cast<int>(sol.paths.size());
  const int N = sol.paths.front().steps();
  Eigen::MatrixXd S(M, N + 1), C(M, N + 1);
  for (int m = 0; m < M; ++m) {
    const PathBundle& p = sol.paths[m];
    double c = 0.0;
    for (int k = 0; k <= N; ++k) {
      const Vec x = p.x(k);
      S(m, k) = xi(x);
      C(m, k) = c;
      if (k < N) c += euclidean_gradient(xi, x).dot(f(p.base(k), x, p.z(k, sol.n, sol.dW))) * (p.t[k + 1] - p.t[k]);
    }
  }
  return {S, C};
}

/// Conditional mean of each cell increment, regressed on degree-2 polynomials of B at the cell start,
/// must be >= -(3 SE + bias_tol) at quantile nodes of B.
inline VerificationReport submartingale_mc(const std::vector<PathBundle>& paths, const Eigen::MatrixXd& S,
                                           const std::vector<int>& partition,
                                           const std::optional<Eigen::MatrixXd>& compensator = std::nullopt,
                                           double bias_tol = 1e-3) {
  const int M = static_cast<int>(paths.size());
  if (M < 1000) fail(ErrorKind::statistics, "submartingale test needs at least 1000 paths");
  if (S.rows() != M) fail(ErrorKind::dimension, "submartingale test: sample rows differ from path count");
  if (partition.size() < 2) fail(ErrorKind::config, "submartingale test needs at least one partition cell");
  VerificationReport rep("submartingale", bias_tol);
  const int d = static_cast<int>(paths.front().B.cols());
  const PolyBasis basis(std::min(d, 2), 2);
  for (std::size_t c = 0; c + 1 < partition.size(); ++c) {
    const int a = partition[c], b = partition[c + 1];
    if (a >= b || b >= S.cols()) fail(ErrorKind::config, "submartingale partition must be increasing and in range");
    Eigen::VectorXd y(M);
    for (int m = 0; m < M; ++m) {
      y[m] = S(m, b) - S(m, a);
      if (compensator) y[m] -= (*compensator)(m, b) - (*compensator)(m, a);
    }
    const int dd = std::min(d, 2);
    Vec mean = Vec::Zero(dd), sd = Vec::Zero(dd);
    for (const PathBundle& p : paths) mean += p.base(a).head(dd);
    mean /= M;
    for (const PathBundle& p : paths) sd += (p.base(a).head(dd) - mean).cwiseAbs2();
    sd = (sd / M).cwiseSqrt();
    const bool degenerate = sd.maxCoeff() <= 1e-12 * (1 + mean.norm());
    const int P = degenerate ? 1 : basis.size();
    auto row = [&](const Vec& bv, double* out) {
      if (degenerate) {
        out[0] = 1.0;
        return;
      }
      Vec xi(dd);
      for (int i = 0; i < dd; ++i) xi[i] = sd[i] > 0 ? (bv[i] - mean[i]) / sd[i] : 0.0;
      basis.eval(xi, out);
    };
    Eigen::MatrixXd Phi(M, P);
    std::array<double, 64> buf{};
    for (int m = 0; m < M; ++m) {
      row(paths[m].base(a).head(dd), buf.data());
      for (int q = 0; q < P; ++q) Phi(m, q) = buf[q];
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Phi);
    if (qr.rank() < P) fail(ErrorKind::basis, "submartingale regression rank deficient");
    const Eigen::VectorXd coef = qr.solve(y);
    const double rss = (y - Phi * coef).squaredNorm();
    const double s2 = rss / std::max(1, M - P);
    const Eigen::MatrixXd G = (Phi.transpose() * Phi).inverse();
    // quantile nodes of each coordinate, tensorised for d = 2
    std::vector<std::vector<double>> q(dd);
    for (int i = 0; i < dd; ++i) {
      std::vector<double> col(M);
      for (int m = 0; m < M; ++m) col[m] = paths[m].B(a, i);
      std::sort(col.begin(), col.end());
      for (double p : {0.1, 0.3, 0.5, 0.7, 0.9}) q[i].push_back(col[static_cast<std::size_t>(p * (M - 1))]);
    }
    const int nodes = dd == 1 ? 5 : 25;
    for (int k = 0; k < nodes; ++k) {
      Vec bv(dd);
      bv[0] = q[0][k % 5];
      if (dd == 2) bv[1] = q[1][k / 5];
      row(bv, buf.data());
      const Eigen::Map<const Eigen::VectorXd> phi(buf.data(), P);
      const double fitted = phi.dot(coef);
      const double se = std::sqrt(std::max(0.0, s2 * phi.dot(G * phi)));
      Vec w(1 + dd);
      w << paths.front().t[a], bv;
      rep.observe(fitted + 3.0 * se, w);
    }
  }
  rep.extra["cells"] = partition.size() - 1;
  return rep.finalize();
}

// ---------------------------------------------------------------------------
// Contraction between solutions with nearby terminal values

struct ContractionRow {
  double eta = 0.0;
  double delta1 = 0.0;  // sqrt E delta^2(U, U')
  double delta2 = 0.0;  // sqrt E sup_t delta^2(X_t, X'_t)
};

inline ContractionRow contraction_point(const Chart& chart, const BSDESolution& a, const BSDESolution& b, double eta) {
  if (a.paths.size() != b.paths.size()) fail(ErrorKind::dimension, "contraction: path counts differ");
  ContractionRow r{eta, 0.0, 0.0};
  const double M = static_cast<double>(a.paths.size());
  for (std::size_t m = 0; m < a.paths.size(); ++m) {
    const PathBundle& p = a.paths[m];
    const PathBundle& q = b.paths[m];
    if (p.steps() != q.steps()) fail(ErrorKind::dimension, "contraction: grids differ");
    double sup = 0.0;
    for (int k = 0; k <= p.steps(); ++k) sup = std::max(sup, std::pow(distance(chart, p.x(k), q.x(k)), 2));
    r.delta1 += std::pow(distance(chart, p.x(p.steps()), q.x(q.steps())), 2) / M;
    r.delta2 += sup / M;
  }
  r.delta1 = std::sqrt(r.delta1);
  r.delta2 = std::sqrt(r.delta2);
  return r;
}

struct ContractionCurve {
  std::vector<ContractionRow> rows;  // sorted by decreasing eta
  bool monotone = true;              // delta2 nonincreasing along the rows
  bool vanishing = false;            // smallest delta2 below the largest
  double exponent = 0.0;             // log-log slope of delta2 against delta1
  double exponent_floor = 0.5;       // 1/(2p)
  bool exponent_ok = false;
};

/// Rows from solutions sharing their noise with `base`; p is the separating-function exponent.
inline ContractionCurve contraction_curve(const Chart& chart, const BSDESolution& base,
                                          const std::vector<std::pair<double, BSDESolution>>& perturbed, int p = 1) {
  ContractionCurve c;
  for (const auto& [eta, sol] : perturbed) c.rows.push_back(contraction_point(chart, base, sol, eta));
  std::sort(c.rows.begin(), c.rows.end(), [](const ContractionRow& a, const ContractionRow& b) { return a.eta > b.eta; });
  for (std::size_t i = 1; i < c.rows.size(); ++i)
    if (c.rows[i].delta2 > c.rows[i - 1].delta2) c.monotone = false;
  if (!c.rows.empty()) c.vanishing = c.rows.back().delta2 < c.rows.front().delta2 || c.rows.front().delta2 == 0.0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int k = 0;
  for (const ContractionRow& r : c.rows) {
    if (r.delta1 <= 0 || r.delta2 <= 0) continue;
    const double lx = std::log(r.delta1), ly = std::log(r.delta2);
    sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly, ++k;
  }
  if (k >= 2 && k * sxx - sx * sx > 0) c.exponent = (k * sxy - sx * sy) / (k * sxx - sx * sx);
  c.exponent_floor = 1.0 / (2.0 * p);
  c.exponent_ok = k < 2 || c.exponent >= c.exponent_floor;
  return c;
}

// ---------------------------------------------------------------------------
// Exponential integrability of |Z|^2

struct ExpIntegrability {
  double alpha = 0.0;
  double estimate = 0.0;  // E exp(alpha int |Z|_r^2)
  double se = 0.0;
  bool finite = true;
  // ball comparison (only filled by the ball variant)
  double ball_alpha = 0.0;
  double C_eps = 0.0;
  double bound = std::numeric_limits<double>::infinity();
  double compensated = 0.0;  // E exp(ball_alpha int |Z|^2 - int |D phi . f| / C_min)
  bool within_bound = false;
};

namespace detail {

inline double z_energy(const Chart& chart, const BSDESolution& sol, const PathBundle& p) {
  double I = 0.0;
  for (int k = 0; k < p.steps(); ++k) {
    const double zn = riemannian_norm(chart, p.x(k), p.z(k, sol.n, sol.dW));
    I += zn * zn * (p.t[k + 1] - p.t[k]);
  }
  return I;
}

inline void mean_se(const std::vector<double>& v, double& mean, double& se) {
  mean = 0.0;
  for (double x : v) mean += x / v.size();
  double s2 = 0.0;
  for (double x : v) s2 += (x - mean) * (x - mean);
  se = v.size() > 1 ? std::sqrt(s2 / (v.size() - 1) / v.size()) : 0.0;
}

}  // namespace detail

inline ExpIntegrability exp_integrability(const BSDESolution& sol, const Chart& chart, double alpha) {
  if (!(alpha > 0)) fail(ErrorKind::parameter, "exp_integrability needs alpha > 0");
  if (sol.paths.empty() || sol.paths.front().Z.rows() == 0) fail(ErrorKind::config, "exp_integrability needs Z paths");
  ExpIntegrability r;
  r.alpha = alpha;
  std::vector<double> v;
  for (const PathBundle& p : sol.paths) {
    const double e = alpha * detail::z_energy(chart, sol, p);
    if (e > 700) r.finite = false;
    v.push_back(std::exp(e));
  }
  if (!r.finite) {
    r.estimate = std::numeric_limits<double>::infinity();
    return r;
  }
  detail::mean_se(v, r.estimate, r.se);
  return r;
}

/// Ball comparison with phi = cos(pi delta(o, .) / (3 rho)), C_min = 1/2, C_max = 1:
/// |D phi . f| / C_min <= slack |Z|^2 + C_eps pathwise gives E exp(alpha int |Z|^2) <= 2 e^{C_eps T}
/// for alpha = alpha_for_ball(rho) - slack.
inline ExpIntegrability exp_integrability_ball(const BSDESolution& sol, const ConvexDomain& ball, const DriftField& f,
                                               double alpha) {
  if (!ball.ball) fail(ErrorKind::config, "ball comparison needs a geodesic ball domain");
  ExpIntegrability r = exp_integrability(sol, ball.chart, alpha);
  r.ball_alpha = alpha_for_ball(ball.ball->radius);
  const double slack = r.ball_alpha - alpha;
  if (slack <= 0) fail(ErrorKind::parameter, "alpha must lie below alpha_for_ball(rho)");
  const double Cmin = 0.5, Cmax = 1.0;
  const ScalarField phi = phi_field(ball);
  std::vector<double> comp;
  for (const PathBundle& p : sol.paths) {
    double e = 0.0;
    for (int k = 0; k < p.steps(); ++k) {
      const Vec x = p.x(k);
      const Mat z = p.z(k, sol.n, sol.dW);
      const double zn = riemannian_norm(ball.chart, x, z);
      const double dphi = std::abs(euclidean_gradient(phi, x).dot(f(p.base(k), x, z))) / Cmin;
      r.C_eps = std::max(r.C_eps, dphi - slack * zn * zn);
      const double dt = p.t[k + 1] - p.t[k];
      e += (r.ball_alpha * zn * zn - dphi) * dt;
    }
    comp.push_back(std::exp(std::min(e, 700.0)));
  }
  double se = 0.0;
  detail::mean_se(comp, r.compensated, se);
  r.bound = Cmax / Cmin * std::exp(r.C_eps * sol.T);
  r.within_bound = r.finite && r.estimate <= r.bound;
  return r;
}

inline json to_json(const ExpIntegrability& r) {
  json j{{"alpha", r.alpha}, {"estimate", std::isfinite(r.estimate) ? json(r.estimate) : json("inf")},
         {"se", r.se}, {"finite", r.finite}};
  if (r.ball_alpha > 0) {
    j["ball_alpha"] = r.ball_alpha;
    j["C_eps"] = r.C_eps;
    j["bound"] = r.bound;
    j["compensated"] = r.compensated;
    j["within_bound"] = r.within_bound;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Distance derivatives along the connecting geodesic

struct HessianSample {
  Vec x, x1, u0, u1;
};

struct HessianSuite {
  VerificationReport der1{"distance-first-derivative", 1e-4};
  VerificationReport der2{"distance-hessian-orthogonal", 1e-4};
  VerificationReport min{"half-distance-squared-hessian", 1e-4};
  double min_gap = 0.0;  // largest |Hess(delta^2/2)<u,u> - |transport u0 - u1|^2|
  bool pass() const { return der1.pass && der2.pass && min.pass; }
};

inline HessianSuite hessian_inequality_suite(const Chart& chart, const std::vector<HessianSample>& samples) {
  if (!chart.hadamard()) fail(ErrorKind::config, "Hessian suite needs Hadamard mode (K = 0)");
  HessianSuite s;
  const int n = chart.dim();
  const OdeOptions tight{1e-14, 1e-15, 100000};
  for (const HessianSample& q : samples) {
    const double delta = distance(chart, q.x, q.x1);
    if (delta < 1e-10) fail(ErrorKind::parameter, "Hessian suite: coincident points");
    const Vec v = log_map(chart, q.x, q.x1);
    const Vec e0 = v / riemannian_norm(chart, q.x, v);
    const Vec v0 = inner(chart, q.x, q.u0, e0) * e0;
    const Vec w0 = q.u0 - v0;
    Mat cols(n, 3);
    cols << q.u0, v0, w0;
    const TransportResult tr = transport_along(chart, q.x, v, cols, tight);
    const Vec e1 = tr.v1 / riemannian_norm(chart, q.x1, tr.v1);
    const Vec v1 = inner(chart, q.x1, q.u1, e1) * e1;
    const Vec w1 = q.u1 - v1;
    auto rn = [&](const Vec& a) { return riemannian_norm(chart, q.x1, a); };

    // first derivative along a coordinate line (only the tangent vector matters)
    const double h1 = 1e-6;
    const double dl = (distance(chart, q.x + h1 * q.u0, q.x1 + h1 * q.u1) -
                       distance(chart, q.x - h1 * q.u0, q.x1 - h1 * q.u1)) / (2 * h1);
    // second derivatives along the product geodesic, step scaled to delta / |u|_r, with one
    // Richardson extrapolation; on flat charts delta^2/2 is quadratic in t, so a wide stencil is exact
    auto along = [&](double t) {
      return distance(chart, geodesic_shoot(chart, q.x, q.u0, t, tight), geodesic_shoot(chart, q.x1, q.u1, t, tight));
    };
    const double speed = std::max({riemannian_norm(chart, q.x, q.u0), riemannian_norm(chart, q.x1, q.u1), 1e-12});
    const double h2 = std::min(1e-2, 1e-2 * delta / speed);
    const double a0 = along(0.0);
    auto second = [&](auto g, double h) { return (g(h) - 2 * g(0.0) + g(-h)) / (h * h); };
    auto richardson = [&](auto g) { return (4 * second(g, h2) - second(g, 2 * h2)) / 3; };
    const double hess_delta = richardson(along);
    auto half_sq = [&](double t) {
      const double a = t == 0.0 ? a0 : along(t);
      return 0.5 * a * a;
    };
    const double hess_half = chart.flat() ? second(half_sq, 0.5) : richardson(half_sq);
    Eigen::VectorXd wit(4 * n);
    wit << q.x, q.x1, q.u0, q.u1;
    s.der1.observe(-std::abs(std::abs(dl) - rn(Vec(tr.z1.col(1) - v1))), wit);
    const double orth = rn(Vec(tr.z1.col(2) - w1));
    s.der2.observe(hess_delta - orth * orth / delta, wit);
    const double full = rn(Vec(tr.z1.col(0) - q.u1));
    s.min.observe(hess_half - full * full, wit);
    s.min_gap = std::max(s.min_gap, std::abs(hess_half - full * full));
  }
  s.der1.finalize();
  s.der2.finalize();
  s.min.finalize();
  s.min.extra["max_gap"] = s.min_gap;
  return s;
}

/// Pairs x != x' inside `box`, within the chart's safe radius, with Gaussian u.
inline std::vector<HessianSample> random_hessian_samples(const Chart& chart, const Box& box, int count, std::uint64_t seed) {
  std::mt19937_64 rng = make_stream(seed, 51);
  std::uniform_real_distribution<double> U(0.05, 0.9);
  std::vector<HessianSample> out;
  const int n = chart.dim();
  while (static_cast<int>(out.size()) < count) {
    const Vec x = uniform_in(box, rng);
    const Vec dir = detail::unit_direction(n, rng);
    Vec x1 = x + U(rng) * chart.safe_radius() * dir / riemannian_norm(chart, x, dir);
    if (!box.contains(x1) || distance(chart, x, x1) > chart.safe_radius()) continue;
    out.push_back({x, x1, gaussian_mat(n, 1, rng).col(0), gaussian_mat(n, 1, rng).col(0)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parallel-transport inequalities

struct TransportSample {
  Vec x, x1, z, z1;
};

struct TransportConstants {
  double C_tp1 = 0.0;  // |T z - z'|_r <= C (|z - z'| + delta (|z| + |z'|))
  double C_tp2 = 0.0;  // |z - z'| <= C (|T z - z'|_r + delta (|z|_r + |z'|_r))
  double C_tp3 = 0.0;  // |T z - z| <= C delta |z|
  double norm_error = 0.0;  // max relative change of |z|_r under transport
  std::size_t samples = 0;
  double C() const { return std::max(C_tp1, C_tp2); }
};

inline TransportConstants transport_constants(const Chart& chart, const std::vector<TransportSample>& samples,
                                              const OdeOptions& ode = {1e-13, 1e-14, 200000}) {
  TransportConstants c;
  for (const TransportSample& s : samples) {
    const double delta = distance(chart, s.x, s.x1);
    const Vec tz = (s.x1 - s.x).isZero(0.0) ? s.z : Vec(transport_along(chart, s.x, log_map(chart, s.x, s.x1), Mat(s.z), ode).z1.col(0));
    const double zr = riemannian_norm(chart, s.x, s.z), z1r = riemannian_norm(chart, s.x1, s.z1);
    const double lhs1 = riemannian_norm(chart, s.x1, Vec(tz - s.z1));
    const double rhs1 = (s.z - s.z1).norm() + delta * (s.z.norm() + s.z1.norm());
    if (rhs1 > 0) c.C_tp1 = std::max(c.C_tp1, lhs1 / rhs1);
    const double rhs2 = lhs1 + delta * (zr + z1r);
    if (rhs2 > 0) c.C_tp2 = std::max(c.C_tp2, (s.z - s.z1).norm() / rhs2);
    if (delta > 1e-12 && s.z.norm() > 0) c.C_tp3 = std::max(c.C_tp3, (tz - s.z).norm() / (delta * s.z.norm()));
    if (zr > 0) c.norm_error = std::max(c.norm_error, std::abs(riemannian_norm(chart, s.x1, tz) - zr) / zr);
    ++c.samples;
  }
  return c;
}

/// A tenth of the pairs are coincident, which pins C >= 1 in both inequalities.
inline std::vector<TransportSample> random_transport_samples(const Chart& chart, const Box& box, int count,
                                                             std::uint64_t seed) {
  std::mt19937_64 rng = make_stream(seed, 52);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<TransportSample> out;
  const int n = chart.dim();
  while (static_cast<int>(out.size()) < count) {
    const Vec x = uniform_in(box, rng);
    Vec x1 = x;
    if (out.size() % 10 != 0) {
      const Vec dir = detail::unit_direction(n, rng);
      x1 = x + U(rng) * chart.safe_radius() * dir / riemannian_norm(chart, x, dir);
      if (!box.contains(x1) || distance(chart, x, x1) > chart.safe_radius()) continue;
    }
    const Vec z = gaussian_mat(n, 1, rng).col(0);
    // z' near T z half of the time so the z - z' term is exercised at both scales
    Vec z1 = gaussian_mat(n, 1, rng).col(0);
    if (U(rng) < 0.5) z1 = z + 0.05 * z1;
    out.push_back({x, x1, z, z1});
  }
  return out;
}

struct TransportSuite {
  TransportConstants first, doubled;
  bool stable = false;  // each constant moves by < 20% when the sample doubles
  bool finite = false;
  VerificationReport report{"transport-inequalities", 0.0};
};

inline TransportSuite transport_inequality_suite(const Chart& chart, const Box& box, int count, std::uint64_t seed) {
  TransportSuite s;
  const std::vector<TransportSample> all = random_transport_samples(chart, box, 2 * count, seed);
  s.first = transport_constants(chart, std::vector<TransportSample>(all.begin(), all.begin() + count));
  s.doubled = transport_constants(chart, all);
  double worst = 0.0;
  for (auto [a, b] : {std::pair{s.first.C_tp1, s.doubled.C_tp1}, std::pair{s.first.C_tp2, s.doubled.C_tp2},
                      std::pair{s.first.C_tp3, s.doubled.C_tp3}})
    if (a > 0) worst = std::max(worst, std::abs(b - a) / a);
  s.finite = std::isfinite(s.doubled.C()) && std::isfinite(s.doubled.C_tp3);
  s.stable = worst < 0.2;
  s.report.samples = s.doubled.samples;
  s.report.margin = s.finite ? 0.2 - worst : -std::numeric_limits<double>::infinity();
  s.report.tolerance = 0.0;
  s.report.pass = s.finite && s.stable;
  s.report.extra = {{"C_tp1", s.doubled.C_tp1}, {"C_tp2", s.doubled.C_tp2}, {"C_tp3", s.doubled.C_tp3},
                    {"norm_error", s.doubled.norm_error}, {"relative_change", worst}};
  return s;
}

// ---------------------------------------------------------------------------
// Boundary outwardness

enum class Outwardness { none, weak, strict };  // weak is (H), strict is (H_s)

inline const char* to_string(Outwardness o) {
  switch (o) {
    case Outwardness::none: return "none";
    case Outwardness::weak: return "H";
    case Outwardness::strict: return "H_s";
  }
  return "none";
}

struct OutwardnessResult {
  double inf = std::numeric_limits<double>::infinity();
  Outwardness classification = Outwardness::none;
  double zeta = 0.0;  // strict margin when classification is strict
  Vec witness;
  std::size_t samples = 0;
};

/// inf of D chi(x)_i f^i(b, x, z) over boundary points, random b in [-1,1]^d and |z| <= z_cap.
inline OutwardnessResult outwardness_check(const ConvexDomain& dom, const DriftField& f, double z_cap, int count = 256,
                                           std::uint64_t seed = 1, int draws = 4) {
  if (f.n != dom.dim()) fail(ErrorKind::dimension, "outwardness: drift and domain dimensions differ");
  const std::vector<Vec> pts = boundary_sample(dom, count, seed);
  std::mt19937_64 rng = make_stream(seed, 61);
  const Box bb{Vec::Constant(f.d, -1.0), Vec::Constant(f.d, 1.0)};
  OutwardnessResult r;
  for (const Vec& x : pts) {
    const Vec g = euclidean_gradient(dom.chi, x);
    for (int k = 0; k < draws; ++k) {
      const Vec b = k == 0 ? Vec(Vec::Zero(f.d)) : uniform_in(bb, rng);
      const Mat z = k == 0 ? f.zero_z() : detail::random_z(f.n, f.dW, z_cap, rng);
      const double v = g.dot(f(b, x, z));
      ++r.samples;
      if (v < r.inf) {
        r.inf = v;
        r.witness = x;
      }
    }
  }
  if (r.inf >= 1e-6) {
    r.classification = Outwardness::strict;
    r.zeta = r.inf;
  } else if (r.inf >= -1e-6) {
    r.classification = Outwardness::weak;
  }
  return r;
}

inline json to_json(const OutwardnessResult& r) {
  return {{"inf", r.inf}, {"classification", to_string(r.classification)}, {"zeta", r.zeta},
          {"witness", to_json(r.witness)}, {"samples", r.samples}};
}

// ---------------------------------------------------------------------------
// Bound on D Psi . (f, f')

struct PsiDriftSample {
  Vec b, x, x1;
  Mat z, z1;
};

/// Smallest C with |D Psi . (f, f')| <= C delta^{nu-1} (delta |f'| + |f - f'|); points with both sides
/// zero are skipped.
inline double dpsi_constant(const ConvexDomain& dom, const SeparatingFunction& psi, const DriftField& f,
                            const std::vector<PsiDriftSample>& samples) {
  const ScalarField field = psi_field(dom, psi);
  const int n = dom.dim();
  double C = 0.0;
  for (const PsiDriftSample& s : samples) {
    const Vec fa = f(s.b, s.x, s.z), fb = f(s.b, s.x1, s.z1);
    Vec y(2 * n), ff(2 * n);
    y << s.x, s.x1;
    ff << fa, fb;
    const double lhs = std::abs(euclidean_gradient(field, y).dot(ff));
    const double delta = distance(dom.chart, s.x, s.x1);
    const double rhs = std::pow(delta, psi.nu() - 1) * (delta * fb.norm() + (fa - fb).norm());
    if (rhs <= 1e-300) continue;
    C = std::max(C, lhs / rhs);
  }
  return C;
}

inline std::vector<PsiDriftSample> random_psi_drift_samples(const ConvexDomain& dom, const DriftField& f, int count,
                                                            double z_cap, std::uint64_t seed) {
  std::mt19937_64 rng = make_stream(seed, 71);
  const Box bb{Vec::Constant(f.d, -1.0), Vec::Constant(f.d, 1.0)};
  std::vector<PsiDriftSample> out;
  for (int i = 0; i < count; ++i) {
    const Vec x = sample_in_domain(dom, rng), x1 = sample_in_domain(dom, rng);
    out.push_back({uniform_in(bb, rng), x, x1, detail::random_z(f.n, f.dW, z_cap, rng),
                   detail::random_z(f.n, f.dW, z_cap, rng)});
  }
  return out;
}

/// Fitted C on `count` samples and on twice as many; pass when finite and within 20%.
inline VerificationReport dpsi_drift_bound(const ConvexDomain& dom, const SeparatingFunction& psi, const DriftField& f,
                                           int count, double z_cap = 1.0, std::uint64_t seed = 1) {
  const std::vector<PsiDriftSample> all = random_psi_drift_samples(dom, f, 2 * count, z_cap, seed);
  const double c1 = dpsi_constant(dom, psi, f, std::vector<PsiDriftSample>(all.begin(), all.begin() + count));
  const double c2 = dpsi_constant(dom, psi, f, all);
  VerificationReport rep("dpsi-drift-bound", 0.0);
  rep.samples = all.size();
  const double change = c1 > 0 ? std::abs(c2 - c1) / c1 : 0.0;
  rep.margin = std::isfinite(c2) ? 0.2 - change : -std::numeric_limits<double>::infinity();
  rep.pass = std::isfinite(c2) && change < 0.2;
  rep.extra = {{"C", c2}, {"C_half_sample", c1}, {"nu", psi.nu()}};
  return rep;
}

}  // namespace mbsde
