#pragma once

#include "mbsde/convexity.hpp"

#include <functional>
#include <limits>

namespace mbsde {

using DriftFn = std::function<Vec(const Vec& b, const Vec& x, const Mat& z)>;

/// f(b, x, z) with b in R^d, x in the target chart (n), z an n x d_W matrix.
struct DriftField {
  int d = 1;
  int n = 1;
  int dW = 1;
  DriftFn eval;
  bool z_dependent = false;
  double L = std::numeric_limits<double>::infinity();   // declared geometric Lipschitz constant
  double L2 = std::numeric_limits<double>::infinity();  // declared bound on |f(b, x0, 0)|
  Vec x0;
  std::string description;

  Vec operator()(const Vec& b, const Vec& x, const Mat& z) const { return eval(b, x, z); }
  Mat zero_z() const { return Mat::Zero(n, dW); }
};

inline DriftField constant_drift(int d, const Vec& c, int dW = 1) {
  DriftField f;
  f.d = d;
  f.n = static_cast<int>(c.size());
  f.dW = dW;
  f.eval = [c](const Vec&, const Vec&, const Mat&) { return c; };
  f.L = 0.0;
  f.L2 = c.norm();
  f.x0 = Vec::Zero(f.n);
  f.description = "constant";
  return f;
}

inline DriftField zero_drift(int d, int n, int dW = 1) {
  DriftField f = constant_drift(d, Vec::Zero(n), dW);
  f.description = "zero";
  return f;
}

/// f = A x + c.
inline DriftField linear_x_drift(int d, const Mat& A, const Vec& c, int dW = 1) {
  if (A.rows() != c.size() || A.cols() != c.size()) fail(ErrorKind::dimension, "linear drift: A must be n x n");
  DriftField f;
  f.d = d;
  f.n = static_cast<int>(c.size());
  f.dW = dW;
  f.eval = [A, c](const Vec&, const Vec& x, const Mat&) { return Vec(A * x + c); };
  f.L = A.norm();
  f.L2 = c.norm();
  f.x0 = Vec::Zero(f.n);
  f.description = "linear-in-x";
  return f;
}

/// f = M vec(z), vec the row-major flattening of z (M is n x n d_W).
inline DriftField linear_z_drift(int d, int n, int dW, const Eigen::MatrixXd& M) {
  if (M.rows() != n || M.cols() != n * dW) fail(ErrorKind::dimension, "linear-in-z drift: M must be n x (n d_W)");
  DriftField f;
  f.d = d;
  f.n = n;
  f.dW = dW;
  f.eval = [M, n, dW](const Vec&, const Vec&, const Mat& z) {
    Eigen::VectorXd v(n * dW);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dW; ++j) v[i * dW + j] = z(i, j);
    return Vec(M * v);
  };
  f.z_dependent = true;
  f.L = M.norm();
  f.L2 = 0.0;
  f.x0 = Vec::Zero(n);
  f.description = "linear-in-z";
  return f;
}

/// f = c (x - o).
inline DriftField radial_drift(int d, const Vec& o, double c, int dW = 1) {
  DriftField f;
  f.d = d;
  f.n = static_cast<int>(o.size());
  f.dW = dW;
  f.eval = [o, c](const Vec&, const Vec& x, const Mat&) { return Vec(c * (x - o)); };
  f.L = std::abs(c);
  f.L2 = 0.0;
  f.x0 = o;
  f.description = "radial";
  return f;
}

/// f = grad_g G, the Riemannian gradient of a potential on the target.
inline DriftField gradient_drift(const Chart& chart, int d, const ScalarField& G, int dW = 1, std::string name = "G") {
  DriftField f;
  f.d = d;
  f.n = chart.dim();
  f.dW = dW;
  f.eval = [chart, G](const Vec&, const Vec& x, const Mat&) {
    const Vec g = euclidean_gradient(G, x);
    if (chart.flat()) return g;
    return Vec(chart.metric_unchecked(x).llt().solve(g));
  };
  f.x0 = chart.bounds().center();
  f.description = "gradient-of-" + name;
  return f;
}

/// Named potentials accepted by gradient_drift configs.
inline ScalarField named_potential(const std::string& name, int n) {
  if (name == "half-norm-squared")
    return ScalarField{[](const Vec& u) { return 0.5 * u.squaredNorm(); }, [](const Vec& u) { return u; },
                       [n](const Vec&) { return Mat(Mat::Identity(n, n)); }};
  if (name == "first-coordinate")
    return ScalarField{[](const Vec& u) { return u[0]; }, [n](const Vec&) { Vec g = Vec::Zero(n); g[0] = 1; return g; },
                       [n](const Vec&) { return Mat(Mat::Zero(n, n)); }};
  fail(ErrorKind::config, "unknown potential '" + name + "'");
}

/// Drift from config: {"form": zero|constant|linear-x|linear-z|radial|gradient, ...}.
inline DriftField drift_from_json(const json& j, const Chart& chart, int d, int dW) {
  check_keys(j, {"form", "value", "A", "c", "M", "center", "scale", "potential", "L", "L2"}, "drift");
  const std::string form = j.at("form").get<std::string>();
  const int n = chart.dim();
  auto matrix = [&](const char* key, int rows, int cols) {
    const json& a = j.at(key);
    if (!a.is_array() || static_cast<int>(a.size()) != rows) fail(ErrorKind::config, std::string("drift.") + key + ": wrong rows");
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
      const Vec row = json_vec(a[r], std::string("drift.") + key);
      if (row.size() != cols) fail(ErrorKind::config, std::string("drift.") + key + ": wrong columns");
      m.row(r) = row.transpose();
    }
    return m;
  };
  DriftField f;
  if (form == "zero") {
    f = zero_drift(d, n, dW);
  } else if (form == "constant") {
    const Vec c = json_vec(j.at("value"), "drift.value");
    if (c.size() != n) fail(ErrorKind::config, "drift.value: length must equal the target dimension");
    f = constant_drift(d, c, dW);
  } else if (form == "linear-x") {
    const Vec c = j.contains("c") ? json_vec(j.at("c"), "drift.c") : Vec(Vec::Zero(n));
    f = linear_x_drift(d, Mat(matrix("A", n, n)), c, dW);
  } else if (form == "linear-z") {
    f = linear_z_drift(d, n, dW, matrix("M", n, n * dW));
  } else if (form == "radial") {
    const Vec o = j.contains("center") ? json_vec(j.at("center"), "drift.center") : Vec(Vec::Zero(n));
    f = radial_drift(d, o, json_get<double>(j, "scale", 1.0), dW);
  } else if (form == "gradient") {
    const std::string p = json_get<std::string>(j, "potential", "half-norm-squared");
    f = gradient_drift(chart, d, named_potential(p, n), dW, p);
  } else {
    fail(ErrorKind::config, "unknown drift form '" + form + "'");
  }
  if (f.n != n) fail(ErrorKind::config, "drift dimension does not match the chart");
  if (j.contains("L")) f.L = j.at("L").get<double>();
  if (j.contains("L2")) f.L2 = j.at("L2").get<double>();
  return f;
}

struct TruncationParams {
  double epsilon = 0.5;
  double width = -1.0;  // ramp width w; non-positive means 1/epsilon

  double threshold() const { return 1.0 / epsilon; }
  double w() const { return width > 0 ? width : 1.0 / epsilon; }
};

inline void validate(const TruncationParams& p, bool allow_large = false) {
  if (!(p.epsilon > 0) || (!allow_large && p.epsilon >= 1)) fail(ErrorKind::parameter, "epsilon must lie in (0,1)");
}

/// s_eps(t) = (t - 1/eps) S5((t - 1/eps)/w) beyond the threshold, 0 before it.
inline double ramp(double t, const TruncationParams& p) {
  const double u = t - p.threshold();
  if (u <= 0) return 0.0;
  return u * smootherstep(u / p.w());
}

inline Mat truncate(const Mat& z, const TruncationParams& p) {
  const double s = ramp(z.norm(), p);
  return s == 0.0 ? z : Mat(z / (1.0 + s));
}

/// 1 on omega, 0 beyond the collar {chi >= c1} and off the chart.
inline double cutoff(const ConvexDomain& dom, const Vec& x) {
  if (!dom.chart.contains(x)) return 0.0;
  const double chi = dom.chi(x);
  if (chi <= dom.level) return 1.0;
  if (chi >= dom.collar) return 0.0;
  return 1.0 - smootherstep((chi - dom.level) / (dom.collar - dom.level));
}

/// gamma(b,x,z) = phi(x) (1/2 Gamma(x)(zbar, zbar) - f(b, x, zbar)).
class GammaDrift {
 public:
  GammaDrift(Chart chart, std::optional<ConvexDomain> dom, DriftField f, TruncationParams p)
      : chart_(std::move(chart)), dom_(std::move(dom)), f_(std::move(f)), p_(p) {}

  Vec operator()(const Vec& b, const Vec& x, const Mat& z) const {
    const int n = chart_.dim();
    const double phi = dom_ ? cutoff(*dom_, x) : 1.0;
    if (phi == 0.0) return Vec::Zero(n);
    const Mat zb = truncate(z, p_);
    Vec q = -f_(b, x, zb);
    if (!chart_.flat()) q += 0.5 * christoffel_contract(christoffel_unchecked(chart_, x), zb);
    return phi * q;
  }

  const Chart& chart() const { return chart_; }
  const std::optional<ConvexDomain>& domain() const { return dom_; }
  const DriftField& drift() const { return f_; }
  const TruncationParams& params() const { return p_; }
  bool constrained() const { return dom_.has_value(); }

 private:
  Chart chart_;
  std::optional<ConvexDomain> dom_;
  DriftField f_;
  TruncationParams p_;
};

inline GammaDrift gamma_assemble(const Chart& chart, const ConvexDomain& dom, const DriftField& f,
                                 const TruncationParams& p, bool allow_large_epsilon = false) {
  validate(p, allow_large_epsilon);
  if (dom.dim() != chart.dim() || f.n != chart.dim()) fail(ErrorKind::dimension, "gamma_assemble: dimension mismatch");
  return GammaDrift(chart, dom, f, p);
}

/// Flat chart without cut-off, for comparisons with closed forms on all of R^n.
inline GammaDrift gamma_unconstrained(const Chart& chart, const DriftField& f, const TruncationParams& p,
                                      bool allow_large_epsilon = false) {
  validate(p, allow_large_epsilon);
  if (!chart.flat()) fail(ErrorKind::config, "unconstrained mode requires a flat chart");
  if (f.n != chart.dim()) fail(ErrorKind::dimension, "gamma_unconstrained: dimension mismatch");
  return GammaDrift(chart, std::nullopt, f, p);
}

/// Sampling region for drift probes.
struct DriftRegion {
  Box b_box;
  Box x_box;
  double z_cap = 1.0;
};

inline DriftRegion default_region(const DriftField& f, const Box& x_box, double z_cap) {
  return DriftRegion{Box{Vec::Constant(f.d, -1.0), Vec::Constant(f.d, 1.0)}, x_box, z_cap};
}

namespace detail {

inline Mat random_z(int n, int dW, double cap, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mat z(n, dW);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dW; ++j) z(i, j) = nd(rng);
  const double r = cap * std::pow(u(rng), 1.0 / (n * dW));
  return z.norm() > 0 ? Mat(z * (r / z.norm())) : z;
}

}  // namespace detail

struct LipschitzEstimate {
  double L_prime = 0.0;
  double L2 = 0.0;
};

/// Largest quotient |df| / ((|db| + |dx|)(1 + |z| + |z'|) + |dz|) over random and nearby pairs.
inline LipschitzEstimate lipschitz_probe(const DriftField& f, int count, const DriftRegion& reg, std::uint64_t seed = 1) {
  LipschitzEstimate out;
  std::mt19937_64 rng = make_stream(seed, 31);
  std::normal_distribution<double> nd;
  const double local = 1e-3;
  for (int i = 0; i < count; ++i) {
    const Vec b = uniform_in(reg.b_box, rng), x = uniform_in(reg.x_box, rng);
    const Mat z = detail::random_z(f.n, f.dW, reg.z_cap, rng);
    Vec b1, x1;
    Mat z1;
    if (i % 2 == 0) {
      b1 = uniform_in(reg.b_box, rng);
      x1 = uniform_in(reg.x_box, rng);
      z1 = detail::random_z(f.n, f.dW, reg.z_cap, rng);
    } else {
      b1 = b;
      x1 = x;
      z1 = z;
      for (int k = 0; k < b1.size(); ++k) b1[k] += local * nd(rng);
      for (int k = 0; k < x1.size(); ++k) x1[k] += local * nd(rng);
      for (int r = 0; r < z1.rows(); ++r)
        for (int c = 0; c < z1.cols(); ++c) z1(r, c) += local * nd(rng);
      b1 = b1.cwiseMax(reg.b_box.lo).cwiseMin(reg.b_box.hi);
      x1 = x1.cwiseMax(reg.x_box.lo).cwiseMin(reg.x_box.hi);
    }
    const double den = ((b - b1).norm() + (x - x1).norm()) * (1 + z.norm() + z1.norm()) + (z - z1).norm();
    if (den <= 0) continue;
    out.L_prime = std::max(out.L_prime, (f(b, x, z) - f(b1, x1, z1)).norm() / den);
  }
  const Vec x0 = f.x0.size() == f.n ? f.x0 : Vec(Vec::Zero(f.n));
  for (int i = 0; i < std::max(count / 10, 10); ++i)
    out.L2 = std::max(out.L2, f(uniform_in(reg.b_box, rng), x0, f.zero_z()).norm());
  return out;
}

/// Radial bump exp(-1/(1 - r^2)) on [0, 1).
inline double bump(double r) { return r < 1.0 ? std::exp(-1.0 / (1.0 - r * r)) : 0.0; }

struct MollifyOptions {
  double z_cap = 1.0;      // sample |z| <= z_cap when fitting C_hat
  Box b_box;               // b-range of boundary samples; empty means [-1,1]^d
  int boundary_samples = 64;
  int m_start = 8;         // quadrature points per axis, doubled until converged
  int m_max = 32;
  double rel_tol = 1e-4;
  long node_budget = 400000;
  std::uint64_t seed = 11;
};

/// Normalized tensor-midpoint weights of rho_l over the joint (b, x, z) space.
struct MollifierRule {
  int dims = 0;
  int m = 0;
  double l = 1.0;
  std::vector<Eigen::VectorXd> offsets;
  std::vector<double> weights;
  double raw_integral = 0.0;  // unnormalized midpoint integral of bump(l |u|)
};

inline MollifierRule mollifier_rule(int dims, int m, double l) {
  MollifierRule R;
  R.dims = dims;
  R.m = m;
  R.l = l;
  const double h = 2.0 / (l * m);
  long total = 1;
  for (int i = 0; i < dims; ++i) total *= m;
  double sum = 0.0;
  Eigen::VectorXd u(dims);
  for (long idx = 0; idx < total; ++idx) {
    long r = idx;
    for (int i = 0; i < dims; ++i) {
      u[i] = -1.0 / l + (static_cast<double>(r % m) + 0.5) * h;
      r /= m;
    }
    const double w = bump(l * u.norm());
    if (w <= 0) continue;
    R.offsets.push_back(u);
    R.weights.push_back(w);
    sum += w;
  }
  R.raw_integral = sum * std::pow(h, dims);
  for (double& w : R.weights) w /= sum;
  return R;
}

/// f_l(b,x,z) = sum_q w_q f((b,x,z) - u_q), with f extended by 0 off the chart.
inline Vec mollified_value(const DriftField& f, const Chart& chart, const MollifierRule& R, const Vec& b, const Vec& x,
                           const Mat& z) {
  Vec acc = Vec::Zero(f.n);
  Vec bq(f.d), xq(f.n);
  Mat zq(f.n, f.dW);
  for (std::size_t q = 0; q < R.weights.size(); ++q) {
    const Eigen::VectorXd& u = R.offsets[q];
    for (int i = 0; i < f.d; ++i) bq[i] = b[i] - u[i];
    for (int i = 0; i < f.n; ++i) xq[i] = x[i] - u[f.d + i];
    if (!chart.contains(xq)) continue;
    for (int i = 0; i < f.n; ++i)
      for (int j = 0; j < f.dW; ++j) zq(i, j) = z(i, j) - u[f.d + f.n + i * f.dW + j];
    acc += R.weights[q] * f(bq, xq, zq);
  }
  return acc;
}

struct MollifiedDrift {
  DriftField field;  // g_l
  double l = 1.0;
  double A = 0.0;
  double C_hat = 0.0;
  double kappa = 0.0;   // min over boundary samples of n . (x - o)
  double margin = 0.0;  // min over boundary samples of n . g_l
  int m = 0;
};

/// g_l = f_l + (A/l)(x - o) with A fitted so that n . g_l >= 1/l on sampled boundary points.
inline MollifiedDrift mollify(const DriftField& f, int l, const ConvexDomain& dom, const MollifyOptions& opt = {}) {
  if (l < 1) fail(ErrorKind::parameter, "mollify: l must be a positive integer");
  if (f.n != dom.dim()) fail(ErrorKind::dimension, "mollify: drift and domain dimensions differ");
  // omega and the bump support must stay inside the chart
  const Box& cb = dom.chart.bounds();
  for (int i = 0; i < dom.dim(); ++i)
    if (dom.hull.lo[i] - 1.0 / l < cb.lo[i] - 1e-12 || dom.hull.hi[i] + 1.0 / l > cb.hi[i] + 1e-12)
      fail(ErrorKind::parameter, "mollify: 1/l exceeds the gap between the domain collar and the chart boundary");
  const int dims = f.d + f.n + f.n * f.dW;
  const Box bbox = opt.b_box.dim() == f.d ? opt.b_box : Box{Vec::Constant(f.d, -1.0), Vec::Constant(f.d, 1.0)};

  std::mt19937_64 rng = make_stream(opt.seed, 7);
  struct Sample {
    Vec b, x;
    Mat z;
  };
  std::vector<Sample> samples;
  for (const Vec& x : boundary_sample(dom, opt.boundary_samples, opt.seed))
    samples.push_back({uniform_in(bbox, rng), x, detail::random_z(f.n, f.dW, opt.z_cap, rng)});

  // refine the rule until boundary values stop moving
  int m = opt.m_start;
  MollifierRule R = mollifier_rule(dims, m, l);
  std::vector<Vec> prev;
  for (const Sample& s : samples) prev.push_back(mollified_value(f, dom.chart, R, s.b, s.x, s.z));
  bool converged = false;
  while (!converged) {
    const int m2 = 2 * m;
    if (m2 > opt.m_max || std::pow(static_cast<double>(m2), dims) > static_cast<double>(opt.node_budget))
      fail(ErrorKind::accuracy, "mollify: quadrature did not converge within the node budget");
    MollifierRule R2 = mollifier_rule(dims, m2, l);
    std::vector<Vec> next;
    double scale = 0.0, change = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      next.push_back(mollified_value(f, dom.chart, R2, samples[i].b, samples[i].x, samples[i].z));
      scale = std::max(scale, next.back().norm());
      change = std::max(change, (next.back() - prev[i]).norm());
    }
    converged = change <= opt.rel_tol * std::max(scale, 1e-12) || change <= 1e-14;
    m = m2;
    R = std::move(R2);
    prev = std::move(next);
  }

  MollifiedDrift out;
  out.l = l;
  out.m = m;
  const Vec o = dom.interior;
  out.kappa = std::numeric_limits<double>::infinity();
  std::vector<Vec> normals;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    out.C_hat = std::max(out.C_hat, l * (prev[i] - f(s.b, s.x, s.z)).norm());
    Vec nrm = euclidean_gradient(dom.chi, s.x);
    nrm /= nrm.norm();
    normals.push_back(nrm);
    out.kappa = std::min(out.kappa, nrm.dot(s.x - o));
  }
  if (!(out.kappa > 0)) fail(ErrorKind::domain, "mollify: domain is not star-shaped about its interior point");
  out.A = (out.C_hat + 1.0) / out.kappa;

  auto rule = std::make_shared<const MollifierRule>(std::move(R));
  const Chart chart = dom.chart;
  const double shift = out.A / l;
  out.field = f;
  out.field.eval = [f, chart, rule, shift, o](const Vec& b, const Vec& x, const Mat& z) {
    return Vec(mollified_value(f, chart, *rule, b, x, z) + shift * (x - o));
  };
  out.field.description = f.description + " mollified l=" + std::to_string(l);
  out.margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < samples.size(); ++i)
    out.margin = std::min(out.margin, normals[i].dot(prev[i] + shift * (samples[i].x - o)));
  return out;
}

}  // namespace mbsde
