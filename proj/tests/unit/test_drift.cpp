#include "generators.hpp"
#include "mbsde/drift.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include <numbers>

using namespace mbsde;

namespace {

Mat col(std::initializer_list<double> v) { return Mat(vec(v)); }

ConvexDomain unit_interval() { return squared_norm_domain(charts::flat(1), vec({0.0}), 1.0, 1.5); }

}  // namespace

TEST(Truncate, Examples) {
  TruncationParams p{0.5, -1.0};
  const Mat z = col({0.6, 0.8});
  EXPECT_EQ(truncate(z, p), z);
  TruncationParams q{0.5, 2.0};
  const Mat big = col({6.0, 8.0});
  EXPECT_DOUBLE_EQ(ramp(10.0, q), 8.0);
  EXPECT_NEAR((truncate(big, q) - big / 9.0).norm(), 0.0, 1e-15);
  EXPECT_NEAR(truncate(big, q).norm(), 10.0 / 9.0, 1e-14);
  EXPECT_EQ(truncate(col({0.0}), p).norm(), 0.0);
}

TEST(Truncate, RampShape) {
  TruncationParams p{0.25, 3.0};
  double prev = 0.0;
  for (double t = 0; t < 20; t += 0.01) {
    const double s = ramp(t, p);
    if (t <= 4.0) {
      EXPECT_EQ(s, 0.0);
    }
    EXPECT_GE(s, prev);
    if (t >= 7.0) {
      EXPECT_NEAR(s, t - 4.0, 1e-12);
    }
    prev = s;
  }
}

TEST(Truncate, GloballyLipschitz) {
  TruncationParams p{0.5, -1.0};
  auto fit = [&](int pairs, std::uint64_t seed) {
    gen::Source src(seed);
    double q = 0.0;
    for (int i = 0; i < pairs; ++i) {
      const Mat a = src.matrix(2, 2, 4.0);
      const Mat b = i % 2 ? Mat(a + src.matrix(2, 2, 1e-3)) : src.matrix(2, 2, 4.0);
      q = std::max(q, (truncate(a, p) - truncate(b, p)).norm() / (a - b).norm());
    }
    return q;
  };
  const double c1 = fit(2000, 1), c2 = fit(4000, 2);
  EXPECT_TRUE(std::isfinite(c1));
  EXPECT_LT(std::abs(c2 - c1) / c1, 0.2);
  // zbar is uniformly bounded
  double sup = 0.0;
  for (double t = 0; t < 1e4; t *= 1.01, t += 1e-3) sup = std::max(sup, t / (1 + ramp(t, p)));
  EXPECT_LT(sup, 3.0);
}

TEST(Cutoff, Examples) {
  ConvexDomain d = unit_interval();
  EXPECT_EQ(cutoff(d, vec({0.9})), 1.0);
  EXPECT_EQ(cutoff(d, vec({1.3})), 0.0);
  EXPECT_NEAR(cutoff(d, vec({std::sqrt(1.25)})), 0.5, 1e-12);
  EXPECT_EQ(cutoff(d, vec({50.0})), 0.0);  // off the chart
  EXPECT_THROW(squared_norm_domain(charts::flat(1), vec({0.0}), 1.0, 0.9), Error);
}

TEST(Cutoff, MonotoneAcrossCollar) {
  ConvexDomain d = unit_interval();
  double prev = 1.0;
  for (double x = 0.0; x < 2.0; x += 1e-3) {
    const double c = cutoff(d, vec({x}));
    EXPECT_LE(c, prev + 1e-15);
    EXPECT_GE(c, 0.0);
    prev = c;
  }
}

TEST(Gamma, Examples) {
  TruncationParams p{0.5, -1.0};
  ConvexDomain d = squared_norm_domain(charts::flat(2), vec({0, 0}), 1.0);
  GammaDrift g = gamma_assemble(charts::flat(2), d, constant_drift(1, vec({0.2, -0.1})), p);
  gen::Source src(3);
  for (int i = 0; i < 50; ++i) {
    Mat z = src.matrix(2, 1);
    z *= 2.0 * src.uniform(0, 1) / z.norm();
    EXPECT_EQ(g(vec({0.0}), src.in_disc(vec({0, 0}), 0.99), z), vec({-0.2, 0.1}));
  }
  EXPECT_EQ(g(vec({0.0}), vec({2.0, 0.0}), col({1, 0})), vec({0.0, 0.0}));

  Chart hp = charts::half_plane();
  ConvexDomain ball = geodesic_ball(hp, vec({0, 2}), 0.5);
  GammaDrift gh = gamma_assemble(hp, ball, zero_drift(1, 2), p);
  const Vec v = gh(vec({0.0}), vec({0, 2}), col({1, 0}));
  EXPECT_NEAR(v[0], 0.0, 1e-14);
  EXPECT_NEAR(v[1], 0.25, 1e-14);
}

TEST(Gamma, EpsilonRange) {
  ConvexDomain d = unit_interval();
  EXPECT_THROW(gamma_assemble(charts::flat(1), d, zero_drift(1, 1), {1.5, -1}), Error);
  EXPECT_NO_THROW(gamma_assemble(charts::flat(1), d, zero_drift(1, 1), {1.5, -1}, true));
  EXPECT_THROW(gamma_unconstrained(charts::half_plane(), zero_drift(1, 2), {0.5, -1}), Error);
}

TEST(Gamma, BoundedUnderTruncation) {
  TruncationParams p{0.5, -1.0};
  Chart hp = charts::half_plane();
  ConvexDomain ball = geodesic_ball(hp, vec({0, 1.5}), 0.8);
  DriftField f = linear_z_drift(1, 2, 1, Eigen::MatrixXd::Identity(2, 2) * 0.3);
  GammaDrift g = gamma_assemble(hp, ball, f, p);
  auto sup = [&](double cap) {
    gen::Source src(4);
    double m = 0.0;
    for (int i = 0; i < 10000; ++i) {
      Mat z = src.matrix(2, 1);
      z *= cap * src.uniform(0, 1) / z.norm();
      m = std::max(m, g(vec({0.0}), src.point(ball.hull), z).norm());
    }
    return m;
  };
  const double a = sup(2.0), b = sup(20.0), c = sup(2000.0);
  EXPECT_TRUE(std::isfinite(c));
  EXPECT_LT(b, 1.5 * a);
  EXPECT_LT(c, 1.5 * a);
}

TEST(Lipschitz, Examples) {
  DriftRegion reg{make_box({-1}, {1}), make_box({-1}, {1}), 2.0};
  EXPECT_EQ(lipschitz_probe(constant_drift(1, vec({0.7})), 1000, reg).L_prime, 0.0);
  const LipschitzEstimate lx = lipschitz_probe(linear_x_drift(1, Mat::Identity(1, 1), vec({0.0})), 1000, reg);
  EXPECT_LE(lx.L_prime, 1.0 + 1e-12);
  EXPECT_GT(lx.L_prime, 0.3);
  const LipschitzEstimate lz = lipschitz_probe(linear_z_drift(1, 1, 1, Eigen::MatrixXd::Ones(1, 1)), 1000, reg);
  EXPECT_LE(lz.L_prime, 1.0 + 1e-12);
  EXPECT_GT(lz.L_prime, 0.9);
  EXPECT_NEAR(lipschitz_probe(constant_drift(1, vec({0.7})), 100, reg).L2, 0.7, 1e-15);
}

TEST(Mollifier, RuleIntegratesBump) {
  // continuous integral: surface area of S^{D-1} times int_0^1 r^{D-1} bump(r) dr, scaled by l^{-D}
  using boost::math::quadrature::gauss_kronrod;
  for (int D : {1, 2, 3}) {
    const double radial = gauss_kronrod<double, 61>::integrate([D](double r) { return std::pow(r, D - 1) * bump(r); },
                                                               0.0, 1.0, 15, 1e-14);
    const double area = 2 * std::pow(std::numbers::pi, 0.5 * D) / std::tgamma(0.5 * D);
    const double l = 50.0;
    const MollifierRule R = mollifier_rule(D, 48, l);
    const double exact = area * radial / std::pow(l, D);
    EXPECT_NEAR(R.raw_integral / exact, 1.0, 1e-6) << D;
    double s = 0.0;
    for (double w : R.weights) s += w;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Mollify, Examples) {
  ConvexDomain d = unit_interval();
  MollifyOptions opt;
  opt.z_cap = 2.0;
  MollifiedDrift c = mollify(constant_drift(1, vec({0.4})), 50, d, opt);
  EXPECT_NEAR(mollified_value(constant_drift(1, vec({0.4})), d.chart, mollifier_rule(3, c.m, 50), vec({0.1}),
                              vec({0.2}), col({0.3})).value(),
              0.4, 1e-14);
  DriftField fx = linear_x_drift(1, Mat::Identity(1, 1), vec({0.0}));
  MollifiedDrift m = mollify(fx, 100, d, opt);
  const MollifierRule R = mollifier_rule(3, m.m, 100);
  for (double x : {-0.9, -0.3, 0.0, 0.5, 0.95})
    EXPECT_LE(std::abs(mollified_value(fx, d.chart, R, vec({0.0}), vec({x}), col({0.1}))[0] - x), 0.01);
  EXPECT_GE(m.margin, 1.0 / 100 - 1e-12);
  for (const Vec& x : boundary_sample(d, 4, 3)) {
    const double nx = x[0] > 0 ? 1.0 : -1.0;
    EXPECT_GT(nx * m.field(vec({0.0}), x, col({0.5}))[0], 0.0);
  }
}

TEST(Mollify, GapPrecondition) {
  ConvexDomain d = squared_norm_domain(charts::flat(1, 1.6), vec({0.0}), 1.0, 1.5);
  EXPECT_THROW(mollify(zero_drift(1, 1), 2, d), Error);
  EXPECT_NO_THROW(mollify(zero_drift(1, 1), 50, d));
}

TEST(Mollify, ConvergesAtFirstOrder) {
  // f = |z|: f_l - f = E|w| at z = 0, proportional to 1/l
  ConvexDomain d = unit_interval();
  DriftField f;
  f.eval = [](const Vec&, const Vec&, const Mat& z) { return vec({std::abs(z(0, 0))}); };
  f.z_dependent = true;
  std::vector<double> scaled;
  for (int l : {25, 50, 100}) {
    MollifiedDrift m = mollify(f, l, d);
    const MollifierRule R = mollifier_rule(3, m.m, l);
    double err = 0.0;
    gen::Source src(5);
    for (int i = 0; i < 200; ++i) {
      const Vec x = vec({src.uniform(-1, 1)});
      const Mat z = col({i % 4 == 0 ? 0.0 : src.uniform(-2, 2)});
      err = std::max(err, std::abs(mollified_value(f, d.chart, R, vec({0.0}), x, z)[0] - f(vec({0.0}), x, z)[0]));
    }
    scaled.push_back(err * l);
  }
  EXPECT_NEAR(scaled[1] / scaled[0], 1.0, 0.1);
  EXPECT_NEAR(scaled[2] / scaled[1], 1.0, 0.1);
}

TEST(DriftConfig, Forms) {
  Chart c = charts::flat(2);
  DriftField f = drift_from_json(json::parse(R"({"form":"constant","value":[1,2],"L2":3})"), c, 1, 1);
  EXPECT_EQ(f(vec({0}), vec({0, 0}), f.zero_z()), vec({1, 2}));
  EXPECT_EQ(f.L2, 3.0);
  DriftField r = drift_from_json(json::parse(R"({"form":"radial","scale":2})"), c, 1, 1);
  EXPECT_EQ(r(vec({0}), vec({1, -1}), r.zero_z()), vec({2, -2}));
  DriftField g = drift_from_json(json::parse(R"({"form":"gradient","potential":"half-norm-squared"})"), c, 2, 2);
  EXPECT_NEAR((g(vec({0, 0}), vec({0.3, 0.4}), g.zero_z()) - vec({0.3, 0.4})).norm(), 0.0, 1e-8);
  EXPECT_THROW(drift_from_json(json::parse(R"({"form":"constant","value":[1,2],"bogus":1})"), c, 1, 1), Error);
  EXPECT_THROW(drift_from_json(json::parse(R"({"form":"spiral"})"), c, 1, 1), Error);
  EXPECT_THROW(drift_from_json(json::parse(R"({"form":"constant","value":[1]})"), c, 1, 1), Error);
}
