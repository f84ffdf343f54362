#include "generators.hpp"
#include "mbsde/geometry.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace mbsde;

namespace {

const double e = std::numbers::e;

Chart fd_exp_interval() {
  // same metric as exp_interval but without closed-form derivative: FD mode
  return charts::interval("exp-fd", [](double x) { return std::exp(2 * x); }, {}, -2, 2);
}

}  // namespace

TEST(Christoffel, FlatIsZero) {
  Chart c = charts::flat(2);
  Christoffel G = christoffel(c, vec({0.3, -1.2}));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) EXPECT_EQ(G(i, j, k), 0.0);
}

TEST(Christoffel, HalfPlaneAtZeroTwo) {
  Chart c = charts::half_plane();
  const Vec x = vec({0.0, 2.0});
  for (const Christoffel& G : {christoffel(c, x), christoffel_fd(c, x)}) {
    EXPECT_NEAR(G(0, 0, 1), -0.5, 1e-9);
    EXPECT_NEAR(G(0, 1, 0), -0.5, 1e-9);
    EXPECT_NEAR(G(1, 0, 0), 0.5, 1e-9);
    EXPECT_NEAR(G(1, 1, 1), -0.5, 1e-9);
    EXPECT_NEAR(G(0, 0, 0), 0.0, 1e-9);
    EXPECT_NEAR(G(0, 1, 1), 0.0, 1e-9);
    EXPECT_NEAR(G(1, 0, 1), 0.0, 1e-9);
  }
}

TEST(Christoffel, ExpIntervalFiniteDifference) {
  Chart c = fd_exp_interval();
  EXPECT_FALSE(c.has_closed_christoffel());
  EXPECT_NEAR(christoffel(c, vec({0.0}))(0, 0, 0), 1.0, 1e-8);
  EXPECT_NEAR(christoffel(charts::exp_interval(), vec({0.0}))(0, 0, 0), 1.0, 1e-15);
}

TEST(Christoffel, OutsideBoundsIsDomainError) {
  Chart c = charts::half_plane();
  try {
    christoffel(c, vec({0.0, -1.0}));
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::domain);
  }
}

TEST(Christoffel, SingularMetricIsConditioningError) {
  ChartModel m;
  m.name = "degenerate";
  m.n = 2;
  m.bounds = make_box({-1, -1}, {1, 1});
  m.metric = [](const Vec& x) {
    Mat g = Mat::Zero(2, 2);
    g(0, 0) = 1 + x[0] * x[0];
    return g;
  };
  try {
    christoffel(Chart(m), vec({0.1, 0.1}));
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::conditioning);
  }
}

TEST(Christoffel, FiniteDifferenceMatchesClosedForm) {
  gen::Source src(11);
  for (const Chart& c : {charts::half_plane(), charts::sphere_cap(1.0)}) {
    for (int s = 0; s < 200; ++s) {
      const Vec x = src.point(gen::shrink(c.bounds(), 0.05));
      const Christoffel a = christoffel(c, x), b = christoffel_fd(c, x);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          for (int k = 0; k < 2; ++k) {
            EXPECT_NEAR(a(i, j, k), b(i, j, k), 1e-5) << c.name();
            EXPECT_EQ(b(i, j, k), b(i, k, j));
          }
    }
  }
}

TEST(Metric, PositiveDefiniteOnSamples) {
  gen::Source src(12);
  for (const Chart& c : {charts::flat(2), charts::half_plane(), charts::sphere_cap(1.0), charts::exp_interval()}) {
    for (int s = 0; s < 100; ++s) {
      const Vec x = src.point(c.bounds());
      const Mat g = c.metric(x);
      EXPECT_LT((g - g.transpose()).norm(), 1e-15);
      EXPECT_GT(metric_min_eigenvalue(c, x), 0.0) << c.name();
    }
  }
}

TEST(RiemannianNorm, Examples) {
  EXPECT_DOUBLE_EQ(riemannian_norm(charts::flat(2), vec({0, 0}), vec({1, 0})), 1.0);
  EXPECT_NEAR(riemannian_norm(charts::half_plane(), vec({0, 2}), vec({2, 0})), 1.0, 1e-15);
  EXPECT_EQ(riemannian_norm(charts::half_plane(), vec({0, 2}), Mat(Mat::Zero(2, 3))), 0.0);
  EXPECT_THROW(riemannian_norm(charts::half_plane(), vec({0, 2}), Mat(Mat::Zero(3, 1))), Error);
}

TEST(RiemannianNorm, EquivalenceConstantPerChart) {
  gen::Source src(13);
  for (const Chart& c : {charts::half_plane(), charts::sphere_cap(1.0), charts::exp_interval()}) {
    double cfit = 1.0;
    for (int s = 0; s < 1000; ++s) {
      const Vec x = src.point(c.bounds());
      const Mat z = src.matrix(c.dim(), 2);
      const double r = riemannian_norm(c, x, z) / z.norm();
      cfit = std::max({cfit, r, 1.0 / r});
    }
    EXPECT_TRUE(std::isfinite(cfit));
    gen::Source again(14);
    for (int s = 0; s < 1000; ++s) {
      const Vec x = again.point(c.bounds());
      const Mat z = again.matrix(c.dim(), 2);
      const double nr = riemannian_norm(c, x, z), ne = z.norm();
      // bounds are attained at box corners, so the refit stays within a few percent
      EXPECT_LE(nr, cfit * 1.05 * ne);
      EXPECT_GE(nr, ne / (cfit * 1.05));
    }
  }
}

TEST(Geodesic, Examples) {
  EXPECT_TRUE(geodesic_shoot(charts::flat(2), vec({1, 1}), vec({2, 0}), 1.0).isApprox(vec({3, 1})));
  const Vec y = geodesic_shoot(charts::half_plane(), vec({0, 1}), vec({0, 1}), 1.0);
  EXPECT_NEAR(y[0], 0.0, 1e-12);
  EXPECT_NEAR(y[1], e, 1e-9);
  EXPECT_EQ(geodesic_shoot(charts::half_plane(), vec({0.3, 1}), vec({0, 0}), 1.0), vec({0.3, 1}));
}

TEST(Geodesic, EscapeReportsTime) {
  Chart c = charts::half_plane(make_box({-3, 0.2}, {3, 2}));
  try {
    geodesic_shoot(c, vec({0, 1}), vec({0, 1}), 2.0);
    FAIL();
  } catch (const EscapeError& err) {
    // y = e^t leaves y <= 2 at t = ln 2
    EXPECT_NEAR(err.time, std::log(2.0), 1e-3);
  }
}

TEST(Geodesic, SpeedConserved) {
  gen::Source src(15);
  for (const Chart& c : {charts::half_plane(), charts::sphere_cap(1.0), charts::exp_interval()}) {
    for (int s = 0; s < 20; ++s) {
      const Vec x = src.point(gen::shrink(c.bounds(), 0.35));
      Vec v = src.gaussian(c.dim());
      v *= 0.4 * c.safe_radius() / riemannian_norm(c, x, v);
      const auto states = geodesic_samples(c, x, v, 1.0, 10);
      const double s0 = riemannian_norm(c, x, v);
      for (const auto& st : states) EXPECT_NEAR(riemannian_norm(c, st.x, st.v) / s0, 1.0, 1e-8) << c.name();
    }
  }
}

TEST(LogMap, Examples) {
  EXPECT_TRUE(log_map(charts::flat(2), vec({0, 0}), vec({3, 4})).isApprox(vec({3, 4})));
  const Vec v = log_map(charts::half_plane(), vec({0, 1}), vec({0, e}));
  EXPECT_NEAR(v[0], 0.0, 1e-8);
  EXPECT_NEAR(v[1], 1.0, 1e-8);
  EXPECT_EQ(log_map(charts::half_plane(), vec({0, 1}), vec({0, 1})), vec({0, 0}));
}

TEST(LogMap, RoundTripAndResidual) {
  gen::Source src(16);
  for (const Chart& c : {charts::half_plane(), charts::sphere_cap(1.0), charts::exp_interval()}) {
    for (int s = 0; s < 30; ++s) {
      const Vec x = src.point(gen::shrink(c.bounds(), 0.3));
      Vec v = src.gaussian(c.dim());
      v *= src.uniform(0.05, 0.5) * c.safe_radius() / riemannian_norm(c, x, v);
      Vec x1;
      try {
        x1 = geodesic_shoot(c, x, v, 1.0);
      } catch (const EscapeError&) {
        continue;  // generator rejection: shot leaves the chart
      }
      const Vec w = log_map(c, x, x1);
      EXPECT_LT((w - v).norm(), 1e-6) << c.name();
      EXPECT_LT((geodesic_shoot(c, x, w, 1.0) - x1).norm(), 1e-8);
      EXPECT_NEAR(riemannian_norm(c, x, w), distance(c, x, x1), 1e-6);
    }
  }
}

TEST(Distance, Examples) {
  EXPECT_DOUBLE_EQ(distance(charts::flat(2), vec({0, 0}), vec({3, 4})), 5.0);
  Chart hp = charts::half_plane();
  EXPECT_NEAR(distance(hp, vec({0, 1}), vec({0, e})), 1.0, 1e-14);
  EXPECT_NEAR(riemannian_norm(hp, vec({0, 1}), log_map(hp, vec({0, 1}), vec({0, e}))), 1.0, 1e-8);
  EXPECT_EQ(distance(hp, vec({0.5, 1.5}), vec({0.5, 1.5})), 0.0);
}

TEST(Distance, ClosedFormsAgreeWithShooting) {
  gen::Source src(17);
  for (const Chart& c : {charts::half_plane(), charts::sphere_cap(1.0), charts::exp_interval()}) {
    for (int s = 0; s < 30; ++s) {
      const Vec x = src.point(gen::shrink(c.bounds(), 0.3));
      const Vec x1 = src.point(gen::shrink(c.bounds(), 0.3));
      if (distance(c, x, x1) > 1.5) continue;
      EXPECT_NEAR(riemannian_norm(c, x, log_map(c, x, x1)), distance(c, x, x1), 1e-6) << c.name();
    }
  }
}

TEST(ParallelTransport, Examples) {
  const Mat z = (Mat(2, 2) << 1, 2, 3, 4).finished();
  EXPECT_EQ(parallel_transport(charts::flat(2), vec({0, 0}), vec({1, 1}), z), z);
  Chart hp = charts::half_plane();
  const Mat t = parallel_transport(hp, vec({0, 1}), vec({0, e}), Mat(vec({1, 0})));
  EXPECT_NEAR(t(0, 0), e, 1e-7);
  EXPECT_NEAR(t(1, 0), 0.0, 1e-7);
  EXPECT_NEAR(riemannian_norm(hp, vec({0, e}), t), 1.0, 1e-8);
  EXPECT_EQ(parallel_transport(hp, vec({0, 1}), vec({0, 1}), z), z);
}

TEST(ParallelTransport, Isometry) {
  gen::Source src(18);
  for (const Chart& c : {charts::half_plane(), charts::sphere_cap(1.0), charts::exp_interval()}) {
    for (int s = 0; s < 30; ++s) {
      const Vec x = src.point(gen::shrink(c.bounds(), 0.3));
      const Vec x1 = src.point(gen::shrink(c.bounds(), 0.3));
      if (distance(c, x, x1) > 1.5) continue;
      const Mat z = src.matrix(c.dim(), 2);
      const Mat t = parallel_transport(c, x, x1, z);
      for (int k = 0; k < 2; ++k)
        EXPECT_NEAR(riemannian_norm(c, x1, Vec(t.col(k))) / riemannian_norm(c, x, Vec(z.col(k))), 1.0, 1e-8);
    }
  }
}

TEST(ManifoldHessian, Examples) {
  ScalarField sq{[](const Vec& x) { return x.squaredNorm(); }, {}, {}};
  const Mat H = manifold_hessian(charts::flat(2), sq, vec({0.7, -0.2}));
  EXPECT_LT((H - 2 * Mat::Identity(2, 2)).norm(), 1e-6);

  Chart hp = charts::half_plane();
  const Vec o = vec({0, 1});
  ScalarField half_d2{[&](const Vec& x) { return 0.5 * std::pow(distance(hp, o, x), 2); }, {}, {}};
  const Mat Hd = manifold_hessian(hp, half_d2, vec({0, 2}));
  Eigen::SelfAdjointEigenSolver<Mat> es(Hd);
  EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);

  ScalarField constant{[](const Vec&) { return 3.0; }, {}, {}};
  EXPECT_LT(manifold_hessian(hp, constant, vec({0.2, 1.3})).norm(), 1e-12);
}

TEST(ProductChart, BlockStructure) {
  Chart p = charts::product(charts::half_plane(), charts::half_plane());
  EXPECT_EQ(p.dim(), 4);
  const Vec x = vec({0, 2, 0.5, 1});
  const Christoffel G = christoffel(p, x);
  EXPECT_NEAR(G(1, 0, 0), 0.5, 1e-15);
  EXPECT_NEAR(G(3, 2, 2), 1.0, 1e-15);
  EXPECT_EQ(G(0, 2, 1), 0.0);
  EXPECT_NEAR(distance(p, vec({0, 1, 0, 1}), vec({0, e, 0, e})), std::sqrt(2.0), 1e-13);
}

TEST(CustomChart, HalfPlaneTableMatchesBuiltIn) {
  const json j = json::parse(R"({
    "name": "hp-table", "dimension": 2,
    "bounds": {"lo": [-3, 0.2], "hi": [3, 6]},
    "metric": [[{"num": [{"c": 1}], "den": [{"c": 1, "pow": [0, 2]}]}, 0],
               [0, {"num": [{"c": 1}], "den": [{"c": 1, "pow": [0, 2]}]}]]
  })");
  Chart c = chart_from_json(j);
  Chart hp = charts::half_plane();
  EXPECT_FALSE(c.has_closed_christoffel());
  const Vec x = vec({0.3, 1.7}), x1 = vec({-0.2, 1.1});
  const Christoffel a = christoffel(c, x), b = christoffel(hp, x);
  for (int i = 0; i < 2; ++i)
    for (int j2 = 0; j2 < 2; ++j2)
      for (int k = 0; k < 2; ++k) EXPECT_NEAR(a(i, j2, k), b(i, j2, k), 1e-7);
  EXPECT_NEAR(distance(c, x, x1), distance(hp, x, x1), 1e-6);
}

TEST(CustomChart, ExpTermsAndUnknownKeys) {
  Chart c = chart_from_json(json::parse(
      R"({"dimension": 1, "bounds": {"lo": [-1], "hi": [1]}, "metric": [[[{"c": 1, "exp": [2]}]]]})"));
  EXPECT_NEAR(c.metric(vec({0.5}))(0, 0), e, 1e-14);
  EXPECT_NEAR(christoffel(c, vec({0.0}))(0, 0, 0), 1.0, 1e-8);
  EXPECT_THROW(chart_from_json(json::parse(R"({"dimension": 1, "bounds": {"lo": [-1], "hi": [1]},
      "metric": [[1]], "colour": 1})")), Error);
  EXPECT_EQ(chart_from_json(json("half-plane")).name(), "half-plane");
}
