#pragma once

#include "mbsde/geometry/charts.hpp"
#include "mbsde/json_util.hpp"

namespace mbsde {

/// c * prod x_i^pow_i * exp(sum e_i x_i)
struct MetricTerm {
  double c = 0.0;
  std::vector<int> pow;
  std::vector<double> exp;

  double operator()(const Vec& x) const {
    double v = c;
    for (std::size_t i = 0; i < pow.size(); ++i) v *= std::pow(x[static_cast<int>(i)], pow[i]);
    double e = 0.0;
    for (std::size_t i = 0; i < exp.size(); ++i) e += exp[i] * x[static_cast<int>(i)];
    return e == 0.0 ? v : v * std::exp(e);
  }
};

/// Ratio of two sums of MetricTerms (denominator defaults to 1).
struct MetricExpr {
  std::vector<MetricTerm> num;
  std::vector<MetricTerm> den;

  double operator()(const Vec& x) const {
    double a = 0.0;
    for (const auto& t : num) a += t(x);
    if (den.empty()) return a;
    double b = 0.0;
    for (const auto& t : den) b += t(x);
    return a / b;
  }
};

namespace detail {

inline MetricTerm parse_term(const json& j, int n, const std::string& where) {
  check_keys(j, {"c", "pow", "exp"}, where);
  MetricTerm t;
  t.c = json_get<double>(j, "c", 1.0);
  if (j.contains("pow")) t.pow = j.at("pow").get<std::vector<int>>();
  if (j.contains("exp")) t.exp = j.at("exp").get<std::vector<double>>();
  if (static_cast<int>(t.pow.size()) > n || static_cast<int>(t.exp.size()) > n)
    fail(ErrorKind::config, where + ": term has more exponents than dimensions");
  return t;
}

inline MetricExpr parse_expr(const json& j, int n, const std::string& where) {
  MetricExpr e;
  if (j.is_number()) {
    e.num.push_back(MetricTerm{j.get<double>(), {}, {}});
    return e;
  }
  if (j.is_array()) {
    for (const auto& t : j) e.num.push_back(parse_term(t, n, where));
    return e;
  }
  check_keys(j, {"num", "den"}, where);
  for (const auto& t : j.at("num")) e.num.push_back(parse_term(t, n, where));
  if (j.contains("den"))
    for (const auto& t : j.at("den")) e.den.push_back(parse_term(t, n, where));
  return e;
}

}  // namespace detail

/// Build a chart from JSON. Either {"builtin": name, ...params} or a custom metric
/// table {"dimension", "bounds": {"lo","hi"}, "metric": [[expr...]...]}; custom
/// charts use finite-difference Christoffels and shooting distances.
inline Chart chart_from_json(const json& j) {
  if (j.is_string()) return chart_from_json(json{{"builtin", j.get<std::string>()}});
  if (j.contains("builtin")) {
    check_keys(j, {"builtin", "dimension", "half_width", "K", "extent", "a", "bounds"}, "chart");
    const std::string b = j.at("builtin").get<std::string>();
    if (b == "flat") {
      const int n = json_get<int>(j, "dimension", 1);
      if (n < 1 || n > 3) fail(ErrorKind::config, "chart: flat dimension must be 1..3");
      if (j.contains("bounds"))
        return charts::flat(Box{json_vec(j.at("bounds").at("lo"), "bounds.lo"), json_vec(j.at("bounds").at("hi"), "bounds.hi")});
      return charts::flat(n, json_get<double>(j, "half_width", 10.0));
    }
    if (b == "half-plane") {
      if (j.contains("bounds"))
        return charts::half_plane(Box{json_vec(j.at("bounds").at("lo"), "bounds.lo"), json_vec(j.at("bounds").at("hi"), "bounds.hi")});
      return charts::half_plane();
    }
    if (b == "sphere-cap") return charts::sphere_cap(json_get<double>(j, "K", 1.0), json_get<double>(j, "extent", 1.2));
    if (b == "exp-interval") {
      double lo = -2, hi = 2;
      if (j.contains("bounds")) {
        lo = j.at("bounds").at("lo").at(0).get<double>();
        hi = j.at("bounds").at("hi").at(0).get<double>();
      }
      return charts::exp_interval(json_get<double>(j, "a", 1.0), lo, hi);
    }
    fail(ErrorKind::config, "chart: unknown builtin '" + b + "'");
  }
  check_keys(j, {"name", "dimension", "bounds", "metric", "curvature_bound", "injectivity_radius_hint", "safe_radius"},
             "chart");
  const int n = j.at("dimension").get<int>();
  if (n < 1 || n > 3) fail(ErrorKind::config, "chart: dimension must be 1..3");
  check_keys(j.at("bounds"), {"lo", "hi"}, "chart.bounds");
  Box box{json_vec(j.at("bounds").at("lo"), "bounds.lo"), json_vec(j.at("bounds").at("hi"), "bounds.hi")};
  if (box.dim() != n) fail(ErrorKind::config, "chart: bounds dimension mismatch");
  const json& mj = j.at("metric");
  if (!mj.is_array() || static_cast<int>(mj.size()) != n) fail(ErrorKind::config, "chart: metric must be n x n");
  std::vector<MetricExpr> comps(static_cast<std::size_t>(n * n));
  for (int a = 0; a < n; ++a) {
    if (static_cast<int>(mj[a].size()) != n) fail(ErrorKind::config, "chart: metric must be n x n");
    for (int b = a; b < n; ++b) {
      comps[a * n + b] = detail::parse_expr(mj[a][b], n, "chart.metric");
      comps[b * n + a] = comps[a * n + b];
    }
  }
  ChartModel m;
  m.name = json_get<std::string>(j, "name", "custom");
  m.n = n;
  m.bounds = box;
  m.curvature_bound = json_get<double>(j, "curvature_bound", 0.0);
  if (j.contains("injectivity_radius_hint")) m.injectivity_radius_hint = j.at("injectivity_radius_hint").get<double>();
  m.safe_radius = json_get<double>(j, "safe_radius", box.width().minCoeff() / 4);
  m.metric = [comps, n](const Vec& x) {
    Mat g(n, n);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) g(a, b) = comps[a * n + b](x);
    return g;
  };
  return Chart(std::move(m));
}

}  // namespace mbsde
