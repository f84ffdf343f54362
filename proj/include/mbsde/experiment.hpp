#pragma once

// Experiment configuration: JSON schema, resolution into model objects, and the
// built-in scenario registry.

#include "mbsde/dirichlet.hpp"
#include "mbsde/geometry/custom_chart.hpp"

#include <map>

namespace mbsde {

inline constexpr const char* kToolVersion = "0.1.0";

inline const std::vector<std::string>& bsde_checks() {
  static const std::vector<std::string> v{"residual", "terminal", "z_bound", "domain_invariance", "outwardness", "lsmc",
                                          "exp_integrability"};
  return v;
}

inline const std::vector<std::string>& dirichlet_checks() {
  static const std::vector<std::string> v{"tension", "range", "energy", "mc", "exit_time"};
  return v;
}

/// Enabled verification names. Absent from the config: the default set of the kind.
struct Toggles {
  std::vector<std::string> names;
  bool on(const std::string& name) const { return std::find(names.begin(), names.end(), name) != names.end(); }
};

struct ExperimentConfig {
  std::string scenario = "custom";
  std::string kind = "bsde";  // bsde | dirichlet
  json chart = "flat";
  json domain;     // null: none (flat charts only)
  json diffusion = {{"form", "brownian"}};
  json drift = {{"form", "zero"}};
  json terminal;   // bsde terminal map, or dirichlet boundary map
  Box support = make_box({-1.0}, {1.0});
  double dx = 0.05;
  double dt = 1e-3;
  double T = 1.0;
  Scheme scheme = Scheme::explicit_euler;
  std::optional<double> epsilon;  // absent: choose_epsilon
  double ramp_width = -1.0;
  bool force_epsilon = false;
  int path_count = 200;
  int path_steps = 50;
  Vec start = vec({0.0});
  int lsmc_paths = 4000;
  int lsmc_steps = 25;
  int lsmc_degree = 2;
  double exp_alpha = 0.1;
  double residual_factor = 10.0;  // residual passes when median mean step <= factor * path dt
  // dirichlet
  Box base = make_box({0.0}, {1.0});
  std::string potential;  // empty: none
  double flow_dx = 0.02;
  double flow_S = 20.0;
  Vec mc_x = vec({0.5});
  int mc_paths = 10000;
  double mc_T = 2.0;
  double mc_dt = 2e-3;
  double exit_dt = 1e-4;
  Toggles verify;
  std::uint64_t seed = 1;
  std::string output;
};

namespace detail {

inline Box json_box(const json& j, const std::string& where) {
  check_keys(j, {"lo", "hi"}, where);
  Box b{json_vec(j.at("lo"), where + ".lo"), json_vec(j.at("hi"), where + ".hi")};
  if (b.lo.size() != b.hi.size() || b.lo.size() == 0) fail(ErrorKind::config, where + ": lo/hi length mismatch");
  return b;
}

inline json box_json(const Box& b) { return {{"lo", to_json(b.lo)}, {"hi", to_json(b.hi)}}; }

}  // namespace detail

/// Parse a config; unknown keys are rejected at every level.
inline ExperimentConfig config_from_json(const json& j) {
  check_keys(j, {"scenario", "kind", "chart", "domain", "diffusion", "drift", "terminal", "grid", "solver", "paths",
                 "lsmc", "verify", "thresholds", "dirichlet", "seed", "output"},
             "config");
  ExperimentConfig c;
  c.scenario = json_get<std::string>(j, "scenario", c.scenario);
  c.kind = json_get<std::string>(j, "kind", c.kind);
  if (c.kind != "bsde" && c.kind != "dirichlet") fail(ErrorKind::config, "kind must be 'bsde' or 'dirichlet'");
  const std::vector<std::string>& known = c.kind == "bsde" ? bsde_checks() : dirichlet_checks();
  if (j.contains("verify")) {
    const json& v = j.at("verify");
    if (!v.is_array()) fail(ErrorKind::config, "verify must be an array of check names");
    for (const json& e : v) {
      const std::string name = e.get<std::string>();
      if (std::find(known.begin(), known.end(), name) == known.end())
        fail(ErrorKind::config, "verify: unknown check '" + name + "' for kind " + c.kind);
      if (!c.verify.on(name)) c.verify.names.push_back(name);
    }
  } else if (c.kind == "bsde") {
    c.verify.names = {"residual", "terminal", "z_bound"};
  } else {
    c.verify.names = {"tension", "range"};
  }
  if (j.contains("chart")) c.chart = j.at("chart");
  if (j.contains("domain")) c.domain = j.at("domain");
  if (j.contains("diffusion")) c.diffusion = j.at("diffusion");
  if (j.contains("drift")) c.drift = j.at("drift");
  if (j.contains("terminal")) c.terminal = j.at("terminal");
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    check_keys(g, {"support", "dx", "dt", "T", "scheme"}, "grid");
    if (g.contains("support")) c.support = detail::json_box(g.at("support"), "grid.support");
    c.dx = json_get<double>(g, "dx", c.dx);
    c.dt = json_get<double>(g, "dt", c.dt);
    c.T = json_get<double>(g, "T", c.T);
    const std::string s = json_get<std::string>(g, "scheme", "explicit");
    if (s == "explicit") c.scheme = Scheme::explicit_euler;
    else if (s == "semi-implicit") c.scheme = Scheme::semi_implicit;
    else fail(ErrorKind::config, "grid.scheme must be 'explicit' or 'semi-implicit'");
  }
  if (j.contains("solver")) {
    const json& s = j.at("solver");
    check_keys(s, {"epsilon", "ramp_width", "force_epsilon"}, "solver");
    if (s.contains("epsilon") && !(s.at("epsilon").is_string() && s.at("epsilon") == "auto"))
      c.epsilon = s.at("epsilon").get<double>();
    c.ramp_width = json_get<double>(s, "ramp_width", c.ramp_width);
    c.force_epsilon = json_get<bool>(s, "force_epsilon", c.force_epsilon);
  }
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    check_keys(p, {"count", "steps", "start"}, "paths");
    c.path_count = json_get<int>(p, "count", c.path_count);
    c.path_steps = json_get<int>(p, "steps", c.path_steps);
    if (p.contains("start")) c.start = json_vec(p.at("start"), "paths.start");
  }
  if (j.contains("lsmc")) {
    const json& l = j.at("lsmc");
    check_keys(l, {"paths", "steps", "degree"}, "lsmc");
    c.lsmc_paths = json_get<int>(l, "paths", c.lsmc_paths);
    c.lsmc_steps = json_get<int>(l, "steps", c.lsmc_steps);
    c.lsmc_degree = json_get<int>(l, "degree", c.lsmc_degree);
  }
  if (j.contains("thresholds")) {
    const json& t = j.at("thresholds");
    check_keys(t, {"exp_alpha", "residual_factor"}, "thresholds");
    c.exp_alpha = json_get<double>(t, "exp_alpha", c.exp_alpha);
    c.residual_factor = json_get<double>(t, "residual_factor", c.residual_factor);
  }
  if (j.contains("dirichlet")) {
    const json& d = j.at("dirichlet");
    check_keys(d, {"base", "potential", "flow", "mc", "exit_dt"}, "dirichlet");
    if (d.contains("base")) c.base = detail::json_box(d.at("base"), "dirichlet.base");
    c.potential = json_get<std::string>(d, "potential", c.potential);
    c.exit_dt = json_get<double>(d, "exit_dt", c.exit_dt);
    if (d.contains("flow")) {
      check_keys(d.at("flow"), {"dx", "S"}, "dirichlet.flow");
      c.flow_dx = json_get<double>(d.at("flow"), "dx", c.flow_dx);
      c.flow_S = json_get<double>(d.at("flow"), "S", c.flow_S);
    }
    if (d.contains("mc")) {
      const json& m = d.at("mc");
      check_keys(m, {"x", "paths", "T_max", "dt"}, "dirichlet.mc");
      if (m.contains("x")) c.mc_x = json_vec(m.at("x"), "dirichlet.mc.x");
      c.mc_paths = json_get<int>(m, "paths", c.mc_paths);
      c.mc_T = json_get<double>(m, "T_max", c.mc_T);
      c.mc_dt = json_get<double>(m, "dt", c.mc_dt);
    }
  }
  c.seed = json_get<std::uint64_t>(j, "seed", c.seed);
  c.output = json_get<std::string>(j, "output", c.output);
  if (!(c.dx > 0) || !(c.dt > 0) || !(c.T > 0)) fail(ErrorKind::config, "grid dx, dt and T must be positive");
  if (c.path_count < 1 || c.path_steps < 1) fail(ErrorKind::config, "paths.count and paths.steps must be positive");
  return c;
}

/// Full echo with every default filled in.
inline json to_json(const ExperimentConfig& c) {
  json j;
  j["scenario"] = c.scenario;
  j["kind"] = c.kind;
  j["chart"] = c.chart;
  j["domain"] = c.domain;
  j["diffusion"] = c.diffusion;
  j["drift"] = c.drift;
  j["terminal"] = c.terminal;
  j["grid"] = {{"support", detail::box_json(c.support)}, {"dx", c.dx}, {"dt", c.dt}, {"T", c.T},
               {"scheme", c.scheme == Scheme::explicit_euler ? "explicit" : "semi-implicit"}};
  j["solver"] = {{"epsilon", c.epsilon ? json(*c.epsilon) : json("auto")},
                 {"ramp_width", c.ramp_width},
                 {"force_epsilon", c.force_epsilon}};
  j["paths"] = {{"count", c.path_count}, {"steps", c.path_steps}, {"start", to_json(c.start)}};
  j["lsmc"] = {{"paths", c.lsmc_paths}, {"steps", c.lsmc_steps}, {"degree", c.lsmc_degree}};
  j["verify"] = c.verify.names;
  j["thresholds"] = {{"exp_alpha", c.exp_alpha}, {"residual_factor", c.residual_factor}};
  j["dirichlet"] = {{"base", detail::box_json(c.base)},
                    {"potential", c.potential},
                    {"exit_dt", c.exit_dt},
                    {"flow", {{"dx", c.flow_dx}, {"S", c.flow_S}}},
                    {"mc", {{"x", to_json(c.mc_x)}, {"paths", c.mc_paths}, {"T_max", c.mc_T}, {"dt", c.mc_dt}}}};
  j["seed"] = c.seed;
  j["output"] = c.output;
  return j;
}

/// --refine k: halve dx, the PDE step and the path step k times. The PDE step is further
/// reduced to the CFL limit 0.4 dx^2 (unit diffusion scale) when halving alone violates it.
inline ExperimentConfig refined(ExperimentConfig c, int k, double max_eig = 1.0) {
  if (k < 0) fail(ErrorKind::config, "refine level must be nonnegative");
  for (int i = 0; i < k; ++i) {
    c.dx /= 2;
    c.dt = std::min(c.dt / 2, 0.4 * c.dx * c.dx / max_eig);
    c.path_steps *= 2;
    c.flow_dx /= 2;
    c.mc_dt /= 2;
  }
  return c;
}

// ---- resolution into model objects ----

inline DiffusionSpec diffusion_from_json(const json& j) {
  check_keys(j, {"form", "dimension", "sigma", "b", "A", "c"}, "diffusion");
  const std::string form = json_get<std::string>(j, "form", "brownian");
  auto matrix = [&](const char* key) {
    const json& a = j.at(key);
    if (!a.is_array() || a.empty()) fail(ErrorKind::config, std::string("diffusion.") + key + ": expected a matrix");
    Mat m(static_cast<int>(a.size()), static_cast<int>(a[0].size()));
    for (std::size_t r = 0; r < a.size(); ++r) {
      const Vec row = json_vec(a[r], std::string("diffusion.") + key);
      if (row.size() != m.cols()) fail(ErrorKind::config, std::string("diffusion.") + key + ": ragged matrix");
      m.row(static_cast<int>(r)) = row.transpose();
    }
    return m;
  };
  if (form == "brownian") {
    const int d = json_get<int>(j, "dimension", 1);
    if (d < 1 || d > 2) fail(ErrorKind::config, "diffusion.dimension must be 1 or 2");
    return brownian(d, j.contains("sigma") ? j.at("sigma").get<double>() : 1.0);
  }
  if (form == "constant") return constant_diffusion(json_vec(j.at("b"), "diffusion.b"), matrix("sigma"));
  if (form == "linear") {
    const Vec c = json_vec(j.at("c"), "diffusion.c");
    return linear_drift_diffusion(matrix("A"), c, matrix("sigma"));
  }
  fail(ErrorKind::config, "unknown diffusion form '" + form + "'");
}

inline ConvexDomain domain_from_json(const json& j, const Chart& chart) {
  check_keys(j, {"form", "center", "level", "collar", "radius"}, "domain");
  const std::string form = j.at("form").get<std::string>();
  const Vec o = json_vec(j.at("center"), "domain.center");
  if (o.size() != chart.dim()) fail(ErrorKind::config, "domain.center dimension differs from the chart");
  if (form == "squared-norm") return squared_norm_domain(chart, o, j.at("level").get<double>(), json_get<double>(j, "collar", -1.0));
  if (form == "ball") return geodesic_ball(chart, o, j.at("radius").get<double>(), json_get<double>(j, "collar", -1.0));
  fail(ErrorKind::config, "unknown domain form '" + form + "'");
}

/// Terminal / boundary maps R^d -> R^n. "clamp": true clamps the argument to `support`,
/// which makes the map constant off that box.
inline TerminalFn terminal_from_json(const json& j, int d, int n, const Box& support) {
  check_keys(j, {"form", "A", "c", "value", "scale", "amplitude", "rate", "clamp"}, "terminal");
  const std::string form = j.at("form").get<std::string>();
  const bool clamp = json_get<bool>(j, "clamp", false);
  std::function<Vec(const Vec&)> g;
  auto need = [&](int want_d, int want_n) {
    if ((want_d > 0 && d != want_d) || (want_n > 0 && n != want_n))
      fail(ErrorKind::config, "terminal form '" + form + "' does not fit d=" + std::to_string(d) + ", n=" + std::to_string(n));
  };
  if (form == "affine") {
    const json& a = j.at("A");
    if (!a.is_array() || static_cast<int>(a.size()) != n) fail(ErrorKind::config, "terminal.A must have n rows");
    Mat A(n, d);
    for (int r = 0; r < n; ++r) {
      const Vec row = json_vec(a[r], "terminal.A");
      if (row.size() != d) fail(ErrorKind::config, "terminal.A must have d columns");
      A.row(r) = row.transpose();
    }
    const Vec c = j.contains("c") ? json_vec(j.at("c"), "terminal.c") : Vec(Vec::Zero(n));
    if (c.size() != n) fail(ErrorKind::config, "terminal.c must have n entries");
    g = [A, c](const Vec& b) { return Vec(A * b + c); };
  } else if (form == "square") {
    need(0, 1);
    g = [](const Vec& b) { return vec({b.squaredNorm()}); };
  } else if (form == "sin") {
    need(1, 1);
    const double s = json_get<double>(j, "scale", 1.0);
    g = [s](const Vec& b) { return vec({std::sin(s * b[0])}); };
  } else if (form == "tanh") {
    need(1, 1);
    const double s = json_get<double>(j, "scale", 1.0), m = json_get<double>(j, "amplitude", 1.0);
    g = [s, m](const Vec& b) { return vec({m * std::tanh(s * b[0])}); };
  } else if (form == "constant") {
    const Vec v = json_vec(j.at("value"), "terminal.value");
    if (v.size() != n) fail(ErrorKind::config, "terminal.value must have n entries");
    g = [v](const Vec&) { return v; };
  } else if (form == "arc") {
    // unit-circle arc of angle pi, constant off [-2, 2]
    need(1, 2);
    const double r = json_get<double>(j, "amplitude", 1.0);
    g = [r](const Vec& b) {
      const double th = std::numbers::pi * smootherstep((b[0] + 2) / 4);
      return vec({r * std::cos(th), r * std::sin(th)});
    };
  } else if (form == "exp-vertical") {
    // (0, exp(rate b)): a unit-speed-in-log geodesic of the half-plane for rate 1
    need(1, 2);
    const double k = json_get<double>(j, "rate", 1.0);
    g = [k](const Vec& b) { return vec({0.0, std::exp(k * b[0])}); };
  } else {
    fail(ErrorKind::config, "unknown terminal form '" + form + "'");
  }
  TerminalFn F;
  F.d = d;
  F.n = n;
  F.name = form;
  if (clamp)
    F.eval = [g, support](const Vec& b) { return g(Vec(b.cwiseMax(support.lo).cwiseMin(support.hi))); };
  else
    F.eval = g;
  return F;
}

/// Model objects for one config.
struct Resolved {
  Chart chart;
  std::optional<ConvexDomain> domain;
  DiffusionSpec spec;
  DriftField f;
  TerminalFn F;
};

inline Resolved resolve(const ExperimentConfig& c) {
  Resolved r;
  r.chart = chart_from_json(c.chart);
  if (!c.domain.is_null()) r.domain = domain_from_json(c.domain, r.chart);
  r.spec = diffusion_from_json(c.diffusion);
  r.f = drift_from_json(c.drift, r.chart, r.spec.d, r.spec.dW);
  if (c.terminal.is_null()) fail(ErrorKind::config, "config needs a terminal (or boundary) map");
  const Box& dom = c.kind == "dirichlet" ? c.base : c.support;
  if (dom.dim() != r.spec.d) fail(ErrorKind::config, "box dimension differs from the diffusion dimension");
  r.F = terminal_from_json(c.terminal, r.spec.d, r.chart.dim(), dom);
  if (c.kind == "bsde" && c.start.size() != r.spec.d) fail(ErrorKind::config, "paths.start dimension differs from d");
  if (!r.domain && !r.chart.flat()) fail(ErrorKind::config, "curved charts need a domain");
  if (c.kind == "dirichlet" && !r.domain) fail(ErrorKind::config, "dirichlet problems need a target domain");
  return r;
}

inline DirichletProblem dirichlet_problem(const ExperimentConfig& c, const Resolved& r) {
  DirichletProblem p;
  p.name = c.scenario;
  p.base = c.base;
  p.spec = r.spec;
  p.boundary = r.F.eval;
  p.target = *r.domain;
  p.f = r.f;
  if (!c.potential.empty()) {
    p.potential = named_potential(c.potential, r.chart.dim());
    p.potential_name = c.potential;
  }
  return p;
}

// ---- built-in scenarios ----

/// Every oracle scenario the acceptance suite relies on, as configs.
inline const std::map<std::string, json>& scenario_registry() {
  static const std::map<std::string, json> reg = [] {
    std::map<std::string, json> m;
    const json flat_grid = {{"support", {{"lo", {-1.0}}, {"hi", {1.0}}}}, {"dx", 0.05}, {"dt", 1e-3}, {"T", 1.0}};
    m["flat-linear-drift"] = {
        {"scenario", "flat-linear-drift"},
        {"chart", {{"builtin", "flat"}, {"dimension", 1}, {"half_width", 1e6}}},
        {"drift", {{"form", "constant"}, {"value", {0.3}}}},
        {"terminal", {{"form", "affine"}, {"A", {{1.0}}}}},
        {"grid", flat_grid},
        {"paths", {{"count", 200}, {"steps", 50}, {"start", {0.0}}}},
        {"verify", {"residual", "terminal", "z_bound", "lsmc"}}};
    json forced = m["flat-linear-drift"];
    forced["scenario"] = "flat-linear-drift-forced-epsilon";
    forced["solver"] = {{"epsilon", 1.25}, {"force_epsilon", true}};
    forced["verify"] = {"residual", "terminal", "z_bound"};
    m["flat-linear-drift-forced-epsilon"] = forced;
    m["flat-heat"] = {{"scenario", "flat-heat"},
                      {"chart", {{"builtin", "flat"}, {"dimension", 1}, {"half_width", 1e6}}},
                      {"terminal", {{"form", "tanh"}, {"scale", 1.0}, {"amplitude", 1.0}}},
                      {"grid", {{"support", {{"lo", {-2.0}}, {"hi", {2.0}}}}, {"dx", 0.05}, {"dt", 1e-3}, {"T", 0.5}}},
                      {"paths", {{"count", 200}, {"steps", 50}, {"start", {0.0}}}},
                      {"verify", {"residual", "terminal", "z_bound", "exp_integrability"}}};
    m["flat-sin"] = {{"scenario", "flat-sin"},
                     {"chart", {{"builtin", "flat"}, {"dimension", 1}, {"half_width", 1e6}}},
                     {"drift", {{"form", "constant"}, {"value", {0.2}}}},
                     {"terminal", {{"form", "sin"}}},
                     {"grid", {{"support", {{"lo", {-2.0}}, {"hi", {2.0}}}}, {"dx", 0.05}, {"dt", 1e-3}, {"T", 0.5}}},
                     {"paths", {{"count", 200}, {"steps", 50}, {"start", {0.3}}}},
                     {"lsmc", {{"paths", 10000}, {"steps", 25}}},
                     {"verify", {"residual", "terminal", "z_bound", "lsmc"}}};
    const json disc = {{"form", "squared-norm"}, {"center", {0.0, 0.0}}, {"level", 1.0}};
    const json arc_grid = {{"support", {{"lo", {-2.0}}, {"hi", {2.0}}}}, {"dx", 0.05}, {"dt", 1e-3}, {"T", 0.5}};
    m["disc-zero-drift"] = {{"scenario", "disc-zero-drift"},
                            {"chart", {{"builtin", "flat"}, {"dimension", 2}}},
                            {"domain", disc},
                            {"terminal", {{"form", "arc"}}},
                            {"grid", arc_grid},
                            {"paths", {{"count", 200}, {"steps", 50}, {"start", {0.0}}}},
                            {"verify", {"residual", "terminal", "z_bound", "domain_invariance", "outwardness"}}};
    json radial = m["disc-zero-drift"];
    radial["scenario"] = "disc-radial-drift";
    radial["drift"] = {{"form", "linear-x"}, {"A", {{1.0, 0.0}, {0.0, 1.0}}}};
    m["disc-radial-drift"] = radial;
    m["half-plane-martingale"] = {
        {"scenario", "half-plane-martingale"},
        {"chart", "half-plane"},
        {"domain", {{"form", "ball"}, {"center", {0.0, 1.0}}, {"radius", 0.8}}},
        {"terminal", {{"form", "exp-vertical"}, {"rate", 0.5}, {"clamp", true}}},
        {"grid", {{"support", {{"lo", {-1.0}}, {"hi", {1.0}}}}, {"dx", 0.05}, {"dt", 1e-3}, {"T", 0.5}}},
        {"paths", {{"count", 200}, {"steps", 50}, {"start", {0.0}}}},
        {"verify", {"residual", "terminal", "z_bound", "outwardness", "exp_integrability"}}};
    m["exp-interval-1d"] = {{"scenario", "exp-interval-1d"},
                            {"chart", {{"builtin", "exp-interval"}, {"a", 1.0}}},
                            {"domain", {{"form", "ball"}, {"center", {0.0}}, {"radius", 0.6}}},
                            {"terminal", {{"form", "tanh"}, {"scale", 1.0}, {"amplitude", 0.3}}},
                            {"grid", {{"support", {{"lo", {-2.0}}, {"hi", {2.0}}}}, {"dx", 0.05}, {"dt", 1e-3}, {"T", 0.5}}},
                            {"paths", {{"count", 200}, {"steps", 50}, {"start", {0.2}}}},
                            {"lsmc", {{"paths", 10000}, {"steps", 25}}},
                            {"verify", {"residual", "terminal", "z_bound", "lsmc"}}};
    m["dirichlet-flat-1d"] = {{"scenario", "dirichlet-flat-1d"},
                              {"kind", "dirichlet"},
                              {"chart", {{"builtin", "flat"}, {"dimension", 1}}},
                              {"domain", {{"form", "squared-norm"}, {"center", {0.5}}, {"level", 1.0}}},
                              {"terminal", {{"form", "affine"}, {"A", {{1.0}}}}},
                              {"verify", {"tension", "range", "mc", "exit_time"}}};
    m["dirichlet-half-plane"] = {{"scenario", "dirichlet-half-plane"},
                                 {"kind", "dirichlet"},
                                 {"chart", "half-plane"},
                                 {"domain", {{"form", "ball"}, {"center", {0.0, std::exp(0.5)}}, {"radius", 0.6}}},
                                 {"terminal", {{"form", "exp-vertical"}, {"rate", 1.0}}},
                                 {"dirichlet", {{"mc", {{"x", {0.3}}}}}},
                                 {"verify", {"tension", "range", "mc"}}};
    m["dirichlet-energy"] = {{"scenario", "dirichlet-energy"},
                             {"kind", "dirichlet"},
                             {"chart", {{"builtin", "flat"}, {"dimension", 1}}},
                             {"domain", {{"form", "squared-norm"}, {"center", {0.5}}, {"level", 1.0}}},
                             {"drift", {{"form", "gradient"}, {"potential", "half-norm-squared"}}},
                             {"terminal", {{"form", "affine"}, {"A", {{1.0}}}}},
                             {"dirichlet", {{"potential", "half-norm-squared"}}},
                             {"verify", {"tension", "range", "energy"}}};
    return m;
  }();
  return reg;
}

inline std::vector<std::string> scenario_names() {
  std::vector<std::string> v;
  for (const auto& [k, _] : scenario_registry()) v.push_back(k);
  return v;
}

inline ExperimentConfig builtin_scenario(const std::string& name) {
  const auto& reg = scenario_registry();
  const auto it = reg.find(name);
  if (it == reg.end()) fail(ErrorKind::config, "unknown scenario '" + name + "'");
  return config_from_json(it->second);
}

}  // namespace mbsde
