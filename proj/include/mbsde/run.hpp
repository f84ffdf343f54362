#pragma once

// Scenario execution, run manifests with content digests, and the summary report.

#include "mbsde/experiment.hpp"
#include "mbsde/verify.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mbsde {

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 || EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    fail(ErrorKind::numeric, "sha256: digest failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::config, "cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Digest of the resolved config echo; identical configs hash identically.
inline std::string config_hash(const ExperimentConfig& c) { return sha256_hex(to_json(c).dump()); }

struct CheckRecord {
  std::string family;
  VerificationReport report;
};

struct EmittedFile {
  std::string name;  // relative to the run directory
  std::string sha256;
  std::size_t bytes = 0;
};

struct RunManifest {
  std::string scenario;
  std::string kind;
  std::string config_hash;
  std::string version = kToolVersion;
  json config;  // resolved echo, every default filled in
  int refine = 0;
  double wall_clock = 0.0;  // seconds
  std::string status = "ok";  // ok | failed
  std::string failed_stage;
  std::string error;
  bool report_only = false;
  json certificates = json::object();
  json results = json::object();
  std::vector<CheckRecord> checks;
  std::vector<EmittedFile> files;
  std::string directory;

  bool all_pass() const {
    if (status != "ok" || report_only) return false;
    for (const CheckRecord& c : checks)
      if (!c.report.pass) return false;
    return true;
  }
  const CheckRecord* find(const std::string& name) const {
    for (const CheckRecord& c : checks)
      if (c.report.name == name) return &c;
    return nullptr;
  }
};

/// Manifest JSON; `with_clock` false drops the wall-clock so repeated runs compare equal.
inline json to_json(const RunManifest& m, bool with_clock = true) {
  json checks = json::array();
  for (const CheckRecord& c : m.checks) {
    json r = to_json(c.report);
    r["family"] = c.family;
    checks.push_back(r);
  }
  json files = json::array();
  for (const EmittedFile& f : m.files) files.push_back({{"name", f.name}, {"sha256", f.sha256}, {"bytes", f.bytes}});
  json j{{"scenario", m.scenario},       {"kind", m.kind},
         {"config_hash", m.config_hash}, {"tool_version", m.version},
         {"config", m.config},           {"refine", m.refine},
         {"status", m.status},           {"failed_stage", m.failed_stage},
         {"error", m.error},             {"report_only", m.report_only},
         {"certificates", m.certificates}, {"results", m.results},
         {"checks", checks},             {"files", files},
         {"all_pass", m.all_pass()}};
  if (with_clock) j["wall_clock_s"] = m.wall_clock;
  return j;
}

struct RunOptions {
  std::string out_dir;  // empty: nothing is written
  int refine = 0;       // echoed only; apply refined() to the config first
};

namespace detail {

inline VerificationReport bound_check(std::string name, double limit, double value, double tol, std::vector<double> witness = {}) {
  VerificationReport r(std::move(name), tol);
  r.samples = 1;
  r.margin = std::isnan(value) ? -std::numeric_limits<double>::infinity() : limit - value;
  r.witness = std::move(witness);
  r.finalize();
  return r;
}

inline std::vector<double> stdvec(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

class RunWriter {
 public:
  RunWriter(RunManifest& m, std::string dir) : m_(m), dir_(std::move(dir)) {
    if (!dir_.empty()) {
      std::filesystem::create_directories(dir_);
      std::filesystem::remove(std::filesystem::path(dir_) / "FAILED");
      m_.directory = dir_;
    }
  }
  bool active() const { return !dir_.empty(); }

  template <class Fn>
  void emit(const std::string& name, Fn&& body) {
    if (!active()) return;
    std::ostringstream os;
    body(os);
    const std::string s = os.str();
    std::ofstream out(std::filesystem::path(dir_) / name, std::ios::binary);
    out << s;
    if (!out) fail(ErrorKind::config, "cannot write " + name);
    m_.files.push_back({name, sha256_hex(s), s.size()});
  }

  void marker() {
    if (!active()) return;
    std::ofstream out(std::filesystem::path(dir_) / "FAILED");
    out << "stage: " << m_.failed_stage << "\nerror: " << m_.error << "\n";
  }

  void manifest() {
    if (!active()) return;
    std::ofstream out(std::filesystem::path(dir_) / "manifest.json");
    out << to_json(m_).dump(2) << "\n";
  }

 private:
  RunManifest& m_;
  std::string dir_;
};

inline void write_summary(std::ostream& os, const RunManifest& m) {
  os << "scenario " << m.scenario << " (" << m.kind << "), status " << m.status;
  if (!m.failed_stage.empty()) os << " at stage " << m.failed_stage << ": " << m.error;
  if (m.report_only) os << " [report-only]";
  os << "\n";
  os.precision(6);
  for (const CheckRecord& c : m.checks)
    os << (c.report.pass ? "  pass  " : "  FAIL  ") << c.report.name << "  margin " << c.report.margin << "  tol "
       << c.report.tolerance << "\n";
}

inline double diffusion_max_eig(const DiffusionSpec& spec, const Box& box) {
  double m = 0.0;
  for (const Vec& x : {box.lo, box.hi, box.center()}) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(spec.a(x)));
    m = std::max(m, es.eigenvalues().maxCoeff());
  }
  return m;
}

inline void run_bsde(const ExperimentConfig& c, RunManifest& m, RunWriter& w, std::string& stage) {
  stage = "resolve";
  const Resolved r = resolve(c);
  for (const char* need : {"domain_invariance", "outwardness"})
    if (c.verify.on(need) && !r.domain) fail(ErrorKind::config, std::string(need) + " needs a domain");

  stage = "forward";
  const std::vector<double> tgrid = uniform_grid(c.T, c.path_steps);
  std::vector<PathBundle> paths = simulate_paths(r.spec, c.start, tgrid, c.seed, c.path_count);

  stage = "epsilon";
  const double L_F = terminal_lipschitz(r.F, c.support, c.dx);
  const double sig = sigma_sup(r.spec, c.support);
  FlowOptions fo;
  fo.T = c.T;
  fo.dt = c.T / 50;
  fo.seed = c.seed;
  const double C_flow = estimate_flow_continuity(r.spec, c.support, fo);
  EpsilonCertificate cert = choose_epsilon(L_F, sig, C_flow, c.T);
  if (c.epsilon) {
    cert = certify_epsilon(cert, *c.epsilon);
    if (!cert.pass) {
      if (!c.force_epsilon)
        fail(ErrorKind::config, "epsilon override " + std::to_string(*c.epsilon) + " fails the gradient bound (set force_epsilon)");
      m.report_only = true;
    }
  }
  m.certificates["epsilon"] = to_json(cert);
  m.certificates["epsilon"]["source"] = c.epsilon ? (c.force_epsilon ? "forced" : "override") : "auto";

  stage = "pde";
  const TruncationParams tp{cert.epsilon, c.ramp_width};
  const GammaDrift gamma = r.domain ? gamma_assemble(r.chart, *r.domain, r.f, tp, c.force_epsilon)
                                    : gamma_unconstrained(r.chart, r.f, tp, c.force_epsilon);
  const GridParams gp{c.support, c.dx, c.dt, c.T};
  const SpaceTimeField field = solve_parabolic(r.spec, gamma, r.F, gp, c.scheme);
  m.results["pde"] = {{"nodes", field.grid.nodes()}, {"steps", field.steps}, {"dt", field.dt},
                      {"cfl_ratio", field.cfl_ratio}, {"growth_C", field.growth_C}};
  w.emit("field.csv", [&](std::ostream& os) { write_field_csv(os, field); });

  stage = "z-bound";
  const ZField zf = gradient_field(field, r.spec);
  const ZBoundReport zr = z_bound_report(zf, cert.epsilon);
  m.certificates["z_bound"] = to_json(zr);
  if (c.verify.on("z_bound")) {
    std::vector<double> wz{zr.tau};
    for (int k = 0; k < zr.location.size(); ++k) wz.push_back(zr.location[k]);
    m.checks.push_back({"certificate", bound_check("z-bound", zr.threshold, zr.max_norm, 0.0, wz)});
  }

  stage = "assembly";
  const BSDESolution sol = assemble_solution(field, zf, std::move(paths), &r.F);
  m.results["X0"] = to_json(sol.X0);
  m.results["path_dt"] = c.T / c.path_steps;
  w.emit("solution.csv", [&](std::ostream& os) { write_solution_csv(os, sol); });

  stage = "residual";
  if (c.verify.on("residual")) {
    const ResidualSummary rs = residual_check(sol, r.chart, r.f);
    m.results["residual"] = to_json(rs);
    const double dtp = c.T / c.path_steps;
    VerificationReport rep = bound_check("residual", c.residual_factor * dtp, rs.median_mean, 0.0);
    rep.samples = rs.max_step.size();
    rep.extra = {{"median_mean_step", rs.median_mean}, {"path_dt", dtp}, {"factor", c.residual_factor}};
    m.checks.push_back({"consistency", rep});
  }
  if (c.verify.on("terminal")) {
    const double tm = terminal_mismatch(sol, r.F);
    m.results["terminal_mismatch"] = tm;
    VerificationReport rep = bound_check("terminal", 1e-6, tm, 0.0);
    rep.samples = sol.paths.size();
    m.checks.push_back({"consistency", rep});
  }

  stage = "verify";
  if (c.verify.on("domain_invariance"))
    m.checks.push_back({"invariance", domain_invariance_check(field, *r.domain)});
  if (c.verify.on("outwardness")) {
    const OutwardnessResult o = outwardness_check(*r.domain, r.f, 1.0 / cert.epsilon, 256, c.seed);
    m.certificates["outwardness"] = to_json(o);
    VerificationReport rep("outwardness", 1e-6);
    rep.samples = o.samples;
    rep.margin = o.inf;
    rep.witness = stdvec(o.witness);
    rep.extra = {{"classification", to_string(o.classification)}};
    m.checks.push_back({"certificate", rep.finalize()});
  }
  if (c.verify.on("lsmc")) {
    LsmcOptions lo;
    lo.degree = c.lsmc_degree;
    lo.seed = c.seed;
    const BSDESolution ls = lsmc_solve(r.spec, gamma, r.F, c.start, uniform_grid(c.T, c.lsmc_steps), c.lsmc_paths, lo);
    const double pde_x0 = field_value(field, c.T, c.start)[0];
    const double tol = std::max(3 * ls.x0_se, 2e-2);
    VerificationReport rep = bound_check("lsmc-agreement", tol, std::abs(ls.x0 - pde_x0), 0.0, stdvec(c.start));
    rep.samples = static_cast<std::size_t>(c.lsmc_paths);
    rep.extra = {{"lsmc_x0", ls.x0}, {"lsmc_se", ls.x0_se}, {"pde_x0", pde_x0}, {"allowed", tol}};
    m.checks.push_back({"cross-solver", rep});
  }
  if (c.verify.on("exp_integrability")) {
    const bool ball = r.domain && r.domain->ball;
    const double alpha = ball ? std::min(c.exp_alpha, 0.5 * alpha_for_ball(r.domain->ball->radius)) : c.exp_alpha;
    const ExpIntegrability e =
        ball ? exp_integrability_ball(sol, *r.domain, r.f, alpha) : exp_integrability(sol, r.chart, alpha);
    m.results["exp_integrability"] = to_json(e);
    VerificationReport rep("exp-integrability", 0.0);
    rep.samples = sol.paths.size();
    rep.margin = ball ? e.bound - e.estimate : (e.finite ? 0.0 : -std::numeric_limits<double>::infinity());
    if (!e.finite) rep.margin = -std::numeric_limits<double>::infinity();
    rep.extra = to_json(e);
    m.checks.push_back({"integrability", rep.finalize()});
  }
}

inline std::optional<double> exit_time_oracle(const DiffusionSpec& spec, const Box& base, const Vec& x) {
  if (!spec.constant || spec.d != 1 || spec.b(x).norm() != 0.0) return std::nullopt;
  return (x[0] - base.lo[0]) * (base.hi[0] - x[0]) / spec.a(x)(0, 0);
}

inline void run_dirichlet(const ExperimentConfig& c, RunManifest& m, RunWriter& w, std::string& stage) {
  stage = "resolve";
  const Resolved r = resolve(c);
  const DirichletProblem p = dirichlet_problem(c, r);
  if (c.verify.on("energy") && !p.potential) fail(ErrorKind::config, "energy check needs dirichlet.potential");
  if ((c.verify.on("mc") || c.verify.on("exit_time")) && c.mc_x.size() != p.d())
    fail(ErrorKind::config, "dirichlet.mc.x dimension differs from the base");

  stage = "validate";
  m.checks.push_back({"dirichlet-setup", validate_problem(p)});
  if (!m.checks.back().report.pass) fail(ErrorKind::domain, "boundary map leaves the target domain");

  stage = "exit-rho";
  const ExitRhoEstimate er = exit_rho_estimate(p.base, p.spec);
  m.certificates["exit_rho"] = {{"lambda1", er.lambda1}, {"rho", er.rho}, {"method", er.method}};

  stage = "flow";
  RelaxationOptions ro;
  ro.energy_every = c.verify.on("energy") ? 1 : 0;
  const FlowResult fr = harmonic_map_flow(p, c.flow_dx, c.flow_S, ro);
  m.results["flow"] = to_json(fr);
  w.emit("flow.csv", [&](std::ostream& os) { write_flow_csv(os, fr); });
  w.emit("flow_trace.csv", [&](std::ostream& os) { write_flow_trace_csv(os, fr); });
  {
    VerificationReport rep("flow-converged", 0.0);
    rep.samples = static_cast<std::size_t>(fr.steps);
    rep.margin = ro.tol - fr.last_update;
    rep.pass = fr.converged && !fr.left_chart;
    rep.extra = {{"message", fr.message}};
    m.checks.push_back({"dirichlet-flow", rep});
  }
  if (fr.left_chart) fail(ErrorKind::escape, fr.message);

  stage = "flow-checks";
  if (c.verify.on("tension")) {
    const TensionResidual t = tension_residual(fr.grid, fr.u, p.spec, p.chart(), p.f);
    std::vector<double> wn = t.worst_node >= 0 ? stdvec(fr.grid.point(t.worst_node)) : std::vector<double>{};
    VerificationReport rep = bound_check("tension", 1e-3, t.max_interior, 0.0, wn);
    rep.samples = static_cast<std::size_t>(fr.grid.nodes());
    m.checks.push_back({"dirichlet-flow", rep});
  }
  if (c.verify.on("range"))
    m.checks.push_back({"invariance", bound_check("flow-range", p.target.level, fr.max_chi, 1e-9)});
  if (c.verify.on("energy")) {
    w.emit("energy.csv", [&](std::ostream& os) {
      os << "time,energy\n";
      os.precision(17);
      for (const auto& [t, e] : fr.energy) os << t << "," << e << "\n";
    });
    const double inc = max_energy_increase(fr);
    VerificationReport rep = bound_check("energy-descent", 0.0, inc, 1e-8);
    rep.samples = fr.energy.size();
    rep.extra = {{"potential_weight", 2.0},
                 {"initial", fr.energy.empty() ? 0.0 : fr.energy.front().second},
                 {"final", fr.energy.empty() ? 0.0 : fr.energy.back().second}};
    m.checks.push_back({"dirichlet-flow", rep});
  }

  if (c.verify.on("mc")) {
    stage = "mc";
    m.checks.push_back({"certificate", small_drift_check(p.f, p.rho_exp > 0 ? p.rho_exp : er.rho)});
    DirichletMcOptions mo;
    mo.dt = c.mc_dt;
    mo.seed = c.seed;
    const DirichletEstimate e = solve_dirichlet_mc(p, c.mc_x, c.mc_paths, c.mc_T, mo);
    m.results["mc"] = to_json(e);
    stage = "agreement";
    const Vec fv = flow_value(fr, c.mc_x);
    VerificationReport rep("mc-flow-agreement", 0.0);
    for (int i = 0; i < p.n(); ++i) {
      const double tol = std::max(3 * e.se[i], 2e-2);
      std::vector<double> wi = stdvec(c.mc_x);
      wi.push_back(i);
      rep.observe(tol - std::abs(e.value[i] - fv[i]), wi);
    }
    rep.extra = {{"mc", stdvec(e.value)}, {"se", stdvec(e.se)}, {"flow", stdvec(fv)}};
    m.checks.push_back({"cross-solver", rep.finalize()});
  }
  if (c.verify.on("exit_time")) {
    stage = "exit-time";
    const ExitTimeEstimate et = mean_exit_time(p.spec, p.base, c.mc_x, c.mc_paths, c.exit_dt, c.mc_T, c.seed);
    const std::optional<double> ref = exit_time_oracle(p.spec, p.base, c.mc_x);
    m.results["exit_time"] = {{"mean", et.mean}, {"se", et.se}, {"censored", et.censored}, {"paths", et.paths},
                              {"oracle", ref ? json(*ref) : json(nullptr)}};
    VerificationReport rep("exit-time", 0.0);
    rep.samples = static_cast<std::size_t>(et.paths);
    rep.witness = stdvec(c.mc_x);
    rep.margin = ref ? 3 * et.se - std::abs(et.mean - *ref) : 1e-3 - et.censored;
    m.checks.push_back({"dirichlet-mc", rep.finalize()});
  }
}

}  // namespace detail

/// forward -> epsilon -> PDE -> Z-bound -> assembly -> residual -> verifications -> persistence
/// (Dirichlet: validate -> exit rate -> flow -> flow checks -> MC -> agreement -> persistence).
/// Module errors are caught: the manifest names the failing stage and a FAILED marker is written.
inline RunManifest run_scenario(const ExperimentConfig& c, const RunOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest m;
  m.scenario = c.scenario;
  m.kind = c.kind;
  m.config = to_json(c);
  m.config_hash = sha256_hex(m.config.dump());
  m.refine = opt.refine;
  detail::RunWriter w(m, opt.out_dir);
  std::string stage = "setup";
  try {
    if (c.kind == "bsde")
      detail::run_bsde(c, m, w, stage);
    else
      detail::run_dirichlet(c, m, w, stage);
    stage = "persistence";
  } catch (const Error& e) {
    m.status = "failed";
    m.failed_stage = stage;
    m.error = e.what();
  } catch (const std::exception& e) {
    m.status = "failed";
    m.failed_stage = stage;
    m.error = e.what();
  }
  m.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  w.emit("summary.txt", [&](std::ostream& os) { detail::write_summary(os, m); });
  if (m.status != "ok") w.marker();
  w.manifest();
  return m;
}

/// Sampling box for geometry suites: a region where the built-in charts are well conditioned.
inline Box geomtest_box(const Chart& chart) {
  const int n = chart.dim();
  if (chart.name() == "half-plane") return make_box({-1.0, 0.5}, {1.0, 2.0});
  Box b = chart.bounds();
  const Vec c = b.center();
  const Vec half = (0.25 * b.width()).cwiseMin(Vec::Constant(n, 1.0));
  return Box{Vec(c - half), Vec(c + half)};
}

/// Distance-Hessian and transport suites on one chart, recorded as a manifest.
inline RunManifest run_geomtest(const json& chart_spec, int count = 1000, std::uint64_t seed = 1,
                                const RunOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest m;
  m.kind = "geometry";
  m.config = {{"chart", chart_spec}, {"count", count}, {"seed", seed}};
  m.config_hash = sha256_hex(m.config.dump());
  detail::RunWriter w(m, opt.out_dir);
  std::string stage = "resolve";
  try {
    const Chart chart = chart_from_json(chart_spec);
    m.scenario = "geomtest-" + chart.name();
    const Box box = geomtest_box(chart);
    m.config["box"] = {{"lo", to_json(box.lo)}, {"hi", to_json(box.hi)}};
    if (chart.hadamard()) {
      stage = "hessian";
      const HessianSuite h = hessian_inequality_suite(chart, random_hessian_samples(chart, box, count, seed));
      for (const VerificationReport* r : {&h.der1, &h.der2, &h.min}) m.checks.push_back({"geometry", *r});
      m.results["min_gap"] = h.min_gap;
    } else {
      m.results["hessian"] = "skipped: curvature bound K > 0";
    }
    stage = "transport";
    const TransportSuite t = transport_inequality_suite(chart, box, count, seed);
    m.checks.push_back({"geometry", t.report});
    m.results["transport"] = {{"C_tp1", t.doubled.C_tp1}, {"C_tp2", t.doubled.C_tp2}, {"C_tp3", t.doubled.C_tp3},
                              {"stable", t.stable}, {"finite", t.finite}};
    stage = "persistence";
  } catch (const std::exception& e) {
    m.status = "failed";
    m.failed_stage = stage;
    m.error = e.what();
  }
  if (m.scenario.empty()) m.scenario = "geomtest";
  m.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  w.emit("summary.txt", [&](std::ostream& os) { detail::write_summary(os, m); });
  if (m.status != "ok") w.marker();
  w.manifest();
  return m;
}

// ---- report ----

inline std::vector<json> load_manifests(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail(ErrorKind::config, "report: not a directory: " + dir);
  std::vector<fs::path> found;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() == "manifest.json") found.push_back(e.path());
  std::sort(found.begin(), found.end());
  std::vector<json> out;
  for (const fs::path& p : found) {
    json j = json::parse(read_file(p));
    j["directory"] = p.parent_path().string();
    out.push_back(std::move(j));
  }
  return out;
}

struct ReportDoc {
  json data;
  std::string text;
  int passed = 0;
  int failed = 0;
  int broken = 0;  // runs that stopped at a failing stage
  bool clean() const { return failed == 0 && broken == 0; }
};

namespace detail {

inline double margin_of(const json& c) {
  const json& m = c.at("margin");
  if (m.is_string()) return m == "inf" ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  return m.get<double>();
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

inline std::string witness_text(const json& c) {
  std::string s = "(";
  for (std::size_t i = 0; i < c.at("witness").size(); ++i) s += (i ? ", " : "") + fmt(c.at("witness")[i].get<double>());
  return s + ")";
}

}  // namespace detail

/// One table per check family with pass/fail counts and worst margins; failures first
/// with witnesses; observed residual order in the path step for refinement series.
inline ReportDoc report(const std::vector<json>& manifests) {
  ReportDoc doc;
  struct Row {
    std::string scenario;
    json check;
  };
  std::map<std::string, std::vector<Row>> families;
  std::vector<Row> failures;
  std::vector<json> broken;
  for (const json& m : manifests) {
    if (m.value("status", "ok") != "ok") broken.push_back(m);
    for (const json& c : m.at("checks")) {
      std::string label = m.at("scenario").get<std::string>();
      if (m.value("refine", 0) > 0) label += " (refine " + std::to_string(m.value("refine", 0)) + ")";
      if (m.value("report_only", false)) label += " [report-only]";
      Row row{label, c};
      families[c.value("family", "other")].push_back(row);
      (c.at("pass").get<bool>() ? doc.passed : doc.failed) += 1;
      if (!c.at("pass").get<bool>()) failures.push_back(row);
    }
  }
  std::ostringstream os;
  os << "# Run report\n\n" << manifests.size() << " runs, " << doc.passed << " checks passed, " << doc.failed
     << " failed, " << broken.size() << " runs stopped early\n";
  doc.data["runs"] = manifests.size();
  doc.broken = static_cast<int>(broken.size());
  doc.data["broken"] = doc.broken;
  doc.data["passed"] = doc.passed;
  doc.data["failed"] = doc.failed;

  if (!failures.empty() || !broken.empty()) {
    os << "\n## Failures\n\n";
    for (const json& m : broken)
      os << "- " << m.at("scenario").get<std::string>() << ": stage " << m.at("failed_stage").get<std::string>() << ": "
         << m.at("error").get<std::string>() << "\n";
    for (const Row& r : failures)
      os << "- " << r.scenario << " / " << r.check.at("test").get<std::string>() << ": margin "
         << detail::fmt(detail::margin_of(r.check)) << " (tol " << detail::fmt(r.check.at("tolerance").get<double>())
         << ") at " << detail::witness_text(r.check) << "\n";
  }
  doc.data["failures"] = json::array();
  for (const Row& r : failures) doc.data["failures"].push_back({{"scenario", r.scenario}, {"check", r.check}});

  doc.data["families"] = json::object();
  for (auto& [fam, rows] : families) {
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return !a.check.at("pass").get<bool>() && b.check.at("pass").get<bool>(); });
    int pass = 0;
    double worst = std::numeric_limits<double>::infinity();
    for (const Row& r : rows) {
      pass += r.check.at("pass").get<bool>();
      worst = std::min(worst, detail::margin_of(r.check));
    }
    os << "\n## " << fam << " (" << pass << "/" << rows.size() << " pass, worst margin " << detail::fmt(worst) << ")\n\n";
    os << "| scenario | check | result | margin | tolerance |\n|---|---|---|---|---|\n";
    for (const Row& r : rows)
      os << "| " << r.scenario << " | " << r.check.at("test").get<std::string>() << " | "
         << (r.check.at("pass").get<bool>() ? "pass" : "FAIL") << " | " << detail::fmt(detail::margin_of(r.check)) << " | "
         << detail::fmt(r.check.at("tolerance").get<double>()) << " |\n";
    doc.data["families"][fam] = {{"pass", pass}, {"total", rows.size()}, {"worst_margin", worst}};
  }

  // refinement series: same scenario at more than one refine level
  std::map<std::string, std::vector<const json*>> series;
  for (const json& m : manifests)
    if (m.contains("results") && m.at("results").contains("residual"))
      series[m.at("scenario").get<std::string>()].push_back(&m);
  doc.data["orders"] = json::object();
  bool header = false;
  for (auto& [name, runs] : series) {
    if (runs.size() < 2) continue;
    std::sort(runs.begin(), runs.end(), [](const json* a, const json* b) { return a->at("refine") < b->at("refine"); });
    if (!header) {
      os << "\n## Refinement series\n\n| scenario | refine | path dt | residual | observed order |\n|---|---|---|---|---|\n";
      header = true;
    }
    json col = json::array();
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const json& res = runs[i]->at("results");
      const double dtp = res.at("path_dt").get<double>(), rv = res.at("residual").at("median_mean_step").get<double>();
      std::string order = "-";
      if (i > 0) {
        const json& prev = runs[i - 1]->at("results");
        const double o = std::log(prev.at("residual").at("median_mean_step").get<double>() / rv) /
                         std::log(prev.at("path_dt").get<double>() / dtp);
        order = detail::fmt(o);
        col.push_back(o);
      }
      os << "| " << name << " | " << runs[i]->at("refine").get<int>() << " | " << detail::fmt(dtp) << " | "
         << detail::fmt(rv) << " | " << order << " |\n";
    }
    doc.data["orders"][name] = col;
  }
  doc.text = os.str();
  return doc;
}

}  // namespace mbsde
