#include "mbsde/cli.hpp"

#include <gtest/gtest.h>

using namespace mbsde;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "mbsde_test_cli" / name;
  fs::remove_all(p);
  return p;
}

ExperimentConfig fast_linear() {
  ExperimentConfig c = builtin_scenario("flat-linear-drift");
  c.verify.names = {"residual", "terminal", "z_bound"};
  return c;
}

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "mbsde");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int rc = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str() + err.str();
  return rc;
}

}  // namespace

TEST(Config, EveryBuiltinParsesAndResolves) {
  for (const std::string& n : scenario_names()) {
    const ExperimentConfig c = builtin_scenario(n);
    EXPECT_EQ(c.scenario, n);
    EXPECT_NO_THROW(resolve(c)) << n;
  }
  EXPECT_THROW(builtin_scenario("no-such-scenario"), Error);
}

TEST(Config, EchoIsAFixedPoint) {
  // the echo carries every default, so parsing it back changes nothing
  for (const std::string& n : scenario_names()) {
    const json e = to_json(builtin_scenario(n));
    EXPECT_EQ(to_json(config_from_json(e)), e) << n;
  }
  const json bare = to_json(config_from_json(json::object()));
  for (const char* key : {"grid", "solver", "paths", "lsmc", "verify", "thresholds", "dirichlet", "seed"})
    EXPECT_TRUE(bare.contains(key)) << key;
  EXPECT_EQ(bare.at("solver").at("epsilon"), "auto");
}

TEST(Config, UnknownKeysAreRejected) {
  json j = scenario_registry().at("flat-linear-drift");
  j["colour"] = "blue";
  EXPECT_THROW(config_from_json(j), Error);
  j = scenario_registry().at("flat-linear-drift");
  j["grid"]["dz"] = 0.1;
  EXPECT_THROW(config_from_json(j), Error);
  j = scenario_registry().at("flat-linear-drift");
  j["verify"] = {"residual", "tension"};  // tension belongs to dirichlet runs
  EXPECT_THROW(config_from_json(j), Error);
  j = scenario_registry().at("flat-linear-drift");
  j["kind"] = "parabolic";
  EXPECT_THROW(config_from_json(j), Error);
  j = scenario_registry().at("flat-linear-drift");
  j["terminal"] = {{"form", "cubic"}};
  EXPECT_THROW(resolve(config_from_json(j)), Error);
}

TEST(Config, VerifySetDefaultsPerKind) {
  EXPECT_EQ(config_from_json(json::object()).verify.names, (std::vector<std::string>{"residual", "terminal", "z_bound"}));
  EXPECT_EQ(config_from_json({{"kind", "dirichlet"}}).verify.names, (std::vector<std::string>{"tension", "range"}));
  EXPECT_TRUE(config_from_json({{"verify", json::array()}}).verify.names.empty());
}

TEST(Config, RefineHalvesAndRespectsCfl) {
  ExperimentConfig c = builtin_scenario("flat-sin");
  const ExperimentConfig r = refined(c, 2, 1.0);
  EXPECT_DOUBLE_EQ(r.dx, c.dx / 4);
  EXPECT_EQ(r.path_steps, 4 * c.path_steps);
  EXPECT_DOUBLE_EQ(r.mc_dt, c.mc_dt / 4);
  EXPECT_LE(r.dt, 0.4 * r.dx * r.dx + 1e-18);
  EXPECT_LE(r.dt, c.dt / 4 + 1e-18);
  EXPECT_THROW(refined(c, -1), Error);
}

TEST(Terminal, Forms) {
  const Box box = make_box({-1.0}, {1.0});
  const TerminalFn arc = terminal_from_json({{"form", "arc"}}, 1, 2, box);
  for (double b : {-3.0, -1.0, 0.0, 0.7, 2.5}) EXPECT_NEAR(arc(vec({b})).norm(), 1.0, 1e-14);
  EXPECT_NEAR(arc(vec({-2.0}))[0], 1.0, 1e-14);
  EXPECT_NEAR(arc(vec({2.0}))[0], -1.0, 1e-14);

  const TerminalFn ev = terminal_from_json({{"form", "exp-vertical"}, {"rate", 0.5}, {"clamp", true}}, 1, 2, box);
  EXPECT_DOUBLE_EQ(ev(vec({0.4}))[1], std::exp(0.2));
  EXPECT_EQ(ev(vec({3.0})), ev(vec({1.0})));
  EXPECT_EQ(ev(vec({0.4}))[0], 0.0);

  const TerminalFn aff = terminal_from_json({{"form", "affine"}, {"A", {{1.0, 2.0}}}, {"c", {0.5}}}, 2, 1, box);
  EXPECT_DOUBLE_EQ(aff(vec({1.0, 1.0}))[0], 3.5);
  EXPECT_THROW(terminal_from_json({{"form", "sin"}}, 2, 1, box), Error);
  EXPECT_THROW(terminal_from_json({{"form", "affine"}, {"A", {{1.0}}}, {"scale", 2}, {"shift", 1}}, 1, 1, box), Error);
}

TEST(Digest, KnownVectors) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Run, FlatLinearDriftOracle) {
  const fs::path dir = scratch("linear");
  const RunManifest m = run_scenario(fast_linear(), {dir.string()});
  ASSERT_EQ(m.status, "ok") << m.error;
  EXPECT_TRUE(m.all_pass());
  ASSERT_NE(m.find("z-bound"), nullptr);
  EXPECT_TRUE(m.find("z-bound")->report.pass);
  // affine terminal: the Ito residual vanishes up to rounding, well inside O(dt)
  EXPECT_LT(m.results.at("residual").at("median_mean_step").get<double>(), 1e-10);
  EXPECT_NEAR(m.results.at("X0")[0].get<double>(), -0.3, 1e-9);
  EXPECT_EQ(m.certificates.at("epsilon").at("source"), "auto");
  EXPECT_TRUE(m.certificates.at("epsilon").at("pass").get<bool>());
  EXPECT_EQ(m.config_hash, config_hash(fast_linear()));
}

TEST(Run, EveryFileIsListedWithItsDigest) {
  const fs::path dir = scratch("digests");
  const RunManifest m = run_scenario(fast_linear(), {dir.string()});
  std::vector<std::string> names;
  for (const EmittedFile& f : m.files) {
    names.push_back(f.name);
    const std::string body = read_file(dir / f.name);
    EXPECT_EQ(sha256_hex(body), f.sha256) << f.name;
    EXPECT_EQ(body.size(), f.bytes);
  }
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string n = e.path().filename().string();
    if (n != "manifest.json") {
      EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
    }
  }
  const json j = json::parse(read_file(dir / "manifest.json"));
  EXPECT_EQ(j.at("tool_version"), kToolVersion);
  EXPECT_EQ(j.at("config"), to_json(fast_linear()));
  EXPECT_TRUE(j.contains("wall_clock_s"));
}

TEST(Run, ForcedEpsilonIsReportOnly) {
  const fs::path dir = scratch("forced");
  const RunManifest m = run_scenario(builtin_scenario("flat-linear-drift-forced-epsilon"), {dir.string()});
  EXPECT_EQ(m.status, "ok");
  EXPECT_TRUE(m.report_only);
  EXPECT_FALSE(m.all_pass());
  const CheckRecord* z = m.find("z-bound");
  ASSERT_NE(z, nullptr);
  EXPECT_FALSE(z->report.pass);
  EXPECT_NEAR(z->report.margin, 0.8 - 1.0, 1e-9);
  EXPECT_EQ(z->report.witness.size(), 2u);  // (tau, x)
  EXPECT_TRUE(fs::exists(dir / "solution.csv"));
  EXPECT_FALSE(fs::exists(dir / "FAILED"));

  // the same override without the force flag is a configuration error
  ExperimentConfig c = builtin_scenario("flat-linear-drift-forced-epsilon");
  c.force_epsilon = false;
  const RunManifest u = run_scenario(c);
  EXPECT_EQ(u.status, "failed");
  EXPECT_EQ(u.failed_stage, "epsilon");
}

TEST(Run, EmptyVerificationSet) {
  ExperimentConfig c = fast_linear();
  c.verify.names.clear();
  const fs::path dir = scratch("empty");
  const RunManifest m = run_scenario(c, {dir.string()});
  EXPECT_EQ(m.status, "ok");
  EXPECT_TRUE(m.checks.empty());
  EXPECT_TRUE(m.all_pass());
  EXPECT_TRUE(fs::exists(dir / "field.csv"));
  EXPECT_TRUE(fs::exists(dir / "solution.csv"));
  EXPECT_TRUE(m.certificates.contains("z_bound"));
}

TEST(Run, FailingStageIsNamedAndPartialOutputsKept) {
  ExperimentConfig c = fast_linear();
  c.dt = 5e-3;  // beyond the explicit stability limit for dx = 0.05
  const fs::path dir = scratch("cfl");
  const RunManifest m = run_scenario(c, {dir.string()});
  EXPECT_EQ(m.status, "failed");
  EXPECT_EQ(m.failed_stage, "pde");
  EXPECT_NE(m.error.find("CFL"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "FAILED"));
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(m.certificates.contains("epsilon"));  // earlier stages are retained
  EXPECT_FALSE(fs::exists(dir / "field.csv"));

  // a later successful run in the same directory clears the marker
  run_scenario(fast_linear(), {dir.string()});
  EXPECT_FALSE(fs::exists(dir / "FAILED"));

  ExperimentConfig d = fast_linear();
  d.verify.names.push_back("domain_invariance");
  EXPECT_EQ(run_scenario(d).failed_stage, "resolve");
}

TEST(Run, RepeatedRunsAreBitIdentical) {
  const RunManifest a = run_scenario(fast_linear(), {scratch("rep-a").string()});
  const RunManifest b = run_scenario(fast_linear(), {scratch("rep-b").string()});
  EXPECT_EQ(to_json(a, false), to_json(b, false));
  ASSERT_EQ(a.files.size(), b.files.size());
  for (std::size_t i = 0; i < a.files.size(); ++i) EXPECT_EQ(a.files[i].sha256, b.files[i].sha256) << a.files[i].name;

  ExperimentConfig c = fast_linear();
  c.seed = 2;
  const RunManifest s = run_scenario(c, {scratch("rep-c").string()});
  auto digest = [](const RunManifest& m, const std::string& name) {
    for (const EmittedFile& f : m.files)
      if (f.name == name) return f.sha256;
    return std::string();
  };
  EXPECT_FALSE(digest(a, "solution.csv").empty());
  EXPECT_NE(digest(s, "solution.csv"), digest(a, "solution.csv"));
  EXPECT_EQ(digest(s, "field.csv"), digest(a, "field.csv"));  // the PDE does not depend on the seed
  EXPECT_NE(s.config_hash, a.config_hash);
}

TEST(Run, DirichletEnergyScenario) {
  const fs::path dir = scratch("dir-energy");
  const RunManifest m = run_scenario(builtin_scenario("dirichlet-energy"), {dir.string()});
  ASSERT_EQ(m.status, "ok") << m.error;
  EXPECT_TRUE(m.all_pass());
  for (const char* n : {"boundary-map-in-domain", "flow-converged", "tension", "flow-range", "energy-descent"})
    EXPECT_NE(m.find(n), nullptr) << n;
  EXPECT_TRUE(fs::exists(dir / "energy.csv"));
  EXPECT_EQ(m.certificates.at("exit_rho").at("method"), "closed-form");
}

TEST(Run, Geomtest) {
  const RunManifest m = run_geomtest("flat", 200, 3);
  EXPECT_TRUE(m.all_pass());
  EXPECT_EQ(m.scenario, "geomtest-flat");
  const RunManifest s = run_geomtest("sphere-cap", 50, 3);
  EXPECT_EQ(s.find("distance-first-derivative"), nullptr);  // Hessian suite needs K = 0
  EXPECT_NE(s.find("transport-inequalities"), nullptr);
  EXPECT_EQ(run_geomtest("torus").status, "failed");
}

TEST(Report, SinglePassingManifestIsAllGreen) {
  const RunManifest m = run_scenario(fast_linear());
  const ReportDoc d = report({to_json(m)});
  EXPECT_TRUE(d.clean());
  EXPECT_EQ(d.passed, 3);
  EXPECT_EQ(d.text.find("## Failures"), std::string::npos);
  EXPECT_NE(d.text.find("## certificate"), std::string::npos);
}

TEST(Report, FailuresComeFirstWithWitnesses) {
  const json ok = to_json(run_scenario(fast_linear()));
  const json bad = to_json(run_scenario(builtin_scenario("flat-linear-drift-forced-epsilon")));
  const ReportDoc d = report({ok, bad});
  EXPECT_FALSE(d.clean());
  EXPECT_EQ(d.failed, 1);
  const auto f = d.text.find("## Failures"), t = d.text.find("## certificate");
  ASSERT_NE(f, std::string::npos);
  EXPECT_LT(f, t);
  EXPECT_NE(d.text.find("z-bound: margin -0.2"), std::string::npos);
  // inside the family table the failing row precedes the passing one
  const std::string table = d.text.substr(t);
  EXPECT_LT(table.find("FAIL"), table.find("| pass"));
  EXPECT_EQ(d.data.at("failures")[0].at("check").at("witness").size(), 2u);
}

TEST(Report, RefinementPairShowsFirstOrderResidual) {
  ExperimentConfig c = builtin_scenario("flat-heat");
  c.verify.names = {"residual"};
  std::vector<json> ms;
  for (int k : {0, 1}) {
    const ExperimentConfig r = refined(c, k, 1.0);
    ms.push_back(to_json(run_scenario(r, {"", k})));
  }
  const ReportDoc d = report(ms);
  ASSERT_TRUE(d.data.at("orders").contains("flat-heat"));
  EXPECT_NEAR(d.data.at("orders").at("flat-heat")[0].get<double>(), 1.0, 0.3);
  EXPECT_NE(d.text.find("## Refinement series"), std::string::npos);
}

TEST(Cli, ExitCodes) {
  const fs::path root = scratch("cli");
  std::string text;
  EXPECT_EQ(run_cli({"list"}, &text), 0);
  EXPECT_NE(text.find("flat-linear-drift"), std::string::npos);
  EXPECT_EQ(run_cli({"verify", "flat-linear-drift", "--out", root.string()}, &text), 0) << text;
  EXPECT_TRUE(fs::exists(root / "flat-linear-drift" / "manifest.json"));
  EXPECT_EQ(run_cli({"verify", "flat-linear-drift", "--force-epsilon", "1.25", "--out", (root / "f").string()}), 1);
  EXPECT_EQ(run_cli({"solve", "no-such-thing"}), 2);
  EXPECT_EQ(run_cli({"dirichlet", "flat-linear-drift"}), 2);  // wrong kind
  EXPECT_EQ(run_cli({"frobnicate"}), 2);
  EXPECT_EQ(run_cli({"report", root.string()}, &text), 1);
  EXPECT_TRUE(fs::exists(root / "report.md"));
  EXPECT_EQ(run_cli({"report", (root / "flat-linear-drift").string()}), 0);
  EXPECT_EQ(run_cli({"geomtest", "flat", "--count", "50", "--out", root.string()}), 0);
}

TEST(Cli, ConfigFileAndSeedOverride) {
  const fs::path root = scratch("cli-file");
  fs::create_directories(root);
  json j = scenario_registry().at("flat-linear-drift");
  j["verify"] = {"residual", "terminal"};
  j["scenario"] = "from-file";
  std::ofstream(root / "cfg.json") << j.dump();
  EXPECT_EQ(run_cli({"verify", (root / "cfg.json").string(), "--seed", "9", "--out", root.string()}), 0);
  const json m = json::parse(read_file(root / "from-file" / "manifest.json"));
  EXPECT_EQ(m.at("config").at("seed").get<int>(), 9);
  EXPECT_EQ(run_cli({"solve", (root / "cfg.json").string(), "--refine", "1", "--out", root.string()}), 0);
  const json r = json::parse(read_file(root / "from-file-r1" / "manifest.json"));
  EXPECT_TRUE(r.at("checks").empty());
  EXPECT_EQ(r.at("refine").get<int>(), 1);
  EXPECT_DOUBLE_EQ(r.at("config").at("grid").at("dx").get<double>(), 0.025);

  std::ofstream(root / "bad.json") << "{\"scenario\": ";
  EXPECT_EQ(run_cli({"verify", (root / "bad.json").string()}), 2);
}
