#pragma once

// Command-line front end. Exit status: 0 when every enabled check passes, 1 when a check or
// stage fails, 2 for usage and configuration errors.

#include "mbsde/run.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace mbsde {

/// A JSON file path, or the name of a built-in scenario.
inline json load_config_json(const std::string& arg) {
  if (std::filesystem::is_regular_file(arg)) {
    try {
      return json::parse(read_file(arg));
    } catch (const json::parse_error& e) {
      fail(ErrorKind::config, arg + ": " + e.what());
    }
  }
  const auto& reg = scenario_registry();
  const auto it = reg.find(arg);
  if (it == reg.end()) fail(ErrorKind::config, "'" + arg + "' is neither a config file nor a built-in scenario");
  return it->second;
}

struct CliFlags {
  std::optional<std::uint64_t> seed;
  int refine = 0;
  std::string out = "runs";
  std::optional<double> force_epsilon;
  int count = 1000;
};

inline ExperimentConfig prepare(const std::string& arg, const CliFlags& fl, const std::string& want_kind) {
  ExperimentConfig c = config_from_json(load_config_json(arg));
  if (c.kind != want_kind) fail(ErrorKind::config, "config kind is '" + c.kind + "', this command runs '" + want_kind + "'");
  if (fl.seed) c.seed = *fl.seed;
  if (fl.force_epsilon) {
    c.epsilon = *fl.force_epsilon;
    c.force_epsilon = true;
  }
  if (fl.refine > 0) {
    const Resolved r = resolve(c);
    c = refined(c, fl.refine, detail::diffusion_max_eig(r.spec, c.kind == "bsde" ? c.support : c.base));
  }
  return c;
}

inline std::string run_dir(const CliFlags& fl, const ExperimentConfig& c) {
  if (!c.output.empty() && fl.out == "runs") return c.output;
  std::string name = c.scenario;
  if (fl.refine > 0) name += "-r" + std::to_string(fl.refine);
  return (std::filesystem::path(fl.out) / name).string();
}

inline int finish(const RunManifest& m, std::ostream& out) {
  detail::write_summary(out, m);
  if (!m.directory.empty()) out << "manifest: " << (std::filesystem::path(m.directory) / "manifest.json").string() << "\n";
  return m.all_pass() ? 0 : 1;
}

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Constrained BSDE solver and verification suite", "mbsde"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  CliFlags fl;
  std::string target;

  auto add_run_flags = [&](CLI::App* sub, bool epsilon) {
    sub->add_option("--seed", fl.seed, "override the config seed");
    sub->add_option("--refine", fl.refine, "halve dx and dt this many times")->check(CLI::NonNegativeNumber);
    sub->add_option("--out", fl.out, "output root directory")->capture_default_str();
    if (epsilon) sub->add_option("--force-epsilon", fl.force_epsilon, "use this epsilon even if it fails the certificate");
  };

  CLI::App* solve = app.add_subcommand("solve", "solve a BSDE config (solver outputs and certificates only)");
  solve->add_option("config", target, "config file or built-in scenario")->required();
  add_run_flags(solve, true);
  CLI::App* verify = app.add_subcommand("verify", "solve a BSDE config and run its enabled checks");
  verify->add_option("config", target, "config file or built-in scenario")->required();
  add_run_flags(verify, true);
  CLI::App* dir = app.add_subcommand("dirichlet", "run a Dirichlet problem config");
  dir->add_option("config", target, "config file or built-in scenario")->required();
  add_run_flags(dir, false);
  CLI::App* geo = app.add_subcommand("geomtest", "distance-Hessian and transport suites on a chart");
  geo->add_option("chart", target, "built-in chart name or chart JSON file")->required();
  geo->add_option("--count", fl.count, "sample points")->capture_default_str()->check(CLI::PositiveNumber);
  geo->add_option("--seed", fl.seed, "sampling seed");
  geo->add_option("--out", fl.out, "output root directory")->capture_default_str();
  CLI::App* rep = app.add_subcommand("report", "summarise every manifest under a directory");
  rep->add_option("dir", target, "directory to scan")->required();
  app.add_subcommand("list", "list built-in scenarios");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("list")) {
      for (const std::string& n : scenario_names()) {
        const ExperimentConfig c = builtin_scenario(n);
        out << n << "  (" << c.kind << ")\n";
      }
      return 0;
    }
    if (app.got_subcommand("report")) {
      const std::vector<json> ms = load_manifests(target);
      if (ms.empty()) fail(ErrorKind::config, "report: no manifest.json under " + target);
      const ReportDoc doc = report(ms);
      std::ofstream(std::filesystem::path(target) / "report.md") << doc.text;
      std::ofstream(std::filesystem::path(target) / "report.json") << doc.data.dump(2) << "\n";
      out << doc.text;
      return doc.clean() ? 0 : 1;
    }
    if (app.got_subcommand("geomtest")) {
      const json chart = std::filesystem::is_regular_file(target) ? json::parse(read_file(target)) : json(target);
      const std::string name = std::filesystem::path(target).stem().string();
      const RunManifest m =
          run_geomtest(chart, fl.count, fl.seed.value_or(1), {(std::filesystem::path(fl.out) / ("geomtest-" + name)).string()});
      return finish(m, out);
    }
    const bool is_dir = app.got_subcommand("dirichlet");
    ExperimentConfig c = prepare(target, fl, is_dir ? "dirichlet" : "bsde");
    if (app.got_subcommand("solve")) c.verify.names.clear();
    const RunManifest m = run_scenario(c, {run_dir(fl, c), fl.refine});
    return finish(m, out);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace mbsde
