#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "config.hpp"
#include "error.hpp"
#include "scenarios.hpp"
#include "selftest.hpp"
#include "wf_io.hpp"

namespace cwf {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

enum class OutputFormat { csv, json };

namespace detail {

inline std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

inline void write_table_csv(std::ostream& out, const Table& t) {
  for (std::size_t i = 0; i < t.header.size(); ++i) out << (i ? "," : "") << csv_cell(t.header[i]);
  out << '\n';
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << csv_cell(r[i]);
    out << '\n';
  }
}

inline void write_table_json(std::ostream& out, const Table& t) {
  ordered_json a = ordered_json::array();
  for (const auto& r : t.rows) {
    ordered_json o;
    for (std::size_t i = 0; i < t.header.size(); ++i) o[t.header[i]] = i < r.size() ? r[i] : std::string();
    a.push_back(std::move(o));
  }
  out << a.dump(2) << '\n';
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ValidationError("cannot write '" + p.string() + "'");
  return f;
}

}  // namespace detail

/// Writes report.json, records.csv, results.{csv,json} and wf/<name>.csv under dir.
inline void write_outputs(const ScenarioReport& r, const std::filesystem::path& dir, OutputFormat fmt) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "wf", ec);
  if (ec) throw ValidationError("cannot create output directory '" + dir.string() + "': " + ec.message());
  {
    auto f = detail::open_out(dir / "report.json");
    f << r.to_json().dump(2) << '\n';
  }
  {
    auto f = detail::open_out(dir / "records.csv");
    detail::write_table_csv(f, r.records);
  }
  {
    auto f = detail::open_out(dir / (fmt == OutputFormat::csv ? "results.csv" : "results.json"));
    if (fmt == OutputFormat::csv) {
      detail::write_table_csv(f, r.results);
    } else {
      detail::write_table_json(f, r.results);
    }
  }
  for (const auto& w : r.wavefunctions) {
    auto f = detail::open_out(dir / "wf" / (w.name + ".csv"));
    write_csv(f, w.wf);
  }
}

inline void print_checks(std::ostream& out, const std::vector<Check>& checks) {
  for (const auto& c : checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << " value=" << detail::fmt_double(c.value) << ' ' << c.relation
        << ' ' << detail::fmt_double(c.threshold) << '\n';
  }
}

/// Entry point shared by the executable and the tests; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"cwflab: conditional wave function laboratory"};
  app.require_subcommand(1);
  std::string config_path, out_dir, plane, bs, format = "csv";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  auto add_common = [&](CLI::App* s) {
    s->add_option("--config", config_path, "YAML configuration file");
    s->add_option("--seed", seed, "Master seed");
    s->add_option("--out", out_dir, "Output directory");
    s->add_option("--trials", trials, "Number of trials / trajectories")->check(CLI::PositiveNumber);
    s->add_option("--format", format, "Results table format")->check(CLI::IsMember({"csv", "json"}));
  };
  auto* fig1 = app.add_subcommand("fig1", "Impulsive measurement and collapse of the conditional wave function");
  auto* planes = app.add_subcommand("planes", "Entangled photon pair: weak-value reconstruction at plane A/B/C");
  auto* density = app.add_subcommand("density", "Direct measurement of reduced and conditional density matrices");
  auto* order = app.add_subcommand("order", "Order invariance of the beam splitter and the weak coupling");
  auto* selftest = app.add_subcommand("selftest", "Run the invariant suite");
  for (auto* s : {fig1, planes, density, order}) add_common(s);
  for (auto* s : {planes, density}) s->add_option("--bs", bs, "Beam splitter")->check(CLI::IsMember({"on", "off"}));
  planes->add_option("--plane", plane, "Detection plane")->check(CLI::IsMember({"A", "B", "C"}));
  selftest->add_option("--seed", seed, "Seed for the sampling checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (selftest->parsed()) {
      const auto checks = run_selftest(seed.value_or(1));
      print_checks(out, checks);
      const bool ok = std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
      out << (ok ? "selftest passed" : "selftest FAILED") << '\n';
      return ok ? kExitOk : kExitNumerical;
    }
    ScenarioConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    CLI::App* sub = app.get_subcommands().front();
    cfg.scenario = parse_scenario(sub->get_name());
    if (seed) cfg.seed = *seed;
    if (trials) cfg.n_trials = *trials;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (!plane.empty()) cfg.planes.plane = plane[0];
    if (!bs.empty()) {
      cfg.planes.bs_inserted = bs == "on";
      cfg.density.bs_inserted = bs == "on";
    }
    cfg.validate();
    const ScenarioReport r = run_scenario(cfg);
    write_outputs(r, cfg.output_dir, format == "json" ? OutputFormat::json : OutputFormat::csv);
    print_checks(out, r.checks);
    out << r.scenario << (r.passed() ? " passed" : " FAILED") << "; outputs in " << cfg.output_dir << '\n';
    return r.passed() ? kExitOk : kExitNumerical;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  }
}

}  // namespace cwf
