#pragma once

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "error.hpp"
#include "scenarios.hpp"

namespace cwf {

namespace detail {

inline std::string where(const std::string& source, const YAML::Node& n) {
  const auto m = n.Mark();
  return m.is_null() ? source : source + ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1);
}

template <class T>
T scalar(const std::string& source, const YAML::Node& n, const std::string& key) {
  if (!n.IsScalar()) throw ValidationError(where(source, n) + ": '" + key + "' must be a scalar");
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ValidationError(where(source, n) + ": invalid value '" + n.Scalar() + "' for '" + key + "'");
  }
}

inline std::size_t count(const std::string& source, const YAML::Node& n, const std::string& key) {
  const auto s = n.IsScalar() ? n.Scalar() : std::string();
  if (!s.empty() && s.front() == '-') throw ValidationError(where(source, n) + ": '" + key + "' must be non-negative");
  const double v = scalar<double>(source, n, key);
  if (v < 0.0 || v != std::floor(v) || v > 1e15) {
    throw ValidationError(where(source, n) + ": '" + key + "' must be a non-negative integer");
  }
  return static_cast<std::size_t>(v);
}

inline cplx complex_value(const std::string& source, const YAML::Node& n, const std::string& key) {
  if (n.IsScalar()) return {scalar<double>(source, n, key), 0.0};
  if (n.IsSequence() && n.size() == 2) return {scalar<double>(source, n[0], key), scalar<double>(source, n[1], key)};
  throw ValidationError(where(source, n) + ": '" + key + "' entries must be a number or [re, im]");
}

using Setter = std::function<void(const YAML::Node&)>;

inline void apply_section(const std::string& source, const YAML::Node& node, const std::string& section,
                          const std::map<std::string, Setter>& setters) {
  if (!node.IsMap()) throw ValidationError(where(source, node) + ": '" + section + "' must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw ValidationError(where(source, kv.first) + ": unknown key '" + key + "'" +
                            (section.empty() ? "" : " in '" + section + "'"));
    }
    it->second(kv.second);
  }
}

}  // namespace detail

inline ScenarioKind parse_scenario(const std::string& s) {
  if (s == "fig1_collapse" || s == "fig1") return ScenarioKind::fig1_collapse;
  if (s == "photon_planes" || s == "planes") return ScenarioKind::photon_planes;
  if (s == "density_dm" || s == "density") return ScenarioKind::density_dm;
  if (s == "order_invariance" || s == "order") return ScenarioKind::order_invariance;
  throw ValidationError("unknown scenario '" + s + "'");
}

/// Parse YAML text on top of `base`; `source` names the input in error messages.
inline ScenarioConfig parse_config(const std::string& text, const std::string& source = "<config>",
                                   ScenarioConfig base = {}) {
  using detail::count;
  using detail::scalar;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ValidationError(source + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                          ": " + e.msg);
  }
  ScenarioConfig c = std::move(base);
  if (root.IsNull()) return c;
  const std::string& src = source;
  auto num = [&](double& dst, const char* k) { return [&dst, &src, k](const YAML::Node& n) { dst = scalar<double>(src, n, k); }; };
  auto cnt = [&](std::size_t& dst, const char* k) { return [&dst, &src, k](const YAML::Node& n) { dst = count(src, n, k); }; };
  auto flag = [&](bool& dst, const char* k) { return [&dst, &src, k](const YAML::Node& n) { dst = scalar<bool>(src, n, k); }; };

  std::map<std::string, detail::Setter> fig1{
      {"coefficients",
       [&](const YAML::Node& n) {
         if (!n.IsSequence()) throw ValidationError(detail::where(src, n) + ": 'coefficients' must be a list");
         c.fig1.coefficients.clear();
         for (const auto& e : n) c.fig1.coefficients.push_back(detail::complex_value(src, e, "coefficients"));
       }},
      {"box_length", num(c.fig1.box_length, "box_length")},
      {"barrier", num(c.fig1.barrier, "barrier")},
      {"mass", num(c.fig1.mass, "mass")},
      {"lambda", num(c.fig1.lambda, "lambda")},
      {"pointer_width", num(c.fig1.pointer_width, "pointer_width")},
      {"eigenvalues",
       [&](const YAML::Node& n) {
         const auto v = scalar<std::string>(src, n, "eigenvalues");
         if (v != "index" && v != "energy") throw ValidationError(detail::where(src, n) + ": 'eigenvalues' must be index or energy");
         c.fig1.energy_eigenvalues = v == "energy";
       }},
      {"n_x", cnt(c.fig1.n_x, "n_x")},
      {"n_y", cnt(c.fig1.n_y, "n_y")},
      {"evolve_time", num(c.fig1.evolve_time, "evolve_time")}};
  std::map<std::string, detail::Setter> planes{
      {"plane",
       [&](const YAML::Node& n) {
         const auto v = scalar<std::string>(src, n, "plane");
         if (v != "A" && v != "B" && v != "C") throw ValidationError(detail::where(src, n) + ": 'plane' must be A, B or C");
         c.planes.plane = v[0];
       }},
      {"bs_inserted", flag(c.planes.bs_inserted, "bs_inserted")},
      {"separation", num(c.planes.separation, "separation")},
      {"packet_width", num(c.planes.packet_width, "packet_width")},
      {"photon2_width", num(c.planes.photon2_width, "photon2_width")},
      {"bs_shift", num(c.planes.bs_shift, "bs_shift")},
      {"n_x", cnt(c.planes.n_x, "n_x")},
      {"dx", num(c.planes.dx, "dx")},
      {"n_y", cnt(c.planes.n_y, "n_y")},
      {"cwf_samples", cnt(c.planes.cwf_samples, "cwf_samples")}};
  std::map<std::string, detail::Setter> pointer{
      {"model",
       [&](const YAML::Node& n) {
         const auto v = scalar<std::string>(src, n, "model");
         if (v != "qubit" && v != "gaussian") throw ValidationError(detail::where(src, n) + ": 'model' must be qubit or gaussian");
         c.pointer.model = v == "qubit" ? PointerModel::qubit : PointerModel::gaussian;
       }},
      {"g", num(c.pointer.g, "g")},
      {"sigma_p", num(c.pointer.sigma_p, "sigma_p")},
      {"p_window_cells", num(c.pointer.p_window_cells, "p_window_cells")},
      {"site_threshold", num(c.pointer.site_threshold, "site_threshold")}};
  std::map<std::string, detail::Setter> density{
      {"n_y", cnt(c.density.n_y, "n_y")},
      {"y_half_width", num(c.density.y_half_width, "y_half_width")},
      {"width", num(c.density.width, "width")},
      {"shift", num(c.density.shift, "shift")},
      {"bs_inserted", flag(c.density.bs_inserted, "bs_inserted")},
      {"four_phase", flag(c.density.four_phase, "four_phase")},
      {"resample_trials", cnt(c.density.resample_trials, "resample_trials")}};
  std::map<std::string, detail::Setter> top{
      {"scenario",
       [&](const YAML::Node& n) {
         try {
           c.scenario = parse_scenario(scalar<std::string>(src, n, "scenario"));
         } catch (const ValidationError& e) {
           throw ValidationError(detail::where(src, n) + ": " + e.what());
         }
       }},
      {"seed",
       [&](const YAML::Node& n) {
         if (n.IsScalar() && !n.Scalar().empty() && n.Scalar().front() == '-') {
           throw ValidationError(detail::where(src, n) + ": 'seed' must be non-negative");
         }
         c.seed = scalar<std::uint64_t>(src, n, "seed");
       }},
      {"n_trials", cnt(c.n_trials, "n_trials")},
      {"output_dir", [&](const YAML::Node& n) { c.output_dir = scalar<std::string>(src, n, "output_dir"); }},
      {"hbar", num(c.hbar, "hbar")},
      {"max_records", cnt(c.max_records, "max_records")},
      {"fig1", [&](const YAML::Node& n) { detail::apply_section(src, n, "fig1", fig1); }},
      {"planes", [&](const YAML::Node& n) { detail::apply_section(src, n, "planes", planes); }},
      {"pointer", [&](const YAML::Node& n) { detail::apply_section(src, n, "pointer", pointer); }},
      {"density", [&](const YAML::Node& n) { detail::apply_section(src, n, "density", density); }}};
  detail::apply_section(src, root, "", top);
  return c;
}

inline ScenarioConfig load_config(const std::string& path, ScenarioConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path, std::move(base));
}

}  // namespace cwf
