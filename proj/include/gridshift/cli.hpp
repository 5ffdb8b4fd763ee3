#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

#include "gridshift/dynamics.hpp"
#include "gridshift/io.hpp"
#include "gridshift/planner.hpp"
#include "gridshift/powerflow.hpp"

namespace gridshift::cli {

namespace fs = std::filesystem;

enum ExitCode : int { ok = 0, error = 1, not_certified = 3, no_plan = 4 };

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

// Scenario plus tolerance overrides from the environment (JSON object).
inline Scenario load(const std::string& scenario_path, const std::string& overrides = {}) {
  auto s = load_scenario(scenario_path);
  if (!overrides.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(overrides);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(std::string("GRIDSHIFT_TOL_OVERRIDES parse error: ") + e.what());
    }
    s.tol = apply_overrides(s.tol, j);
  }
  return s;
}

inline EquilibriumPoint origin_equilibrium(const Scenario& s) {
  return solve_equilibrium(s.network, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.network.bus_count())),
                           newton_options(s.tol));
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + p.string());
  f << text;
  if (!f) throw ValidationError("write failed for " + p.string());
}

inline void emit(const ojson& j, const std::optional<fs::path>& out_dir, const char* name, std::ostream& out) {
  const std::string text = j.dump(2) + "\n";
  if (out_dir) {
    fs::create_directories(*out_dir);
    write_text(*out_dir / name, text);
  } else {
    out << text;
  }
}

inline int cmd_certify(const Scenario& s, const std::optional<fs::path>& out_dir, Streams io) {
  const auto origin = origin_equilibrium(s);
  const auto r = certify_hop(s.network, origin, s.fault_cleared, planner_options(s));
  ojson j;
  j["scenario"] = s.id;
  const auto body = adapt_json(r);
  for (auto it = body.begin(); it != body.end(); ++it) j[it.key()] = it.value();
  emit(j, out_dir, "certificate.json", io.out);
  if (!r.certified()) io.err << "not certified: " << (r.message.empty() ? "value >= vmin" : r.message) << "\n";
  return r.certified() ? ok : not_certified;
}

inline int cmd_plan(const Scenario& s, const std::optional<fs::path>& out_dir, Streams io) {
  const auto outcome = plan_remedial(s.network, s.fault_cleared, remedial_request(s), planner_options(s));
  for (const auto& d : outcome.diagnostics) io.err << d << "\n";
  if (!outcome.plan) {
    io.err << "no plan\n";
    return no_plan;
  }
  emit(plan_json(*outcome.plan, s.id), out_dir, "plan.json", io.out);
  return ok;
}

inline int cmd_simulate(const Scenario& s, const std::optional<std::string>& plan_path,
                        const std::optional<fs::path>& out_dir, Streams io) {
  RemedialPlan plan = plan_path ? load_plan(*plan_path, s.network) : RemedialPlan{};
  const auto origin = origin_equilibrium(s);
  if (!plan.origin.size()) plan.origin = origin.angles;
  PlanVerification v;
  if (s.sim.horizon < s.sim.dt) {
    for (const auto& st : plan.stages) v.stages.push_back({st.label, std::nullopt, 0.0});
    v.final_distance = distance_to(s.fault_cleared, plan.origin);
    v.converged = v.final_distance < s.sim.convergence_tol;
  } else {
    v = verify_plan(s.network, s.fault_cleared, plan, s.sim);
  }
  std::ostringstream csv;
  write_trajectory_csv(csv, v.trajectory, s.network.bus_count(), s.network.generator_count());
  const auto report = verification_json(v, s.network, s.id);
  if (out_dir) {
    fs::create_directories(*out_dir);
    write_text(*out_dir / "trajectory.csv", csv.str());
    write_text(*out_dir / "stages.json", report.dump(2) + "\n");
  } else {
    io.out << csv.str();
    io.err << report.dump(2) << "\n";
  }
  return ok;
}

// ---- report -----------------------------------------------------------------

struct ReportRow {
  std::string scenario;
  std::string verdict = "-";
  std::optional<double> objective, d1, final_distance;
  std::optional<int> stages;
  std::string b_values = "-";
  std::string fired = "-";
};

inline std::string fmt(const std::optional<double>& v, int digits = 4) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << *v;
  return s.str();
}

inline nlohmann::json read_json(const fs::path& p) { return detail::parse_json(detail::read_file(p, "artifact"), p.string()); }

inline int cmd_report(const fs::path& run_dir, Streams io) {
  if (!fs::is_directory(run_dir)) throw ValidationError("run directory " + run_dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (name == "plan.json" || name == "certificate.json" || name == "stages.json") files.push_back(e.path());
  }
  if (files.empty()) throw ValidationError("no run artifacts (plan.json, certificate.json, stages.json) in " + run_dir.string());
  std::sort(files.begin(), files.end());
  std::map<std::string, ReportRow> rows;
  auto scenario_of = [](const nlohmann::json& j, const fs::path& p) {
    if (j.contains("scenario") && j["scenario"].is_string()) return j["scenario"].get<std::string>();
    throw ValidationError(p.string() + ": missing 'scenario' field");
  };
  for (const auto& p : files) {
    const auto j = read_json(p);
    const auto id = scenario_of(j, p);
    auto& r = rows[id];
    r.scenario = id;
    const auto name = p.filename().string();
    auto num = [&](const char* k) -> std::optional<double> {
      if (j.contains(k) && j[k].is_number()) return j[k].get<double>();
      return std::nullopt;
    };
    if (name == "certificate.json") {
      r.verdict = j.value("verdict", "-");
    } else if (name == "plan.json") {
      r.objective = num("injection_objective");
      r.d1 = num("d1");
      r.stages = static_cast<int>(j["stages"].size());
      std::ostringstream b;
      for (const auto& st : j["stages"])
        for (const auto& a : st["actions"])
          if (a.value("kind", "") == "apply-susceptances") {
            b << "(";
            bool first = true;
            for (const auto& l : a["lines"]) {
              b << (first ? "" : " ") << std::fixed << std::setprecision(4) << l["B"].get<double>();
              first = false;
            }
            b << ")";
          }
      if (!b.str().empty()) r.b_values = b.str();
    } else {
      r.final_distance = num("final_distance");
      std::ostringstream f;
      bool first = true;
      for (const auto& st : j["stages"]) {
        f << (first ? "" : " ");
        first = false;
        if (st["fired_at"].is_number())
          f << std::fixed << std::setprecision(3) << st["fired_at"].get<double>();
        else
          f << "never";
      }
      if (!f.str().empty()) r.fired = f.str();
    }
  }
  ojson summary = ojson::array();
  std::ostringstream table;
  table << std::left << std::setw(28) << "scenario" << std::setw(15) << "certificate" << std::setw(10) << "objective"
        << std::setw(10) << "d1" << std::setw(8) << "stages" << std::setw(12) << "final_dist" << std::setw(28)
        << "stage_fired_at" << "stage_B\n";
  for (const auto& [id, r] : rows) {
    table << std::left << std::setw(28) << id << std::setw(15) << r.verdict << std::setw(10) << fmt(r.objective)
          << std::setw(10) << fmt(r.d1) << std::setw(8) << (r.stages ? std::to_string(*r.stages) : "-") << std::setw(12)
          << (r.final_distance ? fmt(r.final_distance, 6) : "-") << std::setw(28) << r.fired << r.b_values << "\n";
    auto opt = [](const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); };
    summary.push_back({{"scenario", id},
                       {"certificate", r.verdict},
                       {"injection_objective", opt(r.objective)},
                       {"d1", opt(r.d1)},
                       {"stages", r.stages ? ojson(*r.stages) : ojson(nullptr)},
                       {"final_distance", opt(r.final_distance)},
                       {"stage_fired_at", r.fired},
                       {"stage_B", r.b_values}});
  }
  io.out << table.str();
  write_text(run_dir / "report.json", summary.dump(2) + "\n");
  return ok;
}

}  // namespace gridshift::cli
