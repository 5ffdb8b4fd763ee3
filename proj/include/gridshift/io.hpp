#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gridshift/dynamics.hpp"
#include "gridshift/error.hpp"
#include "gridshift/netmodel.hpp"
#include "gridshift/optim/config.hpp"
#include "gridshift/planner.hpp"

namespace gridshift {

using ojson = nlohmann::ordered_json;

inline constexpr const char* kPlanFormat = "gridshift-plan/1";

struct Scenario {
  std::string id;
  std::string case_path;  // resolved against the scenario file's directory
  PowerNetwork network;
  SystemState fault_cleared;
  std::vector<int> controllable_buses;
  std::vector<std::pair<int, int>> controllable_lines;
  SimConfig sim{1e-3, 120.0, 0.05, 1.0, 10, {}};
  std::optional<double> decrement;
  bool simulation_fallback = false;
  bool force_sequence = false;
  Tolerances tol;
};

namespace detail {

inline std::string read_file(const std::filesystem::path& p, const std::string& what) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + what + " " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json parse_json(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(what + " parse error: " + e.what());
  }
}

inline Eigen::VectorXd number_array(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + " must be an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ValidationError(where + " must be an array of numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline ojson to_array(const Eigen::VectorXd& v) {
  ojson a = ojson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline bool get_bool(const nlohmann::json& obj, const char* key, bool fallback, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return fallback;
  if (!it->is_boolean()) throw ValidationError(where + ": '" + key + "' must be boolean");
  return it->get<bool>();
}

}  // namespace detail

inline Scenario parse_scenario(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  detail::reject_unknown(doc, {"id", "case", "fault_cleared_state", "controllable_buses", "controllable_lines", "sim", "planner"},
                         "scenario");
  Scenario s;
  if (!doc.contains("id") || !doc["id"].is_string()) throw ValidationError("scenario: 'id' must be a string");
  s.id = doc["id"].get<std::string>();
  if (!doc.contains("case") || !doc["case"].is_string()) throw ValidationError("scenario: 'case' must be a path string");
  std::filesystem::path cp = doc["case"].get<std::string>();
  if (cp.is_relative()) cp = base_dir / cp;
  s.case_path = cp.lexically_normal().string();
  s.network = load_case(detail::read_file(cp, "case file"));

  if (!doc.contains("fault_cleared_state")) throw ValidationError("scenario: 'fault_cleared_state' is required");
  const auto& st = doc["fault_cleared_state"];
  detail::reject_unknown(st, {"angles", "velocities"}, "fault_cleared_state");
  if (!st.contains("angles") || !st.contains("velocities"))
    throw ValidationError("fault_cleared_state needs 'angles' and 'velocities'");
  s.fault_cleared = {detail::number_array(st["angles"], "fault_cleared_state.angles"),
                     detail::number_array(st["velocities"], "fault_cleared_state.velocities")};
  check_state(s.network, s.fault_cleared);
  if (!s.fault_cleared.angles.allFinite() || !s.fault_cleared.velocities.allFinite())
    throw ValidationError("fault_cleared_state holds non-finite values");

  if (auto it = doc.find("controllable_buses"); it != doc.end()) {
    if (!it->is_array()) throw ValidationError("scenario: 'controllable_buses' must be an array of bus ids");
    for (const auto& b : *it) {
      if (!b.is_number_integer()) throw ValidationError("scenario: 'controllable_buses' must be an array of bus ids");
      const int id = b.get<int>();
      if (!s.network.has_bus(id)) throw ValidationError("controllable bus " + std::to_string(id) + " not in case");
      s.controllable_buses.push_back(id);
    }
  }
  if (auto it = doc.find("controllable_lines"); it != doc.end()) {
    if (!it->is_array()) throw ValidationError("scenario: 'controllable_lines' must be an array of [from, to]");
    for (const auto& l : *it) {
      if (!l.is_array() || l.size() != 2 || !l[0].is_number_integer() || !l[1].is_number_integer())
        throw ValidationError("scenario: 'controllable_lines' must be an array of [from, to]");
      const int a = l[0].get<int>(), b = l[1].get<int>();
      const auto e = s.network.find_line(a, b);
      if (!e) throw ValidationError("controllable line " + std::to_string(a) + "-" + std::to_string(b) + " not in case");
      if (!s.network.lines()[*e].controllable)
        throw ValidationError("line " + std::to_string(a) + "-" + std::to_string(b) + " is not controllable in the case");
      s.controllable_lines.emplace_back(a, b);
    }
  }
  if (auto it = doc.find("sim"); it != doc.end()) {
    detail::reject_unknown(*it, {"dt", "horizon", "convergence_tol", "dwell", "record_every"}, "sim");
    if (auto v = detail::get_optional_number(*it, "dt", "sim")) s.sim.dt = *v;
    if (auto v = detail::get_optional_number(*it, "horizon", "sim")) s.sim.horizon = *v;
    if (auto v = detail::get_optional_number(*it, "convergence_tol", "sim")) s.sim.convergence_tol = *v;
    if (auto v = detail::get_optional_number(*it, "dwell", "sim")) s.sim.dwell = *v;
    if (it->contains("record_every")) s.sim.record_every = detail::get_int(*it, "record_every", "sim");
    if (!(s.sim.dt > 0)) throw ValidationError("sim: dt must be positive");
    if (!(s.sim.horizon >= 0)) throw ValidationError("sim: horizon must be nonnegative");
    if (!(s.sim.convergence_tol > 0) || !(s.sim.dwell >= 0)) throw ValidationError("sim: bad convergence settings");
    if (s.sim.record_every < 1) throw ValidationError("sim: record_every must be >= 1");
  }
  s.tol.convergence_tol = s.sim.convergence_tol;
  s.tol.dwell = s.sim.dwell;
  if (auto it = doc.find("planner"); it != doc.end()) {
    detail::reject_unknown(*it, {"decrement", "simulation_fallback", "force_sequence", "tolerances"}, "planner");
    s.decrement = detail::get_optional_number(*it, "decrement", "planner");
    if (s.decrement && !(*s.decrement > 0)) throw ValidationError("planner: decrement must be positive");
    s.simulation_fallback = detail::get_bool(*it, "simulation_fallback", false, "planner");
    s.force_sequence = detail::get_bool(*it, "force_sequence", false, "planner");
    if (auto t = it->find("tolerances"); t != it->end() && !t->is_null()) s.tol = apply_overrides(s.tol, *t);
  }
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  const auto doc = detail::parse_json(detail::read_file(path, "scenario"), "scenario");
  return parse_scenario(doc, std::filesystem::path(path).parent_path());
}

inline PlannerOptions planner_options(const Scenario& s) {
  PlannerOptions o;
  o.tol = s.tol;
  o.allow_simulation_fallback = s.simulation_fallback;
  o.fallback_sim = s.sim;
  o.fallback_sim.hooks.clear();
  return o;
}

inline RemedialRequest remedial_request(const Scenario& s) {
  RemedialRequest r;
  r.controllable_buses = s.controllable_buses;
  r.controllable_lines = s.controllable_lines;
  r.decrement = s.decrement;
  r.force_sequence = s.force_sequence;
  return r;
}

// ---- certificates -----------------------------------------------------------

inline ojson certificate_json(const CertificateSummary& c) {
  ojson j;
  j["verdict"] = c.certified ? "certified" : "not certified";
  j["value"] = c.value;
  j["vmin"] = c.vmin;
  j["polytope"] = c.polytope;
  j["iterations"] = c.iterations;
  j["epsilon_final"] = c.epsilon_final;
  j["reason"] = c.reason;
  return j;
}

inline CertificateSummary certificate_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"verdict", "value", "vmin", "polytope", "iterations", "epsilon_final", "reason"}, "certificate");
  CertificateSummary c;
  if (!j.contains("verdict") || !j["verdict"].is_string()) throw ValidationError("certificate: 'verdict' must be a string");
  c.certified = j["verdict"].get<std::string>() == "certified";
  c.value = detail::get_number(j, "value", "certificate");
  c.vmin = detail::get_number(j, "vmin", "certificate");
  if (j.contains("polytope") && j["polytope"].is_string()) c.polytope = j["polytope"].get<std::string>();
  if (j.contains("iterations")) c.iterations = detail::get_int(j, "iterations", "certificate");
  if (auto v = detail::get_optional_number(j, "epsilon_final", "certificate")) c.epsilon_final = *v;
  if (j.contains("reason") && j["reason"].is_string()) c.reason = j["reason"].get<std::string>();
  return c;
}

// Certificate of a hop as emitted by `certify`; covers the case where the
// adaptation found no family member at all.
inline ojson adapt_json(const AdaptResult& r) {
  ojson j;
  if (r.certificate) {
    j = certificate_json(summarize(*r.certificate));
  } else {
    j["verdict"] = "not certified";
    j["value"] = nullptr;
    j["vmin"] = nullptr;
    j["polytope"] = nullptr;
    j["iterations"] = r.iterations;
    j["epsilon_final"] = r.epsilon_final;
    j["reason"] = r.message;
  }
  if (r.certified()) j["verdict"] = "certified";
  if (!r.message.empty()) j["message"] = r.message;
  return j;
}

// ---- plans ------------------------------------------------------------------

inline ojson plan_json(const RemedialPlan& plan, const std::string& scenario_id) {
  auto num_or_null = [](double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); };
  ojson j;
  j["format"] = kPlanFormat;
  j["scenario"] = scenario_id;
  j["origin"] = detail::to_array(plan.origin);
  j["injection_objective"] = num_or_null(plan.injection_objective);
  j["d1"] = num_or_null(plan.d1);
  j["decrement"] = num_or_null(plan.decrement);
  ojson stages = ojson::array();
  for (const auto& s : plan.stages) {
    ojson js;
    js["label"] = s.label;
    ojson tr;
    if (s.trigger.kind == Trigger::Kind::at_time_zero) {
      tr["kind"] = "at_time_zero";
    } else {
      tr["kind"] = "on_convergence";
      tr["target"] = s.trigger.target;
      tr["angles"] = detail::to_array(s.trigger.target_angles);
      tr["tol"] = s.trigger.tol;
      tr["dwell"] = s.trigger.dwell;
    }
    js["trigger"] = tr;
    ojson acts = ojson::array();
    for (const auto& a : s.actions) {
      ojson ja;
      ja["kind"] = to_string(a.kind);
      ojson buses = ojson::array(), lines = ojson::array();
      for (const auto& [id, p] : a.buses) buses.push_back({{"id", id}, {"P", p}});
      for (const auto& [ends, b] : a.lines) lines.push_back({{"from", ends.first}, {"to", ends.second}, {"B", b}});
      ja["buses"] = buses;
      ja["lines"] = lines;
      acts.push_back(ja);
    }
    js["actions"] = acts;
    js["heads_to"] = s.heads_to;
    js["equilibrium"] = detail::to_array(s.equilibrium);
    js["verification"] = s.verification;
    js["certificate"] = s.certificate ? certificate_json(*s.certificate) : ojson(nullptr);
    stages.push_back(js);
  }
  j["stages"] = stages;
  return j;
}

inline ActionKind action_kind(const std::string& s) {
  for (auto k : {ActionKind::apply_injections, ActionKind::restore_injections, ActionKind::apply_susceptances,
                 ActionKind::restore_susceptances, ActionKind::settle})
    if (s == to_string(k)) return k;
  throw ValidationError("plan: unknown action kind '" + s + "'");
}

// Parses and validates a plan against the network it will act on.
inline RemedialPlan parse_plan(const nlohmann::json& j, const PowerNetwork& net) {
  detail::reject_unknown(j, {"format", "scenario", "origin", "injection_objective", "d1", "decrement", "stages"}, "plan");
  if (!j.contains("format") || j["format"] != kPlanFormat)
    throw ValidationError(std::string("plan: 'format' must be \"") + kPlanFormat + "\"");
  RemedialPlan plan;
  const auto n = static_cast<Eigen::Index>(net.bus_count());
  auto angles = [&](const nlohmann::json& a, const std::string& where) {
    auto v = detail::number_array(a, where);
    if (v.size() != n) throw ValidationError(where + " has wrong dimension");
    return v;
  };
  if (j.contains("origin") && !j["origin"].is_null()) plan.origin = angles(j["origin"], "plan.origin");
  if (auto v = detail::get_optional_number(j, "injection_objective", "plan")) plan.injection_objective = *v;
  if (auto v = detail::get_optional_number(j, "d1", "plan")) plan.d1 = *v;
  if (auto v = detail::get_optional_number(j, "decrement", "plan")) plan.decrement = *v;
  if (!j.contains("stages") || !j["stages"].is_array()) throw ValidationError("plan: 'stages' must be an array");
  for (const auto& js : j["stages"]) {
    detail::reject_unknown(js, {"label", "trigger", "actions", "heads_to", "equilibrium", "verification", "certificate"},
                           "plan stage");
    Stage s;
    if (!js.contains("label") || !js["label"].is_string()) throw ValidationError("plan stage: 'label' must be a string");
    s.label = js["label"].get<std::string>();
    const std::string where = "plan stage '" + s.label + "'";
    if (!js.contains("trigger")) throw ValidationError(where + ": missing trigger");
    const auto& tr = js["trigger"];
    detail::reject_unknown(tr, {"kind", "target", "angles", "tol", "dwell"}, where + " trigger");
    const std::string kind = tr.value("kind", "");
    if (kind == "at_time_zero") {
      s.trigger.kind = Trigger::Kind::at_time_zero;
    } else if (kind == "on_convergence") {
      s.trigger.kind = Trigger::Kind::on_convergence;
      s.trigger.target = tr.value("target", "");
      if (!tr.contains("angles")) throw ValidationError(where + ": on_convergence trigger needs 'angles'");
      s.trigger.target_angles = angles(tr["angles"], where + " trigger.angles");
      s.trigger.tol = detail::get_number(tr, "tol", where + " trigger");
      s.trigger.dwell = detail::get_number(tr, "dwell", where + " trigger");
      if (!(s.trigger.tol > 0) || !(s.trigger.dwell >= 0)) throw ValidationError(where + ": bad trigger thresholds");
    } else {
      throw ValidationError(where + ": trigger kind must be at_time_zero or on_convergence");
    }
    if (js.contains("actions")) {
      if (!js["actions"].is_array()) throw ValidationError(where + ": 'actions' must be an array");
      for (const auto& ja : js["actions"]) {
        detail::reject_unknown(ja, {"kind", "buses", "lines"}, where + " action");
        Action a;
        a.kind = action_kind(ja.value("kind", ""));
        if (ja.contains("buses"))
          for (const auto& b : ja["buses"]) {
            detail::reject_unknown(b, {"id", "P"}, where + " bus entry");
            const int id = detail::get_int(b, "id", where + " bus entry");
            if (!net.has_bus(id)) throw ValidationError(where + ": unknown bus " + std::to_string(id));
            a.buses.emplace_back(id, detail::get_number(b, "P", where + " bus entry"));
          }
        if (ja.contains("lines"))
          for (const auto& l : ja["lines"]) {
            detail::reject_unknown(l, {"from", "to", "B"}, where + " line entry");
            const int f = detail::get_int(l, "from", where + " line entry"), t = detail::get_int(l, "to", where + " line entry");
            if (!net.find_line(f, t))
              throw ValidationError(where + ": unknown line " + std::to_string(f) + "-" + std::to_string(t));
            a.lines.push_back({{f, t}, detail::get_number(l, "B", where + " line entry")});
          }
        s.actions.push_back(std::move(a));
      }
    }
    if (js.contains("heads_to") && js["heads_to"].is_string()) s.heads_to = js["heads_to"].get<std::string>();
    if (js.contains("equilibrium") && !js["equilibrium"].is_null())
      s.equilibrium = angles(js["equilibrium"], where + " equilibrium");
    if (js.contains("verification") && js["verification"].is_string()) s.verification = js["verification"].get<std::string>();
    if (js.contains("certificate") && !js["certificate"].is_null()) s.certificate = certificate_from_json(js["certificate"]);
    plan.stages.push_back(std::move(s));
  }
  return plan;
}

inline RemedialPlan load_plan(const std::string& path, const PowerNetwork& net) {
  return parse_plan(detail::parse_json(detail::read_file(path, "plan"), "plan"), net);
}

// ---- verification reports ---------------------------------------------------

inline double max_line_angle(const PowerNetwork& net, const Trajectory& tr) {
  double worst = 0;
  for (const auto& s : tr.states) worst = std::max(worst, edge_spread(net, s.angles));
  return worst;
}

// Widest angle difference between any two buses along the run.
inline double max_angle_difference(const Trajectory& tr) {
  double worst = 0;
  for (const auto& s : tr.states)
    if (s.angles.size()) worst = std::max(worst, s.angles.maxCoeff() - s.angles.minCoeff());
  return worst;
}

inline ojson verification_json(const PlanVerification& v, const PowerNetwork& net, const std::string& scenario_id) {
  ojson j;
  j["scenario"] = scenario_id;
  ojson st = ojson::array();
  for (const auto& s : v.stages)
    st.push_back({{"label", s.label},
                  {"fired_at", s.fired_at ? ojson(*s.fired_at) : ojson(nullptr)},
                  {"peak_velocity", s.peak_velocity}});
  j["stages"] = st;
  j["final_distance"] = v.final_distance;
  j["max_line_angle"] = max_line_angle(net, v.trajectory);
  j["max_angle_difference"] = max_angle_difference(v.trajectory);
  j["converged"] = v.converged;
  j["diverged"] = v.diverged;
  return j;
}

}  // namespace gridshift
