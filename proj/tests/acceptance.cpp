// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "gridshift/gridshift.hpp"

using namespace gridshift;

namespace {

const double kHalfPi = std::numbers::pi / 2;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

int failures = 0;

void report(const std::string& id, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS " : "FAIL ") << id << ": " << o.detail << std::endl;
}

struct NineBus {
  PowerNetwork net = fixtures::kundur9();
  EquilibriumPoint origin = solve_equilibrium(net, Eigen::VectorXd::Zero(9));
  SystemState x0{fixtures::fault_angles(), fixtures::fault_velocities()};
};

const NineBus& nine() {
  static const NineBus n;
  return n;
}

LyapunovFunction synthesize(const BracketForm& bf) {
  const auto sys = assemble_lmi(bf);
  const auto r = solve_sdp_feasibility(sys.problem);
  if (!r.found) throw std::runtime_error("family empty: " + r.message);
  LyapunovFunction V{bf, {}, {}, {}, std::nullopt};
  sys.unpack(r.z, V.Q, V.K, V.H);
  return V;
}

// ---- 1 ----------------------------------------------------------------------

Outcome lp_objective() {
  const auto& s = nine();
  const auto t0 = std::chrono::steady_clock::now();
  const auto plan = optimize_injections(s.net, {1, 2, 3, 4, 5, 6});
  const double secs = seconds_since(t0);
  const bool feasible = std::abs(plan.injections.sum()) < 1e-9 && plan.target.residual <= 1e-8;
  const bool ok = std::abs(plan.objective - 0.0350) <= 5e-3 && secs < 1.0 && feasible;
  return {ok, "objective " + num(plan.objective) + " (target 0.0350 +/- 5e-3), feasible " +
                  (feasible ? "yes" : "no") + ", " + num(secs, 3) + " s"};
}

// ---- 2 ----------------------------------------------------------------------

Outcome approx_stage_one() {
  const auto x = approx_equilibrium(nine().net, fixtures::stage1_injections());
  const double err = (fixtures::differences(x) - fixtures::differences(fixtures::stage1_angles())).cwiseAbs().maxCoeff();
  return {err <= 5e-3, "max difference error " + sci(err) + " (limit 5e-3)"};
}

// ---- 3 ----------------------------------------------------------------------

Outcome first_distance() {
  const auto stage1 = nine().net.with_injections(fixtures::balanced(fixtures::stage1_injections()), "stage1");
  const double d1 = residual_distance(stage1, fixtures::origin_angles());
  return {std::abs(d1 - 70.6424) <= 5e-2, "d1 " + num(d1) + " (target 70.6424 +/- 5e-2)"};
}

// ---- 4 ----------------------------------------------------------------------

Outcome second_stage_qcqp() {
  const auto& s = nine();
  const auto t0 = std::chrono::steady_clock::now();
  const auto qp = stage_qcqp(s.net, {0, 1, 2}, fixtures::stage1_angles(), fixtures::origin_angles(), 70.6424 - 36.3212);
  const double secs = seconds_since(t0);
  const double want[3] = {33.4174, 22.1662, 24.3839};
  double worst = 0;
  std::string b;
  for (int i = 0; i < 3; ++i) {
    worst = std::max(worst, std::abs(qp.line_values[i].second - want[i]));
    b += (i ? " " : "") + num(qp.line_values[i].second);
  }
  const bool ok = worst <= 1e-2 && std::abs(qp.constraint - 34.3212) <= 1e-3 &&
                  std::abs(qp.objective - 60.9209) <= 0.5 && secs < 5.0;
  return {ok, "B (" + b + "), d2 to origin " + num(qp.constraint) + ", d2 to stage 1 " + num(qp.objective) + ", " +
                  num(secs, 3) + " s"};
}

// ---- 5 ----------------------------------------------------------------------

Outcome negative_certification() {
  const auto& s = nine();
  const auto r = certify_hop(s.net, s.origin, s.x0);
  return {!r.certified(), std::string("certified into origin region: ") + (r.certified() ? "yes" : "no") +
                              (r.message.empty() ? "" : " (" + r.message + ")")};
}

Outcome positive_certification() {
  const auto& s = nine();
  const auto stage1 = s.net.with_injections(fixtures::balanced(fixtures::stage1_injections()), "stage1");
  const auto eq1 = solve_equilibrium(stage1, approx_equilibrium(stage1, stage1.injections()));
  const auto r = certify_hop(stage1, eq1, s.x0);
  return {r.certified(), std::string("certified into stage-1 region: ") + (r.certified() ? "yes" : "no") +
                             (r.message.empty() ? "" : " (" + r.message + ")")};
}

// ---- 6 ----------------------------------------------------------------------

Outcome closed_loop() {
  const auto& s = nine();
  const auto plan = load_plan(fixtures::source_path("scenarios/kundur9_reference_plan.json"), s.net);
  SimConfig cfg{1e-3, 120.0, 0.05, 1.0, 100, {}};
  const auto t0 = std::chrono::steady_clock::now();
  const auto v = verify_plan(s.net, s.x0, plan, cfg);
  const auto free_run = simulate(s.net, s.x0, cfg);
  const double secs = seconds_since(t0);
  double spread = 0;
  for (const auto& st : free_run.states) spread = std::max(spread, st.angles.maxCoeff() - st.angles.minCoeff());
  const bool ok = plan.stages.size() == 4 && v.final_distance < 0.05 && spread > 6.0 && secs < 60.0;
  return {ok, std::to_string(plan.stages.size()) + " stages, final distance " + sci(v.final_distance) +
                  ", uncontrolled max angle difference " + num(spread, 3) + " rad, " + num(secs, 2) + " s"};
}

// ---- 7 ----------------------------------------------------------------------

Outcome moore_penrose() {
  std::mt19937_64 rng(11);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const auto net = fixtures::random_network(rng, 3 + t % 10);
    const Eigen::MatrixXd L = weighted_laplacian(net), Lp = pseudoinverse(L);
    worst = std::max({worst, (L * Lp * L - L).cwiseAbs().maxCoeff(), (Lp * L * Lp - Lp).cwiseAbs().maxCoeff(),
                      (L * Lp - (L * Lp).transpose()).cwiseAbs().maxCoeff()});
  }
  return {worst <= 1e-9, "worst identity residual " + sci(worst) + " over 100 graphs"};
}

Outcome newton_residual() {
  std::mt19937_64 rng(21);
  double worst = 0;
  for (int t = 0; t < 30; ++t) {
    const auto net = fixtures::random_network(rng, 4 + t % 8, 0.5);
    const auto eq = solve_equilibrium(net, approx_equilibrium(net, net.injections()));
    worst = std::max(worst, power_mismatch(net, eq.angles).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-8, "worst mismatch " + sci(worst) + " over 30 networks"};
}

Outcome rk4_ratio() {
  const auto& s = nine();
  SystemState x0 = SystemState::at_rest(s.origin.angles, 3);
  x0.angles(4) += 0.3;
  x0.velocities(0) = 0.2;
  auto end_state = [&](double dt) {
    SimConfig cfg;
    cfg.dt = dt;
    cfg.horizon = 1.0;
    cfg.record_every = 1 << 20;
    const auto st = simulate(s.net, x0, cfg).states.back();
    Eigen::VectorXd v(12);
    v << st.angles, st.velocities;
    return v;
  };
  const double dt = 2.5e-4;
  const Eigen::VectorXd ref = end_state(dt / 8);
  const double ratio = (end_state(dt) - ref).norm() / (end_state(dt / 2) - ref).norm();
  return {ratio >= 12 && ratio <= 20, "error ratio " + num(ratio, 2) + " (window [12, 20])"};
}

Outcome energy_drift() {
  std::vector<Bus> buses;
  for (int k = 0; k < 4; ++k) buses.push_back({k + 1, BusKind::generator, 1.0, 0.1 + 0.05 * k, 1e-12, 0.0});
  buses[0].injection = 0.3;
  buses[1].injection = -0.3;
  std::vector<Line> lines;
  for (int k = 0; k < 4; ++k) lines.push_back({k + 1, (k + 1) % 4 + 1, 2.0 + k, false, std::nullopt});
  const PowerNetwork net(buses, lines);
  const auto eq = solve_equilibrium(net, Eigen::VectorXd::Zero(4));
  SystemState x0 = SystemState::at_rest(eq.angles, 4);
  x0.velocities << 0.4, -0.2, 0.1, -0.3;
  SimConfig cfg;
  cfg.horizon = 10;
  cfg.record_every = 100;
  const auto traj = simulate(net, x0, cfg);
  const double e0 = energy_function(net, traj.states.front());
  double drift = 0;
  for (const auto& st : traj.states) drift = std::max(drift, std::abs(energy_function(net, st) - e0));
  drift /= std::abs(e0);
  return {drift <= 1e-6, "relative drift " + sci(drift) + " over 10 s"};
}

Outcome lyapunov_and_hessian() {
  const auto& s = nine();
  const auto V = synthesize(build_bracket(s.net, s.origin));
  const auto spec = PolytopeSpec::uniform(kHalfPi);
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> U(-0.3, 0.3);
  double worst = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < 10; ++t) {
    SystemState x0 = SystemState::at_rest(s.origin.angles, 3);
    for (int i = 0; i < 9; ++i) x0.angles(i) += U(rng);
    for (int i = 0; i < 3; ++i) x0.velocities(i) = U(rng);
    if (!in_polytope(s.net, x0.angles, spec)) continue;
    SimConfig cfg;
    cfg.horizon = 5;
    const auto traj = simulate(s.net, x0, cfg);
    double prev = evaluate(V, traj.states.front());
    for (std::size_t i = 1; i < traj.states.size(); ++i) {
      if (!in_polytope(s.net, traj.states[i].angles, spec)) break;
      const double v = evaluate(V, traj.states[i]);
      worst = std::max(worst, v - prev);
      prev = v;
    }
  }
  const auto audit = hessian_psd_on(V, spec, 1000);
  return {worst <= 1e-7 && audit.passed && audit.samples == 1000,
          "worst V increase " + sci(worst) + ", Hessian min eigenvalue " + sci(audit.min_eigenvalue) + " at " +
              std::to_string(audit.samples) + " samples"};
}

Outcome optimizer_feasibility() {
  std::mt19937_64 rng(31);
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    const auto net = fixtures::random_network(rng, 6, 0.5);
    const auto plan = optimize_injections(net, {1, 2, 3});
    const Eigen::MatrixXd Lp = pseudoinverse(weighted_laplacian(net));
    worst = std::max({worst, std::abs(plan.injections.sum()), edge_infnorm(net, Lp, plan.injections) - plan.objective});
  }
  const auto& s = nine();
  const double rhs = 70.6424 - 36.3212;
  const auto qp = stage_qcqp(s.net, {0, 1, 2}, fixtures::stage1_angles(), fixtures::origin_angles(), rhs);
  for (const auto& [e, b] : qp.line_values) {
    const auto& bounds = s.net.lines()[e].bounds;
    worst = std::max({worst, bounds->min - b, b - bounds->max});
  }
  const auto net = s.net.with_susceptances(qp.line_values, "stage2");
  const double resub = residual_distance(net, fixtures::origin_angles());
  worst = std::max({worst, resub - rhs, std::abs(resub - qp.constraint)});
  return {worst <= 1e-6, "worst re-substitution violation " + sci(worst)};
}

Outcome two_bus_soundness() {
  const auto net = fixtures::two_bus(0.5, 1.0);
  const auto bf = build_bracket(net, solve_equilibrium(net, Eigen::VectorXd::Zero(2)));
  const auto V = synthesize(bf);
  const auto spec = PolytopeSpec::uniform(kHalfPi);
  const double vm = vmin(V, spec);
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> A(-kHalfPi, kHalfPi), W(-2.0, 2.0);
  int certified = 0, converged = 0, tries = 0;
  while (certified < 500 && tries < 200000) {
    ++tries;
    const SystemState x0{fixtures::vec({A(rng), 0.0}), fixtures::vec({W(rng)})};
    if (!certify(V, spec, x0, vm).certified) continue;
    ++certified;
    SimConfig cfg;
    cfg.horizon = 50;
    cfg.record_every = 1 << 20;
    if (distance_to(simulate(net, x0, cfg).states.back(), bf.equilibrium) < 1e-3) ++converged;
  }
  return {certified == 500 && converged == 500,
          std::to_string(converged) + "/" + std::to_string(certified) + " certified states convergent"};
}

// ---- 8 ----------------------------------------------------------------------

// Writes a synthetic 118-bus case: ring plus random chords, 54 generators.
std::string write_synthetic_118(const std::filesystem::path& dir) {
  std::mt19937_64 rng(118);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const int n = 118;
  nlohmann::json doc;
  doc["buses"] = nlohmann::json::array();
  std::vector<double> p(n);
  double sum = 0;
  for (int k = 0; k < n; ++k) {
    p[k] = 0.4 * (2 * U(rng) - 1);
    sum += p[k];
  }
  for (int k = 0; k < n; ++k) {
    const bool gen = k % 118 < 54;
    nlohmann::json b{{"id", k + 1}, {"kind", gen ? "gen" : "load"}, {"V", 0.95 + 0.1 * U(rng)},
                     {"d", 0.02 + 0.1 * U(rng)}, {"P", p[k] - sum / n}};
    b["m"] = gen ? nlohmann::json(0.05 + 0.2 * U(rng)) : nlohmann::json(nullptr);
    doc["buses"].push_back(b);
  }
  doc["lines"] = nlohmann::json::array();
  auto add = [&](int a, int b, bool ctrl) {
    const double B = 5.0 + 15.0 * U(rng);
    nlohmann::json l{{"from", a}, {"to", b}, {"B", B}, {"controllable", ctrl}};
    l["B_min"] = ctrl ? nlohmann::json(0.0) : nlohmann::json(nullptr);
    l["B_max"] = ctrl ? nlohmann::json(100.0) : nlohmann::json(nullptr);
    doc["lines"].push_back(l);
  };
  for (int k = 1; k <= n; ++k) add(k, k % n + 1, k <= 3);
  for (int k = 1; k <= 60; ++k) add(k, (k + 37) % n + 1, false);
  doc["slack_bus"] = nullptr;
  const auto path = dir / "synthetic118.json";
  std::ofstream(path) << doc.dump(1);
  return path.string();
}

Outcome smoke_118() {
  const auto dir = std::filesystem::temp_directory_path() / "gridshift_acceptance";
  std::filesystem::create_directories(dir);
  const auto net = load_case_file(write_synthetic_118(dir));
  std::vector<int> ctrl;
  for (int k = 1; k <= 54; ++k) ctrl.push_back(k);
  const auto t0 = std::chrono::steady_clock::now();
  const auto plan = optimize_injections(net, ctrl);
  const auto origin = solve_equilibrium(net, approx_equilibrium(net, net.injections()));
  const auto stage1 = net.with_injections(plan.injections, "stage1");
  const double d1 = residual_distance(stage1, origin.angles);
  const auto qp = stage_qcqp(net, {0, 1, 2}, plan.target.angles, origin.angles, d1 / 2);
  const double secs = seconds_since(t0);
  const Eigen::MatrixXd Lp = pseudoinverse(weighted_laplacian(net));
  const double before = edge_infnorm(net, Lp, net.injections());
  return {secs < 10.0 && qp.constraint <= d1 / 2 + 1e-6,
          "objective " + num(before) + " -> " + num(plan.objective) + ", QCQP d2 " + num(qp.constraint) + " <= " +
              num(d1 / 2) + ", " + num(secs, 2) + " s"};
}

}  // namespace

int main() {
  report("1 LP objective", lp_objective);
  report("2 approximate stage-1 equilibrium", approx_stage_one);
  report("3 first residual distance", first_distance);
  report("4 second-stage QCQP", second_stage_qcqp);
  report("5a fault state not certified at origin", negative_certification);
  report("5b fault state certified at stage 1", positive_certification);
  report("6 closed-loop plan", closed_loop);
  report("7a Moore-Penrose identities", moore_penrose);
  report("7b Newton residual", newton_residual);
  report("7c RK4 error ratio", rk4_ratio);
  report("7d energy conservation", energy_drift);
  report("7e Lyapunov non-increase and Hessian PSD", lyapunov_and_hessian);
  report("7f LP and QCQP re-substitution", optimizer_feasibility);
  report("7g two-bus certified soundness", two_bus_soundness);
  report("8 synthetic 118-bus smoke", smoke_118);
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
