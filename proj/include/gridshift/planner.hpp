#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gridshift/dynamics.hpp"
#include "gridshift/error.hpp"
#include "gridshift/lyapunov.hpp"
#include "gridshift/netmodel.hpp"
#include "gridshift/optim/config.hpp"
#include "gridshift/optim/lp.hpp"
#include "gridshift/optim/qcqp.hpp"
#include "gridshift/powerflow.hpp"

namespace gridshift {

// Box used to certify x0 around an anchor: Pi/2 when x0 lies inside it,
// otherwise the fault-dependent box at the bus with most violated lines.
inline PolytopeSpec choose_polytope(const PowerNetwork& net, const EquilibriumPoint& anchor,
                                    const SystemState& x0) {
  const auto half = PolytopeSpec::uniform(std::numbers::pi / 2);
  const auto check = in_polytope(net, x0.angles, half);
  if (check.inside) return half;
  std::vector<int> count(net.bus_count(), 0);
  for (auto e : check.violated) {
    ++count[net.from_index(e)];
    ++count[net.to_index(e)];
  }
  const auto node = static_cast<std::size_t>(std::max_element(count.begin(), count.end()) - count.begin());
  return PolytopeSpec::fault_dependent(node, anchor.angles);
}

struct PlannerOptions {
  Tolerances tol;
  AdaptOptions adapt;
  bool allow_simulation_fallback = false;  // label uncertified hops "simulation" when they converge
  SimConfig fallback_sim{1e-3, 120.0, 0.05, 1.0, 100, {}};
};

// Certifies that `state` lies in the region of attraction of `anchor` under `net`.
inline AdaptResult certify_hop(const PowerNetwork& net, const EquilibriumPoint& anchor, const SystemState& state,
                               const PlannerOptions& opt = {}) {
  const auto bf = build_bracket(net, anchor);
  AdaptOptions a = opt.adapt;
  a.max_iter = opt.tol.adapt_max_iter;
  a.eps_psd = opt.tol.eps_psd;
  return adapt(bf, choose_polytope(net, anchor, state), state, a);
}

inline NewtonOptions newton_options(const Tolerances& tol) { return {tol.newton_max_iter, 10, tol.newton_residual}; }

struct InjectionPlan {
  Eigen::VectorXd injections;
  std::vector<int> controllable;  // bus ids
  double objective = 0.0;
  EquilibriumPoint target;
};

struct InjectionDesign {
  InjectionPlan plan;
  AdaptResult certification;
  bool accepted() const { return certification.certified(); }
};

// Minimizes the widest linearized line angle |(L^+ p)_k - (L^+ p)_j| over
// the controllable injections, keeping the others fixed and the total zero.
inline InjectionPlan optimize_injections(const PowerNetwork& net, const std::vector<int>& controllable,
                                         const Tolerances& tol = {},
                                         const std::vector<std::pair<double, double>>& bounds = {}) {
  if (controllable.empty()) throw ValidationError("design_injection: no controllable buses");
  if (!bounds.empty() && bounds.size() != controllable.size())
    throw ValidationError("design_injection: one bound pair per controllable bus");
  const auto n = static_cast<Eigen::Index>(net.bus_count());
  std::vector<int> slot(net.bus_count(), -1);
  for (std::size_t c = 0; c < controllable.size(); ++c) {
    if (!net.has_bus(controllable[c])) throw ValidationError("controllable bus " + std::to_string(controllable[c]) + " not in case");
    const auto k = net.index_of(controllable[c]);
    if (slot[k] >= 0) throw ValidationError("controllable bus listed twice");
    slot[k] = static_cast<int>(c);
  }
  const Eigen::MatrixXd Lp = pseudoinverse(weighted_laplacian(net));
  const Eigen::VectorXd P = net.injections();

  LpProblem lp;
  for (std::size_t c = 0; c < controllable.size(); ++c) {
    const auto [lo, hi] = bounds.empty() ? std::pair{-std::numeric_limits<double>::infinity(),
                                                      std::numeric_limits<double>::infinity()}
                                         : bounds[c];
    lp.add_variable("P" + std::to_string(controllable[c]), lo, hi);
  }
  const auto t = lp.add_variable("t", 0.0);
  lp.objective[t] = 1.0;
  double fixed_sum = 0;
  for (Eigen::Index k = 0; k < n; ++k)
    if (slot[k] < 0) fixed_sum += P(k);
  {
    std::vector<std::pair<std::size_t, double>> terms;
    for (std::size_t c = 0; c < controllable.size(); ++c) terms.emplace_back(c, 1.0);
    lp.add_constraint(terms, Relation::equal, -fixed_sum);
  }
  for (std::size_t e = 0; e < net.line_count(); ++e) {
    const Eigen::RowVectorXd r = Lp.row(net.from_index(e)) - Lp.row(net.to_index(e));
    double fixed = 0;
    std::vector<std::pair<std::size_t, double>> terms;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (slot[k] < 0)
        fixed += r(k) * P(k);
      else if (r(k) != 0)
        terms.emplace_back(static_cast<std::size_t>(slot[k]), r(k));
    }
    auto up = terms;
    up.emplace_back(t, -1.0);
    lp.add_constraint(up, Relation::less_equal, -fixed);
    auto dn = terms;
    for (auto& [i, c] : dn) c = -c;
    dn.emplace_back(t, -1.0);
    lp.add_constraint(dn, Relation::less_equal, fixed);
  }
  const auto sol = solve_lp(lp, tol);
  InjectionPlan plan;
  plan.controllable = controllable;
  plan.injections = P;
  for (Eigen::Index k = 0; k < n; ++k)
    if (slot[k] >= 0) plan.injections(k) = sol.x(slot[k]);
  // remove the solver's residual imbalance on the controllable buses
  const double imbalance = plan.injections.sum();
  for (Eigen::Index k = 0; k < n; ++k)
    if (slot[k] >= 0) plan.injections(k) -= imbalance / static_cast<double>(controllable.size());
  plan.objective = edge_infnorm(net, Lp, plan.injections);
  const auto stage = net.with_injections(plan.injections, "stage1");
  plan.target = solve_equilibrium(stage, reference_shifted(Lp * plan.injections), newton_options(tol));
  return plan;
}

inline InjectionDesign design_injection(const PowerNetwork& net, const std::vector<int>& controllable,
                                        const SystemState& x0, const PlannerOptions& opt = {}) {
  InjectionDesign out;
  out.plan = optimize_injections(net, controllable, opt.tol);
  const auto stage = net.with_injections(out.plan.injections, "stage1");
  out.certification = certify_hop(stage, out.plan.target, x0, opt);
  return out;
}

// Squared power-flow mismatch of `angles` under the stage network.
inline double residual_distance(const PowerNetwork& stage, const Eigen::VectorXd& angles) {
  return power_mismatch(stage, angles).squaredNorm();
}

struct SusceptancePlan {
  std::vector<std::pair<std::size_t, double>> line_values;  // line index, B
  std::size_t stage_index = 0;
  EquilibriumPoint induced;
  PowerNetwork network;
  double distance_to_previous = 0.0;  // d_i(delta*_i, delta*_{i-1})
  double distance_to_goal = 0.0;      // d_i(delta*_i, delta*_origin)
  std::optional<Certificate> hop;      // delta*_{i-1} inside SR_i
  std::string verification = "certificate";
};

struct FirstSusceptanceDesign {
  std::optional<SusceptancePlan> plan;  // empty line_values when nominal B already certifies
  AdaptResult certification;
  double margin = 0.0;
  std::string message;
};

namespace detail {

// Relative-interior point of a facet {line e at `side`} of the polytope,
// in absolute angles with bus 0 at the anchor value.
inline std::optional<Eigen::VectorXd> facet_center(const PowerNetwork& net, const Eigen::VectorXd& anchor,
                                                   const std::vector<LineInterval>& bounds, std::size_t e,
                                                   double side) {
  const auto n = static_cast<Eigen::Index>(net.bus_count());
  LpProblem lp;
  for (Eigen::Index i = 1; i < n; ++i) lp.add_variable("d" + std::to_string(i));
  const auto s = lp.add_variable("s", -std::numeric_limits<double>::infinity(), 1.0);
  lp.objective[s] = -1.0;
  auto terms = [&](std::size_t r) {
    std::vector<std::pair<std::size_t, double>> t;
    const auto k = net.from_index(r), j = net.to_index(r);
    if (k > 0) t.emplace_back(k - 1, 1.0);
    if (j > 0) t.emplace_back(j - 1, -1.0);
    return t;
  };
  auto shift = [&](std::size_t r) {
    // bus 0 sits at anchor(0)
    const auto k = net.from_index(r), j = net.to_index(r);
    return (k == 0 ? anchor(0) : 0.0) - (j == 0 ? anchor(0) : 0.0);
  };
  lp.add_constraint(terms(e), Relation::equal, side - shift(e));
  for (std::size_t r = 0; r < net.line_count(); ++r) {
    if (r == e) continue;
    auto up = terms(r);
    up.emplace_back(s, 1.0);
    lp.add_constraint(up, Relation::less_equal, bounds[r].hi - shift(r));
    auto dn = terms(r);
    dn.emplace_back(s, -1.0);
    lp.add_constraint(dn, Relation::greater_equal, bounds[r].lo - shift(r));
  }
  try {
    const auto sol = solve_lp(lp);
    if (!(sol.x(s) > 1e-9)) return std::nullopt;
    Eigen::VectorXd ang(n);
    ang(0) = anchor(0);
    ang.tail(n - 1) = sol.x.head(n - 1);
    return ang;
  } catch (const SolverError&) {
    return std::nullopt;
  }
}

}  // namespace detail

// Susceptances that place x0 below a sampled lower bound of the energy
// function on the Pi/2 boundary; the result is re-certified with adapt.
inline FirstSusceptanceDesign design_first_susceptance(const PowerNetwork& net, const std::vector<std::size_t>& lines,
                                                       const SystemState& x0, const PlannerOptions& opt = {},
                                                       int random_samples = 200, std::uint64_t seed = 7) {
  if (lines.empty()) throw ValidationError("design_first_susceptance: no controllable lines");
  for (auto e : lines) {
    if (e >= net.line_count() || !net.lines()[e].controllable)
      throw ValidationError("design_first_susceptance: line is not controllable");
  }
  FirstSusceptanceDesign out;
  const auto eq0 = solve_equilibrium(net, approx_equilibrium(net, net.injections()), newton_options(opt.tol));
  const auto nominal = certify_hop(net, eq0, x0, opt);
  if (nominal.certified()) {
    out.plan = SusceptancePlan{{}, 1, eq0, net, 0.0, 0.0, nominal.certificate, "certificate"};
    out.certification = nominal;
    out.message = "x0 already certified under nominal susceptances";
    return out;
  }

  // boundary samples at rest: facet centers plus hit-and-run points on facets
  const auto spec = PolytopeSpec::uniform(std::numbers::pi / 2);
  const auto bounds = line_bounds(net, spec);
  std::vector<Eigen::VectorXd> samples;
  std::vector<std::pair<std::size_t, double>> facets;
  for (std::size_t e = 0; e < net.line_count(); ++e)
    for (double side : {bounds[e].lo, bounds[e].hi})
      if (auto c = detail::facet_center(net, eq0.angles, bounds, e, side)) {
        samples.push_back(*c);
        facets.emplace_back(e, side);
      }
  if (samples.empty()) {
    out.message = "polytope has no usable facet";
    return out;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N01;
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(net.bus_count());
  for (int s = 0; s < random_samples; ++s) {
    const std::size_t f = static_cast<std::size_t>(s) % facets.size();
    Eigen::VectorXd x = samples[f];
    const auto fe = facets[f].first;
    for (int step = 0; step < 20; ++step) {
      Eigen::VectorXd d(n);
      for (Eigen::Index i = 0; i < n; ++i) d(i) = N01(rng);
      d(0) = 0;
      // stay on the facet: keep line fe fixed
      const auto k = static_cast<Eigen::Index>(net.from_index(fe)), j = static_cast<Eigen::Index>(net.to_index(fe));
      const double avg = 0.5 * (d(k) + d(j));
      if (k == 0) d(j) = 0;
      else if (j == 0) d(k) = 0;
      else d(k) = d(j) = avg;
      double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < net.line_count(); ++r) {
        if (r == fe) continue;
        const double cd = d(net.from_index(r)) - d(net.to_index(r));
        const double cx = x(net.from_index(r)) - x(net.to_index(r));
        if (std::abs(cd) < 1e-14) continue;
        const double a = (bounds[r].lo - cx) / cd, b = (bounds[r].hi - cx) / cd;
        lo = std::max(lo, std::min(a, b));
        hi = std::min(hi, std::max(a, b));
      }
      if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) continue;
      x += (lo + (hi - lo) * U(rng)) * d;
    }
    samples.push_back(x);
  }

  // energy difference E(x0; B) - E(xs; B) is affine in the controllable B
  LpProblem lp;
  for (auto e : lines) {
    const auto& b = net.lines()[e].bounds;
    lp.add_variable("B" + std::to_string(e), b->min, b->max);
  }
  const auto t = lp.add_variable("t", -std::numeric_limits<double>::infinity(), 1.0);
  lp.objective[t] = -1.0;
  std::vector<bool> is_ctrl(net.line_count(), false);
  for (auto e : lines) is_ctrl[e] = true;
  const double kin = energy_function(net, x0) - energy_function(net, SystemState::at_rest(x0.angles, net.generator_count()));
  for (const auto& xs : samples) {
    double c0 = kin - net.injections().dot(x0.angles - xs);
    std::vector<std::pair<std::size_t, double>> terms;
    for (std::size_t e = 0; e < net.line_count(); ++e) {
      const auto k = net.from_index(e), j = net.to_index(e);
      const double vv = net.buses()[k].voltage * net.buses()[j].voltage;
      const double coeff = -vv * (std::cos(x0.angles(k) - x0.angles(j)) - std::cos(xs(k) - xs(j)));
      if (is_ctrl[e]) {
        const auto slot = static_cast<std::size_t>(std::find(lines.begin(), lines.end(), e) - lines.begin());
        terms.emplace_back(slot, coeff);
      } else {
        c0 += coeff * net.lines()[e].susceptance;
      }
    }
    terms.emplace_back(t, 1.0);
    lp.add_constraint(terms, Relation::less_equal, -c0);
  }
  LpSolution sol;
  try {
    sol = solve_lp(lp, opt.tol);
  } catch (const SolverError& err) {
    out.message = std::string("susceptance design failed: ") + err.what();
    return out;
  }
  out.margin = sol.x(t);
  if (!(out.margin > 0)) {
    out.message = "no susceptance setting separates x0 from the sampled boundary";
    return out;
  }
  std::vector<std::pair<std::size_t, double>> values;
  for (std::size_t c = 0; c < lines.size(); ++c) values.emplace_back(lines[c], sol.x(static_cast<Eigen::Index>(c)));
  const auto stage = net.with_susceptances(values, "first-susceptance");
  EquilibriumPoint eq;
  try {
    eq = solve_equilibrium(stage, eq0.angles, newton_options(opt.tol));
  } catch (const PowerFlowError& err) {
    out.message = std::string("designed network has no equilibrium: ") + err.what();
    return out;
  }
  out.certification = certify_hop(stage, eq, x0, opt);
  if (!out.certification.certified()) {
    out.message = "designed susceptances failed certification: " + out.certification.message;
    return out;
  }
  out.plan = SusceptancePlan{values, 1, eq, stage, 0.0, 0.0, out.certification.certificate, "certificate"};
  return out;
}

struct StageQcqp {
  std::vector<std::pair<std::size_t, double>> line_values;
  double objective = 0.0;   // d_i(delta*_i, delta*_{i-1})
  double constraint = 0.0;  // d_i(delta*_i, delta*_origin)
};

// min ||P - flows_B(prev)||^2  s.t.  ||P - flows_B(goal)||^2 <= rhs, B in bounds.
inline StageQcqp stage_qcqp(const PowerNetwork& base, const std::vector<std::size_t>& lines,
                            const Eigen::VectorXd& prev, const Eigen::VectorXd& goal, double rhs,
                            const Tolerances& tol = {}) {
  const auto n = static_cast<Eigen::Index>(base.bus_count());
  const auto c = static_cast<Eigen::Index>(lines.size());
  auto affine = [&](const Eigen::VectorXd& ang, Eigen::MatrixXd& G, Eigen::VectorXd& r) {
    G = Eigen::MatrixXd::Zero(n, c);
    r = base.injections();
    std::vector<int> slot(base.line_count(), -1);
    for (Eigen::Index i = 0; i < c; ++i) slot[lines[i]] = static_cast<int>(i);
    for (std::size_t e = 0; e < base.line_count(); ++e) {
      const auto k = base.from_index(e), j = base.to_index(e);
      const double vv = base.buses()[k].voltage * base.buses()[j].voltage;
      const double s = vv * std::sin(ang(k) - ang(j));
      if (slot[e] >= 0) {
        G(k, slot[e]) += s;
        G(j, slot[e]) -= s;
      } else {
        r(k) -= s * base.lines()[e].susceptance;
        r(j) += s * base.lines()[e].susceptance;
      }
    }
  };
  Eigen::MatrixXd Gp, Gg;
  Eigen::VectorXd rp, rg;
  affine(prev, Gp, rp);
  affine(goal, Gg, rg);
  QcqpProblem q;
  q.objective = QuadraticFunction::squared_residual(Gp, rp);
  q.constraints.push_back({QuadraticFunction::squared_residual(Gg, rg), rhs});
  q.lower.resize(c);
  q.upper.resize(c);
  for (Eigen::Index i = 0; i < c; ++i) {
    const auto& l = base.lines()[lines[i]];
    if (!l.controllable) throw ValidationError("line " + std::to_string(l.from) + "-" + std::to_string(l.to) + " is not controllable");
    q.names.push_back("B_" + std::to_string(l.from) + "_" + std::to_string(l.to));
    q.lower(i) = l.bounds->min;
    q.upper(i) = l.bounds->max;
  }
  const auto sol = solve_qcqp(q, tol);
  StageQcqp out;
  for (Eigen::Index i = 0; i < c; ++i) out.line_values.emplace_back(lines[i], sol.x(i));
  out.objective = sol.objective;
  out.constraint = q.constraints[0].f(sol.x);
  return out;
}

struct SequenceDesign {
  std::vector<SusceptancePlan> stages;
  double d1 = 0.0;            // d_1(delta*_1, delta*_origin)
  double decrement = 0.0;     // d actually used for the last stage
  std::optional<Certificate> final_hop;  // delta*_N inside SR_origin
  bool complete = false;
  std::string message;
};

// Equilibrium sequence from `start` (an equilibrium of start_net) back to
// the base network's `goal`, one susceptance change per stage.
inline SequenceDesign design_sequence(const PowerNetwork& base, const PowerNetwork& start_net,
                                      const EquilibriumPoint& start, const EquilibriumPoint& goal,
                                      const std::vector<std::size_t>& lines, double d,
                                      const PlannerOptions& opt = {}, std::size_t min_stages = 0) {
  if (!(d > 0)) throw ValidationError("design_sequence: decrement d must be positive");
  SequenceDesign out;
  const auto half = PolytopeSpec::uniform(std::numbers::pi / 2);
  if (!in_polytope(base, start.angles, half).inside || !in_polytope(base, goal.angles, half).inside)
    throw ValidationError("design_sequence: start and goal must lie inside Pi/2");
  out.d1 = residual_distance(start_net, goal.angles);
  out.decrement = d;
  if (distance_to(SystemState::at_rest(start.angles, base.generator_count()), goal) < 1e-12) {
    out.complete = true;
    out.message = "start equals goal";
    return out;
  }
  const double d_floor = out.d1 / 1024.0;
  const auto G = base.generator_count();
  EquilibriumPoint prev = start;
  double prev_dist = out.d1;
  while (true) {
    auto home = out.stages.size() >= min_stages ? certify_hop(base, goal, SystemState::at_rest(prev.angles, G), opt)
                                                : AdaptResult{};
    if (home.certified()) {
      out.final_hop = home.certificate;
      out.complete = true;
      return out;
    }
    const std::size_t cap = static_cast<std::size_t>(std::ceil(1.0 + out.d1 / out.decrement));
    if (out.stages.size() + 1 > cap) {
      out.message = "stage count bound reached without certifying the final hop";
      return out;
    }
    bool placed = false;
    while (!placed) {
      if (out.decrement < d_floor) {
        out.message = "decrement fell below d1/1024 without a certified stage";
        return out;
      }
      StageQcqp qp;
      try {
        qp = stage_qcqp(base, lines, prev.angles, goal.angles, prev_dist - out.decrement, opt.tol);
      } catch (const SolverError& err) {
        if (err.kind() != SolverError::Kind::infeasible) throw;
        out.decrement /= 2;
        continue;
      }
      const auto stage = base.with_susceptances(qp.line_values, "stage" + std::to_string(out.stages.size() + 2));
      EquilibriumPoint eq;
      try {
        eq = solve_equilibrium(stage, approx_equilibrium(stage, stage.injections()), newton_options(opt.tol));
      } catch (const PowerFlowError&) {
        eq = solve_equilibrium(stage, prev.angles, newton_options(opt.tol));
      }
      if (!in_polytope(stage, eq.angles, half).inside) {
        out.message = "stage equilibrium left Pi/2";
        return out;
      }
      auto hop = certify_hop(stage, eq, SystemState::at_rest(prev.angles, G), opt);
      if (!hop.certified()) {
        out.decrement /= 2;
        continue;
      }
      SusceptancePlan sp{qp.line_values, out.stages.size() + 2, eq, stage, residual_distance(stage, prev.angles),
                         residual_distance(stage, goal.angles), hop.certificate, "certificate"};
      prev_dist = sp.distance_to_goal;
      prev = eq;
      out.stages.push_back(std::move(sp));
      placed = true;
    }
  }
}

// ---- remedial plans --------------------------------------------------------

enum class ActionKind { apply_injections, restore_injections, apply_susceptances, restore_susceptances, settle };

inline const char* to_string(ActionKind k) {
  switch (k) {
    case ActionKind::apply_injections: return "apply-injections";
    case ActionKind::restore_injections: return "restore-injections";
    case ActionKind::apply_susceptances: return "apply-susceptances";
    case ActionKind::restore_susceptances: return "restore-susceptances";
    case ActionKind::settle: return "settle";
  }
  return "settle";
}

struct Action {
  ActionKind kind = ActionKind::settle;
  std::vector<std::pair<int, double>> buses;                // bus id, P
  std::vector<std::pair<std::pair<int, int>, double>> lines;  // (from, to), B
};

struct Trigger {
  enum class Kind { at_time_zero, on_convergence };
  Kind kind = Kind::at_time_zero;
  std::string target;             // label of the equilibrium
  Eigen::VectorXd target_angles;  // for on_convergence
  double tol = 0.05;
  double dwell = 1.0;
};

struct CertificateSummary {
  bool certified = false;
  double value = 0.0;
  double vmin = 0.0;
  std::string polytope;
  int iterations = 0;
  double epsilon_final = 0.0;
  std::string reason;
};

inline std::string describe(const PolytopeSpec& s, const PowerNetwork& net) {
  if (s.style == PolytopeSpec::Style::uniform) return "uniform(" + std::to_string(s.gamma) + ")";
  return "fault_dependent(bus " + std::to_string(net.buses()[s.node].id) + ")";
}

inline CertificateSummary summarize(const Certificate& c) {
  return {c.certified,         c.value, c.estimate.vmin, describe(c.estimate.polytope, c.estimate.function.bracket.network),
          c.iterations,        c.epsilon_final, to_string(c.reason)};
}

struct Stage {
  std::string label;
  std::vector<Action> actions;
  Trigger trigger;
  std::string heads_to;  // equilibrium the stage relocates to
  Eigen::VectorXd equilibrium;
  std::optional<CertificateSummary> certificate;
  std::string verification = "certificate";  // certificate | simulation | none
};

struct RemedialPlan {
  std::vector<Stage> stages;
  Eigen::VectorXd origin;
  double injection_objective = std::numeric_limits<double>::quiet_NaN();
  double d1 = std::numeric_limits<double>::quiet_NaN();
  double decrement = std::numeric_limits<double>::quiet_NaN();
};

inline PowerNetwork apply_action(const PowerNetwork& net, const Action& a) {
  PowerNetwork out = net;
  if (!a.buses.empty()) {
    Eigen::VectorXd p = out.injections();
    for (const auto& [id, v] : a.buses) {
      if (!out.has_bus(id)) throw ValidationError("action names unknown bus " + std::to_string(id));
      p(static_cast<Eigen::Index>(out.index_of(id))) = v;
    }
    out = out.with_injections(p, std::string(to_string(a.kind)));
  }
  if (!a.lines.empty()) {
    std::vector<std::pair<std::size_t, double>> changes;
    for (const auto& [ends, v] : a.lines) {
      const auto e = out.find_line(ends.first, ends.second);
      if (!e) throw ValidationError("action names unknown line");
      changes.emplace_back(*e, v);
    }
    out = out.with_susceptances(changes, std::string(to_string(a.kind)));
  }
  return out;
}

struct PlanOutcome {
  std::optional<RemedialPlan> plan;
  std::vector<std::string> diagnostics;
};

struct RemedialRequest {
  std::vector<int> controllable_buses;
  std::vector<std::pair<int, int>> controllable_lines;
  std::optional<double> decrement;  // default d1/2 + 1
  Eigen::VectorXd origin_guess;     // empty: zero vector
  bool force_sequence = false;      // run the susceptance sequence even when delta*_1 already certifies
};

inline PlanOutcome plan_remedial(const PowerNetwork& net, const SystemState& x0, const RemedialRequest& req,
                                 const PlannerOptions& opt = {}) {
  check_state(net, x0);
  PlanOutcome out;
  const auto G = net.generator_count();
  const auto origin = solve_equilibrium(
      net, req.origin_guess.size() ? req.origin_guess : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.bus_count())),
      newton_options(opt.tol));
  std::vector<std::size_t> lines;
  for (const auto& [a, b] : req.controllable_lines) {
    const auto e = net.find_line(a, b);
    if (!e) throw ValidationError("controllable line " + std::to_string(a) + "-" + std::to_string(b) + " not in case");
    if (!net.lines()[*e].controllable)
      throw ValidationError("line " + std::to_string(a) + "-" + std::to_string(b) + " is not controllable in the case");
    lines.push_back(*e);
  }
  auto note = [&](std::string s) { out.diagnostics.push_back(std::move(s)); };
  const double tol = opt.tol.convergence_tol, dwell = opt.tol.dwell;

  // (0) already inside the original region estimate
  const auto direct = certify_hop(net, origin, x0, opt);
  if (direct.certified()) {
    note("x0 certified into the original region; no action needed");
    RemedialPlan p;
    p.origin = origin.angles;
    out.plan = p;
    return out;
  }
  note("x0 not certified for the original equilibrium: " + direct.message);
  if (req.controllable_buses.empty()) {
    note("no controllable buses: injection step unavailable");
    return out;
  }

  // (1) injection redesign
  InjectionDesign inj;
  try {
    inj = design_injection(net, req.controllable_buses, x0, opt);
  } catch (const Error& err) {
    note(std::string("injection design failed: ") + err.what());
    return out;
  }
  const auto stage1 = net.with_injections(inj.plan.injections, "stage1");
  RemedialPlan plan;
  plan.origin = origin.angles;
  plan.injection_objective = inj.plan.objective;
  Stage s1;
  s1.label = "inject";
  s1.heads_to = "stage1";
  s1.equilibrium = inj.plan.target.angles;
  Action a1{ActionKind::apply_injections, {}, {}};
  Action r1{ActionKind::restore_injections, {}, {}};
  for (int id : req.controllable_buses) {
    a1.buses.emplace_back(id, inj.plan.injections(static_cast<Eigen::Index>(net.index_of(id))));
    r1.buses.emplace_back(id, net.buses()[net.index_of(id)].injection);
  }
  s1.actions.push_back(a1);
  if (inj.certification.certificate) s1.certificate = summarize(*inj.certification.certificate);
  if (inj.accepted()) {
    s1.verification = "certificate";
  } else if (opt.allow_simulation_fallback) {
    SimConfig cfg = opt.fallback_sim;
    cfg.hooks.clear();
    const auto traj = simulate(stage1, x0, cfg);
    if (traj.diverged || !detect_convergence(traj, inj.plan.target, tol, dwell)) {
      note("injection stage neither certified nor convergent in simulation");
      return out;
    }
    note("injection stage not certified (" + inj.certification.message + "); accepted on simulated convergence");
    s1.verification = "simulation";
  } else {
    note("injection stage not certified: " + inj.certification.message);
    return out;
  }
  plan.stages.push_back(s1);

  auto on_conv = [&](const std::string& label, const Eigen::VectorXd& target) {
    Trigger t;
    t.kind = Trigger::Kind::on_convergence;
    t.target = label;
    t.target_angles = target;
    t.tol = tol;
    t.dwell = dwell;
    return t;
  };
  auto settle = [&](const std::string& after, const Eigen::VectorXd& from) {
    Stage s;
    s.label = "settle";
    s.actions.push_back({ActionKind::settle, {}, {}});
    s.trigger = on_conv("origin", origin.angles);
    s.heads_to = "origin";
    s.equilibrium = origin.angles;
    s.verification = "none";
    (void)after;
    (void)from;
    return s;
  };

  // stage-1 equilibrium already inside the original region
  const auto home = certify_hop(net, origin, SystemState::at_rest(inj.plan.target.angles, G), opt);
  if (home.certified() && !(req.force_sequence && !lines.empty())) {
    Stage s2;
    s2.label = "restore-injections";
    s2.actions.push_back(r1);
    s2.trigger = on_conv("stage1", inj.plan.target.angles);
    s2.heads_to = "origin";
    s2.equilibrium = origin.angles;
    s2.certificate = summarize(*home.certificate);
    plan.stages.push_back(s2);
    plan.stages.push_back(settle("stage1", inj.plan.target.angles));
    out.plan = plan;
    return out;
  }
  if (lines.empty()) {
    note("stage-1 equilibrium not certified for the origin and no controllable lines");
    return out;
  }

  // (2) susceptance sequence
  const double d1 = residual_distance(stage1, origin.angles);
  const double d = req.decrement ? *req.decrement : d1 / 2 + 1;
  SequenceDesign seq;
  try {
    seq = design_sequence(net, stage1, inj.plan.target, origin, lines, d, opt, req.force_sequence ? 1 : 0);
  } catch (const Error& err) {
    note(std::string("sequence design failed: ") + err.what());
    return out;
  }
  plan.d1 = seq.d1;
  plan.decrement = seq.decrement;
  if (!seq.complete) {
    note("sequence design incomplete: " + seq.message);
    return out;
  }
  std::string prev_label = "stage1";
  Eigen::VectorXd prev_angles = inj.plan.target.angles;
  for (std::size_t i = 0; i < seq.stages.size(); ++i) {
    const auto& sp = seq.stages[i];
    Stage s;
    s.label = "stage" + std::to_string(sp.stage_index);
    if (i == 0) s.actions.push_back(r1);
    Action a{ActionKind::apply_susceptances, {}, {}};
    for (const auto& [e, b] : sp.line_values)
      a.lines.push_back({{net.lines()[e].from, net.lines()[e].to}, b});
    s.actions.push_back(a);
    s.trigger = on_conv(prev_label, prev_angles);
    s.heads_to = s.label;
    s.equilibrium = sp.induced.angles;
    if (sp.hop) s.certificate = summarize(*sp.hop);
    plan.stages.push_back(s);
    prev_label = s.label;
    prev_angles = sp.induced.angles;
  }
  // (3) restore the susceptances
  Stage fin;
  fin.label = "restore-susceptances";
  if (seq.stages.empty()) fin.actions.push_back(r1);
  Action rb{ActionKind::restore_susceptances, {}, {}};
  for (auto e : lines) rb.lines.push_back({{net.lines()[e].from, net.lines()[e].to}, net.lines()[e].susceptance});
  fin.actions.push_back(rb);
  fin.trigger = on_conv(prev_label, prev_angles);
  fin.heads_to = "origin";
  fin.equilibrium = origin.angles;
  if (seq.final_hop) fin.certificate = summarize(*seq.final_hop);
  plan.stages.push_back(fin);
  plan.stages.push_back(settle(prev_label, prev_angles));
  out.plan = plan;
  return out;
}

struct StageReport {
  std::string label;
  std::optional<double> fired_at;
  double peak_velocity = 0.0;  // max |omega| while this stage was the latest one applied
};

struct PlanVerification {
  std::vector<StageReport> stages;
  double final_distance = 0.0;
  bool converged = false;
  bool diverged = false;
  Trajectory trajectory;
};

inline std::vector<EventHook> plan_hooks(const RemedialPlan& plan) {
  std::vector<EventHook> hooks;
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    const auto& s = plan.stages[i];
    EventHook h;
    h.label = s.label;
    if (s.trigger.kind == Trigger::Kind::at_time_zero)
      h.trigger = [](double, const SystemState&) { return true; };
    else
      h.trigger = convergence_trigger(s.trigger.target_angles, s.trigger.tol, s.trigger.dwell);
    const auto actions = s.actions;
    h.mutate = [actions](const PowerNetwork& n) {
      PowerNetwork out = n;
      for (const auto& a : actions) out = apply_action(out, a);
      return out;
    };
    if (i > 0) h.armed_after = i - 1;
    hooks.push_back(std::move(h));
  }
  return hooks;
}

inline PlanVerification verify_plan(const PowerNetwork& net, const SystemState& x0, const RemedialPlan& plan,
                                    SimConfig cfg) {
  PlanVerification out;
  cfg.hooks = plan_hooks(plan);
  out.trajectory = simulate(net, x0, cfg);
  const auto& tr = out.trajectory;
  out.diverged = tr.diverged;
  for (const auto& s : plan.stages) out.stages.push_back({s.label, std::nullopt, 0.0});
  for (const auto& ev : tr.events)
    for (std::size_t i = 0; i < plan.stages.size(); ++i)
      if (plan.stages[i].label == ev.label && !out.stages[i].fired_at) {
        out.stages[i].fired_at = ev.time;
        break;
      }
  std::size_t current = 0;
  bool any = false;
  std::size_t next_event = 0;
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    while (next_event < tr.events.size() && tr.events[next_event].sample <= i) {
      for (std::size_t k = 0; k < plan.stages.size(); ++k)
        if (plan.stages[k].label == tr.events[next_event].label) {
          current = k;
          any = true;
        }
      ++next_event;
    }
    if (any && tr.states[i].velocities.size())
      out.stages[current].peak_velocity =
          std::max(out.stages[current].peak_velocity, tr.states[i].velocities.cwiseAbs().maxCoeff());
  }
  const Eigen::VectorXd origin = plan.origin.size() ? plan.origin : Eigen::VectorXd(x0.angles);
  out.final_distance = tr.states.empty() ? std::numeric_limits<double>::infinity()
                                         : distance_to(tr.states.back(), origin);
  out.converged = !tr.diverged && out.final_distance < cfg.convergence_tol;
  return out;
}

}  // namespace gridshift
