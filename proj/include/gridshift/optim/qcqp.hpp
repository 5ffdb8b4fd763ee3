#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "gridshift/error.hpp"
#include "gridshift/optim/barrier.hpp"
#include "gridshift/optim/config.hpp"

namespace gridshift {

// 1/2 x'Px + q'x + r
struct QuadraticFunction {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  double r = 0.0;

  double operator()(const Eigen::VectorXd& x) const { return 0.5 * x.dot(P * x) + q.dot(x) + r; }
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const { return P * x + q; }

  // ||M x - c||^2 written in this form.
  static QuadraticFunction squared_residual(const Eigen::MatrixXd& M, const Eigen::VectorXd& c) {
    return {2.0 * M.transpose() * M, -2.0 * M.transpose() * c, c.squaredNorm()};
  }
};

struct QuadraticConstraint {
  QuadraticFunction f;
  double rhs = 0.0;  // f(x) <= rhs
};

struct QcqpProblem {
  std::vector<std::string> names;
  QuadraticFunction objective;
  std::vector<QuadraticConstraint> constraints;
  Eigen::VectorXd lower;  // may hold -inf
  Eigen::VectorXd upper;  // may hold +inf
};

struct QcqpSolution {
  double objective = 0.0;
  Eigen::VectorXd x;
  Eigen::VectorXd multipliers;  // one per quadratic constraint
  double lagrangian_gradient = 0.0;
  double max_violation = 0.0;
  int newton_steps = 0;
};

namespace detail {

inline SmoothFunction as_smooth(const QuadraticFunction& f, double rhs = 0.0) {
  return {[f, rhs](const Eigen::VectorXd& x) { return f(x) - rhs; },
          [f](const Eigen::VectorXd& x) { return f.gradient(x); },
          [f](const Eigen::VectorXd&) { return f.P; }};
}

inline void check_convex(const QuadraticFunction& f, Eigen::Index n, const std::string& what) {
  if (f.P.rows() != n || f.P.cols() != n || f.q.size() != n)
    throw SolverError(SolverError::Kind::invalid_problem, what + ": dimension mismatch");
  if (n == 0) return;
  const Eigen::MatrixXd S = 0.5 * (f.P + f.P.transpose());
  const double lam = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(S).eigenvalues().minCoeff();
  if (lam < -1e-10 * std::max(1.0, S.cwiseAbs().maxCoeff()))
    throw SolverError(SolverError::Kind::invalid_problem, what + ": quadratic form is not PSD");
}

}  // namespace detail

inline QcqpSolution solve_qcqp(const QcqpProblem& prob, const Tolerances& tol = {},
                               std::optional<Eigen::VectorXd> start = std::nullopt) {
  using Eigen::VectorXd;
  const auto n = prob.objective.q.size();
  detail::check_convex(prob.objective, n, "QCQP objective");
  for (std::size_t i = 0; i < prob.constraints.size(); ++i)
    detail::check_convex(prob.constraints[i].f, n, "QCQP constraint " + std::to_string(i));
  VectorXd lo = prob.lower.size() ? prob.lower : VectorXd::Constant(n, -std::numeric_limits<double>::infinity());
  VectorXd hi = prob.upper.size() ? prob.upper : VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  if (lo.size() != n || hi.size() != n)
    throw SolverError(SolverError::Kind::invalid_problem, "QCQP bounds have wrong dimension");

  BarrierProblem bp;
  bp.objective = detail::as_smooth(prob.objective);
  for (const auto& c : prob.constraints) bp.inequalities.push_back(detail::as_smooth(c.f, c.rhs));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(hi(i))) bp.inequalities.push_back(affine_function(VectorXd::Unit(n, i), -hi(i)));
    if (std::isfinite(lo(i))) bp.inequalities.push_back(affine_function(-VectorXd::Unit(n, i), lo(i)));
  }
  bp.A.resize(0, n);
  bp.b.resize(0);

  VectorXd x0 = VectorXd::Zero(n);
  if (start) {
    x0 = *start;
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::isfinite(lo(i)) && std::isfinite(hi(i))) x0(i) = 0.5 * (lo(i) + hi(i));
      else if (std::isfinite(lo(i))) x0(i) = lo(i) + 1.0;
      else if (std::isfinite(hi(i))) x0(i) = hi(i) - 1.0;
    }
  }
  BarrierOptions opt;
  opt.max_outer = tol.barrier_max_outer;
  auto feasible = barrier_phase_one(bp, x0, opt);
  if (!feasible) throw SolverError(SolverError::Kind::infeasible, "QCQP is infeasible (phase I)");
  const auto r = solve_barrier(bp, *feasible, opt);

  QcqpSolution out;
  out.x = r.x;
  out.objective = prob.objective(r.x);
  out.multipliers = r.multipliers.head(static_cast<Eigen::Index>(prob.constraints.size()));
  out.lagrangian_gradient = r.lagrangian_gradient;
  out.newton_steps = r.newton_steps;
  out.max_violation = 0.0;
  for (const auto& c : prob.constraints) out.max_violation = std::max(out.max_violation, c.f(r.x) - c.rhs);
  for (Eigen::Index i = 0; i < n; ++i)
    out.max_violation = std::max({out.max_violation, r.x(i) - hi(i), lo(i) - r.x(i)});
  const double gscale = 1.0 + prob.objective.gradient(r.x).norm();
  if (!(out.lagrangian_gradient <= tol.qcqp_gradient * gscale))
    throw SolverError(SolverError::Kind::not_converged,
                      "QCQP barrier did not reach stationarity (" + std::to_string(out.lagrangian_gradient) + ")");
  if (!(out.max_violation <= tol.qcqp_feasibility))
    throw SolverError(SolverError::Kind::not_converged, "QCQP solution violates constraints");
  return out;
}

}  // namespace gridshift
