#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "gridshift/error.hpp"

namespace gridshift {

struct SmoothFunction {
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> hessian;
};

inline SmoothFunction affine_function(Eigen::VectorXd a, double b) {
  // a'x + b
  const auto n = a.size();
  return {[a, b](const Eigen::VectorXd& x) { return a.dot(x) + b; },
          [a](const Eigen::VectorXd&) { return a; },
          [n](const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(n, n); }};
}

// minimize f0(x) s.t. f_i(x) <= 0, A x = b, with every f convex.
struct BarrierProblem {
  SmoothFunction objective;
  std::vector<SmoothFunction> inequalities;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
};

struct BarrierOptions {
  double t0 = 1.0;
  double mu = 10.0;
  double gap_tol = 1e-10;  // relative to 1 + |f0|
  int max_outer = 60;
  int max_newton = 100;
  double newton_tol = 1e-12;
};

struct BarrierResult {
  Eigen::VectorXd x;
  double objective = 0.0;
  Eigen::VectorXd multipliers;
  double lagrangian_gradient = 0.0;
  double max_violation = 0.0;
  int newton_steps = 0;
  double duality_gap = 0.0;
};

namespace detail {

inline double max_constraint(const BarrierProblem& p, const Eigen::VectorXd& x) {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& f : p.inequalities) m = std::max(m, f.value(x));
  return m;
}

// Projects x onto {A x = b}; returns false if the system is inconsistent.
inline bool project_affine(const BarrierProblem& p, Eigen::VectorXd& x) {
  if (p.A.rows() == 0) return true;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(p.A);
  x -= cod.solve(p.A * x - p.b);
  return (p.A * x - p.b).norm() <= 1e-9 * (1.0 + p.b.norm());
}

}  // namespace detail

// Barrier path from a strictly feasible start.
inline BarrierResult solve_barrier(const BarrierProblem& p, Eigen::VectorXd x,
                                   const BarrierOptions& opt = {}) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  const auto n = x.size();
  const auto me = p.A.rows();
  const auto m = p.inequalities.size();
  for (const auto& f : p.inequalities)
    if (!(f.value(x) < 0))
      throw SolverError(SolverError::Kind::invalid_problem, "barrier start is not strictly feasible");

  auto phi = [&](const VectorXd& v, double t, bool& inside) {
    double acc = t * p.objective.value(v);
    inside = true;
    for (const auto& f : p.inequalities) {
      const double fv = f.value(v);
      if (!(fv < 0)) {
        inside = false;
        return std::numeric_limits<double>::infinity();
      }
      acc -= std::log(-fv);
    }
    return acc;
  };

  BarrierResult out;
  double t = opt.t0;
  VectorXd nu = VectorXd::Zero(me);
  for (int outer = 0; outer < opt.max_outer; ++outer) {
    for (int k = 0; k < opt.max_newton; ++k) {
      VectorXd g = t * p.objective.gradient(x);
      MatrixXd H = t * p.objective.hessian(x);
      for (const auto& f : p.inequalities) {
        const double fv = f.value(x);
        const VectorXd gi = f.gradient(x);
        g += gi / -fv;
        H += gi * gi.transpose() / (fv * fv) + f.hessian(x) / -fv;
      }
      MatrixXd K = MatrixXd::Zero(n + me, n + me);
      const double hscale = 1.0 + H.diagonal().cwiseAbs().maxCoeff();
      K.topLeftCorner(n, n) = H;
      K.topLeftCorner(n, n).diagonal().array() += 1e-14 * hscale;
      if (me) {
        K.topRightCorner(n, me) = p.A.transpose();
        K.bottomLeftCorner(me, n) = p.A;
      }
      VectorXd rhs = VectorXd::Zero(n + me);
      rhs.head(n) = -g;
      VectorXd sol = K.partialPivLu().solve(rhs);
      VectorXd dx = sol.head(n);
      double dec = -g.dot(dx);
      if (!(dec > 0) || !dx.allFinite()) {
        // indefinite curvature: fall back to a regularized step
        K.topLeftCorner(n, n).diagonal().array() += 1e-6 * hscale;
        sol = K.partialPivLu().solve(rhs);
        dx = sol.head(n);
        dec = -g.dot(dx);
        if (!(dec > 0)) break;
      }
      nu = sol.tail(me) / t;
      ++out.newton_steps;
      if (dec / 2 <= opt.newton_tol) break;
      bool inside = true;
      const double f0 = phi(x, t, inside);
      double alpha = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 60; ++ls) {
        const VectorXd trial = x + alpha * dx;
        const double ft = phi(trial, t, inside);
        if (inside && ft <= f0 - 0.01 * alpha * dec) {
          x = trial;
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!moved) break;  // no representable progress at this t
    }
    const double gap = static_cast<double>(m) / t;
    if (m == 0 || gap <= opt.gap_tol * (1.0 + std::abs(p.objective.value(x)))) break;
    t *= opt.mu;
  }

  out.x = x;
  out.objective = p.objective.value(x);
  out.multipliers = VectorXd::Zero(static_cast<Eigen::Index>(m));
  VectorXd lg = p.objective.gradient(x);
  out.max_violation = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double fv = p.inequalities[i].value(x);
    out.multipliers(static_cast<Eigen::Index>(i)) = 1.0 / (t * -fv);
    lg += out.multipliers(static_cast<Eigen::Index>(i)) * p.inequalities[i].gradient(x);
    out.max_violation = std::max(out.max_violation, fv);
  }
  if (me) {
    lg += p.A.transpose() * nu;
    out.max_violation = std::max(out.max_violation, (p.A * x - p.b).lpNorm<Eigen::Infinity>());
  }
  out.lagrangian_gradient = lg.norm();

  // Least-squares multipliers on the near-active set, kept when they
  // tighten the stationarity residual.
  {
    std::vector<Eigen::Index> active;
    for (std::size_t i = 0; i < m; ++i)
      if (-p.inequalities[i].value(x) <= 1e-6) active.push_back(static_cast<Eigen::Index>(i));
    const VectorXd g0 = p.objective.gradient(x);
    while (!active.empty() || me > 0) {
      const auto k = static_cast<Eigen::Index>(active.size());
      MatrixXd J(n, k + me);
      for (Eigen::Index c = 0; c < k; ++c) J.col(c) = p.inequalities[active[c]].gradient(x);
      if (me) J.rightCols(me) = p.A.transpose();
      const VectorXd lam = J.completeOrthogonalDecomposition().solve(VectorXd(-g0));
      Eigen::Index worst = -1;
      for (Eigen::Index c = 0; c < k; ++c)
        if (lam(c) < 0 && (worst < 0 || lam(c) < lam(worst))) worst = c;
      if (worst >= 0) {
        active.erase(active.begin() + worst);
        continue;
      }
      const double res = (g0 + J * lam).norm();
      if (res < out.lagrangian_gradient) {
        out.lagrangian_gradient = res;
        out.multipliers.setZero();
        for (Eigen::Index c = 0; c < k; ++c) out.multipliers(active[c]) = lam(c);
      }
      break;
    }
  }
  out.duality_gap = static_cast<double>(m) / t;
  return out;
}

// Phase I: returns a strictly feasible point, or nullopt if none exists.
inline std::optional<Eigen::VectorXd> barrier_phase_one(const BarrierProblem& p,
                                                        Eigen::VectorXd x0,
                                                        const BarrierOptions& opt = {}) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  if (!detail::project_affine(p, x0)) return std::nullopt;
  if (p.inequalities.empty() || detail::max_constraint(p, x0) < 0) return x0;
  const auto n = x0.size();
  // variables (x, s): minimize s  s.t.  f_i(x) <= s,  s >= -1
  BarrierProblem q;
  q.objective = affine_function(VectorXd::Unit(n + 1, n), 0.0);
  for (const auto& f : p.inequalities) {
    q.inequalities.push_back(
        {[f, n](const VectorXd& z) { return f.value(z.head(n)) - z(n); },
         [f, n](const VectorXd& z) {
           VectorXd g(n + 1);
           g << f.gradient(z.head(n)), -1.0;
           return g;
         },
         [f, n](const VectorXd& z) {
           MatrixXd H = MatrixXd::Zero(n + 1, n + 1);
           H.topLeftCorner(n, n) = f.hessian(z.head(n));
           return H;
         }});
  }
  q.inequalities.push_back(affine_function(-VectorXd::Unit(n + 1, n), -1.0));
  if (p.A.rows()) {
    q.A = MatrixXd::Zero(p.A.rows(), n + 1);
    q.A.leftCols(n) = p.A;
    q.b = p.b;
  } else {
    q.A.resize(0, n + 1);
    q.b.resize(0);
  }
  VectorXd z(n + 1);
  const double s0 = detail::max_constraint(p, x0);
  z << x0, std::max(s0, 0.0) + 1.0;
  BarrierOptions o = opt;
  o.gap_tol = 1e-9;
  // keep t * s near 1 at the start so damped Newton is not crawling a deep valley
  o.t0 = opt.t0 / z(n);
  const auto r = solve_barrier(q, z, o);
  if (!(r.x(n) < 0) || !(detail::max_constraint(p, r.x.head(n)) < 0)) return std::nullopt;
  return VectorXd(r.x.head(n));
}

}  // namespace gridshift
