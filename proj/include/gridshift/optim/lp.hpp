#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gridshift/error.hpp"
#include "gridshift/optim/config.hpp"

namespace gridshift {

enum class Relation { less_equal, greater_equal, equal };

struct LinearConstraint {
  std::vector<std::pair<std::size_t, double>> terms;
  Relation relation = Relation::less_equal;
  double rhs = 0.0;
};

// minimize c'x subject to linear constraints and per-variable bounds.
struct LpProblem {
  std::vector<std::string> names;
  std::vector<double> objective;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<LinearConstraint> constraints;

  std::size_t add_variable(std::string name, double lo = -std::numeric_limits<double>::infinity(),
                           double hi = std::numeric_limits<double>::infinity()) {
    names.push_back(std::move(name));
    objective.push_back(0.0);
    lower.push_back(lo);
    upper.push_back(hi);
    return names.size() - 1;
  }
  std::size_t size() const { return names.size(); }
  void add_constraint(std::vector<std::pair<std::size_t, double>> terms, Relation rel, double rhs) {
    constraints.push_back({std::move(terms), rel, rhs});
  }
};

struct LpSolution {
  double objective = 0.0;
  Eigen::VectorXd x;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
};

namespace detail {

struct LpStandardForm {
  Eigen::VectorXd c;
  Eigen::MatrixXd A;  // equalities A x = b
  Eigen::VectorXd b;
  Eigen::MatrixXd G;  // inequalities G x <= h
  Eigen::VectorXd h;
};

inline LpStandardForm lp_standard_form(const LpProblem& p) {
  const auto n = static_cast<Eigen::Index>(p.size());
  LpStandardForm f;
  f.c = Eigen::Map<const Eigen::VectorXd>(p.objective.data(), n);
  std::vector<Eigen::VectorXd> eq_rows, in_rows;
  std::vector<double> eq_rhs, in_rhs;
  for (const auto& con : p.constraints) {
    Eigen::VectorXd row = Eigen::VectorXd::Zero(n);
    for (const auto& [i, v] : con.terms) {
      if (i >= p.size()) throw SolverError(SolverError::Kind::invalid_problem, "LP: bad variable index");
      row(static_cast<Eigen::Index>(i)) += v;
    }
    switch (con.relation) {
      case Relation::equal:
        eq_rows.push_back(row);
        eq_rhs.push_back(con.rhs);
        break;
      case Relation::less_equal:
        in_rows.push_back(row);
        in_rhs.push_back(con.rhs);
        break;
      case Relation::greater_equal:
        in_rows.push_back(-row);
        in_rhs.push_back(-con.rhs);
        break;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(p.upper[i])) {
      in_rows.push_back(Eigen::VectorXd::Unit(n, i));
      in_rhs.push_back(p.upper[i]);
    }
    if (std::isfinite(p.lower[i])) {
      in_rows.push_back(-Eigen::VectorXd::Unit(n, i));
      in_rhs.push_back(-p.lower[i]);
    }
  }
  f.A.resize(static_cast<Eigen::Index>(eq_rows.size()), n);
  f.b.resize(static_cast<Eigen::Index>(eq_rows.size()));
  for (std::size_t r = 0; r < eq_rows.size(); ++r) {
    f.A.row(r) = eq_rows[r].transpose();
    f.b(r) = eq_rhs[r];
  }
  f.G.resize(static_cast<Eigen::Index>(in_rows.size()), n);
  f.h.resize(static_cast<Eigen::Index>(in_rows.size()));
  for (std::size_t r = 0; r < in_rows.size(); ++r) {
    f.G.row(r) = in_rows[r].transpose();
    f.h(r) = in_rhs[r];
  }
  return f;
}

inline double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double a = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv(i) < 0) a = std::min(a, -v(i) / dv(i));
  return a;
}

}  // namespace detail

// Mehrotra predictor-corrector interior point on {min c'x : Ax = b, Gx <= h}.
inline LpSolution solve_lp(const LpProblem& problem, const Tolerances& tol = {}) {
  using Eigen::Index;
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  const auto f = detail::lp_standard_form(problem);
  const Index n = f.c.size(), me = f.A.rows(), mi = f.G.rows();
  if (n == 0) throw SolverError(SolverError::Kind::invalid_problem, "LP has no variables");

  if (mi == 0) {
    // pure equality-constrained: bounded only when c lies in the row space of A
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(f.A);
    VectorXd x = me ? VectorXd(cod.solve(f.b)) : VectorXd::Zero(n);
    if (me && (f.A * x - f.b).norm() > 1e-9 * (1 + f.b.norm()))
      throw SolverError(SolverError::Kind::infeasible, "LP equality constraints are inconsistent");
    VectorXd y = me ? VectorXd(Eigen::CompleteOrthogonalDecomposition<MatrixXd>(f.A.transpose()).solve(-f.c))
                    : VectorXd::Zero(0);
    const VectorXd rd = f.c + (me ? VectorXd(f.A.transpose() * y) : VectorXd::Zero(n));
    if (rd.lpNorm<Eigen::Infinity>() > 1e-9 * (1 + f.c.lpNorm<Eigen::Infinity>()))
      throw SolverError(SolverError::Kind::unbounded, "LP is unbounded");
    return {f.c.dot(x), x, 0, 0.0, rd.lpNorm<Eigen::Infinity>(), 0.0};
  }

  const double reg = 1e-13;
  auto kkt_factor = [&](const VectorXd& w) {
    MatrixXd K = MatrixXd::Zero(n + me, n + me);
    K.topLeftCorner(n, n) = f.G.transpose() * w.asDiagonal() * f.G;
    const double scale = 1.0 + K.topLeftCorner(n, n).diagonal().cwiseAbs().maxCoeff();
    K.topLeftCorner(n, n).diagonal().array() += reg * scale;
    if (me) {
      K.topRightCorner(n, me) = f.A.transpose();
      K.bottomLeftCorner(me, n) = f.A;
      K.bottomRightCorner(me, me).diagonal().array() -= reg * scale;
    }
    return Eigen::PartialPivLU<MatrixXd>(K);
  };
  auto solve2 = [&](const Eigen::PartialPivLU<MatrixXd>& lu, const VectorXd& r1, const VectorXd& r2) {
    VectorXd rhs(n + me);
    rhs << r1, r2;
    VectorXd sol = lu.solve(rhs);
    return sol;
  };

  // initial point (least-squares primal and dual, then shifted into the cone)
  VectorXd x, y = VectorXd::Zero(me), s, z;
  {
    const auto lu = kkt_factor(VectorXd::Ones(mi));
    VectorXd sol = solve2(lu, f.G.transpose() * f.h, f.b);
    x = sol.head(n);
    s = f.h - f.G * x;
    sol = solve2(lu, -f.c, VectorXd::Zero(me));
    z = f.G * sol.head(n);
    y = sol.tail(me);
    const double as = -s.minCoeff(), az = -z.minCoeff();
    if (as >= 0) s.array() += 1.0 + as;
    if (az >= 0) z.array() += 1.0 + az;
  }

  const double bscale = 1.0 + std::max(me ? f.b.lpNorm<Eigen::Infinity>() : 0.0, f.h.lpNorm<Eigen::Infinity>());
  const double cscale = 1.0 + f.c.lpNorm<Eigen::Infinity>();
  const double eps = tol.lp_kkt;
  LpSolution out;
  for (int it = 0; it <= tol.lp_max_iter; ++it) {
    const VectorXd rd = f.c + (me ? VectorXd(f.A.transpose() * y) : VectorXd::Zero(n)) + f.G.transpose() * z;
    const VectorXd rp = me ? VectorXd(f.A * x - f.b) : VectorXd::Zero(0);
    const VectorXd ri = f.G * x + s - f.h;
    const double gap = s.dot(z);
    const double mu = gap / static_cast<double>(mi);
    const double pobj = f.c.dot(x);
    const double dobj = -(me ? f.b.dot(y) : 0.0) - f.h.dot(z);
    const double pres = std::max(me ? rp.lpNorm<Eigen::Infinity>() : 0.0, ri.lpNorm<Eigen::Infinity>()) / bscale;
    const double dres = rd.lpNorm<Eigen::Infinity>() / cscale;
    out = {pobj, x, it, pres, dres, gap};
    if (pres <= eps && dres <= eps && gap <= eps * (1 + std::abs(pobj)) &&
        std::abs(pobj - dobj) <= eps * (1 + std::abs(pobj)))
      return out;

    // infeasibility: y, z >= 0 with A'y + G'z = 0 and b'y + h'z < 0
    const double cert = (me ? f.b.dot(y) : 0.0) + f.h.dot(z);
    if (cert < 0) {
      const VectorXd ray = (me ? VectorXd(f.A.transpose() * y) : VectorXd::Zero(n)) + f.G.transpose() * z;
      if (ray.lpNorm<Eigen::Infinity>() <= 1e-8 * -cert * cscale)
        throw SolverError(SolverError::Kind::infeasible, "LP is infeasible");
    }
    // unboundedness: x direction with A d = 0, G d <= 0, c'd < 0
    const double xn = x.lpNorm<Eigen::Infinity>();
    if (xn > 1e8) {
      const VectorXd d = x / xn;
      const double cd = f.c.dot(d);
      const double ad = me ? (f.A * d).lpNorm<Eigen::Infinity>() : 0.0;
      const double gd = std::max(0.0, (f.G * d).maxCoeff());
      if (cd < -1e-8 && ad <= 1e-6 && gd <= 1e-6)
        throw SolverError(SolverError::Kind::unbounded, "LP is unbounded");
    }
    if (it == tol.lp_max_iter) break;

    const VectorXd w = z.cwiseQuotient(s);
    const auto lu = kkt_factor(w);
    auto direction = [&](const VectorXd& rc, VectorXd& dx, VectorXd& dy, VectorXd& dz, VectorXd& ds) {
      const VectorXd t = (z.cwiseProduct(ri) - rc).cwiseQuotient(s);
      const VectorXd sol = solve2(lu, -rd - f.G.transpose() * t, -rp);
      dx = sol.head(n);
      dy = sol.tail(me);
      dz = w.cwiseProduct(f.G * dx) + t;
      ds = -ri - f.G * dx;
    };
    VectorXd dx, dy, dz, ds;
    direction(s.cwiseProduct(z), dx, dy, dz, ds);
    const double aff = std::min(1.0, std::min(detail::max_step(s, ds), detail::max_step(z, dz)));
    const double mu_aff = (s + aff * ds).dot(z + aff * dz) / static_cast<double>(mi);
    const double sigma = std::pow(std::max(0.0, mu_aff / mu), 3);
    const VectorXd rc = s.cwiseProduct(z) + ds.cwiseProduct(dz) - VectorXd::Constant(mi, sigma * mu);
    direction(rc, dx, dy, dz, ds);
    const double alpha = std::min(1.0, 0.99 * std::min(detail::max_step(s, ds), detail::max_step(z, dz)));
    x += alpha * dx;
    y += alpha * dy;
    z += alpha * dz;
    s += alpha * ds;
  }
  throw SolverError(SolverError::Kind::not_converged,
                    "LP interior point did not converge (primal " + std::to_string(out.primal_residual) +
                        ", dual " + std::to_string(out.dual_residual) + ")");
}

}  // namespace gridshift
