#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "gridshift/error.hpp"
#include "gridshift/netmodel.hpp"

namespace gridshift {

struct EquilibriumPoint {
  Eigen::VectorXd angles;  // bus 1 (index 0) fixed at 0
  double residual = 0.0;
  std::string network_tag;
};

struct NewtonOptions {
  int max_iter = 50;
  int max_halvings = 10;
  double tol = 1e-8;
};

// Per-bus mismatch sum_j a_kj sin(d_k - d_j) - P_k.
inline Eigen::VectorXd power_mismatch(const PowerNetwork& net, const Eigen::VectorXd& angles) {
  Eigen::VectorXd f = -net.injections();
  for (std::size_t e = 0; e < net.line_count(); ++e) {
    const auto k = net.from_index(e), j = net.to_index(e);
    const double flow = net.coupling(e) * std::sin(angles(k) - angles(j));
    f(k) += flow;
    f(j) -= flow;
  }
  return f;
}

inline Eigen::VectorXd reference_shifted(const Eigen::VectorXd& angles) {
  if (angles.size() == 0) return angles;
  return angles.array() - angles(0);
}

inline EquilibriumPoint solve_equilibrium(const PowerNetwork& net, const Eigen::VectorXd& guess,
                                          const NewtonOptions& opt = {}) {
  const auto n = static_cast<Eigen::Index>(net.bus_count());
  if (guess.size() != n) throw ValidationError("solve_equilibrium: guess has wrong dimension");
  Eigen::VectorXd x = reference_shifted(guess);
  if (n == 1) return {x, std::abs(power_mismatch(net, x)(0)), net.tag()};

  auto reduced_jacobian = [&](const Eigen::VectorXd& th) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t e = 0; e < net.line_count(); ++e) {
      const auto k = static_cast<Eigen::Index>(net.from_index(e));
      const auto j = static_cast<Eigen::Index>(net.to_index(e));
      const double c = net.coupling(e) * std::cos(th(k) - th(j));
      J(k, k) += c;
      J(j, j) += c;
      J(k, j) -= c;
      J(j, k) -= c;
    }
    return Eigen::MatrixXd(J.bottomRightCorner(n - 1, n - 1));
  };

  Eigen::VectorXd f = power_mismatch(net, x);
  double res = f.lpNorm<Eigen::Infinity>();
  // two polishing steps past tol are taken when they still reduce the residual
  int polish = 0;
  for (int it = 0; it < opt.max_iter && (res > opt.tol || polish < 2); ++it) {
    if (res <= opt.tol) ++polish;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(reduced_jacobian(x));
    lu.setThreshold(1e-12);
    if (lu.rank() < n - 1) {
      if (res <= opt.tol) break;
      throw PowerFlowError(PowerFlowError::Kind::singular_jacobian,
                           "power-flow Jacobian is singular");
    }
    Eigen::VectorXd step = Eigen::VectorXd::Zero(n);
    step.tail(n - 1) = lu.solve(-f.tail(n - 1));
    double alpha = 1.0;
    const double norm0 = f.norm();
    Eigen::VectorXd trial = x + step;
    Eigen::VectorXd ft = power_mismatch(net, trial);
    for (int h = 0; h < opt.max_halvings && !(ft.norm() < norm0); ++h) {
      alpha *= 0.5;
      trial = x + alpha * step;
      ft = power_mismatch(net, trial);
    }
    if (res <= opt.tol && !(ft.norm() < norm0)) break;
    x = trial;
    f = ft;
    res = f.lpNorm<Eigen::Infinity>();
    if (!std::isfinite(res)) break;
  }
  if (!(res <= opt.tol))
    throw PowerFlowError(PowerFlowError::Kind::diverged,
                         "Newton did not converge (residual " + std::to_string(res) + ")");
  return {x, res, net.tag()};
}

// delta* ~ L^+ p, referenced to bus 1.
inline Eigen::VectorXd approx_equilibrium(const PowerNetwork& net, const Eigen::VectorXd& p) {
  if (static_cast<std::size_t>(p.size()) != net.bus_count())
    throw ValidationError("approx_equilibrium: dimension mismatch");
  return reference_shifted(pseudoinverse(weighted_laplacian(net)) * p);
}

struct PolytopeSpec {
  enum class Style { uniform, fault_dependent };
  Style style = Style::uniform;
  double gamma = std::numbers::pi / 2;
  std::size_t node = 0;          // fault node (bus index) for fault_dependent
  Eigen::VectorXd anchor;        // equilibrium angles for fault_dependent

  static PolytopeSpec uniform(double gamma) {
    if (!(gamma > 0) || gamma > std::numbers::pi / 2 + 1e-15)
      throw ValidationError("uniform polytope needs 0 < gamma <= pi/2");
    PolytopeSpec s;
    s.style = Style::uniform;
    s.gamma = gamma;
    return s;
  }
  static PolytopeSpec fault_dependent(std::size_t node, Eigen::VectorXd anchor_angles) {
    PolytopeSpec s;
    s.style = Style::fault_dependent;
    s.node = node;
    s.anchor = std::move(anchor_angles);
    return s;
  }
};

struct LineInterval {
  double lo = 0.0;
  double hi = 0.0;
};

// Bounds on d_from - d_to for every line.
inline std::vector<LineInterval> line_bounds(const PowerNetwork& net, const PolytopeSpec& spec) {
  std::vector<LineInterval> out(net.line_count());
  const double half = std::numbers::pi / 2;
  if (spec.style == PolytopeSpec::Style::fault_dependent) {
    if (spec.node >= net.bus_count()) throw ValidationError("fault node out of range");
    if (static_cast<std::size_t>(spec.anchor.size()) != net.bus_count())
      throw ValidationError("fault-dependent polytope anchor has wrong dimension");
  }
  for (std::size_t e = 0; e < net.line_count(); ++e) {
    const auto k = net.from_index(e), j = net.to_index(e);
    if (spec.style == PolytopeSpec::Style::uniform) {
      out[e] = {-spec.gamma, spec.gamma};
    } else if (k == spec.node || j == spec.node) {
      const double star = spec.anchor(k) - spec.anchor(j);
      out[e] = {-std::numbers::pi - star, std::numbers::pi - star};
    } else {
      out[e] = {-half, half};
    }
  }
  return out;
}

struct PolytopeCheck {
  bool inside = true;
  std::vector<std::size_t> violated;  // line indices
  explicit operator bool() const { return inside; }
};

inline PolytopeCheck in_polytope(const PowerNetwork& net, const Eigen::VectorXd& angles,
                                 const PolytopeSpec& spec) {
  if (static_cast<std::size_t>(angles.size()) != net.bus_count())
    throw ValidationError("in_polytope: dimension mismatch");
  PolytopeCheck out;
  const auto bounds = line_bounds(net, spec);
  for (std::size_t e = 0; e < net.line_count(); ++e) {
    const double v = angles(net.from_index(e)) - angles(net.to_index(e));
    if (v < bounds[e].lo || v > bounds[e].hi) {
      out.inside = false;
      out.violated.push_back(e);
    }
  }
  return out;
}

}  // namespace gridshift
