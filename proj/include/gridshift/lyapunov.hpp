#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gridshift/dynamics.hpp"
#include "gridshift/error.hpp"
#include "gridshift/netmodel.hpp"
#include "gridshift/optim/barrier.hpp"
#include "gridshift/optim/config.hpp"
#include "gridshift/optim/lp.hpp"
#include "gridshift/optim/sdp.hpp"
#include "gridshift/powerflow.hpp"

namespace gridshift {

// xdot = A x - B F(C x) with x = (delta - delta*, omega).
struct BracketForm {
  PowerNetwork network;
  EquilibriumPoint equilibrium;
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  Eigen::MatrixXd C;
  Eigen::VectorXd star;  // delta*_kj per line

  std::size_t buses() const { return network.bus_count(); }
  std::size_t generators() const { return network.generator_count(); }
  std::size_t state_dim() const { return buses() + generators(); }
  std::size_t edges() const { return network.line_count(); }

  Eigen::VectorXd F(const Eigen::VectorXd& sigma) const {
    return (sigma + star).array().sin() - star.array().sin();
  }
  Eigen::VectorXd to_state(const SystemState& s) const {
    Eigen::VectorXd x(static_cast<Eigen::Index>(state_dim()));
    x << s.angles - equilibrium.angles, s.velocities;
    return x;
  }
  SystemState from_state(const Eigen::VectorXd& x) const {
    const auto n = static_cast<Eigen::Index>(buses());
    return {x.head(n) + equilibrium.angles, x.tail(x.size() - n)};
  }
  Eigen::VectorXd rhs(const Eigen::VectorXd& x) const { return A * x - B * F(C * x); }
};

inline BracketForm build_bracket(const PowerNetwork& net, const EquilibriumPoint& eq) {
  if (static_cast<std::size_t>(eq.angles.size()) != net.bus_count())
    throw ValidationError("build_bracket: equilibrium has wrong dimension");
  const auto n = static_cast<Eigen::Index>(net.bus_count());
  const auto g = static_cast<Eigen::Index>(net.generator_count());
  const auto E = static_cast<Eigen::Index>(net.line_count());
  BracketForm bf{net, eq, Eigen::MatrixXd::Zero(n + g, n + g), Eigen::MatrixXd::Zero(n + g, E),
                 Eigen::MatrixXd::Zero(E, n + g), Eigen::VectorXd(E)};
  for (Eigen::Index k = 0; k < n; ++k) {
    const int s = net.generator_slot(k);
    if (s < 0) continue;
    const auto& b = net.buses()[k];
    bf.A(k, n + s) = 1.0;
    bf.A(n + s, n + s) = -b.damping / b.inertia;
  }
  for (Eigen::Index e = 0; e < E; ++e) {
    const auto k = static_cast<Eigen::Index>(net.from_index(e));
    const auto j = static_cast<Eigen::Index>(net.to_index(e));
    bf.C(e, k) = 1.0;
    bf.C(e, j) = -1.0;
    bf.star(e) = eq.angles(k) - eq.angles(j);
    const double a = net.coupling(e);
    for (auto [node, sign] : {std::pair{k, 1.0}, std::pair{j, -1.0}}) {
      const auto& b = net.buses()[node];
      const int s = net.generator_slot(node);
      if (s >= 0)
        bf.B(n + s, e) = sign * a / b.inertia;
      else
        bf.B(node, e) = sign * a / b.damping;
    }
  }
  return bf;
}

struct LyapunovFunction {
  BracketForm bracket;
  Eigen::MatrixXd Q;
  Eigen::VectorXd K;
  Eigen::VectorXd H;
  std::optional<std::size_t> fault_node;  // set for fault-dependent members
};

// Absolute line angle differences of a state.
inline Eigen::VectorXd line_angles(const BracketForm& bf, const SystemState& s) {
  const auto n = static_cast<Eigen::Index>(bf.buses());
  return bf.C.leftCols(n) * s.angles;
}

inline double evaluate(const LyapunovFunction& V, const SystemState& s) {
  const Eigen::VectorXd x = V.bracket.to_state(s);
  const Eigen::VectorXd de = line_angles(V.bracket, s);
  const Eigen::ArrayXd pot = de.array().cos() + de.array() * V.bracket.star.array().sin();
  return 0.5 * x.dot(V.Q * x) - V.K.dot(pot.matrix());
}

// Gradient with respect to (angles, velocities).
inline Eigen::VectorXd gradient(const LyapunovFunction& V, const SystemState& s) {
  const Eigen::VectorXd x = V.bracket.to_state(s);
  const Eigen::VectorXd de = line_angles(V.bracket, s);
  const Eigen::VectorXd f = de.array().sin() - V.bracket.star.array().sin();
  return V.Q * x + V.bracket.C.transpose() * V.K.cwiseProduct(f);
}

inline Eigen::MatrixXd hessian(const LyapunovFunction& V, const SystemState& s) {
  const Eigen::VectorXd de = line_angles(V.bracket, s);
  const Eigen::VectorXd w = V.K.cwiseProduct(Eigen::VectorXd(de.array().cos()));
  return V.Q + V.bracket.C.transpose() * w.asDiagonal() * V.bracket.C;
}

// Kinetic-plus-potential member: Q = diag(0, m), K = a, H = 0.
inline LyapunovFunction energy_member(const BracketForm& bf) {
  const auto n = static_cast<Eigen::Index>(bf.buses());
  const auto N = static_cast<Eigen::Index>(bf.state_dim());
  LyapunovFunction V{bf, Eigen::MatrixXd::Zero(N, N), bf.network.couplings(),
                     Eigen::VectorXd::Zero(static_cast<Eigen::Index>(bf.edges())), std::nullopt};
  for (std::size_t g = 0; g < bf.generators(); ++g)
    V.Q(n + static_cast<Eigen::Index>(g), n + static_cast<Eigen::Index>(g)) =
        bf.network.buses()[bf.network.generator_indices()[g]].inertia;
  return V;
}

struct LmiSystem {
  SdpFeasibility problem;
  SdpFeasibility::SymmetricVar Q;
  SdpFeasibility::DiagonalVar K;
  SdpFeasibility::DiagonalVar H;
  std::size_t state_dim = 0;

  Eigen::VectorXd pack(const Eigen::MatrixXd& Qm, const Eigen::VectorXd& Kv, const Eigen::VectorXd& Hv) const {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(problem.variable_count()));
    for (std::size_t i = 0; i < state_dim; ++i)
      for (std::size_t j = i; j < state_dim; ++j) z(static_cast<Eigen::Index>(Q(i, j))) = Qm(i, j);
    for (std::size_t e = 0; e < K.dim; ++e) {
      z(static_cast<Eigen::Index>(K(e))) = Kv(e);
      z(static_cast<Eigen::Index>(H(e))) = Hv(e);
    }
    return z;
  }
  void unpack(const Eigen::VectorXd& z, Eigen::MatrixXd& Qm, Eigen::VectorXd& Kv, Eigen::VectorXd& Hv) const {
    const auto N = static_cast<Eigen::Index>(state_dim);
    Qm.resize(N, N);
    for (std::size_t i = 0; i < state_dim; ++i)
      for (std::size_t j = i; j < state_dim; ++j) {
        Qm(i, j) = z(static_cast<Eigen::Index>(Q(i, j)));
        Qm(j, i) = Qm(i, j);
      }
    Kv.resize(static_cast<Eigen::Index>(K.dim));
    Hv.resize(static_cast<Eigen::Index>(H.dim));
    for (std::size_t e = 0; e < K.dim; ++e) {
      Kv(e) = z(static_cast<Eigen::Index>(K(e)));
      Hv(e) = z(static_cast<Eigen::Index>(H(e)));
    }
  }
};

namespace detail {

// Orthonormal basis of the complement of the uniform angle shift.
inline Eigen::MatrixXd shift_complement(std::size_t buses, std::size_t dim) {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  u.head(static_cast<Eigen::Index>(buses)).setOnes();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(u);
  const Eigen::MatrixXd full = qr.householderQ();
  return full.rightCols(static_cast<Eigen::Index>(dim) - 1);
}

}  // namespace detail

// Decrease LMI over (Q, K, H). The load-routing term K C B enters the F-F
// block; the angle rows of the block are forced to zero and strictness is
// required on the (velocity, F) part. Q is shift-invariant and trace(Q) = 1.
// A fault node adds the convexity block Q - sum K_ij C_ij' C_ij >= 0.
inline LmiSystem assemble_lmi(const BracketForm& bf, std::optional<std::size_t> fault_node = std::nullopt,
                              double eps_psd = 1e-6, bool strict = true) {
  using Eigen::Index;
  using Eigen::MatrixXd;
  const auto n = static_cast<Index>(bf.buses());
  const auto N = static_cast<Index>(bf.state_dim());
  const auto E = static_cast<Index>(bf.edges());
  if (fault_node) {
    if (*fault_node >= bf.buses()) throw ValidationError("fault node out of range");
    bool incident = false;
    for (Index e = 0; e < E; ++e)
      if (bf.network.from_index(e) == *fault_node || bf.network.to_index(e) == *fault_node) incident = true;
    if (!incident) throw ValidationError("fault node has no incident line");
  }
  LmiSystem sys;
  sys.state_dim = bf.state_dim();
  sys.problem.eps_psd = eps_psd;
  sys.Q = sys.problem.add_symmetric("Q", bf.state_dim());
  sys.K = sys.problem.add_diagonal_nonnegative("K", bf.edges());
  sys.H = sys.problem.add_diagonal_nonnegative("H", bf.edges());

  const MatrixXd CA = bf.C * bf.A;
  const MatrixXd CB = bf.C * bf.B;
  auto m1_of_Q = [&](const MatrixXd& Qm) {
    MatrixXd M = MatrixXd::Zero(N + E, N + E);
    M.topLeftCorner(N, N) = bf.A.transpose() * Qm + Qm * bf.A;
    M.topRightCorner(N, E) = Qm * bf.B;
    M.bottomLeftCorner(E, N) = M.topRightCorner(N, E).transpose();
    return M;
  };
  auto m1_of_K = [&](Index e) {
    MatrixXd M = MatrixXd::Zero(N + E, N + E);
    MatrixXd Ke = MatrixXd::Zero(E, E);
    Ke(e, e) = 1.0;
    const MatrixXd R = -(Ke * CA).transpose();
    M.topRightCorner(N, E) = R;
    M.bottomLeftCorner(E, N) = R.transpose();
    const MatrixXd KCB = Ke * CB;
    M.bottomRightCorner(E, E) = -KCB - KCB.transpose();
    return M;
  };
  auto m1_of_H = [&](Index e) {
    MatrixXd M = MatrixXd::Zero(N + E, N + E);
    const MatrixXd R = -bf.C.row(e).transpose();
    M.block(0, N + e, N, 1) = R;
    M.block(N + e, 0, 1, N) = R.transpose();
    M(N + e, N + e) = -2.0;
    return M;
  };

  std::vector<std::pair<std::size_t, MatrixXd>> m1_terms;
  for (Index i = 0; i < N; ++i)
    for (Index j = i; j < N; ++j) {
      MatrixXd Qm = MatrixXd::Zero(N, N);
      Qm(i, j) = 1.0;
      Qm(j, i) = 1.0;
      m1_terms.emplace_back(sys.Q(i, j), m1_of_Q(Qm));
    }
  for (Index e = 0; e < E; ++e) {
    m1_terms.emplace_back(sys.K(e), m1_of_K(e));
    m1_terms.emplace_back(sys.H(e), m1_of_H(e));
  }

  // angle rows of the decrease block vanish
  for (Index r = 0; r < n; ++r)
    for (Index c = r; c < N + E; ++c) {
      std::vector<std::pair<std::size_t, double>> terms;
      for (const auto& [l, M] : m1_terms)
        if (M(r, c) != 0.0) terms.emplace_back(l, M(r, c));
      if (!terms.empty()) sys.problem.add_equality(std::move(terms), 0.0);
    }
  // Q u = 0 and trace(Q) = 1
  for (Index i = 0; i < N; ++i) {
    std::vector<std::pair<std::size_t, double>> terms;
    for (Index j = 0; j < n; ++j) terms.emplace_back(sys.Q(i, j), 1.0);
    sys.problem.add_equality(std::move(terms), 0.0);
  }
  {
    std::vector<std::pair<std::size_t, double>> terms;
    for (Index i = 0; i < N; ++i) terms.emplace_back(sys.Q(i, i), 1.0);
    sys.problem.add_equality(std::move(terms), 1.0);
  }

  const Index R = N + E - n;  // (velocity, F) part
  LmiBlock decay{"decrease", MatrixXd::Zero(R, R), {}, BlockSign::nsd, strict};
  for (const auto& [l, M] : m1_terms) {
    MatrixXd S = M.bottomRightCorner(R, R);
    if (S.cwiseAbs().maxCoeff() > 0) decay.terms.emplace_back(l, S);
  }
  sys.problem.add_block(std::move(decay));

  const MatrixXd U = detail::shift_complement(bf.buses(), bf.state_dim());
  LmiBlock qpsd{"q_psd", MatrixXd::Zero(N - 1, N - 1), {}, BlockSign::psd, strict};
  for (Index i = 0; i < N; ++i)
    for (Index j = i; j < N; ++j) {
      MatrixXd Qm = MatrixXd::Zero(N, N);
      Qm(i, j) = 1.0;
      Qm(j, i) = 1.0;
      qpsd.terms.emplace_back(sys.Q(i, j), U.transpose() * Qm * U);
    }
  if (fault_node) {
    LmiBlock conv{"convexity", MatrixXd::Zero(N - 1, N - 1), qpsd.terms, BlockSign::psd, strict};
    for (Index e = 0; e < E; ++e) {
      if (bf.network.from_index(e) != *fault_node && bf.network.to_index(e) != *fault_node) continue;
      const MatrixXd cc = bf.C.row(e).transpose() * bf.C.row(e);
      conv.terms.emplace_back(sys.K(e), -U.transpose() * cc * U);
    }
    sys.problem.add_block(std::move(conv));
  }
  sys.problem.add_block(std::move(qpsd));
  return sys;
}

// Independent check that V belongs to its family.
inline SdpAudit lmi_audit(const LyapunovFunction& V, double eps_psd = 1e-6, bool strict = true) {
  const auto sys = assemble_lmi(V.bracket, V.fault_node, eps_psd, strict);
  return audit_sdp_point(sys.problem, sys.pack(V.Q, V.K, V.H));
}

struct HessianAudit {
  bool passed = true;
  double min_eigenvalue = std::numeric_limits<double>::infinity();
  SystemState worst;
  int samples = 0;
};

namespace detail {

// Hit-and-run samples of {lo <= C y <= hi} in the gauge y_0 = 0, returned as
// absolute angle vectors.
inline std::vector<Eigen::VectorXd> sample_polytope(const BracketForm& bf, const PolytopeSpec& spec, int count,
                                                    std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(bf.buses());
  const auto bounds = line_bounds(bf.network, spec);
  const Eigen::MatrixXd Cy = bf.C.leftCols(n).rightCols(n - 1);
  const Eigen::VectorXd base = bf.equilibrium.angles;
  const Eigen::VectorXd s0 = bf.C.leftCols(n) * base;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n - 1);
  std::vector<Eigen::VectorXd> out;
  if (n == 1) {
    out.assign(static_cast<std::size_t>(count), base);
    return out;
  }
  const int burn = 200, thin = 5;
  for (int it = 0; static_cast<int>(out.size()) < count; ++it) {
    Eigen::VectorXd d(n - 1);
    for (Eigen::Index i = 0; i < n - 1; ++i) d(i) = normal(rng);
    const Eigen::VectorXd cd = Cy * d, cy = Cy * y + s0;
    double tlo = -std::numeric_limits<double>::infinity(), thi = std::numeric_limits<double>::infinity();
    for (Eigen::Index e = 0; e < cd.size(); ++e) {
      if (std::abs(cd(e)) < 1e-14) continue;
      const double a = (bounds[e].lo - cy(e)) / cd(e), b = (bounds[e].hi - cy(e)) / cd(e);
      tlo = std::max(tlo, std::min(a, b));
      thi = std::min(thi, std::max(a, b));
    }
    if (!(thi > tlo) || !std::isfinite(tlo) || !std::isfinite(thi)) continue;
    y += (tlo + (thi - tlo) * unif(rng)) * d;
    if (it >= burn && it % thin == 0) {
      Eigen::VectorXd ang = base;
      ang.tail(n - 1) += y;
      out.push_back(ang);
    }
  }
  return out;
}

}  // namespace detail

inline HessianAudit hessian_psd_on(const LyapunovFunction& V, const PolytopeSpec& spec, int n_samples,
                                   std::uint64_t seed = 1) {
  HessianAudit audit;
  const auto g = static_cast<Eigen::Index>(V.bracket.generators());
  for (const auto& ang : detail::sample_polytope(V.bracket, spec, n_samples, seed)) {
    const SystemState s{ang, Eigen::VectorXd::Zero(g)};
    const double lam = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(hessian(V, s), Eigen::EigenvaluesOnly)
                           .eigenvalues()
                           .minCoeff();
    ++audit.samples;
    if (lam < audit.min_eigenvalue) {
      audit.min_eigenvalue = lam;
      audit.worst = s;
    }
  }
  audit.passed = audit.min_eigenvalue >= -1e-8;
  return audit;
}

struct RegionEstimate {
  LyapunovFunction function;
  PolytopeSpec polytope;
  double vmin = 0.0;
};

struct BoundaryMinimum {
  double value = std::numeric_limits<double>::infinity();
  SystemState state;  // minimizing boundary state
  std::size_t line = 0;  // line whose bound is active there
};

// Least value of V over the polytope boundary, velocities eliminated.
inline BoundaryMinimum boundary_minimum(const LyapunovFunction& V, const PolytopeSpec& spec) {
  using Eigen::Index;
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  const auto& bf = V.bracket;
  const auto n = static_cast<Index>(bf.buses());
  const auto N = static_cast<Index>(bf.state_dim());
  const auto E = static_cast<Index>(bf.edges());
  if (n < 2 || E == 0) throw ValidationError("vmin: network has no lines");
  const auto bounds = line_bounds(bf.network, spec);

  const MatrixXd Qdd = V.Q.topLeftCorner(n, n);
  const MatrixXd Qdw = V.Q.topRightCorner(n, N - n);
  const MatrixXd Qww = V.Q.bottomRightCorner(N - n, N - n);
  MatrixXd S = Qdd;
  MatrixXd W = MatrixXd::Zero(N - n, n);  // optimal velocities = -W * (angle offsets)
  if (N > n) {
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(Qww);
    W = cod.solve(MatrixXd(Qdw.transpose()));
    S -= Qdw * W;
  }
  S = 0.5 * (S + S.transpose());
  const MatrixXd Sy = S.bottomRightCorner(n - 1, n - 1);
  const MatrixXd Cy = bf.C.leftCols(n).rightCols(n - 1);
  const VectorXd s0 = bf.star;  // line angles at y = 0
  const VectorXd sinstar = s0.array().sin();
  const VectorXd K = V.K;
  // constant offset so that f(y) = V(anchor + y, optimal omega)
  SmoothFunction f{
      [=](const VectorXd& y) {
        const VectorXd de = Cy * y + s0;
        return 0.5 * y.dot(Sy * y) - K.dot(VectorXd(de.array().cos() + de.array() * sinstar.array()));
      },
      [=](const VectorXd& y) {
        const VectorXd de = Cy * y + s0;
        return VectorXd(Sy * y + Cy.transpose() * K.cwiseProduct(VectorXd(de.array().sin() - sinstar.array())));
      },
      [=](const VectorXd& y) {
        const VectorXd de = Cy * y + s0;
        const VectorXd w = K.cwiseProduct(VectorXd(de.array().cos()));
        return MatrixXd(Sy + Cy.transpose() * w.asDiagonal() * Cy);
      }};

  BoundaryMinimum best;
  for (Index e = 0; e < E; ++e) {
    for (const double side : {bounds[e].lo, bounds[e].hi}) {
      // interior point of the facet: max margin s subject to the other boxes
      LpProblem lp;
      for (Index i = 0; i < n - 1; ++i) lp.add_variable("y" + std::to_string(i));
      const auto sv = lp.add_variable("s", -std::numeric_limits<double>::infinity(), 1.0);
      lp.objective[sv] = -1.0;
      auto row_terms = [&](Index r) {
        std::vector<std::pair<std::size_t, double>> t;
        for (Index i = 0; i < n - 1; ++i)
          if (Cy(r, i) != 0) t.emplace_back(static_cast<std::size_t>(i), Cy(r, i));
        return t;
      };
      lp.add_constraint(row_terms(e), Relation::equal, side - s0(e));
      for (Index r = 0; r < E; ++r) {
        if (r == e) continue;
        auto up = row_terms(r);
        up.emplace_back(sv, 1.0);
        lp.add_constraint(up, Relation::less_equal, bounds[r].hi - s0(r));
        auto dn = row_terms(r);
        dn.emplace_back(sv, -1.0);
        lp.add_constraint(dn, Relation::greater_equal, bounds[r].lo - s0(r));
      }
      LpSolution start;
      try {
        start = solve_lp(lp);
      } catch (const SolverError&) {
        continue;  // empty facet
      }
      if (!(start.x(sv) > 1e-9)) continue;  // facet without relative interior
      BarrierProblem bp;
      bp.objective = f;
      for (Index r = 0; r < E; ++r) {
        if (r == e) continue;
        const VectorXd c = Cy.row(r).transpose();
        bp.inequalities.push_back(affine_function(c, s0(r) - bounds[r].hi));
        bp.inequalities.push_back(affine_function(-c, bounds[r].lo - s0(r)));
      }
      bp.A = Cy.row(e);
      bp.b = VectorXd::Constant(1, side - s0(e));
      BarrierOptions opt;
      opt.gap_tol = 1e-12;
      const auto r = solve_barrier(bp, start.x.head(n - 1), opt);
      if (!std::isfinite(r.objective)) throw SolverError(SolverError::Kind::not_converged, "facet solver failed");
      if (r.objective < best.value) {
        VectorXd offset = VectorXd::Zero(n);
        offset.tail(n - 1) = r.x;
        best = {r.objective, {bf.equilibrium.angles + offset, -W * offset}, static_cast<std::size_t>(e)};
      }
    }
  }
  if (!std::isfinite(best.value))
    throw SolverError(SolverError::Kind::not_converged, "polytope has no usable facet");
  return best;
}

inline double vmin(const LyapunovFunction& V, const PolytopeSpec& spec) { return boundary_minimum(V, spec).value; }

struct Certificate {
  enum class Reason { none, outside_polytope, value_not_below_vmin };
  SystemState state;
  RegionEstimate estimate;
  double value = 0.0;
  bool certified = false;
  Reason reason = Reason::none;
  int iterations = 0;
  double epsilon_final = 0.0;
};

inline const char* to_string(Certificate::Reason r) {
  switch (r) {
    case Certificate::Reason::none: return "none";
    case Certificate::Reason::outside_polytope: return "outside polytope";
    case Certificate::Reason::value_not_below_vmin: return "value >= vmin";
  }
  return "none";
}

inline Certificate certify(const LyapunovFunction& V, const PolytopeSpec& spec, const SystemState& x0,
                           std::optional<double> known_vmin = std::nullopt) {
  check_state(V.bracket.network, x0);
  Certificate c;
  c.state = x0;
  c.estimate = {V, spec, known_vmin ? *known_vmin : vmin(V, spec)};
  c.value = evaluate(V, x0);
  const bool inside = in_polytope(V.bracket.network, x0.angles, spec).inside;
  if (!inside)
    c.reason = Certificate::Reason::outside_polytope;
  else if (!(c.value < c.estimate.vmin))
    c.reason = Certificate::Reason::value_not_below_vmin;
  c.certified = inside && c.value < c.estimate.vmin;
  return c;
}

struct AdaptOptions {
  double eps0 = 0.0;  // <= 0 picks 10% of the first member's barrier height
  int max_iter = 60;
  double eps_psd = 1e-6;
  SdpMethod method = SdpMethod::barrier;
};

struct AdaptResult {
  std::optional<LyapunovFunction> function;  // first certifying member
  std::optional<Certificate> certificate;    // of that member, or of the last member tried
  int iterations = 0;
  double epsilon_final = 0.0;
  std::vector<double> vmin_history;
  std::vector<double> value_history;
  std::string message;
  bool certified() const { return function.has_value(); }
};

// Family member for the polytope: global for uniform boxes, fault-dependent otherwise.
inline std::optional<std::size_t> family_for(const PolytopeSpec& spec) {
  if (spec.style == PolytopeSpec::Style::fault_dependent) return spec.node;
  return std::nullopt;
}

// Adaptation loop: cut V(x0) <= previous vmin - eps until x0 is certified,
// halving eps whenever the cut makes the family empty.
inline AdaptResult adapt(const BracketForm& bf, const PolytopeSpec& spec, const SystemState& x0,
                         const AdaptOptions& opt = {}) {
  check_state(bf.network, x0);
  AdaptResult out;
  if (spec.style == PolytopeSpec::Style::uniform &&
      !in_polytope(bf.network, bf.equilibrium.angles, spec).inside) {
    out.message = "anchor equilibrium lies outside the polytope";
    return out;
  }
  const auto fault = family_for(spec);
  LmiSystem sys = assemble_lmi(bf, fault, opt.eps_psd);
  SdpOptions sopt;
  sopt.method = opt.method;

  // cut coefficients: V(x0) = sum_ij c_ij Q_ij - sum_e K_e p_e
  const Eigen::VectorXd x = bf.to_state(x0);
  const Eigen::VectorXd de = line_angles(bf, x0);
  std::vector<std::pair<std::size_t, double>> cut_terms;
  for (std::size_t i = 0; i < sys.state_dim; ++i)
    for (std::size_t j = i; j < sys.state_dim; ++j) {
      const double c = (i == j ? 0.5 : 1.0) * x(i) * x(j);
      if (c != 0) cut_terms.emplace_back(sys.Q(i, j), c);
    }
  for (std::size_t e = 0; e < bf.edges(); ++e)
    cut_terms.emplace_back(sys.K(e), -(std::cos(de(e)) + de(e) * std::sin(bf.star(e))));

  auto member = [&](const Eigen::VectorXd& z) {
    LyapunovFunction V{bf, {}, {}, {}, fault};
    sys.unpack(z, V.Q, V.K, V.H);
    return V;
  };

  auto first = solve_sdp_feasibility(sys.problem, sopt);
  if (!first.found) {
    out.message = "Lyapunov family is empty: " + first.message;
    return out;
  }
  LyapunovFunction V = member(first.z);
  double vm = vmin(V, spec);
  Certificate cert = certify(V, spec, x0, vm);
  out.vmin_history.push_back(vm);
  out.value_history.push_back(cert.value);
  const double anchor_value = evaluate(V, SystemState::at_rest(bf.equilibrium.angles, bf.generators()));
  double eps = opt.eps0 > 0 ? opt.eps0 : 0.1 * (vm - anchor_value);
  const double floor = eps / 1024.0;
  out.epsilon_final = eps;
  auto finish = [&](Certificate c) {
    c.iterations = out.iterations;
    c.epsilon_final = eps;
    out.epsilon_final = eps;
    out.certificate = c;
    if (c.certified) out.function = c.estimate.function;
    return out;
  };
  if (cert.certified || cert.reason == Certificate::Reason::outside_polytope) {
    if (!cert.certified) out.message = "state lies outside the polytope";
    return finish(cert);
  }
  double prev = vm;
  while (out.iterations < opt.max_iter) {
    ++out.iterations;
    SdpFeasibility cut_problem = sys.problem;
    cut_problem.add_inequality(cut_terms, prev - eps);
    sopt.start = first.z;
    auto r = solve_sdp_feasibility(cut_problem, sopt);
    if (!r.found) {
      eps /= 2;
      if (eps < floor) {
        out.message = "adaptation stalled at the epsilon floor";
        return finish(cert);
      }
      continue;
    }
    first = r;
    V = member(r.z);
    vm = vmin(V, spec);
    cert = certify(V, spec, x0, vm);
    out.vmin_history.push_back(vm);
    out.value_history.push_back(cert.value);
    if (cert.certified) return finish(cert);
    prev = vm;
  }
  out.message = "adaptation budget exhausted";
  return finish(cert);
}

}  // namespace gridshift
