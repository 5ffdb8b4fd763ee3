#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fixtures.hpp"
#include "gridshift/optim/config.hpp"
#include "gridshift/optim/lp.hpp"
#include "gridshift/optim/qcqp.hpp"
#include "gridshift/optim/sdp.hpp"

using namespace gridshift;

TEST(SolveLp, MinMaxOfFixedValue) {
  LpProblem p;
  const auto x = p.add_variable("x"), t = p.add_variable("t");
  p.objective[t] = 1.0;
  p.add_constraint({{x, 1.0}}, Relation::equal, 3.0);
  p.add_constraint({{x, 1.0}, {t, -1.0}}, Relation::less_equal, 0.0);
  p.add_constraint({{x, -1.0}, {t, -1.0}}, Relation::less_equal, 0.0);
  const auto s = solve_lp(p);
  EXPECT_NEAR(s.objective, 3.0, 1e-8);
  EXPECT_NEAR(s.x(x), 3.0, 1e-8);
  EXPECT_LE(s.gap, 1e-8 * (1 + std::abs(s.objective)));
}

TEST(SolveLp, InfeasibleDetected) {
  LpProblem p;
  const auto x = p.add_variable("x", 1.0, 5.0);
  p.objective[x] = 1.0;
  p.add_constraint({{x, 1.0}}, Relation::less_equal, 0.0);
  try {
    solve_lp(p);
    FAIL() << "expected infeasible";
  } catch (const SolverError& e) {
    EXPECT_EQ(e.kind(), SolverError::Kind::infeasible);
  }
}

TEST(SolveLp, UnboundedDetected) {
  LpProblem p;
  const auto x = p.add_variable("x", 0.0);
  const auto y = p.add_variable("y", 0.0);
  p.objective[x] = -1.0;
  p.add_constraint({{x, 1.0}, {y, -1.0}}, Relation::less_equal, 1.0);
  try {
    solve_lp(p);
    FAIL() << "expected unbounded";
  } catch (const SolverError& e) {
    EXPECT_EQ(e.kind(), SolverError::Kind::unbounded);
  }
}

namespace {

// Brute force over all basic solutions of {G x <= h}.
double vertex_enumeration(const Eigen::MatrixXd& G, const Eigen::VectorXd& h, const Eigen::VectorXd& c) {
  const auto m = G.rows(), n = G.cols();
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> pick(static_cast<std::size_t>(n));
  std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == n) {
      Eigen::MatrixXd A(n, n);
      Eigen::VectorXd b(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        A.row(i) = G.row(pick[i]);
        b(i) = h(pick[i]);
      }
      Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
      if (lu.rank() < n) return;
      const Eigen::VectorXd x = lu.solve(b);
      if (((G * x - h).array() <= 1e-9).all()) best = std::min(best, c.dot(x));
      return;
    }
    for (int r = start; r < m; ++r) {
      pick[depth] = r;
      rec(r + 1, depth + 1);
    }
  };
  rec(0, 0);
  return best;
}

}  // namespace

TEST(SolveLp, MatchesVertexEnumeration) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> N01;
  std::uniform_real_distribution<double> U(0.2, 1.0);
  for (int t = 0; t < 30; ++t) {
    const int n = 5, extra = 4;
    Eigen::MatrixXd G(2 * n + extra, n);
    Eigen::VectorXd h(2 * n + extra), c(n);
    G.setZero();
    LpProblem p;
    for (int i = 0; i < n; ++i) {
      p.add_variable("x" + std::to_string(i), -1.0, 1.0);
      G(2 * i, i) = 1;
      G(2 * i + 1, i) = -1;
      h(2 * i) = h(2 * i + 1) = 1.0;
      c(i) = N01(rng);
      p.objective[i] = c(i);
    }
    for (int r = 0; r < extra; ++r) {
      std::vector<std::pair<std::size_t, double>> terms;
      for (int i = 0; i < n; ++i) {
        G(2 * n + r, i) = N01(rng);
        terms.emplace_back(i, G(2 * n + r, i));
      }
      h(2 * n + r) = U(rng);  // origin stays feasible
      p.add_constraint(terms, Relation::less_equal, h(2 * n + r));
    }
    const auto s = solve_lp(p);
    EXPECT_NEAR(s.objective, vertex_enumeration(G, h, c), 1e-7);
    EXPECT_LE(((G * s.x - h).array()).maxCoeff(), 1e-8);
  }
}

TEST(SolveQcqp, DiskProjection) {
  QcqpProblem p;
  p.objective = QuadraticFunction::squared_residual(Eigen::MatrixXd::Identity(2, 2), fixtures::vec({2.0, 0.0}));
  p.constraints.push_back({{2.0 * Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2), 0.0}, 1.0});
  const auto s = solve_qcqp(p);
  EXPECT_NEAR(s.x(0), 1.0, 1e-6);
  EXPECT_NEAR(s.x(1), 0.0, 1e-6);
  EXPECT_NEAR(s.objective, 1.0, 1e-6);
  EXPECT_LE(s.x.squaredNorm(), 1.0 + 1e-9);
  EXPECT_NEAR(s.multipliers(0), 1.0, 1e-5);
}

TEST(SolveQcqp, InfeasibleAndNonConvexRejected) {
  QcqpProblem p;
  p.objective = {Eigen::MatrixXd::Zero(1, 1), fixtures::vec({1.0}), 0.0};
  p.constraints.push_back({{2.0 * Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1), 0.0}, 1.0});
  p.lower = fixtures::vec({2.0});
  p.upper = fixtures::vec({3.0});
  try {
    solve_qcqp(p);
    FAIL() << "expected infeasible";
  } catch (const SolverError& e) {
    EXPECT_EQ(e.kind(), SolverError::Kind::infeasible);
  }
  QcqpProblem q;
  q.objective = {-Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1), 0.0};
  try {
    solve_qcqp(q);
    FAIL() << "expected invalid problem";
  } catch (const SolverError& e) {
    EXPECT_EQ(e.kind(), SolverError::Kind::invalid_problem);
  }
}

namespace {

QcqpProblem random_qcqp(std::mt19937_64& rng) {
  std::normal_distribution<double> N01;
  auto psd = [&]() {
    Eigen::MatrixXd M(3, 3);
    for (int i = 0; i < 9; ++i) M(i / 3, i % 3) = N01(rng);
    return Eigen::MatrixXd(M * M.transpose() * 0.5);
  };
  QcqpProblem p;
  Eigen::VectorXd q(3);
  for (int i = 0; i < 3; ++i) q(i) = 2 * N01(rng);
  p.objective = {psd(), q, 0.0};
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd a(3);
    for (int i = 0; i < 3; ++i) a(i) = 0.3 * N01(rng);
    // origin strictly feasible
    p.constraints.push_back({{psd() + 0.1 * Eigen::MatrixXd::Identity(3, 3), a, 0.0}, 0.5});
  }
  p.lower = Eigen::VectorXd::Constant(3, -1.0);
  p.upper = Eigen::VectorXd::Constant(3, 1.0);
  return p;
}

bool qcqp_feasible(const QcqpProblem& p, const Eigen::VectorXd& x) {
  for (const auto& c : p.constraints)
    if (c.f(x) > c.rhs) return false;
  return ((x - p.lower).array() >= 0).all() && ((p.upper - x).array() >= 0).all();
}

// Grid search refined by zooming around the best few separated points until
// the cell size reaches 1e-6.
double grid_oracle(const QcqpProblem& p) {
  std::vector<Eigen::Vector3d> centers{Eigen::Vector3d::Zero()};
  double half = 1.0, best = std::numeric_limits<double>::infinity();
  const int k = 40;
  while (half > 1e-6) {
    const double h = 2 * half / k;
    std::vector<std::pair<double, Eigen::Vector3d>> pts;
    for (const auto& c : centers)
      for (int i = 0; i <= k; ++i)
        for (int j = 0; j <= k; ++j)
          for (int l = 0; l <= k; ++l) {
            const Eigen::Vector3d x = c + Eigen::Vector3d(-half + i * h, -half + j * h, -half + l * h);
            if (qcqp_feasible(p, x)) pts.emplace_back(p.objective(x), x);
          }
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    if (pts.empty()) break;
    best = std::min(best, pts.front().first);
    centers.clear();
    for (const auto& [v, x] : pts) {
      bool far = true;
      for (const auto& c : centers) far = far && (c - x).lpNorm<Eigen::Infinity>() > 2 * h;
      if (far) centers.push_back(x);
      if (centers.size() == 8) break;
    }
    half = 4 * h;
  }
  return best;
}

}  // namespace

TEST(SolveQcqp, MatchesGridOracle) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 8; ++t) {
    const auto p = random_qcqp(rng);
    const auto s = solve_qcqp(p);
    const double oracle = grid_oracle(p);
    EXPECT_LE(s.objective, oracle + 1e-9);
    EXPECT_NEAR(s.objective, oracle, 1e-4);
  }
}

TEST(SolveQcqp, BeatsRandomFeasiblePoints) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int t = 0; t < 5; ++t) {
    const auto p = random_qcqp(rng);
    const auto s = solve_qcqp(p);
    EXPECT_LE(s.max_violation, 1e-9);
    int found = 0;
    while (found < 1000) {
      const Eigen::Vector3d x(U(rng), U(rng), U(rng));
      if (!qcqp_feasible(p, x)) continue;
      ++found;
      EXPECT_LE(s.objective, p.objective(x) + 1e-12);
    }
  }
}

TEST(SolveSdp, FreeSymmetricPsd) {
  for (auto method : {SdpMethod::barrier, SdpMethod::alternating_projections}) {
    SdpFeasibility p;
    const auto X = p.add_symmetric("X", 2);
    LmiBlock b{"X", Eigen::MatrixXd::Zero(2, 2), {}, BlockSign::psd, true};
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = i; j < 2; ++j) {
        Eigen::MatrixXd E = Eigen::MatrixXd::Zero(2, 2);
        E(i, j) = E(j, i) = 1.0;
        b.terms.emplace_back(X(i, j), E);
      }
    p.add_block(b);
    SdpOptions opt;
    opt.method = method;
    const auto r = solve_sdp_feasibility(p, opt);
    ASSERT_TRUE(r.found) << r.message;
    EXPECT_TRUE(audit_sdp_point(p, r.z).passed);
  }
}

TEST(SolveSdp, RandomFeasibleRoundTrip) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> N01;
  for (auto method : {SdpMethod::barrier, SdpMethod::alternating_projections}) {
    for (int t = 0; t < 10; ++t) {
      const int nv = 5;
      Eigen::VectorXd zstar(nv);
      for (int l = 0; l < nv; ++l) zstar(l) = N01(rng);
      SdpFeasibility p;
      for (int l = 0; l < nv; ++l) p.add_scalar("z" + std::to_string(l));
      Eigen::MatrixXd R(4, 4);
      for (int i = 0; i < 16; ++i) R(i / 4, i % 4) = N01(rng);
      Eigen::MatrixXd S = R * R.transpose() + 0.5 * Eigen::MatrixXd::Identity(4, 4);
      LmiBlock b{"B", S, {}, BlockSign::psd, true};
      for (int l = 0; l < nv; ++l) {
        Eigen::MatrixXd M(4, 4);
        for (int i = 0; i < 16; ++i) M(i / 4, i % 4) = N01(rng);
        M = 0.5 * (M + M.transpose());
        b.constant -= zstar(l) * M;
        b.terms.emplace_back(l, M);
      }
      p.add_block(b);
      std::vector<std::pair<std::size_t, double>> eq;
      double rhs = 0;
      for (int l = 0; l < nv; ++l) {
        const double a = N01(rng);
        eq.emplace_back(l, a);
        rhs += a * zstar(l);
      }
      p.add_equality(eq, rhs);
      p.add_inequality({{0, 1.0}}, zstar(0) + 1.0);
      ASSERT_TRUE(audit_sdp_point(p, zstar).passed);
      SdpOptions opt;
      opt.method = method;
      const auto r = solve_sdp_feasibility(p, opt);
      ASSERT_TRUE(r.found) << r.message;
      const auto a = audit_sdp_point(p, r.z);
      EXPECT_TRUE(a.passed);
      EXPECT_GE(a.block_min_eigs[0], p.eps_psd / 2);
    }
  }
}

TEST(SolveSdp, InfeasibleNotFound) {
  for (auto method : {SdpMethod::barrier, SdpMethod::alternating_projections}) {
    SdpFeasibility p;
    const auto z = p.add_scalar("z");
    // z >= 1 and z <= -1 as 1x1 blocks
    p.add_block({"lo", -Eigen::MatrixXd::Identity(1, 1), {{z, Eigen::MatrixXd::Identity(1, 1)}}, BlockSign::psd, true});
    p.add_block({"hi", Eigen::MatrixXd::Identity(1, 1), {{z, Eigen::MatrixXd::Identity(1, 1)}}, BlockSign::nsd, true});
    SdpOptions opt;
    opt.method = method;
    opt.max_sweeps = 200;
    const auto r = solve_sdp_feasibility(p, opt);
    EXPECT_FALSE(r.found);
  }
}

TEST(Tolerances, Overrides) {
  const auto t = apply_overrides(Tolerances{}, nlohmann::json::parse(R"({"eps_psd": 1e-5, "dwell": 2})"));
  EXPECT_EQ(t.eps_psd, 1e-5);
  EXPECT_EQ(t.dwell, 2.0);
  EXPECT_EQ(t.newton_residual, 1e-8);
  EXPECT_THROW(apply_overrides(Tolerances{}, nlohmann::json::parse(R"({"bogus": 1})")), ValidationError);
  EXPECT_THROW(apply_overrides(Tolerances{}, nlohmann::json::parse(R"({"eps_psd": -1})")), ValidationError);
  EXPECT_THROW(apply_overrides(Tolerances{}, nlohmann::json::parse("[1]")), ValidationError);
}
