#include <gtest/gtest.h>

#include <numbers>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "gridshift/dynamics.hpp"

using namespace gridshift;

namespace {

SystemState fault_state() { return {fixtures::fault_angles(), fixtures::fault_velocities()}; }

double max_line_angle(const PowerNetwork& net, const Trajectory& traj) {
  double worst = 0;
  for (const auto& s : traj.states)
    for (std::size_t e = 0; e < net.line_count(); ++e)
      worst = std::max(worst, std::abs(s.angles(net.from_index(e)) - s.angles(net.to_index(e))));
  return worst;
}

double max_pair_difference(const Trajectory& traj) {
  double worst = 0;
  for (const auto& s : traj.states) worst = std::max(worst, s.angles.maxCoeff() - s.angles.minCoeff());
  return worst;
}

// Generator-only ring with negligible damping.
PowerNetwork undamped_ring(int n) {
  std::vector<Bus> buses;
  for (int k = 0; k < n; ++k) buses.push_back({k + 1, BusKind::generator, 1.0, 0.1 + 0.05 * k, 1e-12, 0.0});
  buses[0].injection = 0.3;
  buses[1].injection = -0.3;
  std::vector<Line> lines;
  for (int k = 0; k < n; ++k) lines.push_back({k + 1, (k + 1) % n + 1, 2.0 + k, false, std::nullopt});
  return PowerNetwork(buses, lines);
}

}  // namespace

TEST(Derivative, ZeroAtEquilibrium) {
  const auto net = fixtures::kundur9();
  const auto eq = solve_equilibrium(net, Eigen::VectorXd::Zero(9));
  const auto r = derivative(net, SystemState::at_rest(eq.angles, 3));
  EXPECT_LT(r.angles.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(r.velocities.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Derivative, TwoBusSubstitution) {
  const auto net = fixtures::two_bus(0.0, 1.0);
  const SystemState x{fixtures::vec({std::numbers::pi / 2, 0.0}), fixtures::vec({0.0})};
  const auto r = derivative(net, x);
  EXPECT_NEAR(r.velocities(0), -1.0, 1e-15);
  EXPECT_NEAR(r.angles(1), 1.0, 1e-15);
  EXPECT_EQ(r.angles(0), 0.0);
}

TEST(Derivative, NineBusFaultStateBusFiveRate) {
  const auto net = fixtures::kundur9();
  const auto x = fault_state();
  const auto r = derivative(net, x);
  EXPECT_TRUE(r.angles.allFinite());
  EXPECT_TRUE(r.velocities.allFinite());
  const auto five = net.index_of(5);
  double flow = 0;
  for (std::size_t e = 0; e < net.line_count(); ++e) {
    const auto k = net.from_index(e), j = net.to_index(e);
    if (k == five) flow += net.coupling(e) * std::sin(x.angles(k) - x.angles(j));
    if (j == five) flow += net.coupling(e) * std::sin(x.angles(j) - x.angles(k));
  }
  const double d5 = net.buses()[five].damping, p5 = net.buses()[five].injection;
  EXPECT_NEAR(r.angles(five), (p5 - flow) / d5, 1e-12);
}

TEST(Simulate, EquilibriumStaysPut) {
  const auto net = fixtures::kundur9();
  const auto eq = solve_equilibrium(net, Eigen::VectorXd::Zero(9));
  SimConfig cfg;
  cfg.record_every = 1000;
  const auto traj = simulate(net, SystemState::at_rest(eq.angles, 3), cfg);
  for (const auto& s : traj.states) {
    EXPECT_LT((s.angles - eq.angles).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT(s.velocities.cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Simulate, UncontrolledFaultLosesSynchronism) {
  const auto net = fixtures::kundur9();
  SimConfig cfg;
  cfg.horizon = 30;
  cfg.record_every = 10;
  const auto traj = simulate(net, fault_state(), cfg);
  EXPECT_GT(max_pair_difference(traj), 6.0);
  EXPECT_GT(max_line_angle(net, traj), std::numbers::pi / 2);
  const auto eq = solve_equilibrium(net, Eigen::VectorXd::Zero(9));
  EXPECT_FALSE(detect_convergence(traj, eq, 0.05, 1.0).has_value());
}

TEST(Simulate, InjectionControlConvergesToStageOne) {
  const auto base = fixtures::kundur9();
  const auto net = base.with_injections(fixtures::balanced(fixtures::stage1_injections()), "stage1");
  const auto eq1 = solve_equilibrium(net, approx_equilibrium(net, net.injections()));
  SimConfig cfg;
  cfg.horizon = 60;
  cfg.record_every = 10;
  const auto traj = simulate(net, fault_state(), cfg);
  EXPECT_LT(distance_to(traj.states.back(), eq1), 0.05);
  const auto t = detect_convergence(traj, eq1, 0.05, 1.0);
  ASSERT_TRUE(t.has_value());
  EXPECT_LT(*t, 60.0);
}

TEST(Simulate, Rk4ErrorRatio) {
  const auto net = fixtures::kundur9();
  const auto eq = solve_equilibrium(net, Eigen::VectorXd::Zero(9));
  SystemState x0 = SystemState::at_rest(eq.angles, 3);
  x0.angles(4) += 0.3;
  x0.velocities(0) = 0.2;
  auto end_state = [&](double dt) {
    SimConfig cfg;
    cfg.dt = dt;
    cfg.horizon = 1.0;
    cfg.record_every = 1 << 20;
    const auto s = simulate(net, x0, cfg).states.back();
    Eigen::VectorXd v(12);
    v << s.angles, s.velocities;
    return v;
  };
  const double dt = 2.5e-4;
  const Eigen::VectorXd ref = end_state(dt / 8);
  const double e1 = (end_state(dt) - ref).norm();
  const double e2 = (end_state(dt / 2) - ref).norm();
  const double ratio = e1 / e2;
  EXPECT_GE(ratio, 12.0);
  EXPECT_LE(ratio, 20.0);
}

TEST(Simulate, EnergyConservedWithoutDamping) {
  const auto net = undamped_ring(4);
  const auto eq = solve_equilibrium(net, Eigen::VectorXd::Zero(4));
  SystemState x0 = SystemState::at_rest(eq.angles, 4);
  x0.velocities << 0.4, -0.2, 0.1, -0.3;
  SimConfig cfg;
  cfg.horizon = 10;
  cfg.record_every = 100;
  const auto traj = simulate(net, x0, cfg);
  const double e0 = energy_function(net, traj.states.front());
  double drift = 0;
  for (const auto& s : traj.states) drift = std::max(drift, std::abs(energy_function(net, s) - e0));
  EXPECT_LE(drift / std::abs(e0), 1e-6);
}

TEST(Simulate, EnergyNonIncreasingWithDamping) {
  // all-generator network so that the energy function is a true Lyapunov function
  std::mt19937_64 rng(17);
  for (int t = 0; t < 5; ++t) {
    const auto net = fixtures::random_network(rng, 5, 0.3, true);
    const auto eq = solve_equilibrium(net, approx_equilibrium(net, net.injections()));
    SystemState x0 = SystemState::at_rest(eq.angles, net.generator_count());
    std::uniform_real_distribution<double> U(-0.3, 0.3);
    for (Eigen::Index k = 0; k < x0.angles.size(); ++k) x0.angles(k) += U(rng);
    SimConfig cfg;
    cfg.horizon = 5;
    const auto traj = simulate(net, x0, cfg);
    for (std::size_t i = 1; i < traj.states.size(); ++i) {
      if (!in_polytope(net, traj.states[i].angles, PolytopeSpec::uniform(std::numbers::pi / 2))) break;
      EXPECT_LE(energy_function(net, traj.states[i]) - energy_function(net, traj.states[i - 1]), 1e-7);
    }
  }
}

TEST(Simulate, UniformShiftInvariance) {
  const auto net = fixtures::kundur9();
  SimConfig cfg;
  cfg.horizon = 2;
  cfg.record_every = 50;
  SystemState shifted = fault_state();
  shifted.angles.array() += 1.0;
  const auto a = simulate(net, fault_state(), cfg);
  const auto b = simulate(net, shifted, cfg);
  ASSERT_EQ(a.states.size(), b.states.size());
  for (std::size_t i = 0; i < a.states.size(); ++i) {
    EXPECT_LT((fixtures::differences(a.states[i].angles) - fixtures::differences(b.states[i].angles))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-9);
  }
}

TEST(Simulate, HookFiresOnceAndChangesNetwork) {
  const auto net = fixtures::kundur9();
  const auto eq = solve_equilibrium(net, Eigen::VectorXd::Zero(9));
  SimConfig cfg;
  cfg.horizon = 1;
  cfg.hooks.push_back({"halve", [](double t, const SystemState&) { return t >= 0.5 - 1e-12; },
                       [](const PowerNetwork& n) { return n.with_injections(0.5 * n.injections(), "half"); },
                       std::nullopt});
  cfg.hooks.push_back({"after", [](double, const SystemState&) { return true; },
                       [](const PowerNetwork& n) { return n; }, 0});
  const auto traj = simulate(net, SystemState::at_rest(eq.angles, 3), cfg);
  ASSERT_EQ(traj.events.size(), 2u);
  EXPECT_NEAR(traj.events[0].time, 0.5, 1e-12);
  EXPECT_EQ(traj.events[1].label, "after");
  EXPECT_NEAR(traj.events[1].time, 0.5, 1e-12);
  EXPECT_GT((traj.states.back().angles - eq.angles).norm(), 1e-3);
}

TEST(Simulate, RejectsBadConfig) {
  const auto net = fixtures::kundur9();
  SimConfig cfg;
  cfg.dt = 0;
  EXPECT_THROW(simulate(net, fault_state(), cfg), ValidationError);
  cfg.dt = 0.1;
  cfg.horizon = 0.01;
  EXPECT_THROW(simulate(net, fault_state(), cfg), ValidationError);
  EXPECT_THROW(simulate(net, SystemState::at_rest(Eigen::VectorXd::Zero(3), 3), SimConfig{}), ValidationError);
}

TEST(DistanceTo, ZeroAndShift) {
  const Eigen::VectorXd target = fixtures::origin_angles();
  EXPECT_EQ(distance_to(SystemState::at_rest(target, 3), target), 0.0);
  Eigen::VectorXd shifted = target.array() + 1.0;
  EXPECT_NEAR(distance_to(SystemState::at_rest(shifted, 3), target), 0.0, 1e-14);
}

TEST(DistanceTo, ScalarLoopAgreement) {
  const Eigen::VectorXd a = fixtures::fault_angles(), b = fixtures::stage1_angles();
  double s = 0;
  for (int i = 1; i < 9; ++i) {
    const double d = (a[i] - a[0]) - (b[i] - b[0]);
    s += d * d;
  }
  const double got = distance_to(SystemState{a, fixtures::fault_velocities()}, b);
  EXPECT_GT(got, 0);
  EXPECT_NEAR(got, std::sqrt(s), 1e-12);
}

TEST(DetectConvergence, ConstantTrajectory) {
  Trajectory traj;
  const Eigen::VectorXd target = fixtures::origin_angles();
  for (int i = 0; i <= 200; ++i) {
    traj.times.push_back(i * 0.01);
    traj.states.push_back(SystemState::at_rest(target, 3));
  }
  const auto t = detect_convergence(traj, target, 0.05, 1.0);
  ASSERT_TRUE(t);
  EXPECT_EQ(*t, 0.0);
  EXPECT_FALSE(detect_convergence(traj, target, 0.05, 5.0));
  EXPECT_THROW(detect_convergence(traj, target, 0.0, 1.0), ValidationError);
}

TEST(TrajectoryCsv, HeaderAndFormat) {
  const auto net = fixtures::two_bus(0.5, 1.0);
  SimConfig cfg;
  cfg.dt = 0.5;
  cfg.horizon = 1.0;
  const auto traj = simulate(net, SystemState{fixtures::vec({0.1, 0.0}), fixtures::vec({0.0})}, cfg);
  std::ostringstream out;
  write_trajectory_csv(out, traj, 2, 1);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "t,delta_1,delta_2,omega_g1");
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 16), "0.000000000e+00,");
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}
