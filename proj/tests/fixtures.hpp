#pragma once

#include <Eigen/Dense>

#include <random>
#include <string>
#include <vector>

#include "gridshift/netmodel.hpp"

namespace fixtures {

inline std::string source_path(const std::string& rel) { return std::string(GRIDSHIFT_SOURCE_DIR) + "/" + rel; }

inline gridshift::PowerNetwork kundur9() { return gridshift::load_case_file(source_path("cases/kundur9.json")); }

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x(i++) = d;
  return x;
}

// Operating point and fault-cleared state of the 9-bus study.
inline Eigen::VectorXd origin_angles() {
  return vec({-0.1629, 0.4416, 0.3623, -0.3563, -0.3608, -0.3651, 0.1680, 0.1362, 0.1371});
}
inline Eigen::VectorXd fault_angles() {
  return vec({0.025, -0.023, 0.041, 0.012, -2.917, -0.004, 0.907, 0.021, 0.023});
}
inline Eigen::VectorXd fault_velocities() { return vec({-0.016, -0.021, 0.014}); }
inline Eigen::VectorXd stage1_injections() {
  return vec({0.5890, 0.5930, 0.5989, -0.0333, -0.0617, -0.0165, -0.5639, -0.5, -0.6054});
}
// Rounded values sum to -1e-4; spread the imbalance evenly.
inline Eigen::VectorXd balanced(const Eigen::VectorXd& p) { return p.array() - p.mean(); }
inline Eigen::VectorXd stage1_angles() {
  return vec({0.0581, 0.0042, 0.0070, 0.0271, 0.0042, 0.0070, -0.0308, -0.0486, -0.0281});
}

inline Eigen::VectorXd differences(const Eigen::VectorXd& x) { return x.array() - x(0); }

// Two-bus generator-load network.
inline gridshift::PowerNetwork two_bus(double p, double b, double m = 1.0, double d_gen = 1.0,
                                       double d_load = 1.0) {
  using namespace gridshift;
  std::vector<Bus> buses{{1, BusKind::generator, 1.0, m, d_gen, p}, {2, BusKind::load, 1.0, 0.0, d_load, -p}};
  std::vector<Line> lines{{1, 2, b, true, SusceptanceBounds{0.0, 10.0 * b}}};
  return PowerNetwork(buses, lines);
}

// Random connected network: spanning tree plus extra edges, balanced injections.
inline gridshift::PowerNetwork random_network(std::mt19937_64& rng, int n, double injection_scale = 1.0,
                                              bool all_generators = false) {
  using namespace gridshift;
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<Bus> buses;
  double sum = 0;
  for (int k = 0; k < n; ++k) {
    Bus b;
    b.id = k + 1;
    b.kind = (all_generators || k % 2 == 0) ? BusKind::generator : BusKind::load;
    b.voltage = 0.95 + 0.1 * U(rng);
    b.inertia = b.is_generator() ? 0.05 + 0.2 * U(rng) : 0.0;
    b.damping = 0.02 + 0.1 * U(rng);
    b.injection = injection_scale * (2 * U(rng) - 1);
    sum += b.injection;
    buses.push_back(b);
  }
  for (auto& b : buses) b.injection -= sum / n;
  std::vector<Line> lines;
  for (int k = 1; k < n; ++k) {
    const int parent = static_cast<int>(U(rng) * k);
    lines.push_back({parent + 1, k + 1, 1.0 + 9.0 * U(rng), false, std::nullopt});
  }
  const int extra = n / 2;
  for (int t = 0; t < extra; ++t) {
    const int a = static_cast<int>(U(rng) * n), c = static_cast<int>(U(rng) * n);
    if (a == c) continue;
    bool dup = false;
    for (const auto& l : lines)
      if ((l.from == a + 1 && l.to == c + 1) || (l.from == c + 1 && l.to == a + 1)) dup = true;
    if (!dup) lines.push_back({a + 1, c + 1, 1.0 + 9.0 * U(rng), false, std::nullopt});
  }
  return PowerNetwork(buses, lines);
}

}  // namespace fixtures
