#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gridshift/error.hpp"
#include "gridshift/netmodel.hpp"
#include "gridshift/powerflow.hpp"

namespace gridshift {

struct SystemState {
  Eigen::VectorXd angles;      // every bus
  Eigen::VectorXd velocities;  // generators only, in generator order

  static SystemState at_rest(const Eigen::VectorXd& angles, std::size_t generators) {
    return {angles, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(generators))};
  }
};

inline void check_state(const PowerNetwork& net, const SystemState& x) {
  if (static_cast<std::size_t>(x.angles.size()) != net.bus_count() ||
      static_cast<std::size_t>(x.velocities.size()) != net.generator_count())
    throw ValidationError("state dimensions do not match the network");
}

// Time derivative of the swing model; the returned struct holds rates
// (angle rates for every bus, accelerations for generators).
inline SystemState derivative(const PowerNetwork& net, const SystemState& x) {
  const auto n = static_cast<Eigen::Index>(net.bus_count());
  Eigen::VectorXd net_power = net.injections();
  for (std::size_t e = 0; e < net.line_count(); ++e) {
    const auto k = net.from_index(e), j = net.to_index(e);
    const double flow = net.coupling(e) * std::sin(x.angles(k) - x.angles(j));
    net_power(k) -= flow;
    net_power(j) += flow;
  }
  SystemState rate{Eigen::VectorXd(n), Eigen::VectorXd(x.velocities.size())};
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& b = net.buses()[k];
    const int g = net.generator_slot(k);
    if (g >= 0) {
      rate.angles(k) = x.velocities(g);
      rate.velocities(g) = (net_power(k) - b.damping * x.velocities(g)) / b.inertia;
    } else {
      rate.angles(k) = net_power(k) / b.damping;
    }
  }
  return rate;
}

// Kinetic plus potential energy: sum m w^2/2 - sum a cos d_kj - sum P d.
inline double energy_function(const PowerNetwork& net, const SystemState& x) {
  double v = 0;
  for (std::size_t g = 0; g < net.generator_count(); ++g)
    v += 0.5 * net.buses()[net.generator_indices()[g]].inertia * x.velocities(g) * x.velocities(g);
  for (std::size_t e = 0; e < net.line_count(); ++e)
    v -= net.coupling(e) * std::cos(x.angles(net.from_index(e)) - x.angles(net.to_index(e)));
  v -= net.injections().dot(x.angles);
  return v;
}

struct EventHook {
  std::string label;
  std::function<bool(double, const SystemState&)> trigger;
  std::function<PowerNetwork(const PowerNetwork&)> mutate;
  std::optional<std::size_t> armed_after;  // index of a hook that must fire first
};

struct SimConfig {
  double dt = 1e-3;
  double horizon = 10.0;
  double convergence_tol = 0.05;
  double dwell = 1.0;
  int record_every = 1;
  std::vector<EventHook> hooks;
};

struct EventRecord {
  double time = 0.0;
  std::string label;
  std::size_t sample = 0;  // index into Trajectory::times
};

struct Trajectory {
  std::vector<double> times;
  std::vector<SystemState> states;
  std::vector<EventRecord> events;
  std::string network_tag;
  bool diverged = false;
};

inline double distance_to(const SystemState& x, const Eigen::VectorXd& target_angles) {
  if (x.angles.size() != target_angles.size())
    throw ValidationError("distance_to: dimension mismatch");
  if (x.angles.size() == 0) return 0;
  const Eigen::VectorXd dx = x.angles.array() - x.angles(0);
  const Eigen::VectorXd dt = target_angles.array() - target_angles(0);
  return (dx - dt).norm();
}

inline double distance_to(const SystemState& x, const EquilibriumPoint& target) {
  return distance_to(x, target.angles);
}

// Trigger that fires once the state has stayed within tol of target for dwell seconds.
inline std::function<bool(double, const SystemState&)> convergence_trigger(
    Eigen::VectorXd target, double tol, double dwell) {
  std::optional<double> since;
  return [target = std::move(target), tol, dwell, since](double t, const SystemState& x) mutable {
    if (distance_to(x, target) < tol) {
      if (!since) since = t;
      return t - *since >= dwell - 1e-12;
    }
    since.reset();
    return false;
  };
}

inline Trajectory simulate(const PowerNetwork& network, const SystemState& x0,
                           const SimConfig& cfg) {
  check_state(network, x0);
  if (!(cfg.dt > 0)) throw ValidationError("SimConfig: dt must be positive");
  if (!(cfg.horizon >= cfg.dt)) throw ValidationError("SimConfig: horizon must be >= dt");
  if (cfg.record_every < 1) throw ValidationError("SimConfig: record_every must be >= 1");

  PowerNetwork net = network;
  std::vector<EventHook> hooks = cfg.hooks;  // fresh trigger state per run
  std::vector<bool> fired(hooks.size(), false);
  Trajectory traj;
  traj.network_tag = network.tag();

  const auto steps = static_cast<long>(std::llround(cfg.horizon / cfg.dt));
  const auto n = x0.angles.size();
  const auto g = x0.velocities.size();
  auto pack = [&](const SystemState& s) {
    Eigen::VectorXd v(n + g);
    v << s.angles, s.velocities;
    return v;
  };
  auto unpack = [&](const Eigen::VectorXd& v) {
    return SystemState{v.head(n), v.tail(g)};
  };
  auto rhs = [&](const Eigen::VectorXd& v) { return pack(derivative(net, unpack(v))); };

  Eigen::VectorXd y = pack(x0);
  for (long s = 0;; ++s) {
    const double t = static_cast<double>(s) * cfg.dt;
    const SystemState cur = unpack(y);
    bool event = false;
    for (std::size_t h = 0; h < hooks.size(); ++h) {
      if (fired[h]) continue;
      if (hooks[h].armed_after && !fired[*hooks[h].armed_after]) continue;
      if (hooks[h].trigger(t, cur)) {
        net = hooks[h].mutate(net);
        fired[h] = true;
        event = true;
        traj.events.push_back({t, hooks[h].label, traj.times.size()});
      }
    }
    if (event || s % cfg.record_every == 0 || s == steps) {
      traj.times.push_back(t);
      traj.states.push_back(cur);
    }
    if (s == steps) break;
    const double h = cfg.dt;
    const Eigen::VectorXd k1 = rhs(y);
    const Eigen::VectorXd k2 = rhs(y + 0.5 * h * k1);
    const Eigen::VectorXd k3 = rhs(y + 0.5 * h * k2);
    const Eigen::VectorXd k4 = rhs(y + h * k3);
    Eigen::VectorXd next = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
    if (!next.allFinite()) {
      traj.diverged = true;
      break;
    }
    y = std::move(next);
  }
  return traj;
}

inline std::optional<double> detect_convergence(const Trajectory& traj,
                                                const Eigen::VectorXd& target, double tol,
                                                double dwell) {
  if (!(tol > 0)) throw ValidationError("detect_convergence: tol must be positive");
  if (traj.times.empty()) return std::nullopt;
  const double end = traj.times.back();
  std::optional<double> start;
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    if (distance_to(traj.states[i], target) < tol) {
      if (!start) start = traj.times[i];
      if (traj.times[i] - *start >= dwell - 1e-12 && *start + dwell <= end + 1e-12) return start;
    } else {
      start.reset();
    }
  }
  return std::nullopt;
}

inline std::optional<double> detect_convergence(const Trajectory& traj,
                                                const EquilibriumPoint& target, double tol,
                                                double dwell) {
  return detect_convergence(traj, target.angles, tol, dwell);
}

inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj, std::size_t buses,
                                 std::size_t generators) {
  out << "t";
  for (std::size_t k = 1; k <= buses; ++k) out << ",delta_" << k;
  for (std::size_t g = 1; g <= generators; ++g) out << ",omega_g" << g;
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9e", traj.times[i]);
    out << buf;
    for (Eigen::Index k = 0; k < traj.states[i].angles.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.9e", traj.states[i].angles(k));
      out << ',' << buf;
    }
    for (Eigen::Index k = 0; k < traj.states[i].velocities.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.9e", traj.states[i].velocities(k));
      out << ',' << buf;
    }
    out << "\n";
  }
}

}  // namespace gridshift
