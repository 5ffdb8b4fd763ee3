#pragma once

#include <json.hpp>

#include <string>

#include "gridshift/error.hpp"

namespace gridshift {

// Every numerical tolerance in one place. Overridable from JSON
// (see apply_overrides) for tolerance experiments.
struct Tolerances {
  double newton_residual = 1e-8;
  int newton_max_iter = 50;
  double lp_kkt = 1e-8;
  int lp_max_iter = 100;
  double qcqp_gradient = 1e-7;
  double qcqp_feasibility = 1e-9;
  int barrier_max_outer = 60;
  double eps_psd = 1e-6;
  int sdp_max_sweeps = 5000;
  double convergence_tol = 0.05;
  double dwell = 1.0;
  int adapt_max_iter = 60;
};

inline Tolerances apply_overrides(Tolerances t, const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("tolerance overrides must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (!it->is_number()) throw ValidationError("tolerance override '" + k + "' is not a number");
    const double v = it->get<double>();
    if (k == "newton_residual") t.newton_residual = v;
    else if (k == "newton_max_iter") t.newton_max_iter = static_cast<int>(v);
    else if (k == "lp_kkt") t.lp_kkt = v;
    else if (k == "lp_max_iter") t.lp_max_iter = static_cast<int>(v);
    else if (k == "qcqp_gradient") t.qcqp_gradient = v;
    else if (k == "qcqp_feasibility") t.qcqp_feasibility = v;
    else if (k == "barrier_max_outer") t.barrier_max_outer = static_cast<int>(v);
    else if (k == "eps_psd") t.eps_psd = v;
    else if (k == "sdp_max_sweeps") t.sdp_max_sweeps = static_cast<int>(v);
    else if (k == "convergence_tol") t.convergence_tol = v;
    else if (k == "dwell") t.dwell = v;
    else if (k == "adapt_max_iter") t.adapt_max_iter = static_cast<int>(v);
    else throw ValidationError("unknown tolerance override '" + k + "'");
    if (!(v > 0)) throw ValidationError("tolerance override '" + k + "' must be positive");
  }
  return t;
}

}  // namespace gridshift
