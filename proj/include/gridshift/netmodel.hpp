#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gridshift/error.hpp"

namespace gridshift {

enum class BusKind { generator, load };

struct Bus {
  int id = 0;
  BusKind kind = BusKind::load;
  double voltage = 1.0;
  double inertia = 0.0;  // generators only
  double damping = 0.0;
  double injection = 0.0;  // P_m for generators, -P_d for loads

  bool is_generator() const { return kind == BusKind::generator; }
};

struct SusceptanceBounds {
  double min = 0.0;
  double max = 0.0;
};

struct Line {
  int from = 0;
  int to = 0;
  double susceptance = 0.0;
  bool controllable = false;
  std::optional<SusceptanceBounds> bounds;
};

// Injection imbalance tolerated without a slack bus.
inline constexpr double kBalanceTolerance = 1e-6;

class PowerNetwork {
 public:
  PowerNetwork() = default;

  PowerNetwork(std::vector<Bus> buses, std::vector<Line> lines, std::string tag = "base")
      : buses_(std::move(buses)), lines_(std::move(lines)), tag_(std::move(tag)) {
    index_buses();
    validate();
  }

  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Line>& lines() const { return lines_; }
  const std::string& tag() const { return tag_; }

  std::size_t bus_count() const { return buses_.size(); }
  std::size_t line_count() const { return lines_.size(); }
  std::size_t generator_count() const { return generators_.size(); }

  // Bus indices (0-based, file order) of the generators, in file order.
  const std::vector<std::size_t>& generator_indices() const { return generators_; }

  // Position of bus k among the generators, or -1 for loads.
  int generator_slot(std::size_t k) const { return slot_[k]; }

  std::size_t index_of(int bus_id) const {
    auto it = index_.find(bus_id);
    if (it == index_.end()) throw ValidationError("unknown bus id " + std::to_string(bus_id));
    return it->second;
  }
  bool has_bus(int bus_id) const { return index_.count(bus_id) != 0; }

  std::size_t from_index(std::size_t e) const { return ends_[e].first; }
  std::size_t to_index(std::size_t e) const { return ends_[e].second; }

  // Line index joining the two buses (either orientation), if any.
  std::optional<std::size_t> find_line(int a, int b) const {
    for (std::size_t e = 0; e < lines_.size(); ++e) {
      const auto& l = lines_[e];
      if ((l.from == a && l.to == b) || (l.from == b && l.to == a)) return e;
    }
    return std::nullopt;
  }

  // a_kj = V_k V_j B_kj
  double coupling(std::size_t e) const {
    return buses_[ends_[e].first].voltage * buses_[ends_[e].second].voltage * lines_[e].susceptance;
  }

  Eigen::VectorXd couplings() const {
    Eigen::VectorXd a(lines_.size());
    for (std::size_t e = 0; e < lines_.size(); ++e) a(e) = coupling(e);
    return a;
  }

  Eigen::VectorXd injections() const {
    Eigen::VectorXd p(buses_.size());
    for (std::size_t k = 0; k < buses_.size(); ++k) p(k) = buses_[k].injection;
    return p;
  }

  Eigen::VectorXd susceptances() const {
    Eigen::VectorXd b(lines_.size());
    for (std::size_t e = 0; e < lines_.size(); ++e) b(e) = lines_[e].susceptance;
    return b;
  }

  PowerNetwork with_injections(const Eigen::VectorXd& p, std::string tag) const {
    if (static_cast<std::size_t>(p.size()) != buses_.size())
      throw ValidationError("injection vector has wrong dimension");
    auto buses = buses_;
    for (std::size_t k = 0; k < buses.size(); ++k) buses[k].injection = p(k);
    return PowerNetwork(std::move(buses), lines_, std::move(tag));
  }

  // New susceptance per line index; controllable bounds are enforced.
  PowerNetwork with_susceptances(const std::vector<std::pair<std::size_t, double>>& changes,
                                 std::string tag) const {
    auto lines = lines_;
    for (const auto& [e, b] : changes) {
      if (e >= lines.size()) throw ValidationError("line index out of range");
      lines[e].susceptance = b;
    }
    return PowerNetwork(buses_, std::move(lines), std::move(tag));
  }

 private:
  void index_buses() {
    index_.clear();
    generators_.clear();
    slot_.assign(buses_.size(), -1);
    for (std::size_t k = 0; k < buses_.size(); ++k) {
      if (!index_.emplace(buses_[k].id, k).second)
        throw ValidationError("duplicate bus id " + std::to_string(buses_[k].id));
      if (buses_[k].is_generator()) {
        slot_[k] = static_cast<int>(generators_.size());
        generators_.push_back(k);
      }
    }
    ends_.clear();
    for (const auto& l : lines_) {
      auto f = index_.find(l.from), t = index_.find(l.to);
      if (f == index_.end() || t == index_.end())
        throw ValidationError("line " + std::to_string(l.from) + "-" + std::to_string(l.to) +
                              " references a missing bus");
      ends_.emplace_back(f->second, t->second);
    }
  }

  void validate() const {
    if (buses_.empty()) throw ValidationError("network has no buses");
    for (const auto& b : buses_) {
      const std::string where = "bus " + std::to_string(b.id);
      if (!(b.voltage > 0)) throw ValidationError(where + ": voltage must be positive");
      if (!(b.damping > 0)) throw ValidationError(where + ": damping must be positive");
      if (b.is_generator() && !(b.inertia > 0))
        throw ValidationError(where + ": generator inertia must be positive");
      if (!std::isfinite(b.injection)) throw ValidationError(where + ": injection is not finite");
    }
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::size_t e = 0; e < lines_.size(); ++e) {
      const auto& l = lines_[e];
      const std::string where = "line " + std::to_string(l.from) + "-" + std::to_string(l.to);
      if (l.from == l.to) throw ValidationError(where + ": self loop");
      if (!(l.susceptance >= 0) || !std::isfinite(l.susceptance))
        throw ValidationError(where + ": susceptance must be nonnegative");
      if (l.controllable) {
        if (!l.bounds) throw ValidationError(where + ": controllable line needs B_min/B_max");
        const double tol = 1e-12 * std::max(1.0, l.bounds->max);
        if (l.bounds->min < 0 || l.bounds->min > l.bounds->max)
          throw ValidationError(where + ": invalid susceptance bounds");
        if (l.susceptance < l.bounds->min - tol || l.susceptance > l.bounds->max + tol)
          throw ValidationError(where + ": susceptance outside its bounds");
      }
      auto key = std::minmax(ends_[e].first, ends_[e].second);
      if (!seen.insert(key).second) throw ValidationError(where + ": duplicate line");
    }
    // connectivity over lines that actually couple buses
    std::vector<std::vector<std::size_t>> adj(buses_.size());
    for (std::size_t e = 0; e < lines_.size(); ++e) {
      if (coupling(e) <= 0) continue;
      adj[ends_[e].first].push_back(ends_[e].second);
      adj[ends_[e].second].push_back(ends_[e].first);
    }
    std::vector<bool> reached(buses_.size(), false);
    std::queue<std::size_t> q;
    q.push(0);
    reached[0] = true;
    std::size_t count = 1;
    while (!q.empty()) {
      auto k = q.front();
      q.pop();
      for (auto j : adj[k])
        if (!reached[j]) {
          reached[j] = true;
          ++count;
          q.push(j);
        }
    }
    if (count != buses_.size()) throw ValidationError("network graph is disconnected");
    double sum = 0, scale = 0;
    for (const auto& b : buses_) {
      sum += b.injection;
      scale += std::abs(b.injection);
    }
    if (std::abs(sum) > kBalanceTolerance * std::max(1.0, scale))
      throw ValidationError("injections are not balanced (sum = " + std::to_string(sum) + ")");
  }

  std::vector<Bus> buses_;
  std::vector<Line> lines_;
  std::string tag_ = "base";
  std::map<int, std::size_t> index_;
  std::vector<std::size_t> generators_;
  std::vector<int> slot_;
  std::vector<std::pair<std::size_t, std::size_t>> ends_;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                           const std::string& where) {
  if (!obj.is_object()) throw ValidationError(where + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = std::any_of(allowed.begin(), allowed.end(),
                          [&](const char* k) { return it.key() == k; });
    if (!ok) throw ValidationError(where + ": unknown field '" + it.key() + "'");
  }
}

inline double get_number(const nlohmann::json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number())
    throw ValidationError(where + ": field '" + key + "' must be a number");
  return it->get<double>();
}

inline std::optional<double> get_optional_number(const nlohmann::json& obj, const char* key,
                                                 const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw ValidationError(where + ": field '" + key + "' must be a number");
  return it->get<double>();
}

inline int get_int(const nlohmann::json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number_integer())
    throw ValidationError(where + ": field '" + key + "' must be an integer");
  return it->get<int>();
}

}  // namespace detail

// Parses a case document. Parallel non-controllable lines are merged by
// summing their susceptances (double circuits).
inline PowerNetwork load_case(std::string_view text, std::string tag = "base") {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("case file parse error: ") + e.what());
  }
  detail::reject_unknown(doc, {"buses", "lines", "slack_bus"}, "case");
  if (!doc.contains("buses") || !doc["buses"].is_array())
    throw ValidationError("case: 'buses' must be an array");
  if (!doc.contains("lines") || !doc["lines"].is_array())
    throw ValidationError("case: 'lines' must be an array");

  std::vector<Bus> buses;
  for (const auto& jb : doc["buses"]) {
    detail::reject_unknown(jb, {"id", "kind", "V", "m", "d", "P"}, "bus");
    Bus b;
    b.id = detail::get_int(jb, "id", "bus");
    const std::string where = "bus " + std::to_string(b.id);
    if (!jb.contains("kind") || !jb["kind"].is_string())
      throw ValidationError(where + ": 'kind' must be \"gen\" or \"load\"");
    const auto kind = jb["kind"].get<std::string>();
    if (kind == "gen")
      b.kind = BusKind::generator;
    else if (kind == "load")
      b.kind = BusKind::load;
    else
      throw ValidationError(where + ": 'kind' must be \"gen\" or \"load\"");
    b.voltage = detail::get_number(jb, "V", where);
    b.damping = detail::get_number(jb, "d", where);
    b.injection = detail::get_number(jb, "P", where);
    auto m = detail::get_optional_number(jb, "m", where);
    if (b.is_generator()) {
      if (!m) throw ValidationError(where + ": generator needs inertia 'm'");
      b.inertia = *m;
    } else if (m) {
      throw ValidationError(where + ": load buses carry no inertia");
    }
    buses.push_back(b);
  }

  std::vector<Line> lines;
  std::map<std::pair<int, int>, std::size_t> pair_index;
  for (const auto& jl : doc["lines"]) {
    detail::reject_unknown(jl, {"from", "to", "B", "controllable", "B_min", "B_max"}, "line");
    Line l;
    l.from = detail::get_int(jl, "from", "line");
    l.to = detail::get_int(jl, "to", "line");
    const std::string where = "line " + std::to_string(l.from) + "-" + std::to_string(l.to);
    l.susceptance = detail::get_number(jl, "B", where);
    if (auto it = jl.find("controllable"); it != jl.end()) {
      if (!it->is_boolean()) throw ValidationError(where + ": 'controllable' must be boolean");
      l.controllable = it->get<bool>();
    }
    auto lo = detail::get_optional_number(jl, "B_min", where);
    auto hi = detail::get_optional_number(jl, "B_max", where);
    if (l.controllable) {
      if (!lo || !hi) throw ValidationError(where + ": controllable line needs B_min and B_max");
      l.bounds = SusceptanceBounds{*lo, *hi};
    } else if (lo || hi) {
      throw ValidationError(where + ": bounds given for a non-controllable line");
    }
    auto key = std::minmax(l.from, l.to);
    if (auto it = pair_index.find(key); it != pair_index.end()) {
      auto& prev = lines[it->second];
      if (prev.controllable || l.controllable) throw ValidationError(where + ": duplicate line");
      prev.susceptance += l.susceptance;
      continue;
    }
    pair_index.emplace(key, lines.size());
    lines.push_back(l);
  }

  double sum = 0, scale = 0;
  for (const auto& b : buses) {
    sum += b.injection;
    scale += std::abs(b.injection);
  }
  auto slack = doc.find("slack_bus");
  if (std::abs(sum) > kBalanceTolerance * std::max(1.0, scale)) {
    if (slack == doc.end() || slack->is_null())
      throw ValidationError("injections are not balanced and no slack_bus is set");
    if (!slack->is_number_integer()) throw ValidationError("case: 'slack_bus' must be an integer");
    const int sid = slack->get<int>();
    auto it = std::find_if(buses.begin(), buses.end(), [&](const Bus& b) { return b.id == sid; });
    if (it == buses.end()) throw ValidationError("slack_bus references a missing bus");
    it->injection -= sum;
  } else if (slack != doc.end() && !slack->is_null() && !slack->is_number_integer()) {
    throw ValidationError("case: 'slack_bus' must be an integer");
  }
  return PowerNetwork(std::move(buses), std::move(lines), std::move(tag));
}

inline PowerNetwork load_case_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open case file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_case(ss.str());
}

inline Eigen::MatrixXd weighted_laplacian(const PowerNetwork& net) {
  const auto n = static_cast<Eigen::Index>(net.bus_count());
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t e = 0; e < net.line_count(); ++e) {
    const auto k = static_cast<Eigen::Index>(net.from_index(e));
    const auto j = static_cast<Eigen::Index>(net.to_index(e));
    const double a = net.coupling(e);
    L(k, k) += a;
    L(j, j) += a;
    L(k, j) -= a;
    L(j, k) -= a;
  }
  return L;
}

// Eigendecomposition pseudoinverse; eigenvalues below 1e-8 * max are zero.
inline Eigen::MatrixXd pseudoinverse(const Eigen::MatrixXd& L) {
  if (L.rows() != L.cols()) throw ValidationError("pseudoinverse: matrix must be square");
  if (L.size() == 0) return L;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(L);
  const auto& lam = es.eigenvalues();
  const double top = lam.cwiseAbs().maxCoeff();
  if (top == 0) return Eigen::MatrixXd::Zero(L.rows(), L.cols());
  const double cut = 1e-8 * top;
  Eigen::VectorXd inv(lam.size());
  int zeros = 0;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (std::abs(lam(i)) <= cut) {
      inv(i) = 0;
      ++zeros;
    } else {
      inv(i) = 1.0 / lam(i);
    }
  }
  if (zeros > 1)
    throw ValidationError("pseudoinverse: more than one zero eigenvalue (disconnected graph)");
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

// max over lines of |x_k - x_j|
inline double edge_spread(const PowerNetwork& net, const Eigen::VectorXd& x) {
  double worst = 0;
  for (std::size_t e = 0; e < net.line_count(); ++e)
    worst = std::max(worst, std::abs(x(net.from_index(e)) - x(net.to_index(e))));
  return worst;
}

inline double edge_infnorm(const PowerNetwork& net, const Eigen::MatrixXd& Lpinv,
                           const Eigen::VectorXd& p) {
  if (p.size() != Lpinv.cols() || static_cast<std::size_t>(p.size()) != net.bus_count())
    throw ValidationError("edge_infnorm: dimension mismatch");
  return edge_spread(net, Lpinv * p);
}

}  // namespace gridshift
