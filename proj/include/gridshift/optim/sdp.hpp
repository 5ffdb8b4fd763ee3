#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gridshift/error.hpp"
#include "gridshift/optim/config.hpp"

namespace gridshift {

enum class BlockSign { psd, nsd };

// constant + sum_l z_l * coefficient_l, required >= 0 (psd) or <= 0 (nsd).
struct LmiBlock {
  std::string name;
  Eigen::MatrixXd constant;
  std::vector<std::pair<std::size_t, Eigen::MatrixXd>> terms;
  BlockSign sign = BlockSign::psd;
  bool strict = true;

  Eigen::MatrixXd evaluate(const Eigen::VectorXd& z) const {
    Eigen::MatrixXd M = constant;
    for (const auto& [l, C] : terms) M += z(static_cast<Eigen::Index>(l)) * C;
    return 0.5 * (M + M.transpose());
  }
};

struct ScalarConstraint {
  std::vector<std::pair<std::size_t, double>> terms;
  double rhs = 0.0;
  double evaluate(const Eigen::VectorXd& z) const {
    double v = 0;
    for (const auto& [l, c] : terms) v += c * z(static_cast<Eigen::Index>(l));
    return v;
  }
};

class SdpFeasibility {
 public:
  struct SymmetricVar {
    std::size_t offset = 0;
    std::size_t dim = 0;
    std::size_t operator()(std::size_t i, std::size_t j) const {
      if (i > j) std::swap(i, j);
      // row-major upper triangle
      return offset + i * dim - i * (i - 1) / 2 + (j - i);
    }
  };
  struct DiagonalVar {
    std::size_t offset = 0;
    std::size_t dim = 0;
    std::size_t operator()(std::size_t i) const { return offset + i; }
  };

  double eps_psd = 1e-6;

  SymmetricVar add_symmetric(const std::string& name, std::size_t dim) {
    SymmetricVar v{names_.size(), dim};
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = i; j < dim; ++j)
        names_.push_back(name + "[" + std::to_string(i) + "," + std::to_string(j) + "]");
    return v;
  }
  DiagonalVar add_diagonal_nonnegative(const std::string& name, std::size_t dim) {
    DiagonalVar v{names_.size(), dim};
    for (std::size_t i = 0; i < dim; ++i) {
      names_.push_back(name + "[" + std::to_string(i) + "]");
      add_inequality({{v(i), -1.0}}, 0.0);
    }
    return v;
  }
  std::size_t add_scalar(const std::string& name) {
    names_.push_back(name);
    return names_.size() - 1;
  }

  void add_equality(std::vector<std::pair<std::size_t, double>> terms, double rhs) {
    equalities_.push_back({std::move(terms), rhs});
  }
  void add_inequality(std::vector<std::pair<std::size_t, double>> terms, double rhs) {
    inequalities_.push_back({std::move(terms), rhs});
  }
  void add_block(LmiBlock block) { blocks_.push_back(std::move(block)); }

  std::size_t variable_count() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<ScalarConstraint>& equalities() const { return equalities_; }
  const std::vector<ScalarConstraint>& inequalities() const { return inequalities_; }
  const std::vector<LmiBlock>& blocks() const { return blocks_; }

 private:
  std::vector<std::string> names_;
  std::vector<ScalarConstraint> equalities_;
  std::vector<ScalarConstraint> inequalities_;
  std::vector<LmiBlock> blocks_;
};

struct SdpAudit {
  bool passed = false;
  std::vector<double> block_min_eigs;  // of the sign-corrected blocks
  double max_inequality_violation = 0.0;
  double max_equality_violation = 0.0;
};

// Eigenvalue audit computed from the problem data alone.
inline SdpAudit audit_sdp_point(const SdpFeasibility& p, const Eigen::VectorXd& z) {
  SdpAudit a;
  a.passed = z.size() == static_cast<Eigen::Index>(p.variable_count()) && z.allFinite();
  if (!a.passed) return a;
  for (const auto& b : p.blocks()) {
    Eigen::MatrixXd M = b.evaluate(z);
    if (b.sign == BlockSign::nsd) M = -M;
    const double lam =
        M.size() ? Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(M, Eigen::EigenvaluesOnly).eigenvalues().minCoeff()
                 : 0.0;
    a.block_min_eigs.push_back(lam);
    const double floor = b.strict ? p.eps_psd / 2 : -1e-9 * std::max(1.0, M.cwiseAbs().maxCoeff());
    if (!(lam >= floor)) a.passed = false;
  }
  for (const auto& c : p.inequalities()) {
    const double viol = c.evaluate(z) - c.rhs;
    a.max_inequality_violation = std::max(a.max_inequality_violation, viol);
    if (viol > 1e-9 * std::max(1.0, std::abs(c.rhs))) a.passed = false;
  }
  for (const auto& c : p.equalities()) {
    const double viol = std::abs(c.evaluate(z) - c.rhs);
    a.max_equality_violation = std::max(a.max_equality_violation, viol);
    if (viol > 1e-8 * std::max(1.0, std::abs(c.rhs))) a.passed = false;
  }
  return a;
}

enum class SdpMethod { barrier, alternating_projections };

struct SdpOptions {
  SdpMethod method = SdpMethod::barrier;
  int max_sweeps = 5000;               // alternating projections budget
  int max_newton = 400;                // barrier budget (total Newton steps)
  std::optional<Eigen::VectorXd> start;
};

struct SdpResult {
  bool found = false;
  Eigen::VectorXd z;
  SdpAudit audit;
  int iterations = 0;
  double margin = 0.0;  // solver-side margin estimate
  std::string message;
};

namespace detail {

inline Eigen::VectorXd dense_row(const ScalarConstraint& c, std::size_t n) {
  Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (const auto& [l, v] : c.terms) r(static_cast<Eigen::Index>(l)) += v;
  return r;
}

struct AffineReduction {
  Eigen::VectorXd particular;  // z_p
  Eigen::MatrixXd basis;       // orthonormal nullspace of the equality rows
  bool consistent = true;
};

inline AffineReduction reduce_equalities(const SdpFeasibility& p) {
  const auto n = static_cast<Eigen::Index>(p.variable_count());
  AffineReduction r;
  const auto me = static_cast<Eigen::Index>(p.equalities().size());
  if (me == 0) {
    r.particular = Eigen::VectorXd::Zero(n);
    r.basis = Eigen::MatrixXd::Identity(n, n);
    return r;
  }
  Eigen::MatrixXd E(me, n);
  Eigen::VectorXd e(me);
  for (Eigen::Index i = 0; i < me; ++i) {
    E.row(i) = dense_row(p.equalities()[i], p.variable_count()).transpose();
    e(i) = p.equalities()[i].rhs;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double cut = 1e-10 * std::max(1.0, sv.size() ? sv(0) : 0.0);
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv(rank) > cut) ++rank;
  const Eigen::MatrixXd V = svd.matrixV();
  const Eigen::MatrixXd U = svd.matrixU();
  r.particular = V.leftCols(rank) *
                 (sv.head(rank).cwiseInverse().asDiagonal() * (U.leftCols(rank).transpose() * e));
  r.basis = V.rightCols(n - rank);
  r.consistent = (E * r.particular - e).norm() <= 1e-9 * (1.0 + e.norm());
  return r;
}

inline double block_scale(const LmiBlock& b) {
  double s = 0;
  for (const auto& t : b.terms) s = std::max(s, t.second.norm());
  return s > 0 ? s : 1.0;
}

// Maximize a common margin t over {blocks - t I >= 0, scalar slacks >= t}
// with a log-det barrier, in the equality nullspace.
inline SdpResult sdp_barrier(const SdpFeasibility& p, const SdpOptions& opt) {
  using Eigen::Index;
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  SdpResult res;
  const auto red = reduce_equalities(p);
  if (!red.consistent) {
    res.message = "equality constraints are inconsistent";
    return res;
  }
  const Index n = static_cast<Index>(p.variable_count());
  const Index q = red.basis.cols();
  const Index nv = q + 1;  // (w, t)

  // block data in w coordinates, sign-corrected and scaled
  struct BlockData {
    MatrixXd C;
    std::vector<MatrixXd> D;
  };
  std::vector<BlockData> blocks;
  Index barrier_weight = 0;
  for (const auto& b : p.blocks()) {
    const double s = (b.sign == BlockSign::psd ? 1.0 : -1.0) / block_scale(b);
    BlockData d;
    d.C = s * b.evaluate(red.particular);
    const Index dim = d.C.rows();
    std::vector<MatrixXd> coeff(static_cast<std::size_t>(n));
    for (const auto& [l, M] : b.terms) {
      auto& slot = coeff[l];
      if (slot.size() == 0) slot = MatrixXd::Zero(dim, dim);
      slot += 0.5 * (M + M.transpose());
    }
    d.D.assign(static_cast<std::size_t>(q), MatrixXd::Zero(dim, dim));
    for (Index l = 0; l < n; ++l) {
      if (coeff[l].size() == 0) continue;
      for (Index k = 0; k < q; ++k)
        if (red.basis(l, k) != 0) d.D[k] += s * red.basis(l, k) * coeff[l];
    }
    barrier_weight += dim;
    blocks.push_back(std::move(d));
  }
  // scalar rows: slack_i(w) = a_i - g_i' w (normalized), margin-carrying
  const auto mi = static_cast<Index>(p.inequalities().size());
  MatrixXd Gs(mi, q);
  VectorXd gs(mi);
  for (Index i = 0; i < mi; ++i) {
    const VectorXd row = dense_row(p.inequalities()[i], p.variable_count());
    double nrm = row.norm();
    if (nrm == 0) nrm = 1;
    Gs.row(i) = (red.basis.transpose() * row).transpose() / nrm;
    gs(i) = (p.inequalities()[i].rhs - row.dot(red.particular)) / nrm;
  }
  VectorXd w = VectorXd::Zero(q);
  if (opt.start && opt.start->size() == n) w = red.basis.transpose() * (*opt.start - red.particular);
  const double zmax = std::max(1e4, 1e2 * (red.particular + red.basis * w).lpNorm<Eigen::Infinity>());
  // box rows on z (no margin): zmax -+ z_l > 0
  const MatrixXd& Nb = red.basis;
  barrier_weight += mi + 2 * n + 1;

  auto margins = [&](const VectorXd& v, std::vector<Eigen::LLT<MatrixXd>>* chol, VectorXd* slack,
                     VectorXd* box_hi, VectorXd* box_lo) {
    const VectorXd ww = v.head(q);
    const double t = v(q);
    bool ok = true;
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      MatrixXd X = blocks[j].C;
      for (Index k = 0; k < q; ++k) X += ww(k) * blocks[j].D[k];
      X.diagonal().array() -= t;
      Eigen::LLT<MatrixXd> llt(X);
      if (llt.info() != Eigen::Success) ok = false;
      if (chol) (*chol)[j] = llt;
    }
    const VectorXd sl = gs - Gs * ww - VectorXd::Constant(mi, t);
    const VectorXd z = red.particular + Nb * ww;
    const VectorXd bh = VectorXd::Constant(n, zmax) - z;
    const VectorXd bl = VectorXd::Constant(n, zmax) + z;
    if (mi && sl.minCoeff() <= 0) ok = false;
    if (bh.minCoeff() <= 0 || bl.minCoeff() <= 0) ok = false;
    if (!(1.0 - t > 0)) ok = false;
    if (slack) *slack = sl;
    if (box_hi) *box_hi = bh;
    if (box_lo) *box_lo = bl;
    return ok;
  };
  auto min_margin = [&](const VectorXd& ww) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& b : blocks) {
      MatrixXd X = b.C;
      for (Index k = 0; k < q; ++k) X += ww(k) * b.D[k];
      if (X.size()) m = std::min(m, Eigen::SelfAdjointEigenSolver<MatrixXd>(X, Eigen::EigenvaluesOnly).eigenvalues().minCoeff());
    }
    if (mi) m = std::min(m, (gs - Gs * ww).minCoeff());
    return m;
  };

  VectorXd v(nv);
  v.head(q) = w;
  {
    const double m0 = min_margin(w);
    v(q) = std::min(m0 - 1.0, 0.0);
    if (!std::isfinite(v(q))) v(q) = -1.0;
  }
  auto barrier_value = [&](const VectorXd& vv, double tau, bool& inside) {
    std::vector<Eigen::LLT<MatrixXd>> ch(blocks.size());
    VectorXd sl, bh, bl;
    inside = margins(vv, &ch, &sl, &bh, &bl);
    if (!inside) return std::numeric_limits<double>::infinity();
    double f = -tau * vv(q);
    for (const auto& c : ch) f -= 2.0 * c.matrixLLT().diagonal().array().log().sum();
    f -= sl.array().log().sum() + bh.array().log().sum() + bl.array().log().sum() + std::log(1.0 - vv(q));
    return f;
  };

  double tau = 1.0;
  int steps = 0;
  for (int outer = 0; outer < 40 && steps < opt.max_newton; ++outer) {
    for (int k = 0; k < 60 && steps < opt.max_newton; ++k) {
      std::vector<Eigen::LLT<MatrixXd>> ch(blocks.size());
      VectorXd sl, bh, bl;
      if (!margins(v, &ch, &sl, &bh, &bl)) break;
      VectorXd g = VectorXd::Zero(nv);
      MatrixXd H = MatrixXd::Zero(nv, nv);
      g(q) = -tau;
      for (std::size_t j = 0; j < blocks.size(); ++j) {
        const auto& L = ch[j];
        const Index dim = blocks[j].C.rows();
        std::vector<MatrixXd> Y(static_cast<std::size_t>(nv));
        for (Index a = 0; a < nv; ++a) {
          MatrixXd Da = a < q ? blocks[j].D[a] : MatrixXd(-MatrixXd::Identity(dim, dim));
          MatrixXd T = L.matrixL().solve(Da);
          Y[a] = L.matrixL().solve(MatrixXd(T.transpose()));
          g(a) -= Y[a].trace();
        }
        for (Index a = 0; a < nv; ++a)
          for (Index b2 = a; b2 < nv; ++b2) {
            const double h = (Y[a].array() * Y[b2].array()).sum();
            H(a, b2) += h;
            if (b2 != a) H(b2, a) += h;
          }
      }
      // scalar slacks: s = gs - Gs w - t
      for (Index i = 0; i < mi; ++i) {
        VectorXd ds(nv);
        ds.head(q) = -Gs.row(i).transpose();
        ds(q) = -1.0;
        g -= ds / sl(i);
        H += ds * ds.transpose() / (sl(i) * sl(i));
      }
      for (Index l = 0; l < n; ++l) {
        VectorXd dz = VectorXd::Zero(nv);
        dz.head(q) = Nb.row(l).transpose();
        g += dz / bh(l) - dz / bl(l);
        H += dz * dz.transpose() * (1.0 / (bh(l) * bh(l)) + 1.0 / (bl(l) * bl(l)));
      }
      g(q) += 1.0 / (1.0 - v(q));
      H(q, q) += 1.0 / ((1.0 - v(q)) * (1.0 - v(q)));
      H.diagonal().array() += 1e-14 * (1.0 + H.diagonal().cwiseAbs().maxCoeff());
      const VectorXd dv = H.ldlt().solve(-g);
      const double dec = -g.dot(dv);
      ++steps;
      if (!(dec > 0) || dec / 2 < 1e-10) break;
      bool inside = true;
      const double f0 = barrier_value(v, tau, inside);
      double alpha = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 50; ++ls) {
        const VectorXd trial = v + alpha * dv;
        const double ft = barrier_value(trial, tau, inside);
        if (inside && ft <= f0 - 0.01 * alpha * dec) {
          v = trial;
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!moved) break;
    }
    if (static_cast<double>(barrier_weight) / tau < 1e-8) break;
    tau *= 8.0;
  }
  res.iterations = steps;
  res.margin = v(q);
  res.z = red.particular + Nb * v.head(q);
  return res;
}

inline Eigen::VectorXd svec(const Eigen::MatrixXd& S) {
  const auto d = S.rows();
  Eigen::VectorXd v(d * (d + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = i; j < d; ++j) v(k++) = (i == j ? 1.0 : std::sqrt(2.0)) * S(i, j);
  return v;
}

inline Eigen::MatrixXd smat(const Eigen::VectorXd& v, Eigen::Index d) {
  Eigen::MatrixXd S(d, d);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = i; j < d; ++j) {
      const double x = v(k++) / (i == j ? 1.0 : std::sqrt(2.0));
      S(i, j) = x;
      S(j, i) = x;
    }
  return S;
}

// Alternating projections with Dykstra correction between the affine set
// {(z, S_j, s_i) : S_j = block_j(z), s_i = rhs_i - row_i z, E z = e} and the
// cone {S_j >= eps I, s_i >= 0}.
inline SdpResult sdp_alternating(const SdpFeasibility& p, const SdpOptions& opt) {
  using Eigen::Index;
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  SdpResult res;
  const Index n = static_cast<Index>(p.variable_count());
  std::vector<Index> offsets, dims;
  std::vector<double> scales;
  Index W = n;
  for (const auto& b : p.blocks()) {
    offsets.push_back(W);
    dims.push_back(b.constant.rows());
    scales.push_back((b.sign == BlockSign::psd ? 1.0 : -1.0) / block_scale(b));
    W += b.constant.rows() * (b.constant.rows() + 1) / 2;
  }
  const Index slack_off = W;
  const auto mi = static_cast<Index>(p.inequalities().size());
  W += mi;
  std::vector<VectorXd> rows;
  std::vector<double> rhs;
  for (std::size_t j = 0; j < p.blocks().size(); ++j) {
    const auto& b = p.blocks()[j];
    const Index d = dims[j];
    const VectorXd c0 = svec(scales[j] * b.evaluate(VectorXd::Zero(n)));
    std::vector<VectorXd> cl(static_cast<std::size_t>(n));
    for (const auto& [l, M] : b.terms) {
      const VectorXd c = svec(scales[j] * 0.5 * (M + M.transpose()));
      if (cl[l].size() == 0) cl[l] = VectorXd::Zero(c.size());
      cl[l] += c;
    }
    for (Index r = 0; r < d * (d + 1) / 2; ++r) {
      VectorXd row = VectorXd::Zero(W);
      row(offsets[j] + r) = 1.0;
      for (Index l = 0; l < n; ++l)
        if (cl[l].size()) row(l) -= cl[l](r);
      rows.push_back(row);
      rhs.push_back(c0(r));
    }
  }
  for (Index i = 0; i < mi; ++i) {
    VectorXd row = VectorXd::Zero(W);
    row.head(n) = dense_row(p.inequalities()[i], p.variable_count());
    row(slack_off + i) = 1.0;
    rows.push_back(row);
    rhs.push_back(p.inequalities()[i].rhs);
  }
  for (const auto& c : p.equalities()) {
    VectorXd row = VectorXd::Zero(W);
    row.head(n) = dense_row(c, p.variable_count());
    rows.push_back(row);
    rhs.push_back(c.rhs);
  }
  MatrixXd T(static_cast<Index>(rows.size()), W);
  VectorXd t(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    T.row(static_cast<Index>(r)) = rows[r].transpose();
    t(static_cast<Index>(r)) = rhs[r];
  }
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(T);
  const MatrixXd Tp = cod.pseudoInverse();
  const MatrixXd proj = MatrixXd::Identity(W, W) - Tp * T;
  const VectorXd shift = Tp * t;

  auto project_cone = [&](VectorXd v) {
    for (std::size_t j = 0; j < p.blocks().size(); ++j) {
      const Index d = dims[j], len = d * (d + 1) / 2;
      if (d == 0) continue;
      const double floor = p.blocks()[j].strict ? p.eps_psd / block_scale(p.blocks()[j]) : 0.0;
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(smat(v.segment(offsets[j], len), d));
      const VectorXd ev = es.eigenvalues().cwiseMax(floor);
      v.segment(offsets[j], len) = svec(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
    }
    if (mi) v.segment(slack_off, mi) = v.segment(slack_off, mi).cwiseMax(0.0);
    return v;
  };

  VectorXd v = VectorXd::Zero(W);
  if (opt.start && opt.start->size() == n) v.head(n) = *opt.start;
  VectorXd corr = VectorXd::Zero(W);
  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    const VectorXd a = proj * v + shift;
    const VectorXd y = a + corr;
    v = project_cone(y);
    corr = y - v;
    res.iterations = sweep + 1;
    if (sweep % 10 == 9 || sweep + 1 == opt.max_sweeps) {
      const VectorXd z = (proj * v + shift).head(n);
      if (audit_sdp_point(p, z).passed) {
        res.z = z;
        return res;
      }
    }
  }
  res.z = (proj * v + shift).head(n);
  return res;
}

}  // namespace detail

inline SdpResult solve_sdp_feasibility(const SdpFeasibility& p, const SdpOptions& opt = {}) {
  SdpResult res = opt.method == SdpMethod::barrier ? detail::sdp_barrier(p, opt) : detail::sdp_alternating(p, opt);
  if (res.z.size() == static_cast<Eigen::Index>(p.variable_count())) {
    res.audit = audit_sdp_point(p, res.z);
    res.found = res.audit.passed;
  }
  if (!res.found && res.message.empty()) res.message = "no feasible point found within budget";
  return res;
}

}  // namespace gridshift
