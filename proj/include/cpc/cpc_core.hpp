#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "cpc/dynamics.hpp"
#include "cpc/errors.hpp"
#include "cpc/mathkit.hpp"

namespace cpc {

/// |qdotbar_d^T qdotbar| below this rejects a reparameterization.
inline constexpr double kDefaultGuardTol = 1e-6;

/// Controlled (chi) and free (psi) coordinate indices.
struct CoordSplit {
  std::vector<int> chi;
  std::vector<int> psi;

  int n() const { return static_cast<int>(chi.size() + psi.size()); }
  int m() const { return static_cast<int>(chi.size()); }
};

/// b (N x (N-M)) with b^T B = 0; the psi block is -I.
struct NullCovector {
  Mat b;

  Vec bar(const Vec& a) const { return b.transpose() * a; }
  Eigen::Index free_dims() const { return b.cols(); }
};

struct Reparam {
  double t0 = 0.0;
  double s = 1.0;
};

/// k = kappa^2 with critical damping: kp/eps^2 = kappa^2, kd/eps = 2 kappa.
struct GainSpec {
  double k = 1.0;

  double kappa() const { return std::sqrt(k); }
  static GainSpec from_kappa(double kappa) { return {kappa * kappa}; }
  /// kappa = sqrt(kp) / eps.
  static GainSpec from_epsilon(double eps, double kp = 1.0) {
    return from_kappa(std::sqrt(kp) / eps);
  }
};

inline Vec gather(const Vec& v, const std::vector<int>& idx) {
  Vec out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(idx[i]);
  return out;
}

inline Mat gather_rows(const Mat& m, const std::vector<int>& idx) {
  Mat out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

/// Picks M rows of B by Gaussian elimination with complete pivoting over the
/// remaining rows, so that B_chi is well conditioned.
inline CoordSplit split_coordinates(const Mat& b_ctrl, double rank_tol = 1e-12) {
  const auto n = b_ctrl.rows();
  const auto m = b_ctrl.cols();
  if (m > n) throw RankDeficient("control matrix has more columns than rows");
  Mat work = b_ctrl;
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  std::vector<bool> col_used(static_cast<std::size_t>(m), false);
  CoordSplit split;
  const double scale = std::max(1.0, b_ctrl.cwiseAbs().maxCoeff());
  for (Eigen::Index step = 0; step < m; ++step) {
    Eigen::Index best_r = -1, best_c = -1;
    double best = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      if (used[static_cast<std::size_t>(r)]) continue;
      for (Eigen::Index c = 0; c < m; ++c) {
        if (col_used[static_cast<std::size_t>(c)]) continue;
        if (std::abs(work(r, c)) > best) {
          best = std::abs(work(r, c));
          best_r = r;
          best_c = c;
        }
      }
    }
    if (best_r < 0 || best <= rank_tol * scale) throw RankDeficient("control matrix rank < M");
    used[static_cast<std::size_t>(best_r)] = true;
    col_used[static_cast<std::size_t>(best_c)] = true;
    split.chi.push_back(static_cast<int>(best_r));
    for (Eigen::Index r = 0; r < n; ++r) {
      if (used[static_cast<std::size_t>(r)]) continue;
      const double f = work(r, best_c) / work(best_r, best_c);
      work.row(r) -= f * work.row(best_r);
    }
  }
  std::sort(split.chi.begin(), split.chi.end());
  for (int r = 0; r < static_cast<int>(n); ++r) {
    if (!used[static_cast<std::size_t>(r)]) split.psi.push_back(r);
  }
  return split;
}

/// b = [B_psi B_chi^{-1}, -I]^T laid out in original coordinate order.
inline NullCovector null_covector(const Mat& b_ctrl, const CoordSplit& split) {
  const auto n = b_ctrl.rows();
  const auto f = static_cast<Eigen::Index>(split.psi.size());
  NullCovector nc{Mat::Zero(n, f)};
  if (f == 0) return nc;
  const Mat b_chi = gather_rows(b_ctrl, split.chi);
  const Mat b_psi = gather_rows(b_ctrl, split.psi);
  // (B_psi B_chi^{-1})^T = B_chi^{-T} B_psi^T
  const Mat top = solve_checked(b_chi.transpose(), b_psi.transpose());
  for (std::size_t i = 0; i < split.chi.size(); ++i) {
    nc.b.row(split.chi[i]) = top.row(static_cast<Eigen::Index>(i));
  }
  for (Eigen::Index j = 0; j < f; ++j) nc.b(split.psi[static_cast<std::size_t>(j)], j) = -1.0;
  return nc;
}

/// (t0, s) relating the current state x0 to a target point xd.
inline Reparam reparam_params(const State& x0, const State& xd, const NullCovector& nc,
                              double guard_tol = kDefaultGuardTol) {
  if (nc.free_dims() == 0) throw InvalidArgument("reparam_params: system is fully actuated");
  const Vec qbar = nc.bar(x0.q);
  const Vec vbar = nc.bar(x0.qdot);
  const Vec qbar_d = nc.bar(xd.q);
  const Vec vbar_d = nc.bar(xd.qdot);
  if (nc.free_dims() == 1) {
    const double v = vbar(0), vd = vbar_d(0);
    if (!(std::abs(vd * v) > guard_tol)) {
      throw VelocityBarDegenerate("|qdotbar_d * qdotbar| below guard");
    }
    return {(qbar_d(0) - qbar(0)) / v, vd / v};
  }
  const double denom = vbar_d.dot(vbar);
  if (!(std::abs(denom) > guard_tol)) {
    throw VelocityBarDegenerate("|qdotbar_d^T qdotbar| below guard");
  }
  return {vbar_d.dot(qbar_d - qbar) / denom, vbar_d.dot(vbar_d) / denom};
}

/// Value at t = 0 and slope of q_d^r(t) = q_d + qdot_d (t - t0) / s.
inline std::pair<Vec, Vec> renormalized_target(const State& xd, const Reparam& rep) {
  return {xd.q - xd.qdot * (rep.t0 / rep.s), xd.qdot / rep.s};
}

/// Stacked [chi0 - chi_r; chidot0 - chidot_r].
inline Vec renormalized_error_chi(const State& x0, const State& xd, const CoordSplit& split,
                                  const Reparam& rep) {
  const auto [q_r, qdot_r] = renormalized_target(xd, rep);
  const auto m = static_cast<Eigen::Index>(split.chi.size());
  Vec err(2 * m);
  err.head(m) = gather(x0.q - q_r, split.chi);
  err.tail(m) = gather(x0.qdot - qdot_r, split.chi);
  return err;
}

/// tau = tau_d - B_chi^{-1} (kappa^2 dchi + 2 kappa dchidot).
inline Vec cpc_tau(const State& x0, const State& xd, const Mat& b_ctrl, const CoordSplit& split,
                   const Reparam& rep, const GainSpec& gain, const Vec& tau_d) {
  if (!(gain.k > 0.0)) throw InvalidArgument("cpc_tau: gain must be positive");
  const auto m = static_cast<Eigen::Index>(split.chi.size());
  const Vec err = renormalized_error_chi(x0, xd, split, rep);
  const double kappa = gain.kappa();
  const Vec pd = kappa * kappa * err.head(m) + 2.0 * kappa * err.tail(m);
  return tau_d - solve_checked(gather_rows(b_ctrl, split.chi), pd);
}

/// tau_ff = B_tau^+ (D u + H); requires rank(B_tau) = N.
inline Vec feedforward_tau(const ChainParams& p, const Vec& q, const Vec& qdot, const Vec& u) {
  const Mat bt = p.actuation_matrix();
  if (bt.cols() < bt.rows() || Eigen::FullPivLU<Mat>(bt).rank() < bt.rows()) {
    throw NotFullyActuated("feedforward_tau needs rank(B_tau) = N");
  }
  const auto terms = manipulator_terms(p, q, qdot);
  return right_pseudoinverse(bt) * (terms.D * u + terms.H);
}

/// Least-squares control matrix from (tau_i, u_i) pairs: u_i ~ B tau_i
/// (optionally + c with an intercept column).
inline Mat estimate_B(const std::vector<Vec>& taus, const std::vector<Vec>& us, double ridge,
                      bool affine = false) {
  if (taus.empty() || taus.size() != us.size()) {
    throw InvalidArgument("estimate_B: need n >= 1 matched pairs");
  }
  const auto n = static_cast<Eigen::Index>(taus.size());
  const auto m = taus.front().size();
  const auto dim = us.front().size();
  const Eigen::Index cols = affine ? m + 1 : m;
  Mat a(n, cols);
  Mat y(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    a.row(i).head(m) = taus[static_cast<std::size_t>(i)].transpose();
    if (affine) a(i, m) = 1.0;
    y.row(i) = us[static_cast<std::size_t>(i)].transpose();
  }
  if (ridge == 0.0 && a.isZero()) throw RankDeficient("all torques are zero");
  const Mat x = least_squares(a, y, ridge);
  return x.topRows(m).transpose();
}

}  // namespace cpc
