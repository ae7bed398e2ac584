#pragma once

// Virtual-constraint (zero dynamics) controller with an affine constraint
// y = chi - h_d(c^T q), and a numerical check of how closely its feedback
// term matches the CPC feedback term.

#include <algorithm>
#include <cmath>
#include <optional>

#include "cpc/cpc_core.hpp"
#include "cpc/dynamics.hpp"
#include "cpc/errors.hpp"
#include "cpc/mathkit.hpp"

namespace cpc {

inline constexpr double kPhasingTol = 1e-12;

/// h_d(theta) = chi0 + slope dth + curvature dth^2 / 2 with dth = theta -
/// theta0 and theta = c^T q, |c| = 1. A zero curvature gives the affine form.
struct VirtualConstraint {
  Vec c;
  CoordSplit split;
  double theta0 = 0.0;
  Vec chi0;
  Vec slope;
  Vec curvature;

  double theta(const Vec& q) const { return c.dot(q); }
  Vec h_d(double th) const {
    const double d = th - theta0;
    return chi0 + slope * d + 0.5 * curvature * d * d;
  }
  Vec dh_d(double th) const { return slope + curvature * (th - theta0); }
  Vec y(const Vec& q) const { return gather(q, split.chi) - h_d(theta(q)); }

  /// dh/dq = [I_M, 0] - h_d'(theta) c^T, laid out in original coordinate order.
  Mat dh_dq(const Vec& q) const {
    const auto m = static_cast<Eigen::Index>(split.chi.size());
    Mat j = -dh_d(theta(q)) * c.transpose();
    for (Eigen::Index i = 0; i < m; ++i) j(i, split.chi[static_cast<std::size_t>(i)]) += 1.0;
    return j;
  }

  Vec ydot(const Vec& q, const Vec& qdot) const { return dh_dq(q) * qdot; }
};

/// Constraint through xd with h_d' = chidot_d / thetadot_d. Given the target
/// acceleration, h_d'' follows the path to second order; otherwise h_d is
/// affine.
inline VirtualConstraint build_constraint(const State& xd, const CoordSplit& split, const Vec& c,
                                          const std::optional<Vec>& qddot_d = std::nullopt) {
  if (c.size() != xd.q.size()) throw InvalidArgument("build_constraint: c has wrong size");
  const double norm = c.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw PhasingDegenerate("phasing covector is zero");
  VirtualConstraint vc;
  vc.c = c / norm;
  vc.split = split;
  const double thetadot = vc.c.dot(xd.qdot);
  if (!(std::abs(thetadot) > kPhasingTol)) {
    throw PhasingDegenerate("c^T qdot_d vanishes; theta is not monotonic at x_d");
  }
  vc.theta0 = vc.c.dot(xd.q);
  vc.chi0 = gather(xd.q, split.chi);
  vc.slope = gather(xd.qdot, split.chi) / thetadot;
  vc.curvature = Vec::Zero(vc.slope.size());
  if (qddot_d) {
    const double thetaddot = vc.c.dot(*qddot_d);
    vc.curvature = (gather(*qddot_d, split.chi) - vc.slope * thetaddot) / (thetadot * thetadot);
  }
  return vc;
}

struct ZdTorque {
  Vec feedforward;  // tau_d^ZD(q, qdot)
  Vec feedback;     // -A^{-1} (kappa^2 y + 2 kappa ydot)
  Vec total() const { return feedforward + feedback; }
};

/// A(q) = (dh/dq) B(q) with the exact control matrix.
inline Mat decoupling_matrix(const ChainParams& p, const Vec& q, const VirtualConstraint& vc) {
  return vc.dh_dq(q) * exact_control_matrix(p, q);
}

inline ZdTorque zd_torque(const ChainParams& p, const State& x, const VirtualConstraint& vc,
                          const GainSpec& gain) {
  const Mat j = vc.dh_dq(x.q);
  const auto terms = manipulator_terms(p, x.q, x.qdot);
  const Mat a = j * exact_control_matrix(p, x.q);
  Eigen::FullPivLU<Mat> lu(a);
  if (!lu.isInvertible() || condition_number(a) > kDefaultConditionCap) {
    throw SingularDecoupling("decoupling matrix A is singular");
  }
  const double kappa = gain.kappa();
  const double thetadot = vc.c.dot(x.qdot);
  ZdTorque out;
  // -d/dq(dh/dq qdot) qdot = h_d'' thetadot^2
  out.feedforward =
      lu.solve(j * solve_checked(terms.D, terms.H) + vc.curvature * thetadot * thetadot);
  out.feedback = -lu.solve(gain.k * vc.y(x.q) + 2.0 * kappa * vc.ydot(x.q, x.qdot));
  return out;
}

inline Vec tau_zd(const ChainParams& p, const State& x, const VirtualConstraint& vc,
                  const GainSpec& gain) {
  return zd_torque(p, x, vc, gain).total();
}

struct GapOptions {
  double kp = 1.0;
  /// Window length in units of epsilon; 0 compares at t = 0 only.
  double horizon = 5.0;
  int steps_per_epsilon = 100;
  /// Phasing covector; defaults to the null covector b at x.
  std::optional<Vec> c;
  /// Follow the path of q_d to second order (h_d'' from the target
  /// acceleration under tau_d) instead of the affine constraint.
  bool curved = false;
  std::optional<Vec> tau_d;
};

/// Compares the CPC and ZD feedback terms for the target x_d.
///
/// The ZD constraint is the affine one through the renormalized target, or
/// with opt.curved the second-order one along the path of q_d. With
/// horizon > 0 the system is simulated under tau_CPC (B, b, t0, s frozen at
/// t = 0; tau_d is the constraint-following torque at the renormalized
/// target, using c = b) for horizon * eps, and the result is
///   max_t |dtau_CPC(t) - dtau_ZD(t)| / |dtau_CPC(0)|.
/// With horizon = 0 it is the absolute difference at t = 0.
inline double correspondence_gap(const ChainParams& p, const State& x, const State& xd,
                                 double epsilon, const GapOptions& opt = {}) {
  if (!(epsilon > 0.0)) throw InvalidArgument("correspondence_gap: epsilon must be positive");
  const Mat b0 = exact_control_matrix(p, x.q);
  if (b0.rows() - b0.cols() != 1) {
    throw InvalidArgument("correspondence_gap: needs exactly one unactuated degree of freedom");
  }
  const CoordSplit split = split_coordinates(b0);
  const NullCovector nc = null_covector(b0, split);
  const Reparam rep = reparam_params(x, xd, nc);
  const auto [q_r0, qdot_r] = renormalized_target(xd, rep);
  const State xr{q_r0, qdot_r, 0.0};
  std::optional<Vec> qddot_d;
  if (opt.curved) {
    qddot_d = accel(p, xd, opt.tau_d ? *opt.tau_d : Vec(Vec::Zero(b0.cols())));
  }
  const State& through = opt.curved ? xd : xr;
  const VirtualConstraint vc_b = build_constraint(through, split, nc.b.col(0), qddot_d);
  const VirtualConstraint vc = opt.c ? build_constraint(through, split, *opt.c, qddot_d) : vc_b;
  const GainSpec gain = GainSpec::from_epsilon(epsilon, opt.kp);
  const Vec tau_d = zd_torque(p, xr, vc_b, gain).feedforward;

  auto cpc_feedback = [&](const State& s) {
    const State target{xr.q + xr.qdot * s.t, xr.qdot, 0.0};
    return Vec(cpc_tau(s, target, b0, split, Reparam{0.0, 1.0}, gain, tau_d) - tau_d);
  };
  auto gap_at = [&](const State& s) {
    return (cpc_feedback(s) - zd_torque(p, s, vc, gain).feedback).norm();
  };

  if (opt.horizon <= 0.0) return gap_at(x);

  const double scale = cpc_feedback(x).norm();
  const int n = std::max(1, static_cast<int>(std::lround(opt.horizon * opt.steps_per_epsilon)));
  const double dt = opt.horizon * epsilon / n;
  State s = x;
  s.t = 0.0;
  double worst = gap_at(s);
  for (int i = 0; i < n; ++i) {
    s = step(p, s, tau_d + cpc_feedback(s), dt);
    worst = std::max(worst, gap_at(s));
  }
  return scale > 0.0 ? worst / scale : worst;
}

}  // namespace cpc
