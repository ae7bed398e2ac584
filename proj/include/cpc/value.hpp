#pragma once

#include <cmath>
#include <functional>
#include <span>

#include "cpc/cpc_core.hpp"
#include "cpc/errors.hpp"
#include "cpc/mathkit.hpp"
#include "cpc/target_store.hpp"

namespace cpc {

struct RewardSpec {
  double T_gamma = 1.0;
  Mat C_tau = -Mat::Identity(1, 1);  // symmetric, negative semidefinite
  std::function<double(const State&)> state_reward = [](const State&) { return 0.0; };

  static RewardSpec acrobot() { return {}; }

  void validate() const {
    if (!(T_gamma > 0.0)) throw InvalidArgument("RewardSpec: T_gamma must be positive");
    if (C_tau.rows() != C_tau.cols() || !C_tau.isApprox(C_tau.transpose())) {
      throw InvalidArgument("RewardSpec: C_tau must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(C_tau);
    if (es.eigenvalues().maxCoeff() > 1e-12) {
      throw InvalidArgument("RewardSpec: C_tau must be negative semidefinite");
    }
  }
};

struct ValueBreakdown {
  double v_total = 0.0;
  double v_I = 0.0;
  double v_II = 0.0;
};

/// gamma = 1 - dt / T_gamma.
inline double discount_factor(double dt, double T_gamma) { return 1.0 - dt / T_gamma; }

inline double discounted_return(std::span<const double> rewards, double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("discounted_return: gamma in [0, 1)");
  // Backward accumulation: G_t = r_t + gamma G_{t+1}.
  double g = 0.0;
  for (auto it = rewards.rbegin(); it != rewards.rend(); ++it) g = *it + gamma * g;
  return g;
}

/// Z_i = (z_i (x) I_M) B_chi^{-T} with z_1 = [0; 1], z_2 = [kappa; 2].
inline std::pair<Mat, Mat> value_z_matrices(const Mat& b_chi_inv, double kappa) {
  const auto m = b_chi_inv.rows();
  const Mat bt = b_chi_inv.transpose();
  Mat z1 = Mat::Zero(2 * m, m);
  Mat z2(2 * m, m);
  z1.bottomRows(m) = bt;
  z2.topRows(m) = kappa * bt;
  z2.bottomRows(m) = 2.0 * bt;
  return {z1, z2};
}

/// Two-stage value of steering from x0 onto the candidate's renormalized
/// target (stage I, closed form for the critically damped loop) and then
/// following it (stage II, from the recorded return).
inline ValueBreakdown value_estimate(const State& x0, const TargetCandidate& cand, const Mat& b_ctrl,
                                     const CoordSplit& split, const GainSpec& gain,
                                     const RewardSpec& spec, const Vec& tau_d) {
  const double kappa = gain.kappa();
  const Mat b_chi_inv = inverse_checked(gather_rows(b_ctrl, split.chi));
  const auto [z1, z2] = value_z_matrices(b_chi_inv, kappa);
  const Vec dx = renormalized_error_chi(x0, cand.point.x, split, cand.rep);
  const Mat& c = spec.C_tau;

  const double linear = -2.0 / spec.T_gamma * tau_d.dot(c * (z1.transpose() * dx));
  const Mat quad = z1 * c * z1.transpose() + z2 * c * z2.transpose();
  const double quadratic = kappa / (4.0 * spec.T_gamma) * dx.dot(quad * dx);

  ValueBreakdown v;
  v.v_I = linear + quadratic;
  const double g_d = cand.point.G;
  v.v_II = g_d + cand.rep.t0 / spec.T_gamma *
                     (tau_d.dot(c * tau_d) + spec.state_reward(cand.point.x) - g_d);
  v.v_total = v.v_I + v.v_II;
  return v;
}

inline ValueBreakdown value_estimate(const State& x0, const TargetCandidate& cand, const Mat& b_ctrl,
                                     const CoordSplit& split, const GainSpec& gain,
                                     const RewardSpec& spec) {
  return value_estimate(x0, cand, b_ctrl, split, gain, spec, cand.point.tau);
}

/// Selection cost: the negated value estimate.
inline double cost(const State& x0, const TargetCandidate& cand, const Mat& b_ctrl,
                   const CoordSplit& split, const GainSpec& gain, const RewardSpec& spec,
                   const Vec& tau_d) {
  return -value_estimate(x0, cand, b_ctrl, split, gain, spec, tau_d).v_total;
}

}  // namespace cpc
