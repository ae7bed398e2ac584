#pragma once

// Computed-torque tracking of a sinusoidal reference on a fully actuated
// chain: tau = tau_ff(q, qdot, qddot_d - kappa^2 dq - 2 kappa dqdot).

#include <array>
#include <cmath>
#include <vector>

#include "cpc/cpc_core.hpp"
#include "cpc/dynamics.hpp"
#include "cpc/mathkit.hpp"

namespace cpc {

struct TrackConfig {
  ChainParams chain = ChainParams::fully_actuated(2);
  double kappa = 20.0;
  double dt = 1e-3;
  double duration = 10.0;
  double amplitude = 0.5;
  double frequency = 0.5;  // rad/s
  double perturbation = 0.1;  // added to every joint angle at t = 0
  double velocity_perturbation = 0.0;  // added to every joint velocity; no envelope
  /// Envelope comparison stops once the envelope falls below this fraction
  /// of its initial value.
  double envelope_floor = 1e-3;
};

struct TrackReport {
  double max_error = 0.0;          // max |q - q_d| over the run
  double final_error = 0.0;
  double max_envelope_rel = 0.0;   // max relative deviation from the envelope
  std::vector<double> t, error, envelope;
};

/// q_d(t) = A sin(w t + i) for joint i; returns (q_d, qdot_d, qddot_d).
inline std::array<Vec, 3> sinusoid_reference(const TrackConfig& cfg, double t) {
  const int n = cfg.chain.n_links;
  Vec q(n), v(n), a(n);
  const double w = cfg.frequency;
  for (int i = 0; i < n; ++i) {
    const double ph = w * t + i;
    q(i) = cfg.amplitude * std::sin(ph);
    v(i) = cfg.amplitude * w * std::cos(ph);
    a(i) = -cfg.amplitude * w * w * std::sin(ph);
  }
  return {q, v, a};
}

/// Runs the tracker from q_d(0) + perturbation. kappa = 0 leaves pure
/// feedforward.
inline TrackReport track_demo(const TrackConfig& cfg, bool record = false) {
  cfg.chain.validate();
  const auto& p = cfg.chain;
  const int n = p.n_links;
  const double kappa = cfg.kappa;
  auto policy = [&](const State& s) {
    const auto [qd, vd, ad] = sinusoid_reference(cfg, s.t);
    const Vec u = ad - kappa * kappa * (s.q - qd) - 2.0 * kappa * (s.qdot - vd);
    return feedforward_tau(p, s.q, s.qdot, u);
  };
  const auto [q0, v0, a0] = sinusoid_reference(cfg, 0.0);
  State x{q0 + Vec::Constant(n, cfg.perturbation),
          v0 + Vec::Constant(n, cfg.velocity_perturbation), 0.0};
  const double e0 = std::sqrt(static_cast<double>(n)) * std::abs(cfg.perturbation);

  TrackReport rep;
  const auto steps = static_cast<long>(std::lround(cfg.duration / cfg.dt));
  for (long i = 0; i <= steps; ++i) {
    const auto [qd, vd, ad] = sinusoid_reference(cfg, x.t);
    const double err = (x.q - qd).norm();
    rep.max_error = std::max(rep.max_error, err);
    rep.final_error = err;
    const double env = (1.0 + kappa * x.t) * std::exp(-kappa * x.t) * e0;
    if (e0 > 0.0 && cfg.velocity_perturbation == 0.0 && env > cfg.envelope_floor * e0) {
      rep.max_envelope_rel = std::max(rep.max_envelope_rel, std::abs(err - env) / env);
    }
    if (record) {
      rep.t.push_back(x.t);
      rep.error.push_back(err);
      rep.envelope.push_back(env);
    }
    if (i < steps) x = step_closed_loop(p, x, policy, cfg.dt);
  }
  return rep;
}

}  // namespace cpc
