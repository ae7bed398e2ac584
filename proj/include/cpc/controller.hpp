#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include "cpc/cpc_core.hpp"
#include "cpc/errors.hpp"
#include "cpc/target_store.hpp"
#include "cpc/value.hpp"

namespace cpc {

struct ControllerConfig {
  double omega = 10.0;
  double s_g = 1.0;
  std::size_t n_d = 20;
  double k0 = 2000.0;
  double tau_c = 2.0;
  double k_c = 2.0;
  double dt = 0.005;
  std::size_t history_n = 9;
  double guard_tol = kDefaultGuardTol;
  double ridge = 1e-8;
  bool affine_regression = false;
  double sigma_boot = 0.02;
  /// Forces tau_d = G_d = r(x_d) = 0 when scoring and controlling.
  bool zero_reference = false;
  RewardSpec reward;

  /// Balancing from failure data.
  static ControllerConfig acrobot() {
    ControllerConfig c;
    c.s_g = -1.0;
    c.dt = 0.01;
    c.history_n = 7;
    c.zero_reference = true;
    return c;
  }

  void validate() const {
    if (!(k0 > k_c && k_c > 0.0)) throw InvalidArgument("ControllerConfig: need k0 > k_c > 0");
    if (!(tau_c > 0.0)) throw InvalidArgument("ControllerConfig: tau_c must be positive");
    if (n_d < 1) throw InvalidArgument("ControllerConfig: n_d must be >= 1");
    if (!(dt > 0.0)) throw InvalidArgument("ControllerConfig: dt must be positive");
    if (history_n < 1) throw InvalidArgument("ControllerConfig: history_n must be >= 1");
    reward.validate();
  }
};

/// Diagnostics of one cpc_loop call.
struct LoopTrace {
  int iterations = 0;
  double final_k = 0.0;
  std::size_t selected_index = 0;
  bool bound_met = false;
};

/// Candidate retrieval, cost-based selection and gain backoff for one
/// control cycle. Throws NoValidCandidates when no target survives the
/// velocity guard.
inline Vec cpc_loop(const State& x0, const Mat& b_ctrl, const BallTree& store,
                    const ControllerConfig& cfg, LoopTrace* trace = nullptr) {
  const CoordSplit split = split_coordinates(b_ctrl);
  const NullCovector nc = null_covector(b_ctrl, split);
  std::vector<TargetCandidate> cands;
  try {
    cands = store.query(x0, nc, cfg.omega, cfg.s_g, cfg.n_d, cfg.guard_tol);
  } catch (const VelocityBarDegenerate& e) {
    throw NoValidCandidates(e.what());
  }
  if (cands.empty()) throw NoValidCandidates("every target point failed the guard");
  const auto m = b_ctrl.cols();
  if (cfg.zero_reference) {
    for (auto& c : cands) {
      c.point.tau = Vec::Zero(m);
      c.point.G = 0.0;
    }
  }
  RewardSpec reward = cfg.reward;
  if (cfg.zero_reference) reward.state_reward = [](const State&) { return 0.0; };
  if (reward.C_tau.rows() != m) reward.C_tau = -Mat::Identity(m, m);

  double k = cfg.k0;
  Vec tau;
  int iterations = 0;
  std::size_t chosen = 0;
  do {
    const GainSpec gain{k};
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const double c = cost(x0, cands[i], b_ctrl, split, gain, reward, cands[i].point.tau);
      if (c < best) {
        best = c;
        chosen = i;
      }
    }
    const auto& y = cands[chosen];
    tau = cpc_tau(x0, y.point.x, b_ctrl, split, y.rep, gain, y.point.tau);
    k /= 2.0;
    ++iterations;
  } while (!(tau.norm() < cfg.tau_c || k < cfg.k_c));
  if (trace) {
    trace->iterations = iterations;
    trace->final_k = 2.0 * k;
    trace->selected_index = cands[chosen].index;
    trace->bound_met = tau.norm() < cfg.tau_c;
  }
  return tau;
}

/// Per-agent mutable controller state: rolling (tau, u) history for the
/// online control-matrix estimate.
class ControllerState {
 public:
  explicit ControllerState(std::uint64_t seed = 0) : rng_(seed) {}

  struct Sample {
    Vec tau;
    Vec u;
  };

  const std::deque<Sample>& history() const { return history_; }
  const Mat& last_B() const { return last_b_; }
  const Vec& last_tau() const { return last_tau_; }
  std::uint64_t steps() const { return steps_; }
  bool last_used_fallback() const { return fallback_; }
  bool last_was_bootstrap() const { return bootstrap_; }

  /// Torque actually applied over the previous step (commanded plus any
  /// disturbance). Defaults to the commanded torque when not reported.
  void report_applied(const Vec& tau) { applied_ = tau; }

  /// Computes the torque for the current state x0.
  Vec step(const State& x0, const BallTree& store, const ControllerConfig& cfg,
           int n_actuated) {
    if (have_prev_) {
      const Vec u = (x0.qdot - prev_qdot_) / cfg.dt;
      history_.push_back({applied_.size() ? applied_ : last_tau_, u});
      while (history_.size() > cfg.history_n) history_.pop_front();
    }
    applied_.resize(0);
    prev_qdot_ = x0.qdot;
    have_prev_ = true;
    ++steps_;
    fallback_ = false;
    bootstrap_ = false;

    Vec tau;
    if (history_.size() < cfg.history_n) {
      bootstrap_ = true;
      std::normal_distribution<double> noise(0.0, cfg.sigma_boot);
      tau = Vec(n_actuated);
      for (int i = 0; i < n_actuated; ++i) tau(i) = noise(rng_);
    } else {
      std::vector<Vec> taus, us;
      for (const auto& s : history_) {
        taus.push_back(s.tau);
        us.push_back(s.u);
      }
      try {
        last_b_ = estimate_B(taus, us, cfg.ridge, cfg.affine_regression);
        tau = cpc_loop(x0, last_b_, store, cfg, &trace_);
      } catch (const Error&) {
        tau = Vec::Zero(n_actuated);
        fallback_ = true;
      }
      if (!tau.allFinite()) {
        tau = Vec::Zero(n_actuated);
        fallback_ = true;
      }
    }
    last_tau_ = tau;
    return tau;
  }

  const LoopTrace& last_trace() const { return trace_; }

 private:
  std::mt19937_64 rng_;
  std::deque<Sample> history_;
  Mat last_b_;
  Vec last_tau_;
  Vec applied_;
  Vec prev_qdot_;
  bool have_prev_ = false;
  bool fallback_ = false;
  bool bootstrap_ = false;
  std::uint64_t steps_ = 0;
  LoopTrace trace_;
};

inline Vec controller_step(ControllerState& ctrl, const State& x0, const BallTree& store,
                           const ControllerConfig& cfg, int n_actuated) {
  return ctrl.step(x0, store, cfg, n_actuated);
}

}  // namespace cpc
