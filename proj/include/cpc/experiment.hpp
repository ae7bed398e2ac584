#pragma once

// Acrobot balance-from-failures experiment: fall-data generation, balance
// trials and N_f sweeps.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <thread>
#include <vector>

#include "cpc/controller.hpp"
#include "cpc/dynamics.hpp"
#include "cpc/target_store.hpp"

namespace cpc {

struct ExperimentConfig {
  double sigma0 = 0.02;
  double fall_duration = 1.0;
  double T_max = 30.0;
  int trials = 100;
  double noise_multiplier = 6.0;
  std::vector<int> n_f_list{3, 10, 30, 100};
  std::uint64_t master_seed = 1;
  int threads = 0;  // 0: hardware concurrency
  /// Regress B on applied (commanded + disturbance) torques.
  bool regress_on_applied_torque = true;
  ChainParams chain = ChainParams::acrobot();
  ControllerConfig controller = ControllerConfig::acrobot();

  int points_per_fall() const {
    return static_cast<int>(std::lround(fall_duration / controller.dt));
  }

  void validate() const {
    if (!(sigma0 >= 0.0 && fall_duration > 0.0 && T_max > 0.0)) {
      throw InvalidArgument("ExperimentConfig: durations must be positive");
    }
    if (trials < 1) throw InvalidArgument("ExperimentConfig: trials must be >= 1");
    chain.validate();
    controller.validate();
  }
};

struct TrialRecord {
  int trial_id = 0;
  int n_f = 0;
  std::uint64_t seed = 0;
  double noise_multiplier = 0.0;
  double t_f = 0.0;
  bool fell = false;
};

/// splitmix64 finaliser.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// FNV-1a of a short identifier.
inline std::uint64_t hash_id(std::string_view id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// trial seed = hash(master, experiment id, trial index)
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view experiment,
                                 std::uint64_t index) {
  return mix64(mix64(master ^ hash_id(experiment)) + index);
}

/// Either link's absolute angle from vertical beyond pi/2.
inline bool has_fallen(const State& x) {
  const double half_pi = std::numbers::pi / 2.0;
  double phi = 0.0;
  for (Eigen::Index i = 0; i < x.q.size(); ++i) {
    phi += x.q(i);
    if (std::abs(phi) > half_pi) return true;
  }
  return false;
}

/// n_f uncontrolled falls from upright rest under Gaussian torque noise.
inline std::vector<DataPoint> generate_falls(const ExperimentConfig& cfg, int n_f,
                                             std::uint64_t seed) {
  if (n_f < 1) throw InvalidArgument("generate_falls: n_f must be >= 1");
  const auto& chain = cfg.chain;
  const int m = chain.n_actuated();
  const int steps = cfg.points_per_fall();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, cfg.sigma0);
  std::vector<DataPoint> out;
  out.reserve(static_cast<std::size_t>(n_f) * static_cast<std::size_t>(steps));
  for (int f = 0; f < n_f; ++f) {
    State x = State::zero(chain.n_links);
    for (int i = 0; i < steps; ++i) {
      Vec tau(m);
      for (int k = 0; k < m; ++k) tau(k) = noise(rng);
      out.push_back({x.t, x, tau, 0.0});
      x = step(chain, x, tau, cfg.controller.dt);
    }
  }
  return out;
}

/// Balances from upright rest under disturbance torque of std noise_amp on
/// the actuated joints; returns the time of the first fall or T_max.
inline TrialRecord run_balance_trial(const BallTree& store, const ExperimentConfig& cfg,
                                     double noise_amp, std::uint64_t seed) {
  const auto& chain = cfg.chain;
  const auto& ccfg = cfg.controller;
  const int m = chain.n_actuated();
  if (store.state_dim() != chain.n_links) {
    throw DatasetSchemaMismatch("dataset state dimension does not match the chain");
  }
  std::mt19937_64 rng(mix64(seed ^ 0x6e6f697365ULL));
  std::normal_distribution<double> noise(0.0, 1.0);
  ControllerState ctrl(mix64(seed ^ 0x626f6f74ULL));

  TrialRecord rec;
  rec.seed = seed;
  rec.t_f = cfg.T_max;
  State x = State::zero(chain.n_links);
  const auto steps = static_cast<long>(std::lround(cfg.T_max / ccfg.dt));
  for (long i = 0; i < steps; ++i) {
    const Vec tau = ctrl.step(x, store, ccfg, m);
    Vec applied = tau;
    for (int k = 0; k < m; ++k) applied(k) += noise_amp * noise(rng);
    if (cfg.regress_on_applied_torque) ctrl.report_applied(applied);
    try {
      x = step(chain, x, applied, ccfg.dt);
    } catch (const NonFiniteState&) {
      rec.t_f = x.t;
      rec.fell = true;
      return rec;
    }
    if (has_fallen(x)) {
      rec.t_f = std::min(x.t, cfg.T_max);
      rec.fell = rec.t_f < cfg.T_max;
      return rec;
    }
  }
  return rec;
}

/// Runs f(i) for i in [0, count) on a pool of threads.
template <class F>
void parallel_for(int count, int threads, F&& f) {
  int n = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  n = std::clamp(n, 1, std::max(1, count));
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) f(i);
    });
  }
  for (auto& th : pool) th.join();
}

/// Independent trials at one N_f: each trial resamples its own fall data.
inline std::vector<TrialRecord> run_trials(const ExperimentConfig& cfg, int n_f, double noise_amp,
                                           std::string_view experiment) {
  std::vector<TrialRecord> recs(static_cast<std::size_t>(cfg.trials));
  parallel_for(cfg.trials, cfg.threads, [&](int i) {
    const std::uint64_t seed =
        derive_seed(cfg.master_seed, experiment, static_cast<std::uint64_t>(n_f) * 1000003ULL +
                                                     static_cast<std::uint64_t>(i));
    const BallTree store(generate_falls(cfg, n_f, mix64(seed ^ 0x66616c6cULL)));
    TrialRecord r = run_balance_trial(store, cfg, noise_amp, seed);
    r.trial_id = i;
    r.n_f = n_f;
    r.noise_multiplier = cfg.sigma0 > 0.0 ? noise_amp / cfg.sigma0 : 0.0;
    recs[static_cast<std::size_t>(i)] = r;
  });
  return recs;
}

/// Trials against one fixed dataset (no resampling between trials).
inline std::vector<TrialRecord> run_trials_on(const BallTree& store, const ExperimentConfig& cfg,
                                              int n_f, double noise_amp,
                                              std::string_view experiment) {
  std::vector<TrialRecord> recs(static_cast<std::size_t>(cfg.trials));
  parallel_for(cfg.trials, cfg.threads, [&](int i) {
    const std::uint64_t seed =
        derive_seed(cfg.master_seed, experiment, static_cast<std::uint64_t>(i));
    TrialRecord r = run_balance_trial(store, cfg, noise_amp, seed);
    r.trial_id = i;
    r.n_f = n_f;
    r.noise_multiplier = cfg.sigma0 > 0.0 ? noise_amp / cfg.sigma0 : 0.0;
    recs[static_cast<std::size_t>(i)] = r;
  });
  return recs;
}

struct SweepPoint {
  int n_f = 0;
  double mean_t_f = 0.0;
  double unstable_fraction = 0.0;  // (T - <t_f>) / T
  std::vector<TrialRecord> trials;
};

inline double mean_fall_time(const std::vector<TrialRecord>& recs) {
  double s = 0.0;
  for (const auto& r : recs) s += r.t_f;
  return recs.empty() ? 0.0 : s / static_cast<double>(recs.size());
}

inline std::vector<SweepPoint> sweep_nf(const ExperimentConfig& cfg,
                                        std::string_view experiment = "sweep") {
  if (cfg.n_f_list.empty()) throw InvalidArgument("sweep_nf: empty N_f list");
  std::vector<SweepPoint> out;
  for (int n_f : cfg.n_f_list) {
    SweepPoint p;
    p.n_f = n_f;
    p.trials = run_trials(cfg, n_f, cfg.noise_multiplier * cfg.sigma0, experiment);
    p.mean_t_f = mean_fall_time(p.trials);
    p.unstable_fraction = (cfg.T_max - p.mean_t_f) / cfg.T_max;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace cpc
