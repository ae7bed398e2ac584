#pragma once

// Property suites: epsilon sweeps for path convergence, coordinate
// invariance and the CPC/ZD correspondence; soundness of the ball-tree loss
// bounds; closed-form stage-I value against quadrature.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "cpc/cpc_core.hpp"
#include "cpc/dynamics.hpp"
#include "cpc/io.hpp"
#include "cpc/target_store.hpp"
#include "cpc/value.hpp"
#include "cpc/zd_check.hpp"

namespace cpc {

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("loglog_slope: need >= 2 points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0)) throw InvalidArgument("loglog_slope: values must be positive");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

struct EpsSweep {
  std::vector<double> eps;
  std::vector<double> value;
  double slope() const { return loglog_slope(eps, value); }
};

inline EpsSweep sweep_epsilon(const std::vector<double>& eps,
                              const std::function<double(double)>& f) {
  EpsSweep s;
  s.eps = eps;
  for (double e : eps) s.value.push_back(f(e));
  return s;
}

inline void write_sweep(const std::string& path, const std::vector<std::string>& names,
                        const std::vector<EpsSweep>& sweeps) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "series,epsilon,value\n";
  for (std::size_t k = 0; k < sweeps.size(); ++k) {
    for (std::size_t i = 0; i < sweeps[k].eps.size(); ++i) {
      f << names[k] << ',' << fmt17(sweeps[k].eps[i]) << ',' << fmt17(sweeps[k].value[i]) << '\n';
    }
  }
  if (!f) throw IoError("write to '" + path + "' failed");
}

/// q with q - q_ref along the unit column of B(q) (N - M = 1), by fixed-point
/// iteration, so the offset lies in the range of the control matrix at q.
inline Vec offset_along_B(const ChainParams& p, const Vec& q_ref, double delta) {
  Vec q = q_ref;
  for (int it = 0; it < 60; ++it) q = q_ref + delta * exact_control_matrix(p, q).col(0).normalized();
  return q;
}

/// Distance from q to the polyline through path.
inline double distance_to_path(const Vec& q, const std::vector<Vec>& path) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < path.size(); ++k) {
    const Vec d = path[k + 1] - path[k];
    const double len2 = d.squaredNorm();
    const double u = len2 > 0.0 ? std::clamp((q - path[k]).dot(d) / len2, 0.0, 1.0) : 0.0;
    best = std::min(best, (q - path[k] - u * d).norm());
  }
  return best;
}

/// Configuration path of x_d under constant tau_d over [-half_span, half_span].
/// Backward samples use time reversal (no dissipation in the model).
inline std::vector<Vec> target_path(const ChainParams& p, const State& xd, const Vec& tau_d,
                                    double half_span, int samples_per_side) {
  const double h = half_span / samples_per_side;
  std::vector<Vec> back, path;
  State a{xd.q, -xd.qdot, 0.0};
  for (int i = 0; i < samples_per_side; ++i) {
    a = step(p, a, tau_d, h);
    back.push_back(a.q);
  }
  path.assign(back.rbegin(), back.rend());
  path.push_back(xd.q);
  a = xd;
  for (int i = 0; i < samples_per_side; ++i) {
    a = step(p, a, tau_d, h);
    path.push_back(a.q);
  }
  return path;
}

// ---- path convergence ------------------------------------------------------

struct PathScenario {
  ChainParams chain = ChainParams::acrobot();
  State xd{Vec::Zero(2), (Vec(2) << 0.05, 0.02).finished(), 0.0};
  Vec tau_d = Vec::Zero(1);
  /// Initial velocity offset along B (reachable: t0 = 0, s = 1).
  double velocity_offset = 0.5;
  double position_offset = 0.0;
  double kp = 1.0;
  double horizon = 5.0;  // in units of epsilon
  int steps = 4000;
};

/// Distance from q(horizon * eps) to the configuration path of x_d under the
/// CPC law, with B, the split, b and (t0, s) re-derived from the exact
/// dynamics at every step.
inline double path_error(const PathScenario& sc, double eps) {
  const auto& p = sc.chain;
  const GainSpec gain = GainSpec::from_epsilon(eps, sc.kp);
  const Vec q0 = offset_along_B(p, sc.xd.q, sc.position_offset);
  State x{q0, sc.xd.qdot + sc.velocity_offset * exact_control_matrix(p, q0).col(0).normalized(),
          0.0};
  const double dt = sc.horizon * eps / sc.steps;
  for (int i = 0; i < sc.steps; ++i) {
    const Mat b = exact_control_matrix(p, x.q);
    const CoordSplit split = split_coordinates(b);
    const NullCovector nc = null_covector(b, split);
    const State now{x.q, x.qdot, 0.0};
    const Reparam rep = reparam_params(now, sc.xd, nc);
    x = step(p, x, cpc_tau(now, sc.xd, b, split, rep, gain, sc.tau_d), dt);
  }
  const double travel = (x.q - sc.xd.q).norm() / std::max(1e-12, sc.xd.qdot.norm());
  const auto path = target_path(p, sc.xd, sc.tau_d, 2.0 * (travel + sc.horizon * eps), 20000);
  return distance_to_path(x.q, path);
}

// ---- coordinate invariance -------------------------------------------------

struct InvarianceScenario {
  ChainParams chain = ChainParams::acrobot();
  State xd{(Vec(2) << 0.3, -0.5).finished(), (Vec(2) << 0.5, 0.8).finished(), 0.0};
  Vec dq = (Vec(2) << 0.05, 0.02).finished();
  Vec dqdot = (Vec(2) << 0.1, -0.1).finished();
  Vec tau_d = Vec::Zero(1);
  double kp = 1.0;
  double horizon = 5.0;
  int steps = 2000;
};

/// CPC torque computed in the coordinates q~ = T q, with B~ = T B.
inline Vec cpc_tau_transformed(const Mat& t, const State& x, const State& x_ref, const State& xd,
                               const Mat& b, const GainSpec& gain, const Vec& tau_d) {
  const State xs{t * x.q, t * x.qdot, x.t};
  const State x0{t * x_ref.q, t * x_ref.qdot, 0.0};
  const State xdt{t * xd.q, t * xd.qdot, 0.0};
  const Mat bt = t * b;
  const CoordSplit split = split_coordinates(bt);
  const NullCovector nc = null_covector(bt, split);
  return cpc_tau(xs, xdt, bt, split, reparam_params(x0, xdt, nc), gain, tau_d);
}

/// max over [0, horizon * eps] of |tau~ - tau| / |tau(0)| along the closed
/// loop under tau, with B, b and (t0, s) fixed at t = 0.
inline double invariance_gap(const InvarianceScenario& sc, const Mat& c, double eps) {
  const auto& p = sc.chain;
  if (c.rows() != p.n_links || Eigen::FullPivLU<Mat>(c).rank() < c.rows()) {
    throw InvalidArgument("invariance_gap: C must be square and invertible");
  }
  const GainSpec gain = GainSpec::from_epsilon(eps, sc.kp);
  const State x0{sc.xd.q + sc.dq, sc.xd.qdot + sc.dqdot, 0.0};
  const Mat b0 = exact_control_matrix(p, x0.q);
  const Mat id = Mat::Identity(p.n_links, p.n_links);
  const double dt = sc.horizon * eps / sc.steps;
  State x = x0;
  double worst = 0.0, scale = 0.0;
  for (int i = 0; i <= sc.steps; ++i) {
    const Vec tau = cpc_tau_transformed(id, x, x0, sc.xd, b0, gain, sc.tau_d);
    const Vec tau_t = cpc_tau_transformed(c, x, x0, sc.xd, b0, gain, sc.tau_d);
    if (i == 0) scale = tau.norm();
    worst = std::max(worst, (tau_t - tau).norm());
    if (i < sc.steps) x = step(p, x, tau, dt);
  }
  return scale > 0.0 ? worst / scale : worst;
}

/// Gaussian N x N matrix with condition number below cond_max.
inline Mat random_invertible(std::mt19937_64& rng, int n, double cond_max = 50.0) {
  std::normal_distribution<double> nd;
  for (;;) {
    Mat c(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) c(i, j) = nd(rng);
    if (condition_number(c) < cond_max) return c;
  }
}

// ---- CPC / ZD correspondence -------------------------------------------------

struct CorrespondenceScenario {
  ChainParams chain = ChainParams::acrobot();
  State xd{(Vec(2) << 0.3, -0.5).finished(), (Vec(2) << 0.5, 0.8).finished(), 0.0};
  double position_offset = 0.01;  // along B at the start
  GapOptions options = [] {
    GapOptions o;
    o.curved = true;
    return o;
  }();
};

inline double scenario_gap(const CorrespondenceScenario& sc, double eps,
                           const std::optional<Vec>& c = std::nullopt) {
  const State x{offset_along_B(sc.chain, sc.xd.q, sc.position_offset), sc.xd.qdot, 0.0};
  GapOptions o = sc.options;
  o.c = c;
  return correspondence_gap(sc.chain, x, sc.xd, eps, o);
}

// ---- loss bound soundness ----------------------------------------------------

struct SandwichReport {
  std::size_t pairs = 0;
  std::size_t samples = 0;
  std::size_t violations = 0;
  double worst_excess = 0.0;  // largest relative excursion outside the bounds
  double mean_gap_lower = 0.0;  // mean relative slack of the lowest sample above L_l
};

/// Random (node, context) pairs with in-ball samples checked against
/// node_bounds. The reference loss goes through reparam_params and
/// proximity_loss. flip_b_sign negates b inside the bound context only.
inline SandwichReport bound_sandwich(std::uint64_t seed, std::size_t pairs, std::size_t samples,
                                     bool flip_b_sign = false, double tol = 1e-9) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  SandwichReport rep;
  double gap_sum = 0.0;
  while (rep.pairs < pairs) {
    const int n = 2 + static_cast<int>(rep.pairs % 2);
    Mat b(n, n - 1);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n - 1; ++j) b(i, j) = nd(rng);
    const CoordSplit split = split_coordinates(b);
    const NullCovector nc = null_covector(b, split);
    State x0{Vec(n), Vec(n), 0.0};
    for (int i = 0; i < n; ++i) {
      x0.q(i) = nd(rng);
      x0.qdot(i) = nd(rng);
    }
    if (std::abs(nc.b.col(0).dot(x0.qdot)) < 1e-2) continue;
    const double omega = 0.5 + 20.0 * ud(rng);
    const double s_g = ud(rng) < 0.5 ? (ud(rng) < 0.5 ? 1.0 : -1.0) : 4.0 * ud(rng) - 2.0;
    QueryContext ctx = make_query_context(x0, nc, omega, s_g);
    if (flip_b_sign) {
      ctx.beta_xi = -ctx.beta_xi;
      ctx.beta_eta = -ctx.beta_eta;
      ctx.alpha_xi = -ctx.alpha_xi;
      ctx.b = -ctx.b;
    }
    Vec center(2 * n);
    for (int i = 0; i < 2 * n; ++i) center(i) = nd(rng);
    const double rho = std::pow(10.0, -3.0 + 3.0 * ud(rng));
    const LossBounds lb = node_bounds(center, rho, ctx);
    ++rep.pairs;
    double lowest = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < samples; ++s) {
      Vec dir(2 * n);
      for (int i = 0; i < 2 * n; ++i) dir(i) = nd(rng);
      // every fourth sample on the sphere, the rest uniform in the ball
      const double r = s % 4 == 0 ? rho : rho * std::pow(ud(rng), 1.0 / (2.0 * n));
      const Vec pt = center + r * dir.normalized();
      const State xd{pt.head(n), pt.tail(n), 0.0};
      const Reparam rp = reparam_params(x0, xd, nc, 0.0);
      const double loss = proximity_loss(rp.t0, rp.s, omega, s_g);
      lowest = std::min(lowest, loss);
      const double scale = 1.0 + std::abs(lb.upper);
      const double excess = std::max(lb.lower - loss, loss - lb.upper) / scale;
      ++rep.samples;
      if (excess > tol) ++rep.violations;
      rep.worst_excess = std::max(rep.worst_excess, excess);
    }
    gap_sum += (lowest - lb.lower) / (1.0 + std::abs(lb.upper));
  }
  rep.mean_gap_lower = rep.pairs ? gap_sum / static_cast<double>(rep.pairs) : 0.0;
  return rep;
}

// ---- stage-I value quadrature ------------------------------------------------

struct QuadratureReport {
  std::size_t instances = 0;
  double worst_rel = 0.0;
};

/// T_gamma^{-1} int_0^inf (2 tau_d^T C dtau + dtau^T C dtau) dt with the
/// critically damped error integrated numerically (RK4 on [dchi; dchidot]).
inline double stage_one_quadrature(const Vec& dx0, const Mat& b_chi, double kappa, const Mat& c_tau,
                                   const Vec& tau_d, double t_gamma, int steps_per_tau = 400,
                                   double horizon_tau = 50.0) {
  const auto m = b_chi.rows();
  const Mat b_inv = b_chi.inverse();
  auto dtau = [&](const Vec& e) {
    return Vec(-b_inv * (kappa * kappa * e.head(m) + 2.0 * kappa * e.tail(m)));
  };
  auto integrand = [&](const Vec& e) {
    const Vec d = dtau(e);
    return 2.0 * tau_d.dot(c_tau * d) + d.dot(c_tau * d);
  };
  auto rhs = [&](const Vec& e) {
    Vec de(2 * m);
    de.head(m) = e.tail(m);
    de.tail(m) = -kappa * kappa * e.head(m) - 2.0 * kappa * e.tail(m);
    return de;
  };
  const double h = 1.0 / (kappa * steps_per_tau);
  const auto n = static_cast<long>(horizon_tau * steps_per_tau);
  Vec e = dx0;
  double sum = 0.0;
  // Simpson's rule on the RK4 samples; n is even.
  double f_prev = integrand(e);
  for (long i = 0; i < n; i += 2) {
    Vec e1 = e, e2;
    for (int half = 0; half < 2; ++half) {
      const Vec k1 = rhs(e1);
      const Vec k2 = rhs(e1 + 0.5 * h * k1);
      const Vec k3 = rhs(e1 + 0.5 * h * k2);
      const Vec k4 = rhs(e1 + h * k3);
      e1 = e1 + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (half == 0) e2 = e1;
    }
    const double f_mid = integrand(e2), f_end = integrand(e1);
    sum += h / 3.0 * (f_prev + 4.0 * f_mid + f_end);
    f_prev = f_end;
    e = e1;
  }
  return sum / t_gamma;
}

inline QuadratureReport value_quadrature(std::uint64_t seed, std::size_t instances) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  QuadratureReport rep;
  for (std::size_t k = 0; k < instances; ++k) {
    const int n = 2 + static_cast<int>(k % 3);
    const int m = k % 3 == 2 ? 2 : n - 1;
    Mat b(n, m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) b(i, j) = nd(rng);
    const CoordSplit split = split_coordinates(b);
    State x0{Vec(n), Vec(n), 0.0}, xd{Vec(n), Vec(n), 0.0};
    for (int i = 0; i < n; ++i) {
      x0.q(i) = nd(rng);
      x0.qdot(i) = nd(rng);
      xd.q(i) = nd(rng);
      xd.qdot(i) = nd(rng);
    }
    TargetCandidate cand;
    cand.point = {0.0, xd, Vec(m), 0.0};
    for (int j = 0; j < m; ++j) cand.point.tau(j) = nd(rng);
    cand.rep = {0.3 * nd(rng), 0.5 + ud(rng)};
    Mat a(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) a(i, j) = nd(rng);
    RewardSpec spec;
    spec.C_tau = -(a * a.transpose());
    spec.T_gamma = 0.2 + 2.0 * ud(rng);
    const double kappa = 1.0 + 49.0 * ud(rng);
    const GainSpec gain = GainSpec::from_kappa(kappa);
    const double closed = value_estimate(x0, cand, b, split, gain, spec).v_I;
    const Vec dx = renormalized_error_chi(x0, xd, split, cand.rep);
    const double quad = stage_one_quadrature(dx, gather_rows(b, split.chi), kappa, spec.C_tau,
                                             cand.point.tau, spec.T_gamma);
    const double rel = std::abs(closed - quad) / std::max(std::abs(quad), 1e-12);
    rep.worst_rel = std::max(rep.worst_rel, rel);
    ++rep.instances;
  }
  return rep;
}

// ---- runner --------------------------------------------------------------------

struct VerifyOptions {
  std::uint64_t seed = 1;
  bool mutate_b_sign = false;
  std::string csv_dir;  // empty: no sweep files
  std::size_t sandwich_pairs = 1000;
  std::size_t sandwich_samples = 1000;
  std::size_t quadrature_instances = 100;
  int random_maps = 5;
};

struct SuiteResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

inline const std::vector<double>& slope_grid_path() {
  static const std::vector<double> g{3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4};
  return g;
}

inline const std::vector<double>& slope_grid_decades() {
  static const std::vector<double> g{1e-1, 1e-2, 1e-3, 1e-4};
  return g;
}

inline SuiteResult suite_path_convergence(const VerifyOptions& opt) {
  const PathScenario sc;
  const EpsSweep s = sweep_epsilon(slope_grid_path(), [&](double e) { return path_error(sc, e); });
  if (!opt.csv_dir.empty()) write_sweep(opt.csv_dir + "/path_error.csv", {"path_error"}, {s});
  const double slope = s.slope();
  return {"path convergence", std::abs(slope - 1.0) <= 0.3,
          "log-log slope " + fmt17(slope) + " (target 1 +- 0.3)"};
}

inline SuiteResult suite_invariance(const VerifyOptions& opt) {
  const InvarianceScenario sc;
  std::mt19937_64 rng(mix64(opt.seed ^ 0x696e76ULL));
  std::vector<EpsSweep> sweeps;
  std::vector<std::string> names;
  bool pass = true;
  std::string detail = "slopes";
  for (int k = 0; k < opt.random_maps; ++k) {
    const Mat c = random_invertible(rng, sc.chain.n_links);
    sweeps.push_back(
        sweep_epsilon(slope_grid_decades(), [&](double e) { return invariance_gap(sc, c, e); }));
    names.push_back("map" + std::to_string(k));
    const double slope = sweeps.back().slope();
    pass = pass && std::abs(slope - 1.0) <= 0.3;
    detail += " " + fmt17(slope).substr(0, 6);
  }
  if (!opt.csv_dir.empty()) write_sweep(opt.csv_dir + "/invariance_gap.csv", names, sweeps);
  return {"coordinate invariance", pass, detail + " (target 1 +- 0.3 each)"};
}

/// Last-decade log slope below 0.3 and a floor at least 10 times the c = b
/// gap at the smallest epsilon.
inline bool is_plateau(const EpsSweep& random_c, const EpsSweep& aligned) {
  const std::size_t n = random_c.value.size();
  const double last = std::log(random_c.value[n - 2] / random_c.value[n - 1]) /
                      std::log(random_c.eps[n - 2] / random_c.eps[n - 1]);
  return last < 0.3 && random_c.value[n - 1] > 10.0 * aligned.value[n - 1];
}

inline bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] < v[i - 1])) return false;
  return true;
}

inline SuiteResult suite_correspondence(const VerifyOptions& opt) {
  const CorrespondenceScenario sc;
  const EpsSweep aligned =
      sweep_epsilon(slope_grid_decades(), [&](double e) { return scenario_gap(sc, e); });
  std::mt19937_64 rng(mix64(opt.seed ^ 0x7a64ULL));
  std::normal_distribution<double> nd;
  const Vec b = null_covector(exact_control_matrix(sc.chain, sc.xd.q),
                              split_coordinates(exact_control_matrix(sc.chain, sc.xd.q)))
                    .b.col(0)
                    .normalized();
  std::vector<EpsSweep> sweeps{aligned};
  std::vector<std::string> names{"c_eq_b"};
  bool plateau = true;
  int drawn = 0;
  while (drawn < 3) {
    Vec c(sc.chain.n_links);
    for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = nd(rng);
    c.normalize();
    // keep away from b and from a vanishing phase velocity
    if (std::abs(c.dot(b)) > 0.9 || std::abs(c.dot(sc.xd.qdot)) < 0.1) continue;
    sweeps.push_back(
        sweep_epsilon(slope_grid_decades(), [&](double e) { return scenario_gap(sc, e, c); }));
    names.push_back("random" + std::to_string(drawn));
    plateau = plateau && is_plateau(sweeps.back(), aligned);
    ++drawn;
  }
  if (!opt.csv_dir.empty()) write_sweep(opt.csv_dir + "/correspondence_gap.csv", names, sweeps);
  const double slope = aligned.slope();
  const bool pass = slope >= 0.7 && strictly_decreasing(aligned.value) && plateau;
  return {"cpc/zd correspondence", pass,
          "c=b slope " + fmt17(slope).substr(0, 6) + (plateau ? ", random c plateaus" :
                                                                ", random c does not plateau")};
}

inline SuiteResult suite_sandwich(const VerifyOptions& opt) {
  const auto r = bound_sandwich(mix64(opt.seed ^ 0x73616eULL), opt.sandwich_pairs,
                                opt.sandwich_samples, opt.mutate_b_sign);
  return {"loss bound sandwich", r.violations == 0,
          std::to_string(r.violations) + " violations in " + std::to_string(r.samples) +
              " samples, worst excess " + fmt17(r.worst_excess)};
}

inline SuiteResult suite_quadrature(const VerifyOptions& opt) {
  const auto r = value_quadrature(mix64(opt.seed ^ 0x717561ULL), opt.quadrature_instances);
  return {"stage-I value quadrature", r.worst_rel <= 1e-3,
          "worst relative error " + fmt17(r.worst_rel) + " over " + std::to_string(r.instances)};
}

inline std::vector<SuiteResult> run_verify(const VerifyOptions& opt, std::ostream* log = nullptr) {
  std::vector<SuiteResult> out;
  for (auto suite : {suite_path_convergence, suite_invariance, suite_correspondence,
                     suite_sandwich, suite_quadrature}) {
    SuiteResult r;
    try {
      r = suite(opt);
    } catch (const std::exception& e) {
      r = {"(suite error)", false, e.what()};
    }
    if (log) *log << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace cpc
