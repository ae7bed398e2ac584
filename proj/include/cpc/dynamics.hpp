#pragma once

// Planar N-link chain hanging from (or balancing on) a frictionless pivot.
//
// Joint angles are relative: q[0] is link 0's angle from vertical-up, q[i]
// is link i's angle relative to link i-1. Positive angles rotate from +y
// towards +x. Links are capsules whose cylinder length equals the joint
// spacing; each link's centre of mass sits at its midpoint.

#include <cmath>
#include <numbers>
#include <vector>

#include "cpc/errors.hpp"
#include "cpc/mathkit.hpp"

namespace cpc {

struct MassProps {
  double mass = 0.0;
  double com_offset = 0.0;   // distance from the proximal joint
  double inertia_com = 0.0;  // about the COM, axis normal to the plane
};

/// Mass properties of a capsule: a cylinder of the given length plus two
/// hemispherical end caps.
inline MassProps capsule_mass_props(double length, double radius, double density) {
  if (!(length > 0.0 && radius > 0.0 && density > 0.0)) {
    throw InvalidArgument("capsule_mass_props: arguments must be positive");
  }
  const double pi = std::numbers::pi;
  const double m_cyl = density * pi * radius * radius * length;
  const double m_caps = density * 4.0 / 3.0 * pi * radius * radius * radius;
  // Cylinder about a diameter through its centre, plus both caps moved out
  // to their centroids at L/2 + 3r/8 (hemisphere I_com = 83/320 m r^2).
  const double i_cyl = m_cyl * (0.25 * radius * radius + length * length / 12.0);
  const double i_caps =
      m_caps * (0.4 * radius * radius + 0.375 * radius * length + 0.25 * length * length);
  return {m_cyl + m_caps, 0.5 * length, i_cyl + i_caps};
}

struct ChainParams {
  int n_links = 2;
  double segment_length = 1.0;
  double capsule_radius = 0.1;
  double density = 1.0;
  double gravity = 10.0;
  std::vector<int> actuated_joints{1};

  /// Two-link acrobot with the elbow actuated.
  static ChainParams acrobot() { return {}; }

  static ChainParams fully_actuated(int n) {
    ChainParams p;
    p.n_links = n;
    p.actuated_joints.clear();
    for (int i = 0; i < n; ++i) p.actuated_joints.push_back(i);
    return p;
  }

  int n_actuated() const { return static_cast<int>(actuated_joints.size()); }

  void validate() const {
    if (n_links < 1) throw InvalidArgument("ChainParams: n_links must be >= 1");
    if (!(segment_length > 0.0 && capsule_radius > 0.0 && density > 0.0)) {
      throw InvalidArgument("ChainParams: geometry must be positive");
    }
    std::vector<bool> seen(static_cast<std::size_t>(n_links), false);
    for (int j : actuated_joints) {
      if (j < 0 || j >= n_links || seen[static_cast<std::size_t>(j)]) {
        throw InvalidArgument("ChainParams: actuated joints must be distinct indices < n_links");
      }
      seen[static_cast<std::size_t>(j)] = true;
    }
  }

  MassProps link_props() const {
    return capsule_mass_props(segment_length, capsule_radius, density);
  }

  /// Selection matrix B_tau (N x M).
  Mat actuation_matrix() const {
    Mat bt = Mat::Zero(n_links, n_actuated());
    for (int k = 0; k < n_actuated(); ++k) bt(actuated_joints[static_cast<std::size_t>(k)], k) = 1.0;
    return bt;
  }
};

struct State {
  Vec q;
  Vec qdot;
  double t = 0.0;

  static State zero(int n) { return {Vec::Zero(n), Vec::Zero(n), 0.0}; }
  Eigen::Index dim() const { return q.size(); }
  bool finite() const { return q.allFinite() && qdot.allFinite() && std::isfinite(t); }
};

struct DynamicsTerms {
  Mat D;
  Vec H;
};

namespace detail {

// phi = S q with S lower-triangular ones.
inline Mat absolute_map(int n) {
  Mat s = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) s(i, j) = 1.0;
  return s;
}

// Lever coefficient of link i's angle on the COM position of link k.
inline double lever(int k, int i, double l, double c) {
  if (i < k) return l;
  if (i == k) return c;
  return 0.0;
}

struct ChainCoefficients {
  Mat m;       // m_ij = sum_k mass a_ki a_kj
  Vec grav;    // sum_k mass a_ki
  double inertia;
};

inline ChainCoefficients chain_coefficients(const ChainParams& p) {
  const MassProps mp = p.link_props();
  const int n = p.n_links;
  ChainCoefficients cc{Mat::Zero(n, n), Vec::Zero(n), mp.inertia_com};
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < n; ++i) {
      const double ai = lever(k, i, p.segment_length, mp.com_offset);
      cc.grav(i) += mp.mass * ai;
      for (int j = 0; j < n; ++j) {
        cc.m(i, j) += mp.mass * ai * lever(k, j, p.segment_length, mp.com_offset);
      }
    }
  }
  return cc;
}

}  // namespace detail

/// D(q) and H(q, qdot) of D qddot + H = B_tau tau.
inline DynamicsTerms manipulator_terms(const ChainParams& p, const Vec& q, const Vec& qdot) {
  const int n = p.n_links;
  const auto cc = detail::chain_coefficients(p);
  const Mat s = detail::absolute_map(n);
  const Vec phi = s * q;
  const Vec phidot = s * qdot;

  Mat d_abs(n, n);
  Vec h_abs(n);
  for (int i = 0; i < n; ++i) {
    double h = -p.gravity * cc.grav(i) * std::sin(phi(i));
    for (int j = 0; j < n; ++j) {
      d_abs(i, j) = cc.m(i, j) * std::cos(phi(i) - phi(j));
      h += cc.m(i, j) * std::sin(phi(i) - phi(j)) * phidot(j) * phidot(j);
    }
    d_abs(i, i) += cc.inertia;
    h_abs(i) = h;
  }
  return {s.transpose() * d_abs * s, s.transpose() * h_abs};
}

/// Kinetic plus potential energy.
inline double total_energy(const ChainParams& p, const State& x) {
  const auto cc = detail::chain_coefficients(p);
  const Mat s = detail::absolute_map(p.n_links);
  const Vec phi = s * x.q;
  const auto terms = manipulator_terms(p, x.q, x.qdot);
  double potential = 0.0;
  for (int i = 0; i < p.n_links; ++i) potential += p.gravity * cc.grav(i) * std::cos(phi(i));
  return 0.5 * x.qdot.dot(terms.D * x.qdot) + potential;
}

inline Vec accel(const ChainParams& p, const State& x, const Vec& tau) {
  if (tau.size() != p.n_actuated()) throw InvalidArgument("accel: tau has wrong length");
  const auto terms = manipulator_terms(p, x.q, x.qdot);
  const Vec rhs = p.actuation_matrix() * tau - terms.H;
  Eigen::LLT<Mat> llt(terms.D);
  if (llt.info() != Eigen::Success) throw SingularMatrix("inertia matrix is not positive definite");
  return llt.solve(rhs);
}

/// B(q) = D(q)^{-1} B_tau.
inline Mat exact_control_matrix(const ChainParams& p, const Vec& q) {
  const auto terms = manipulator_terms(p, q, Vec::Zero(p.n_links));
  Eigen::LLT<Mat> llt(terms.D);
  if (llt.info() != Eigen::Success) throw SingularMatrix("inertia matrix is not positive definite");
  return llt.solve(p.actuation_matrix());
}

enum class Integrator { rk4, semi_implicit_euler };

/// Advances one fixed step with tau held constant.
inline State step(const ChainParams& p, const State& x, const Vec& tau, double dt,
                  Integrator method = Integrator::rk4) {
  if (!(dt > 0.0)) throw InvalidArgument("step: dt must be positive");
  State next;
  if (method == Integrator::semi_implicit_euler) {
    const Vec a = accel(p, x, tau);
    next.qdot = x.qdot + dt * a;
    next.q = x.q + dt * next.qdot;
  } else {
    auto deriv = [&](const Vec& q, const Vec& qd) { return accel(p, State{q, qd, 0.0}, tau); };
    const Vec k1v = deriv(x.q, x.qdot);
    const Vec k1q = x.qdot;
    const Vec k2v = deriv(x.q + 0.5 * dt * k1q, x.qdot + 0.5 * dt * k1v);
    const Vec k2q = x.qdot + 0.5 * dt * k1v;
    const Vec k3v = deriv(x.q + 0.5 * dt * k2q, x.qdot + 0.5 * dt * k2v);
    const Vec k3q = x.qdot + 0.5 * dt * k2v;
    const Vec k4v = deriv(x.q + dt * k3q, x.qdot + dt * k3v);
    const Vec k4q = x.qdot + dt * k3v;
    next.q = x.q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
    next.qdot = x.qdot + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
  }
  next.t = x.t + dt;
  if (!next.finite()) throw NonFiniteState("integration produced non-finite values");
  return next;
}

/// RK4 step with the torque re-evaluated from the state at every stage
/// (continuous-time feedback).
template <class Policy>
State step_closed_loop(const ChainParams& p, const State& x, Policy&& policy, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("step_closed_loop: dt must be positive");
  auto deriv = [&](const Vec& q, const Vec& qd, double t) {
    const State s{q, qd, t};
    return accel(p, s, policy(s));
  };
  const double h = 0.5 * dt;
  const Vec k1v = deriv(x.q, x.qdot, x.t);
  const Vec k1q = x.qdot;
  const Vec k2v = deriv(x.q + h * k1q, x.qdot + h * k1v, x.t + h);
  const Vec k2q = x.qdot + h * k1v;
  const Vec k3v = deriv(x.q + h * k2q, x.qdot + h * k2v, x.t + h);
  const Vec k3q = x.qdot + h * k2v;
  const Vec k4v = deriv(x.q + dt * k3q, x.qdot + dt * k3v, x.t + dt);
  const Vec k4q = x.qdot + dt * k3v;
  State next;
  next.q = x.q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
  next.qdot = x.qdot + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
  next.t = x.t + dt;
  if (!next.finite()) throw NonFiniteState("integration produced non-finite values");
  return next;
}

}  // namespace cpc
