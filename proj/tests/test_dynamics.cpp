#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cpc/dynamics.hpp"

using namespace cpc;

namespace {

constexpr double kPi = std::numbers::pi;

Vec random_vec(std::mt19937_64& rng, int n, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

// Lagrangian from explicit link kinematics in long double. Link k spans from
// its proximal joint p_k along (sin phi_k, cos phi_k); uniform mass so the COM
// sits at the midpoint.
struct LagrangianOracle {
  int n;
  long double l, m, c, inertia, g;

  long double operator()(const std::vector<long double>& q, const std::vector<long double>& qd) const {
    long double px = 0, py = 0, vx = 0, vy = 0, phi = 0, phid = 0;
    long double kinetic = 0, potential = 0;
    for (int k = 0; k < n; ++k) {
      phi += q[static_cast<std::size_t>(k)];
      phid += qd[static_cast<std::size_t>(k)];
      const long double cx = px + c * std::sin(phi), cy = py + c * std::cos(phi);
      const long double cvx = vx + c * std::cos(phi) * phid, cvy = vy - c * std::sin(phi) * phid;
      kinetic += 0.5L * m * (cvx * cvx + cvy * cvy) + 0.5L * inertia * phid * phid;
      potential += m * g * cy;
      (void)cx;
      px += l * std::sin(phi);
      py += l * std::cos(phi);
      vx += l * std::cos(phi) * phid;
      vy -= l * std::sin(phi) * phid;
    }
    return kinetic - potential;
  }
};

// Generalized force d/dt dL/dqdot - dL/dq along q(t) = q + qd t + a t^2 / 2.
Vec euler_lagrange_force(const LagrangianOracle& lag, const Vec& q0, const Vec& qd0, const Vec& a) {
  const int n = lag.n;
  auto at = [&](long double t, std::vector<long double>& q, std::vector<long double>& qd) {
    q.resize(static_cast<std::size_t>(n));
    qd.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      q[static_cast<std::size_t>(i)] = q0(i) + qd0(i) * t + 0.5L * a(i) * t * t;
      qd[static_cast<std::size_t>(i)] = qd0(i) + a(i) * t;
    }
  };
  // L is quadratic in qdot, so a wide central step is exact up to rounding.
  auto momentum = [&](long double t, int i) {
    std::vector<long double> q, qd;
    at(t, q, qd);
    const long double h = 1e-3L;
    auto up = qd, dn = qd;
    up[static_cast<std::size_t>(i)] += h;
    dn[static_cast<std::size_t>(i)] -= h;
    return (lag(q, up) - lag(q, dn)) / (2 * h);
  };
  Vec out(n);
  for (int i = 0; i < n; ++i) {
    const long double ht = 1e-6L;
    const long double dp = (momentum(ht, i) - momentum(-ht, i)) / (2 * ht);
    std::vector<long double> q, qd;
    at(0, q, qd);
    const long double hq = 1e-5L;
    auto up = q, dn = q;
    up[static_cast<std::size_t>(i)] += hq;
    dn[static_cast<std::size_t>(i)] -= hq;
    const long double dl = (lag(up, qd) - lag(dn, qd)) / (2 * hq);
    out(i) = static_cast<double>(dp - dl);
  }
  return out;
}

LagrangianOracle oracle_for(const ChainParams& p) {
  const auto mp = p.link_props();
  return {p.n_links, p.segment_length, mp.mass, mp.com_offset, mp.inertia_com, p.gravity};
}

}  // namespace

TEST(CapsuleMassProps, MonteCarloOracle) {
  const double l = 1.0, r = 0.1;
  const auto mp = capsule_mass_props(l, r, 1.0);
  EXPECT_NEAR(mp.mass, 0.0356047, 1e-6);
  EXPECT_DOUBLE_EQ(mp.com_offset, 0.5);

  // Capsule along x centred at the origin; the plane normal is z.
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> ux(-0.5 * l - r, 0.5 * l + r), uy(-r, r);
  const long n = 10'000'000;
  long inside = 0;
  double second_moment = 0.0;
  for (long k = 0; k < n; ++k) {
    const double x = ux(rng), y = uy(rng), z = uy(rng);
    const double ax = std::max(0.0, std::abs(x) - 0.5 * l);
    if (ax * ax + y * y + z * z <= r * r) {
      ++inside;
      second_moment += x * x + y * y;
    }
  }
  const double box = (l + 2 * r) * 4 * r * r;
  const double mass_mc = box * static_cast<double>(inside) / static_cast<double>(n);
  const double inertia_mc = box * second_moment / static_cast<double>(n);
  EXPECT_NEAR(mp.mass / mass_mc, 1.0, 1e-3);
  EXPECT_NEAR(mp.inertia_com / inertia_mc, 1.0, 5e-3);
}

TEST(CapsuleMassProps, ThinRodLimit) {
  const double l = 2.0, r = 1e-9;
  const double target_mass = 3.0;
  const double vol = kPi * r * r * l + 4.0 / 3.0 * kPi * r * r * r;
  const auto mp = capsule_mass_props(l, r, target_mass / vol);
  EXPECT_NEAR(mp.mass, target_mass, 1e-12);
  EXPECT_NEAR(mp.inertia_com, target_mass * l * l / 12.0, 1e-6);
}

TEST(CapsuleMassProps, RejectsNonPositive) {
  EXPECT_THROW(capsule_mass_props(0.0, 0.1, 1.0), InvalidArgument);
  EXPECT_THROW(capsule_mass_props(1.0, -0.1, 1.0), InvalidArgument);
  EXPECT_THROW(capsule_mass_props(1.0, 0.1, 0.0), InvalidArgument);
}

TEST(ChainParams, Validation) {
  ChainParams p;
  EXPECT_NO_THROW(p.validate());
  p.actuated_joints = {1, 1};
  EXPECT_THROW(p.validate(), InvalidArgument);
  p.actuated_joints = {2};
  EXPECT_THROW(p.validate(), InvalidArgument);
  p = ChainParams{};
  p.n_links = 0;
  EXPECT_THROW(p.validate(), InvalidArgument);
  const Mat bt = ChainParams::acrobot().actuation_matrix();
  EXPECT_EQ(bt.rows(), 2);
  EXPECT_EQ(bt.cols(), 1);
  EXPECT_EQ(bt(0, 0), 0.0);
  EXPECT_EQ(bt(1, 0), 1.0);
}

TEST(ManipulatorTerms, SingleLinkGravity) {
  ChainParams p = ChainParams::fully_actuated(1);
  const auto mp = p.link_props();
  const auto up = manipulator_terms(p, Vec::Zero(1), Vec::Zero(1));
  EXPECT_NEAR(up.H(0), 0.0, 1e-15);
  EXPECT_NEAR(up.D(0, 0), mp.inertia_com + mp.mass * mp.com_offset * mp.com_offset, 1e-15);

  // H sits on the left of D qddot + H = tau: tipped to +pi/2, gravity pulls
  // further along +q, so H carries the opposite sign of the pulling torque.
  Vec q(1);
  q << kPi / 2;
  const auto side = manipulator_terms(p, q, Vec::Zero(1));
  EXPECT_NEAR(side.H(0), -mp.mass * p.gravity * mp.com_offset, 1e-12);
  // gravity's own generalized torque is +m g l_com; holding the link needs tau = H
  EXPECT_NEAR(-side.H(0), mp.mass * p.gravity * mp.com_offset, 1e-12);
}

TEST(ManipulatorTerms, AcrobotClosedForm) {
  const ChainParams p = ChainParams::acrobot();
  const auto mp = p.link_props();
  const double m = mp.mass, l1 = p.segment_length, lc = mp.com_offset, in = mp.inertia_com,
               g = p.gravity;
  std::mt19937_64 rng(5);
  for (int k = 0; k < 50; ++k) {
    const Vec q = random_vec(rng, 2, kPi), qd = random_vec(rng, 2, 3.0);
    const double c2 = std::cos(q(1)), s2 = std::sin(q(1));
    Mat d(2, 2);
    d(0, 0) = m * lc * lc + m * (l1 * l1 + lc * lc + 2 * l1 * lc * c2) + 2 * in;
    d(0, 1) = d(1, 0) = m * (lc * lc + l1 * lc * c2) + in;
    d(1, 1) = m * lc * lc + in;
    Vec h(2);
    h(0) = -m * l1 * lc * s2 * (2 * qd(0) * qd(1) + qd(1) * qd(1)) -
           (m * lc + m * l1) * g * std::sin(q(0)) - m * lc * g * std::sin(q(0) + q(1));
    h(1) = m * l1 * lc * s2 * qd(0) * qd(0) - m * lc * g * std::sin(q(0) + q(1));
    const auto terms = manipulator_terms(p, q, qd);
    EXPECT_LT((terms.D - d).norm(), 1e-12);
    EXPECT_LT((terms.H - h).norm(), 1e-12);
  }
}

TEST(ManipulatorTerms, EulerLagrangeOracle) {
  std::mt19937_64 rng(6);
  for (int n : {2, 3, 4}) {
    ChainParams p = n == 2 ? ChainParams::acrobot() : ChainParams::fully_actuated(n);
    const auto lag = oracle_for(p);
    for (int k = 0; k < 10; ++k) {
      const State x{random_vec(rng, n, kPi), random_vec(rng, n, 2.0), 0.0};
      const Vec tau = random_vec(rng, p.n_actuated(), 1.0);
      const Vec a = accel(p, x, tau);
      const Vec force = euler_lagrange_force(lag, x.q, x.qdot, a);
      EXPECT_LT((force - p.actuation_matrix() * tau).norm(), 1e-6) << "n=" << n;
    }
  }
}

TEST(ManipulatorTerms, InertiaSymmetricPositiveDefinite) {
  std::mt19937_64 rng(7);
  for (int k = 0; k < 10000; ++k) {
    const int n = 2 + k % 3;
    const ChainParams p = ChainParams::fully_actuated(n);
    const auto terms = manipulator_terms(p, random_vec(rng, n, 10.0), Vec::Zero(n));
    ASSERT_LT((terms.D - terms.D.transpose()).norm(), 1e-13);
    Eigen::LLT<Mat> llt(terms.D);
    ASSERT_EQ(llt.info(), Eigen::Success);
  }
}

TEST(Accel, Equilibria) {
  ChainParams p = ChainParams::acrobot();
  EXPECT_LT(accel(p, State::zero(2), Vec::Zero(1)).norm(), 1e-15);
  p.gravity = 0.0;
  Vec q(2);
  q << 0.7, -1.3;
  EXPECT_LT(accel(p, State{q, Vec::Zero(2), 0.0}, Vec::Zero(1)).norm(), 1e-15);
}

TEST(Accel, Residual) {
  std::mt19937_64 rng(8);
  for (int k = 0; k < 200; ++k) {
    const ChainParams p = k % 2 ? ChainParams::acrobot() : ChainParams::fully_actuated(3);
    const int n = p.n_links;
    const State x{random_vec(rng, n, kPi), random_vec(rng, n, 5.0), 0.0};
    const Vec tau = random_vec(rng, p.n_actuated(), 3.0);
    const auto terms = manipulator_terms(p, x.q, x.qdot);
    const Vec r = terms.D * accel(p, x, tau) + terms.H - p.actuation_matrix() * tau;
    EXPECT_LT(r.norm(), 1e-10);
  }
  EXPECT_THROW(accel(ChainParams::acrobot(), State::zero(2), Vec::Zero(2)), InvalidArgument);
}

TEST(ExactControlMatrix, SingleLinkIsInverseInertia) {
  const ChainParams p = ChainParams::fully_actuated(1);
  Vec q(1);
  q << 0.4;
  const double d = manipulator_terms(p, q, Vec::Zero(1)).D(0, 0);
  EXPECT_NEAR(exact_control_matrix(p, q)(0, 0) * d, 1.0, 1e-14);
}

TEST(ExactControlMatrix, MatchesAccelDifferences) {
  std::mt19937_64 rng(9);
  for (int k = 0; k < 100; ++k) {
    const ChainParams p = k % 2 ? ChainParams::acrobot() : ChainParams::fully_actuated(3);
    const int n = p.n_links, m = p.n_actuated();
    const State x{random_vec(rng, n, kPi), random_vec(rng, n, 3.0), 0.0};
    const Vec drift = accel(p, x, Vec::Zero(m));
    const Mat b = exact_control_matrix(p, x.q);
    ASSERT_EQ(b.rows(), n);
    ASSERT_EQ(b.cols(), m);
    for (int j = 0; j < m; ++j) {
      const Vec col = accel(p, x, Vec::Unit(m, j)) - drift;
      EXPECT_LT((col - b.col(j)).norm(), 1e-8);
    }
  }
}

TEST(ExactControlMatrix, LipschitzInQ) {
  const ChainParams p = ChainParams::acrobot();
  std::mt19937_64 rng(10);
  for (int k = 0; k < 20; ++k) {
    const Vec q = random_vec(rng, 2, kPi);
    Vec dir = random_vec(rng, 2, 1.0);
    dir.normalize();
    const Mat b0 = exact_control_matrix(p, q);
    double prev_ratio = -1.0;
    for (double d : {1e-2, 1e-3, 1e-4, 1e-5}) {
      const double ratio = (exact_control_matrix(p, q + d * dir) - b0).norm() / d;
      EXPECT_TRUE(std::isfinite(ratio));
      if (prev_ratio > 1e-6) {
        EXPECT_NEAR(ratio / prev_ratio, 1.0, 0.1);
      }
      prev_ratio = ratio;
    }
  }
}

TEST(Step, ZeroGravityFixedPoint) {
  ChainParams p = ChainParams::acrobot();
  p.gravity = 0.0;
  Vec q(2);
  q << 0.3, 0.2;
  const State x{q, Vec::Zero(2), 1.5};
  for (auto m : {Integrator::rk4, Integrator::semi_implicit_euler}) {
    const State y = step(p, x, Vec::Zero(1), 0.01, m);
    EXPECT_EQ(y.q, x.q);
    EXPECT_EQ(y.qdot, x.qdot);
    EXPECT_DOUBLE_EQ(y.t, 1.51);
  }
}

TEST(Step, RejectsBadInput) {
  const ChainParams p = ChainParams::acrobot();
  EXPECT_THROW(step(p, State::zero(2), Vec::Zero(1), 0.0), InvalidArgument);
  Vec tau(1);
  tau << std::numeric_limits<double>::infinity();
  EXPECT_THROW(step(p, State::zero(2), tau, 0.01), NonFiniteState);
}

TEST(Step, PassiveEnergyDrift) {
  const ChainParams p = ChainParams::acrobot();
  Vec q(2);
  q << 2.0, -1.0;
  State x{q, Vec::Zero(2), 0.0};
  const double e0 = total_energy(p, x);
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    x = step(p, x, Vec::Zero(1), 1e-3);
    worst = std::max(worst, std::abs(total_energy(p, x) - e0) / std::abs(e0));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Step, Rk4FourthOrder) {
  const ChainParams p = ChainParams::acrobot();
  Vec q(2), qd(2);
  q << 1.0, 0.5;
  qd << 0.3, -0.8;
  auto endpoint = [&](double dt) {
    State x{q, qd, 0.0};
    const int n = static_cast<int>(std::lround(1.0 / dt));
    for (int k = 0; k < n; ++k) x = step(p, x, Vec::Zero(1), dt);
    Vec z(4);
    z << x.q, x.qdot;
    return z;
  };
  const Vec a = endpoint(0.005), b = endpoint(0.0025), c = endpoint(0.00125);
  const double ratio = (a - b).norm() / (b - c).norm();
  EXPECT_NEAR(ratio, 16.0, 2.0);
}

TEST(Step, SemiImplicitEulerFirstOrder) {
  const ChainParams p = ChainParams::acrobot();
  Vec q(2);
  q << 0.5, 0.2;
  auto endpoint = [&](double dt) {
    State x{q, Vec::Zero(2), 0.0};
    const int n = static_cast<int>(std::lround(0.5 / dt));
    for (int k = 0; k < n; ++k) x = step(p, x, Vec::Zero(1), dt, Integrator::semi_implicit_euler);
    return x.q;
  };
  const Vec a = endpoint(4e-3), b = endpoint(2e-3), c = endpoint(1e-3);
  EXPECT_NEAR((a - b).norm() / (b - c).norm(), 2.0, 0.3);
}

TEST(Step, WorkEnergyConstantTorque) {
  const ChainParams p = ChainParams::acrobot();
  Vec q(2), tau(1);
  q << 0.1, -0.2;
  tau << 0.02;
  State x{q, Vec::Zero(2), 0.0};
  const double e0 = total_energy(p, x);
  for (int k = 0; k < 2000; ++k) x = step(p, x, tau, 1e-3);
  // work done by a constant torque is tau times the actuated joint's travel
  const double work = tau(0) * (x.q(1) - q(1));
  EXPECT_NEAR(total_energy(p, x) - e0, work, 1e-8);
}

TEST(StepClosedLoop, ConstantPolicyMatchesStep) {
  const ChainParams p = ChainParams::acrobot();
  Vec q(2), qd(2), tau(1);
  q << 0.4, 0.1;
  qd << -0.2, 0.6;
  tau << 0.01;
  const State x{q, qd, 0.0};
  const State a = step(p, x, tau, 0.01);
  const State b = step_closed_loop(p, x, [&](const State&) { return tau; }, 0.01);
  EXPECT_LT((a.q - b.q).norm(), 1e-15);
  EXPECT_LT((a.qdot - b.qdot).norm(), 1e-15);
  EXPECT_DOUBLE_EQ(a.t, b.t);
}
