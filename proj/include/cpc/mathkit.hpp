#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cpc/errors.hpp"

namespace cpc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Largest admissible condition number before a solve is declared singular.
inline constexpr double kDefaultConditionCap = 1e12;

inline bool all_finite(const Mat& m) { return m.allFinite(); }

/// Ratio of extreme singular values; +inf for a zero or empty matrix.
inline double condition_number(const Mat& m) {
  if (m.size() == 0) return std::numeric_limits<double>::infinity();
  Eigen::JacobiSVD<Mat> svd(m);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (!(smax > 0.0) || !(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

/// Solves the square system a * x = rhs, refusing ill-conditioned or
/// non-finite inputs.
inline Mat solve_checked(const Mat& a, const Mat& rhs,
                         double cond_cap = kDefaultConditionCap) {
  if (a.rows() != a.cols() || a.rows() != rhs.rows()) {
    throw InvalidArgument("solve_checked: dimension mismatch");
  }
  if (a.rows() == 0) return Mat(0, rhs.cols());
  if (!all_finite(a) || condition_number(a) > cond_cap) {
    throw SingularMatrix("matrix is numerically singular");
  }
  return a.partialPivLu().solve(rhs);
}

inline Mat inverse_checked(const Mat& a, double cond_cap = kDefaultConditionCap) {
  return solve_checked(a, Mat::Identity(a.rows(), a.cols()), cond_cap);
}

/// B^+ = B^T (B B^T)^{-1} for an M x N matrix of full row rank (M <= N).
inline Mat right_pseudoinverse(const Mat& b, double cond_cap = kDefaultConditionCap) {
  if (b.rows() > b.cols()) {
    throw InvalidArgument("right_pseudoinverse: expected rows <= cols");
  }
  const Mat bbt = b * b.transpose();
  if (!all_finite(bbt) || condition_number(bbt) > cond_cap) {
    throw SingularMatrix("B B^T is numerically singular");
  }
  return b.transpose() * bbt.ldlt().solve(Mat::Identity(b.rows(), b.rows()));
}

/// argmin_X |A X - y|_F^2 + ridge |X|_F^2.
inline Mat least_squares(const Mat& a, const Mat& y, double ridge,
                         double cond_cap = kDefaultConditionCap) {
  if (a.rows() < 1 || a.rows() != y.rows()) {
    throw InvalidArgument("least_squares: need n >= 1 rows in A and y");
  }
  if (ridge < 0.0) throw InvalidArgument("least_squares: ridge must be >= 0");
  const auto m = a.cols();
  if (ridge == 0.0) {
    // cond(A^T A) = cond(A)^2
    const double c = condition_number(a);
    if (a.rows() < m || !std::isfinite(c) || c * c > cond_cap) {
      throw RankDeficient("A^T A is singular");
    }
    return a.colPivHouseholderQr().solve(y);
  }
  // Augmented system [A; sqrt(ridge) I] X = [y; 0].
  Mat aug(a.rows() + m, m);
  aug << a, std::sqrt(ridge) * Mat::Identity(m, m);
  Mat rhs(a.rows() + m, y.cols());
  rhs << y, Mat::Zero(m, y.cols());
  return aug.colPivHouseholderQr().solve(rhs);
}

namespace detail {

inline double horner(std::span<const double> c, double x) {
  double acc = 0.0;
  for (double ci : c) acc = acc * x + ci;
  return acc;
}

// Coefficients highest degree first.
inline double polish_root(std::span<const double> c, double x) {
  const std::size_t deg = c.size() - 1;
  for (int it = 0; it < 8; ++it) {
    double p = 0.0, dp = 0.0;
    for (std::size_t i = 0; i <= deg; ++i) {
      dp = dp * x + p;
      p = p * x + c[i];
    }
    if (dp == 0.0 || !std::isfinite(dp)) break;
    const double next = x - p / dp;
    if (!std::isfinite(next)) break;
    if (std::abs(horner(c, next)) >= std::abs(p)) break;
    x = next;
  }
  return x;
}

// Real roots of x^2 + b x + c; near-zero negative discriminants count as double roots.
inline void monic_quadratic_roots(double b, double c, std::vector<double>& out) {
  const double scale = std::max({1.0, b * b, std::abs(c)});
  double disc = b * b - 4.0 * c;
  if (disc < 0.0) {
    if (disc < -1e-12 * scale) return;
    disc = 0.0;
  }
  const double sq = std::sqrt(disc);
  // Avoid cancellation.
  const double qq = -0.5 * (b + std::copysign(sq, b));
  if (qq == 0.0) {
    out.push_back(0.0);
    out.push_back(0.0);
    return;
  }
  out.push_back(qq);
  out.push_back(c / qq);
}

// Largest real root of m^3 + a m^2 + b m + c.
inline double largest_cubic_root(double a, double b, double c) {
  const double p = b - a * a / 3.0;
  const double q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
  const double shift = -a / 3.0;
  double t;
  const double disc = q * q / 4.0 + p * p * p / 27.0;
  if (disc > 0.0) {
    const double sq = std::sqrt(disc);
    t = std::cbrt(-q / 2.0 + sq) + std::cbrt(-q / 2.0 - sq);
  } else if (p == 0.0) {
    t = 0.0;
  } else {
    const double r = std::sqrt(-p / 3.0);
    const double arg = std::clamp(3.0 * q / (2.0 * p) / r, -1.0, 1.0);
    t = 2.0 * r * std::cos(std::acos(arg) / 3.0);
  }
  const std::array<double, 4> coeffs{1.0, a, b, c};
  return polish_root(coeffs, t + shift);
}

}  // namespace detail

/// Real roots (with multiplicity, ascending) of
/// c4 x^4 + c3 x^3 + c2 x^2 + c1 x + c0. Lower degrees are accepted when
/// leading coefficients vanish.
inline std::vector<double> quartic_real_roots(double c4, double c3, double c2, double c1,
                                              double c0) {
  const std::array<double, 5> all{c4, c3, c2, c1, c0};
  std::size_t lead = 0;
  while (lead < 4 && all[lead] == 0.0) ++lead;
  if (lead == 4) throw DegeneratePolynomial("all non-constant coefficients are zero");
  const std::span<const double> poly(all.data() + lead, all.size() - lead);
  const std::size_t degree = poly.size() - 1;
  const double lc = poly[0];

  std::vector<double> roots;
  roots.reserve(4);
  if (degree == 1) {
    roots.push_back(-poly[1] / lc);
  } else if (degree == 2) {
    detail::monic_quadratic_roots(poly[1] / lc, poly[2] / lc, roots);
  } else if (degree == 3) {
    const double a = poly[1] / lc, b = poly[2] / lc, c = poly[3] / lc;
    const double r = detail::largest_cubic_root(a, b, c);
    roots.push_back(r);
    // Deflate: x^3 + a x^2 + b x + c = (x - r)(x^2 + (a + r) x + (b + (a + r) r)).
    detail::monic_quadratic_roots(a + r, b + (a + r) * r, roots);
  } else {
    // Ferrari: depress to y^4 + p y^2 + q y + r with x = y - a/4.
    const double a = poly[1] / lc, b = poly[2] / lc, c = poly[3] / lc, d = poly[4] / lc;
    const double a2 = a * a;
    const double p = b - 3.0 * a2 / 8.0;
    const double q = c - a * b / 2.0 + a2 * a / 8.0;
    const double r = d - a * c / 4.0 + a2 * b / 16.0 - 3.0 * a2 * a2 / 256.0;
    const double shift = -a / 4.0;
    std::vector<double> ys;
    const double scale = std::max({1.0, std::abs(p), std::sqrt(std::abs(r))});
    if (std::abs(q) <= 1e-14 * scale * std::sqrt(scale)) {
      // Biquadratic in y^2.
      std::vector<double> zs;
      detail::monic_quadratic_roots(p, r, zs);
      for (double z : zs) {
        if (z < 0.0) {
          if (z < -1e-12 * scale) continue;
          z = 0.0;
        }
        const double sz = std::sqrt(z);
        ys.push_back(sz);
        ys.push_back(-sz);
      }
    } else {
      // Resolvent: 8m^3 + 8p m^2 + (2p^2 - 8r) m - q^2 = 0, m > 0.
      const double m = detail::largest_cubic_root(p, (2.0 * p * p - 8.0 * r) / 8.0, -q * q / 8.0);
      if (m > 0.0) {
        const double s = std::sqrt(2.0 * m);
        detail::monic_quadratic_roots(-s, p / 2.0 + m + q / (2.0 * s), ys);
        detail::monic_quadratic_roots(s, p / 2.0 + m - q / (2.0 * s), ys);
      }
    }
    for (double y : ys) roots.push_back(y + shift);
  }
  for (double& x : roots) x = detail::polish_root(poly, x);
  std::sort(roots.begin(), roots.end());
  return roots;
}

/// exp(F t) for the critically damped error oscillator
/// F = [[0, 1], [-kappa^2, -2 kappa]].
inline Eigen::Matrix2d expm_crit_damped(double kappa, double t) {
  const double e = std::exp(-kappa * t);
  Eigen::Matrix2d m;
  m << 1.0 + kappa * t, t, -kappa * kappa * t, 1.0 - kappa * t;
  return e * m;
}

/// Kronecker product of a 2x2 block map with I_m, acting on [a; a_dot] stacked vectors.
inline Mat kron_identity(const Eigen::Matrix2d& f, Eigen::Index m) {
  Mat out = Mat::Zero(2 * m, 2 * m);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) out.block(i * m, j * m, m, m) = f(i, j) * Mat::Identity(m, m);
  return out;
}

}  // namespace cpc
