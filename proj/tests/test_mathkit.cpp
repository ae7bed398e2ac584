#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cpc/mathkit.hpp"

using namespace cpc;

namespace {

Mat random_mat(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> nd;
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

double poly(const std::array<double, 5>& c, double x) {
  return (((c[0] * x + c[1]) * x + c[2]) * x + c[3]) * x + c[4];
}

// Sign-change scan plus bisection on [lo, hi]; touching (even multiplicity)
// roots are picked up from local minima of |p| that reach zero.
std::vector<double> bisection_roots(const std::array<double, 5>& c, double lo, double hi) {
  const int n = 200000;
  std::vector<double> roots;
  const double h = (hi - lo) / n;
  for (int i = 0; i < n; ++i) {
    double a = lo + i * h, b = a + h;
    double fa = poly(c, a), fb = poly(c, b);
    if (fa == 0.0) {
      roots.push_back(a);
      continue;
    }
    if (fa * fb < 0.0) {
      for (int it = 0; it < 200; ++it) {
        const double m = 0.5 * (a + b);
        const double fm = poly(c, m);
        if (fa * fm <= 0.0) {
          b = m;
        } else {
          a = m;
          fa = fm;
        }
      }
      roots.push_back(0.5 * (a + b));
    }
  }
  return roots;
}

}  // namespace

TEST(RightPseudoinverse, IdentityAndRow) {
  EXPECT_TRUE(right_pseudoinverse(Mat::Identity(2, 2)).isApprox(Mat::Identity(2, 2)));
  Mat row(1, 2);
  row << 1.0, 0.0;
  const Mat p = right_pseudoinverse(row);
  ASSERT_EQ(p.rows(), 2);
  ASSERT_EQ(p.cols(), 1);
  EXPECT_NEAR(p(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(p(1, 0), 0.0, 1e-15);
}

TEST(RightPseudoinverse, RandomFullRankMatchesSvd) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 200; ++k) {
    const Mat b = random_mat(rng, 2, 3);
    const Mat p = right_pseudoinverse(b);
    EXPECT_LT((b * p - Mat::Identity(2, 2)).norm(), 1e-10);
    const Mat oracle = b.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(Mat::Identity(2, 2));
    EXPECT_LT((p - oracle).norm(), 1e-9);
  }
}

TEST(RightPseudoinverse, RankDeficientThrows) {
  Mat b(2, 3);
  b << 1, 2, 3, 2, 4, 6;
  EXPECT_THROW(right_pseudoinverse(b), SingularMatrix);
}

TEST(LeastSquares, SquareInvertibleIsExact) {
  std::mt19937_64 rng(3);
  const Mat a = random_mat(rng, 3, 3);
  const Mat x0 = random_mat(rng, 3, 2);
  EXPECT_LT((least_squares(a, a * x0, 0.0) - x0).norm(), 1e-10);
}

TEST(LeastSquares, OverdeterminedMatchesNormalEquations) {
  std::mt19937_64 rng(4);
  const Mat a = random_mat(rng, 10, 2);
  const Mat x0 = random_mat(rng, 2, 3);
  EXPECT_LT((least_squares(a, a * x0, 0.0) - x0).norm(), 1e-10);

  const Mat y = random_mat(rng, 10, 3);
  const Mat x = least_squares(a, y, 0.0);
  // residual orthogonal to the column space
  EXPECT_LT((a.transpose() * (a * x - y)).norm(), 1e-9);

  const double ridge = 0.3;
  const Mat ridge_oracle =
      (a.transpose() * a + ridge * Mat::Identity(2, 2)).inverse() * a.transpose() * y;
  EXPECT_LT((least_squares(a, y, ridge) - ridge_oracle).norm(), 1e-10);
}

TEST(LeastSquares, DegenerateInputs) {
  EXPECT_THROW(least_squares(Mat::Zero(5, 2), Mat::Ones(5, 1), 0.0), RankDeficient);
  EXPECT_THROW(least_squares(Mat::Ones(3, 1), Mat::Ones(3, 1), -1.0), InvalidArgument);
  EXPECT_NO_THROW(least_squares(Mat::Zero(5, 2), Mat::Ones(5, 1), 1e-8));
}

TEST(QuarticRoots, DoubleRoots) {
  const auto r = quartic_real_roots(1, 0, -2, 0, 1);
  ASSERT_EQ(r.size(), 4u);
  EXPECT_NEAR(r[0], -1.0, 1e-7);
  EXPECT_NEAR(r[1], -1.0, 1e-7);
  EXPECT_NEAR(r[2], 1.0, 1e-7);
  EXPECT_NEAR(r[3], 1.0, 1e-7);
}

TEST(QuarticRoots, QuadrupleZero) {
  const auto r = quartic_real_roots(1, 0, 0, 0, 0);
  ASSERT_EQ(r.size(), 4u);
  for (double x : r) EXPECT_NEAR(x, 0.0, 1e-12);
}

TEST(QuarticRoots, DegenerateThrows) {
  EXPECT_THROW(quartic_real_roots(0, 0, 0, 0, 1), DegeneratePolynomial);
}

TEST(QuarticRoots, LowerDegrees) {
  const auto lin = quartic_real_roots(0, 0, 0, 2, -1);
  ASSERT_EQ(lin.size(), 1u);
  EXPECT_DOUBLE_EQ(lin[0], 0.5);
  const auto cub = quartic_real_roots(0, 1, -6, 11, -6);
  ASSERT_EQ(cub.size(), 3u);
  EXPECT_NEAR(cub[0], 1.0, 1e-10);
  EXPECT_NEAR(cub[1], 2.0, 1e-10);
  EXPECT_NEAR(cub[2], 3.0, 1e-10);
}

TEST(QuarticRoots, RandomMatchesBisectionOracle) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> root(-8.0, 8.0);
  std::normal_distribution<double> nd;
  for (int k = 0; k < 100; ++k) {
    std::array<double, 5> c{};
    if (k % 2 == 0) {
      // Four well-separated real roots, or two real plus a complex pair.
      std::vector<double> rs;
      while (rs.size() < 4) {
        const double x = root(rng);
        bool far = true;
        for (double y : rs) far = far && std::abs(x - y) > 0.05;
        if (far) rs.push_back(x);
      }
      std::array<double, 5> p{1, 0, 0, 0, 0};
      const double lead = 0.5 + std::abs(nd(rng));
      // expand lead * prod (x - r_i)
      std::vector<double> coef{1.0};
      for (double r : rs) {
        std::vector<double> next(coef.size() + 1, 0.0);
        for (std::size_t i = 0; i < coef.size(); ++i) {
          next[i] += coef[i];
          next[i + 1] -= r * coef[i];
        }
        coef = next;
      }
      if (k % 4 == 2) {
        // replace the last two roots by a complex pair: (x - r0)(x - r1)((x - u)^2 + 1)
        const double u = root(rng);
        coef = {1.0};
        for (double r : {rs[0], rs[1]}) {
          std::vector<double> next(coef.size() + 1, 0.0);
          for (std::size_t i = 0; i < coef.size(); ++i) {
            next[i] += coef[i];
            next[i + 1] -= r * coef[i];
          }
          coef = next;
        }
        const std::vector<double> q{1.0, -2.0 * u, u * u + 1.0};
        std::vector<double> next(5, 0.0);
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 3; ++j) next[i + j] += coef[i] * q[j];
        coef = next;
      }
      for (int i = 0; i < 5; ++i) p[static_cast<std::size_t>(i)] = lead * coef[static_cast<std::size_t>(i)];
      c = p;
    } else {
      for (auto& ci : c) ci = nd(rng);
    }
    auto got = quartic_real_roots(c[0], c[1], c[2], c[3], c[4]);
    const double cn = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + c[3] * c[3] + c[4] * c[4]);
    ASSERT_LE(got.size(), 4u);
    for (double r : got) EXPECT_LE(std::abs(poly(c, r)), 1e-8 * std::max(1.0, cn));
    std::vector<double> in_range;
    for (double r : got)
      if (r > -10.0 && r < 10.0) in_range.push_back(r);
    const auto oracle = bisection_roots(c, -10.0, 10.0);
    ASSERT_EQ(in_range.size(), oracle.size()) << "case " << k;
    for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(in_range[i], oracle[i], 1e-7);
  }
}

TEST(ExpmCritDamped, Identities) {
  EXPECT_TRUE(expm_crit_damped(5.0, 0.0).isApprox(Eigen::Matrix2d::Identity()));
  Eigen::Matrix2d want;
  want << 2, 1, -1, 0;
  EXPECT_TRUE(expm_crit_damped(1.0, 1.0).isApprox(std::exp(-1.0) * want, 1e-14));
}

TEST(ExpmCritDamped, MatchesTaylorSeries) {
  const double kappa = 3.0, t = 0.2;
  Eigen::Matrix2d f;
  f << 0, 1, -kappa * kappa, -2 * kappa;
  Eigen::Matrix2d sum = Eigen::Matrix2d::Identity(), term = Eigen::Matrix2d::Identity();
  for (int n = 1; n < 30; ++n) {
    term = term * f * t / n;
    sum += term;
  }
  EXPECT_LT((expm_crit_damped(kappa, t) - sum).norm(), 1e-10);
}

TEST(ExpmCritDamped, Semigroup) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int k = 0; k < 100; ++k) {
    const double kappa = 0.1 + 10 * u(rng), t1 = u(rng), t2 = u(rng);
    const Eigen::Matrix2d lhs = expm_crit_damped(kappa, t1 + t2);
    const Eigen::Matrix2d rhs = expm_crit_damped(kappa, t1) * expm_crit_damped(kappa, t2);
    EXPECT_LT((lhs - rhs).norm(), 1e-9);
  }
}

TEST(SolveChecked, RefusesSingular) {
  Mat a(2, 2);
  a << 1, 2, 2, 4;
  EXPECT_THROW(solve_checked(a, Vec::Ones(2)), SingularMatrix);
  EXPECT_EQ(condition_number(Mat::Zero(2, 2)), std::numeric_limits<double>::infinity());
}
