#pragma once

// Recorded target points and the ball-tree branch-and-bound search for the
// n_d points with the lowest proximity loss (omega t0)^2 + (s - s_g)^2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <utility>
#include <vector>

#include "cpc/cpc_core.hpp"
#include "cpc/errors.hpp"
#include "cpc/mathkit.hpp"

namespace cpc {

struct DataPoint {
  double t = 0.0;
  State x;
  Vec tau;
  double G = 0.0;
};

struct TargetCandidate {
  DataPoint point;
  std::size_t index = 0;  // position in the original dataset
  Reparam rep;
  double loss = 0.0;
};

inline double proximity_loss(double t0, double s, double omega, double s_g) {
  const double a = omega * t0;
  const double d = s - s_g;
  return a * a + d * d;
}

/// Affine form of the loss for N - M = 1:
/// L = (alpha_xi + beta_xi^T q_d)^2 + (alpha_eta + beta_eta^T qdot_d)^2.
/// The alphas here are relative to the origin; node_bounds shifts them to a
/// node centre.
struct QueryContext {
  Vec beta_xi;
  Vec beta_eta;
  double alpha_xi = 0.0;
  double alpha_eta = 0.0;
  double vbar0 = 0.0;  // qdotbar of the current state
  Vec b;               // the (single) null covector
  double guard_tol = kDefaultGuardTol;
};

inline QueryContext make_query_context(const State& x0, const NullCovector& nc, double omega,
                                       double s_g, double guard_tol = kDefaultGuardTol) {
  if (nc.free_dims() != 1) {
    throw InvalidArgument("ball-tree bounds need exactly one free coordinate");
  }
  const Vec b = nc.b.col(0);
  const double vbar0 = b.dot(x0.qdot);
  if (!(std::abs(vbar0) > guard_tol) || !b.allFinite()) {
    throw VelocityBarDegenerate("|qdotbar| of current state below guard");
  }
  QueryContext ctx;
  ctx.beta_xi = omega * b / vbar0;
  ctx.beta_eta = b / vbar0;
  ctx.alpha_xi = -ctx.beta_xi.dot(x0.q);
  ctx.alpha_eta = -s_g;
  ctx.vbar0 = vbar0;
  ctx.b = b;
  ctx.guard_tol = guard_tol;
  if (!ctx.beta_xi.allFinite() || !ctx.beta_eta.allFinite()) {
    throw VelocityBarDegenerate("loss coefficients are not finite");
  }
  return ctx;
}

struct LossBounds {
  double lower = 0.0;
  double upper = 0.0;
};

/// Tight bounds of the loss over the ball |[q; qdot] - center| <= rho
/// (center stacked as [q_c; qdot_c]).
inline LossBounds node_bounds(const Vec& center, double rho, const QueryContext& ctx) {
  const auto n = ctx.beta_xi.size();
  const double a_xi = ctx.alpha_xi + ctx.beta_xi.dot(center.head(n));
  const double a_eta = ctx.alpha_eta + ctx.beta_eta.dot(center.tail(n));
  const double n_xi = ctx.beta_xi.norm();
  const double n_eta = ctx.beta_eta.norm();
  auto loss_at = [&](double a, double c) {
    const double u = a_xi + n_xi * a;
    const double v = a_eta + n_eta * c;
    return u * u + v * v;
  };
  if (rho <= 0.0) {
    const double l = loss_at(0.0, 0.0);
    return {l, l};
  }

  // Reduced 2-D problem along beta_xi / beta_eta.
  const double a0 = n_xi > 0.0 ? -a_xi / n_xi : 0.0;
  const double b0 = n_eta > 0.0 ? -a_eta / n_eta : 0.0;
  const bool interior_min = a0 * a0 + b0 * b0 <= rho * rho;

  // Stationarity on the circle (a, c) = rho (cos th, sin th):
  //   sin th (p cos th + r) = w cos th
  const double p = rho * (n_xi * n_xi - n_eta * n_eta);
  const double r = a_xi * n_xi;
  const double w = a_eta * n_eta;
  std::vector<double> cosines{-1.0, 0.0, 1.0};
  const double c4 = -p * p, c3 = -2.0 * p * r, c2 = p * p - r * r - w * w, c1 = 2.0 * p * r,
               c0 = r * r;
  if (c4 != 0.0 || c3 != 0.0 || c2 != 0.0 || c1 != 0.0) {
    for (double u : quartic_real_roots(c4, c3, c2, c1, c0)) {
      if (u >= -1.0 - 1e-9 && u <= 1.0 + 1e-9) cosines.push_back(std::clamp(u, -1.0, 1.0));
    }
  }

  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  const double eq_scale = std::abs(p) + std::abs(r) + std::abs(w);
  for (double u : cosines) {
    const double sn = std::sqrt(std::max(0.0, 1.0 - u * u));
    const double res_pos = sn * (p * u + r) - w * u;
    const double res_neg = -sn * (p * u + r) - w * u;
    const double tol = 1e-7 * (eq_scale + 1e-300);
    bool keep_pos = std::abs(res_pos) <= tol;
    bool keep_neg = std::abs(res_neg) <= tol;
    // Endpoints and lost-to-rounding roots are evaluated on both branches.
    if (!keep_pos && !keep_neg) keep_pos = keep_neg = true;
    if (keep_pos) {
      const double l = loss_at(rho * u, rho * sn);
      lo = std::min(lo, l);
      hi = std::max(hi, l);
    }
    if (keep_neg) {
      const double l = loss_at(rho * u, -rho * sn);
      lo = std::min(lo, l);
      hi = std::max(hi, l);
    }
  }
  if (interior_min) lo = loss_at(a0, b0);
  return {lo, hi};
}

struct BallTreeNode {
  Vec center;  // [q_c; qdot_c]
  double radius = 0.0;
  // Bounding ellipsoid center + diag(shape_q, shape_v) w, |w| <= 1. Trajectory
  // segments are thin, so this is usually much tighter than the sphere.
  Mat shape_q, shape_v;
  std::size_t begin = 0, end = 0;  // range into the permutation
  int left = -1, right = -1;

  bool leaf() const { return left < 0; }
  std::size_t count() const { return end - begin; }
};

/// Same bounds over a node's block ellipsoid: the loss terms still act on
/// separate blocks, so the sphere formula applies in whitened coordinates.
inline LossBounds ellipsoid_bounds(const BallTreeNode& node, const QueryContext& ctx) {
  const auto n = ctx.beta_xi.size();
  QueryContext w = ctx;
  w.alpha_xi = ctx.alpha_xi + ctx.beta_xi.dot(node.center.head(n));
  w.alpha_eta = ctx.alpha_eta + ctx.beta_eta.dot(node.center.tail(n));
  w.beta_xi = node.shape_q.transpose() * ctx.beta_xi;
  w.beta_eta = node.shape_v.transpose() * ctx.beta_eta;
  return node_bounds(Vec::Zero(2 * n), 1.0, w);
}

/// Intersection of the sphere and ellipsoid bounds.
inline LossBounds combined_bounds(const BallTreeNode& node, const QueryContext& ctx) {
  const LossBounds a = node_bounds(node.center, node.radius, ctx);
  if (node.shape_q.size() == 0) return a;
  const LossBounds b = ellipsoid_bounds(node, ctx);
  return {std::max(a.lower, b.lower), std::min(a.upper, b.upper)};
}

struct QueryStats {
  std::size_t leaf_evaluations = 0;
  std::size_t nodes_visited = 0;
};

class BallTree {
 public:
  static constexpr std::size_t kDefaultLeafSize = 16;

  explicit BallTree(std::vector<DataPoint> points, std::size_t leaf_size = kDefaultLeafSize)
      : points_(std::move(points)), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
    if (points_.empty()) throw EmptyDataset("ball tree needs at least one point");
    dim_ = points_.front().x.q.size();
    embed_.resize(points_.size() * static_cast<std::size_t>(2 * dim_));
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto& x = points_[i].x;
      if (x.q.size() != dim_ || x.qdot.size() != dim_) {
        throw InvalidArgument("ball tree: inconsistent state dimensions");
      }
      double* row = &embed_[i * static_cast<std::size_t>(2 * dim_)];
      for (Eigen::Index k = 0; k < dim_; ++k) {
        row[k] = x.q(k);
        row[dim_ + k] = x.qdot(k);
      }
    }
    perm_.resize(points_.size());
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    nodes_.reserve(2 * points_.size() / leaf_size_ + 2);
    build_node(0, points_.size());
  }

  std::size_t size() const { return points_.size(); }
  const std::vector<DataPoint>& points() const { return points_; }
  const std::vector<BallTreeNode>& nodes() const { return nodes_; }
  const std::vector<std::size_t>& permutation() const { return perm_; }
  Eigen::Index state_dim() const { return dim_; }

  /// Embedded point [q; qdot] of dataset entry i.
  Eigen::Map<const Vec> embedded(std::size_t i) const {
    return {&embed_[i * static_cast<std::size_t>(2 * dim_)], 2 * dim_};
  }

  /// The n_d lowest-loss points, ascending by (loss, dataset index).
  std::vector<TargetCandidate> query(const State& x0, const NullCovector& nc, double omega,
                                     double s_g, std::size_t n_d,
                                     double guard_tol = kDefaultGuardTol,
                                     QueryStats* stats = nullptr) const {
    if (nc.free_dims() != 1) return linear_scan(x0, nc, omega, s_g, n_d, guard_tol, stats);
    const QueryContext ctx = make_query_context(x0, nc, omega, s_g, guard_tol);
    return search(ctx, x0, nc, omega, s_g, n_d, stats);
  }

  /// Exhaustive search, used when N - M != 1 (no affine loss form).
  std::vector<TargetCandidate> linear_scan(const State& x0, const NullCovector& nc, double omega,
                                           double s_g, std::size_t n_d,
                                           double guard_tol = kDefaultGuardTol,
                                           QueryStats* stats = nullptr) const {
    std::vector<TargetCandidate> all;
    for (std::size_t i = 0; i < points_.size(); ++i) {
      try {
        const Reparam rep = reparam_params(x0, points_[i].x, nc, guard_tol);
        all.push_back({points_[i], i, rep, proximity_loss(rep.t0, rep.s, omega, s_g)});
      } catch (const VelocityBarDegenerate&) {
      }
    }
    if (stats) stats->leaf_evaluations += points_.size();
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.loss < b.loss || (a.loss == b.loss && a.index < b.index);
    });
    if (all.size() > n_d) all.resize(n_d);
    return all;
  }

 private:
  struct Ranked {
    double loss;
    std::size_t index;
    Reparam rep;
    bool operator<(const Ranked& o) const {
      return loss < o.loss || (loss == o.loss && index < o.index);
    }
  };

  std::vector<TargetCandidate> search(const QueryContext& ctx, const State& x0,
                                      const NullCovector& nc, double omega, double s_g,
                                      std::size_t n_d, QueryStats* stats) const {
    std::vector<TargetCandidate> out;
    if (n_d == 0) return out;
    const double qbar0 = nc.b.col(0).dot(x0.q);
    const double v0 = ctx.vbar0;
    const double bnorm = ctx.b.norm();
    const double* b = ctx.b.data();

    std::priority_queue<Ranked> best;  // max-heap: worst kept candidate on top
    double ub_threshold = std::numeric_limits<double>::infinity();
    auto threshold = [&] {
      const double heap_thr =
          best.size() >= n_d ? best.top().loss : std::numeric_limits<double>::infinity();
      return std::min(heap_thr, ub_threshold);
    };
    auto slack = [](double thr) { return 1e-9 * (1.0 + std::abs(thr)); };

    using Entry = std::pair<double, int>;  // (lower bound, node)
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
    auto consider = [&](int id) {
      const auto& node = nodes_[static_cast<std::size_t>(id)];
      const LossBounds lb = combined_bounds(node, ctx);
      if (node.count() >= n_d) {
        // Tighten only when no point in the node can fail the guard.
        const double vc = ctx.b.dot(node.center.tail(dim_));
        const double vmin = std::max(0.0, std::abs(vc) - bnorm * node.radius);
        if (vmin * std::abs(v0) > ctx.guard_tol) ub_threshold = std::min(ub_threshold, lb.upper);
      }
      const double thr = threshold();
      if (lb.lower <= thr + slack(thr)) open.emplace(lb.lower, id);
    };
    consider(0);

    while (!open.empty()) {
      const auto [lower, id] = open.top();
      open.pop();
      const double thr = threshold();
      if (lower > thr + slack(thr)) break;
      const auto& node = nodes_[static_cast<std::size_t>(id)];
      if (stats) ++stats->nodes_visited;
      if (!node.leaf()) {
        consider(node.left);
        consider(node.right);
        continue;
      }
      for (std::size_t k = node.begin; k < node.end; ++k) {
        const std::size_t i = perm_[k];
        const double* row = &embed_[i * static_cast<std::size_t>(2 * dim_)];
        double qbar_d = 0.0, vbar_d = 0.0;
        for (Eigen::Index j = 0; j < dim_; ++j) {
          qbar_d += b[j] * row[j];
          vbar_d += b[j] * row[dim_ + j];
        }
        if (stats) ++stats->leaf_evaluations;
        if (!(std::abs(vbar_d * v0) > ctx.guard_tol)) continue;
        const Reparam rep{(qbar_d - qbar0) / v0, vbar_d / v0};
        const Ranked cand{proximity_loss(rep.t0, rep.s, omega, s_g), i, rep};
        if (best.size() < n_d) {
          best.push(cand);
        } else if (cand < best.top()) {
          best.pop();
          best.push(cand);
        }
      }
    }

    std::vector<Ranked> ranked;
    ranked.reserve(best.size());
    while (!best.empty()) {
      ranked.push_back(best.top());
      best.pop();
    }
    std::reverse(ranked.begin(), ranked.end());
    out.reserve(ranked.size());
    for (const auto& r : ranked) out.push_back({points_[r.index], r.index, r.rep, r.loss});
    return out;
  }

  int build_node(std::size_t begin, std::size_t end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    const Eigen::Index d = 2 * dim_;
    Vec center = Vec::Zero(d);
    for (std::size_t k = begin; k < end; ++k) center += embedded(perm_[k]);
    center /= static_cast<double>(end - begin);
    double radius = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      radius = std::max(radius, (embedded(perm_[k]) - center).norm());
    }
    {
      auto& node = nodes_[static_cast<std::size_t>(id)];
      node.center = center;
      // Inflate slightly so that rounding never breaks containment.
      node.radius = radius > 0.0 ? radius * (1.0 + 1e-12) : 0.0;
      node.begin = begin;
      node.end = end;
    }
    fit_ellipsoid(id);
    if (end - begin <= leaf_size_) return id;

    // Split on the dimension of maximal spread at the median.
    Eigen::Index split_dim = 0;
    double best_spread = -1.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t k = begin; k < end; ++k) {
        const double v = embedded(perm_[k])(j);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        split_dim = j;
      }
    }
    const std::size_t mid = begin + (end - begin) / 2;
    auto key = [&](std::size_t i) { return embedded(i)(split_dim); };
    // Coincident points are split by dataset order.
    std::nth_element(perm_.begin() + static_cast<std::ptrdiff_t>(begin),
                     perm_.begin() + static_cast<std::ptrdiff_t>(mid),
                     perm_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) {
                       return key(a) < key(b) || (key(a) == key(b) && a < b);
                     });
    const int left = build_node(begin, mid);
    const int right = build_node(mid, end);
    nodes_[static_cast<std::size_t>(id)].left = left;
    nodes_[static_cast<std::size_t>(id)].right = right;
    return id;
  }

  void fit_ellipsoid(int id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    const Eigen::Index n = dim_;
    const auto count = static_cast<double>(node.count());
    // Per-block covariance square roots, then one common scale so that every
    // point has |w| <= 1.
    Mat root[2], inv_root[2];
    for (int blk = 0; blk < 2; ++blk) {
      Mat cov = Mat::Zero(n, n);
      for (std::size_t k = node.begin; k < node.end; ++k) {
        const Vec d = embedded(perm_[k]).segment(blk * n, n) - node.center.segment(blk * n, n);
        cov += d * d.transpose();
      }
      cov /= count;
      cov += (1e-9 * cov.trace() + 1e-200) * Mat::Identity(n, n);
      Eigen::SelfAdjointEigenSolver<Mat> es(cov);
      const Vec sd = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
      root[blk] = es.eigenvectors() * sd.asDiagonal();
      inv_root[blk] = sd.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    }
    double scale = 0.0;
    for (std::size_t k = node.begin; k < node.end; ++k) {
      const Vec d = embedded(perm_[k]) - node.center;
      const double w2 = (inv_root[0] * d.head(n)).squaredNorm() + (inv_root[1] * d.tail(n)).squaredNorm();
      scale = std::max(scale, std::sqrt(w2));
    }
    if (!std::isfinite(scale)) return;  // leave the node sphere-only
    scale = scale * (1.0 + 1e-9) + 1e-300;
    node.shape_q = scale * root[0];
    node.shape_v = scale * root[1];
  }

  std::vector<DataPoint> points_;
  std::size_t leaf_size_;
  Eigen::Index dim_ = 0;
  std::vector<double> embed_;
  std::vector<std::size_t> perm_;
  std::vector<BallTreeNode> nodes_;
};

}  // namespace cpc

namespace cpc {

inline std::vector<TargetCandidate> query_candidates(const BallTree& tree, const State& x0,
                                                     const NullCovector& nc, double omega,
                                                     double s_g, std::size_t n_d) {
  return tree.query(x0, nc, omega, s_g, n_d);
}

}  // namespace cpc
