#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

// Exact hypervolume, hypervolume gradients and the loss weights derived from
// them, for minimisation problems with two or three objectives.
namespace modir::hv {

using Point = std::vector<double>;
using PointSet = std::vector<Point>;

struct FrontPartition {
  std::vector<std::vector<std::size_t>> fronts;  // fronts[0] is non-dominated
};

inline void check_dimension(const PointSet& points, const Point& ref) {
  const std::size_t n = ref.size();
  if (n != 2 && n != 3) throw std::invalid_argument("hypervolume supports 2 or 3 objectives, got " + std::to_string(n));
  for (const auto& p : points)
    if (p.size() != n) throw std::invalid_argument("point dimension does not match reference point");
}

/// a <= b everywhere and a < b somewhere.
inline bool dominates(const Point& a, const Point& b) {
  bool strictly = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k] > b[k]) return false;
    if (a[k] < b[k]) strictly = true;
  }
  return strictly;
}

/// Repeated peeling of the non-dominated subset. Index order within each
/// front is ascending.
inline FrontPartition nondominated_sort(const PointSet& points) {
  FrontPartition out;
  std::vector<std::size_t> remaining(points.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  while (!remaining.empty()) {
    std::vector<std::size_t> front, rest;
    for (std::size_t i : remaining) {
      const bool dominated = std::any_of(remaining.begin(), remaining.end(),
                                         [&](std::size_t j) { return dominates(points[j], points[i]); });
      (dominated ? rest : front).push_back(i);
    }
    out.fronts.push_back(std::move(front));
    remaining = std::move(rest);
  }
  return out;
}

namespace detail {

// Points must satisfy p <= ref componentwise; boundary points add zero.
inline double volume(PointSet pts, const Point& ref) {
  if (pts.empty()) return 0.0;
  const std::size_t n = ref.size();
  if (n == 1) {
    double lo = ref[0];
    for (const auto& p : pts) lo = std::min(lo, p[0]);
    return ref[0] - lo;
  }
  const std::size_t last = n - 1;
  std::stable_sort(pts.begin(), pts.end(), [last](const Point& a, const Point& b) { return a[last] < b[last]; });
  if (n == 2) {
    double area = 0.0, best = ref[0];
    for (std::size_t i = 0; i < pts.size(); ++i) {
      best = std::min(best, pts[i][0]);
      const double next = i + 1 < pts.size() ? pts[i + 1][1] : ref[1];
      area += (ref[0] - best) * (next - pts[i][1]);
    }
    return area;
  }
  // Sweep along the last axis with exact lower-dimensional slices.
  double vol = 0.0;
  const Point slice_ref(ref.begin(), ref.end() - 1);
  PointSet slice;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    slice.emplace_back(pts[i].begin(), pts[i].end() - 1);
    const double next = i + 1 < pts.size() ? pts[i + 1][last] : ref[last];
    const double height = next - pts[i][last];
    if (height > 0.0) vol += volume(slice, slice_ref) * height;
  }
  return vol;
}

inline bool inside(const Point& p, const Point& ref) {
  for (std::size_t k = 0; k < ref.size(); ++k)
    if (p[k] > ref[k]) return false;
  return true;
}

inline Point drop_axis(const Point& p, std::size_t axis) {
  Point q;
  q.reserve(p.size() - 1);
  for (std::size_t k = 0; k < p.size(); ++k)
    if (k != axis) q.push_back(p[k]);
  return q;
}

}  // namespace detail

/// Lebesgue measure of the union of boxes [q, ref] over the points q that lie
/// below the reference point.
inline double hypervolume(const PointSet& points, const Point& ref) {
  check_dimension(points, ref);
  PointSet kept;
  for (const auto& p : points)
    if (detail::inside(p, ref)) kept.push_back(p);
  return detail::volume(std::move(kept), ref);
}

/// dHV/dq for every point: minus the (n-1)-measure of the face of the point's
/// exclusive region orthogonal to each axis. Dominated points and points
/// beyond the reference get zero. Coordinate ties are broken by index, the
/// lower index sweeping first.
inline PointSet hv_gradient(const PointSet& points, const Point& ref) {
  check_dimension(points, ref);
  const std::size_t n = ref.size(), p = points.size();
  PointSet grad(p, Point(n, 0.0));
  for (std::size_t i = 0; i < p; ++i) {
    if (!detail::inside(points[i], ref)) continue;
    const bool dominated = std::any_of(points.begin(), points.end(), [&](const Point& o) {
      return detail::inside(o, ref) && dominates(o, points[i]);
    });
    if (dominated) continue;
    for (std::size_t axis = 0; axis < n; ++axis) {
      const double qi = points[i][axis];
      PointSet below;
      for (std::size_t j = 0; j < p; ++j) {
        if (j == i || !detail::inside(points[j], ref)) continue;
        const double qj = points[j][axis];
        if (qj < qi || (qj == qi && j < i)) below.push_back(detail::drop_axis(points[j], axis));
      }
      const Point face_ref = detail::drop_axis(ref, axis);
      const double without = detail::volume(below, face_ref);
      below.push_back(detail::drop_axis(points[i], axis));
      const double with = detail::volume(std::move(below), face_ref);
      grad[i][axis] = -(with - without);
    }
  }
  return grad;
}

/// Per-solution loss weights: the negated HV gradient, L1-normalised.
///
/// Points beyond the reference are first projected onto its boundary.
/// Dominated points take the gradient of their own non-dominated front
/// against the same reference. A point whose gradient still vanishes gets
/// uniform weights.
inline PointSet dynamic_weights(const PointSet& points, const Point& ref) {
  check_dimension(points, ref);
  const std::size_t n = ref.size();
  PointSet projected = points;
  for (auto& q : projected)
    for (std::size_t k = 0; k < n; ++k) q[k] = std::min(q[k], ref[k]);

  PointSet weights(points.size(), Point(n, 1.0 / static_cast<double>(n)));
  for (const auto& front : nondominated_sort(projected).fronts) {
    PointSet members;
    for (std::size_t idx : front) members.push_back(projected[idx]);
    const PointSet g = hv_gradient(members, ref);
    for (std::size_t m = 0; m < front.size(); ++m) {
      double total = 0.0;
      for (double v : g[m]) total -= v;
      if (!(total > 0.0)) continue;
      for (std::size_t k = 0; k < n; ++k) weights[front[m]][k] = -g[m][k] / total;
    }
  }
  return weights;
}

/// Mean Euclidean distance from each point to its nearest neighbour.
inline double mean_nearest_neighbor_distance(const PointSet& points) {
  if (points.size() < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (i == j) continue;
      double d2 = 0.0;
      for (std::size_t k = 0; k < points[i].size(); ++k) d2 += (points[i][k] - points[j][k]) * (points[i][k] - points[j][k]);
      best = std::min(best, d2);
    }
    sum += std::sqrt(best);
  }
  return sum / static_cast<double>(points.size());
}

}  // namespace modir::hv
