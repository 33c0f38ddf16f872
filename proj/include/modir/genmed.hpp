#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

// Convex GenMED benchmark: objective k is the squared distance to the unit
// vector e_k. Its Pareto set is the simplex spanned by the unit vectors.
namespace modir::genmed {

using Vec = std::vector<double>;

inline void check_size(const Vec& x) {
  if (x.size() != 2 && x.size() != 3) throw std::invalid_argument("genmed supports 2 or 3 objectives");
}

inline Vec evaluate(const Vec& x) {
  check_size(x);
  const std::size_t n = x.size();
  Vec f(n, 0.0);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t m = 0; m < n; ++m) {
      const double d = x[m] - (m == k ? 1.0 : 0.0);
      f[k] += d * d;
    }
  return f;
}

/// Row k holds the gradient of objective k, 2 (x - e_k).
inline std::vector<Vec> gradient(const Vec& x) {
  check_size(x);
  const std::size_t n = x.size();
  std::vector<Vec> g(n, Vec(n));
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t m = 0; m < n; ++m) g[k][m] = 2.0 * (x[m] - (m == k ? 1.0 : 0.0));
  return g;
}

/// Euclidean projection onto the probability simplex (sort-based).
inline Vec project_to_simplex(const Vec& x) {
  Vec u = x;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumulative += u[j];
    const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  Vec p(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) p[k] = std::max(x[k] - theta, 0.0);
  return p;
}

/// Distance from a decision vector to the Pareto set.
inline double front_distance(const Vec& x) {
  check_size(x);
  const Vec p = project_to_simplex(x);
  double d2 = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) d2 += (x[k] - p[k]) * (x[k] - p[k]);
  return std::sqrt(d2);
}

namespace detail {

inline double point_segment_distance(const Vec& q, const Vec& a, const Vec& b) {
  double ab2 = 0.0, t = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    ab2 += (b[k] - a[k]) * (b[k] - a[k]);
    t += (q[k] - a[k]) * (b[k] - a[k]);
  }
  t = ab2 > 0.0 ? std::clamp(t / ab2, 0.0, 1.0) : 0.0;
  double d2 = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    const double c = a[k] + t * (b[k] - a[k]);
    d2 += (q[k] - c) * (q[k] - c);
  }
  return std::sqrt(d2);
}

}  // namespace detail

/// Distance in objective space from f to the image of the simplex edges
/// (the boundary of the three-objective Pareto front), using a polyline with
/// `segments` pieces per edge.
inline double edge_distance(const Vec& f, std::size_t segments = 2000) {
  if (f.size() != 3) throw std::invalid_argument("edge_distance needs 3 objectives");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < 3; ++a) {
    const std::size_t b = (a + 1) % 3;
    Vec prev;
    for (std::size_t s = 0; s <= segments; ++s) {
      const double t = static_cast<double>(s) / static_cast<double>(segments);
      Vec x(3, 0.0);
      x[a] = 1.0 - t;
      x[b] = t;
      Vec cur = evaluate(x);
      if (!prev.empty()) best = std::min(best, detail::point_segment_distance(f, prev, cur));
      prev = std::move(cur);
    }
  }
  return best;
}

/// Edge-clustering statistic of a three-objective set: 1 - mean edge
/// distance / edge distance of the front's centre point f(1/3,1/3,1/3).
/// 1 when every point lies on the front boundary, larger means more
/// clustering on the edges.
inline double edge_clustering(const std::vector<Vec>& objectives) {
  if (objectives.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& f : objectives) sum += edge_distance(f);
  const double centre = edge_distance(evaluate(Vec(3, 1.0 / 3.0)));
  return 1.0 - sum / static_cast<double>(objectives.size()) / centre;
}

}  // namespace modir::genmed
