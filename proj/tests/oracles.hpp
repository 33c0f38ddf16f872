#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

// Reference implementations used only to check the library.
namespace oracles {

using Point = std::vector<double>;
using PointSet = std::vector<Point>;

/// Exact hypervolume by inclusion-exclusion over all subsets (p <= ~16).
inline double hv_inclusion_exclusion(const PointSet& pts, const Point& ref) {
  const std::size_t p = pts.size(), n = ref.size();
  double total = 0.0;
  for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << p); ++mask) {
    double vol = 1.0;
    for (std::size_t k = 0; k < n && vol > 0.0; ++k) {
      double hi = -1e300;
      for (std::size_t i = 0; i < p; ++i)
        if (mask >> i & 1) hi = std::max(hi, pts[i][k]);
      vol *= std::max(0.0, ref[k] - hi);
    }
    total += (std::popcount(mask) % 2 ? 1.0 : -1.0) * vol;
  }
  return total;
}

inline bool dominates(const Point& a, const Point& b) {
  bool strict = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k] > b[k]) return false;
    if (a[k] < b[k]) strict = true;
  }
  return strict;
}

/// Front index of every point as the length of the longest chain of
/// dominators above it (O(p^2 n) per level, no peeling).
inline std::vector<std::size_t> front_ranks(const PointSet& pts) {
  const std::size_t p = pts.size();
  std::vector<std::size_t> rank(p, 0);
  for (std::size_t pass = 0; pass < p; ++pass)
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < p; ++j)
        if (dominates(pts[j], pts[i])) rank[i] = std::max(rank[i], rank[j] + 1);
  return rank;
}

/// xoshiro256+ generator; fast enough for 1e9-sample Monte-Carlo runs.
class Xoshiro {
 public:
  explicit Xoshiro(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x9e3779b9u};
    std::uint32_t words[8];
    seq.generate(words, words + 8);
    for (int i = 0; i < 4; ++i) s_[i] = static_cast<std::uint64_t>(words[2 * i]) << 32 | words[2 * i + 1];
  }
  std::uint64_t operator()() {
    const std::uint64_t result = s_[0] + s_[3];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = (s_[3] << 45) | (s_[3] >> 19);
    return result;
  }

 private:
  std::uint64_t s_[4];
};

struct McEstimate {
  double value = 0.0;
  double sigma = 0.0;  // standard error of the estimate
};

/// Monte-Carlo hypervolume: uniform samples in the box [lower, ref] where
/// lower lies a quarter of the extent below the componentwise minimum of
/// the points; hit fraction times box
/// volume. Coordinates are compared as 32-bit fixed point within the box.
/// A 2D cell index over the first two axes settles most samples without
/// scanning the points: each cell stores the lowest third-axis threshold of
/// the boxes that cover it entirely (sure hit above it), the lowest of those
/// that touch it at all (sure miss below it), and the touching boxes to scan
/// in between.
inline McEstimate hv_monte_carlo(const PointSet& pts, const Point& ref, std::uint64_t samples, std::uint64_t seed) {
  const std::size_t n = ref.size();
  Point lo(n, 1e300);
  std::vector<const Point*> inside;
  for (const auto& q : pts) {
    bool in = true;
    for (std::size_t k = 0; k < n; ++k) in = in && q[k] < ref[k];
    if (in) inside.push_back(&q);
  }
  if (inside.empty()) return {};
  for (const Point* q : inside)
    for (std::size_t k = 0; k < n; ++k) lo[k] = std::min(lo[k], (*q)[k]);
  // Extend the box below the minimum so that a point dominating all others
  // does not fill it and the hit fraction stays informative.
  for (std::size_t k = 0; k < n; ++k) lo[k] -= 0.25 * (ref[k] - lo[k]);
  double box = 1.0;
  for (std::size_t k = 0; k < n; ++k) box *= ref[k] - lo[k];
  const std::size_t m = inside.size();
  std::vector<std::array<std::uint32_t, 3>> thr(m, {0, 0, 0});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double t = std::ceil(((*inside[i])[k] - lo[k]) / (ref[k] - lo[k]) * 4294967296.0);
      thr[i][k] = static_cast<std::uint32_t>(std::min(t, 4294967295.0));
    }

  constexpr unsigned kBits = 7;
  constexpr std::size_t kCells = std::size_t{1} << kBits;
  constexpr unsigned kShift = 32 - kBits;
  constexpr std::uint64_t kNone = std::uint64_t{1} << 32;
  std::vector<std::uint64_t> sure_hit(kCells * kCells, kNone), sure_miss(kCells * kCells, kNone);
  std::vector<std::uint32_t> offset(kCells * kCells + 1, 0);
  std::vector<std::uint32_t> scan;
  for (std::size_t gy = 0; gy < kCells; ++gy)
    for (std::size_t gx = 0; gx < kCells; ++gx) {
      const std::size_t c = gy * kCells + gx;
      const std::uint64_t xlo = gx << kShift, ylo = gy << kShift;
      const std::uint64_t xhi = xlo + (std::uint64_t{1} << kShift) - 1, yhi = ylo + (std::uint64_t{1} << kShift) - 1;
      for (std::size_t i = 0; i < m; ++i) {
        if (thr[i][0] <= xlo && thr[i][1] <= ylo) sure_hit[c] = std::min<std::uint64_t>(sure_hit[c], thr[i][2]);
        if (thr[i][0] <= xhi && thr[i][1] <= yhi) sure_miss[c] = std::min<std::uint64_t>(sure_miss[c], thr[i][2]);
      }
      offset[c] = static_cast<std::uint32_t>(scan.size());
      for (std::size_t i = 0; i < m; ++i)
        if (thr[i][0] <= xhi && thr[i][1] <= yhi && !(thr[i][0] <= xlo && thr[i][1] <= ylo) && thr[i][2] < sure_hit[c])
          scan.push_back(static_cast<std::uint32_t>(i));
    }
  offset[kCells * kCells] = static_cast<std::uint32_t>(scan.size());

  Xoshiro rng(seed);
  std::uint64_t hits = 0;
  for (std::uint64_t s = 0; s < samples; ++s) {
    const std::uint64_t r1 = rng();
    const auto x = static_cast<std::uint32_t>(r1), y = static_cast<std::uint32_t>(r1 >> 32);
    const auto z = n == 3 ? static_cast<std::uint32_t>(rng() >> 32) : 0u;
    const std::size_t c = (static_cast<std::size_t>(y >> kShift) << kBits) | (x >> kShift);
    if (z >= sure_hit[c]) {
      ++hits;
      continue;
    }
    if (z < sure_miss[c]) continue;
    for (std::uint32_t j = offset[c]; j < offset[c + 1]; ++j) {
      const auto& t = thr[scan[j]];
      if (t[0] <= x && t[1] <= y && t[2] <= z) {
        ++hits;
        break;
      }
    }
  }
  const double f = static_cast<double>(hits) / static_cast<double>(samples);
  return {f * box, box * std::sqrt(std::max(f * (1.0 - f), 1e-300) / static_cast<double>(samples))};
}

/// Central finite-difference gradient of a set function f(points).
template <class F>
PointSet fd_gradient(F f, PointSet pts, double h) {
  PointSet g(pts.size(), Point(pts.front().size(), 0.0));
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t k = 0; k < pts[i].size(); ++k) {
      const double orig = pts[i][k];
      pts[i][k] = orig + h;
      const double fp = f(pts);
      pts[i][k] = orig - h;
      const double fm = f(pts);
      pts[i][k] = orig;
      g[i][k] = (fp - fm) / (2.0 * h);
    }
  return g;
}

/// Random point set whose coordinates differ pairwise (per axis) by at
/// least `gap`, so finite differences never straddle a kink.
inline PointSet well_separated(std::mt19937_64& rng, std::size_t p, std::size_t n, double lo, double hi, double gap) {
  std::uniform_real_distribution<double> u(lo, hi);
  PointSet pts;
  while (pts.size() < p) {
    Point q(n);
    for (double& v : q) v = u(rng);
    bool ok = true;
    for (const auto& o : pts)
      for (std::size_t k = 0; k < n; ++k) ok = ok && std::abs(o[k] - q[k]) >= gap;
    if (ok) pts.push_back(q);
  }
  return pts;
}

}  // namespace oracles
