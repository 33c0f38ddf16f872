#include <gtest/gtest.h>

#include <random>

#include "modir/hypervolume.hpp"
#include "oracles.hpp"

using namespace modir;
using hv::Point;
using hv::PointSet;

TEST(Dominates, Examples) {
  EXPECT_TRUE(hv::dominates({0.1, 0.2}, {0.3, 0.2}));
  EXPECT_FALSE(hv::dominates({0.1, 0.5}, {0.2, 0.3}));
  EXPECT_FALSE(hv::dominates({0.2, 0.3}, {0.1, 0.5}));
  EXPECT_FALSE(hv::dominates({0.4, 0.4}, {0.4, 0.4}));
}

TEST(NondominatedSort, Examples) {
  const auto part = hv::nondominated_sort({{0.1, 0.9}, {0.5, 0.5}, {0.6, 0.6}});
  ASSERT_EQ(part.fronts.size(), 2u);
  EXPECT_EQ(part.fronts[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(part.fronts[1], (std::vector<std::size_t>{2}));
  const auto same = hv::nondominated_sort({{0.3, 0.3, 0.3}, {0.3, 0.3, 0.3}, {0.3, 0.3, 0.3}});
  ASSERT_EQ(same.fronts.size(), 1u);
  EXPECT_EQ(same.fronts[0].size(), 3u);
}

TEST(NondominatedSort, MatchesBruteForceRanks) {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = trial % 2 ? 3 : 2;
    PointSet pts(20, Point(n));
    // Coarse grid values create ties and long domination chains.
    for (auto& q : pts)
      for (double& v : q) v = std::round(u(rng) * 6.0) / 6.0;
    const auto ranks = oracles::front_ranks(pts);
    const auto part = hv::nondominated_sort(pts);
    std::vector<bool> seen(pts.size(), false);
    for (std::size_t f = 0; f < part.fronts.size(); ++f)
      for (std::size_t i : part.fronts[f]) {
        EXPECT_EQ(ranks[i], f) << "trial " << trial << " point " << i;
        EXPECT_FALSE(seen[i]);
        seen[i] = true;
      }
    for (bool s : seen) EXPECT_TRUE(s);
  }
}

TEST(Hypervolume, Examples) {
  EXPECT_DOUBLE_EQ(hv::hypervolume({{0, 0, 0}}, {1, 1, 1}), 1.0);
  EXPECT_NEAR(hv::hypervolume({{0.2, 0.6}, {0.5, 0.3}}, {1, 1}), 0.47, 1e-12);
  EXPECT_EQ(hv::hypervolume({{2, 2}}, {1, 1}), 0.0);
  EXPECT_EQ(hv::hypervolume({{0.5, 1.5, 0.5}}, {1, 1, 1}), 0.0);
}

TEST(Hypervolume, TwoPointExampleMatchesMonteCarlo) {
  const auto mc = oracles::hv_monte_carlo({{0.2, 0.6}, {0.5, 0.3}}, {1, 1}, 10'000'000, 7);
  EXPECT_NEAR(mc.value, 0.47, 1e-3);
}

TEST(Hypervolume, UnsupportedDimensionThrows) {
  EXPECT_THROW(hv::hypervolume({{0.1, 0.1, 0.1, 0.1}}, {1, 1, 1, 1}), std::invalid_argument);
}

TEST(Hypervolume, MatchesInclusionExclusion) {
  std::mt19937_64 rng(102);
  std::uniform_real_distribution<double> u(0.0, 1.2);
  std::uniform_int_distribution<std::size_t> size(1, 11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = trial % 3 ? 3 : 2, p = size(rng);
    PointSet pts(p, Point(n));
    for (auto& q : pts)
      for (double& v : q) v = u(rng);
    const Point ref(n, 1.0);
    EXPECT_NEAR(hv::hypervolume(pts, ref), oracles::hv_inclusion_exclusion(pts, ref), 1e-12) << "trial " << trial;
  }
}

TEST(Hypervolume, MatchesMonteCarloSmallSample) {
  std::mt19937_64 rng(103);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    PointSet pts(27, Point(3));
    for (auto& q : pts)
      for (double& v : q) v = u(rng);
    const Point ref{1, 1, 1};
    const auto mc = oracles::hv_monte_carlo(pts, ref, 1'000'000, 1000 + trial);
    EXPECT_LE(std::abs(hv::hypervolume(pts, ref) - mc.value), 4.0 * mc.sigma);
  }
}

TEST(Hypervolume, MonotoneUnderInsertionAndDominatedRemoval) {
  std::mt19937_64 rng(104);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = trial % 2 ? 3 : 2;
    const Point ref(n, 1.0);
    PointSet pts;
    double prev = 0.0;
    for (int k = 0; k < 12; ++k) {
      Point q(n);
      for (double& v : q) v = u(rng);
      pts.push_back(q);
      const double now = hv::hypervolume(pts, ref);
      EXPECT_GE(now, prev - 1e-15);
      prev = now;
    }
    const auto front0 = hv::nondominated_sort(pts).fronts.front();
    PointSet nd;
    for (std::size_t i : front0) nd.push_back(pts[i]);
    EXPECT_NEAR(hv::hypervolume(nd, ref), prev, 1e-14);
  }
}

TEST(Hypervolume, TranslationConsistent) {
  std::mt19937_64 rng(105);
  std::uniform_real_distribution<double> u(0.0, 1.0), shift(-3.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = trial % 2 ? 3 : 2;
    PointSet pts(8, Point(n));
    for (auto& q : pts)
      for (double& v : q) v = u(rng);
    Point ref(n, 1.0), d(n);
    for (double& v : d) v = shift(rng);
    PointSet moved = pts;
    Point moved_ref = ref;
    for (auto& q : moved)
      for (std::size_t k = 0; k < n; ++k) q[k] += d[k];
    for (std::size_t k = 0; k < n; ++k) moved_ref[k] += d[k];
    EXPECT_NEAR(hv::hypervolume(pts, ref), hv::hypervolume(moved, moved_ref), 1e-12);
  }
}

TEST(HvGradient, Examples) {
  const auto g1 = hv::hv_gradient({{0.2, 0.6}}, {1, 1});
  EXPECT_NEAR(g1[0][0], -0.4, 1e-15);
  EXPECT_NEAR(g1[0][1], -0.8, 1e-15);
  const auto g2 = hv::hv_gradient({{0.2, 0.6}, {0.5, 0.3}}, {1, 1});
  EXPECT_NEAR(g2[0][0], -0.4, 1e-15);
  EXPECT_NEAR(g2[0][1], -0.3, 1e-15);
  const auto g3 = hv::hv_gradient({{0.1, 0.1}, {0.5, 0.5}}, {1, 1});
  EXPECT_EQ(g3[1], (Point{0.0, 0.0}));
  const auto g4 = hv::hv_gradient({{1.5, 0.2}}, {1, 1});
  EXPECT_EQ(g4[0], (Point{0.0, 0.0}));
}

TEST(HvGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(106);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = trial % 2 ? 3 : 2;
    const Point ref(n, 1.0);
    const auto pts = oracles::well_separated(rng, 2 + trial % 9, n, 0.0, 0.95, 1e-4);
    const auto fd = oracles::fd_gradient([&](const PointSet& q) { return hv::hypervolume(q, ref); }, pts, 1e-6);
    const auto g = hv::hv_gradient(pts, ref);
    double diff2 = 0.0, norm2 = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t k = 0; k < n; ++k) {
        diff2 += (g[i][k] - fd[i][k]) * (g[i][k] - fd[i][k]);
        norm2 += fd[i][k] * fd[i][k];
      }
    EXPECT_LE(std::sqrt(diff2 / norm2), 1e-6) << "trial " << trial;
  }
}

TEST(DynamicWeights, Examples) {
  const auto w = hv::dynamic_weights({{0.2, 0.6}, {0.5, 0.3}}, {1, 1});
  EXPECT_NEAR(w[0][0], 4.0 / 7.0, 1e-14);
  EXPECT_NEAR(w[0][1], 3.0 / 7.0, 1e-14);
  const auto s = hv::dynamic_weights({{0.2, 0.6}}, {1, 1});
  EXPECT_NEAR(s[0][0], 1.0 / 3.0, 1e-14);
  EXPECT_NEAR(s[0][1], 2.0 / 3.0, 1e-14);
}

TEST(DynamicWeights, DominatedPointUsesOwnFront) {
  const PointSet pts{{0.1, 0.5}, {0.5, 0.1}, {0.3, 0.7}, {0.7, 0.3}};
  const Point ref{1, 1};
  const auto w = hv::dynamic_weights(pts, ref);
  const auto inner = hv::dynamic_weights({pts[2], pts[3]}, ref);
  EXPECT_NEAR(w[2][0], inner[0][0], 1e-15);
  EXPECT_NEAR(w[2][1], inner[0][1], 1e-15);
  EXPECT_NEAR(w[3][0], inner[1][0], 1e-15);
}

TEST(DynamicWeights, PointBeyondReferenceIsProjected) {
  // Projected onto (1, 0.5): only the first loss can still gain volume.
  const auto w = hv::dynamic_weights({{1.5, 0.5}}, {1, 1});
  EXPECT_NEAR(w[0][0], 1.0, 1e-15);
  EXPECT_NEAR(w[0][1], 0.0, 1e-15);
  // Beyond in every axis: zero gradient, uniform fallback.
  const auto u = hv::dynamic_weights({{1.5, 2.0, 3.0}}, {1, 1, 1});
  for (double v : u[0]) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(DynamicWeights, RowsNonnegativeAndSumToOne) {
  std::mt19937_64 rng(107);
  std::uniform_real_distribution<double> u(0.0, 1.3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = trial % 2 ? 3 : 2;
    PointSet pts(1 + trial % 27, Point(n));
    for (auto& q : pts)
      for (double& v : q) v = trial % 5 == 0 ? std::round(u(rng) * 4) / 4 : u(rng);
    for (const auto& row : hv::dynamic_weights(pts, Point(n, 1.0))) {
      double sum = 0.0;
      for (double v : row) {
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Spread, MeanNearestNeighbourDistance) {
  EXPECT_EQ(hv::mean_nearest_neighbor_distance({{0, 0}}), 0.0);
  // Distances: 0->1 is 1, 1->0 is 1, 2->1 is 3.
  EXPECT_NEAR(hv::mean_nearest_neighbor_distance({{0, 0}, {1, 0}, {4, 0}}), 5.0 / 3.0, 1e-15);
}
