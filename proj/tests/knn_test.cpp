#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "ps2/knn.hpp"

namespace ps2::knn {
namespace {

std::vector<Point3> random_cloud(std::size_t n, std::mt19937_64& rng, double extent = 1.0) {
  std::uniform_real_distribution<double> d(0.0, extent);
  std::vector<Point3> pts(n);
  for (auto& p : pts) p = {d(rng), d(rng), d(rng)};
  return pts;
}

// O(N) scan sorted by (squared distance, index).
std::vector<std::uint32_t> brute_force(const std::vector<Point3>& pts, const Point3& q,
                                       std::size_t k, std::ptrdiff_t exclude = -1) {
  std::vector<std::pair<double, std::uint32_t>> all;
  for (std::uint32_t i = 0; i < pts.size(); ++i) {
    if (static_cast<std::ptrdiff_t>(i) == exclude) continue;
    const double dx = q[0] - pts[i][0], dy = q[1] - pts[i][1], dz = q[2] - pts[i][2];
    all.emplace_back(dx * dx + dy * dy + dz * dz, i);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::uint32_t> out;
  for (std::size_t j = 0; j < k && j < all.size(); ++j) out.push_back(all[j].second);
  return out;
}

// Self first, then the k - 1 nearest others.
IndexMatrix brute_force_graph(const std::vector<Point3>& pts, std::size_t k) {
  IndexMatrix m(pts.size(), k);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    m(i, 0) = static_cast<std::uint32_t>(i);
    auto rest = brute_force(pts, pts[i], k - 1, static_cast<std::ptrdiff_t>(i));
    std::copy(rest.begin(), rest.end(), m.data.begin() + i * k + 1);
  }
  return m;
}

TEST(BuildIndex, SinglePoint) {
  const std::vector<Point3> pts{{1, 2, 3}};
  auto index = build_index(pts);
  EXPECT_EQ(index.size(), 1u);
  EXPECT_EQ(knn_query(index, {0, 0, 0}, 1), (std::vector<std::uint32_t>{0}));
}

TEST(BuildIndex, NearestNeighborMatchesBruteForce) {
  std::mt19937_64 rng(1);
  auto pts = random_cloud(1000, rng);
  auto index = build_index(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    auto q = index.query(pts[i], 2);
    EXPECT_EQ(q, brute_force(pts, pts[i], 2)) << "point " << i;
  }
}

TEST(BuildIndex, DuplicatesAreRetrievable) {
  const std::vector<Point3> pts{{0, 0, 0}, {1, 1, 1}, {1, 1, 1}, {5, 5, 5}};
  auto index = build_index(pts);
  EXPECT_EQ(index.query({1, 1, 1}, 2), (std::vector<std::uint32_t>{1, 2}));
}

TEST(BuildIndex, NonFiniteCoordinateNamesPoint) {
  std::vector<Point3> pts{{0, 0, 0}, {1, 1, 1}, {0, std::nan(""), 0}};
  try {
    build_index(pts);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("point 2"), std::string::npos);
  }
  pts[2] = {0, std::numeric_limits<double>::infinity(), 0};
  EXPECT_THROW(build_index(pts), DataError);
  EXPECT_THROW(build_index(std::vector<Point3>{}), ContractError);
}

TEST(KnnQuery, AllPointsSortedByDistance) {
  std::mt19937_64 rng(2);
  auto pts = random_cloud(40, rng);
  auto index = build_index(pts, 4);
  const Point3 q{0.5, 0.5, 0.5};
  EXPECT_EQ(index.query(q, 40), brute_force(pts, q, 40));
}

TEST(KnnQuery, StoredPointIsItsOwnNearest) {
  std::mt19937_64 rng(3);
  auto pts = random_cloud(50, rng);
  auto index = build_index(pts);
  EXPECT_EQ(index.query(pts[17], 1), (std::vector<std::uint32_t>{17}));
}

TEST(KnnQuery, CollinearTieBrokenByIndex) {
  const std::vector<Point3> pts{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {4, 0, 0}};
  auto index = build_index(pts, 1);
  EXPECT_EQ(knn_query(index, {2, 0, 0}, 3), (std::vector<std::uint32_t>{2, 1, 3}));
}

TEST(KnnQuery, KLargerThanSizeRejected) {
  const std::vector<Point3> pts{{0, 0, 0}, {1, 0, 0}};
  auto index = build_index(pts);
  EXPECT_THROW(index.query({0, 0, 0}, 3), ContractError);
  EXPECT_THROW(index.query({0, 0, 0}, 0), ContractError);
}

TEST(BuildGraph, FullGraphRowsArePermutationsStartingWithSelf) {
  std::mt19937_64 rng(4);
  auto pts = random_cloud(9, rng);
  auto g = build_graph(pts, 9);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(g.indices(i, 0), i);
    std::vector<std::uint32_t> row(g.indices.row(i).begin(), g.indices.row(i).end());
    std::sort(row.begin(), row.end());
    for (std::uint32_t j = 0; j < 9; ++j) EXPECT_EQ(row[j], j);
  }
}

TEST(BuildGraph, MatchesBruteForceOracle) {
  std::mt19937_64 rng(5);
  auto pts = random_cloud(200, rng);
  EXPECT_EQ(build_graph(pts, 20).indices, brute_force_graph(pts, 20));
}

TEST(BuildGraph, SelfFirstEvenWithManyDuplicates) {
  std::vector<Point3> pts(6, Point3{1, 1, 1});
  pts.push_back({2, 2, 2});
  auto g = build_graph(pts, 3);
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(g.indices(i, 0), i);
  EXPECT_EQ(g.indices, brute_force_graph(pts, 3));
}

TEST(BuildGraph, PermutationRelabelsRowsConsistently) {
  std::mt19937_64 rng(6);
  auto pts = random_cloud(150, rng);
  std::vector<std::uint32_t> perm(pts.size());  // new position p holds old point perm[p]
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::uint32_t> inverse(pts.size());
  std::vector<Point3> permuted(pts.size());
  for (std::uint32_t p = 0; p < perm.size(); ++p) {
    permuted[p] = pts[perm[p]];
    inverse[perm[p]] = p;
  }
  auto g = build_graph(pts, 12);
  auto gp = build_graph(permuted, 12);
  for (std::uint32_t i = 0; i < pts.size(); ++i) {
    const auto row = gp.indices.row(inverse[i]);
    for (std::size_t j = 0; j < 12; ++j) EXPECT_EQ(perm[row[j]], g.indices(i, j));
  }
}

// 50 random clouds with N <= 500 and k <= 25 equal the brute-force scan.
TEST(BuildGraph, OracleEquivalenceProperty) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> n_dist(25, 500);
  std::uniform_int_distribution<std::size_t> k_dist(1, 25);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = n_dist(rng);
    const auto k = k_dist(rng);
    auto pts = random_cloud(n, rng, 2.0);
    if (trial % 5 == 0) {
      // snap to a coarse lattice so exact distance ties actually occur
      for (auto& p : pts)
        for (auto& c : p) c = std::round(c * 4.0) / 4.0;
    }
    ASSERT_EQ(build_graph(pts, k).indices, brute_force_graph(pts, k)) << "trial " << trial;
  }
}

TEST(BuildGraph, DeterministicAcrossBuilds) {
  std::mt19937_64 rng(8);
  auto pts = random_cloud(300, rng);
  EXPECT_EQ(build_graph(pts, 16), build_graph(pts, 16));
}

TEST(XyzColumns, ExtractsLeadingCoordinates) {
  const std::vector<double> feats{1, 2, 3, 9, 4, 5, 6, 9};
  auto pts = xyz_columns(feats, 4);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[1], (Point3{4, 5, 6}));
}

}  // namespace
}  // namespace ps2::knn
