#pragma once

// Static K-nearest-neighbor graphs in 3D coordinate space.
//
// Neighbors are ordered by ascending Euclidean distance with ties broken by
// ascending point index, which makes results exactly reproducible and equal to
// a brute-force scan. Graph rows additionally put the query point first.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ps2/tensor.hpp"

namespace ps2::knn {

using Point3 = std::array<double, 3>;

class SpatialIndex {
 public:
  // Balanced k-d tree over `points`. Throws DataError naming the first point
  // with a non-finite coordinate, ContractError when `points` is empty.
  explicit SpatialIndex(std::span<const Point3> points, std::size_t leaf_size = 12);

  std::size_t size() const { return points_.size(); }
  std::size_t leaf_size() const { return leaf_size_; }
  const std::vector<Point3>& points() const { return points_; }

  // The k nearest stored points to `query`, ordered by (distance, index).
  std::vector<std::uint32_t> query(const Point3& query, std::size_t k) const;

 private:
  struct Node {
    std::uint32_t begin = 0;  // range into order_
    std::uint32_t end = 0;
    std::int32_t left = -1;   // -1 on leaves
    std::int32_t right = -1;
    Point3 lo{};              // bounding box of the points below
    Point3 hi{};
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);

  std::vector<Point3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

struct KnnGraph {
  IndexMatrix indices;  // N x k

  std::size_t size() const { return indices.rows; }
  std::size_t k() const { return indices.cols; }
  bool operator==(const KnnGraph&) const = default;
};

SpatialIndex build_index(std::span<const Point3> points, std::size_t leaf_size = 12);

// Throws ContractError unless 1 <= k <= index.size().
std::vector<std::uint32_t> knn_query(const SpatialIndex& index, const Point3& query, std::size_t k);

// Row i holds i followed by its k - 1 nearest other points.
KnnGraph build_graph(std::span<const Point3> points, std::size_t k);

// The first three columns of a row-major N x width feature matrix.
std::vector<Point3> xyz_columns(std::span<const double> features, std::size_t width);
std::vector<Point3> xyz_columns(std::span<const float> features, std::size_t width);

}  // namespace ps2::knn
