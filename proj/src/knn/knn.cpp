#include "ps2/knn.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <string>

namespace ps2::knn {
namespace {

double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

double box_distance(const Point3& q, const Point3& lo, const Point3& hi) {
  double d = 0;
  for (int a = 0; a < 3; ++a) {
    double e = 0;
    if (q[a] < lo[a]) {
      e = lo[a] - q[a];
    } else if (q[a] > hi[a]) {
      e = q[a] - hi[a];
    }
    d += e * e;
  }
  return d;
}

struct Candidate {
  double d2;
  std::uint32_t index;
  bool operator<(const Candidate& o) const {
    return d2 < o.d2 || (d2 == o.d2 && index < o.index);
  }
};

template <typename S>
std::vector<Point3> xyz_impl(std::span<const S> features, std::size_t width) {
  if (width < 3 || features.size() % width != 0) {
    throw DimensionError("xyz_columns: feature width " + std::to_string(width) +
                         " incompatible with " + std::to_string(features.size()) + " values");
  }
  std::vector<Point3> out(features.size() / width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = {static_cast<double>(features[i * width]),
              static_cast<double>(features[i * width + 1]),
              static_cast<double>(features[i * width + 2])};
  }
  return out;
}

}  // namespace

SpatialIndex::SpatialIndex(std::span<const Point3> points, std::size_t leaf_size)
    : points_(points.begin(), points.end()), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
  if (points_.empty()) throw ContractError("build_index: no points");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    for (double c : points_[i]) {
      if (!std::isfinite(c)) {
        throw DataError("build_index: non-finite coordinate at point " + std::to_string(i));
      }
    }
  }
  order_.resize(points_.size());
  for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
  build(0, static_cast<std::uint32_t>(order_.size()));
}

std::int32_t SpatialIndex::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({});
  Node node;
  node.begin = begin;
  node.end = end;
  node.lo = node.hi = points_[order_[begin]];
  for (auto i = begin; i < end; ++i) {
    const auto& p = points_[order_[i]];
    for (int a = 0; a < 3; ++a) {
      node.lo[a] = std::min(node.lo[a], p[a]);
      node.hi[a] = std::max(node.hi[a], p[a]);
    }
  }
  if (end - begin > leaf_size_) {
    int axis = 0;
    for (int a = 1; a < 3; ++a) {
      if (node.hi[a] - node.lo[a] > node.hi[axis] - node.lo[axis]) axis = a;
    }
    const auto mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t x, std::uint32_t y) {
                       const double px = points_[x][axis], py = points_[y][axis];
                       return px < py || (px == py && x < y);
                     });
    node.left = build(begin, mid);
    node.right = build(mid, end);
  }
  nodes_[id] = node;
  return id;
}

std::vector<std::uint32_t> SpatialIndex::query(const Point3& q, std::size_t k) const {
  if (k < 1 || k > points_.size()) {
    throw ContractError("knn_query: k = " + std::to_string(k) + " must lie in [1, " +
                        std::to_string(points_.size()) + "]");
  }
  // max-heap on (distance, index): top is the current worst kept candidate
  std::priority_queue<Candidate> heap;
  std::vector<std::int32_t> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    // Equal distance still has to be visited: a tie may win on index.
    if (heap.size() == k && box_distance(q, node.lo, node.hi) > heap.top().d2) continue;
    if (node.left < 0) {
      for (auto i = node.begin; i < node.end; ++i) {
        const Candidate c{squared_distance(q, points_[order_[i]]), order_[i]};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      continue;
    }
    const Node& l = nodes_[node.left];
    const Node& r = nodes_[node.right];
    // push the farther child first so the nearer one is explored first
    if (box_distance(q, l.lo, l.hi) <= box_distance(q, r.lo, r.hi)) {
      stack.push_back(node.right);
      stack.push_back(node.left);
    } else {
      stack.push_back(node.left);
      stack.push_back(node.right);
    }
  }
  std::vector<std::uint32_t> out(heap.size());
  for (auto i = out.size(); i-- > 0;) {
    out[i] = heap.top().index;
    heap.pop();
  }
  return out;
}

SpatialIndex build_index(std::span<const Point3> points, std::size_t leaf_size) {
  return SpatialIndex(points, leaf_size);
}

std::vector<std::uint32_t> knn_query(const SpatialIndex& index, const Point3& query,
                                     std::size_t k) {
  return index.query(query, k);
}

KnnGraph build_graph(std::span<const Point3> points, std::size_t k) {
  const SpatialIndex index(points);
  if (k < 1 || k > points.size()) {
    throw ContractError("build_graph: k = " + std::to_string(k) + " must lie in [1, " +
                        std::to_string(points.size()) + "]");
  }
  KnnGraph graph{IndexMatrix(points.size(), k)};
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto row = index.query(points[i], k);
    const auto self = static_cast<std::uint32_t>(i);
    auto it = std::find(row.begin(), row.end(), self);
    if (it == row.end()) {
      // more than k - 1 exact duplicates with lower indices crowded i out
      it = row.end() - 1;
      *it = self;
    }
    std::rotate(row.begin(), it, it + 1);
    std::copy(row.begin(), row.end(), graph.indices.data.begin() + i * k);
  }
  return graph;
}

std::vector<Point3> xyz_columns(std::span<const double> features, std::size_t width) {
  return xyz_impl(features, width);
}

std::vector<Point3> xyz_columns(std::span<const float> features, std::size_t width) {
  return xyz_impl(features, width);
}

}  // namespace ps2::knn
