#include <algorithm>
#include <cmath>

#include "ps2/layers.hpp"
#include "ps2/random.hpp"

namespace ps2::nn {
namespace {

constexpr double kNormEps = 1e-12;

void check_graph(std::size_t rows, const knn::KnnGraph& graph, const char* op) {
  if (graph.size() != rows) {
    throw ContractError(std::string(op) + ": graph has " + std::to_string(graph.size()) +
                        " rows but the feature matrix has " + std::to_string(rows));
  }
}

}  // namespace

IndexMatrix self_index(std::size_t rows, std::size_t k) {
  IndexMatrix m(rows, k);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < k; ++j) m(i, j) = static_cast<std::uint32_t>(i);
  }
  return m;
}

template <typename T>
EdgeConvParams<T> make_edgeconv(std::size_t in_features, std::span<const std::size_t> edge_widths,
                                std::size_t out_features, LocalKind kind, std::mt19937_64& rng) {
  if (edge_widths.size() != 2) {
    throw ContractError("EdgeConv takes exactly two edge MLP widths, got " +
                        std::to_string(edge_widths.size()));
  }
  const std::size_t first_in = kind == LocalKind::edgeconv ? 2 * in_features : in_features;
  const std::size_t pooled = kind == LocalKind::edgeconv ? 2 * edge_widths[1] : edge_widths[1];
  EdgeConvParams<T> p{kind,
                      make_shared_mlp<T>(first_in, edge_widths[0], true, true, rng),
                      make_shared_mlp<T>(edge_widths[0], edge_widths[1], true, true, rng),
                      make_shared_mlp<T>(pooled, out_features, true, true, rng)};
  return p;
}

template <typename T>
Tensor<T> h_operator(const Tensor<T>& x, const knn::KnnGraph& graph) {
  if (x.rank() != 2) throw DimensionError("h_operator: expected N x F input, got " + shape_str(x.shape()));
  check_graph(x.dim(0), graph, "h_operator");
  auto neighbors = gather_rows(x, graph.indices);
  auto centers = gather_rows(x, self_index(x.dim(0), graph.k()));
  return concat(centers, sub(neighbors, centers), 2);
}

template <typename T>
Tensor<T> edge_features(const Tensor<T>& h, EdgeConvParams<T>& params, Mode mode) {
  if (h.rank() != 3 || h.dim(2) != params.mlp1.in_features()) {
    throw ContractError("edge_features: H " + shape_str(h.shape()) + " does not match edge MLP width " +
                        std::to_string(params.mlp1.in_features()));
  }
  const std::size_t n = h.dim(0), k = h.dim(1);
  auto flat = reshape(h, {n * k, h.dim(2)});
  auto e = shared_mlp_forward(shared_mlp_forward(flat, params.mlp1, mode), params.mlp2, mode);
  return reshape(e, {n, k, params.mlp2.out_features()});
}

template <typename T>
Tensor<T> edgeconv_forward(const Tensor<T>& x, const knn::KnnGraph& graph,
                           EdgeConvParams<T>& params, Mode mode, EdgeRoute route) {
  if (x.rank() != 2) throw DimensionError("edgeconv: expected N x F input, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);

  if (params.kind == LocalKind::pointwise) {
    auto e = shared_mlp_forward(shared_mlp_forward(x, params.mlp1, mode), params.mlp2, mode);
    return shared_mlp_forward(e, params.mlp_out, mode);
  }

  check_graph(n, graph, "edgeconv");
  const std::size_t k = graph.k();

  if (params.kind == LocalKind::pointwise_max) {
    auto e = shared_mlp_forward(shared_mlp_forward(x, params.mlp1, mode), params.mlp2, mode);
    auto pooled = reduce(gather_rows(e, graph.indices), 1, ReduceMode::max);
    return shared_mlp_forward(pooled, params.mlp_out, mode);
  }

  const std::size_t f = x.dim(1);
  if (2 * f != params.mlp1.in_features()) {
    throw ContractError("edgeconv: input width " + std::to_string(f) + " does not match edge MLP input " +
                        std::to_string(params.mlp1.in_features()));
  }
  Tensor<T> edges;
  if (route == EdgeRoute::explicit_h) {
    edges = edge_features(h_operator(x, graph), params, mode);
  } else {
    const std::size_t width = params.mlp1.out_features();
    auto top = slice_rows(params.mlp1.weight, 0, f);
    auto bottom = slice_rows(params.mlp1.weight, f, 2 * f);
    auto center_part = matmul(x, sub(top, bottom));
    auto neighbor_part = matmul(x, bottom);
    auto pre = add(gather_rows(neighbor_part, graph.indices),
                   gather_rows(center_part, self_index(n, k)));
    pre = add_bias(reshape(pre, {n * k, width}), params.mlp1.bias);
    auto e1 = normalize_activate(pre, params.mlp1, mode);
    edges = reshape(shared_mlp_forward(e1, params.mlp2, mode), {n, k, params.mlp2.out_features()});
  }
  auto pooled = concat(reduce(edges, 1, ReduceMode::max), reduce(edges, 1, ReduceMode::mean), 1);
  return shared_mlp_forward(pooled, params.mlp_out, mode);
}

template <typename T>
NetVladParams<T> make_netvlad(std::size_t clusters, std::size_t feature_width,
                              std::size_t out_features, std::mt19937_64& rng) {
  if (clusters == 0) throw ContractError("NetVLAD needs at least one cluster");
  std::vector<T> centers(clusters * feature_width), weight(feature_width * clusters);
  for (auto& v : centers) v = static_cast<T>(standard_normal(rng));
  for (auto& v : weight) v = static_cast<T>(standard_normal(rng));
  return NetVladParams<T>{Tensor<T>({clusters, feature_width}, std::move(centers), true),
                          Tensor<T>({feature_width, clusters}, std::move(weight), true),
                          Tensor<T>::zeros({clusters}, true),
                          make_shared_mlp<T>(clusters * feature_width, out_features, true, true, rng)};
}

template <typename T>
VladAggregate<T> netvlad_aggregate(const Tensor<T>& y, const NetVladParams<T>& params) {
  if (y.rank() != 2 || y.dim(1) != params.feature_width()) {
    throw DimensionError("netvlad: expected N x " + std::to_string(params.feature_width()) +
                         " features, got " + shape_str(y.shape()));
  }
  if (y.dim(0) == 0) throw ContractError("netvlad: needs at least one point");
  const std::size_t m = params.clusters(), d = params.feature_width();
  VladAggregate<T> out;
  out.assignment = softmax(add_bias(matmul(y, params.assign_weight), params.assign_bias), 1);
  // sum_i a_im (y_i - c_m) = (A^T Y)_m - (sum_i a_im) c_m
  auto weighted = matmul(transpose(out.assignment), y);
  auto mass = reduce(out.assignment, 0, ReduceMode::sum);
  out.residuals = sub(weighted, scale_rows(params.centers, mass));
  out.intra = l2_normalize(out.residuals, 1, T(kNormEps));
  out.descriptor = l2_normalize(reshape(out.intra, {1, m * d}), 1, T(kNormEps));
  return out;
}

template <typename T>
NetVladOutput<T> netvlad_forward(const Tensor<T>& y, NetVladParams<T>& params, Mode mode) {
  auto stages = netvlad_aggregate(y, params);
  auto reduced = shared_mlp_forward(stages.descriptor, params.reduce, mode, /*freeze=*/true);
  NetVladOutput<T> out;
  out.global_reduced = reshape(reduced, {params.reduce.out_features()});
  out.raw_vlad = reshape(stages.descriptor, {params.clusters(), params.feature_width()});
  out.stages = std::move(stages);
  return out;
}

template <typename T>
Tensor<T> global_descriptors(const Tensor<T>& y, const Segments& segments,
                             EncoderParams<T>& params, Mode mode) {
  if (segments.empty()) throw ContractError("encoder: no blocks");
  std::vector<Tensor<T>> rows;
  rows.reserve(segments.size());
  for (const auto& [begin, end] : segments) {
    auto part = (begin == 0 && end == y.dim(0)) ? y : slice_rows(y, begin, end);
    if (params.global == GlobalKind::netvlad) {
      rows.push_back(netvlad_aggregate(part, *params.netvlad).descriptor);
    } else {
      if (part.dim(0) == 0) throw ContractError("encoder: empty block");
      rows.push_back(reshape(reduce(part, 0, ReduceMode::max), {1, part.dim(1)}));
    }
  }
  auto stacked = rows.size() == 1 ? rows.front() : concat<T>(std::span<const Tensor<T>>(rows), 0);
  if (params.global == GlobalKind::max_pool) return stacked;
  // one descriptor per block: batch statistics need at least two blocks
  return shared_mlp_forward(stacked, params.netvlad->reduce, mode, segments.size() < 2);
}

template <typename T>
Tensor<T> broadcast_segments(const Tensor<T>& per_block, const Segments& segments) {
  if (per_block.rank() != 2 || per_block.dim(0) != segments.size()) {
    throw DimensionError("broadcast_segments: " + shape_str(per_block.shape()) + " for " +
                         std::to_string(segments.size()) + " blocks");
  }
  const std::size_t total = segments.back().second, f = per_block.dim(1);
  std::size_t expected = 0;
  for (const auto& [begin, end] : segments) {
    if (begin != expected || end < begin) {
      throw ContractError("broadcast_segments: segments must tile the rows contiguously");
    }
    expected = end;
  }
  std::vector<T> out(total * f);
  const T* src = per_block.data().data();
  for (std::size_t b = 0; b < segments.size(); ++b) {
    for (auto r = segments[b].first; r < segments[b].second; ++r) {
      std::copy_n(src + b * f, f, out.data() + r * f);
    }
  }
  return record_op<T>("broadcast_rows", Tensor<T>({total, f}, std::move(out)), {&per_block},
                      [per_block, segments, f](std::span<const T> g) {
                        auto gb = per_block.grad_buffer();
                        for (std::size_t b = 0; b < segments.size(); ++b) {
                          T* dst = gb.data() + b * f;
                          for (auto r = segments[b].first; r < segments[b].second; ++r) {
                            const T* row = g.data() + r * f;
                            for (std::size_t j = 0; j < f; ++j) dst[j] += row[j];
                          }
                        }
                      });
}

template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& x, const knn::KnnGraph& graph, const Segments& segments,
                          EncoderParams<T>& params, Mode mode, EdgeRoute route) {
  if (segments.empty() || segments.back().second != x.dim(0)) {
    throw ContractError("encoder: block segments do not cover the " + std::to_string(x.dim(0)) +
                        " input rows");
  }
  auto local = edgeconv_forward(x, graph, params.edgeconv, mode, route);
  auto global = broadcast_segments(global_descriptors(local, segments, params, mode), segments);
  return concat(local, global, 1);
}

template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& x, const knn::KnnGraph& graph, EncoderParams<T>& params,
                          Mode mode, EdgeRoute route) {
  if (x.rank() != 2) throw DimensionError("encoder: expected N x F input, got " + shape_str(x.shape()));
  return encoder_forward(x, graph, Segments{{0, x.dim(0)}}, params, mode, route);
}

#define PS2_INSTANTIATE(T)                                                                        \
  template EdgeConvParams<T> make_edgeconv(std::size_t, std::span<const std::size_t>, std::size_t, \
                                           LocalKind, std::mt19937_64&);                          \
  template Tensor<T> h_operator(const Tensor<T>&, const knn::KnnGraph&);                          \
  template Tensor<T> edge_features(const Tensor<T>&, EdgeConvParams<T>&, Mode);                   \
  template Tensor<T> edgeconv_forward(const Tensor<T>&, const knn::KnnGraph&, EdgeConvParams<T>&, \
                                      Mode, EdgeRoute);                                           \
  template NetVladParams<T> make_netvlad(std::size_t, std::size_t, std::size_t,                   \
                                         std::mt19937_64&);                                       \
  template VladAggregate<T> netvlad_aggregate(const Tensor<T>&, const NetVladParams<T>&);         \
  template NetVladOutput<T> netvlad_forward(const Tensor<T>&, NetVladParams<T>&, Mode);           \
  template Tensor<T> global_descriptors(const Tensor<T>&, const Segments&, EncoderParams<T>&,     \
                                        Mode);                                                    \
  template Tensor<T> broadcast_segments(const Tensor<T>&, const Segments&);                       \
  template Tensor<T> encoder_forward(const Tensor<T>&, const knn::KnnGraph&, const Segments&,     \
                                     EncoderParams<T>&, Mode, EdgeRoute);                         \
  template Tensor<T> encoder_forward(const Tensor<T>&, const knn::KnnGraph&, EncoderParams<T>&,   \
                                     Mode, EdgeRoute);

PS2_INSTANTIATE(float)
PS2_INSTANTIATE(double)
#undef PS2_INSTANTIATE

}  // namespace ps2::nn
