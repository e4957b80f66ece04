#pragma once

// Neural building blocks: shared MLPs with batch normalization, the H
// operator, EdgeConv, NetVLAD and the encoder that stacks them.
//
// Everything operates on row-major point matrices. Several blocks can be
// processed together by concatenating their rows; neighbor graphs then carry
// global row indices and NetVLAD aggregates each block's row segment
// separately.

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "ps2/knn.hpp"
#include "ps2/tensor.hpp"

namespace ps2::nn {

enum class Mode { train, eval };

template <typename T>
struct BatchNorm {
  Tensor<T> gamma;         // [C], trainable
  Tensor<T> beta;          // [C], trainable
  Tensor<T> running_mean;  // [C]
  Tensor<T> running_var;   // [C]
  T momentum = T(0.1);
  T eps = T(1e-5);
  // Normalize with running statistics even in train mode, without updating them.
  bool frozen_stats = false;

  explicit BatchNorm(std::size_t channels);
};

// x is [B x C] (or any rank with channels last; leading axes are rows).
// Train mode normalizes with the biased batch variance and folds the batch
// mean and unbiased variance into the running statistics. Fewer than two rows
// in train mode need frozen statistics (`freeze` or bn.frozen_stats).
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNorm<T>& bn, Mode mode, bool freeze = false);

template <typename T>
struct SharedMlp {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]
  std::optional<BatchNorm<T>> bn;
  bool activation = true;

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

// Weights ~ U(-1/sqrt(in), 1/sqrt(in)), bias zero.
template <typename T>
SharedMlp<T> make_shared_mlp(std::size_t in, std::size_t out, bool batch_norm, bool activation,
                             std::mt19937_64& rng);

// x[..., in] -> x W + b, applied identically to every row.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const SharedMlp<T>& mlp);
// Batch norm (when present) then ReLU (when enabled) on a pre-activation.
template <typename T>
Tensor<T> normalize_activate(const Tensor<T>& pre, SharedMlp<T>& mlp, Mode mode, bool freeze = false);
template <typename T>
Tensor<T> shared_mlp_forward(const Tensor<T>& x, SharedMlp<T>& mlp, Mode mode, bool freeze = false);

// --- EdgeConv ---------------------------------------------------------------

enum class LocalKind {
  edgeconv,       // edge features [x_i, x_j - x_i], max + mean pooled
  pointwise,      // per-point MLPs only, no neighbor access
  pointwise_max,  // per-point MLPs, then max over the K neighbors
};

template <typename T>
struct EdgeConvParams {
  LocalKind kind = LocalKind::edgeconv;
  SharedMlp<T> mlp1;     // edgeconv: 2F -> 64, otherwise F -> 64
  SharedMlp<T> mlp2;     // 64 -> 64
  SharedMlp<T> mlp_out;  // edgeconv: 128 -> 128, otherwise 64 -> 128
};

template <typename T>
EdgeConvParams<T> make_edgeconv(std::size_t in_features, std::span<const std::size_t> edge_widths,
                                std::size_t out_features, LocalKind kind, std::mt19937_64& rng);

// How EdgeConv evaluates its first shared MLP. `explicit_h` materializes the
// N x K x 2F tensor; `factored` uses [x_i, x_j - x_i] W = x_i (W_top - W_bottom)
// + x_j W_bottom and never builds it. Both give the same values.
enum class EdgeRoute { explicit_h, factored };

// H[i][j] = [x_i, x_{graph(i, j)} - x_i], shape N x K x 2F.
template <typename T>
Tensor<T> h_operator(const Tensor<T>& x, const knn::KnnGraph& graph);

// relu(mlp2(relu(mlp1(H)))) over all N*K edges -> N x K x 64.
template <typename T>
Tensor<T> edge_features(const Tensor<T>& h, EdgeConvParams<T>& params, Mode mode);

// N x F -> N x 128.
template <typename T>
Tensor<T> edgeconv_forward(const Tensor<T>& x, const knn::KnnGraph& graph,
                           EdgeConvParams<T>& params, Mode mode,
                           EdgeRoute route = EdgeRoute::factored);

// --- NetVLAD ----------------------------------------------------------------

template <typename T>
struct NetVladParams {
  Tensor<T> centers;        // [M x D]
  Tensor<T> assign_weight;  // [D x M]
  Tensor<T> assign_bias;    // [M]
  SharedMlp<T> reduce;      // (M*D) -> D_out

  std::size_t clusters() const { return centers.dim(0); }
  std::size_t feature_width() const { return centers.dim(1); }
};

template <typename T>
NetVladParams<T> make_netvlad(std::size_t clusters, std::size_t feature_width,
                              std::size_t out_features, std::mt19937_64& rng);

// Intermediate NetVLAD stages for one block.
template <typename T>
struct VladAggregate {
  Tensor<T> assignment;  // [N x M], rows sum to one
  Tensor<T> residuals;   // [M x D], v_m = sum_i a_im (y_i - c_m)
  Tensor<T> intra;       // [M x D], each row L2-normalized
  Tensor<T> descriptor;  // [1 x M*D], flattened and L2-normalized
};

template <typename T>
VladAggregate<T> netvlad_aggregate(const Tensor<T>& y, const NetVladParams<T>& params);

template <typename T>
struct NetVladOutput {
  Tensor<T> global_reduced;  // [D_out]
  Tensor<T> raw_vlad;        // [M x D], normalized descriptor before reduction
  VladAggregate<T> stages;
};

// Single block. The reduction MLP's batch norm sees one row, so in train mode
// it normalizes with its running statistics.
template <typename T>
NetVladOutput<T> netvlad_forward(const Tensor<T>& y, NetVladParams<T>& params, Mode mode);

// --- Encoder ----------------------------------------------------------------

enum class GlobalKind { netvlad, max_pool };

template <typename T>
struct EncoderParams {
  EdgeConvParams<T> edgeconv;
  GlobalKind global = GlobalKind::netvlad;
  std::optional<NetVladParams<T>> netvlad;  // absent for max_pool

  std::size_t output_width() const { return 2 * edgeconv.mlp_out.out_features(); }
};

// Row ranges [first, second) of the blocks stacked in a point matrix.
using Segments = std::vector<std::pair<std::size_t, std::size_t>>;

// Per-block global descriptors, one row per segment: [B x D_out].
template <typename T>
Tensor<T> global_descriptors(const Tensor<T>& y, const Segments& segments,
                             EncoderParams<T>& params, Mode mode);

// Copies row b of `per_block` to every point row of segment b.
template <typename T>
Tensor<T> broadcast_segments(const Tensor<T>& per_block, const Segments& segments);

// Stacked blocks: x [sum N x F], graph over global row indices -> [sum N x 256].
template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& x, const knn::KnnGraph& graph, const Segments& segments,
                          EncoderParams<T>& params, Mode mode,
                          EdgeRoute route = EdgeRoute::factored);

// One block: N x F -> N x 256; columns 128.. hold the broadcast global descriptor.
template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& x, const knn::KnnGraph& graph, EncoderParams<T>& params,
                          Mode mode, EdgeRoute route = EdgeRoute::factored);

// graph(i, j) = i for every j.
IndexMatrix self_index(std::size_t rows, std::size_t k);

}  // namespace ps2::nn
