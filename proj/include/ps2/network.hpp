#pragma once

// The segmentation network: stacked encoders over a static neighbor graph,
// multi-level concatenation, a three-layer shared MLP head and a linear
// classifier. Also the loss, the Adam optimizer and the learning-rate schedule.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ps2/knn.hpp"
#include "ps2/layers.hpp"
#include "ps2/tensor.hpp"

namespace ps2::nn {

enum class Variant { full, no_local, no_edgeconv, no_netvlad };

std::string_view variant_name(Variant v);
// Throws ContractError for an unknown name.
Variant parse_variant(std::string_view name);
inline constexpr Variant kAllVariants[] = {Variant::full, Variant::no_local, Variant::no_edgeconv,
                                           Variant::no_netvlad};

struct NetworkConfig {
  std::size_t num_encoders = 4;
  std::size_t k_neighbors = 20;
  std::size_t num_clusters = 16;
  std::size_t f0 = 6;            // features beyond xyz
  std::size_t num_classes = 13;
  std::vector<std::size_t> edge_widths{64, 64};
  std::size_t feature_width = 128;  // EdgeConv output and reduced global width
  std::vector<std::size_t> head_widths{512, 256, 128};
  double dropout_p = 0.3;
  Variant variant = Variant::full;

  std::size_t input_width() const { return 3 + f0; }
  std::size_t encoder_width() const { return 2 * feature_width; }
  std::size_t head_input_width() const { return num_encoders * encoder_width(); }

  // Throws ContractError listing every violated bound.
  void validate() const;

  bool operator==(const NetworkConfig&) const = default;
};

// Ordered key/value snapshot, and the inverse for one key. set_config_value
// returns false for an unknown key and throws DataError for a malformed value.
std::vector<std::pair<std::string, std::string>> config_entries(const NetworkConfig& config);
bool set_config_value(NetworkConfig& config, std::string_view key, std::string_view value);

enum class TensorKind { param, buffer };

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
  TensorKind kind;
};

template <typename T>
struct Model {
  NetworkConfig config;
  std::uint64_t seed = 0;
  std::vector<EncoderParams<T>> encoders;
  std::vector<SharedMlp<T>> head;  // batch norm + ReLU, dropout after the first
  SharedMlp<T> classifier;         // plain affine map to L logits

  Model() = default;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  // Tensors are shared handles; use clone_model for an independent copy.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
};

// Every parameter and batch-norm buffer under a stable dotted name, in a
// fixed order. Each tensor appears exactly once.
template <typename T>
std::vector<NamedTensor<T>> named_tensors(Model<T>& model);
template <typename T>
std::vector<NamedTensor<T>> named_parameters(Model<T>& model);
template <typename T>
std::size_t parameter_count(Model<T>& model);

// Deterministic given (config, seed).
template <typename T>
Model<T> build_model(const NetworkConfig& config, std::uint64_t seed);
template <typename T>
Model<T> clone_model(Model<T>& model);

// Several blocks stacked row-wise with a joint graph over global row indices.
struct BlockLayout {
  knn::KnnGraph graph;
  Segments segments;
};

// Offsets each block's graph by its starting row.
BlockLayout stack_layout(std::span<const knn::KnnGraph> graphs);

// Rows are stacked blocks with `layout`; returns [rows x L] logits. Dropout
// draws from `dropout_rng` in train mode (required then, ignored in eval).
template <typename T>
Tensor<T> forward(Model<T>& model, const Tensor<T>& x, const BlockLayout& layout, Mode mode,
                  std::mt19937_64* dropout_rng = nullptr, EdgeRoute route = EdgeRoute::factored);

// A single block.
template <typename T>
Tensor<T> forward(Model<T>& model, const Tensor<T>& cloud, const knn::KnnGraph& graph, Mode mode,
                  std::mt19937_64* dropout_rng = nullptr, EdgeRoute route = EdgeRoute::factored);

// Mean over the points with mask != 0 (all points when the mask is empty) of
// -log softmax(logits)[label]. Throws DataError naming the first point whose
// label is out of range.
template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, std::span<const std::uint32_t> labels,
                             std::span<const std::uint8_t> mask = {});

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // L2 term added to the gradient
};

template <typename T>
struct OptimizerState {
  AdamConfig hyper;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;  // aligned with named_parameters
  std::vector<Tensor<T>> v;
};

template <typename T>
OptimizerState<T> make_optimizer(Model<T>& model, const AdamConfig& hyper);

// One Adam update with the current hyper.learning_rate. Every parameter must
// hold a gradient (ContractError naming the first that does not). Gradients
// are cleared afterwards.
template <typename T>
void adam_step(Model<T>& model, OptimizerState<T>& state);

// initial * 0.5^floor(epoch / step_epochs).
double lr_at_epoch(double initial, std::size_t epoch, std::size_t step_epochs = 100);

}  // namespace ps2::nn
