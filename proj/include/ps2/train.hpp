#pragma once

// Run configuration files and the mini-batch training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ps2/dataio.hpp"
#include "ps2/network.hpp"

namespace ps2::train {

enum class Precision { f32, f64 };

struct TrainOptions {
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  std::size_t lr_step_epochs = 100;
  std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint
  std::size_t epochs = 150;          // used where no command-line value is given
  std::size_t batch_size = 6;
  Precision precision = Precision::f32;
  data::SampleSizes sampling;

  bool operator==(const TrainOptions&) const = default;
};

// Everything a config file can set: the network fields plus training options.
struct RunConfig {
  nn::NetworkConfig network;
  TrainOptions train;

  bool operator==(const RunConfig&) const = default;
};

// Flat `key = value` lines ('#' comments, blank lines ignored). Unknown keys
// and malformed values raise ParseError with the line number.
RunConfig parse_run_config(std::istream& in);
RunConfig read_run_config(const std::filesystem::path& path);
std::vector<std::pair<std::string, std::string>> run_config_entries(const RunConfig& config);
void write_run_config(const RunConfig& config, std::ostream& out);

// Network config with f0 and num_classes taken from the data.
nn::NetworkConfig bind_to_data(nn::NetworkConfig config, const data::BlockSet& set);

// Network input rows and per-block neighbor graphs for a list of blocks.
template <typename T>
struct BatchInput {
  Tensor<T> x;
  nn::BlockLayout layout;
  std::vector<std::uint32_t> labels;
  std::vector<std::uint8_t> mask;  // 1 for home points
};

template <typename T>
BatchInput<T> make_batch(std::span<const data::Block* const> blocks, std::size_t k_neighbors);

struct EpochLog {
  std::size_t epoch = 0;
  double learning_rate = 0;
  double loss = 0;       // mean over steps
  double accuracy = 0;   // over the home points seen this epoch
  double seconds = 0;

  bool operator==(const EpochLog&) const = default;
};

struct TrainingReport {
  std::vector<EpochLog> epochs;
  std::uint64_t steps = 0;
  double seconds = 0;
};

struct TrainParams {
  std::size_t epochs = 1;
  std::size_t batch_size = 6;
  std::uint64_t seed = 0;
  TrainOptions options;
  // Called after every epoch with its index (0-based) and log entry.
  std::function<void(std::size_t, const EpochLog&)> on_epoch;
};

// Shuffled mini-batch training. Each epoch draws a fresh point sample per
// block (seeded from the block's manifest seed and the epoch), stacks
// batch_size blocks into one forward pass and takes one Adam step. Fully
// determined by (model, data, params). Throws ContractError on an empty set.
template <typename T>
TrainingReport train(nn::Model<T>& model, nn::OptimizerState<T>& optimizer, const data::BlockSet& set,
                     const TrainParams& params);

// Convenience form with a fresh optimizer.
template <typename T>
TrainingReport train(nn::Model<T>& model, const data::BlockSet& set, std::size_t epochs, std::size_t batch_size,
                     std::uint64_t seed, const TrainOptions& options = {});

}  // namespace ps2::train
