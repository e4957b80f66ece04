#include <algorithm>
#include <chrono>
#include <numeric>

#include "ps2/error.hpp"
#include "ps2/random.hpp"
#include "ps2/train.hpp"

namespace ps2::train {
namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

template <typename T>
BatchInput<T> make_batch(std::span<const data::Block* const> blocks, std::size_t k_neighbors) {
  if (blocks.empty()) throw ContractError("make_batch: no blocks");
  const std::size_t f0 = blocks.front()->points.f0;
  std::size_t rows = 0;
  for (const auto* b : blocks) {
    if (b->points.f0 != f0) throw DataError("make_batch: blocks disagree on feature width");
    rows += b->points.size();
  }
  BatchInput<T> out;
  std::vector<T> x;
  x.reserve(rows * (3 + f0));
  std::vector<knn::KnnGraph> graphs;
  for (const auto* b : blocks) {
    const auto& pc = b->points;
    for (double v : data::input_rows(pc)) x.push_back(static_cast<T>(v));
    graphs.push_back(knn::build_graph(pc.xyz, k_neighbors));
    if (pc.has_labels()) out.labels.insert(out.labels.end(), pc.labels.begin(), pc.labels.end());
    for (std::size_t i = 0; i < pc.size(); ++i) out.mask.push_back(i < b->home_count ? 1 : 0);
  }
  out.x = Tensor<T>({rows, 3 + f0}, std::move(x));
  out.layout = nn::stack_layout(graphs);
  return out;
}

template <typename T>
TrainingReport train(nn::Model<T>& model, nn::OptimizerState<T>& optimizer, const data::BlockSet& set,
                     const TrainParams& params) {
  if (set.blocks.empty()) throw ContractError("train: empty dataset");
  if (params.batch_size == 0) throw ContractError("train: batch size must be at least 1");
  if (set.f0 != model.config.f0 || set.num_classes != model.config.num_classes) {
    throw ContractError("train: data has f0=" + std::to_string(set.f0) + ", L=" + std::to_string(set.num_classes) +
                        " but the model expects f0=" + std::to_string(model.config.f0) +
                        ", L=" + std::to_string(model.config.num_classes));
  }
  for (const auto& b : set.blocks) {
    if (!b.points.has_labels()) throw DataError("train: unlabeled block in the training set");
  }
  const auto start = std::chrono::steady_clock::now();
  TrainingReport report;
  const auto& opt = params.options;
  optimizer.hyper.weight_decay = opt.weight_decay;
  std::vector<std::size_t> order(set.blocks.size());

  for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    optimizer.hyper.learning_rate = nn::lr_at_epoch(opt.learning_rate, epoch, opt.lr_step_epochs);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 order_rng(mix_seed(params.seed, 2 * epoch));
    shuffle_range(order.begin(), order.end(), order_rng);

    double loss_sum = 0;
    std::size_t batches = 0, correct = 0, seen = 0;
    for (std::size_t first = 0; first < order.size(); first += params.batch_size) {
      const std::size_t last = std::min(order.size(), first + params.batch_size);
      std::vector<data::Block> samples;
      samples.reserve(last - first);
      for (std::size_t i = first; i < last; ++i) {
        const auto idx = order[i];
        samples.push_back(data::sample_block(set.blocks[idx], set.setup, mix_seed(set.entries[idx].seed, epoch),
                                             opt.sampling));
      }
      std::vector<const data::Block*> ptrs;
      for (const auto& s : samples) ptrs.push_back(&s);
      auto batch = make_batch<T>(ptrs, model.config.k_neighbors);

      std::mt19937_64 dropout_rng(mix_seed(params.seed, 2 * report.steps + 1));
      {
        Tape<T> tape;
        auto logits = nn::forward(model, batch.x, batch.layout, nn::Mode::train, &dropout_rng);
        auto loss = nn::cross_entropy_loss(logits, batch.labels, batch.mask);
        loss_sum += static_cast<double>(loss.item());
        const std::size_t l = logits.dim(1);
        const T* z = logits.data().data();
        for (std::size_t r = 0; r < batch.labels.size(); ++r) {
          if (!batch.mask[r]) continue;
          const auto pred = static_cast<std::uint32_t>(std::max_element(z + r * l, z + (r + 1) * l) - (z + r * l));
          correct += pred == batch.labels[r];
          ++seen;
        }
        tape.backward(loss);
      }
      nn::adam_step(model, optimizer);
      ++report.steps;
      ++batches;
    }
    EpochLog log;
    log.epoch = epoch;
    log.learning_rate = optimizer.hyper.learning_rate;
    log.loss = loss_sum / static_cast<double>(batches);
    log.accuracy = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    log.seconds = seconds_since(epoch_start);
    report.epochs.push_back(log);
    if (params.on_epoch) params.on_epoch(epoch, log);
  }
  report.seconds = seconds_since(start);
  return report;
}

template <typename T>
TrainingReport train(nn::Model<T>& model, const data::BlockSet& set, std::size_t epochs, std::size_t batch_size,
                     std::uint64_t seed, const TrainOptions& options) {
  nn::AdamConfig hyper;
  hyper.learning_rate = options.learning_rate;
  hyper.weight_decay = options.weight_decay;
  auto optimizer = nn::make_optimizer(model, hyper);
  TrainParams p;
  p.epochs = epochs;
  p.batch_size = batch_size;
  p.seed = seed;
  p.options = options;
  return train(model, optimizer, set, p);
}

#define PS2_INSTANTIATE(T)                                                                                 \
  template BatchInput<T> make_batch(std::span<const data::Block* const>, std::size_t);                    \
  template TrainingReport train(nn::Model<T>&, nn::OptimizerState<T>&, const data::BlockSet&,             \
                                const TrainParams&);                                                       \
  template TrainingReport train(nn::Model<T>&, const data::BlockSet&, std::size_t, std::size_t,            \
                                std::uint64_t, const TrainOptions&);

PS2_INSTANTIATE(float)
PS2_INSTANTIATE(double)
#undef PS2_INSTANTIATE

}  // namespace ps2::train
