#include <algorithm>
#include <numeric>

#include "ps2/error.hpp"
#include "ps2/eval.hpp"
#include "ps2/random.hpp"

namespace ps2::eval {
namespace {

// Rows per forward pass during inference; bounds the edge-feature memory.
constexpr std::size_t kRowsPerPass = 8192;

template <typename T>
void label_chunks(nn::Model<T>& model, const data::Block& block, const std::vector<std::vector<std::uint32_t>>& chunks,
                  const std::vector<std::size_t>& real, std::vector<std::uint32_t>& pred) {
  std::vector<data::Block> parts;
  for (const auto& ids : chunks) {
    data::Block b;
    b.setup = block.setup;
    b.points = block.points.select(ids);
    b.points.labels.clear();
    b.points.num_classes = 0;
    b.points.class_names.clear();
    b.home_count = ids.size();
    parts.push_back(std::move(b));
  }
  std::vector<const data::Block*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  auto batch = train::make_batch<T>(ptrs, model.config.k_neighbors);
  auto logits = nn::forward(model, batch.x, batch.layout, nn::Mode::eval);
  const std::size_t l = logits.dim(1);
  const T* z = logits.data().data();
  std::size_t row = 0;
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    for (std::size_t r = 0; r < chunks[c].size(); ++r, ++row) {
      if (r >= real[c]) continue;
      const T* zr = z + row * l;
      pred[chunks[c][r]] = static_cast<std::uint32_t>(std::max_element(zr, zr + l) - zr);
    }
  }
}

}  // namespace

data::Setup setup_for_features(std::size_t f0) {
  switch (f0) {
    case 6: return data::Setup::p1;
    case 3: return data::Setup::p2;
    case 0: return data::Setup::p3;
    default: throw ContractError("no setup produces " + std::to_string(f0) + " feature channels");
  }
}

template <typename T>
std::vector<std::uint32_t> predict_block(nn::Model<T>& model, const data::Block& block, data::Setup setup,
                                         std::uint64_t seed, const data::SampleSizes& sizes) {
  const std::size_t n = block.points.size();
  if (n == 0) throw ContractError("predict_block: empty block");
  if (block.points.f0 != model.config.f0) {
    throw ContractError("predict_block: block has f0=" + std::to_string(block.points.f0) + ", model expects " +
                        std::to_string(model.config.f0));
  }
  const std::size_t chunk = data::sample_count(block, setup, seed, sizes);
  if (chunk < model.config.k_neighbors) {
    throw ContractError("predict_block: sample size " + std::to_string(chunk) + " is below k=" +
                        std::to_string(model.config.k_neighbors));
  }
  std::mt19937_64 rng(mix_seed(seed, 3));
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  shuffle_range(order.begin(), order.end(), rng);

  std::vector<std::uint32_t> pred(n, 0);
  const std::size_t per_pass = std::max<std::size_t>(1, kRowsPerPass / chunk);
  std::vector<std::vector<std::uint32_t>> chunks;
  std::vector<std::size_t> real;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t stop = std::min(n, start + chunk);
    std::vector<std::uint32_t> ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
    real.push_back(ids.size());
    while (ids.size() < chunk) ids.push_back(static_cast<std::uint32_t>(uniform_index(rng, n)));
    chunks.push_back(std::move(ids));
    if (chunks.size() == per_pass) {
      label_chunks(model, block, chunks, real, pred);
      chunks.clear();
      real.clear();
    }
  }
  if (!chunks.empty()) label_chunks(model, block, chunks, real, pred);
  return pred;
}

template <typename T>
std::vector<std::uint32_t> predict_cloud(nn::Model<T>& model, const data::PointCloud& room, data::Setup setup,
                                         std::uint64_t seed, const data::SampleSizes& sizes) {
  const auto blocks = data::partition(room, setup);
  std::vector<std::uint32_t> pred(room.size(), 0);
  std::vector<std::uint8_t> seen(room.size(), 0);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& block = blocks[b];
    const auto p = predict_block(model, block, setup, mix_seed(seed, b), sizes);
    for (std::size_t i = 0; i < block.home_count; ++i) {
      pred[block.source[i]] = p[i];
      seen[block.source[i]] = 1;
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw ContractError("predict_cloud: partition left points without a home block");
  }
  return pred;
}

template <typename T>
Metrics evaluate(nn::Model<T>& model, const data::BlockSet& set, std::uint64_t seed, const data::SampleSizes& sizes) {
  if (set.blocks.empty()) throw ContractError("evaluate: empty dataset");
  Metrics m(set.num_classes);
  for (std::size_t i = 0; i < set.blocks.size(); ++i) {
    const auto& block = set.blocks[i];
    if (!block.points.has_labels()) throw DataError("evaluate: block " + std::to_string(i) + " has no labels");
    const auto block_seed = mix_seed(set.entries.size() > i ? set.entries[i].seed : i, seed);
    const auto p = predict_block(model, block, set.setup, block_seed, sizes);
    const std::size_t home = block.home_count;
    accumulate(m, std::span(p).first(home), std::span(block.points.labels).first(home));
  }
  return m;
}

#define PS2_INSTANTIATE(T)                                                                                  \
  template std::vector<std::uint32_t> predict_block(nn::Model<T>&, const data::Block&, data::Setup,        \
                                                    std::uint64_t, const data::SampleSizes&);              \
  template std::vector<std::uint32_t> predict_cloud(nn::Model<T>&, const data::PointCloud&, data::Setup,   \
                                                    std::uint64_t, const data::SampleSizes&);              \
  template Metrics evaluate(nn::Model<T>&, const data::BlockSet&, std::uint64_t, const data::SampleSizes&);

PS2_INSTANTIATE(float)
PS2_INSTANTIATE(double)
#undef PS2_INSTANTIATE

}  // namespace ps2::eval
