#include <gtest/gtest.h>

#include <sstream>

#include "ps2/checkpoint.hpp"
#include "ps2/error.hpp"
#include "ps2/train.hpp"
#include "scene_fixture.hpp"

using namespace ps2;
using namespace ps2::train;
using ps2::testing::small_config;
using ps2::testing::tiny_set;

namespace {

std::string bytes_of(const CheckpointFile& f) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(f, out);
  return out.str();
}

template <typename T>
std::string trained_bytes(const data::BlockSet& set, const RunConfig& c, std::uint64_t seed, std::size_t epochs) {
  auto model = nn::build_model<T>(c.network, seed);
  nn::AdamConfig hyper;
  hyper.learning_rate = c.train.learning_rate;
  auto opt = nn::make_optimizer(model, hyper);
  TrainParams p;
  p.epochs = epochs;
  p.batch_size = 2;
  p.seed = seed;
  p.options = c.train;
  train::train(model, opt, set, p);
  return bytes_of(make_checkpoint(model, opt, {seed, epochs, c.train}));
}

}  // namespace

TEST(RunConfig, ParsesNetworkAndTrainingKeys) {
  std::stringstream in(
      "# comment\nnum_encoders = 3\nk_neighbors=12\n\nedge_widths = 32,48\nlearning_rate = 0.005\n"
      "precision = double\nvariant = no_netvlad  # trailing\n");
  auto c = parse_run_config(in);
  EXPECT_EQ(c.network.num_encoders, 3u);
  EXPECT_EQ(c.network.k_neighbors, 12u);
  EXPECT_EQ(c.network.edge_widths, (std::vector<std::size_t>{32, 48}));
  EXPECT_EQ(c.network.variant, nn::Variant::no_netvlad);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.005);
  EXPECT_EQ(c.train.precision, Precision::f64);
}

TEST(RunConfig, UnknownKeyIsAnErrorWithLine) {
  std::stringstream in("num_encoders = 2\nmomentum = 0.9\n");
  try {
    parse_run_config(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::stringstream bad("k_neighbors = many\n");
  EXPECT_THROW(parse_run_config(bad), ParseError);
  std::stringstream no_eq("k_neighbors 4\n");
  EXPECT_THROW(parse_run_config(no_eq), ParseError);
}

TEST(RunConfig, EntriesRoundTrip) {
  RunConfig c;
  c.network.num_clusters = 7;
  c.train.weight_decay = 3e-4;
  c.train.sampling.p2_sd = 12.5;
  std::stringstream text;
  write_run_config(c, text);
  auto back = parse_run_config(text);
  EXPECT_EQ(back.network, c.network);
  EXPECT_EQ(run_config_entries(back), run_config_entries(c));
}

TEST(RunConfig, ShippedFiles) {
  const std::filesystem::path dir = PS2_CONFIG_DIR;
  EXPECT_EQ(read_run_config(dir / "default.cfg"), RunConfig{});
  const auto bench = read_run_config(dir / "bench.cfg");
  EXPECT_EQ(bench.network, nn::NetworkConfig{});
  EXPECT_EQ(bench.train.sampling.p1, 256u);
}

TEST(MakeBatch, StacksBlocksWithHomeMask) {
  auto set = tiny_set();
  ASSERT_GE(set.blocks.size(), 2u);
  auto a = data::sample_block(set.blocks[0], set.setup, 1, {.p1 = 32});
  auto b = data::sample_block(set.blocks[1], set.setup, 2, {.p1 = 32});
  b.home_count = 10;
  std::vector<const data::Block*> ptrs{&a, &b};
  auto batch = make_batch<double>(ptrs, 5);
  EXPECT_EQ(batch.x.shape(), (Shape{64, 9}));
  EXPECT_EQ(batch.layout.segments.size(), 2u);
  EXPECT_EQ(batch.layout.segments[1], (std::pair<std::size_t, std::size_t>{32, 64}));
  EXPECT_EQ(batch.labels.size(), 64u);
  std::size_t home = 0;
  for (auto m : batch.mask) home += m;
  EXPECT_EQ(home, 32u + 10u);
  // neighbors of the second block stay inside it
  for (std::size_t i = 32; i < 64; ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_GE(batch.layout.graph.indices(i, j), 32u);
  }
}

TEST(Checkpoint, WriteReadIsByteIdentical) {
  auto set = tiny_set();
  auto c = small_config(set);
  auto model = nn::build_model<double>(c.network, 9);
  auto opt = nn::make_optimizer(model, {});
  auto file = make_checkpoint(model, opt, {9, 0, c.train});
  const auto bytes = bytes_of(file);
  std::istringstream in(bytes, std::ios::binary);
  auto back = read_checkpoint(in);
  EXPECT_EQ(back, file);
  EXPECT_EQ(bytes_of(back), bytes);
  EXPECT_EQ(checkpoint_config(back).network, c.network);
}

TEST(Checkpoint, RestoreReproducesModelAndOptimizer) {
  auto set = tiny_set();
  auto c = small_config(set);
  auto model = nn::build_model<double>(c.network, 4);
  auto opt = nn::make_optimizer(model, {});
  TrainParams p;
  p.epochs = 1;
  p.batch_size = 2;
  p.seed = 4;
  p.options = c.train;
  train::train(model, opt, set, p);
  auto file = make_checkpoint(model, opt, {4, 1, c.train});
  auto restored = restore_model<double>(file);
  auto ropt = restore_optimizer(file, restored);
  EXPECT_EQ(ropt.step, opt.step);
  EXPECT_EQ(bytes_of(make_checkpoint(restored, ropt, {4, 1, c.train})), bytes_of(file));

  auto batch_block = data::sample_block(set.blocks[0], set.setup, 5, c.train.sampling);
  std::vector<const data::Block*> ptrs{&batch_block};
  auto batch = make_batch<double>(ptrs, c.network.k_neighbors);
  auto z1 = nn::forward(model, batch.x, batch.layout, nn::Mode::eval);
  auto z2 = nn::forward(restored, batch.x, batch.layout, nn::Mode::eval);
  EXPECT_TRUE(std::ranges::equal(z1.data(), z2.data()));
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::istringstream junk("not a checkpoint at all");
  EXPECT_THROW(read_checkpoint(junk), DataError);
  auto set = tiny_set();
  auto c = small_config(set);
  auto model = nn::build_model<double>(c.network, 1);
  auto opt = nn::make_optimizer(model, {});
  auto bytes = bytes_of(make_checkpoint(model, opt, {1, 0, c.train}));
  std::istringstream truncated(bytes.substr(0, bytes.size() - 5), std::ios::binary);
  EXPECT_THROW(read_checkpoint(truncated), DataError);
  std::istringstream trailing(bytes + "x", std::ios::binary);
  EXPECT_THROW(read_checkpoint(trailing), DataError);
}

TEST(Train, SameSeedGivesIdenticalCheckpoints) {
  auto set = tiny_set();
  auto c = small_config(set);
  c.network.dropout_p = 0.3;
  EXPECT_EQ(trained_bytes<double>(set, c, 21, 2), trained_bytes<double>(set, c, 21, 2));
  EXPECT_EQ(trained_bytes<float>(set, c, 21, 1), trained_bytes<float>(set, c, 21, 1));
  EXPECT_NE(trained_bytes<double>(set, c, 21, 1), trained_bytes<double>(set, c, 22, 1));
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
  auto set = tiny_set();
  auto c = small_config(set);
  auto model = nn::build_model<double>(c.network, 2);
  auto opt = nn::make_optimizer(model, {});
  const auto before = bytes_of(make_checkpoint(model, opt, {2, 0, c.train}));
  auto report = train::train(model, set, 0, 2, 2, c.train);
  EXPECT_EQ(report.steps, 0u);
  EXPECT_EQ(bytes_of(make_checkpoint(model, opt, {2, 0, c.train})), before);
}

TEST(Train, RejectsBadInputs) {
  auto set = tiny_set();
  auto c = small_config(set);
  auto model = nn::build_model<double>(c.network, 2);
  data::BlockSet empty = set;
  empty.blocks.clear();
  empty.entries.clear();
  EXPECT_THROW(train::train(model, empty, 1, 2, 0, c.train), ContractError);
  EXPECT_THROW(train::train(model, set, 1, 0, 0, c.train), ContractError);
  auto other = c.network;
  other.num_classes = set.num_classes + 1;
  auto mismatched = nn::build_model<double>(other, 2);
  EXPECT_THROW(train::train(mismatched, set, 1, 2, 0, c.train), ContractError);
}

TEST(Train, LossDecreasesAndScheduleIsLogged) {
  auto set = tiny_set();
  auto c = small_config(set);
  c.network.dropout_p = 0.0;
  c.train.learning_rate = 5e-3;
  c.train.lr_step_epochs = 4;
  auto model = nn::build_model<double>(c.network, 8);
  auto report = train::train(model, set, 8, 2, 8, c.train);
  ASSERT_EQ(report.epochs.size(), 8u);
  EXPECT_EQ(report.epochs[3].learning_rate, 5e-3);
  EXPECT_EQ(report.epochs[4].learning_rate, 2.5e-3);
  EXPECT_LT(report.epochs.back().loss, report.epochs.front().loss);
  EXPECT_GT(report.epochs.back().accuracy, 0.6);
}
