#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ps2/network.hpp"
#include "test_support.hpp"

namespace ps2::nn {
namespace {

using testing::random_tensor;

NetworkConfig small_config(Variant variant = Variant::full) {
  NetworkConfig c;
  c.num_encoders = 2;
  c.k_neighbors = 4;
  c.num_clusters = 3;
  c.f0 = 2;
  c.num_classes = 4;
  c.edge_widths = {8, 8};
  c.feature_width = 6;
  c.head_widths = {16, 8, 8};
  c.variant = variant;
  return c;
}

knn::KnnGraph graph_for(const Tensor<double>& x, std::size_t k) {
  return knn::build_graph(knn::xyz_columns(x.data(), x.dim(1)), k);
}

std::vector<double> flatten(Model<double>& m) {
  std::vector<double> out;
  for (const auto& t : named_tensors(m)) out.insert(out.end(), t.tensor->data().begin(), t.tensor->data().end());
  return out;
}

TEST(NetworkConfig, DefaultSnapshot) {
  NetworkConfig c;
  EXPECT_EQ(c.num_encoders, 4u);
  EXPECT_EQ(c.k_neighbors, 20u);
  EXPECT_EQ(c.num_clusters, 16u);
  EXPECT_EQ(c.edge_widths, (std::vector<std::size_t>{64, 64}));
  EXPECT_EQ(c.feature_width, 128u);
  EXPECT_EQ(c.head_widths, (std::vector<std::size_t>{512, 256, 128}));
  EXPECT_DOUBLE_EQ(c.dropout_p, 0.3);
  EXPECT_EQ(c.variant, Variant::full);
  EXPECT_EQ(c.head_input_width(), 1024u);
  c.num_encoders = 1;
  EXPECT_EQ(c.head_input_width(), 256u);
}

TEST(NetworkConfig, ValidateListsEveryViolation) {
  NetworkConfig c;
  c.num_encoders = 0;
  c.num_classes = 1;
  c.dropout_p = 1.0;
  try {
    c.validate();
    FAIL();
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("num_encoders"), std::string::npos);
    EXPECT_NE(msg.find("num_classes"), std::string::npos);
    EXPECT_NE(msg.find("dropout_p"), std::string::npos);
    EXPECT_EQ(msg.find("k_neighbors"), std::string::npos);
  }
  EXPECT_THROW(build_model<double>(c, 1), ContractError);
}

TEST(NetworkConfig, EntriesRoundTrip) {
  auto c = small_config(Variant::no_edgeconv);
  c.dropout_p = 0.125;
  NetworkConfig back;
  for (const auto& [k, v] : config_entries(c)) EXPECT_TRUE(set_config_value(back, k, v)) << k;
  EXPECT_EQ(back, c);
  EXPECT_FALSE(set_config_value(back, "num_layers", "3"));
  EXPECT_THROW(set_config_value(back, "k_neighbors", "twenty"), DataError);
  EXPECT_THROW(set_config_value(back, "k_neighbors", "-3"), DataError);
  EXPECT_THROW(set_config_value(back, "variant", "tiny"), DataError);
  EXPECT_THROW(set_config_value(back, "head_widths", "4,,2"), DataError);
}

TEST(BuildModel, DefaultWidths) {
  NetworkConfig c;
  c.f0 = 3;
  c.num_classes = 5;
  auto m = build_model<float>(c, 7);
  ASSERT_EQ(m.encoders.size(), 4u);
  EXPECT_EQ(m.encoders[0].edgeconv.mlp1.in_features(), 12u);
  EXPECT_EQ(m.encoders[1].edgeconv.mlp1.in_features(), 512u);
  EXPECT_EQ(m.encoders[0].netvlad->centers.shape(), (Shape{16, 128}));
  EXPECT_EQ(m.encoders[0].netvlad->reduce.in_features(), 2048u);
  EXPECT_EQ(m.head[0].in_features(), 1024u);
  EXPECT_EQ(m.classifier.out_features(), 5u);
  EXPECT_FALSE(m.classifier.bn.has_value());
}

TEST(BuildModel, SameSeedSameRegistry) {
  auto a = build_model<double>(small_config(), 11);
  auto b = build_model<double>(small_config(), 11);
  auto c = build_model<double>(small_config(), 12);
  EXPECT_EQ(flatten(a), flatten(b));
  EXPECT_NE(flatten(a), flatten(c));
}

TEST(BuildModel, RegistryNamesAreUnique) {
  auto m = build_model<double>(small_config(), 1);
  auto all = named_tensors(m);
  std::vector<std::string> names;
  std::vector<const void*> nodes;
  for (const auto& t : all) {
    names.push_back(t.name);
    nodes.push_back(&t.tensor->node());
  }
  std::sort(names.begin(), names.end());
  std::sort(nodes.begin(), nodes.end());
  EXPECT_EQ(std::adjacent_find(names.begin(), names.end()), names.end());
  EXPECT_EQ(std::adjacent_find(nodes.begin(), nodes.end()), nodes.end());
  EXPECT_EQ(all.front().name, "encoder0.local.mlp1.weight");
  EXPECT_EQ(all.back().name, "classifier.bias");
}

TEST(BuildModel, VariantParameterCounts) {
  auto full = build_model<double>(small_config(), 3);
  auto no_vlad = build_model<double>(small_config(Variant::no_netvlad), 3);
  auto no_local = build_model<double>(small_config(Variant::no_local), 3);
  EXPECT_LT(parameter_count(no_vlad), parameter_count(full));
  EXPECT_LT(parameter_count(no_local), parameter_count(full));
  EXPECT_FALSE(no_vlad.encoders[0].netvlad.has_value());
  EXPECT_EQ(no_local.encoders[0].edgeconv.kind, LocalKind::pointwise);
}

TEST(BuildModel, CloneIsIndependent) {
  auto a = build_model<double>(small_config(), 5);
  a.head[0].weight.mutable_data()[0] = 42.0;
  auto b = clone_model(a);
  EXPECT_EQ(flatten(a), flatten(b));
  b.head[0].weight.mutable_data()[0] = 1.0;
  EXPECT_EQ(a.head[0].weight.data()[0], 42.0);
}

TEST(Forward, ShapeAndEvalDeterminism) {
  std::mt19937_64 rng(1);
  auto m = build_model<double>(small_config(), 1);
  for (std::size_t n : {5u, 17u}) {
    auto x = random_tensor({n, 5}, rng);
    auto g = graph_for(x, 4);
    auto a = forward(m, x, g, Mode::eval);
    auto b = forward(m, x, g, Mode::eval);
    EXPECT_EQ(a.shape(), (Shape{n, 4}));
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  }
  auto bad = random_tensor({6, 4}, rng);
  EXPECT_THROW(forward(m, bad, graph_for(bad, 4), Mode::eval), ContractError);
}

TEST(Forward, TrainModeNeedsDropoutSource) {
  std::mt19937_64 rng(2);
  auto m = build_model<double>(small_config(), 1);
  auto x = random_tensor({9, 5}, rng);
  EXPECT_THROW(forward(m, x, graph_for(x, 4), Mode::train), ContractError);
  std::mt19937_64 d(3);
  EXPECT_NO_THROW(forward(m, x, graph_for(x, 4), Mode::train, &d));
}

TEST(Forward, PermutationInvariancePerPoint) {
  std::mt19937_64 rng(4);
  for (auto v : kAllVariants) {
    auto m = build_model<double>(small_config(v), 9);
    const std::size_t n = 40;
    auto x = random_tensor({n, 5}, rng);
    std::vector<std::uint32_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    IndexMatrix pm(n, 1);
    pm.data = perm;
    auto xp = reshape(gather_rows(x, pm), {n, 5});
    auto y = forward(m, x, graph_for(x, 4), Mode::eval);
    auto yp = forward(m, xp, graph_for(xp, 4), Mode::eval);
    double worst = 0;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < 4; ++c) worst = std::max(worst, std::abs(yp.at({r, c}) - y.at({perm[r], c})));
    EXPECT_LT(worst, 1e-9) << variant_name(v);
  }
}

TEST(Forward, StackedBlocksMatchSeparateBlocksInEval) {
  std::mt19937_64 rng(5);
  auto m = build_model<double>(small_config(), 2);
  auto a = random_tensor({8, 5}, rng), b = random_tensor({11, 5}, rng);
  const std::vector<knn::KnnGraph> graphs{graph_for(a, 4), graph_for(b, 4)};
  auto layout = stack_layout(graphs);
  EXPECT_EQ(layout.segments, (Segments{{0, 8}, {8, 19}}));
  auto joint = forward(m, concat(a, b, 0), layout, Mode::eval);
  auto ya = forward(m, a, graphs[0], Mode::eval), yb = forward(m, b, graphs[1], Mode::eval);
  for (std::size_t i = 0; i < ya.numel(); ++i) EXPECT_NEAR(joint.data()[i], ya.data()[i], 1e-12);
  for (std::size_t i = 0; i < yb.numel(); ++i) EXPECT_NEAR(joint.data()[ya.numel() + i], yb.data()[i], 1e-12);
}

TEST(Forward, NoLocalTraceHasNoNeighborGather) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({12, 5}, rng);
  auto g = graph_for(x, 4);
  std::vector<std::uint32_t> labels(12, 1);
  for (auto v : {Variant::no_local, Variant::full}) {
    auto m = build_model<double>(small_config(v), 1);
    Tape<double> tape;
    std::mt19937_64 d(1);
    auto loss = cross_entropy_loss(forward(m, x, g, Mode::train, &d), labels);
    auto names = tape.op_names();
    const bool gathers = std::find(names.begin(), names.end(), "gather_rows") != names.end();
    EXPECT_EQ(gathers, v != Variant::no_local) << variant_name(v);
  }
}

TEST(CrossEntropy, UniformLogits) {
  Tensor<double> z = Tensor<double>::zeros({3, 4});
  std::vector<std::uint32_t> labels{0, 3, 2};
  EXPECT_NEAR(cross_entropy_loss(z, labels).item(), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, LargeMarginGoesToZeroAndStaysFinite) {
  Tensor<double> z({2, 3}, {1000, 0, 0, 0, -1000, 1000});
  std::vector<std::uint32_t> labels{0, 2};
  EXPECT_NEAR(cross_entropy_loss(z, labels).item(), 0.0, 1e-300);
  std::vector<std::uint32_t> wrong{1, 1};
  EXPECT_TRUE(std::isfinite(cross_entropy_loss(z, wrong).item()));
}

TEST(CrossEntropy, MatchesDirectFormulaAndGradient) {
  std::mt19937_64 rng(7);
  auto z = random_tensor({3, 5}, rng, -3, 3, true);
  std::vector<std::uint32_t> labels{4, 0, 2};
  double expected = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) s += std::exp(z.at({i, c}));
    expected += -std::log(std::exp(z.at({i, labels[i]})) / s);
  }
  {
    Tape<double> tape;
    auto loss = cross_entropy_loss(z, labels);
    EXPECT_NEAR(loss.item(), expected / 3, 1e-14);
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < z.numel(); ++i) {
    const double fd = testing::central_difference(z, i, [&] { return cross_entropy_loss(z, labels).item(); });
    EXPECT_LT(testing::relative_error(z.grad()[i], fd), 1e-7);
  }
}

TEST(CrossEntropy, MaskSelectsPoints) {
  Tensor<double> z({2, 2}, {0, 0, 5, -5});
  std::vector<std::uint32_t> labels{0, 0};
  std::vector<std::uint8_t> mask{1, 0};
  EXPECT_NEAR(cross_entropy_loss(z, labels, mask).item(), std::log(2.0), 1e-15);
  std::vector<std::uint8_t> none{0, 0};
  EXPECT_THROW(cross_entropy_loss(z, labels, none), ContractError);
}

TEST(CrossEntropy, OutOfRangeLabelNamesPoint) {
  Tensor<double> z = Tensor<double>::zeros({3, 2});
  std::vector<std::uint32_t> labels{0, 1, 2};
  try {
    cross_entropy_loss(z, labels);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("point 2"), std::string::npos);
  }
}

Model<double> small_model() { return build_model<double>(small_config(), 1); }

// Constant gradient 1 on every scalar: the bias-corrected first step is -lr.
TEST(Adam, FirstStepIsMinusLearningRate) {
  auto m = small_model();
  AdamConfig hyper;
  hyper.weight_decay = 0.0;
  auto state = make_optimizer(m, hyper);
  auto params = named_parameters(m);
  std::vector<double> before;
  for (auto& p : params) {
    std::ranges::fill(p.tensor->grad_buffer(), 1.0);
    before.push_back(p.tensor->data()[0]);
  }
  adam_step(m, state);
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_NEAR(params[i].tensor->data()[0] - before[i], -1e-3, 1e-10) << params[i].name;
    EXPECT_FALSE(params[i].tensor->has_grad());
  }
  EXPECT_EQ(state.step, 1u);
  EXPECT_EQ(state.m[0].shape(), params[0].tensor->shape());
}

TEST(Adam, ZeroGradientsOnlyShrinkByWeightDecay) {
  auto m = small_model();
  auto state = make_optimizer(m, AdamConfig{});
  auto params = named_parameters(m);
  auto before = flatten(m);
  for (auto& p : params) p.tensor->grad_buffer();
  adam_step(m, state);
  auto after = flatten(m);
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_LE(std::abs(after[i]), std::abs(before[i]) + 1e-18);
    if (before[i] == 0.0) EXPECT_EQ(after[i], 0.0);
  }
  // buffers are untouched
  EXPECT_EQ(m.head[0].bn->running_var.data()[0], 1.0);
}

TEST(Adam, MissingGradientNamesParameter) {
  auto m = small_model();
  auto state = make_optimizer(m, AdamConfig{});
  auto params = named_parameters(m);
  for (std::size_t i = 0; i + 1 < params.size(); ++i) params[i].tensor->grad_buffer();
  try {
    adam_step(m, state);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("classifier.bias"), std::string::npos);
  }
}

TEST(Adam, IdenticalModelsStayIdentical) {
  auto a = small_model();
  auto b = small_model();
  auto sa = make_optimizer(a, AdamConfig{});
  auto sb = make_optimizer(b, AdamConfig{});
  std::mt19937_64 rng(3);
  for (int step = 0; step < 3; ++step) {
    auto pa = named_parameters(a), pb = named_parameters(b);
    for (std::size_t i = 0; i < pa.size(); ++i) {
      auto ga = pa[i].tensor->grad_buffer(), gb = pb[i].tensor->grad_buffer();
      for (std::size_t j = 0; j < ga.size(); ++j) ga[j] = gb[j] = testing::random_tensor({1}, rng).item();
    }
    adam_step(a, sa);
    adam_step(b, sb);
  }
  EXPECT_EQ(flatten(a), flatten(b));
}

TEST(Schedule, HalvesEveryHundredEpochs) {
  EXPECT_EQ(lr_at_epoch(0.001, 0), 0.001);
  EXPECT_EQ(lr_at_epoch(0.001, 99), 0.001);
  EXPECT_EQ(lr_at_epoch(0.001, 100), 0.0005);
  EXPECT_EQ(lr_at_epoch(0.001, 199), 0.0005);
  EXPECT_EQ(lr_at_epoch(0.001, 200), 0.00025);
  EXPECT_EQ(lr_at_epoch(0.001, 25, 10), 0.00025);
}

TEST(Training, GradientFlowReachesEveryParameter) {
  std::mt19937_64 rng(8);
  for (auto v : kAllVariants) {
    auto m = build_model<double>(small_config(v), 4);
    auto a = random_tensor({10, 5}, rng), b = random_tensor({9, 5}, rng);
    const std::vector<knn::KnnGraph> graphs{graph_for(a, 4), graph_for(b, 4)};
    std::vector<std::uint32_t> labels(19);
    for (auto& l : labels) l = static_cast<std::uint32_t>(rng() % 4);
    {
      Tape<double> tape;
      std::mt19937_64 d(1);
      tape.backward(cross_entropy_loss(forward(m, concat(a, b, 0), stack_layout(graphs), Mode::train, &d), labels));
    }
    for (const auto& p : named_parameters(m)) EXPECT_TRUE(p.tensor->has_grad()) << p.name;
    for (std::size_t e = 0; e < m.encoders.size(); ++e) {
      bool nonzero = false;
      for (const auto& p : named_parameters(m)) {
        if (p.name.rfind("encoder" + std::to_string(e) + ".", 0) != 0) continue;
        for (double g : p.tensor->grad()) nonzero |= g != 0.0;
      }
      EXPECT_TRUE(nonzero) << variant_name(v) << " encoder " << e;
    }
  }
}

TEST(Training, SingleStepDescends) {
  std::mt19937_64 rng(9);
  NetworkConfig c = small_config();
  c.dropout_p = 0.0;
  auto m = build_model<double>(c, 6);
  auto x = random_tensor({24, 5}, rng);
  auto g = graph_for(x, 4);
  std::vector<std::uint32_t> labels(24);
  for (auto& l : labels) l = static_cast<std::uint32_t>(rng() % 4);
  auto state = make_optimizer(m, AdamConfig{});
  double before;
  {
    Tape<double> tape;
    auto loss = cross_entropy_loss(forward(m, x, g, Mode::train), labels);
    before = loss.item();
    tape.backward(loss);
  }
  adam_step(m, state);
  const double after = cross_entropy_loss(forward(m, x, g, Mode::train), labels).item();
  EXPECT_LT(after, before);
}

}  // namespace
}  // namespace ps2::nn
