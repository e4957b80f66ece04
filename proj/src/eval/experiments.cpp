#include <chrono>

#include "ps2/error.hpp"
#include "ps2/eval.hpp"

namespace ps2::eval {
namespace {

template <typename T>
void train_and_score(const data::BlockSet& train_set, const data::BlockSet& test_set, const train::RunConfig& config,
                     std::uint64_t seed, RunReport& report) {
  using clock = std::chrono::steady_clock;
  auto model = nn::build_model<T>(config.network, seed);
  report.parameters = nn::parameter_count(model);
  nn::AdamConfig hyper;
  hyper.learning_rate = config.train.learning_rate;
  hyper.weight_decay = config.train.weight_decay;
  auto optimizer = nn::make_optimizer(model, hyper);
  train::TrainParams params;
  params.epochs = config.train.epochs;
  params.batch_size = config.train.batch_size;
  params.seed = seed;
  params.options = config.train;
  const auto trained = train::train(model, optimizer, train_set, params);
  report.epochs = trained.epochs;
  report.train_seconds = trained.seconds;
  const auto start = clock::now();
  report.metrics = evaluate(model, test_set, seed, config.train.sampling);
  report.eval_seconds = std::chrono::duration<double>(clock::now() - start).count();
}

}  // namespace

RunReport run_experiment(const data::BlockSet& train_set, const data::BlockSet& test_set, train::RunConfig config,
                         std::uint64_t seed, const std::string& label) {
  config.network = train::bind_to_data(config.network, train_set);
  if (test_set.f0 != train_set.f0 || test_set.num_classes != train_set.num_classes ||
      test_set.setup != train_set.setup) {
    throw DataError("train and test sets disagree on setup, feature width or class count");
  }
  config.network.validate();
  RunReport report;
  report.label = label;
  report.config = config;
  report.seed = seed;
  report.class_names = train_set.class_names;
  if (config.train.precision == train::Precision::f64) {
    train_and_score<double>(train_set, test_set, config, seed, report);
  } else {
    train_and_score<float>(train_set, test_set, config, seed, report);
  }
  return report;
}

std::vector<RunReport> run_ablation(const data::BlockSet& train_set, const data::BlockSet& test_set,
                                    const train::RunConfig& base, std::uint64_t seed, const RunCallback& on_run) {
  std::vector<RunReport> out;
  for (auto v : nn::kAllVariants) {
    auto config = base;
    config.network.variant = v;
    out.push_back(run_experiment(train_set, test_set, config, seed, std::string(nn::variant_name(v))));
    if (on_run) on_run(out.back());
  }
  return out;
}

SweepParam parse_sweep_param(std::string_view name) {
  if (name == "encoders") return SweepParam::encoders;
  if (name == "k") return SweepParam::k;
  if (name == "clusters") return SweepParam::clusters;
  throw ContractError("unknown sweep parameter '" + std::string(name) + "' (encoders|k|clusters)");
}

std::string_view sweep_param_name(SweepParam p) {
  switch (p) {
    case SweepParam::encoders: return "encoders";
    case SweepParam::k: return "k";
    case SweepParam::clusters: return "clusters";
  }
  return "?";
}

std::vector<RunReport> run_sweep(const data::BlockSet& train_set, const data::BlockSet& test_set,
                                 const train::RunConfig& base, SweepParam param, std::span<const std::size_t> values,
                                 std::uint64_t seed, const RunCallback& on_run) {
  if (values.empty()) throw ContractError("run_sweep: no values");
  std::vector<RunReport> out;
  for (auto value : values) {
    auto config = base;
    switch (param) {
      case SweepParam::encoders: config.network.num_encoders = value; break;
      case SweepParam::k: config.network.k_neighbors = value; break;
      case SweepParam::clusters: config.network.num_clusters = value; break;
    }
    out.push_back(run_experiment(train_set, test_set, config, seed,
                                 std::string(sweep_param_name(param)) + "=" + std::to_string(value)));
    if (on_run) on_run(out.back());
  }
  return out;
}

}  // namespace ps2::eval
