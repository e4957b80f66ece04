#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>

#include "ps2/checkpoint.hpp"
#include "ps2/checks.hpp"
#include "ps2/error.hpp"
#include "ps2/eval.hpp"
#include "ps2/random.hpp"
#include "ps2/train.hpp"

namespace ps2::cli {
namespace {

bool is_block_set(const fs::path& dir) { return fs::exists(dir / "manifest.txt"); }

// dir/<split> when it holds a block set, else dir itself.
fs::path split_dir(const fs::path& dir, const char* split) {
  if (is_block_set(dir / split)) return dir / split;
  if (is_block_set(dir)) return dir;
  throw DataError("no block set in '" + dir.string() + "' or its '" + split + "' subdirectory");
}

std::vector<fs::path> cloud_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pscloud") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no .pscloud files in '" + dir.string() + "'");
  return out;
}

std::string fmt(const char* pattern, double a, double b = 0, double c = 0, double d = 0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

void log_epoch(std::ostream& log, std::size_t epochs, const train::EpochLog& e) {
  log << "epoch " << e.epoch + 1 << '/' << epochs
      << fmt("  lr %.3g  loss %.4f  acc %.4f  %.1fs", e.learning_rate, e.loss, e.accuracy, e.seconds) << std::endl;
}

void log_run(std::ostream& log, const eval::RunReport& r) {
  log << r.label
      << fmt(": OA %.4f  mIoU %.4f  (train %.0fs, eval %.0fs)", r.metrics.overall_accuracy(), r.metrics.mean_iou(),
             r.train_seconds, r.eval_seconds)
      << std::endl;
}

fs::path epoch_checkpoint(const fs::path& out, std::size_t epoch) {
  auto p = out;
  p.replace_filename(out.stem().string() + ".epoch" + std::to_string(epoch) + out.extension().string());
  return p;
}

template <typename T>
void train_typed(const data::BlockSet& set, const train::RunConfig& config, std::size_t epochs, std::size_t batch,
                 std::uint64_t seed, const fs::path& out, std::ostream& log) {
  auto model = nn::build_model<T>(config.network, seed);
  nn::AdamConfig hyper;
  hyper.learning_rate = config.train.learning_rate;
  hyper.weight_decay = config.train.weight_decay;
  auto optimizer = nn::make_optimizer(model, hyper);
  log << "model: " << nn::parameter_count(model) << " parameters, " << set.blocks.size() << " blocks" << std::endl;
  train::TrainParams params;
  params.epochs = epochs;
  params.batch_size = batch;
  params.seed = seed;
  params.options = config.train;
  params.on_epoch = [&](std::size_t epoch, const train::EpochLog& e) {
    log_epoch(log, epochs, e);
    const auto every = config.train.checkpoint_every;
    if (every && (epoch + 1) % every == 0 && epoch + 1 < epochs) {
      train::write_checkpoint(train::make_checkpoint(model, optimizer, {seed, epoch + 1, config.train}),
                              epoch_checkpoint(out, epoch + 1));
    }
  };
  train::train(model, optimizer, set, params);
  train::write_checkpoint(train::make_checkpoint(model, optimizer, {seed, epochs, config.train}), out);
  log << "wrote " << out.string() << std::endl;
}

template <typename T>
void predict_typed(const train::CheckpointFile& file, const data::PointCloud& cloud, const fs::path& out,
                   std::ostream& log) {
  auto model = train::restore_model<T>(file);
  const auto config = train::checkpoint_config(file);
  const auto setup = eval::setup_for_features(model.config.f0);
  const auto seed = std::stoull(file.get("seed"));
  const auto pred = eval::predict_cloud(model, cloud, setup, seed, config.train.sampling);
  const auto palette = eval::default_palette(model.config.num_classes);
  auto colored = eval::colorize_predictions(cloud, pred, palette);
  colored.labels = pred;
  if (colored.num_classes != model.config.num_classes) colored.class_names.clear();
  colored.num_classes = model.config.num_classes;
  data::write_cloud(colored, out);
  log << "labelled " << cloud.size() << " points (" << data::setup_name(setup) << " blocks), wrote " << out.string()
      << std::endl;
}

template <typename T>
eval::Metrics evaluate_typed(const train::CheckpointFile& file, const data::BlockSet& set, std::size_t& parameters) {
  auto model = train::restore_model<T>(file);
  parameters = nn::parameter_count(model);
  if (model.config.f0 != set.f0 || model.config.num_classes != set.num_classes) {
    throw DataError("checkpoint expects f0=" + std::to_string(model.config.f0) + ", L=" +
                    std::to_string(model.config.num_classes) + "; data has f0=" + std::to_string(set.f0) +
                    ", L=" + std::to_string(set.num_classes));
  }
  const auto config = train::checkpoint_config(file);
  return eval::evaluate(model, set, std::stoull(file.get("seed")), config.train.sampling);
}

std::vector<std::size_t> parse_values(const std::string& csv) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = std::min(csv.find(',', start), csv.size());
    const auto item = csv.substr(start, comma - start);
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw ContractError("--values must be a comma-separated list of positive integers, got '" + csv + "'");
    }
    out.push_back(std::stoull(item));
    start = comma + 1;
  }
  return out;
}

}  // namespace

void synth(const fs::path& spec_path, std::uint64_t seed, const fs::path& out, std::ostream& log) {
  const auto spec = data::read_scene_spec(spec_path);
  spec.validate();
  const std::pair<const char*, std::size_t> splits[] = {{"train", spec.train_scenes}, {"test", spec.test_scenes}};
  for (std::size_t s = 0; s < 2; ++s) {
    const auto dir = out / splits[s].first;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < splits[s].second; ++i) {
      char name[48];
      std::snprintf(name, sizeof name, "scene_%03zu.pscloud", i);
      data::write_cloud(data::generate_scene(spec, mix_seed(mix_seed(seed, s), i)), dir / name);
    }
    log << "wrote " << splits[s].second << " scenes to " << dir.string() << std::endl;
  }
}

void prep(data::Setup setup, const fs::path& in, const fs::path& out, std::uint64_t seed, std::ostream& log) {
  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(in / "train") || fs::is_directory(in / "test")) {
    for (const char* split : {"train", "test"}) {
      if (fs::is_directory(in / split)) jobs.emplace_back(in / split, out / split);
    }
  } else {
    jobs.emplace_back(in, out);
  }
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto& [src, dst] = jobs[j];
    std::vector<data::Block> blocks;
    std::vector<std::string> rooms;
    const auto files = cloud_files(src);
    for (const auto& f : files) {
      auto room = data::read_cloud(f);
      for (auto& b : data::partition(room, setup)) {
        blocks.push_back(std::move(b));
        rooms.push_back(f.stem().string());
      }
    }
    data::write_block_set(dst, setup, blocks, rooms, mix_seed(seed, j));
    log << src.string() << ": " << files.size() << " rooms -> " << blocks.size() << " " << data::setup_name(setup)
        << " blocks in " << dst.string() << std::endl;
  }
}

void train(const fs::path& data_dir, const fs::path& config_path, std::size_t epochs, std::size_t batch,
           std::uint64_t seed, const fs::path& out, std::ostream& log) {
  auto config = train::read_run_config(config_path);
  const auto set = data::read_block_set(split_dir(data_dir, "train"));
  config.network = train::bind_to_data(config.network, set);
  config.network.validate();
  config.train.epochs = epochs;
  config.train.batch_size = batch;
  if (config.train.precision == train::Precision::f64) {
    train_typed<double>(set, config, epochs, batch, seed, out, log);
  } else {
    train_typed<float>(set, config, epochs, batch, seed, out, log);
  }
}

void predict(const fs::path& ckpt, const fs::path& in, const fs::path& out, std::ostream& log) {
  const auto file = train::read_checkpoint(ckpt);
  const auto cloud = data::read_cloud(in);
  if (train::checkpoint_config(file).train.precision == train::Precision::f64) {
    predict_typed<double>(file, cloud, out, log);
  } else {
    predict_typed<float>(file, cloud, out, log);
  }
}

void evaluate(const fs::path& ckpt, const fs::path& data_dir, const fs::path& report_path, std::ostream& log) {
  const auto file = train::read_checkpoint(ckpt);
  const auto set = data::read_block_set(split_dir(data_dir, "test"));
  eval::RunReport r;
  r.label = "eval";
  r.config = train::checkpoint_config(file);
  r.seed = std::stoull(file.get("seed"));
  r.class_names = set.class_names;
  r.checkpoint = ckpt.string();
  const auto start = std::chrono::steady_clock::now();
  r.metrics = r.config.train.precision == train::Precision::f64 ? evaluate_typed<double>(file, set, r.parameters)
                                                                 : evaluate_typed<float>(file, set, r.parameters);
  r.eval_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  eval::write_reports(std::span(&r, 1), report_path, "evaluation of " + ckpt.filename().string());
  log_run(log, r);
}

void ablate(const fs::path& data_dir, const fs::path& config_path, std::uint64_t seed, const fs::path& report,
            std::ostream& log) {
  const auto config = train::read_run_config(config_path);
  const auto train_set = data::read_block_set(data_dir / "train");
  const auto test_set = data::read_block_set(data_dir / "test");
  const auto runs = eval::run_ablation(train_set, test_set, config, seed, [&](const auto& r) { log_run(log, r); });
  eval::write_reports(runs, report, "ablation, seed " + std::to_string(seed));
}

void sweep(const fs::path& data_dir, const fs::path& config_path, const std::string& param, const std::string& values,
           std::uint64_t seed, const fs::path& report, std::ostream& log) {
  const auto which = eval::parse_sweep_param(param);
  const auto list = parse_values(values);
  const auto config = train::read_run_config(config_path);
  const auto train_set = data::read_block_set(data_dir / "train");
  const auto test_set = data::read_block_set(data_dir / "test");
  const auto runs =
      eval::run_sweep(train_set, test_set, config, which, list, seed, [&](const auto& r) { log_run(log, r); });
  eval::write_reports(runs, report, "sweep over " + param + ", seed " + std::to_string(seed));
}

int check(const std::string& mode, std::ostream& log) {
  bool ok = true;
  for (const auto& r : check::run_checks(mode)) {
    log << check::format_result(r) << std::endl;
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

int run(int argc, char** argv) {
  CLI::App app{"Point cloud semantic segmentation: data prep, training, evaluation"};
  app.require_subcommand(1);
  std::string spec, in, out, data, config, ckpt, report, setup, param, values, mode;
  std::uint64_t seed = 0;
  std::size_t epochs = 0, batch = 0;

  auto* c_synth = app.add_subcommand("synth", "generate synthetic labelled rooms");
  c_synth->add_option("--spec", spec, "scene spec file")->required();
  c_synth->add_option("--seed", seed)->required();
  c_synth->add_option("--out", out, "output directory")->required();

  auto* c_prep = app.add_subcommand("prep", "partition rooms into block sets");
  c_prep->add_option("--setup", setup)->required()->check(CLI::IsMember({"p1", "p2", "p3"}));
  c_prep->add_option("--in", in, "directory of room clouds")->required();
  c_prep->add_option("--out", out, "block set directory")->required();
  c_prep->add_option("--seed", seed)->required();

  auto* c_train = app.add_subcommand("train", "train a model");
  c_train->add_option("--data", data, "block set directory")->required();
  c_train->add_option("--config", config, "key = value config file")->required();
  c_train->add_option("--epochs", epochs)->required();
  c_train->add_option("--batch", batch)->required()->check(CLI::PositiveNumber);
  c_train->add_option("--seed", seed)->required();
  c_train->add_option("--out", out, "checkpoint path")->required();

  auto* c_predict = app.add_subcommand("predict", "label a room cloud");
  c_predict->add_option("--ckpt", ckpt)->required();
  c_predict->add_option("--in", in, "room cloud")->required();
  c_predict->add_option("--out", out, "labelled, colorized cloud")->required();

  auto* c_eval = app.add_subcommand("eval", "score a checkpoint on a block set");
  c_eval->add_option("--ckpt", ckpt)->required();
  c_eval->add_option("--data", data)->required();
  c_eval->add_option("--report", report)->required();

  auto* c_ablate = app.add_subcommand("ablate", "train and score every network variant");
  c_ablate->add_option("--data", data, "directory with train/ and test/ block sets")->required();
  c_ablate->add_option("--config", config)->required();
  c_ablate->add_option("--seed", seed)->required();
  c_ablate->add_option("--report", report)->required();

  auto* c_sweep = app.add_subcommand("sweep", "train and score across one hyperparameter");
  c_sweep->add_option("--data", data, "directory with train/ and test/ block sets")->required();
  c_sweep->add_option("--config", config)->required();
  c_sweep->add_option("--param", param)->required()->check(CLI::IsMember({"encoders", "k", "clusters"}));
  c_sweep->add_option("--values", values, "comma-separated values")->required();
  c_sweep->add_option("--seed", seed)->required();
  c_sweep->add_option("--report", report)->required();

  auto* c_check = app.add_subcommand("check", "run built-in property checks");
  c_check->add_option("--mode", mode)->required()->check(CLI::IsMember({"gradients", "permutation", "knn-oracle"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    auto& log = std::cerr;
    if (*c_synth) synth(spec, seed, out, log);
    else if (*c_prep) prep(data::parse_setup(setup), in, out, seed, log);
    else if (*c_train) train(data, config, epochs, batch, seed, out, log);
    else if (*c_predict) predict(ckpt, in, out, log);
    else if (*c_eval) evaluate(ckpt, data, report, log);
    else if (*c_ablate) ablate(data, config, seed, report, log);
    else if (*c_sweep) sweep(data, config, param, values, seed, report, log);
    else if (*c_check) return check(mode, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}

}  // namespace ps2::cli
