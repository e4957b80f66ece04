#pragma once

// Segmentation metrics, whole-cloud inference, experiment protocols and
// plain-text run reports.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ps2/dataio.hpp"
#include "ps2/network.hpp"
#include "ps2/train.hpp"

namespace ps2::eval {

// Confusion counts, rows = ground truth, columns = prediction.
class Metrics {
 public:
  Metrics() = default;
  explicit Metrics(std::size_t num_classes);

  std::size_t num_classes() const { return classes_; }
  std::uint64_t count(std::size_t gt, std::size_t pred) const { return confusion_[gt * classes_ + pred]; }
  std::uint64_t total() const;
  // Row-major L x L counts.
  std::span<const std::uint64_t> confusion() const { return confusion_; }

  // 0 when nothing has been accumulated.
  double overall_accuracy() const;
  // nullopt when the class appears in neither ground truth nor prediction.
  std::optional<double> class_iou(std::size_t c) const;
  // Mean over the present classes; 0 when none is present.
  double mean_iou() const;

  // Out-of-range labels raise DataError naming the position.
  void add(std::span<const std::uint32_t> pred, std::span<const std::uint32_t> gt);
  void add_count(std::size_t gt, std::size_t pred, std::uint64_t n);

  bool operator==(const Metrics&) const = default;

 private:
  std::size_t classes_ = 0;
  std::vector<std::uint64_t> confusion_;
};

// Adds (pred, gt) pairs; lengths must match (DimensionError).
Metrics& accumulate(Metrics& metrics, std::span<const std::uint32_t> pred, std::span<const std::uint32_t> gt);

using Rgb = std::array<double, 3>;

// Distinct colors in [0,1]; the first twelve are fixed, later ones are spread
// over the hue circle.
std::vector<Rgb> default_palette(std::size_t n);

// Cloud whose first three feature channels are the predicted class colors.
// Clouds with fewer than three channels gain three leading ones.
// ContractError when the palette is shorter than the largest prediction + 1
// or the cloud's class count; DimensionError on a length mismatch.
data::PointCloud colorize_predictions(const data::PointCloud& cloud, std::span<const std::uint32_t> pred,
                                      std::span<const Rgb> palette);

// Setup implied by a network's input width (f0 6 -> p1, 3 -> p2, 0 -> p3).
data::Setup setup_for_features(std::size_t f0);

// Labels every point of `block` (context points included). Points are
// shuffled and cut into chunks of the setup's sample size; the last chunk is
// padded with repeats. Chunks run in eval mode, several per forward pass.
template <typename T>
std::vector<std::uint32_t> predict_block(nn::Model<T>& model, const data::Block& block, data::Setup setup,
                                         std::uint64_t seed, const data::SampleSizes& sizes = {});

// Partitions a raw room cloud per `setup` and labels every point from its
// home block.
template <typename T>
std::vector<std::uint32_t> predict_cloud(nn::Model<T>& model, const data::PointCloud& room, data::Setup setup,
                                         std::uint64_t seed, const data::SampleSizes& sizes = {});

// Metrics over the home points of every block; each room point counts once.
template <typename T>
Metrics evaluate(nn::Model<T>& model, const data::BlockSet& set, std::uint64_t seed,
                 const data::SampleSizes& sizes = {});

struct RunReport {
  std::string label;
  train::RunConfig config;
  std::uint64_t seed = 0;
  std::size_t parameters = 0;
  std::vector<train::EpochLog> epochs;
  std::vector<std::string> class_names;
  Metrics metrics;
  double train_seconds = 0;
  double eval_seconds = 0;
  std::string checkpoint;

  bool operator==(const RunReport&) const = default;
};

// Text sections that read back to equal reports. A human summary (aligned
// per-class table) precedes each section as '#' lines.
void write_report(const RunReport& report, std::ostream& out);
void write_reports(std::span<const RunReport> reports, std::ostream& out, const std::string& title = {});
void write_reports(std::span<const RunReport> reports, const std::filesystem::path& path,
                   const std::string& title = {});
// Lines starting with '#' or '|' are commentary and skipped. ParseError on
// malformed sections.
std::vector<RunReport> read_reports(std::istream& in);
std::vector<RunReport> read_reports(const std::filesystem::path& path);

// Aligned table of label, parameters, OA and mIoU; every line starts with '|'.
std::string summary_table(std::span<const RunReport> reports, const std::string& first_column = "run");

// Train `config` on `train_set` from `seed`, evaluate on `test_set`. The
// training precision follows config.train.precision.
RunReport run_experiment(const data::BlockSet& train_set, const data::BlockSet& test_set, train::RunConfig config,
                         std::uint64_t seed, const std::string& label);

using RunCallback = std::function<void(const RunReport&)>;

// One run per variant in the order full, no_local, no_edgeconv, no_netvlad,
// sharing seed and data. `on_run` sees each report as it completes.
std::vector<RunReport> run_ablation(const data::BlockSet& train_set, const data::BlockSet& test_set,
                                    const train::RunConfig& base, std::uint64_t seed, const RunCallback& on_run = {});

enum class SweepParam { encoders, k, clusters };
SweepParam parse_sweep_param(std::string_view name);  // ContractError
std::string_view sweep_param_name(SweepParam p);

// One run per value, labelled "<param>=<value>". ContractError on an empty
// value list.
std::vector<RunReport> run_sweep(const data::BlockSet& train_set, const data::BlockSet& test_set,
                                 const train::RunConfig& base, SweepParam param,
                                 std::span<const std::size_t> values, std::uint64_t seed,
                                 const RunCallback& on_run = {});

}  // namespace ps2::eval
