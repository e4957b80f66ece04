#pragma once

// Point-cloud files, block preparation for the three input setups, point
// sampling, and a deterministic synthetic room generator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ps2/knn.hpp"

namespace ps2::data {

struct PointCloud {
  std::vector<knn::Point3> xyz;
  std::size_t f0 = 0;                  // extra channels per point
  std::vector<double> features;        // N * f0, row-major
  std::vector<std::uint32_t> labels;   // empty or N
  std::size_t num_classes = 0;         // L; 0 when unlabeled
  std::vector<std::string> class_names;  // empty or L

  std::size_t size() const { return xyz.size(); }
  bool has_labels() const { return !labels.empty(); }
  // Throws DataError on inconsistent widths, non-finite values or bad labels.
  void validate() const;
  // Points in `ids` order, keeping the class metadata.
  PointCloud select(std::span<const std::uint32_t> ids) const;

  bool operator==(const PointCloud&) const = default;
};

// Text format:
//   pscloud v1 N=<n> F=<f0> L=<num_classes>
//   [classes <name> ...]
//   x y z [f_1 .. f_f0] [label]        one line per point, %.17g
// Labels are present exactly when L > 0.
void write_cloud(const PointCloud& cloud, std::ostream& out);
void write_cloud(const PointCloud& cloud, const std::filesystem::path& path);
// ParseError (with line number) for malformed lines, DataError for width
// mismatches and out-of-range labels.
PointCloud read_cloud(std::istream& in);
PointCloud read_cloud(const std::filesystem::path& path);

// Network input matrix: one row [x y z f_1 .. f_f0] per point.
std::vector<double> input_rows(const PointCloud& cloud);

// --- blocks -----------------------------------------------------------------

enum class Setup { p1, p2, p3 };

std::string_view setup_name(Setup s);
Setup parse_setup(std::string_view name);  // "p1" | "p2" | "p3"

struct Block {
  // Per-setup input features: P1 rgb + room-normalized xyz (f0 = 6), P2 rgb
  // (f0 = 3), P3 none. xy are relative to the block's center.
  PointCloud points;
  Setup setup = Setup::p1;
  knn::Point3 origin{};                // block min corner in the room frame
  std::vector<std::uint32_t> source;   // room index of every point
  std::size_t home_count = 0;          // the first home_count points belong to this cell
};

// 1m x 1m cells over the room's xy bounding box; empty cells dropped.
// Requires rgb (f0 >= 3, the first three channels).
std::vector<Block> partition_p1(const PointCloud& room);
// 1.5m cells with 0.3m padding; each point is home in exactly one block.
std::vector<Block> partition_p2(const PointCloud& room);
// 1.5m x 1.5m columns with xyz only.
std::vector<Block> partition_p3(const PointCloud& room);
std::vector<Block> partition(const PointCloud& room, Setup setup);

struct SampleSizes {
  std::size_t p1 = 4096;
  double p2_mean = 2048;
  double p2_sd = 256;
  std::size_t p2_min = 512;
  std::size_t p3 = 8192;

  bool operator==(const SampleSizes&) const = default;
};

// Fixed-size random subset for P1/P3, Gaussian-sized subset for P2. A block
// smaller than the target keeps every point once and fills the rest with
// replacement. P2 keeps home points first. Deterministic in `seed`.
Block sample_block(const Block& block, Setup setup, std::uint64_t seed, const SampleSizes& sizes = {});
// The sample count that sample_block would draw.
std::size_t sample_count(const Block& block, Setup setup, std::uint64_t seed, const SampleSizes& sizes = {});

// --- block sets on disk ------------------------------------------------------

struct BlockEntry {
  std::string file;      // relative to the set directory
  std::string room;      // source room file stem
  std::uint64_t seed = 0;  // sampling seed for this block
  knn::Point3 origin{};
  std::size_t size = 0;
  std::size_t home_count = 0;
};

struct BlockSet {
  std::filesystem::path dir;
  Setup setup = Setup::p1;
  std::size_t f0 = 0;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<BlockEntry> entries;
  std::vector<Block> blocks;  // loaded in entry order
};

// Writes block files plus manifest.txt into `dir` (created if needed).
void write_block_set(const std::filesystem::path& dir, Setup setup, const std::vector<Block>& blocks,
                     const std::vector<std::string>& rooms, std::uint64_t seed);
BlockSet read_block_set(const std::filesystem::path& dir);

// --- synthetic scenes --------------------------------------------------------

struct ClassStyle {
  std::string name;
  std::array<double, 3> rgb{};
  double color_sigma = 0.0;
};

struct BoxSpec {
  std::size_t cls = 0;
  double cx = 0, cy = 0, sx = 0, sy = 0, z0 = 0, z1 = 0;
};

struct CylinderSpec {
  std::size_t cls = 0;
  double cx = 0, cy = 0, r = 0, z0 = 0, z1 = 0;
};

inline constexpr std::size_t kNoClass = static_cast<std::size_t>(-1);

// Line-based text:
//   room <sx> <sy> <height>      density <pts/m^2>     noise <sigma>
//   jitter <meters>              train_scenes <n>      test_scenes <n>
//   class <name> <r> <g> <b> <color_sigma>
//   floor|ceiling|walls <class>
//   box <class> <cx> <cy> <sx> <sy> <z0> <z1>
//   cylinder <class> <cx> <cy> <r> <z0> <z1>
// '#' starts a comment.
struct SceneSpec {
  double sx = 4, sy = 4, height = 2.5;
  double density = 100;
  double noise = 0.0;
  double jitter = 0.0;  // uniform xy offset of every object per scene
  std::size_t train_scenes = 40;
  std::size_t test_scenes = 10;
  std::vector<ClassStyle> classes;
  std::size_t floor = kNoClass, ceiling = kNoClass, walls = kNoClass;
  std::vector<BoxSpec> boxes;
  std::vector<CylinderSpec> cylinders;

  void validate() const;  // ContractError
};

SceneSpec parse_scene_spec(std::istream& in);
SceneSpec read_scene_spec(const std::filesystem::path& path);

// Surface area per class of the (unjittered) spec; the expected class
// histogram is proportional to it.
std::vector<double> class_surface_areas(const SceneSpec& spec);

// Labeled cloud with rgb features; deterministic per (spec, seed).
PointCloud generate_scene(const SceneSpec& spec, std::uint64_t seed);

}  // namespace ps2::data
