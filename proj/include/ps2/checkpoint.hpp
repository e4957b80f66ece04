#pragma once

// Binary checkpoint container.
//
//   "PS2CKPT\0"  u32 version
//   u32 header bytes, header text: one "key=value" line per entry
//   u32 record count, then per record:
//     u32 name bytes, name, u8 kind (0 param, 1 buffer, 2 adam_m, 3 adam_v),
//     u32 rank, rank x u64 dims, numel x f64 values
// All integers and floats little-endian. Reading and re-writing a file
// reproduces it byte for byte.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ps2/network.hpp"
#include "ps2/train.hpp"

namespace ps2::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class RecordKind : std::uint8_t { param = 0, buffer = 1, adam_m = 2, adam_v = 3 };

struct CheckpointRecord {
  std::string name;
  RecordKind kind = RecordKind::param;
  Shape shape;
  std::vector<double> values;

  bool operator==(const CheckpointRecord&) const = default;
};

struct CheckpointFile {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<CheckpointRecord> records;

  // Value for `key`; ContractError when absent.
  const std::string& get(const std::string& key) const;
  bool operator==(const CheckpointFile&) const = default;
};

void write_checkpoint(const CheckpointFile& file, std::ostream& out);
void write_checkpoint(const CheckpointFile& file, const std::filesystem::path& path);
// DataError for a bad magic, version or truncated content.
CheckpointFile read_checkpoint(std::istream& in);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  TrainOptions options;
};

// Header holds the network config, training options, Adam constants, seed,
// epoch, optimizer step and the init scheme; records hold every named
// tensor followed by the Adam moments.
template <typename T>
CheckpointFile make_checkpoint(nn::Model<T>& model, const nn::OptimizerState<T>& optimizer,
                               const CheckpointMeta& meta);

RunConfig checkpoint_config(const CheckpointFile& file);

template <typename T>
nn::Model<T> restore_model(const CheckpointFile& file);
template <typename T>
nn::OptimizerState<T> restore_optimizer(const CheckpointFile& file, nn::Model<T>& model);

}  // namespace ps2::train
