#pragma once

// Subcommands of the ps2net tool, callable without going through argv.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "ps2/dataio.hpp"

namespace ps2::cli {

namespace fs = std::filesystem;

// Writes <out>/train/scene_NNN.pscloud and <out>/test/scene_NNN.pscloud.
void synth(const fs::path& spec, std::uint64_t seed, const fs::path& out, std::ostream& log);

// Partitions every room cloud under `in` (or under in/train and in/test,
// mirrored into out/train and out/test) into a block set.
void prep(data::Setup setup, const fs::path& in, const fs::path& out, std::uint64_t seed, std::ostream& log);

void train(const fs::path& data, const fs::path& config, std::size_t epochs, std::size_t batch, std::uint64_t seed,
           const fs::path& out, std::ostream& log);

// Labels a room cloud; the output carries predicted labels and class colors.
void predict(const fs::path& ckpt, const fs::path& in, const fs::path& out, std::ostream& log);

void evaluate(const fs::path& ckpt, const fs::path& data, const fs::path& report, std::ostream& log);

void ablate(const fs::path& data, const fs::path& config, std::uint64_t seed, const fs::path& report,
            std::ostream& log);

void sweep(const fs::path& data, const fs::path& config, const std::string& param, const std::string& values,
           std::uint64_t seed, const fs::path& report, std::ostream& log);

// Returns the process exit code: 0 when every check passes.
int check(const std::string& mode, std::ostream& log);

// Full command line; returns the exit code.
int run(int argc, char** argv);

}  // namespace ps2::cli
