#pragma once

// Self-checks run by `ps2net check`. Each returns one result per checked
// property; all pass or the command fails.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ps2::check {

struct CheckResult {
  std::string name;
  bool passed = false;
  double worst = 0;      // largest observed error
  double tolerance = 0;
  std::size_t samples = 0;
  double seconds = 0;
  std::string detail;
};

// Eval-mode logits of 20 random clouds (N=256, f0=3, L=5, default network,
// double precision) follow any row permutation of the input.
CheckResult permutation(std::uint64_t seed = 1, std::size_t clouds = 20);

// Analytic gradients of a cross-entropy loss through encoders and head
// against central differences, per layer type, both modes.
std::vector<CheckResult> gradients(std::uint64_t seed = 1, std::size_t per_type = 200);

// k-d tree graphs against exhaustive search on random clouds.
CheckResult knn_oracle(std::uint64_t seed = 1, std::size_t clouds = 50);

// "gradients" | "permutation" | "knn-oracle"; ContractError otherwise.
std::vector<CheckResult> run_checks(std::string_view mode);

std::string format_result(const CheckResult& r);

}  // namespace ps2::check
