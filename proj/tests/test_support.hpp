#pragma once

// Shared helpers for the test suites: seeded random tensors and a central
// finite-difference gradient oracle that only ever calls the forward pass.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ps2/tensor.hpp"

namespace ps2::testing {

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

// Central difference d loss / d value[i] with the given step.
inline double central_difference(Tensor<double>& t, std::size_t i,
                                 const std::function<double()>& loss, double eps = 1e-5) {
  auto data = t.mutable_data();
  const double saved = data[i];
  data[i] = saved + eps;
  const double up = loss();
  data[i] = saved - eps;
  const double down = loss();
  data[i] = saved;
  return (up - down) / (2.0 * eps);
}

// Relative error with a floor on the denominator so that gradients which are
// zero up to rounding do not blow the ratio up.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace ps2::testing
