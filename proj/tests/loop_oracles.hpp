#pragma once

// Straight-loop reference implementations of the layers, written without the
// tensor library, for comparison against the real forward passes.

#include <algorithm>
#include <cmath>
#include <vector>

#include "ps2/layers.hpp"

namespace ps2::oracle {

using nn::EdgeConvParams;
using nn::NetVladParams;
using nn::SharedMlp;
using Rows = std::vector<std::vector<double>>;

inline Rows to_rows(const Tensor<double>& t) {
  const std::size_t c = t.shape().back(), n = t.numel() / c;
  Rows r(n, std::vector<double>(c));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) r[i][j] = t.data()[i * c + j];
  return r;
}

// Straight-line shared MLP: affine, batch norm over the given rows, ReLU.
inline Rows oracle_mlp(const Rows& in, const SharedMlp<double>& mlp, bool train) {
  const std::size_t fi = mlp.in_features(), fo = mlp.out_features();
  const auto& w = mlp.weight.data();
  Rows z(in.size(), std::vector<double>(fo));
  for (std::size_t r = 0; r < in.size(); ++r)
    for (std::size_t o = 0; o < fo; ++o) {
      double s = mlp.bias.data()[o];
      for (std::size_t i = 0; i < fi; ++i) s += in[r][i] * w[i * fo + o];
      z[r][o] = s;
    }
  if (mlp.bn) {
    const auto& bn = *mlp.bn;
    for (std::size_t o = 0; o < fo; ++o) {
      double mean = bn.running_mean.data()[o], var = bn.running_var.data()[o];
      if (train) {
        mean = 0;
        for (const auto& row : z) mean += row[o];
        mean /= z.size();
        var = 0;
        for (const auto& row : z) var += (row[o] - mean) * (row[o] - mean);
        var /= z.size();
      }
      for (auto& row : z)
        row[o] = bn.gamma.data()[o] * (row[o] - mean) / std::sqrt(var + bn.eps) + bn.beta.data()[o];
    }
  }
  if (mlp.activation)
    for (auto& row : z)
      for (auto& v : row) v = std::max(v, 0.0);
  return z;
}

inline Rows oracle_edgeconv(const Rows& x, const knn::KnnGraph& g, const EdgeConvParams<double>& p,
                     bool train) {
  const std::size_t n = x.size(), k = g.k(), f = x[0].size();
  Rows h;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<double> e(2 * f);
      for (std::size_t c = 0; c < f; ++c) {
        e[c] = x[i][c];
        e[f + c] = x[g.indices(i, j)][c] - x[i][c];
      }
      h.push_back(e);
    }
  auto e = oracle_mlp(oracle_mlp(h, p.mlp1, train), p.mlp2, train);
  const std::size_t w = e[0].size();
  Rows pooled(n, std::vector<double>(2 * w));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < w; ++c) {
      double mx = -INFINITY, sum = 0;
      for (std::size_t j = 0; j < k; ++j) {
        mx = std::max(mx, e[i * k + j][c]);
        sum += e[i * k + j][c];
      }
      pooled[i][c] = mx;
      pooled[i][w + c] = sum / k;
    }
  return oracle_mlp(pooled, p.mlp_out, train);
}

struct OracleVlad {
  Rows assignment, residuals;
  std::vector<double> descriptor;
};

inline OracleVlad oracle_netvlad(const Rows& y, const NetVladParams<double>& p) {
  const std::size_t n = y.size(), m = p.clusters(), d = p.feature_width();
  const auto& w = p.assign_weight.data();
  OracleVlad out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> logits(m);
    for (std::size_t c = 0; c < m; ++c) {
      logits[c] = p.assign_bias.data()[c];
      for (std::size_t t = 0; t < d; ++t) logits[c] += w[t * m + c] * y[i][t];
    }
    double denom = 0;
    for (auto l : logits) denom += std::exp(l);
    for (auto& l : logits) l = std::exp(l) / denom;
    out.assignment.push_back(logits);
  }
  out.residuals.assign(m, std::vector<double>(d, 0.0));
  for (std::size_t c = 0; c < m; ++c)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < d; ++t)
        out.residuals[c][t] += out.assignment[i][c] * (y[i][t] - p.centers.data()[c * d + t]);
  for (const auto& v : out.residuals) {
    double norm = 0;
    for (auto a : v) norm += a * a;
    norm = std::sqrt(norm);
    for (auto a : v) out.descriptor.push_back(norm > 0 ? a / norm : a);
  }
  double norm = 0;
  for (auto a : out.descriptor) norm += a * a;
  norm = std::sqrt(norm);
  for (auto& a : out.descriptor) a /= norm;
  return out;
}

}  // namespace ps2::oracle
