#include <cmath>
#include <memory>

#include "ps2/layers.hpp"
#include "ps2/random.hpp"

namespace ps2::nn {

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels)
    : gamma(Tensor<T>::full({channels}, T(1), true)),
      beta(Tensor<T>::zeros({channels}, true)),
      running_mean(Tensor<T>::zeros({channels})),
      running_var(Tensor<T>::full({channels}, T(1))) {}

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNorm<T>& bn, Mode mode, bool freeze) {
  const std::size_t c = bn.gamma.numel();
  if (x.rank() == 0 || x.shape().back() != c) {
    throw DimensionError("batch_norm: input " + shape_str(x.shape()) + " does not have " +
                         std::to_string(c) + " channels");
  }
  const std::size_t rows = x.numel() / c;
  const bool batch_stats = mode == Mode::train && !freeze && !bn.frozen_stats;
  if (batch_stats && rows < 2) {
    throw ContractError("batch_norm: train mode needs at least 2 rows (got " +
                        std::to_string(rows) + ") unless statistics are frozen");
  }

  std::vector<T> mean(c), inv_std(c);
  const T* px = x.data().data();
  if (batch_stats) {
    std::vector<double> s(c, 0.0), ss(c, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = px + r * c;
      for (std::size_t j = 0; j < c; ++j) s[j] += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) s[j] /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = px + r * c;
      for (std::size_t j = 0; j < c; ++j) {
        const double d = row[j] - s[j];
        ss[j] += d * d;
      }
    }
    auto rm = bn.running_mean.mutable_data();
    auto rv = bn.running_var.mutable_data();
    const double m = bn.momentum;
    for (std::size_t j = 0; j < c; ++j) {
      const double var = ss[j] / static_cast<double>(rows);
      const double unbiased = ss[j] / static_cast<double>(rows - 1);
      mean[j] = static_cast<T>(s[j]);
      inv_std[j] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(bn.eps)));
      rm[j] = static_cast<T>((1.0 - m) * rm[j] + m * s[j]);
      rv[j] = static_cast<T>((1.0 - m) * rv[j] + m * unbiased);
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mean[j] = bn.running_mean.data()[j];
      inv_std[j] = T(1) / std::sqrt(bn.running_var.data()[j] + bn.eps);
    }
  }

  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> out(x.numel());
  const T* g = bn.gamma.data().data();
  const T* b = bn.beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = px + r * c;
    T* xh = xhat->data() + r * c;
    T* o = out.data() + r * c;
    for (std::size_t j = 0; j < c; ++j) {
      xh[j] = (row[j] - mean[j]) * inv_std[j];
      o[j] = g[j] * xh[j] + b[j];
    }
  }

  return record_op<T>(
      "batch_norm", Tensor<T>(x.shape(), std::move(out)), {&x, &bn.gamma, &bn.beta},
      [x, gamma = bn.gamma, beta = bn.beta, xhat, inv_std = std::move(inv_std), rows, c,
       batch_stats](std::span<const T> dy) {
        const T* xh = xhat->data();
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* d = dy.data() + r * c;
          const T* h = xh + r * c;
          for (std::size_t j = 0; j < c; ++j) {
            sum_dy[j] += d[j];
            sum_dy_xhat[j] += d[j] * h[j];
          }
        }
        if (gamma.requires_grad()) {
          auto gg = gamma.grad_buffer();
          for (std::size_t j = 0; j < c; ++j) gg[j] += static_cast<T>(sum_dy_xhat[j]);
        }
        if (beta.requires_grad()) {
          auto gb = beta.grad_buffer();
          for (std::size_t j = 0; j < c; ++j) gb[j] += static_cast<T>(sum_dy[j]);
        }
        if (!x.requires_grad()) return;
        auto gx = x.grad_buffer();
        const T* g = gamma.data().data();
        if (batch_stats) {
          // dx = gamma * inv_std / B * (B dy - sum(dy) - xhat * sum(dy xhat))
          const T inv_rows = T(1) / static_cast<T>(rows);
          std::vector<T> k0(c), k1(c), k2(c);
          for (std::size_t j = 0; j < c; ++j) {
            k0[j] = g[j] * inv_std[j];
            k1[j] = static_cast<T>(sum_dy[j]) * inv_rows;
            k2[j] = static_cast<T>(sum_dy_xhat[j]) * inv_rows;
          }
          for (std::size_t r = 0; r < rows; ++r) {
            const T* d = dy.data() + r * c;
            const T* h = xh + r * c;
            T* o = gx.data() + r * c;
            for (std::size_t j = 0; j < c; ++j) o[j] += k0[j] * (d[j] - k1[j] - h[j] * k2[j]);
          }
        } else {
          for (std::size_t r = 0; r < rows; ++r) {
            const T* d = dy.data() + r * c;
            T* o = gx.data() + r * c;
            for (std::size_t j = 0; j < c; ++j) o[j] += d[j] * g[j] * inv_std[j];
          }
        }
      });
}

template <typename T>
SharedMlp<T> make_shared_mlp(std::size_t in, std::size_t out, bool batch_norm, bool activation,
                             std::mt19937_64& rng) {
  if (in == 0 || out == 0) throw ContractError("shared MLP needs nonzero widths");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<T> w(in * out);
  for (auto& v : w) v = static_cast<T>(uniform(rng, -bound, bound));
  SharedMlp<T> mlp{Tensor<T>({in, out}, std::move(w), true), Tensor<T>::zeros({out}, true),
                   std::nullopt, activation};
  if (batch_norm) mlp.bn.emplace(out);
  return mlp;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const SharedMlp<T>& mlp) {
  const std::size_t in = mlp.in_features();
  if (x.rank() == 0 || x.shape().back() != in) {
    throw ContractError("shared MLP expects " + std::to_string(in) + " input channels, got " +
                        shape_str(x.shape()));
  }
  if (x.rank() == 2) return add_bias(matmul(x, mlp.weight), mlp.bias);
  Shape out_shape = x.shape();
  out_shape.back() = mlp.out_features();
  auto flat = reshape(x, {x.numel() / in, in});
  return reshape(add_bias(matmul(flat, mlp.weight), mlp.bias), std::move(out_shape));
}

template <typename T>
Tensor<T> normalize_activate(const Tensor<T>& pre, SharedMlp<T>& mlp, Mode mode, bool freeze) {
  Tensor<T> h = mlp.bn ? batchnorm_forward(pre, *mlp.bn, mode, freeze) : pre;
  return mlp.activation ? relu(h) : h;
}

template <typename T>
Tensor<T> shared_mlp_forward(const Tensor<T>& x, SharedMlp<T>& mlp, Mode mode, bool freeze) {
  return normalize_activate(linear(x, mlp), mlp, mode, freeze);
}

#define PS2_INSTANTIATE(T)                                                                   \
  template struct BatchNorm<T>;                                                              \
  template Tensor<T> batchnorm_forward(const Tensor<T>&, BatchNorm<T>&, Mode, bool);         \
  template SharedMlp<T> make_shared_mlp(std::size_t, std::size_t, bool, bool,                \
                                        std::mt19937_64&);                                   \
  template Tensor<T> linear(const Tensor<T>&, const SharedMlp<T>&);                          \
  template Tensor<T> normalize_activate(const Tensor<T>&, SharedMlp<T>&, Mode, bool);        \
  template Tensor<T> shared_mlp_forward(const Tensor<T>&, SharedMlp<T>&, Mode, bool);

PS2_INSTANTIATE(float)
PS2_INSTANTIATE(double)
#undef PS2_INSTANTIATE

}  // namespace ps2::nn
