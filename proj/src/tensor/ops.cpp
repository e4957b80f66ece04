#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "ps2/tensor.hpp"

namespace ps2 {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// Gradient buffer of an input, or an empty span when it takes no gradient.
template <typename T>
std::span<T> grad_of(const Tensor<T>& t) {
  return t.requires_grad() ? t.grad_buffer() : std::span<T>();
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(s));
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

void require_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(s));
  }
}

// Splits a shape around `axis` into (outer, length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename T>
Tensor<T> elementwise_binary(const char* name, const Tensor<T>& a, const Tensor<T>& b, int kind) {
  require_same_shape(a.shape(), b.shape(), name);
  const auto n = a.numel();
  std::vector<T> out(n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  switch (kind) {
    case 0: for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i]; break;
    case 1: for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i]; break;
    default: for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i]; break;
  }
  return record_op<T>(name, Tensor<T>(a.shape(), std::move(out)), {&a, &b},
                      [a, b, kind](std::span<const T> g) {
                        auto ga = grad_of(a);
                        auto gb = grad_of(b);
                        const auto n = g.size();
                        if (!ga.empty()) {
                          if (kind == 2) {
                            const T* pb = b.data().data();
                            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
                          } else {
                            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                          }
                        }
                        if (!gb.empty()) {
                          if (kind == 2) {
                            const T* pa = a.data().data();
                            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
                          } else if (kind == 1) {
                            for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
                          } else {
                            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
                          }
                        }
                      });
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  MapMat<T>(out.data(), m, n).noalias() =
      ConstMapMat<T>(a.data().data(), m, k) * ConstMapMat<T>(b.data().data(), k, n);
  return record_op<T>("matmul", Tensor<T>({m, n}, std::move(out)), {&a, &b},
                      [a, b, m, k, n](std::span<const T> g) {
                        ConstMapMat<T> dc(g.data(), m, n);
                        if (a.requires_grad()) {
                          MapMat<T>(a.grad_buffer().data(), m, k).noalias() +=
                              dc * ConstMapMat<T>(b.data().data(), k, n).transpose();
                        }
                        if (b.requires_grad()) {
                          MapMat<T>(b.grad_buffer().data(), k, n).noalias() +=
                              ConstMapMat<T>(a.data().data(), m, k).transpose() * dc;
                        }
                      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a.shape(), 2, "transpose");
  const auto r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  MapMat<T>(out.data(), c, r) = ConstMapMat<T>(a.data().data(), r, c).transpose();
  return record_op<T>("transpose", Tensor<T>({c, r}, std::move(out)), {&a},
                      [a, r, c](std::span<const T> g) {
                        MapMat<T>(a.grad_buffer().data(), r, c) +=
                            ConstMapMat<T>(g.data(), c, r).transpose();
                      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary("add", a, b, 0);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary("sub", a, b, 1);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary("mul", a, b, 2);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return record_op<T>("scale", Tensor<T>(a.shape(), std::move(out)), {&a},
                      [a, factor](std::span<const T> g) {
                        auto ga = a.grad_buffer();
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                      });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() == 0 || bias.rank() != 1 || bias.dim(0) != x.shape().back()) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match trailing axis of " + shape_str(x.shape()));
  }
  const auto c = bias.dim(0);
  const auto rows = x.numel() / std::max<std::size_t>(c, 1);
  std::vector<T> out(x.data().begin(), x.data().end());
  const T* pb = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * c;
    for (std::size_t j = 0; j < c; ++j) row[j] += pb[j];
  }
  return record_op<T>("add_bias", Tensor<T>(x.shape(), std::move(out)), {&x, &bias},
                      [x, bias, rows, c](std::span<const T> g) {
                        auto gx = grad_of(x);
                        if (!gx.empty()) {
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                        }
                        auto gb = grad_of(bias);
                        if (!gb.empty()) {
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* row = g.data() + r * c;
                            for (std::size_t j = 0; j < c; ++j) gb[j] += row[j];
                          }
                        }
                      });
}

template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
  require_rank(x.shape(), 2, "scale_rows");
  const auto r = x.dim(0), c = x.dim(1);
  if (s.numel() != r) {
    throw DimensionError("scale_rows: scale " + shape_str(s.shape()) + " vs rows of " +
                         shape_str(x.shape()));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < r; ++i) {
    const T f = s.data()[i];
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= f;
  }
  return record_op<T>("scale_rows", Tensor<T>(x.shape(), std::move(out)), {&x, &s},
                      [x, s, r, c](std::span<const T> g) {
                        auto gx = grad_of(x);
                        auto gs = grad_of(s);
                        for (std::size_t i = 0; i < r; ++i) {
                          const T* gi = g.data() + i * c;
                          if (!gx.empty()) {
                            const T f = s.data()[i];
                            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gi[j] * f;
                          }
                          if (!gs.empty()) {
                            const T* xi = x.data().data() + i * c;
                            T acc = 0;
                            for (std::size_t j = 0; j < c; ++j) acc += gi[j] * xi[j];
                            gs[i] += acc;
                          }
                        }
                      });
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  require_axis(first, axis, "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " +
                           shape_str(s) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const auto split = split_at(out_shape, axis);
  const std::size_t out_chunk = split.len * split.inner;
  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.shape()[axis] * split.inner;
    const T* src = p.data().data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(src + o * chunk, chunk, out.data() + o * out_chunk + offset);
    }
    offset += chunk;
  }
  std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
  Tensor<T> result(std::move(out_shape), std::move(out));
  auto* tape = Tape<T>::active();
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor<T>& t) { return t.requires_grad(); });
  if (tape == nullptr || !any) return result;
  // record_op takes a fixed list; mark the first input that needs a gradient.
  const Tensor<T>* marker = nullptr;
  for (const auto& t : inputs) {
    if (t.requires_grad()) marker = &t;
  }
  return record_op<T>("concat", std::move(result), {marker},
                      [inputs, offsets, split, out_chunk, axis](std::span<const T> g) {
                        for (std::size_t p = 0; p < inputs.size(); ++p) {
                          auto gp = grad_of(inputs[p]);
                          if (gp.empty()) continue;
                          const std::size_t chunk = inputs[p].shape()[axis] * split.inner;
                          for (std::size_t o = 0; o < split.outer; ++o) {
                            const T* src = g.data() + o * out_chunk + offsets[p];
                            T* dst = gp.data() + o * chunk;
                            for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                          }
                        }
                      });
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
  const Tensor<T> parts[] = {a, b};
  return concat<T>(std::span<const Tensor<T>>(parts), axis);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return record_op<T>("reshape", Tensor<T>(std::move(shape), std::move(out)), {&x},
                      [x](std::span<const T> g) {
                        auto gx = x.grad_buffer();
                        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                      });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin > end || end > x.dim(0)) {
    throw IndexError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for shape " + shape_str(x.shape()));
  }
  const std::size_t row = x.numel() / std::max<std::size_t>(x.dim(0), 1);
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<T> out(x.data().begin() + begin * row, x.data().begin() + end * row);
  return record_op<T>("slice_rows", Tensor<T>(std::move(shape), std::move(out)), {&x},
                      [x, begin, row](std::span<const T> g) {
                        T* gx = x.grad_buffer().data() + begin * row;
                        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] > T(0) ? px[i] : T(0);
  return record_op<T>("relu", Tensor<T>(x.shape(), std::move(out)), {&x},
                      [x](std::span<const T> g) {
                        auto gx = x.grad_buffer();
                        const T* px = x.data().data();
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          if (px[i] > T(0)) gx[i] += g[i];
                        }
                      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require_axis(x.shape(), axis, "softmax");
  const auto sp = split_at(x.shape(), axis);
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, px[base + l * sp.inner]);
      T denom = 0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const T e = std::exp(px[base + l * sp.inner] - mx);
        out[base + l * sp.inner] = e;
        denom += e;
      }
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= denom;
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  auto y = result;  // shares the value buffer for the backward rule
  return record_op<T>("softmax", std::move(result), {&x},
                      [x, y, sp](std::span<const T> g) {
                        auto gx = x.grad_buffer();
                        const T* py = y.data().data();
                        for (std::size_t o = 0; o < sp.outer; ++o) {
                          for (std::size_t in = 0; in < sp.inner; ++in) {
                            const std::size_t base = o * sp.len * sp.inner + in;
                            T dot = 0;
                            for (std::size_t l = 0; l < sp.len; ++l) {
                              dot += g[base + l * sp.inner] * py[base + l * sp.inner];
                            }
                            for (std::size_t l = 0; l < sp.len; ++l) {
                              const auto i = base + l * sp.inner;
                              gx[i] += py[i] * (g[i] - dot);
                            }
                          }
                        }
                      });
}

template <typename T>
Tensor<T> reduce(const Tensor<T>& x, std::size_t axis, ReduceMode mode) {
  require_axis(x.shape(), axis, "reduce");
  const auto sp = split_at(x.shape(), axis);
  if (sp.len == 0) throw DimensionError("reduce: empty axis in shape " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(sp.outer * sp.inner, T(0));
  std::vector<std::uint32_t> argmax;
  const T* px = x.data().data();
  if (mode == ReduceMode::max) {
    argmax.assign(out.size(), 0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const T* block = px + o * sp.len * sp.inner;
      T* dst = out.data() + o * sp.inner;
      std::uint32_t* arg = argmax.data() + o * sp.inner;
      std::copy_n(block, sp.inner, dst);
      for (std::size_t l = 1; l < sp.len; ++l) {
        const T* row = block + l * sp.inner;
        for (std::size_t in = 0; in < sp.inner; ++in) {
          // strict comparison keeps the lowest index on ties
          if (row[in] > dst[in]) {
            dst[in] = row[in];
            arg[in] = static_cast<std::uint32_t>(l);
          }
        }
      }
    }
  } else {
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const T* block = px + o * sp.len * sp.inner;
      T* dst = out.data() + o * sp.inner;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const T* row = block + l * sp.inner;
        for (std::size_t in = 0; in < sp.inner; ++in) dst[in] += row[in];
      }
    }
    if (mode == ReduceMode::mean) {
      const T inv = T(1) / static_cast<T>(sp.len);
      for (auto& v : out) v *= inv;
    }
  }
  const char* name = mode == ReduceMode::max ? "reduce_max"
                     : mode == ReduceMode::mean ? "reduce_mean"
                                                : "reduce_sum";
  return record_op<T>(name, Tensor<T>(std::move(out_shape), std::move(out)), {&x},
                      [x, sp, mode, argmax = std::move(argmax)](std::span<const T> g) {
                        auto gx = x.grad_buffer();
                        for (std::size_t o = 0; o < sp.outer; ++o) {
                          T* block = gx.data() + o * sp.len * sp.inner;
                          const T* src = g.data() + o * sp.inner;
                          if (mode == ReduceMode::max) {
                            const std::uint32_t* arg = argmax.data() + o * sp.inner;
                            for (std::size_t in = 0; in < sp.inner; ++in) {
                              block[arg[in] * sp.inner + in] += src[in];
                            }
                          } else {
                            const T f = mode == ReduceMode::mean
                                            ? T(1) / static_cast<T>(sp.len)
                                            : T(1);
                            for (std::size_t l = 0; l < sp.len; ++l) {
                              T* row = block + l * sp.inner;
                              for (std::size_t in = 0; in < sp.inner; ++in) row[in] += src[in] * f;
                            }
                          }
                        }
                      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (auto v : x.data()) acc += v;
  return record_op<T>("sum", Tensor<T>::scalar(acc), {&x}, [x](std::span<const T> g) {
    auto gx = x.grad_buffer();
    for (auto& v : gx) v += g[0];
  });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, std::size_t axis, T eps) {
  require_axis(x.shape(), axis, "l2_normalize");
  const auto sp = split_at(x.shape(), axis);
  std::vector<T> out(x.data().begin(), x.data().end());
  // Per-slice norm; slices below eps pass through unchanged (marked by 0).
  std::vector<T> inv_norm(sp.outer * sp.inner, T(0));
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      T ss = 0;
      for (std::size_t l = 0; l < sp.len; ++l) ss += out[base + l * sp.inner] * out[base + l * sp.inner];
      const T norm = std::sqrt(ss);
      if (norm < eps) continue;
      const T inv = T(1) / norm;
      inv_norm[o * sp.inner + in] = inv;
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] *= inv;
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  auto y = result;
  return record_op<T>(
      "l2_normalize", std::move(result), {&x},
      [x, y, sp, inv_norm = std::move(inv_norm)](std::span<const T> g) {
        auto gx = x.grad_buffer();
        const T* py = y.data().data();
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.len * sp.inner + in;
            const T inv = inv_norm[o * sp.inner + in];
            if (inv == T(0)) {
              for (std::size_t l = 0; l < sp.len; ++l) gx[base + l * sp.inner] += g[base + l * sp.inner];
              continue;
            }
            T dot = 0;
            for (std::size_t l = 0; l < sp.len; ++l) dot += py[base + l * sp.inner] * g[base + l * sp.inner];
            for (std::size_t l = 0; l < sp.len; ++l) {
              const auto i = base + l * sp.inner;
              gx[i] += (g[i] - py[i] * dot) * inv;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const IndexMatrix& idx) {
  require_rank(x.shape(), 2, "gather_rows");
  const auto n = x.dim(0), f = x.dim(1);
  if (idx.data.size() != idx.rows * idx.cols) {
    throw DimensionError("gather_rows: index matrix storage does not match its extents");
  }
  for (std::size_t i = 0; i < idx.data.size(); ++i) {
    if (idx.data[i] >= n) {
      throw IndexError("gather_rows: index " + std::to_string(idx.data[i]) + " at (" +
                       std::to_string(i / std::max<std::size_t>(idx.cols, 1)) + ", " +
                       std::to_string(i % std::max<std::size_t>(idx.cols, 1)) +
                       ") out of range for " + std::to_string(n) + " rows");
    }
  }
  std::vector<T> out(idx.data.size() * f);
  const T* px = x.data().data();
  for (std::size_t e = 0; e < idx.data.size(); ++e) {
    std::copy_n(px + static_cast<std::size_t>(idx.data[e]) * f, f, out.data() + e * f);
  }
  auto shared_idx = std::make_shared<const IndexMatrix>(idx);
  return record_op<T>("gather_rows", Tensor<T>({idx.rows, idx.cols, f}, std::move(out)), {&x},
                      [x, shared_idx, f](std::span<const T> g) {
                        auto gx = x.grad_buffer();
                        const auto& ids = shared_idx->data;
                        for (std::size_t e = 0; e < ids.size(); ++e) {
                          T* dst = gx.data() + static_cast<std::size_t>(ids[e]) * f;
                          const T* src = g.data() + e * f;
                          for (std::size_t j = 0; j < f; ++j) dst[j] += src[j];
                        }
                      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, std::mt19937_64& rng) {
  if (p < T(0) || p >= T(1)) {
    throw ContractError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (p == T(0)) return x;
  const T keep_scale = T(1) / (T(1) - p);
  std::vector<T> mask(x.numel());
  for (auto& m : mask) {
    // 53 random bits -> uniform in [0, 1); independent of the library's distributions
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < static_cast<double>(p) ? T(0) : keep_scale;
  }
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] * mask[i];
  return record_op<T>("dropout", Tensor<T>(x.shape(), std::move(out)), {&x},
                      [x, mask = std::move(mask)](std::span<const T> g) {
                        auto gx = x.grad_buffer();
                        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                      });
}

#define PS2_INSTANTIATE(T)                                                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> transpose(const Tensor<T>&);                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                           \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> scale_rows(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> concat(const Tensor<T>&, const Tensor<T>&, std::size_t);              \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                      \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                     \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);               \
  template Tensor<T> relu(const Tensor<T>&);                                               \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> reduce(const Tensor<T>&, std::size_t, ReduceMode);                    \
  template Tensor<T> sum(const Tensor<T>&);                                                \
  template Tensor<T> l2_normalize(const Tensor<T>&, std::size_t, T);                       \
  template Tensor<T> gather_rows(const Tensor<T>&, const IndexMatrix&);                    \
  template Tensor<T> dropout(const Tensor<T>&, T, std::mt19937_64&);

PS2_INSTANTIATE(float)
PS2_INSTANTIATE(double)
#undef PS2_INSTANTIATE

}  // namespace ps2
