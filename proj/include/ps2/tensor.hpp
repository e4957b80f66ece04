#pragma once

// Dense tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle to a node holding the value buffer, its shape and
// (once backward has reached it) a gradient buffer. Operations executed while
// a Tape is active on the current thread, and that consume at least one tensor
// requiring gradients, append a backward rule to that tape. Tape::backward
// replays the rules in reverse recording order, after which the tape is spent.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ps2/error.hpp"

namespace ps2 {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Row-major rows x cols matrix of row indices, used for neighbor lookup.
struct IndexMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> data;

  IndexMatrix() = default;
  IndexMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}

  std::uint32_t& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  std::uint32_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const std::uint32_t> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  bool operator==(const IndexMatrix&) const = default;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // tape that produced this node; 0 for leaves
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Writable view of the values. Only meant for leaves (parameters, buffers):
  // values captured by recorded backward rules must stay unchanged until the
  // tape has been replayed.
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  // Gradient buffer, allocated (zero-filled) on first access.
  std::span<T> grad_buffer() const;
  void zero_grad() const;

  // Value copy detached from any tape.
  Tensor clone() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  TensorNode<T>& node() { return *node_; }
  const TensorNode<T>& node() const { return *node_; }
  std::shared_ptr<TensorNode<T>> node_ptr() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

template <typename T>
class Tape {
 public:
  using Rule = std::function<void()>;

  // Constructing a tape makes it the active tape of the calling thread until
  // it is destroyed. Tapes nest; the innermost one records.
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }
  // Names of the recorded operations in recording order.
  std::vector<std::string> op_names() const;

  void record(const char* name, std::shared_ptr<TensorNode<T>> output, Rule rule);

  // Seeds d(loss)/d(loss) = 1 and replays all rules in reverse order.
  void backward(const Tensor<T>& loss);

 private:
  struct Record {
    const char* name;
    std::shared_ptr<TensorNode<T>> output;
    Rule rule;
  };

  std::uint64_t id_;
  std::vector<Record> records_;
  std::vector<std::string> spent_names_;
  bool consumed_ = false;
  Tape* previous_;
};

// Runs backward on the tape active on this thread.
template <typename T>
void backward(const Tensor<T>& loss);

// Hook for building new differentiable operations out of tape primitives.
// `output` is the freshly computed result; `rule` reads the output gradient
// and accumulates into inputs. Nothing is recorded when no tape is active or
// none of `inputs` requires gradients.
template <typename T>
Tensor<T> record_op(const char* name, Tensor<T> output,
                    std::initializer_list<const Tensor<T>*> inputs,
                    std::function<void(std::span<const T> out_grad)> rule);

enum class ReduceMode { max, mean, sum };

// --- operations -------------------------------------------------------------

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
// x[..., C] + bias[C], broadcast over all leading axes.
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
// out[r, :] = x[r, :] * s[r] for x of shape R x C and s of length R.
template <typename T> Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s);

template <typename T> Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis);
template <typename T> Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
// Rows [begin, end) along axis 0.
template <typename T> Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
template <typename T> Tensor<T> reduce(const Tensor<T>& x, std::size_t axis, ReduceMode mode);
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& x, std::size_t axis, T eps);

// x[N x F], idx[R x K] -> out[R x K x F] with out[r][k] = x[idx(r, k)].
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, const IndexMatrix& idx);

// Inverted dropout: zeroes each element with probability p and scales the
// survivors by 1 / (1 - p).
template <typename T> Tensor<T> dropout(const Tensor<T>& x, T p, std::mt19937_64& rng);

}  // namespace ps2
