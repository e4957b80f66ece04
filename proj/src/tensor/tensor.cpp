#include "ps2/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

namespace ps2 {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor() : node_(std::make_shared<TensorNode<T>>()) {
  node_->shape = {0};
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) {
    throw DimensionError("index rank mismatch for shape " + shape_str(shape()));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) {
      throw IndexError("index " + std::to_string(i) + " out of range on axis " +
                       std::to_string(axis) + " of " + shape_str(shape()));
    }
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

template <typename T>
std::span<T> Tensor<T>::grad_buffer() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() const {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(node_->shape, node_->data, node_->requires_grad);
}

// --- Tape -------------------------------------------------------------------

namespace {

std::atomic<std::uint64_t> next_tape_id{1};

template <typename T>
Tape<T>*& active_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

}  // namespace

template <typename T>
Tape<T>::Tape() : id_(next_tape_id.fetch_add(1)), previous_(active_slot<T>()) {
  active_slot<T>() = this;
}

template <typename T>
Tape<T>::~Tape() {
  active_slot<T>() = previous_;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return active_slot<T>();
}

template <typename T>
std::vector<std::string> Tape<T>::op_names() const {
  if (consumed_) return spent_names_;
  std::vector<std::string> names;
  names.reserve(records_.size());
  for (const auto& r : records_) names.emplace_back(r.name);
  return names;
}

template <typename T>
void Tape<T>::record(const char* name, std::shared_ptr<TensorNode<T>> output, Rule rule) {
  if (consumed_) {
    throw ContractError("recording '" + std::string(name) +
                        "' on a tape that was already replayed; start a new tape per forward pass");
  }
  output->tape_id = id_;
  records_.push_back({name, std::move(output), std::move(rule)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) {
    throw ContractError("backward called twice on the same tape without a new forward pass");
  }
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (loss.node().tape_id != id_) {
    throw ContractError("loss was not produced on this tape");
  }
  auto& root = const_cast<TensorNode<T>&>(loss.node());
  root.grad.assign(1, T(1));
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not reachable from the loss
    it->rule();
  }
  spent_names_.reserve(records_.size());
  for (const auto& r : records_) spent_names_.emplace_back(r.name);
  records_.clear();
  records_.shrink_to_fit();
  consumed_ = true;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  auto* tape = Tape<T>::active();
  if (tape == nullptr) throw ContractError("backward called with no active tape");
  tape->backward(loss);
}

template <typename T>
Tensor<T> record_op(const char* name, Tensor<T> output,
                    std::initializer_list<const Tensor<T>*> inputs,
                    std::function<void(std::span<const T> out_grad)> rule) {
  auto* tape = Tape<T>::active();
  if (tape == nullptr) return output;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor<T>* t) { return t->requires_grad(); });
  if (!any) return output;
  output.set_requires_grad(true);
  auto node = output.node_ptr();
  TensorNode<T>* raw = node.get();
  tape->record(name, std::move(node),
               [raw, rule = std::move(rule)] { rule(std::span<const T>(raw->grad)); });
  return output;
}

#define PS2_INSTANTIATE(T)                                                             \
  template class Tensor<T>;                                                            \
  template class Tape<T>;                                                              \
  template void backward<T>(const Tensor<T>&);                                         \
  template Tensor<T> record_op<T>(const char*, Tensor<T>,                              \
                                  std::initializer_list<const Tensor<T>*>,             \
                                  std::function<void(std::span<const T>)>);

PS2_INSTANTIATE(float)
PS2_INSTANTIATE(double)
#undef PS2_INSTANTIATE

}  // namespace ps2
