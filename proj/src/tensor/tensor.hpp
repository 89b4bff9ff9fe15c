#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "common/error.hpp"

namespace ufo {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
// Throws ShapeError unless rank is 1..4 and every dim is positive.
void validate_shape(const Shape& shape);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is first written
  bool requires_grad = false;
};

// Reference-counted handle onto a dense row-major array. Copies of a Tensor
// alias the same storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    validate_shape(shape);
    node_->data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    validate_shape(shape);
    if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
      throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, value, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int axis) const {
    if (axis < 0) axis += rank();
    return node_->shape.at(static_cast<std::size_t>(axis));
  }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T* ptr() { return node_->data.data(); }
  const T* ptr() const { return node_->data.data(); }
  T item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Allocates a zero gradient on first use. The gradient belongs to the shared
  // node, so it is writable through any handle.
  std::span<T> grad() const {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
    return node_->grad;
  }
  void zero_grad() const { node_->grad.clear(); }

  Tensor clone() const {
    Tensor out;
    out.node_ = std::make_shared<TensorNode<T>>();
    out.node_->shape = node_->shape;
    out.node_->data = node_->data;
    return out;
  }

  TensorNode<T>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Non-differentiable integer tensor (top-K neighbor indices, labels).
struct IndexTensor {
  Shape shape;
  std::vector<int64_t> data;

  IndexTensor() = default;
  IndexTensor(Shape s, std::vector<int64_t> values);
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

// Ordered record of executed ops. backward() replays the recorded closures in
// reverse order exactly once; the tape is spent afterwards.
template <typename T>
class Tape {
 public:
  explicit Tape(bool enabled = true) : enabled_(enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool enabled() const { return enabled_; }

  bool needs_grad(std::initializer_list<const Tensor<T>*> inputs) const {
    if (!enabled_) return false;
    for (const auto* t : inputs) {
      if (t != nullptr && t->defined() && t->requires_grad()) return true;
    }
    return false;
  }

  void record(std::string_view op, const Tensor<T>& output, std::function<void()> backward) {
    if (spent_) throw UsageError("tape already consumed by backward()");
    entries_.push_back({std::string(op), output.shared(), std::move(backward)});
    outputs_.insert(output.node());
  }

  void backward(Tensor<T>& loss) {
    if (spent_) throw UsageError("tape already consumed by backward()");
    if (loss.numel() != 1) {
      throw UsageError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
      spent_ = true;
      return;
    }
    if (!outputs_.contains(loss.node()) && !entries_.empty()) {
      throw UsageError("loss was not produced under this tape");
    }
    loss.grad()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output->grad.empty()) it->backward();
    }
    spent_ = true;
    entries_.clear();
    outputs_.clear();
  }

  std::size_t size() const { return entries_.size(); }
  std::vector<std::string> op_names() const {
    std::vector<std::string> names;
    names.reserve(entries_.size());
    for (const auto& e : entries_) names.push_back(e.op);
    return names;
  }

 private:
  struct Entry {
    std::string op;
    std::shared_ptr<TensorNode<T>> output;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
  std::unordered_set<const TensorNode<T>*> outputs_;
  bool enabled_;
  bool spent_ = false;
};

}  // namespace ufo
