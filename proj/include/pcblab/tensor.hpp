#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace pcblab {

inline int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor shape dims must be positive");
    n *= d;
  }
  return n;
}

template <typename T>
struct TensorStorage {
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  int64_t id = -1;
};

// Value-semantics handle over shared storage. Copies alias the same buffer;
// tensors are treated as immutable once produced by an op, except for grad
// accumulation.
template <typename T>
class Tensor {
 public:
  using scalar_type = T;

  Tensor() : s_(nullptr) {}

  explicit Tensor(std::vector<int> shape, bool requires_grad = false)
      : s_(std::make_shared<TensorStorage<T>>()) {
    s_->shape = std::move(shape);
    s_->value.assign(static_cast<size_t>(shape_numel(s_->shape)), T(0));
    s_->requires_grad = requires_grad;
    s_->id = next_id();
  }

  static Tensor from(std::vector<int> shape, std::vector<T> values,
                     bool requires_grad = false) {
    Tensor t;
    t.s_ = std::make_shared<TensorStorage<T>>();
    if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
      throw std::invalid_argument("tensor: value count does not match shape");
    }
    t.s_->shape = std::move(shape);
    t.s_->value = std::move(values);
    t.s_->requires_grad = requires_grad;
    t.s_->id = next_id();
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return s_ != nullptr; }
  const std::vector<int>& shape() const { return s_->shape; }
  int dim(int i) const { return s_->shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(s_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(s_->value.size()); }
  int64_t id() const { return s_->id; }

  T* data() { return s_->value.data(); }
  const T* data() const { return s_->value.data(); }
  std::vector<T>& values() { return s_->value; }
  const std::vector<T>& values() const { return s_->value; }

  T item() const {
    if (numel() != 1) throw std::invalid_argument("item(): tensor is not scalar");
    return s_->value[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool b) { s_->requires_grad = b; }

  bool has_grad() const { return !s_->grad.empty(); }
  // Grad buffer, allocated (zeroed) on first use; same shape as the value.
  T* grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->value.size(), T(0));
    return s_->grad.data();
  }
  const std::vector<T>& grad_values() const {
    static const std::vector<T> kEmpty;
    return s_->grad.empty() ? kEmpty : s_->grad;
  }
  void zero_grad() {
    if (!s_->grad.empty()) s_->grad.assign(s_->value.size(), T(0));
  }
  void drop_grad() { s_->grad.clear(); }

  bool all_finite() const {
    for (const T& v : s_->value) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  static int64_t next_id() {
    static std::atomic<int64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }

  std::shared_ptr<TensorStorage<T>> s_;
};

// Records the operations of one forward computation in topological order.
// backward() replays them once each, in reverse. A tape is confined to a
// single thread; parallelism lives inside individual kernels.
template <typename T>
class Tape {
 public:
  void record(const Tensor<T>& out, std::function<void()> pull) {
    nodes_.push_back(Node{out, std::move(pull)});
  }

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Accumulates d(loss)/d(t) into t.grad() for every reachable tensor.
  // Gradients of tensors produced on this tape are reset first, so repeated
  // calls accumulate additively into leaf (parameter/input) gradients only.
  void backward(Tensor<T> loss) {
    if (loss.numel() != 1) {
      throw std::invalid_argument("backward: loss must be scalar");
    }
    bool reachable = false;
    for (const Node& n : nodes_) {
      if (n.out.id() == loss.id()) reachable = true;
    }
    if (!reachable) {
      throw std::invalid_argument(
          "backward: loss was not produced on this tape (detached graph)");
    }
    for (Node& n : nodes_) n.out.zero_grad();
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->out.has_grad()) it->pull();
    }
  }

 private:
  struct Node {
    Tensor<T> out;
    std::function<void()> pull;
  };
  std::vector<Node> nodes_;
};

}  // namespace pcblab
