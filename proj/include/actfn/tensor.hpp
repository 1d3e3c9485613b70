#pragma once

#include <Eigen/Dense>

#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace actfn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

namespace detail {

template <typename Scalar>
struct Node {
  Shape shape;
  ArrayX<Scalar> value;
  ArrayX<Scalar> grad;  // zero-length until backward first touches this node
  bool requires_grad = false;
};

template <typename Scalar>
using NodePtr = std::shared_ptr<Node<Scalar>>;

template <typename Scalar>
inline void accumulate(const NodePtr<Scalar>& node, const ArrayX<Scalar>& g) {
  if (node->grad.size() == 0) {
    node->grad = g;
  } else {
    node->grad += g;
  }
}

}  // namespace detail

template <typename Scalar>
class Tape;

/// Dense row-major tensor. Copies share the underlying buffer; values are
/// immutable after creation except for leaf parameters updated through
/// raw_value() and gradients written by the tape's backward pass.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, ArrayX<Scalar> values, bool requires_grad = false) {
    check(!shape.empty(), "Tensor: shape must have at least one extent (scalars use shape (1))");
    for (Index d : shape) check(d > 0, "Tensor: all extents must be positive, got " + shape_string(shape));
    check(numel(shape) == values.size(),
          "Tensor: shape " + shape_string(shape) + " does not match data length " + std::to_string(values.size()));
    if (!values.allFinite()) throw std::runtime_error("Tensor: non-finite values in input data");
    auto node = std::make_shared<detail::Node<Scalar>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, const std::vector<Scalar>& values, bool requires_grad = false) {
    ArrayX<Scalar> a(static_cast<Index>(values.size()));
    for (Index i = 0; i < a.size(); ++i) a[i] = values[static_cast<std::size_t>(i)];
    return from(std::move(shape), std::move(a), requires_grad);
  }

  // keeps short braced lists away from Eigen's (rows, cols) sizing constructor
  static Tensor from(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false) {
    return from(std::move(shape), std::vector<Scalar>(values), requires_grad);
  }

  static Tensor scalar(Scalar v) { return from(Shape{1}, ArrayX<Scalar>::Constant(1, v)); }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = numel(shape);
    return from(std::move(shape), ArrayX<Scalar>::Zero(n), requires_grad);
  }

  static Tensor ones(Shape shape, bool requires_grad = false) {
    const Index n = numel(shape);
    return from(std::move(shape), ArrayX<Scalar>::Ones(n), requires_grad);
  }

  static Tensor full(Shape shape, Scalar v) {
    const Index n = numel(shape);
    return from(std::move(shape), ArrayX<Scalar>::Constant(n, v));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index size() const { return node_->value.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  Index dim(std::size_t i) const {
    check(i < node_->shape.size(), "Tensor::dim: axis out of range");
    return node_->shape[i];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }

  const ArrayX<Scalar>& value() const { return node_->value; }

  /// Mutable access to the buffer of a leaf parameter (optimizer updates,
  /// snapshot restore). Not for tensors produced by ops.
  ArrayX<Scalar>& raw_value() { return node_->value; }

  bool has_grad() const { return node_ && node_->grad.size() > 0; }

  const ArrayX<Scalar>& grad() const {
    if (!has_grad()) throw std::runtime_error("Tensor::grad: no gradient accumulated");
    return node_->grad;
  }

  void zero_grad() {
    if (node_) node_->grad.resize(0);
  }

  Scalar item() const {
    check(size() == 1, "Tensor::item: tensor is not scalar, shape " + shape_string(shape()));
    return node_->value[0];
  }

  Scalar at(std::initializer_list<Index> idx) const {
    check(idx.size() == rank(), "Tensor::at: index rank mismatch");
    Index off = 0;
    std::size_t k = 0;
    for (Index i : idx) {
      if (i < 0 || i >= node_->shape[k]) throw std::out_of_range("Tensor::at: index out of bounds");
      off = off * node_->shape[k] + i;
      ++k;
    }
    return node_->value[off];
  }

  detail::NodePtr<Scalar>& node() { return node_; }
  const detail::NodePtr<Scalar>& node() const { return node_; }

 private:
  explicit Tensor(detail::NodePtr<Scalar> node) : node_(std::move(node)) {}

  detail::NodePtr<Scalar> node_;

  friend class Tape<Scalar>;
};

/// Wengert-list tape. Constructing a Tape makes it the active recorder for
/// the current thread (restoring the previous one on destruction); ops record
/// their backward rules onto the active tape whenever an input is tracked.
/// One backward pass per recording; reuse without reset() is an error.
template <typename Scalar>
class Tape {
 public:
  Tape() : prev_(active_) { active_ = this; }

  ~Tape() { active_ = prev_; }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::function<void()> step) {
    if (consumed_) throw std::runtime_error("Tape: recording onto a consumed tape; call reset() first");
    steps_.push_back(std::move(step));
  }

  std::size_t size() const { return steps_.size(); }
  bool consumed() const { return consumed_; }

  /// Reverse accumulation from a scalar root. Ops were appended in execution
  /// order, so the reverse walk visits every node after all of its uses.
  void backward(const Tensor<Scalar>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw std::invalid_argument("Tape::backward: root must be a defined scalar tensor");
    }
    if (consumed_) throw std::runtime_error("Tape::backward: tape already consumed; call reset() first");
    if (!loss.requires_grad()) {
      throw std::runtime_error("Tape::backward: root does not depend on any tracked tensor");
    }
    loss.node()->grad = ArrayX<Scalar>::Ones(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    consumed_ = true;
    steps_.clear();
    steps_.shrink_to_fit();
  }

  void reset() {
    steps_.clear();
    consumed_ = false;
  }

 private:
  inline static thread_local Tape* active_ = nullptr;
  Tape* prev_ = nullptr;
  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
};

namespace detail {

/// True when the op must be recorded: a tape is live and some input is tracked.
template <typename Scalar>
inline bool tracking(std::initializer_list<const Tensor<Scalar>*> inputs) {
  if (Tape<Scalar>::active() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace detail

}  // namespace actfn
