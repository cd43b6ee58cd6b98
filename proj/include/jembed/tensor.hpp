#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  bool is_leaf = true;
};

}  // namespace detail

/// Dense row-major float64 array with an optional gradient.
///
/// Tensor is a handle: copies share storage, like a reference-counted
/// buffer. Use clone() for a deep copy and detach() for a deep copy that is
/// cut from the differentiation graph.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double operator[](std::size_t flat) const { return data()[flat]; }
  double item() const;

  bool requires_grad() const;
  /// Marks a leaf as a differentiation target. Returns *this for chaining.
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  Tensor clone() const;
  Tensor detach() const;

  /// Identity of the underlying storage.
  const void* id() const noexcept { return node_.get(); }

  // Used by op implementations.
  static Tensor from_node(std::shared_ptr<detail::TensorNode> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of differentiable operations executed while the tape is
/// active on the current thread. Nodes are appended in execution order, so
/// the record is topologically sorted by construction.
class Tape {
 public:
  struct Node {
    std::string op;
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::shared_ptr<detail::TensorNode> output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Node node);
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }

  /// Reverse-mode pass from a scalar loss. Every requires_grad tensor
  /// reached accumulates d(loss)/d(tensor) into its grad.
  /// Throws if the loss is not a scalar, was not produced on this tape, the
  /// tape is empty, or backward already ran since the last reset().
  void backward(const Tensor& loss);
  bool consumed() const noexcept { return consumed_; }
  void reset();

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Activates a tape for the current thread for the guard's lifetime.
/// Guards nest; the innermost one wins.
class TapeGuard {
 public:
  explicit TapeGuard(Tape& tape);
  ~TapeGuard();
  TapeGuard(const TapeGuard&) = delete;
  TapeGuard& operator=(const TapeGuard&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording for the current thread (evaluation paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape() noexcept;

namespace detail {

/// Grad buffer of a node, zero-initialized on first access.
std::span<double> grad_buffer(TensorNode& node);

/// Builds an output tensor; when any input requires grad and a tape is
/// active, the output requires grad and `backward` is recorded.
/// `backward` is called with the output node after its grad is populated.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs,
                   std::function<void(TensorNode& out)> backward);
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs,
                   std::function<void(TensorNode& out)> backward);

}  // namespace detail

}  // namespace mg
