#include "jembed/tensor.hpp"

#include <cmath>
#include <sstream>

#include "jembed/error.hpp"

namespace mg {

namespace {
thread_local Tape* g_active_tape = nullptr;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

static void check_shape(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
  }
}

Tensor::Tensor(Shape shape, double fill) {
  check_shape(shape);
  node_ = std::make_shared<detail::TensorNode>();
  const std::size_t n = shape_numel(shape);
  node_->shape = std::move(shape);
  node_->data.assign(n, fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

static const detail::TensorNode& deref(const std::shared_ptr<detail::TensorNode>& n) {
  if (!n) throw PreconditionError("tensor: use of an undefined tensor");
  return *n;
}

const Shape& Tensor::shape() const { return deref(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return deref(node_).data.size(); }

std::span<const double> Tensor::data() const { return deref(node_).data; }

std::span<double> Tensor::mutable_data() {
  deref(node_);
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("tensor: item() on shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return deref(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  deref(node_);
  if (!node_->is_leaf) throw PreconditionError("tensor: requires_grad can only be set on leaves");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return deref(node_).is_leaf; }

bool Tensor::has_grad() const { return !deref(node_).grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw PreconditionError("tensor: no gradient recorded");
  return node_->grad;
}

void Tensor::zero_grad() {
  deref(node_);
  node_->grad.clear();
}

Tensor Tensor::clone() const {
  Tensor t(shape(), std::vector<double>(data().begin(), data().end()));
  t.node_->requires_grad = node_->requires_grad && node_->is_leaf;
  return t;
}

Tensor Tensor::detach() const {
  return Tensor(shape(), std::vector<double>(data().begin(), data().end()));
}

void Tape::record(Node node) {
  if (consumed_) throw PreconditionError("tape: recording after backward; call reset() first");
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  if (nodes_.empty()) throw PreconditionError("backward: the tape is empty");
  if (consumed_) throw PreconditionError("backward: already called on this tape without reset()");
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  const auto& out = loss.node();
  std::size_t last = nodes_.size();
  while (last > 0 && nodes_[last - 1].output != out) --last;
  if (last == 0) throw PreconditionError("backward: loss was not produced on this tape");

  consumed_ = true;
  detail::grad_buffer(*out)[0] += 1.0;
  for (std::size_t k = last; k-- > 0;) {
    Node& n = nodes_[k];
    if (n.output->grad.empty()) continue;  // not on a path to the loss
    n.backward();
  }
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

TapeGuard::TapeGuard(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeGuard::~TapeGuard() { g_active_tape = previous_; }

NoGradGuard::NoGradGuard() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = previous_; }

Tape* active_tape() noexcept { return g_active_tape; }

namespace detail {

std::span<double> grad_buffer(TensorNode& node) {
  if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
  return node.grad;
}

template <typename Range>
static Tensor make_result_impl(const char* op, Shape shape, std::vector<double> data,
                               const Range& inputs,
                               std::function<void(TensorNode& out)> backward) {
  Tensor out(std::move(shape), std::move(data));
  Tape* tape = g_active_tape;
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  if (!tape || !needs) return out;

  auto node = out.node();
  node->requires_grad = true;
  node->is_leaf = false;
  Tape::Node rec;
  rec.op = op;
  for (const Tensor& t : inputs) rec.inputs.push_back(t.node());
  rec.output = node;
  // The closure holds a weak reference to avoid a cycle through the tape.
  std::weak_ptr<TensorNode> weak = node;
  rec.backward = [weak, fn = std::move(backward)]() {
    if (auto n = weak.lock()) fn(*n);
  };
  tape->record(std::move(rec));
  return out;
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs,
                   std::function<void(TensorNode& out)> backward) {
  return make_result_impl(op, std::move(shape), std::move(data), inputs, std::move(backward));
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs,
                   std::function<void(TensorNode& out)> backward) {
  return make_result_impl(op, std::move(shape), std::move(data), inputs, std::move(backward));
}

}  // namespace detail

}  // namespace mg
