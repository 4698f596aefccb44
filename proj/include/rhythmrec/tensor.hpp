#pragma once

// Dense row-major float64 tensors with tape-based reverse-mode
// differentiation. Ops live in ops.hpp; this header is the value type,
// the tape, and backward().

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rhythmrec {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::function<void()> backprop;  // pulls this->grad into parents

  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return Tensor(std::move(shape), false);
  }

  static Tensor full(Shape shape, double value) {
    Tensor t(std::move(shape), false);
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> vals) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->shape = std::move(shape);
    if (shape_numel(t.node_->shape) != vals.size())
      throw Error("tensor data size " + std::to_string(vals.size()) +
                  " does not match shape " + shape_str(t.node_->shape));
    t.node_->values = std::move(vals);
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  // Learnable leaf: participates in backward().
  static Tensor param(Shape shape) {
    Tensor t(std::move(shape), true);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->values.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.size() > 1 ? node_->shape[1] : 1; }

  std::vector<double>& values() & { return node_->values; }
  const std::vector<double>& values() const& { return node_->values; }
  std::vector<double> values() && { return node_->values; }  // rvalue: copy, no dangling
  double* data() { return node_->values.data(); }
  const double* data() const { return node_->values.data(); }

  double item() const {
    if (size() != 1) throw Error("item() on non-scalar tensor " + shape_str(shape()));
    return node_->values[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<double>& grad_ref() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  std::shared_ptr<TensorNode> node() const { return node_; }

  // Used by ops.hpp when constructing results.
  static Tensor wrap(std::shared_ptr<TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  Tensor(Shape shape, bool requires_grad) {
    node_ = std::make_shared<TensorNode>();
    node_->values.assign(shape_numel(shape), 0.0);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  std::shared_ptr<TensorNode> node_;
};

// Ordered record of op results. Creation order is a topological order, so
// replaying backprop closures back-to-front visits each node's adjoint
// exactly once after all of its consumers.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

  void record(std::shared_ptr<TensorNode> n) { nodes_.push_back(std::move(n)); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and accumulates adjoints into every
  // requires_grad tensor reachable backward from `loss`. Intermediate
  // (tape-recorded) adjoints are recomputed from scratch on each call, so
  // leaf gradients add up across calls; zero leaves explicitly between
  // optimizer steps.
  void backward(const Tensor& loss) {
    if (loss.size() != 1)
      throw Error("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    for (auto& n : nodes_)
      if (!n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
    loss.node()->ensure_grad();
    loss.node()->grad[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      TensorNode& n = *nodes_[i];
      if (n.backprop && !n.grad.empty()) n.backprop();
    }
  }

  // RAII activation for one forward/backward pass.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active()) { active() = &t; }
    ~Scope() { active() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

 private:
  std::vector<std::shared_ptr<TensorNode>> nodes_;
};

}  // namespace rhythmrec
