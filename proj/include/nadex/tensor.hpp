#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nadex {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// Storage node shared by Tensor handles. `backward_fn` reads this node's grad
// and accumulates into its parents; it is dropped when the tape is cleared.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string name;
  std::function<void()> backward_fn;

  void ensure_grad();
};

// Handle with shared ownership. Copying a Tensor aliases the same storage;
// use clone() for an independent copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(TensorImplPtr impl);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }
  // Product of all extents except the last.
  std::size_t outer() const;
  // Extent of the trailing axis.
  std::size_t inner() const;

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();

  const std::string& name() const { return impl_->name; }
  Tensor& set_name(std::string name);

  Tensor clone() const;
  // Same values, no gradient history.
  Tensor detach() const;

  const TensorImplPtr& impl() const { return impl_; }

 private:
  TensorImplPtr impl_;
};

// Ordered record of differentiable operations executed on this thread while
// gradients are enabled. Recording order is a topological order.
class Tape {
 public:
  static Tape& current();

  void record(TensorImplPtr node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  void clear();

  // Runs the chain rule from the back of the tape; each node is visited once.
  void run_backward();

 private:
  std::vector<TensorImplPtr> nodes_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Seeds d(loss)/d(loss) = 1, propagates through the tape and clears it.
void backward(const Tensor& loss);

namespace autograd {

// Builds the result of a differentiable op. When gradients are enabled and
// any parent requires them, the result is recorded on the tape and
// `make_backward` is invoked with the result node to produce its closure.
// The closure must only capture the parents and a raw pointer to the result.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> parents,
                   const std::function<std::function<void()>(TensorImpl*)>&
                       make_backward);

Tensor make_result(Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& parents,
                   const std::function<std::function<void()>(TensorImpl*)>&
                       make_backward);

// Adds `delta` into the gradient of `target` when it requires grad.
void accumulate(const TensorImplPtr& target, std::span<const double> delta);

}  // namespace autograd

}  // namespace nadex
